"""Input distributions and the uniform support measure.

A measure source is sampleable and, except for empirical point clouds,
density-evaluable.  The support measure is uniform on a box estimated to
contain every input; it doubles as the reference factor in the product
measure that regularizes each transport problem.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

DEFAULT_MARGIN = 0.1
DEGENERATE_FLOOR_WIDTH = 1.0
DEFAULT_N_PROBE = 4096


class DensityUnavailable(Exception):
    """Raised when a source cannot evaluate its density (empirical data)."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with strictly positive extent on every axis."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if lo.ndim != 1 or lo.shape != hi.shape or lo.size < 1:
            raise ValueError("lo and hi must be 1-d vectors of equal length")
        if not np.all(lo < hi):
            raise ValueError("box must satisfy lo < hi on every axis")

    @property
    def d(self) -> int:
        return self.lo.size

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.widths))

    def contains(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.all((X >= self.lo) & (X <= self.hi), axis=1)

    def sample(self, n: int, rng) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(n, self.d))


class Gaussian:
    """Normal distribution with symmetric positive definite covariance."""

    kind = "gaussian"
    has_density = True

    def __init__(self, mean, cov):
        self.mean_vec = np.atleast_1d(np.asarray(mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(cov, dtype=float))
        self.d = self.mean_vec.size
        if self.cov.shape != (self.d, self.d):
            raise ValueError("covariance shape does not match mean dimension")
        if not np.allclose(self.cov, self.cov.T, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        try:
            self._chol = np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance must be positive definite") from exc
        self._log_norm = -0.5 * (
            self.d * np.log(2.0 * np.pi)
            + 2.0 * np.sum(np.log(np.diag(self._chol)))
        )

    def sample(self, n: int, rng) -> np.ndarray:
        z = rng.standard_normal((n, self.d))
        return z @ self._chol.T + self.mean_vec

    def log_density_batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        w = np.linalg.solve(self._chol, (X - self.mean_vec).T)
        return self._log_norm - 0.5 * np.sum(w * w, axis=0)

    def log_density(self, x) -> float:
        return float(self.log_density_batch(np.asarray(x, float)[None, :])[0])

    def mean(self) -> np.ndarray:
        return self.mean_vec.copy()


class GaussianMixture:
    """Finite mixture of gaussians with nonnegative weights summing to 1."""

    kind = "gaussian-mixture"
    has_density = True

    def __init__(self, components, weights):
        self.components = list(components)
        self.weights = np.asarray(weights, dtype=float)
        if len(self.components) != self.weights.size or not self.components:
            raise ValueError("one weight per component required")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        self.d = self.components[0].d
        if any(c.d != self.d for c in self.components):
            raise ValueError("all components must share one dimension")

    def sample(self, n: int, rng) -> np.ndarray:
        labels = rng.choice(len(self.components), size=n, p=self.weights)
        out = np.empty((n, self.d))
        for k, comp in enumerate(self.components):
            idx = np.flatnonzero(labels == k)
            if idx.size:
                out[idx] = comp.sample(idx.size, rng)
        return out

    def log_density_batch(self, X) -> np.ndarray:
        logs = np.stack([c.log_density_batch(X) for c in self.components])
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return logsumexp(logs + logw[:, None], axis=0)

    def log_density(self, x) -> float:
        return float(self.log_density_batch(np.asarray(x, float)[None, :])[0])

    def mean(self) -> np.ndarray:
        return sum(
            w * c.mean() for w, c in zip(self.weights, self.components)
        )


class UniformBox:
    """Uniform distribution on a box."""

    kind = "uniform-on-box"
    has_density = True

    def __init__(self, box: Box):
        self.box = box
        self.d = box.d
        self._log_dens = -np.log(box.volume)

    def sample(self, n: int, rng) -> np.ndarray:
        return self.box.sample(n, rng)

    def log_density_batch(self, X) -> np.ndarray:
        return np.where(self.box.contains(X), self._log_dens, -np.inf)

    def log_density(self, x) -> float:
        return float(self.log_density_batch(np.asarray(x, float)[None, :])[0])

    def mean(self) -> np.ndarray:
        return 0.5 * (self.box.lo + self.box.hi)


class Annulus:
    """Uniform distribution on a planar ring r_inner <= |x - c| <= r_outer."""

    kind = "uniform-on-shape"
    has_density = True

    def __init__(self, center, r_inner: float, r_outer: float):
        self.center = np.asarray(center, dtype=float)
        if self.center.size != 2:
            raise ValueError("annulus is two-dimensional")
        if not 0.0 <= r_inner < r_outer:
            raise ValueError("require 0 <= r_inner < r_outer")
        self.r_inner = float(r_inner)
        self.r_outer = float(r_outer)
        self.d = 2
        self._log_dens = -np.log(np.pi * (r_outer**2 - r_inner**2))

    def sample(self, n: int, rng) -> np.ndarray:
        # Radius from the CDF inverse so area, not radius, is uniform.
        u = rng.uniform(self.r_inner**2, self.r_outer**2, size=n)
        r = np.sqrt(u)
        ang = rng.uniform(0.0, 2.0 * np.pi, size=n)
        return self.center + np.column_stack((r * np.cos(ang), r * np.sin(ang)))

    def log_density_batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        r = np.linalg.norm(X - self.center, axis=1)
        inside = (r >= self.r_inner) & (r <= self.r_outer)
        return np.where(inside, self._log_dens, -np.inf)

    def log_density(self, x) -> float:
        return float(self.log_density_batch(np.asarray(x, float)[None, :])[0])

    def mean(self) -> np.ndarray:
        return self.center.copy()


class Ellipse:
    """Uniform distribution on a filled, possibly rotated planar ellipse."""

    kind = "uniform-on-shape"
    has_density = True

    def __init__(self, center, semi_axes, angle: float = 0.0):
        self.center = np.asarray(center, dtype=float)
        self.semi_axes = np.asarray(semi_axes, dtype=float)
        if self.center.size != 2 or self.semi_axes.size != 2:
            raise ValueError("ellipse is two-dimensional")
        if np.any(self.semi_axes <= 0):
            raise ValueError("semi-axes must be positive")
        self.angle = float(angle)
        c, s = np.cos(self.angle), np.sin(self.angle)
        self._rot = np.array([[c, -s], [s, c]])
        self.d = 2
        self._log_dens = -np.log(np.pi * self.semi_axes.prod())

    def sample(self, n: int, rng) -> np.ndarray:
        r = np.sqrt(rng.uniform(0.0, 1.0, size=n))
        ang = rng.uniform(0.0, 2.0 * np.pi, size=n)
        disk = np.column_stack((r * np.cos(ang), r * np.sin(ang)))
        return self.center + (disk * self.semi_axes) @ self._rot.T

    def log_density_batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        local = (X - self.center) @ self._rot / self.semi_axes
        inside = np.sum(local * local, axis=1) <= 1.0
        return np.where(inside, self._log_dens, -np.inf)

    def log_density(self, x) -> float:
        return float(self.log_density_batch(np.asarray(x, float)[None, :])[0])

    def mean(self) -> np.ndarray:
        return self.center.copy()


class RasterShape:
    """Distribution defined by nonnegative pixel intensities over a box.

    Intensities normalize to a discrete density over pixel centers; each
    draw picks a pixel and jitters uniformly inside it, so the continuous
    density is piecewise constant on the grid cells.  ``intensities`` is
    indexed [i, j] with i along the first coordinate axis and j along the
    second.
    """

    kind = "uniform-on-shape"
    has_density = True

    def __init__(self, intensities, box: Box):
        self.intensities = np.asarray(intensities, dtype=float)
        if self.intensities.ndim != 2 or box.d != 2:
            raise ValueError("raster shapes are two-dimensional")
        if np.any(self.intensities < 0) or self.intensities.sum() <= 0:
            raise ValueError("intensities must be nonnegative with positive sum")
        self.box = box
        self.d = 2
        self.probs = (self.intensities / self.intensities.sum()).ravel()
        self._shape = self.intensities.shape
        self._cell = box.widths / np.asarray(self._shape, dtype=float)
        self._cell_area = float(self._cell.prod())

    def sample(self, n: int, rng) -> np.ndarray:
        flat = rng.choice(self.probs.size, size=n, p=self.probs)
        ij = np.column_stack(np.unravel_index(flat, self._shape)).astype(float)
        jitter = rng.uniform(0.0, 1.0, size=(n, 2))
        return self.box.lo + (ij + jitter) * self._cell

    def log_density_batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        ij = np.floor((X - self.box.lo) / self._cell).astype(int)
        ok = self.box.contains(X)
        ij = np.clip(ij, 0, np.asarray(self._shape) - 1)
        p = self.probs.reshape(self._shape)[ij[:, 0], ij[:, 1]]
        with np.errstate(divide="ignore"):
            out = np.log(p / self._cell_area)
        return np.where(ok, out, -np.inf)

    def log_density(self, x) -> float:
        return float(self.log_density_batch(np.asarray(x, float)[None, :])[0])

    def mean(self) -> np.ndarray:
        idx = np.indices(self._shape).reshape(2, -1).T
        centers = self.box.lo + (idx + 0.5) * self._cell
        return self.probs @ centers


class Empirical:
    """Uniform atoms on a finite point set; density queries are refused."""

    kind = "empirical"
    has_density = False

    def __init__(self, points):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.points.shape[0] < 1:
            raise ValueError("empirical source needs at least one point")
        self.d = self.points.shape[1]

    def sample(self, n: int, rng) -> np.ndarray:
        return self.points[rng.integers(0, self.points.shape[0], size=n)]

    def log_density_batch(self, X):
        raise DensityUnavailable(
            "empirical sources have no density; use the sample-based "
            "recovery variants"
        )

    def log_density(self, x):
        raise DensityUnavailable(
            "empirical sources have no density; use the sample-based "
            "recovery variants"
        )

    def mean(self) -> np.ndarray:
        return self.points.mean(axis=0)


def load_csv(path) -> Empirical:
    """Read one sample per row of comma-separated decimal fields.

    A header row is skipped when its first token does not parse as a
    number.
    """
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            tokens = [t.strip() for t in line.split(",")]
            if not rows:
                try:
                    float(tokens[0])
                except ValueError:
                    continue
            rows.append([float(t) for t in tokens])
    if not rows:
        raise ValueError(f"no data rows in {path}")
    points = np.asarray(rows, dtype=float)
    if points.ndim != 2:
        raise ValueError("rows must all have the same number of fields")
    return Empirical(points)


@dataclass(frozen=True)
class SupportMeasure:
    """Uniform measure on a box covering every input's support."""

    box: Box

    @property
    def d(self) -> int:
        return self.box.d

    def sample(self, n: int, rng) -> np.ndarray:
        return self.box.sample(n, rng)

    def log_density_batch(self, X) -> np.ndarray:
        return np.where(self.box.contains(X), -np.log(self.box.volume), -np.inf)

    def log_density(self, x) -> float:
        return float(self.log_density_batch(np.asarray(x, float)[None, :])[0])


def estimate_bounding_box(
    sources,
    n_probe: int = DEFAULT_N_PROBE,
    margin: float = DEFAULT_MARGIN,
    rng=None,
) -> SupportMeasure:
    """Probe each source and wrap a margin-expanded box around the draws.

    Axes with zero observed extent get an absolute floor width so the box
    never degenerates.
    """
    if n_probe < 1:
        raise ValueError("n_probe must be >= 1")
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    if rng is None:
        rng = np.random.default_rng(0)
    lo = np.full(sources[0].d, np.inf)
    hi = np.full(sources[0].d, -np.inf)
    for src in sources:
        pts = src.sample(n_probe, rng)
        lo = np.minimum(lo, pts.min(axis=0))
        hi = np.maximum(hi, pts.max(axis=0))
    extent = hi - lo
    lo = lo - margin * extent
    hi = hi + margin * extent
    flat = hi - lo <= 0
    if np.any(flat):
        center = 0.5 * (lo + hi)
        lo = np.where(flat, center - 0.5 * DEGENERATE_FLOOR_WIDTH, lo)
        hi = np.where(flat, center + 0.5 * DEGENERATE_FLOOR_WIDTH, hi)
    return SupportMeasure(Box(lo, hi))


class CenteredSource:
    """View of a source translated so its mean sits at the origin."""

    has_density = True

    def __init__(self, base, shift):
        self.base = base
        self.shift = np.asarray(shift, dtype=float)
        self.d = base.d
        self.kind = base.kind
        self.has_density = base.has_density

    def sample(self, n: int, rng) -> np.ndarray:
        return self.base.sample(n, rng) - self.shift

    def log_density_batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.base.log_density_batch(X + self.shift)

    def log_density(self, x) -> float:
        return float(self.log_density_batch(np.asarray(x, float)[None, :])[0])

    def mean(self) -> np.ndarray:
        return self.base.mean() - self.shift


@dataclass(frozen=True)
class CenteringRecord:
    """Input means and their weighted combination, for final un-centering."""

    means: np.ndarray          # (n, d)
    weights: np.ndarray        # (n,)
    barycenter_mean: np.ndarray = field(init=False)

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "barycenter_mean", weights @ means)


def validate_weights(weights, n: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"expected {n} weights, got shape {w.shape}")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be nonnegative and sum to 1")
    return w


def center_inputs(sources, weights, n_mean_est: int = 0, rng=None):
    """Shift every source to zero mean; return shifted views and the record.

    Means come from each source's closed form (or exact atom average);
    ``n_mean_est`` draws are used only for sources without one.
    """
    weights = validate_weights(weights, len(sources))
    means = []
    for src in sources:
        try:
            means.append(np.asarray(src.mean(), dtype=float))
        except (AttributeError, NotImplementedError):
            if n_mean_est < 1:
                raise ValueError(
                    "source lacks a closed-form mean; n_mean_est must be >= 1"
                )
            gen = rng if rng is not None else np.random.default_rng(0)
            means.append(src.sample(n_mean_est, gen).mean(axis=0))
    means = np.vstack(means)
    centered = [CenteredSource(src, m) for src, m in zip(sources, means)]
    return centered, CenteringRecord(means, weights)
