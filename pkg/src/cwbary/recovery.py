"""Barycenter extraction from trained potential pairs.

Five routes from the implicit plan density H(x, y) to points or a
density estimate:

* grid marginalization of the y-marginal (needs a grid, d small),
* Metropolis-Hastings sampling of the plan (needs the input density),
* barycentric projection, the conditional mean of y given x,
* the gradient map x - grad f(x) / 2,
* a network fitted to minimize the plan-weighted transport cost.

The last three yield maps; their pushforwards are mixed with weights
lam_i after a mean re-centering that pins the output mean to the
weighted combination of the input means.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .measures import Box, SupportMeasure
from .regularization import (
    ENTROPIC,
    RegularizerSpec,
    SquaredEuclideanCost,
    r_star_prime,
)

_cost = SquaredEuclideanCost()

MCMC_DEFAULT_BURN_IN = 10_000
MCMC_DEFAULT_THIN = 10
MCMC_PROPOSAL_FRACTION = 0.05
_MASS_FLOOR = 1e-300


class ConditionalMassVanishes(ValueError):
    """The plan puts no mass on any probed y for this x."""


@dataclass(frozen=True)
class TransportPlanHandle:
    """Implicit plan for input i: everything needed to evaluate H."""

    index: int
    f: object
    g: object                 # centered potential
    source: object            # mu_i
    support: SupportMeasure   # eta
    regularizer: RegularizerSpec
    cost: object = _cost      # pluggable; squared Euclidean by default

    def density_pairs(self, X, Y) -> np.ndarray:
        """H(x_s, y_s) for paired rows."""
        t = (
            self.f.value_batch(X)
            + self.g.value_batch(Y)
            - self.cost.pairwise_rows(X, Y)
        )
        return r_star_prime(self.regularizer, t)

    def density_cross(self, X, Y) -> np.ndarray:
        """H(x_a, y_b) for the full (len X, len Y) product."""
        t = (
            self.f.value_batch(X)[:, None]
            + self.g.value_batch(Y)[None, :]
            - self.cost.cross(X, Y)
        )
        return r_star_prime(self.regularizer, t)

    def log_density_pairs(self, X, Y) -> np.ndarray:
        """log H for paired rows, stable for MCMC (no overflow)."""
        t = (
            self.f.value_batch(X)
            + self.g.value_batch(Y)
            - self.cost.pairwise_rows(X, Y)
        )
        eps = self.regularizer.epsilon
        if self.regularizer.family == ENTROPIC:
            return t / eps
        with np.errstate(divide="ignore"):
            return np.log(np.maximum(t, 0.0) / eps)


def make_plans(f_potentials, g_centered, sources, support, regularizer):
    return [
        TransportPlanHandle(i, f, g, src, support, regularizer)
        for i, (f, g, src) in enumerate(zip(f_potentials, g_centered, sources))
    ]


@dataclass
class BarycenterSampleSet:
    """Point cloud with method tag and per-point input provenance."""

    points: np.ndarray
    method: str
    source_index: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.source_index = np.asarray(self.source_index, dtype=int)
        if self.source_index.shape != (self.points.shape[0],):
            raise ValueError("one source index per point required")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("sample points must be finite")

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def to_csv(self, fh, comment: Optional[str] = None) -> None:
        if comment:
            fh.write(f"# {comment}\n")
        cols = [f"x{k}" for k in range(self.d)] + ["method", "source_index"]
        fh.write(",".join(cols) + "\n")
        for p, s in zip(self.points, self.source_index):
            fields = [repr(float(v)) for v in p] + [self.method, str(int(s))]
            fh.write(",".join(fields) + "\n")


@dataclass
class DensityGrid:
    """Cell-centered values over a box; normalize to integrate to 1."""

    box: Box
    resolution: tuple
    values: np.ndarray
    normalized: bool = False
    degenerate: bool = False

    def __post_init__(self):
        self.resolution = tuple(int(r) for r in self.resolution)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.resolution:
            raise ValueError("values shape must equal the resolution")
        if np.any(self.values < 0):
            raise ValueError("grid values must be nonnegative")

    @property
    def cell_volume(self) -> float:
        return float(
            np.prod(self.box.widths / np.asarray(self.resolution, dtype=float))
        )

    def axis_nodes(self, k: int) -> np.ndarray:
        w = self.box.widths[k] / self.resolution[k]
        return self.box.lo[k] + (np.arange(self.resolution[k]) + 0.5) * w

    def nodes(self) -> np.ndarray:
        axes = [self.axis_nodes(k) for k in range(self.box.d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def normalize(self) -> "DensityGrid":
        total = self.values.sum() * self.cell_volume
        if total <= 0.0:
            return DensityGrid(
                self.box, self.resolution, self.values,
                normalized=False, degenerate=True,
            )
        return DensityGrid(
            self.box, self.resolution, self.values / total, normalized=True
        )

    def to_csv(self, fh, comment: Optional[str] = None) -> None:
        if comment:
            fh.write(f"# {comment}\n")
        fh.write("lo," + ",".join(repr(float(v)) for v in self.box.lo) + "\n")
        fh.write("hi," + ",".join(repr(float(v)) for v in self.box.hi) + "\n")
        fh.write("resolution," + ",".join(str(r) for r in self.resolution) + "\n")
        fh.write(f"normalized,{int(self.normalized)}\n")
        fh.write(f"degenerate,{int(self.degenerate)}\n")
        fh.write("values\n")
        flat = self.values.ravel()
        for start in range(0, flat.size, 8):
            fh.write(",".join(repr(float(v)) for v in flat[start:start + 8]) + "\n")


def marginal_grid(
    plan: TransportPlanHandle,
    n_x_samples: int,
    box: Box,
    resolution,
    rng,
    chunk: int = 512,
) -> DensityGrid:
    """Monte Carlo y-marginal of the plan on a cell-centered grid.

    For each node y the estimate is the average of H(x_s, y) over draws
    x_s from the input; the uniform reference density is a constant that
    normalization absorbs.  An all-zero result is returned unnormalized
    with the degenerate flag set.
    """
    if n_x_samples < 1:
        raise ValueError("n_x_samples must be >= 1")
    if np.any(box.lo < plan.support.box.lo) or np.any(box.hi > plan.support.box.hi):
        raise ValueError("grid box must lie inside the support box")
    resolution = tuple(int(r) for r in resolution)
    grid = DensityGrid(box, resolution, np.zeros(resolution))
    nodes = grid.nodes()
    acc = np.zeros(nodes.shape[0])
    done = 0
    while done < n_x_samples:
        take = min(chunk, n_x_samples - done)
        X = plan.source.sample(take, rng)
        acc += plan.density_cross(X, nodes).sum(axis=0)
        done += take
    values = (acc / n_x_samples).reshape(resolution)
    return DensityGrid(box, resolution, values).normalize()


def combine_grids(grids, weights) -> DensityGrid:
    """Weighted average of normalized grids over the same geometry."""
    base = grids[0]
    acc = np.zeros_like(base.values)
    for w, g in zip(weights, grids):
        same_box = np.array_equal(g.box.lo, base.box.lo) and np.array_equal(
            g.box.hi, base.box.hi
        )
        if g.resolution != base.resolution or not same_box:
            raise ValueError("grids must share box and resolution")
        if not g.normalized:
            g = g.normalize()
            if g.degenerate:
                raise ValueError("cannot combine a degenerate grid")
        acc += w * g.values
    return DensityGrid(base.box, base.resolution, acc).normalize()


def sample_from_grid(grid: DensityGrid, n: int, rng) -> np.ndarray:
    """Draw points from a grid density: pick a cell, jitter inside it."""
    g = grid if grid.normalized else grid.normalize()
    if g.degenerate:
        raise ValueError("cannot sample from a degenerate (all-zero) grid")
    probs = g.values.ravel()
    probs = probs / probs.sum()
    flat = rng.choice(probs.size, size=n, p=probs)
    idx = np.column_stack(np.unravel_index(flat, g.resolution)).astype(float)
    jitter = rng.uniform(0.0, 1.0, size=(n, g.box.d))
    cell = g.box.widths / np.asarray(g.resolution, dtype=float)
    return g.box.lo + (idx + jitter) * cell


def mcmc_sample(
    plan: TransportPlanHandle,
    n: int,
    proposal_sigma: Optional[float] = None,
    burn_in: int = MCMC_DEFAULT_BURN_IN,
    rng=None,
    thin: int = MCMC_DEFAULT_THIN,
    n_chains: int = 16,
) -> BarycenterSampleSet:
    """Metropolis-Hastings on (x, y) with a symmetric Gaussian proposal.

    The unnormalized log target is log H(x, y) + log mu_i(x) over the
    support box for y (minus infinity outside).  Chains run in lockstep
    as one vectorized walk; y-components are kept after burn-in at the
    thinning stride.  Requires a density-evaluable input.
    """
    if not plan.source.has_density:
        raise ValueError(
            "mcmc recovery needs the input density; empirical sources "
            "only support the map-based methods"
        )
    if rng is None:
        rng = np.random.default_rng(0)
    d = plan.support.d
    if proposal_sigma is None:
        proposal_sigma = MCMC_PROPOSAL_FRACTION * plan.support.box.diagonal

    def log_target(X, Y):
        lp = plan.log_density_pairs(X, Y) + plan.source.log_density_batch(X)
        inside = plan.support.box.contains(Y)
        return np.where(inside, lp, -np.inf)

    per_chain = -(-n // n_chains)  # ceil
    X = plan.source.sample(n_chains, rng)
    Y = plan.support.sample(n_chains, rng)
    lp = log_target(X, Y)
    # Restart any chain born in a zero-mass state.
    for _ in range(100):
        dead = ~np.isfinite(lp)
        if not np.any(dead):
            break
        X[dead] = plan.source.sample(int(dead.sum()), rng)
        Y[dead] = plan.support.sample(int(dead.sum()), rng)
        lp = log_target(X, Y)
    if not np.all(np.isfinite(lp)):
        raise ValueError(
            "mcmc found no starting point with positive plan density; "
            "the plan appears to carry no mass"
        )
    kept = []
    accepted = 0
    total_iters = burn_in + per_chain * thin
    for it in range(total_iters):
        Xp = X + proposal_sigma * rng.standard_normal((n_chains, d))
        Yp = Y + proposal_sigma * rng.standard_normal((n_chains, d))
        lpp = log_target(Xp, Yp)
        with np.errstate(invalid="ignore"):
            accept = np.log(rng.uniform(size=n_chains)) < lpp - lp
        accept &= np.isfinite(lpp)
        X[accept] = Xp[accept]
        Y[accept] = Yp[accept]
        lp[accept] = lpp[accept]
        accepted += int(accept.sum())
        if it >= burn_in and (it - burn_in) % thin == 0:
            kept.append(Y.copy())
    rate = accepted / (total_iters * n_chains)
    if not 0.05 <= rate <= 0.95:
        warnings.warn(
            f"acceptance rate {rate:.3f} outside [0.05, 0.95]; adjust "
            f"proposal_sigma (currently {proposal_sigma:g})",
            stacklevel=2,
        )
    pts = np.concatenate(kept, axis=0)[:n]
    out = BarycenterSampleSet(pts, "mcmc", np.full(len(pts), plan.index))
    out.acceptance_rate = rate
    return out


def barycentric_projection(
    plan: TransportPlanHandle, x, n_y_samples: int, rng
) -> np.ndarray:
    """Conditional mean of y given x under the plan.

    Self-normalized importance estimate over reference draws:
    T(x) = sum_s y_s H(x, y_s) / sum_s H(x, y_s).
    """
    if n_y_samples < 1:
        raise ValueError("n_y_samples must be >= 1")
    Y = plan.support.sample(n_y_samples, rng)
    h = plan.density_cross(np.asarray(x, dtype=float)[None, :], Y)[0]
    denom = h.sum()
    if denom < _MASS_FLOOR:
        raise ConditionalMassVanishes(f"conditional mass vanishes at x={x}")
    return (h @ Y) / denom


def barycentric_projection_batch(
    plan: TransportPlanHandle,
    X,
    n_y_samples: int,
    rng,
    chunk: int = 256,
):
    """Projection of many points; one reference draw shared per chunk.

    Returns (points, kept_mask): rows where the conditional mass
    vanished are dropped from ``points`` and recorded in the mask.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.empty_like(X)
    kept = np.ones(X.shape[0], dtype=bool)
    for start in range(0, X.shape[0], chunk):
        sl = slice(start, min(start + chunk, X.shape[0]))
        Y = plan.support.sample(n_y_samples, rng)
        H = plan.density_cross(X[sl], Y)
        denom = H.sum(axis=1)
        ok = denom >= _MASS_FLOOR
        kept[sl] = ok
        safe = np.where(ok, denom, 1.0)
        out[sl] = (H @ Y) / safe[:, None]
    return out[kept], kept


def gradient_map(plan: TransportPlanHandle, x) -> np.ndarray:
    """Map induced by the trained potential: x - grad f(x) / 2."""
    x = np.asarray(x, dtype=float)
    return x - 0.5 * plan.f.input_gradient(x)


def gradient_map_batch(plan: TransportPlanHandle, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return X - 0.5 * plan.f.input_gradient_batch(X)


@dataclass(frozen=True)
class MongeFitConfig:
    batch_size: int = 1024
    total_steps: int = 2000
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    seed: int = 0


def fit_monge_net(
    plan: TransportPlanHandle,
    net_spec,
    fit_config: MongeFitConfig,
    rng=None,
):
    """Fit a vector-valued network T minimizing E[c(T(X), Y) H(X, Y)].

    X comes from the input, Y from the reference; H weights each pair by
    the plan.  Zero steps returns the freshly initialized network.
    """
    seeds = np.random.SeedSequence(fit_config.seed).spawn(2)
    net = net_spec.build(plan.support.d, np.random.default_rng(seeds[0]), out=plan.support.d)
    if rng is None:
        rng = np.random.default_rng(seeds[1])
    moments = [(np.zeros_like(a), np.zeros_like(a)) for a in net.param_arrays()]
    B = fit_config.batch_size
    for t in range(1, fit_config.total_steps + 1):
        X = plan.source.sample(B, rng)
        Y = plan.support.sample(B, rng)
        h = plan.density_pairs(X, Y)
        TX = np.asarray(net.value_batch(X)).reshape(B, -1)
        loss = float(np.mean(np.sum((TX - Y) ** 2, axis=1) * h))
        if not np.isfinite(loss):
            raise RuntimeError(f"non-finite monge fit loss at step {t}")
        upstream = (2.0 / B) * (TX - Y) * h[:, None]
        grads = net.param_gradient_batch(upstream, X)
        bc1 = 1.0 - fit_config.beta1**t
        bc2 = 1.0 - fit_config.beta2**t
        for param, grad, (m, v) in zip(net.param_arrays(), grads, moments):
            m *= fit_config.beta1
            m += (1.0 - fit_config.beta1) * grad
            v *= fit_config.beta2
            v += (1.0 - fit_config.beta2) * grad * grad
            param -= fit_config.learning_rate * (m / bc1) / (
                np.sqrt(v / bc2) + fit_config.eps_adam
            )
    return net


def apportion_counts(weights, n_total: int) -> np.ndarray:
    """Integer counts proportional to weights, summing to n_total."""
    weights = np.asarray(weights, dtype=float)
    raw = weights * n_total
    counts = np.floor(raw).astype(int)
    short = n_total - counts.sum()
    if short > 0:
        order = np.argsort(-(raw - counts))
        counts[order[:short]] += 1
    return counts


def pushforward_barycenter(
    maps,
    sources,
    weights,
    centering,
    n_total: int,
    rng,
    method: str = "map",
    n_mean_est: int = 4096,
) -> BarycenterSampleSet:
    """Mix the re-centered pushforwards of all maps with weights lam.

    Each map is a callable giving same-length outputs for a batch of
    inputs (or (outputs, kept_mask) when points can drop out).  The
    pushforward mean, estimated on an independent batch, is subtracted
    per input and the stored barycenter mean added back, so the output
    mean matches the weighted combination of the original input means.
    """
    counts = apportion_counts(weights, n_total)
    chunks = []
    prov = []
    for i, (T, src, cnt) in enumerate(zip(maps, sources, counts)):
        if cnt == 0:
            continue
        mean_batch = _apply_map(T, src.sample(n_mean_est, rng))
        shift = mean_batch.mean(axis=0) - centering.barycenter_mean
        pushed = _apply_map(T, src.sample(cnt, rng))
        chunks.append(pushed - shift)
        prov.append(np.full(pushed.shape[0], i))
    points = np.concatenate(chunks, axis=0)
    return BarycenterSampleSet(points, method, np.concatenate(prov))


def _apply_map(T, X) -> np.ndarray:
    out = T(X)
    if isinstance(out, tuple):
        out = out[0]
    out = np.asarray(out, dtype=float)
    if out.ndim == 1:  # scalar-output map on a batch: one column
        out = out[:, None]
    return out
