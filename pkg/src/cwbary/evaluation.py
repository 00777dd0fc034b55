"""Metrics comparing recovered barycenters against oracle answers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .baselines import GaussianParams, empirical_w2

ASSIGNMENT_SIZE_CAP = 2000


def gaussian_mle_fit(samples) -> GaussianParams:
    """Sample mean and 1/m-normalized covariance.

    The 1/m convention (not 1/(m-1)) matters at report scale; both sides
    of every comparison use it.
    """
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    if X.shape[0] < 2:
        raise ValueError("need at least 2 samples for an MLE fit")
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / X.shape[0]
    return GaussianParams(mean, 0.5 * (cov + cov.T))


def covariance_error(sigma, sigma_star) -> float:
    """Frobenius distance between covariance matrices."""
    A = np.atleast_2d(np.asarray(sigma, dtype=float))
    B = np.atleast_2d(np.asarray(sigma_star, dtype=float))
    if A.shape != B.shape:
        raise ValueError("covariance shapes differ")
    return float(np.linalg.norm(A - B))


def mean_error(mu, mu_star) -> float:
    """Euclidean distance between mean vectors."""
    a = np.atleast_1d(np.asarray(mu, dtype=float))
    b = np.atleast_1d(np.asarray(mu_star, dtype=float))
    if a.shape != b.shape:
        raise ValueError("mean shapes differ")
    return float(np.linalg.norm(a - b))


@dataclass(frozen=True)
class EvalRecord:
    seed: int
    method: str
    cov_error: float
    mean_error: float
    w2: Optional[float] = None
    wall_s: float = 0.0


@dataclass
class EvalReport:
    """Per-trial records; aggregates always recompute from them."""

    records: list = field(default_factory=list)

    def add(self, record: EvalRecord) -> None:
        self.records.append(record)

    def _values(self, metric: str):
        vals = [getattr(r, metric) for r in self.records]
        return np.asarray([v for v in vals if v is not None], dtype=float)

    def aggregate(self, metric: str):
        """(mean, std) over records carrying the metric; std has ddof=1."""
        vals = self._values(metric)
        if vals.size == 0:
            return float("nan"), float("nan")
        std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        return float(vals.mean()), std

    def to_csv(self, fh, comment: Optional[str] = None) -> None:
        if comment:
            fh.write(f"# {comment}\n")
        fh.write("seed,method,cov_error,mean_error,w2,wall_s\n")
        for r in self.records:
            w2 = "" if r.w2 is None else repr(float(r.w2))
            fh.write(
                f"{r.seed},{r.method},{repr(float(r.cov_error))},"
                f"{repr(float(r.mean_error))},{w2},{repr(float(r.wall_s))}\n"
            )

    def summary(self) -> str:
        lines = [f"trials: {len(self.records)}"]
        for metric in ("cov_error", "mean_error", "w2"):
            vals = self._values(metric)
            if vals.size == 0:
                continue
            mean, std = self.aggregate(metric)
            lines.append(f"{metric}: mean {mean:.6g} std {std:.6g}")
        total = self._values("wall_s").sum()
        lines.append(f"total wall time: {total:.1f}s")
        return "\n".join(lines)


def w2_curve(
    barycenter_samples,
    reference_samples,
    sizes,
    trials: int = 5,
    rng=None,
    cap: int = ASSIGNMENT_SIZE_CAP,
):
    """Empirical W2 at increasing subsample sizes, averaged over trials.

    Returns a list of (m, mean_w2, std_w2).  Both sample sets are
    subsampled without replacement, so they must hold at least max(sizes)
    points; sizes must be nondecreasing and at most the assignment cap.
    """
    A = np.atleast_2d(np.asarray(barycenter_samples, dtype=float))
    B = np.atleast_2d(np.asarray(reference_samples, dtype=float))
    sizes = [int(m) for m in sizes]
    if any(b > a for a, b in zip(sizes[1:], sizes)):
        raise ValueError("sizes must be nondecreasing")
    if sizes and sizes[-1] > cap:
        raise ValueError(f"size {sizes[-1]} exceeds the assignment cap {cap}")
    if sizes and (A.shape[0] < sizes[-1] or B.shape[0] < sizes[-1]):
        raise ValueError("not enough samples for the largest size")
    if rng is None:
        rng = np.random.default_rng(0)
    out = []
    for m in sizes:
        vals = []
        for _ in range(trials):
            ia = rng.choice(A.shape[0], size=m, replace=False)
            ib = rng.choice(B.shape[0], size=m, replace=False)
            vals.append(empirical_w2(A[ia], B[ib]))
        vals = np.asarray(vals)
        std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        out.append((m, float(vals.mean()), std))
    return out
