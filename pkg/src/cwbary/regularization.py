"""Convex regularizers for relaxed transport problems.

Two families are supported.  Writing ``eps`` for the strength, the primal
penalty applied to the plan density ``t >= 0`` is

    entropic:   eps * (t*log(t) - t)
    quadratic:  eps/2 * t**2

and the corresponding conjugate penalty on the dual side is

    entropic:   eps * exp(t / eps)
    quadratic:  max(t, 0)**2 / (2*eps)

The conjugate derivative doubles as the transport-plan density: a dual
potential pair (f, g) induces the plan density
``H(x, y) = conjugate'(f(x) + g(y) - c(x, y))`` relative to the reference
product measure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ENTROPIC = "entropic"
QUADRATIC = "quadratic"

# exp() overflows double precision just above exp(709).
_EXP_ARG_MAX = 700.0


class EntropicOverflowError(FloatingPointError):
    """Dual argument too large for the entropic conjugate in float64.

    Raised instead of silently clamping: a clamped exponential biases
    gradients invisibly, so divergence is treated as fatal.
    """

    def __init__(self, t_max: float, epsilon: float):
        self.t_max = float(t_max)
        self.epsilon = float(epsilon)
        super().__init__(
            f"entropic conjugate overflow: max argument {t_max:.6g} with "
            f"epsilon {epsilon:.6g} (t/eps > {_EXP_ARG_MAX:.0f})"
        )


@dataclass(frozen=True)
class RegularizerSpec:
    """Regularizer family plus strength.

    When ``scale_by_diagonal`` is set, the effective strength used in a
    solve is ``epsilon`` multiplied by the squared diagonal length of the
    support box; call :meth:`scaled_to` once per solve to resolve it.
    """

    family: str
    epsilon: float
    scale_by_diagonal: bool = False

    def __post_init__(self):
        if self.family not in (ENTROPIC, QUADRATIC):
            raise ValueError(f"unknown regularizer family {self.family!r}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    def scaled_to(self, box) -> "RegularizerSpec":
        """Resolve the effective epsilon against a support box.

        Returns a spec with ``scale_by_diagonal`` cleared so the scaling
        cannot be applied twice.
        """
        if not self.scale_by_diagonal:
            return self
        diag_sq = float(np.sum((box.hi - box.lo) ** 2))
        return RegularizerSpec(self.family, self.epsilon * diag_sq, False)


def r_star(spec: RegularizerSpec, t):
    """Conjugate penalty, elementwise over ``t``."""
    t = np.asarray(t, dtype=float)
    eps = spec.epsilon
    if spec.family == ENTROPIC:
        arg = t / eps
        _check_overflow(arg, spec)
        return eps * np.exp(arg)
    return np.square(np.maximum(t, 0.0)) / (2.0 * eps)


def r_star_prime(spec: RegularizerSpec, t):
    """Derivative of the conjugate penalty, elementwise over ``t``."""
    t = np.asarray(t, dtype=float)
    eps = spec.epsilon
    if spec.family == ENTROPIC:
        arg = t / eps
        _check_overflow(arg, spec)
        return np.exp(arg)
    return np.maximum(t, 0.0) / eps


def plan_density(spec: RegularizerSpec, f_val, g_val, cost):
    """Transport-plan density H for potential values and cost.

    Equals ``r_star_prime(f + g - c)`` for both families; nonnegative.
    """
    return r_star_prime(spec, np.asarray(f_val) + np.asarray(g_val) - np.asarray(cost))


def _check_overflow(arg, spec: RegularizerSpec):
    t_max = np.max(arg) if np.size(arg) else 0.0
    if t_max > _EXP_ARG_MAX:
        raise EntropicOverflowError(t_max * spec.epsilon, spec.epsilon)


class SquaredEuclideanCost:
    """Ground cost c(x, y) = ||x - y||^2.

    Symmetric, nonnegative, zero on the diagonal.  The only cost shipped;
    kept as a class so other costs can be slotted in.
    """

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return float(np.sum((x - y) ** 2))

    def pairwise_rows(self, X, Y):
        """Row-wise cost between matched rows of (B, d) arrays."""
        diff = np.asarray(X, dtype=float) - np.asarray(Y, dtype=float)
        return np.einsum("ij,ij->i", diff, diff)

    def cross(self, X, Y):
        """Full (|X|, |Y|) cost matrix between two point sets."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        xx = np.sum(X * X, axis=1)[:, None]
        yy = np.sum(Y * Y, axis=1)[None, :]
        out = xx + yy - 2.0 * (X @ Y.T)
        np.maximum(out, 0.0, out=out)
        return out
