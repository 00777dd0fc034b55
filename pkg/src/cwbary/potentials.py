"""Parameterized scalar and vector fields on R^d used as dual potentials.

Two families:

* ``rff`` — a linear model over random Fourier features.  Frequencies and
  phases are drawn once at init and stay fixed; only the coefficient
  vector trains, so objectives built on these potentials stay convex in
  the trainable parameters.
* ``mlp`` — a feed-forward network with two ReLU hidden layers of widths
  128 and 256 and a linear output.

Both expose values, gradients with respect to parameters (for the
optimizer) and with respect to the input (for transport-map recovery),
plus a plain-text checkpoint format whose round-trip is bitwise exact.
"""

from __future__ import annotations

import io

import numpy as np

MLP_HIDDEN = (128, 256)
CHECKPOINT_MAGIC = "cwbary-potential"
CHECKPOINT_VERSION = 1


def _as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng, None
    return np.random.default_rng(rng), int(rng)


class RandomFeaturePotential:
    """Linear model over K fixed random cosine features.

    value(x) = sum_k theta[k] * sqrt(2/K) * cos(omega_k . x + phase_k)

    ``theta`` has shape (K, out); for scalar potentials out == 1 and
    values are returned as scalars / (B,) arrays.
    """

    kind = "rff"

    def __init__(self, omega, phase, theta, freq_scale, seed=None):
        self.omega = np.ascontiguousarray(omega, dtype=float)   # (K, d)
        self.phase = np.ascontiguousarray(phase, dtype=float)   # (K,)
        self.theta = np.ascontiguousarray(theta, dtype=float)   # (K, out)
        self.freq_scale = float(freq_scale)
        self.seed = seed
        self.n_features, self.d = self.omega.shape
        self.out = self.theta.shape[1]
        self._scale = np.sqrt(2.0 / self.n_features)
        if self.phase.shape != (self.n_features,):
            raise ValueError("phase shape mismatch")
        if self.theta.shape[0] != self.n_features:
            raise ValueError("theta shape mismatch")

    @property
    def n_params(self) -> int:
        return self.theta.size

    def param_arrays(self):
        return [self.theta]

    def features(self, X):
        """Feature matrix (B, K) for a batch of points (B, d)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self._scale * np.cos(X @ self.omega.T + self.phase)

    def value_batch(self, X):
        v = self.features(X) @ self.theta
        return v[:, 0] if self.out == 1 else v

    def value(self, x):
        v = self.value_batch(np.asarray(x, dtype=float)[None, :])
        return float(v[0]) if self.out == 1 else v[0]

    def param_gradient_batch(self, upstream, X):
        """Gradient of sum_s upstream[s] . value(x_s) w.r.t. theta.

        Returns a list aligned with :meth:`param_arrays`.
        """
        U = np.asarray(upstream, dtype=float)
        if U.ndim == 1:
            U = U[:, None]
        return [self.features(X).T @ U]

    def param_gradient(self, upstream, x):
        """Flat gradient of upstream * value(x) for a single point."""
        up = np.atleast_1d(np.asarray(upstream, dtype=float))
        (g,) = self.param_gradient_batch(up[None, :], np.asarray(x, float)[None, :])
        return g.ravel()

    def input_gradient_batch(self, X):
        if self.out != 1:
            raise ValueError("input gradient defined for scalar potentials only")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        S = np.sin(X @ self.omega.T + self.phase)
        return -self._scale * ((S * self.theta[:, 0]) @ self.omega)

    def input_gradient(self, x):
        return self.input_gradient_batch(np.asarray(x, float)[None, :])[0]

    def copy(self):
        return RandomFeaturePotential(
            self.omega.copy(), self.phase.copy(), self.theta.copy(),
            self.freq_scale, self.seed,
        )


class FeedForwardPotential:
    """Two-hidden-layer ReLU network with linear output.

    Layer widths are d -> 128 -> 256 -> out.  The ReLU subgradient at 0
    is taken as 0 everywhere.
    """

    kind = "mlp"

    def __init__(self, w1, b1, w2, b2, w3, b3, seed=None):
        self.w1 = np.ascontiguousarray(w1, dtype=float)
        self.b1 = np.ascontiguousarray(b1, dtype=float)
        self.w2 = np.ascontiguousarray(w2, dtype=float)
        self.b2 = np.ascontiguousarray(b2, dtype=float)
        self.w3 = np.ascontiguousarray(w3, dtype=float)
        self.b3 = np.ascontiguousarray(b3, dtype=float)
        self.seed = seed
        self.d = self.w1.shape[0]
        self.out = self.w3.shape[1]
        self.hidden = (self.w1.shape[1], self.w2.shape[1])

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.param_arrays())

    def param_arrays(self):
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    def _forward(self, X):
        Z1 = X @ self.w1 + self.b1
        H1 = np.maximum(Z1, 0.0)
        Z2 = H1 @ self.w2 + self.b2
        H2 = np.maximum(Z2, 0.0)
        return Z1, H1, Z2, H2, H2 @ self.w3 + self.b3

    def value_batch(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        v = self._forward(X)[4]
        return v[:, 0] if self.out == 1 else v

    def value(self, x):
        v = self.value_batch(np.asarray(x, dtype=float)[None, :])
        return float(v[0]) if self.out == 1 else v[0]

    def preactivations(self, x):
        """Hidden-layer preactivations at one point, for kink detection."""
        X = np.asarray(x, dtype=float)[None, :]
        Z1, _, Z2, _, _ = self._forward(X)
        return Z1[0], Z2[0]

    def param_gradient_batch(self, upstream, X):
        """Gradient of sum_s upstream[s] . value(x_s) w.r.t. all layers."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        U = np.asarray(upstream, dtype=float)
        if U.ndim == 1:
            U = U[:, None]
        Z1, H1, Z2, H2, _ = self._forward(X)
        dw3 = H2.T @ U
        db3 = U.sum(axis=0)
        dZ2 = (U @ self.w3.T)
        dZ2 *= Z2 > 0
        dw2 = H1.T @ dZ2
        db2 = dZ2.sum(axis=0)
        dZ1 = dZ2 @ self.w2.T
        dZ1 *= Z1 > 0
        dw1 = X.T @ dZ1
        db1 = dZ1.sum(axis=0)
        return [dw1, db1, dw2, db2, dw3, db3]

    def param_gradient(self, upstream, x):
        up = np.atleast_1d(np.asarray(upstream, dtype=float))
        grads = self.param_gradient_batch(up[None, :], np.asarray(x, float)[None, :])
        return np.concatenate([g.ravel() for g in grads])

    def input_gradient_batch(self, X):
        if self.out != 1:
            raise ValueError("input gradient defined for scalar potentials only")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Z1, _, Z2, _, _ = self._forward(X)
        dZ2 = np.where(Z2 > 0, self.w3[:, 0], 0.0)
        dZ1 = (dZ2 @ self.w2.T) * (Z1 > 0)
        return dZ1 @ self.w1.T

    def input_gradient(self, x):
        return self.input_gradient_batch(np.asarray(x, float)[None, :])[0]

    def copy(self):
        return FeedForwardPotential(
            *(a.copy() for a in self.param_arrays()), seed=self.seed
        )


class LinearCombinationPotential:
    """Fixed linear combination of potentials, e.g. a centered dual.

    Supports value and input-gradient queries only; it carries no
    trainable parameters of its own.
    """

    kind = "combination"

    def __init__(self, coefficients, potentials):
        if len(coefficients) != len(potentials):
            raise ValueError("one coefficient per potential required")
        self.coefficients = [float(c) for c in coefficients]
        self.potentials = list(potentials)
        self.d = self.potentials[0].d
        self.out = self.potentials[0].out

    def value_batch(self, X):
        acc = self.coefficients[0] * self.potentials[0].value_batch(X)
        for c, p in zip(self.coefficients[1:], self.potentials[1:]):
            acc = acc + c * p.value_batch(X)
        return acc

    def value(self, x):
        v = self.value_batch(np.asarray(x, dtype=float)[None, :])
        return float(v[0]) if self.out == 1 else v[0]

    def input_gradient_batch(self, X):
        acc = self.coefficients[0] * self.potentials[0].input_gradient_batch(X)
        for c, p in zip(self.coefficients[1:], self.potentials[1:]):
            acc = acc + c * p.input_gradient_batch(X)
        return acc

    def input_gradient(self, x):
        return self.input_gradient_batch(np.asarray(x, float)[None, :])[0]


def init_rff(d, rng, n_features=2048, freq_scale=1.0, out=1):
    """Draw fixed frequencies and phases; coefficients start at zero.

    Frequencies are isotropic normal with standard deviation
    ``freq_scale``; phases are uniform on [0, 2*pi).  ``rng`` may be a
    Generator or an integer seed (recorded in checkpoints when given).
    """
    if n_features < 1:
        raise ValueError("n_features must be >= 1")
    if not freq_scale > 0:
        raise ValueError("freq_scale must be positive")
    gen, seed = _as_rng(rng)
    omega = freq_scale * gen.standard_normal((n_features, d))
    phase = gen.uniform(0.0, 2.0 * np.pi, size=n_features)
    theta = np.zeros((n_features, out))
    return RandomFeaturePotential(omega, phase, theta, freq_scale, seed)


def init_mlp(d, rng, out=1, hidden=MLP_HIDDEN):
    """He-style initialization: N(0, 2/fan_in) weights, zero biases."""
    gen, seed = _as_rng(rng)
    h1, h2 = hidden
    w1 = gen.standard_normal((d, h1)) * np.sqrt(2.0 / d)
    w2 = gen.standard_normal((h1, h2)) * np.sqrt(2.0 / h1)
    w3 = gen.standard_normal((h2, out)) * np.sqrt(2.0 / h2)
    return FeedForwardPotential(
        w1, np.zeros(h1), w2, np.zeros(h2), w3, np.zeros(out), seed=seed
    )


# ---------------------------------------------------------------------------
# Checkpoint text format
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    # Shortest decimal that round-trips the exact float64 bit pattern.
    return repr(float(x))


def _write_array(fh, name, a):
    a = np.asarray(a, dtype=float)
    fh.write(f"array {name} {' '.join(str(s) for s in a.shape)}\n")
    flat = a.ravel()
    for start in range(0, flat.size, 8):
        fh.write(" ".join(_fmt(v) for v in flat[start:start + 8]) + "\n")


def _read_array(lines, name):
    header = next(lines).split()
    if header[0] != "array" or header[1] != name:
        raise ValueError(f"expected array {name!r}, got {' '.join(header)!r}")
    shape = tuple(int(s) for s in header[2:])
    n = int(np.prod(shape)) if shape else 1
    vals = []
    while len(vals) < n:
        vals.extend(float(v) for v in next(lines).split())
    return np.array(vals).reshape(shape)


def write_potential(fh, p) -> None:
    """Serialize one potential as self-describing text."""
    fh.write(f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n")
    fh.write(f"kind {p.kind}\n")
    fh.write(f"d {p.d}\n")
    fh.write(f"out {p.out}\n")
    fh.write(f"seed {'none' if p.seed is None else p.seed}\n")
    if p.kind == "rff":
        fh.write(f"n_features {p.n_features}\n")
        fh.write(f"freq_scale {_fmt(p.freq_scale)}\n")
        _write_array(fh, "omega", p.omega)
        _write_array(fh, "phase", p.phase)
        _write_array(fh, "theta", p.theta)
    elif p.kind == "mlp":
        fh.write(f"hidden {p.hidden[0]} {p.hidden[1]}\n")
        for name, arr in zip(("w1", "b1", "w2", "b2", "w3", "b3"), p.param_arrays()):
            _write_array(fh, name, arr)
    else:
        raise ValueError(f"cannot serialize potential kind {p.kind!r}")
    fh.write("end\n")


def read_potential(fh):
    """Inverse of :func:`write_potential`; bitwise-exact round trip."""
    return _read_potential_lines(iter(fh.read().splitlines()))


def _read_potential_lines(lines):
    magic = next(lines).split()
    if magic[0] != CHECKPOINT_MAGIC:
        raise ValueError("not a potential checkpoint")
    if int(magic[1]) != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {magic[1]}")
    kind = next(lines).split()[1]
    d = int(next(lines).split()[1])
    out = int(next(lines).split()[1])
    seed_tok = next(lines).split()[1]
    seed = None if seed_tok == "none" else int(seed_tok)
    if kind == "rff":
        next(lines)  # n_features, implied by array shapes
        freq_scale = float(next(lines).split()[1])
        omega = _read_array(lines, "omega")
        phase = _read_array(lines, "phase")
        theta = _read_array(lines, "theta")
        p = RandomFeaturePotential(omega, phase, theta, freq_scale, seed)
    elif kind == "mlp":
        next(lines)  # hidden sizes, implied by array shapes
        arrs = [_read_array(lines, n) for n in ("w1", "b1", "w2", "b2", "w3", "b3")]
        p = FeedForwardPotential(*arrs, seed=seed)
    else:
        raise ValueError(f"unknown potential kind {kind!r}")
    if next(lines).strip() != "end":
        raise ValueError("malformed checkpoint: missing end marker")
    if p.d != d or p.out != out:
        raise ValueError("checkpoint header inconsistent with arrays")
    return p


def potential_to_text(p) -> str:
    buf = io.StringIO()
    write_potential(buf, p)
    return buf.getvalue()


def potential_from_text(text: str):
    return _read_potential_lines(iter(text.splitlines()))
