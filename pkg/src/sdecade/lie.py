"""Skew bases, linearly mixed generators, and Lie brackets of neural fields.

The bracket of vector fields follows the convention

    [f, g](z) = Dg(z) f(z) - Df(z) g(z),

chosen so that for identity activation the bracket of z -> Wz and
z -> W'z returns the matrix-commutator action (W'W - WW')z. Nested
brackets (``iterated_ad``) evaluate the first level with analytic
Jacobians and obtain the Jacobians of deeper bracket closures by
forward-mode differentiation (jax, loaded lazily), with a nesting cap
because the expression size grows exponentially in depth.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .activations import Activation, get_activation

MAX_BRACKET_DEPTH = 4

_JAX_HANDLES = None


def _jax():
    """Import jax on first use (the import is slow) with x64 enabled."""
    global _JAX_HANDLES
    if _JAX_HANDLES is None:
        import jax

        jax.config.update("jax_enable_x64", True)
        import jax.numpy as jnp

        _JAX_HANDLES = (jnp, jax.jacfwd)
    return _JAX_HANDLES


@dataclass(frozen=True)
class SkewBasis:
    """Canonical basis of the skew-symmetric n x n matrices.

    Generators are indexed by pairs (p, q), p < q, in lexicographic order,
    with entry +1 at (p, q) and -1 at (q, p).
    """

    n: int
    mats: np.ndarray  # (d, n, n)
    pairs: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return self.mats.shape[0]


def skew_basis(n: int) -> SkewBasis:
    """Canonical SkewBasis of dimension d = n(n-1)/2 (empty for n = 1)."""
    if int(n) != n or n < 1:
        raise ValueError(f"matrix dimension must be a positive integer, got {n!r}")
    n = int(n)
    pairs = [(p, q) for p in range(n) for q in range(p + 1, n)]
    mats = np.zeros((len(pairs), n, n))
    for j, (p, q) in enumerate(pairs):
        mats[j, p, q] = 1.0
        mats[j, q, p] = -1.0
    return SkewBasis(n=n, mats=mats, pairs=tuple(pairs))


@dataclass(frozen=True)
class GeneratorCoeffs:
    """Coefficient table mixing basis generators into drift and diffusion.

    Row 0 mixes the drift generator, rows 1..m mix one diffusion generator
    per noise channel; shape is (m + 1, d).
    """

    table: np.ndarray

    def __post_init__(self):
        table = np.asarray(self.table, dtype=float)
        if table.ndim != 2:
            raise ValueError(f"coefficient table must be 2-D, got shape {table.shape}")
        if not np.isfinite(table).all():
            raise ValueError("coefficient table contains non-finite entries")
        object.__setattr__(self, "table", table)

    @property
    def n_channels(self) -> int:
        return self.table.shape[0] - 1

    @property
    def n_generators(self) -> int:
        return self.table.shape[1]


def assemble_generators(
    coeffs: GeneratorCoeffs, basis: SkewBasis
) -> tuple[np.ndarray, np.ndarray]:
    """Mix the basis into (drift matrix A, diffusion matrices B_1..B_m).

    A = sum_j c[0, j] G_j and B_i = sum_j c[i, j] G_j; linear in the
    coefficients, and skew whenever the basis is skew.
    """
    if coeffs.n_generators != len(basis):
        raise ValueError(
            f"coefficient table has {coeffs.n_generators} generator columns "
            f"but the basis has {len(basis)} generators"
        )
    mixed = np.tensordot(coeffs.table, basis.mats, axes=(1, 0))
    return mixed[0], mixed[1:]


def commutator(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Matrix commutator [x, y] = xy - yx."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValueError(
            f"commutator expects two equal square matrices, got {x.shape} and {y.shape}"
        )
    return x @ y - y @ x


@dataclass(frozen=True)
class NeuralField:
    """The vector field z -> sigma(Wz), with analytic Jacobian.

    Jacobian at z is diag(sigma'(Wz)) W. The weight may be rectangular
    (p x n); the field then maps R^n to R^p, which is enough for bracket
    computations only when p = n.
    """

    weight: np.ndarray
    activation: Activation

    def __post_init__(self):
        weight = np.asarray(self.weight, dtype=float)
        if weight.ndim != 2:
            raise ValueError(f"weight must be a matrix, got shape {weight.shape}")
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "activation", get_activation(self.activation))

    def value(self, z, xp=np):
        w = xp.asarray(self.weight)
        return self.activation.value(w @ z, xp)

    def jacobian(self, z, xp=np):
        w = xp.asarray(self.weight)
        slope = self.activation.derivative(w @ z, xp)
        return slope[..., :, None] * w


def vf_bracket(f: NeuralField, g: NeuralField, z: np.ndarray) -> np.ndarray:
    """Vector-field bracket [f, g](z) = Dg(z) f(z) - Df(z) g(z)."""
    z = np.asarray(z, dtype=float)
    return g.jacobian(z) @ f.value(z) - f.jacobian(z) @ g.value(z)


def _bracket_closure(f: NeuralField, g: NeuralField, depth: int, jnp, jacfwd) -> Callable:
    """Traceable closure for ad_f^depth(g), differentiable by jacfwd.

    Both Jacobians come from jacfwd -- never the analytic formula for one
    side only -- so equal fields cancel exactly term by term and
    [f, f] stays identically zero at every depth.
    """
    if depth == 0:
        return lambda z: g.value(z, xp=jnp)
    inner = _bracket_closure(f, g, depth - 1, jnp, jacfwd)

    def f_value(z):
        return f.value(z, xp=jnp)

    def field(z):
        return jacfwd(inner)(z) @ f_value(z) - jacfwd(f_value)(z) @ inner(z)

    return field


def iterated_ad(
    f: NeuralField,
    g: NeuralField,
    k: int,
    z: np.ndarray,
    max_depth: int = MAX_BRACKET_DEPTH,
) -> np.ndarray:
    """k-fold nested bracket [f, [f, ... [f, g]]] evaluated at z.

    k = 0 returns g(z) and k = 1 delegates to vf_bracket (identical code
    path, hence bitwise-identical values). Deeper levels need Jacobians of
    bracket closures, which are computed by forward-mode differentiation.
    """
    if int(k) != k or k < 0:
        raise ValueError(f"bracket depth must be a non-negative integer, got {k!r}")
    k = int(k)
    if k > max_depth:
        raise ValueError(f"bracket depth {k} exceeds the configured cap {max_depth}")
    z = np.asarray(z, dtype=float)
    if k == 0:
        return g.value(z)
    if k == 1:
        return vf_bracket(f, g, z)

    jnp, jacfwd = _jax()
    inner = _bracket_closure(f, g, k - 1, jnp, jacfwd)
    zj = jnp.asarray(z)

    def f_value(zz):
        return f.value(zz, xp=jnp)

    value = jacfwd(inner)(zj) @ f_value(zj) - jacfwd(f_value)(zj) @ inner(zj)
    return np.asarray(value, dtype=float)
