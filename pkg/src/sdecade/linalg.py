"""Dense matrix exponentials for small matrices.

The sampling hot loops exponentiate stacks of small algebra elements, so
this module provides a scaling-and-squaring exponential with a diagonal
Pade(6) approximant plus closed forms for the two shapes that dominate
in practice: 1x1 blocks and 3x3 skew-symmetric matrices (Rodrigues).
The Rodrigues path is an optimization only; it must agree with the Pade
route to 1e-12 and is exercised against it in the test suite.
"""
from __future__ import annotations

import numpy as np

# Coefficients of the [6/6] diagonal Pade approximant to exp(x):
# c_k = (12-k)! 6! / (12! k! (6-k)!)
_PADE6 = (
    1.0,
    1.0 / 2.0,
    5.0 / 44.0,
    1.0 / 66.0,
    1.0 / 792.0,
    1.0 / 15840.0,
    1.0 / 665280.0,
)

# Scale until the 1-norm is below this before applying the approximant.
# Conservative for double precision; keeps the approximant error well
# under 1e-13 so the squaring phase stays inside the advertised budget.
_SCALE_LIMIT = 0.25


def expm(a: np.ndarray) -> np.ndarray:
    """Matrix exponential of one square matrix.

    Scaling-and-squaring with the Pade(6) approximant: scale a by 2**-s
    until its 1-norm is below 0.25, evaluate the rational approximant via
    one linear solve, then square s times.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expm expects a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if n == 1:
        return np.exp(a)

    norm = np.linalg.norm(a, 1)
    squarings = 0
    if norm > _SCALE_LIMIT:
        squarings = int(np.ceil(np.log2(norm / _SCALE_LIMIT)))
        a = a / (2.0 ** squarings)

    eye = np.eye(n)
    a2 = a @ a
    a4 = a2 @ a2
    # odd part U = A (c1 I + c3 A^2 + c5 A^4), even part V
    u = a @ (_PADE6[1] * eye + _PADE6[3] * a2 + _PADE6[5] * a4)
    v = _PADE6[0] * eye + _PADE6[2] * a2 + _PADE6[4] * a4 + _PADE6[6] * (a4 @ a2)
    result = np.linalg.solve(v - u, v + u)
    for _ in range(squarings):
        result = result @ result
    return result


def expm_skew3(a: np.ndarray) -> np.ndarray:
    """Rodrigues closed form exp(a) for stacks of 3x3 skew matrices.

    For skew a with axis vector omega, exp(a) = I + sinc(|omega|) a
    + (1-cos|omega|)/|omega|^2 a^2; small angles switch to series so the
    coefficients stay accurate through |omega| -> 0.
    """
    a = np.asarray(a, dtype=float)
    if a.shape[-2:] != (3, 3):
        raise ValueError(f"expm_skew3 expects (..., 3, 3), got {a.shape}")
    omega_sq = a[..., 2, 1] ** 2 + a[..., 0, 2] ** 2 + a[..., 1, 0] ** 2
    theta = np.sqrt(omega_sq)

    small = theta < 1e-4
    theta_safe = np.where(small, 1.0, theta)
    coef1 = np.where(
        small,
        1.0 - omega_sq / 6.0 + omega_sq * omega_sq / 120.0,
        np.sin(theta_safe) / theta_safe,
    )
    coef2 = np.where(
        small,
        0.5 - omega_sq / 24.0 + omega_sq * omega_sq / 720.0,
        (1.0 - np.cos(theta_safe)) / (theta_safe * theta_safe),
    )
    a2 = a @ a
    eye = np.broadcast_to(np.eye(3), a.shape)
    return eye + coef1[..., None, None] * a + coef2[..., None, None] * a2


def expm_stack(a: np.ndarray, skew: bool = False) -> np.ndarray:
    """exp of a stack (..., n, n), dispatching on shape.

    n = 1 uses the scalar exponential, 3x3 skew stacks (caller-asserted
    via `skew`) use Rodrigues, everything else loops the Pade route.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[-1]
    if a.shape[-2] != n:
        raise ValueError(f"expm_stack expects square trailing axes, got {a.shape}")
    if n == 1:
        return np.exp(a)
    if skew and n == 3:
        return expm_skew3(a)
    flat = a.reshape(-1, n, n)
    out = np.empty_like(flat)
    for i in range(flat.shape[0]):
        out[i] = expm(flat[i])
    return out.reshape(a.shape)


def _nilpotency_index(g: np.ndarray) -> int | None:
    """Smallest p with g**p == 0 exactly, or None if g is not nilpotent."""
    n = g.shape[0]
    power = g.copy()
    for p in range(1, n + 1):
        if not power.any():
            return p
        power = power @ g
    if not power.any():
        return n + 1
    return None


def expm_scaled(g: np.ndarray, t: np.ndarray) -> np.ndarray:
    """exp(t_l * g) for a fixed square g and an array of scales t.

    Fast paths: 1x1, diagonal g, exactly nilpotent g (finite series), and
    3x3 skew g (Rodrigues); otherwise one Pade call per scale.
    """
    g = np.asarray(g, dtype=float)
    t = np.asarray(t, dtype=float)
    n = g.shape[-1]
    if g.shape != (n, n):
        raise ValueError(f"expm_scaled expects one square matrix, got {g.shape}")
    if n == 1:
        return np.exp(t[..., None, None] * g)

    if not (g - np.diag(np.diagonal(g))).any():
        out = np.zeros(t.shape + (n, n))
        idx = np.arange(n)
        out[..., idx, idx] = np.exp(t[..., None] * np.diagonal(g))
        return out

    p = _nilpotency_index(g)
    if p is not None:
        out = np.broadcast_to(np.eye(n), t.shape + (n, n)).copy()
        power = np.eye(n)
        factorial = 1.0
        for k in range(1, p):
            power = power @ g
            factorial *= k
            out += (t[..., None, None] ** k) * (power / factorial)
        return out

    if n == 3 and not (g + g.T).any():
        return expm_skew3(t[..., None, None] * g)

    return expm_stack(t[..., None, None] * g)
