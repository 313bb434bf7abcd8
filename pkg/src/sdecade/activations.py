"""Scalar nonlinearities with analytic derivatives.

Each entry is written against a pluggable array namespace (``xp``) so the
same definition serves plain numpy evaluation and traced forward-mode
differentiation. Built-ins: tanh (derivative 1 - tanh^2), identity, and
the cubic 1 + r^3. User activations can be registered but must carry an
analytic derivative to participate in bracket/Jacobian computations.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class Activation:
    """Named scalar nonlinearity sigma with optional analytic derivative.

    `value` and `deriv` take (r, xp) where xp defaults to numpy; they must
    act elementwise on arrays of any shape.
    """

    name: str
    value: Callable
    deriv: Callable | None = None

    def __call__(self, r, xp=np):
        return self.value(r, xp)

    def derivative(self, r, xp=np):
        if self.deriv is None:
            raise ValueError(
                f"activation {self.name!r} has no registered derivative"
            )
        return self.deriv(r, xp)


def _tanh(r, xp=np):
    return xp.tanh(r)


def _tanh_deriv(r, xp=np):
    s = xp.tanh(r)
    return 1.0 - s * s


def _identity(r, xp=np):
    return r * 1.0


def _identity_deriv(r, xp=np):
    return xp.ones_like(r * 1.0)


def _cubic(r, xp=np):
    return 1.0 + r * r * r


def _cubic_deriv(r, xp=np):
    return 3.0 * r * r


TANH = Activation("tanh", _tanh, _tanh_deriv)
IDENTITY = Activation("identity", _identity, _identity_deriv)
CUBIC_PLUS_ONE = Activation("cubic-plus-one", _cubic, _cubic_deriv)

_REGISTRY: dict[str, Activation] = {
    TANH.name: TANH,
    IDENTITY.name: IDENTITY,
    CUBIC_PLUS_ONE.name: CUBIC_PLUS_ONE,
}


def register_activation(activation: Activation) -> Activation:
    """Add a user activation to the registry (overwrites same-name entries)."""
    if not isinstance(activation, Activation):
        raise TypeError("register_activation expects an Activation")
    _REGISTRY[activation.name] = activation
    return activation


def get_activation(sigma: str | Activation) -> Activation:
    """Resolve an activation by name or pass an Activation through."""
    if isinstance(sigma, Activation):
        return sigma
    try:
        return _REGISTRY[sigma]
    except KeyError:
        known = ", ".join(sorted(_REGISTRY))
        raise ValueError(f"unknown activation {sigma!r}; registered: {known}") from None


def registered_names() -> tuple[str, ...]:
    return tuple(sorted(_REGISTRY))
