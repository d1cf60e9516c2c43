"""Parameter-affine dynamical systems ``xdot = f(x) + F(x) @ theta``.

The drift ``f`` and coupling matrix ``F`` are compiled with numba so the
simulation kernel can call them without leaving native code.  User models
must therefore be written in the numpy subset numba understands.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numba
import numpy as np


class DimensionError(ValueError):
    """Vector or matrix with the wrong shape for the model."""


class DivergenceError(FloatingPointError):
    """Non-finite state produced during evaluation or integration."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


def _jit(fn):
    if isinstance(fn, numba.core.registry.CPUDispatcher):
        return fn
    return numba.njit(cache=False)(fn)


@dataclass(frozen=True, eq=False)
class ParametricModel:
    """Model ``xdot = f(x) + F(x) theta`` with state size n and m parameters."""

    name: str
    n: int
    m: int
    f: Callable
    F: Callable

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("n and m must be positive")
        object.__setattr__(self, "f", _jit(self.f))
        object.__setattr__(self, "F", _jit(self.F))

    def check_state(self, x, label="x"):
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.shape != (self.n,):
            raise DimensionError(f"{label} must have shape ({self.n},), got {x.shape}")
        return x

    def check_params(self, p, label="theta"):
        p = np.ascontiguousarray(p, dtype=np.float64)
        if p.shape != (self.m,):
            raise DimensionError(f"{label} must have shape ({self.m},), got {p.shape}")
        return p

    def drift(self, x):
        return self.f(self.check_state(x))

    def coupling(self, x):
        return self.F(self.check_state(x))


def _finite(v):
    if not np.all(np.isfinite(v)):
        raise DivergenceError("non-finite derivative")
    return v


@numba.njit(nogil=True)
def affine_field(f, F, x, p):
    """``f(x) + F(x) p`` summed column by column in a fixed order."""
    out = f(x)
    Fx = F(x)
    n, m = Fx.shape
    for a in range(n):
        for b in range(m):
            out[a] += Fx[a, b] * p[b]
    return out


def drive_deriv(model: ParametricModel, x, theta) -> np.ndarray:
    """Drive vector field ``f(x) + F(x) theta``."""
    x = model.check_state(x)
    theta = model.check_params(theta)
    return _finite(affine_field(model.f, model.F, x, theta))


def response_deriv(model: ParametricModel, y, alpha, u) -> np.ndarray:
    """Response vector field ``f(y) + F(y) alpha + u``."""
    y = model.check_state(y, "y")
    alpha = model.check_params(alpha, "alpha")
    u = model.check_state(u, "u")
    return _finite(affine_field(model.f, model.F, y, alpha) + u)


# --- built-in systems -------------------------------------------------------


@numba.njit(cache=True)
def _lorenz_f(x):
    return np.array([0.0, -x[1] - x[0] * x[2], x[0] * x[1]])


@numba.njit(cache=True)
def _lorenz_F3(x):
    out = np.zeros((3, 3))
    out[0, 0] = x[1] - x[0]
    out[1, 1] = x[0]
    out[2, 2] = -x[2]
    return out


@numba.njit(cache=True)
def _lorenz_F4(x):
    out = np.zeros((3, 4))
    out[0, 0] = x[1] - x[0]
    out[1, 1] = x[0]
    out[2, 2] = -x[2]
    out[2, 3] = 1.0
    return out


@numba.njit(cache=True)
def _rossler_f(x):
    return np.array([-x[1] - x[2], x[0], x[0] * x[2]])


@numba.njit(cache=True)
def _rossler_F3(x):
    out = np.zeros((3, 3))
    out[1, 0] = x[1]
    out[2, 1] = 1.0
    out[2, 2] = -x[2]
    return out


@numba.njit(cache=True)
def _rossler_F4(x):
    out = np.zeros((3, 4))
    out[1, 0] = x[1]
    out[1, 3] = 1.0
    out[2, 1] = 1.0
    out[2, 2] = -x[2]
    return out


def lorenz_model(m4: bool = False) -> ParametricModel:
    """Lorenz oscillator; ``m4`` appends a constant column ``[0, 0, 1]``."""
    if m4:
        return ParametricModel("lorenz-m4", 3, 4, _lorenz_f, _lorenz_F4)
    return ParametricModel("lorenz", 3, 3, _lorenz_f, _lorenz_F3)


def rossler_model(m4: bool = False) -> ParametricModel:
    """Rossler attractor; ``m4`` appends a constant column ``[0, 1, 0]``."""
    if m4:
        return ParametricModel("rossler-m4", 3, 4, _rossler_f, _rossler_F4)
    return ParametricModel("rossler", 3, 3, _rossler_f, _rossler_F3)


REGISTRY: dict[str, Callable[[], ParametricModel]] = {
    "lorenz": lambda: lorenz_model(False),
    "lorenz-m4": lambda: lorenz_model(True),
    "rossler": lambda: rossler_model(False),
    "rossler-m4": lambda: rossler_model(True),
}

_cache: dict[str, ParametricModel] = {}


def register(key: str, factory: Callable[[], ParametricModel]) -> None:
    REGISTRY[key] = factory
    _cache.pop(key, None)


def get_model(key: str) -> ParametricModel:
    """Look up a registered model by name (instances are shared)."""
    if key not in REGISTRY:
        raise KeyError(f"unknown model {key!r}; known: {', '.join(sorted(REGISTRY))}")
    if key not in _cache:
        _cache[key] = REGISTRY[key]()
    return _cache[key]
