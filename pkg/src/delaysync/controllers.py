"""Synchronization inputs U(y, x, alpha) applied to the response system."""

from __future__ import annotations

import numba
import numpy as np

from .models import DimensionError, ParametricModel


# The *_eval kernels take f and F already evaluated at y and x so the
# simulator can reuse them across the controller, response and law terms.


@numba.njit(cache=True, nogil=True)
def chen_u_eval(fy, Fy, fx, Fx, e, alpha, out):
    n, m = Fx.shape
    for a in range(n):
        acc = -e[a] + fx[a] - fy[a]
        for b in range(m):
            acc += (Fx[a, b] - Fy[a, b]) * alpha[b]
        out[a] = acc


@numba.njit(cache=True, nogil=True)
def proposed_u_eval(fy, Fy, fx, Fx, e, alpha, K, out):
    n, m = Fx.shape
    for a in range(n):
        acc = fx[a] - fy[a]
        for b in range(n):
            acc -= K[a, b] * e[b]
        for b in range(m):
            acc -= (Fy[a, b] - Fx[a, b]) * alpha[b]
        out[a] = acc


@numba.njit(cache=True, nogil=True)
def chen_u(f, F, y, x, alpha):
    out = np.empty(y.shape[0])
    chen_u_eval(f(y), F(y), f(x), F(x), y - x, alpha, out)
    return out


@numba.njit(cache=True, nogil=True)
def proposed_u(f, F, y, x, alpha, K):
    out = np.empty(y.shape[0])
    proposed_u_eval(f(y), F(y), f(x), F(x), y - x, alpha, K, out)
    return out


def chen_controller(model: ParametricModel, y, x, alpha) -> np.ndarray:
    """Unit-rate controller ``-e + f(x) - f(y) + [F(x) - F(y)] alpha``.

    The current estimate ``alpha`` stands in for the unknown parameters, so
    ``U(y, x, alpha) - U(y, x, theta) = [F(x) - F(y)] (alpha - theta)``.
    """
    y = model.check_state(y, "y")
    x = model.check_state(x, "x")
    alpha = model.check_params(alpha, "alpha")
    return chen_u(model.f, model.F, y, x, alpha)


def proposed_controller(model: ParametricModel, y, x, alpha, K) -> np.ndarray:
    """Gain controller ``-K e - f(y) + f(x) - [F(y) - F(x)] alpha``.

    In closed loop the error obeys ``edot = -K e + F(x) (alpha - theta)``.
    """
    y = model.check_state(y, "y")
    x = model.check_state(x, "x")
    alpha = model.check_params(alpha, "alpha")
    K = _check_gain(K, model.n)
    return proposed_u(model.f, model.F, y, x, alpha, K)


def augmented_controller(model: ParametricModel, y_blocks, x_blocks, alpha, K) -> list[np.ndarray]:
    """Per-block proposed controller; equivalent to a block-diagonal K*."""
    if len(y_blocks) != len(x_blocks):
        raise DimensionError(
            f"block count mismatch: {len(y_blocks)} response vs {len(x_blocks)} drive blocks"
        )
    if len(y_blocks) == 0:
        raise DimensionError("at least one block is required")
    return [proposed_controller(model, y, x, alpha, K) for y, x in zip(y_blocks, x_blocks)]


def augmented_controller_dense(model: ParametricModel, y_blocks, x_blocks, alpha, K) -> np.ndarray:
    """Reference form with stacked states and a materialized K*.

    Only used to cross-check :func:`augmented_controller`.
    """
    K = _check_gain(K, model.n)
    alpha = model.check_params(alpha, "alpha")
    ys = [model.check_state(y, "y") for y in y_blocks]
    xs = [model.check_state(x, "x") for x in x_blocks]
    nb = len(ys)
    K_star = np.kron(np.eye(nb), K)
    e_star = np.concatenate(ys) - np.concatenate(xs)
    f_y = np.concatenate([model.f(y) for y in ys])
    f_x = np.concatenate([model.f(x) for x in xs])
    F_y = np.vstack([model.F(y) for y in ys])
    F_x = np.vstack([model.F(x) for x in xs])
    return -K_star @ e_star - f_y + f_x - (F_y - F_x) @ alpha


def _check_gain(G, n):
    G = np.ascontiguousarray(G, dtype=np.float64)
    if G.shape != (n, n):
        raise DimensionError(f"gain must have shape ({n}, {n}), got {G.shape}")
    return G
