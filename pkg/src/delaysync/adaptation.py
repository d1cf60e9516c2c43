"""Update laws for the parameter estimate alpha."""

from __future__ import annotations

import numba
import numpy as np

from .models import DimensionError


@numba.njit(cache=True, nogil=True)
def chen_rate_acc(Fx, e, out):
    """Accumulate ``-F^T e`` into ``out``."""
    n, m = Fx.shape
    for b in range(m):
        acc = 0.0
        for a in range(n):
            acc += Fx[a, b] * e[a]
        out[b] -= acc


@numba.njit(cache=True, nogil=True)
def proposed_rate_acc(Fx, e, edot, LK, L, literal, out):
    """Accumulate ``-F^T [(L K + I) e + L edot]`` into ``out``.

    ``literal`` drops the L factor on the edot term.
    """
    n, m = Fx.shape
    v = np.empty(n)
    for a in range(n):
        acc = e[a]
        for c in range(n):
            acc += LK[a, c] * e[c]
        if literal:
            acc += edot[a]
        else:
            for c in range(n):
                acc += L[a, c] * edot[c]
        v[a] = acc
    for b in range(m):
        acc = 0.0
        for a in range(n):
            acc += Fx[a, b] * v[a]
        out[b] -= acc


@numba.njit(cache=True, nogil=True)
def chen_rate(Fx, e):
    out = np.zeros(Fx.shape[1])
    chen_rate_acc(Fx, e, out)
    return out


@numba.njit(cache=True, nogil=True)
def proposed_rate(Fx, e, edot, K, L, literal):
    out = np.zeros(Fx.shape[1])
    proposed_rate_acc(Fx, e, edot, np.dot(L, K), L, literal, out)
    return out


def _shapes(Fx, e):
    Fx = np.ascontiguousarray(Fx, dtype=np.float64)
    e = np.ascontiguousarray(e, dtype=np.float64)
    if Fx.ndim != 2 or e.shape != (Fx.shape[0],):
        raise DimensionError(f"incompatible shapes F{Fx.shape} and e{e.shape}")
    return Fx, e


def _square(G, n, label):
    G = np.ascontiguousarray(G, dtype=np.float64)
    if G.shape != (n, n):
        raise DimensionError(f"{label} must have shape ({n}, {n}), got {G.shape}")
    return G


def chen_law(Fx, e) -> np.ndarray:
    """``alphadot = -F(x)^T e`` (gradient of ``V = e.e / 2``)."""
    Fx, e = _shapes(Fx, e)
    return chen_rate(Fx, e)


def proposed_law(Fx, e, edot, K, L) -> np.ndarray:
    """``alphadot = -F(x)^T [(L K + I) e + L edot]``."""
    Fx, e = _shapes(Fx, e)
    _, edot = _shapes(Fx, edot)
    n = Fx.shape[0]
    return proposed_rate(Fx, e, edot, _square(K, n, "K"), _square(L, n, "L"), False)


def augmented_law(blocks, K, L, literal: bool = False) -> np.ndarray:
    """Sum of per-block proposed-law terms over ``(F(x_i), e_i, edot_i)``.

    With ``literal=True`` the ``edot_i`` term is used without the ``L``
    factor, which only agrees with the stacked form when ``L = I``.
    """
    if len(blocks) == 0:
        raise DimensionError("at least one block is required")
    total = None
    for Fx, e, edot in blocks:
        Fx, e = _shapes(Fx, e)
        _, edot = _shapes(Fx, edot)
        n = Fx.shape[0]
        term = proposed_rate(Fx, e, edot, _square(K, n, "K"), _square(L, n, "L"), literal)
        total = term if total is None else total + term
    return total


def augmented_law_dense(blocks, K, L) -> np.ndarray:
    """Stacked form ``-F*^T [(L* K* + I) e* + L* edot*]`` with explicit K*, L*."""
    if len(blocks) == 0:
        raise DimensionError("at least one block is required")
    nb = len(blocks)
    F_star = np.vstack([np.asarray(b[0], dtype=float) for b in blocks])
    e_star = np.concatenate([np.asarray(b[1], dtype=float) for b in blocks])
    edot_star = np.concatenate([np.asarray(b[2], dtype=float) for b in blocks])
    K_star = np.kron(np.eye(nb), np.asarray(K, dtype=float))
    L_star = np.kron(np.eye(nb), np.asarray(L, dtype=float))
    I = np.eye(F_star.shape[0])
    return -F_star.T @ ((L_star @ K_star + I) @ e_star + L_star @ edot_star)


def finite_difference_edot(e_prev, e_next, dt) -> np.ndarray:
    """Centered estimate of the error derivative from neighbouring samples.

    Alternative to the model-based derivative when only the error signal is
    available.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    return (np.asarray(e_next, dtype=float) - np.asarray(e_prev, dtype=float)) / (2.0 * dt)
