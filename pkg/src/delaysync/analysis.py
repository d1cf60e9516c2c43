"""Convergence metrics and rank diagnostics for synchronization runs."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .models import DimensionError
from .simulator import Trace

DEFAULT_THRESHOLDS = (1.0, 0.1, 0.01, 0.001)


def lyapunov_sync(e) -> float:
    """``V(e) = e.e / 2``."""
    e = np.asarray(e, dtype=float)
    return 0.5 * float(e @ e)


def lyapunov_joint(e, delta) -> float:
    """``V(e, Delta) = e.e / 2 + Delta.Delta / 2``."""
    d = np.asarray(delta, dtype=float)
    return lyapunov_sync(e) + 0.5 * float(d @ d)


def gram(Fx, L) -> np.ndarray:
    """``G = F^T L^T F`` for one coupling matrix."""
    Fx = np.asarray(Fx, dtype=float)
    L = np.asarray(L, dtype=float)
    if Fx.ndim != 2 or L.shape != (Fx.shape[0], Fx.shape[0]):
        raise DimensionError(f"incompatible shapes F{Fx.shape} and L{L.shape}")
    return Fx.T @ L.T @ Fx


def gram_augmented(F_blocks, L) -> np.ndarray:
    """Sum of per-block Gram matrices, i.e. ``F*^T L*^T F*`` for block-diagonal L*."""
    if len(F_blocks) == 0:
        raise DimensionError("at least one block is required")
    return sum(gram(Fi, L) for Fi in F_blocks)


def min_eig(G) -> float:
    G = np.asarray(G, dtype=float)
    return float(np.linalg.eigvalsh(0.5 * (G + G.T))[0])


def min_r(n: int, m: int) -> int:
    """Fewest delayed copies for which ``(r + 1) n >= m`` can hold."""
    if n < 1 or m < 1:
        raise ValueError("n and m must be positive")
    # integer form of ceil(m / n - 1), avoiding float rounding
    return max(0, -(-m // n) - 1)


def full_rank_along(trace: Trace, tol: float = 1e-6) -> bool:
    """True when the time-median of lambda_min(G) exceeds ``tol``.

    Isolated dips to zero (a state component crossing 0) are tolerated.
    """
    if len(trace) == 0:
        return False
    return float(np.median(trace.min_eig_G)) > tol


def band_width(theta_true: float, pct: float) -> float:
    """Half-width of the ``pct`` percent band around ``theta_true``.

    A zero true value has no relative scale, so the band is then ``pct``
    percent in absolute units.
    """
    if pct <= 0:
        raise ValueError("pct must be positive")
    scale = abs(theta_true) if theta_true != 0 else 1.0
    return pct / 100.0 * scale


def time_to_threshold(trace: Trace, param_index: int, theta_true: float, pct: float):
    """Time after which ``|alpha_i - theta_i|`` stays within ``pct`` percent.

    Returns the earliest sample time from which the error never leaves the
    band again within the trace, or None if the final sample is outside it
    (or the trace is empty).
    """
    if len(trace) == 0:
        return None
    err = np.abs(trace.alpha[:, param_index] - theta_true)
    outside = np.flatnonzero(~(err <= band_width(theta_true, pct)))
    if outside.size == 0:
        return float(trace.t[0])
    last = outside[-1]
    if last == len(err) - 1 or trace.diverged_at is not None:
        return None
    return float(trace.t[last + 1])


def _window(trace: Trace, window: float):
    if len(trace) < 2:
        raise ValueError("trace too short")
    span = trace.t[-1] - trace.t[0]
    if window > span + 1e-9:
        raise ValueError(f"window {window} exceeds trace span {span}")
    return np.flatnonzero(trace.t >= trace.t[-1] - window - 1e-9)


def rolling_rmse(trace: Trace, param_index: int, theta_true: float, sub_window: float = 1.0):
    """RMSE of ``alpha_i - theta_i`` over the trailing ``sub_window`` at each sample."""
    err2 = (trace.alpha[:, param_index] - theta_true) ** 2
    start = np.searchsorted(trace.t, trace.t - sub_window + 1e-9, side="left")
    # summed per window: a running cumsum would bury late tiny errors under the early transient
    return np.sqrt(np.array([err2[a:i + 1].mean() for i, a in enumerate(start)]))


def cov_rmse(trace: Trace, param_index: int, theta_true: float, window: float = 20.0,
             sub_window: float = 1.0) -> float:
    """Coefficient of variation of the rolling RMSE over the last ``window`` seconds.

    Raises ValueError when the RMSE has zero mean (error identically 0).
    """
    sel = _window(trace, window)
    rmse = rolling_rmse(trace, param_index, theta_true, sub_window)[sel]
    mu = float(np.mean(rmse))
    if mu == 0.0:
        raise ValueError("degenerate: RMSE is identically zero over the window")
    return float(np.std(rmse)) / abs(mu)


def cov_estimate(trace: Trace, param_index: int, window: float = 20.0) -> float:
    """``sigma / |mu|`` of the estimate ``alpha_i`` itself over the last ``window`` seconds."""
    sel = _window(trace, window)
    a = trace.alpha[sel, param_index]
    mu = float(np.mean(a))
    if mu == 0.0:
        raise ValueError("degenerate: estimate has zero mean over the window")
    return float(np.std(a)) / abs(mu)


@dataclass
class ThresholdReport:
    """Times to permanent entry into each error band, per (method, r) row."""

    param_index: int
    thresholds: tuple = DEFAULT_THRESHOLDS
    rows: dict = field(default_factory=dict)

    def add(self, method: str, r: int, trace: Trace, theta_true: float):
        self.rows[(method, r)] = {
            pct: time_to_threshold(trace, self.param_index, theta_true, pct)
            for pct in self.thresholds
        }

    def ordered_keys(self):
        return sorted(self.rows, key=lambda k: (k[0] != "chen", k[0], k[1]))

    @staticmethod
    def row_label(method, r):
        if method == "chen":
            return "Chen"
        if method == "proposed":
            return "Proposed"
        return f"Augmented r = {r}"

    def to_text(self) -> str:
        head = [f"{_pct_label(p)}" for p in self.thresholds]
        labels = [self.row_label(*k) for k in self.ordered_keys()]
        lw = max([len("Method")] + [len(s) for s in labels])
        cells = [[_fmt_time(self.rows[k][p]) for p in self.thresholds] for k in self.ordered_keys()]
        cw = max([len(h) for h in head] + [len(c) for row in cells for c in row] + [6])
        title = f"Time to reach identification error (alpha{self.param_index + 1}, simulated seconds)"
        lines = [title, f"{'Method':<{lw}} | " + " | ".join(f"{h:>{cw}}" for h in head)]
        lines.append("-" * len(lines[-1]))
        for label, row in zip(labels, cells):
            lines.append(f"{label:<{lw}} | " + " | ".join(f"{c:>{cw}}" for c in row))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("method,r," + ",".join(f"pct_{p!r}" for p in self.thresholds) + "\n")
        for k in self.ordered_keys():
            vals = [("" if v is None else repr(v)) for v in (self.rows[k][p] for p in self.thresholds)]
            buf.write(f"{k[0]},{k[1]}," + ",".join(vals) + "\n")
        return buf.getvalue()

    def is_monotone(self) -> bool:
        """Tighter bands never report an earlier time (None counts as +inf)."""
        for row in self.rows.values():
            times = [math.inf if row[p] is None else row[p] for p in sorted(self.thresholds, reverse=True)]
            if any(b < a for a, b in zip(times, times[1:])):
                return False
        return True


def _pct_label(p):
    return f"{p:g}%"


def _fmt_time(v):
    return "not reached" if v is None else f"{v:.1f}"
