"""Fixed-step RK4 integration of drive, augmented response and estimate.

The drive, the ``r + 1`` response blocks and the shared estimate ``alpha``
advance in lock-step on one grid.  Response block ``i`` is coupled to the
drive delayed by ``i * delta``; the delayed states come from a ring buffer of
the drive's own RK4 stage values, so every block sees exactly the trajectory
the drive produced (no interpolation, delta must be a multiple of h).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numba
import numpy as np

from .adaptation import chen_rate_acc, proposed_rate_acc
from .controllers import chen_u_eval, proposed_u_eval
from .models import DimensionError, DivergenceError, ParametricModel, affine_field

METHODS = ("chen", "proposed", "proposed-augmented")
_METHOD_CODE = {name: i for i, name in enumerate(METHODS)}


def rk4_step(deriv, t, s, h):
    """One classical Runge-Kutta step of ``ds/dt = deriv(t, s)``."""
    if not h > 0:
        raise ValueError("step must be positive")
    s = np.asarray(s, dtype=np.float64)
    k1 = np.asarray(deriv(t, s), dtype=np.float64)
    k2 = np.asarray(deriv(t + 0.5 * h, s + 0.5 * h * k1), dtype=np.float64)
    k3 = np.asarray(deriv(t + 0.5 * h, s + 0.5 * h * k2), dtype=np.float64)
    k4 = np.asarray(deriv(t + h, s + h * k3), dtype=np.float64)
    out = s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise DivergenceError(f"non-finite state at t={t + h}", t=t + h)
    return out


class DelayHistory:
    """Uniformly sampled drive history with constant pre-history.

    Sample ``k`` is the state at ``t0 + k * step``; anything requested before
    ``t0`` is ``initial_state``.  ``capacity`` bounds how many samples are
    retained, oldest first out.
    """

    def __init__(self, step, initial_state, t0=0.0, capacity=None):
        if not step > 0:
            raise ValueError("step must be positive")
        self.step = float(step)
        self.t0 = float(t0)
        self.initial_state = np.array(initial_state, dtype=np.float64)
        self.samples = deque(maxlen=capacity)
        self._count = 0

    def __len__(self):
        return self._count

    @property
    def newest_time(self):
        return self.t0 + (self._count - 1) * self.step

    def push(self, x):
        self.samples.append(np.array(x, dtype=np.float64))
        self._count += 1

    def grid_index(self, t):
        k = (t - self.t0) / self.step
        kr = round(k)
        if abs(k - kr) > 1e-9 * max(1.0, abs(k)):
            raise ValueError(f"t={t} is not on the sample grid")
        return int(kr)

    def lookup(self, t):
        k = self.grid_index(t)
        if k < 0 or (k == 0 and self._count == 0):
            return self.initial_state.copy()
        if k >= self._count:
            raise ValueError(f"t={t} is beyond the newest sample")
        first = self._count - len(self.samples)
        if k < first:
            raise ValueError(f"t={t} has already been dropped from the history")
        return self.samples[k - first].copy()


def delayed_state(hist: DelayHistory, t, i, delta):
    """Drive state at ``t - i * delta`` from the history buffer."""
    if i < 0 or delta < 0:
        raise ValueError("i and delta must be nonnegative")
    ratio = delta / hist.step
    if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
        raise ValueError("delta must be an integer multiple of the history step")
    return hist.lookup(t - i * delta)


@dataclass
class SimSetup:
    model: ParametricModel
    method: str = "proposed"
    r: int = 0
    delta: float = 0.1
    h: float = 0.001
    t_final: float = 10.0
    x0: np.ndarray = None
    y0: np.ndarray = None
    theta: np.ndarray = None
    alpha0: np.ndarray = None
    K: np.ndarray = None
    L: np.ndarray = None
    decimation: int = 100
    adapt: bool = True
    literal_edot: bool = False

    def __post_init__(self):
        n, m = self.model.n, self.model.m
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.r < 0 or int(self.r) != self.r:
            raise ValueError("r must be a nonnegative integer")
        self.r = int(self.r)
        if self.method in ("chen", "proposed") and self.r != 0:
            raise ValueError(f"method {self.method!r} does not take delayed blocks (r={self.r})")
        if not self.h > 0:
            raise ValueError("h must be positive")
        if self.t_final < 0:
            raise ValueError("t_final must be nonnegative")
        if self.decimation < 1:
            raise ValueError("decimation must be >= 1")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        ratio = self.delta / self.h
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ValueError(f"delta={self.delta} is not an integer multiple of h={self.h}")
        if self.x0 is None or self.y0 is None or self.theta is None:
            raise ValueError("x0, y0 and theta are required")
        self.x0 = self.model.check_state(self.x0, "x0")
        self.y0 = self.model.check_state(self.y0, "y0")
        self.theta = self.model.check_params(self.theta, "theta")
        self.alpha0 = (
            np.zeros(m) if self.alpha0 is None else self.model.check_params(self.alpha0, "alpha0")
        )
        self.K = check_spd(np.eye(n) if self.K is None else self.K, n, "K")
        self.L = check_spd(np.eye(n) if self.L is None else self.L, n, "L")

    @property
    def steps(self):
        return int(round(self.t_final / self.h))

    @property
    def delay_steps(self):
        return int(round(self.delta / self.h))


def check_spd(G, n, label="gain"):
    """Validate an n x n symmetric positive definite gain matrix."""
    G = np.ascontiguousarray(G, dtype=np.float64)
    if G.shape != (n, n):
        raise DimensionError(f"{label} must have shape ({n}, {n}), got {G.shape}")
    if not np.all(np.isfinite(G)):
        raise ValueError(f"{label} has non-finite entries")
    if np.max(np.abs(G - G.T)) > 1e-12 * max(1.0, np.max(np.abs(G))):
        raise ValueError(f"{label} is not symmetric")
    if np.linalg.eigvalsh(G)[0] <= 0:
        raise ValueError(f"{label} is not positive definite")
    return G


@dataclass
class Trace:
    """Decimated simulation record.

    ``y`` has shape ``(rows, r + 1, n)``; block 0 is the response coupled to
    the undelayed drive.  ``V`` is ``|e_0|^2 / 2`` and ``V1`` is the joint
    function ``|e*|^2 / 2 + |alpha - theta|^2 / 2`` over all blocks.
    ``min_eig_G`` is the smallest eigenvalue of the (augmented) Gram matrix
    at the recorded drive states.  ``diverged_at`` is the time of the first
    non-finite step, else None.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    alpha: np.ndarray
    V: np.ndarray
    V1: np.ndarray
    min_eig_G: np.ndarray
    theta: np.ndarray
    method: str = "proposed"
    r: int = 0
    diverged_at: float | None = None

    def __len__(self):
        return len(self.t)

    @property
    def e(self):
        return self.y[:, 0, :] - self.x

    @property
    def param_error(self):
        return self.alpha - self.theta


def error_rate(setup: SimSetup, x, y, alpha) -> np.ndarray:
    """Model-based ``edot`` of the undelayed block, as the simulator uses it."""
    model = setup.model
    x = model.check_state(x)
    y = model.check_state(y, "y")
    alpha = model.check_params(alpha, "alpha")
    fy, Fy, fx, Fx = model.f(y), model.F(y), model.f(x), model.F(x)
    u = np.empty(model.n)
    if setup.method == "chen":
        chen_u_eval(fy, Fy, fx, Fx, y - x, alpha, u)
    else:
        proposed_u_eval(fy, Fy, fx, Fx, y - x, alpha, setup.K, u)
    return fy + Fy @ alpha + u - (fx + Fx @ setup.theta)


@numba.njit(nogil=True)
def _rates(f, F, method, literal, adapt, xs, dxs, Y, alpha, K, L, LK, dY, dalpha):
    nb, n = Y.shape
    m = alpha.shape[0]
    dalpha[:] = 0.0
    u = np.empty(n)
    e = np.empty(n)
    edot = np.empty(n)
    for i in range(nb):
        y = Y[i]
        xi = xs[i]
        fy = f(y)
        Fy = F(y)
        fx = f(xi)
        Fx = F(xi)
        for a in range(n):
            e[a] = y[a] - xi[a]
        if method == 0:
            chen_u_eval(fy, Fy, fx, Fx, e, alpha, u)
        else:
            proposed_u_eval(fy, Fy, fx, Fx, e, alpha, K, u)
        for a in range(n):
            acc = fy[a] + u[a]
            for b in range(m):
                acc += Fy[a, b] * alpha[b]
            dY[i, a] = acc
            edot[a] = acc - dxs[i, a]
        if adapt:
            if method == 0:
                chen_rate_acc(Fx, e, dalpha)
            else:
                proposed_rate_acc(Fx, e, edot, LK, L, literal, dalpha)


@numba.njit(cache=True, nogil=True)
def _gather(hx, hd, R, k, stage, d, x0, dx0, xs, dxs):
    nb = xs.shape[0]
    for i in range(nb):
        j = k - i * d
        if j < 0:
            xs[i, :] = x0
            dxs[i, :] = dx0
        else:
            xs[i, :] = hx[j % R, stage]
            dxs[i, :] = hd[j % R, stage]


@numba.njit(nogil=True)
def _record(F, row, k, h, x, Y, xs, alpha, theta, L, out_t, out_x, out_y, out_a, out_V, out_V1, out_G):
    nb, n = Y.shape
    m = alpha.shape[0]
    out_t[row] = k * h
    v0 = 0.0
    v1 = 0.0
    for a in range(n):
        out_x[row, a] = x[a]
        d0 = Y[0, a] - x[a]
        v0 += d0 * d0
    for b in range(m):
        out_a[row, b] = alpha[b]
        db = alpha[b] - theta[b]
        v1 += db * db
    G = out_G[row]
    G[:, :] = 0.0
    LF = np.empty((n, m))
    for i in range(nb):
        for a in range(n):
            out_y[row, i, a] = Y[i, a]
            di = Y[i, a] - xs[i, a]
            v1 += di * di
        Fi = F(xs[i])
        for a in range(n):
            for b in range(m):
                acc = 0.0
                for c in range(n):
                    acc += L[c, a] * Fi[c, b]
                LF[a, b] = acc
        for b1 in range(m):
            for b2 in range(m):
                acc = 0.0
                for a in range(n):
                    acc += Fi[a, b1] * LF[a, b2]
                G[b1, b2] += acc
    out_V[row] = 0.5 * v0
    out_V1[row] = 0.5 * v1


@numba.njit(nogil=True)
def _integrate(f, F, method, literal, adapt, r, d, h, nsteps, decim,
               x0, y0, theta, alpha0, K, L,
               out_t, out_x, out_y, out_a, out_V, out_V1, out_G):
    n = x0.shape[0]
    m = alpha0.shape[0]
    nb = r + 1
    R = r * d + 1
    hx = np.empty((R, 4, n))
    hd = np.empty((R, 4, n))
    xs = np.empty((nb, n))
    dxs = np.empty((nb, n))
    x = x0.copy()
    Y = np.empty((nb, n))
    for i in range(nb):
        Y[i, :] = y0
    alpha = alpha0.copy()
    dx0 = affine_field(f, F, x0, theta)
    LK = L @ K

    kY = np.empty((4, nb, n))
    ka = np.empty((4, m))
    kx = np.empty((4, n))
    xst = np.empty(n)
    Ys = np.empty((nb, n))
    ast = np.empty(m)
    row = 0
    diverged = -1
    half = 0.5 * h
    w = h / 6.0
    for k in range(nsteps + 1):
        slot = k % R
        hx[slot, 0, :] = x
        hd[slot, 0, :] = affine_field(f, F, x, theta)
        _gather(hx, hd, R, k, 0, d, x0, dx0, xs, dxs)
        if k % decim == 0:
            _record(F, row, k, h, x, Y, xs, alpha, theta, L,
                    out_t, out_x, out_y, out_a, out_V, out_V1, out_G)
            row += 1
        if k == nsteps:
            break
        kx[0, :] = hd[slot, 0]
        _rates(f, F, method, literal, adapt, xs, dxs, Y, alpha, K, L, LK, kY[0], ka[0])
        for stage in range(1, 4):
            c = half if stage < 3 else h
            for a in range(n):
                xst[a] = x[a] + c * kx[stage - 1, a]
            hx[slot, stage, :] = xst
            kx[stage, :] = affine_field(f, F, xst, theta)
            hd[slot, stage, :] = kx[stage]
            _gather(hx, hd, R, k, stage, d, x0, dx0, xs, dxs)
            for i in range(nb):
                for a in range(n):
                    Ys[i, a] = Y[i, a] + c * kY[stage - 1, i, a]
            for b in range(m):
                ast[b] = alpha[b] + c * ka[stage - 1, b]
            _rates(f, F, method, literal, adapt, xs, dxs, Ys, ast, K, L, LK, kY[stage], ka[stage])
        ok = True
        for a in range(n):
            x[a] += w * (kx[0, a] + 2.0 * kx[1, a] + 2.0 * kx[2, a] + kx[3, a])
            ok = ok and np.isfinite(x[a])
        for i in range(nb):
            for a in range(n):
                Y[i, a] += w * (kY[0, i, a] + 2.0 * kY[1, i, a] + 2.0 * kY[2, i, a] + kY[3, i, a])
                ok = ok and np.isfinite(Y[i, a])
        for b in range(m):
            alpha[b] += w * (ka[0, b] + 2.0 * ka[1, b] + 2.0 * ka[2, b] + ka[3, b])
            ok = ok and np.isfinite(alpha[b])
        if not ok:
            diverged = k + 1
            break
    return row, diverged


def min_eigenvalues(G):
    """Smallest eigenvalue of each symmetric matrix in a stack."""
    if len(G) == 0:
        return np.empty(0)
    return np.linalg.eigvalsh(0.5 * (G + np.swapaxes(G, -1, -2)))[:, 0]


def simulate(setup: SimSetup) -> Trace:
    """Integrate the coupled system described by ``setup``."""
    model = setup.model
    n, m, nb = model.n, model.m, setup.r + 1
    nsteps = setup.steps
    rows = 0 if nsteps == 0 else nsteps // setup.decimation + 1
    out_t = np.empty(rows)
    out_x = np.empty((rows, n))
    out_y = np.empty((rows, nb, n))
    out_a = np.empty((rows, m))
    out_V = np.empty(rows)
    out_V1 = np.empty(rows)
    out_G = np.zeros((rows, m, m))
    diverged_at = None
    if nsteps > 0:
        used, div = _integrate(
            model.f, model.F, _METHOD_CODE[setup.method], setup.literal_edot, setup.adapt,
            setup.r, setup.delay_steps, setup.h, nsteps, setup.decimation,
            setup.x0, setup.y0, setup.theta, setup.alpha0, setup.K, setup.L,
            out_t, out_x, out_y, out_a, out_V, out_V1, out_G,
        )
        if div >= 0:
            diverged_at = div * setup.h
        rows = used
    return Trace(
        t=out_t[:rows],
        x=out_x[:rows],
        y=out_y[:rows],
        alpha=out_a[:rows],
        V=out_V[:rows],
        V1=out_V1[:rows],
        min_eig_G=min_eigenvalues(out_G[:rows]),
        theta=setup.theta.copy(),
        method=setup.method,
        r=setup.r,
        diverged_at=diverged_at,
    )



# --- trace files ------------------------------------------------------------


def trace_columns(n, m, r):
    cols = ["t"] + [f"x{j}" for j in range(1, n + 1)] + [f"y{j}" for j in range(1, n + 1)]
    for i in range(1, r + 1):
        cols += [f"y{j}_d{i}" for j in range(1, n + 1)]
    cols += [f"alpha{j}" for j in range(1, m + 1)]
    return cols + ["V", "V1", "min_eig_G"]


def write_trace_csv(trace: Trace, path) -> None:
    """Write a trace as CSV; a divergence ends the file with a ``#`` line."""
    rows, n = trace.x.shape
    m = trace.alpha.shape[1]
    nb = trace.y.shape[1]
    data = np.column_stack(
        [trace.t, trace.x, trace.y.reshape(rows, nb * n), trace.alpha, trace.V, trace.V1, trace.min_eig_G]
    ) if rows else np.empty((0, 1 + n + nb * n + m + 3))
    with open(path, "w") as fh:
        np.savetxt(fh, data, fmt="%.17g", delimiter=",",
                   header=",".join(trace_columns(n, m, nb - 1)), comments="")
        if trace.diverged_at is not None:
            fh.write(f"# diverged t={trace.diverged_at!r}\n")


def read_trace_csv(path, theta, method="proposed", r=None) -> Trace:
    """Load a trace written by :func:`write_trace_csv`."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    header = lines[0].split(",")
    n = sum(1 for c in header if c.startswith("x"))
    m = sum(1 for c in header if c.startswith("alpha"))
    nb = sum(1 for c in header if c.startswith("y")) // n
    if r is not None and r + 1 != nb:
        raise ValueError(f"{path}: expected {r + 1} response blocks, found {nb}")
    diverged_at = None
    body = []
    for line in lines[1:]:
        if line.startswith("#"):
            if "diverged t=" in line:
                diverged_at = float(line.split("diverged t=")[1])
            continue
        if line.strip():
            body.append([float(v) for v in line.split(",")])
    data = np.array(body, dtype=np.float64).reshape(len(body), len(header))
    rows = len(body)
    c = 1
    x = data[:, c:c + n]
    c += n
    y = data[:, c:c + nb * n].reshape(rows, nb, n)
    c += nb * n
    alpha = data[:, c:c + m]
    c += m
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (m,):
        raise ValueError(f"theta must have {m} entries")
    return Trace(
        t=data[:, 0], x=x, y=y, alpha=alpha, V=data[:, c], V1=data[:, c + 1],
        min_eig_G=data[:, c + 2], theta=theta, method=method, r=nb - 1, diverged_at=diverged_at,
    )
