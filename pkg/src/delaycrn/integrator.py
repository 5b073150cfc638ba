"""Method-of-steps integration of delayed mass-action systems.

Fixed-step classical RK4. Delayed arguments x(t - tau_k) come from the
history function when t - tau_k <= 0 and otherwise from the cubic Hermite
interpolant of the already accepted grid (values plus stored derivatives).
The step must not exceed the smallest positive delay, so every delayed
lookup lands in accepted territory. Zero-delay reactions read the current
stage state.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .exceptions import IntegrationError
from .network import HistoryFunction, ReactionNetwork

CLAMP_TOL = 1e-12
_GRID_TOL = 1e-9  # relative to the step, for "is this a grid time" questions

_STATUS_OK = 0
_STATUS_NEGATIVE = 1
_STATUS_NONFINITE = 2


def rhs(net: ReactionNetwork, current, delayed) -> np.ndarray:
    """sum_k kappa_k [ delayed_k^{y_k} y_k' - current^{y_k} y_k ].

    ``delayed`` has one row per reaction: delayed[k] = x(t - tau_k).
    """
    current = np.asarray(current, dtype=float)
    delayed = np.asarray(delayed, dtype=float)
    inflow = net.rates * np.prod(delayed ** net.source_matrix, axis=1)
    outflow = net.rates * net.monomials(current)
    return inflow @ net.product_matrix - outflow @ net.source_matrix


# -- compiled kernels ---------------------------------------------------------


@njit(cache=True, nogil=True)
def _history_at(t, hist_t, hist_x, out):
    if hist_t.size == 1:
        out[:] = hist_x[0]
        return
    j = np.searchsorted(hist_t, t, side="right") - 1
    if j < 0:
        j = 0
    if j > hist_t.size - 2:
        j = hist_t.size - 2
    w = (t - hist_t[j]) / (hist_t[j + 1] - hist_t[j])
    for i in range(out.size):
        out[i] = (1.0 - w) * hist_x[j, i] + w * hist_x[j + 1, i]


@njit(cache=True, nogil=True)
def _lookup(p, X, D, h, hist_t, hist_x, out):
    # p is the lookup time measured in steps from t = 0
    if p <= 0.0:
        _history_at(p * h, hist_t, hist_x, out)
        return
    j = int(math.floor(p))
    th = p - j
    if th == 0.0:
        out[:] = X[j]
        return
    th2 = th * th
    th3 = th2 * th
    h00 = 2.0 * th3 - 3.0 * th2 + 1.0
    h10 = th3 - 2.0 * th2 + th
    h01 = -2.0 * th3 + 3.0 * th2
    h11 = th3 - th2
    for i in range(out.size):
        out[i] = h00 * X[j, i] + h10 * h * D[j, i] + h01 * X[j + 1, i] + h11 * h * D[j + 1, i]


@njit(cache=True, nogil=True)
def _dde_rhs(n, c, state, X, D, h, lags, src, prod, kappa, hist_t, hist_x, buf, out):
    M, N = src.shape
    for i in range(N):
        out[i] = 0.0
    for k in range(M):
        if lags[k] == 0.0:
            for i in range(N):
                buf[i] = state[i]
        else:
            _lookup(n + c - lags[k], X, D, h, hist_t, hist_x, buf)
        m_now = 1.0
        m_past = 1.0
        for i in range(N):
            e = src[k, i]
            if e != 0:
                m_now *= state[i] ** e
                m_past *= buf[i] ** e
        for i in range(N):
            out[i] += kappa[k] * (m_past * prod[k, i] - m_now * src[k, i])


@njit(cache=True, nogil=True)
def _march_dde(x0, h, n_steps, lags, src, prod, kappa, hist_t, hist_x, clamp_tol):
    N = x0.size
    X = np.empty((n_steps + 1, N))
    D = np.empty((n_steps + 1, N))
    X[0] = x0
    buf = np.empty(N)
    k1 = np.empty(N)
    k2 = np.empty(N)
    k3 = np.empty(N)
    k4 = np.empty(N)
    s = np.empty(N)
    min_raw = x0.min()
    for n in range(n_steps):
        xn = X[n]
        _dde_rhs(n, 0.0, xn, X, D, h, lags, src, prod, kappa, hist_t, hist_x, buf, k1)
        D[n] = k1
        for i in range(N):
            s[i] = xn[i] + 0.5 * h * k1[i]
        _dde_rhs(n, 0.5, s, X, D, h, lags, src, prod, kappa, hist_t, hist_x, buf, k2)
        for i in range(N):
            s[i] = xn[i] + 0.5 * h * k2[i]
        _dde_rhs(n, 0.5, s, X, D, h, lags, src, prod, kappa, hist_t, hist_x, buf, k3)
        for i in range(N):
            s[i] = xn[i] + h * k3[i]
        _dde_rhs(n, 1.0, s, X, D, h, lags, src, prod, kappa, hist_t, hist_x, buf, k4)
        for i in range(N):
            v = xn[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if not np.isfinite(v):
                return X, D, min_raw, _STATUS_NONFINITE, n + 1
            if v < min_raw:
                min_raw = v
            if v < 0.0:
                if v < -clamp_tol:
                    X[n + 1, i] = v
                    return X, D, min_raw, _STATUS_NEGATIVE, n + 1
                v = 0.0
            X[n + 1, i] = v
    _dde_rhs(n_steps, 0.0, X[n_steps], X, D, h, lags, src, prod, kappa, hist_t, hist_x, buf, k1)
    D[n_steps] = k1
    return X, D, min_raw, _STATUS_OK, n_steps


@njit(cache=True, nogil=True)
def _ode_rhs(x, src, gamma, kappa, out):
    M, N = src.shape
    for i in range(N):
        out[i] = 0.0
    for k in range(M):
        rate = kappa[k]
        for i in range(N):
            e = src[k, i]
            if e != 0:
                rate *= x[i] ** e
        for i in range(N):
            out[i] += rate * gamma[k, i]


@njit(cache=True, nogil=True)
def _march_ode(x0, h, n_steps, src, gamma, kappa, clamp_tol):
    N = x0.size
    X = np.empty((n_steps + 1, N))
    D = np.empty((n_steps + 1, N))
    X[0] = x0
    k1 = np.empty(N)
    k2 = np.empty(N)
    k3 = np.empty(N)
    k4 = np.empty(N)
    s = np.empty(N)
    min_raw = x0.min()
    for n in range(n_steps):
        xn = X[n]
        _ode_rhs(xn, src, gamma, kappa, k1)
        D[n] = k1
        for i in range(N):
            s[i] = xn[i] + 0.5 * h * k1[i]
        _ode_rhs(s, src, gamma, kappa, k2)
        for i in range(N):
            s[i] = xn[i] + 0.5 * h * k2[i]
        _ode_rhs(s, src, gamma, kappa, k3)
        for i in range(N):
            s[i] = xn[i] + h * k3[i]
        _ode_rhs(s, src, gamma, kappa, k4)
        for i in range(N):
            v = xn[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if not np.isfinite(v):
                return X, D, min_raw, _STATUS_NONFINITE, n + 1
            if v < min_raw:
                min_raw = v
            if v < 0.0:
                if v < -clamp_tol:
                    X[n + 1, i] = v
                    return X, D, min_raw, _STATUS_NEGATIVE, n + 1
                v = 0.0
            X[n + 1, i] = v
    _ode_rhs(X[n_steps], src, gamma, kappa, k1)
    D[n_steps] = k1
    return X, D, min_raw, _STATUS_OK, n_steps


# -- trajectories -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Dense solution record on [-tau, T].

    ``t_grid[n_history]`` is t = 0; grid points after it are uniformly spaced
    by ``step``. Points before it sample the history (its breakpoints are
    always included). ``min_raw`` is the smallest state component seen
    before clamping.
    """

    t_grid: np.ndarray
    values: np.ndarray
    derivs: np.ndarray
    net: ReactionNetwork
    history: HistoryFunction
    step: float
    n_history: int
    min_raw: float = field(default=np.inf)

    @property
    def horizon(self) -> float:
        return float(self.t_grid[-1])

    @property
    def tau(self) -> float:
        return self.history.tau

    @property
    def n_steps(self) -> int:
        return len(self.t_grid) - 1 - self.n_history

    @property
    def forward_times(self) -> np.ndarray:
        return self.t_grid[self.n_history:]

    @property
    def forward_values(self) -> np.ndarray:
        return self.values[self.n_history:]

    @property
    def forward_derivs(self) -> np.ndarray:
        return self.derivs[self.n_history:]

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]

    def __call__(self, t) -> np.ndarray:
        """Dense evaluation: the history on [-tau, 0], cubic Hermite on (0, T]."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        tol = _GRID_TOL * self.step
        if np.any(t < -self.tau - tol) or np.any(t > self.horizon + tol):
            raise ValueError(f"trajectory evaluated outside [-{self.tau}, {self.horizon}]")
        out = np.empty(t.shape + (self.net.n_species,))
        past = t <= 0
        if np.any(past):
            out[past] = self.history(np.minimum(t[past], 0.0))
        fut = ~past
        if np.any(fut):
            X, D, h = self.forward_values, self.forward_derivs, self.step
            p = np.minimum(t[fut] / h, self.n_steps)
            j = np.minimum(np.floor(p).astype(np.int64), self.n_steps - 1)
            th = (p - j)[:, None]
            th2, th3 = th * th, th * th * th
            out[fut] = (
                (2 * th3 - 3 * th2 + 1) * X[j]
                + (th3 - 2 * th2 + th) * h * D[j]
                + (-2 * th3 + 3 * th2) * X[j + 1]
                + (th3 - th2) * h * D[j + 1]
            )
        return out[0] if scalar else out

    def grid_index(self, t: float) -> int:
        """Index of the forward grid time t (raises if t is not a grid time)."""
        p = t / self.step
        n = int(round(p))
        if abs(p - n) > _GRID_TOL or n < 0 or n > self.n_steps:
            raise ValueError(f"t={t} is not a grid time of this trajectory")
        return self.n_history + n


def _history_grid(history: HistoryFunction, step: float) -> np.ndarray:
    tau = history.tau
    if tau == 0:
        return np.array([0.0])
    n_back = int(math.floor(tau / step * (1 + 1e-12)))
    pts = -step * np.arange(n_back, -1, -1, dtype=float)
    pts = np.concatenate([[-tau], pts[pts > -tau + _GRID_TOL * step], history.breakpoints()])
    pts = np.unique(np.clip(pts, -tau, 0.0))
    # merge points closer than the grid tolerance
    keep = np.concatenate([[True], np.diff(pts) > _GRID_TOL * step])
    pts = pts[keep]
    pts[-1] = 0.0
    return pts


def _n_steps(horizon: float, step: float) -> int:
    if not (horizon > 0 and step > 0):
        raise ValueError("horizon and step must be positive")
    return int(math.ceil(horizon / step - 1e-9))


def _assemble(net, history, step, X, D, min_raw) -> Trajectory:
    hist_t = _history_grid(history, step)
    hist_x = history(hist_t)
    if hist_t.size > 1:
        hist_d = np.gradient(hist_x, hist_t, axis=0)
    else:
        hist_d = np.zeros_like(hist_x)
    n_steps = X.shape[0] - 1
    t_fwd = step * np.arange(n_steps + 1, dtype=float)
    return Trajectory(
        t_grid=np.concatenate([hist_t[:-1], t_fwd]),
        values=np.vstack([hist_x[:-1], X]),
        derivs=np.vstack([hist_d[:-1], D]),
        net=net,
        history=history,
        step=float(step),
        n_history=hist_t.size - 1,
        min_raw=float(min_raw),
    )


def _raise_for_status(status, stop, step, X):
    t = stop * step
    if status == _STATUS_NEGATIVE:
        raise IntegrationError(
            f"state component went negative ({X[stop].min():.3e}) at t={t:.6g}; step too large?",
            t=t,
            state=X[stop].copy(),
        )
    if status == _STATUS_NONFINITE:
        raise IntegrationError(f"non-finite state at t={t:.6g} (overflow)", t=t, state=X[stop].copy())


def integrate(
    net: ReactionNetwork,
    history: HistoryFunction,
    horizon: float,
    step: float,
    clamp_tol: float = CLAMP_TOL,
) -> Trajectory:
    """Integrate the delayed system from ``history`` up to ``horizon`` (rounded up to a step multiple)."""
    if history.n_species != net.n_species:
        raise ValueError(f"history has {history.n_species} components, network has {net.n_species} species")
    if abs(history.tau - net.max_delay) > 1e-12 * max(1.0, net.max_delay):
        raise ValueError(f"history domain [-{history.tau}, 0] does not match max delay {net.max_delay}")
    positive = net.delays[net.delays > 0]
    if positive.size and step > positive.min() * (1 + 1e-12):
        raise ValueError(f"step {step} exceeds the smallest positive delay {positive.min()}")
    n_steps = _n_steps(horizon, step)

    lags = net.delays / step
    snapped = np.round(lags)
    lags = np.where(np.abs(lags - snapped) <= _GRID_TOL, snapped, lags)
    if history.is_constant:
        hist_t = np.zeros(1)
        hist_x = history.value[None, :].astype(float)
    else:
        hist_t = np.ascontiguousarray(history.times, dtype=float)
        hist_x = np.ascontiguousarray(history.samples, dtype=float)

    X, D, min_raw, status, stop = _march_dde(
        np.ascontiguousarray(history(0.0), dtype=float),
        float(step),
        n_steps,
        lags,
        net.source_matrix,
        net.product_matrix,
        net.rates,
        hist_t,
        hist_x,
        float(clamp_tol),
    )
    _raise_for_status(status, stop, step, X)
    return _assemble(net, history, step, X, D, min_raw)


def integrate_ode(
    net: ReactionNetwork,
    x0,
    horizon: float,
    step: float,
    clamp_tol: float = CLAMP_TOL,
) -> Trajectory:
    """RK4 on the undelayed system (all delays dropped), written on the reaction-vector form."""
    x0 = np.asarray(x0, dtype=float)
    net = net.without_delays()
    history = HistoryFunction.constant(x0, 0.0)
    if x0.shape != (net.n_species,):
        raise ValueError(f"x0 must have length {net.n_species}")
    X, D, min_raw, status, stop = _march_ode(
        np.ascontiguousarray(x0),
        float(step),
        _n_steps(horizon, step),
        net.source_matrix,
        net.reaction_vectors,
        net.rates,
        float(clamp_tol),
    )
    _raise_for_status(status, stop, step, X)
    return _assemble(net, history, step, X, D, min_raw)


def segment(traj: Trajectory, t: float) -> HistoryFunction:
    """The state segment x_t(s) = x(t + s), s in [-tau, 0], sampled on the grid."""
    if t < -_GRID_TOL * traj.step or t > traj.horizon + _GRID_TOL * traj.step:
        raise ValueError(f"t={t} outside [0, {traj.horizon}]")
    idx = traj.grid_index(t)
    t = float(traj.t_grid[idx])
    tau = traj.tau
    if tau == 0:
        return HistoryFunction.constant(traj.values[idx], 0.0)
    lo = t - tau
    tol = _GRID_TOL * traj.step
    mask = (traj.t_grid >= lo - tol) & (traj.t_grid <= t + tol)
    times = traj.t_grid[mask]
    values = traj.values[mask]
    if times[0] > lo + tol:
        times = np.concatenate([[lo], times])
        values = np.vstack([np.maximum(traj(lo), 0.0), values])
    return HistoryFunction.sampled(times - t, values, tau)


def write_csv(traj: Trajectory, path) -> None:
    """Write ``t,x1..xN`` rows at grid resolution, 12 significant digits."""
    n = traj.net.n_species
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i + 1}" for i in range(n)])
        for t, row in zip(traj.t_grid, traj.values):
            w.writerow([f"{t:.12g}"] + [f"{v:.12g}" for v in row])


def read_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`write_csv`: (times, values)."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1:]
