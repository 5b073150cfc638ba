"""Empirical certification of a run: conservation, Lyapunov decrease, convergence.

Along a trajectory the window integrals over [t - tau_k, t] are differences
of one cumulative integral. Each grid interval contributes a Simpson panel
whose midpoint comes from the dense output, so neighbouring segments share
every panel but the two at the window ends.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .analysis import (
    LyapunovRecord,
    _require_complex_balanced,
    class_signature,
    entropy_like,
    _dissipation,
    equilibrium_in_class,
)
from .exceptions import IntegrationError
from .integrator import Trajectory, integrate
from .network import HistoryFunction, ReactionNetwork
from .stoichiometry import StoichiometryReport


@dataclass(frozen=True)
class Tolerances:
    """Pass/fail thresholds. ``drift`` is relative: |dc| <= drift * (1 + |c(theta)|)."""

    drift: float = 1e-6
    v_increase: float = 1e-8
    dissipation: float = 1e-10
    vdot_mismatch: float = 5e-4
    terminal: float = 1e-4
    clamp: float = 1e-12

    def replace(self, **overrides) -> "Tolerances":
        unknown = set(overrides) - set(asdict(self))
        if unknown:
            raise ValueError(f"unknown tolerance(s): {sorted(unknown)}")
        for name, value in overrides.items():
            if not value > 0:
                raise ValueError(f"tolerance {name} must be positive")
        return Tolerances(**{**asdict(self), **overrides})


# -- trajectory-wide series -----------------------------------------------------


class _WindowIntegrator:
    """Cumulative integrals of fn(x(s)) on the trajectory grid."""

    def __init__(self, traj: Trajectory, fn):
        self.traj = traj
        self.fn = fn
        t = traj.t_grid
        mids = traj(0.5 * (t[:-1] + t[1:]))
        y = fn(traj.values)
        panels = np.diff(t) / 6.0 * (y[:-1] + 4.0 * fn(mids) + y[1:])
        self.cumulative = np.concatenate([[0.0], np.cumsum(panels)])

    def at(self, s: np.ndarray) -> np.ndarray:
        t = self.traj.t_grid
        tol = 1e-9 * self.traj.step
        j = np.clip(np.searchsorted(t, s + tol, side="right") - 1, 0, t.size - 1)
        out = self.cumulative[j].copy()
        off = s - t[j] > tol
        if np.any(off):
            a, b = t[j[off]], s[off]
            ya = self.fn(self.traj.values[j[off]])
            ym = self.fn(self.traj(0.5 * (a + b)))
            yb = self.fn(self.traj(b))
            out[off] += (b - a) / 6.0 * (ya + 4.0 * ym + yb)
        return out

    def window(self, tau: float) -> np.ndarray:
        """Integral over [t - tau, t] for every forward grid time t."""
        t_fwd = self.traj.forward_times
        return self.cumulative[self.traj.n_history:] - self.at(t_fwd - tau)


def signature_series(traj: Trajectory, basis: np.ndarray) -> np.ndarray:
    """c_v(x_t) for every forward grid time, one column per basis vector."""
    net = traj.net
    vec = traj.forward_values.copy()
    for k, r in enumerate(net.reactions):
        if r.delay == 0:
            continue
        y = net.source_matrix[k]
        win = _WindowIntegrator(traj, lambda X, y=y: np.prod(X ** y, axis=1)).window(r.delay)
        vec += r.rate * win[:, None] * y[None, :]
    return vec @ np.asarray(basis).T


def lyapunov_series(traj: Trajectory, x_bar) -> np.ndarray:
    """V(x_t) for every forward grid time."""
    net = traj.net
    if np.any(traj.values <= 0):
        raise ValueError("trajectory touches the boundary; V is undefined there")
    x_bar = np.asarray(x_bar, dtype=float)
    log_bar = np.log(x_bar)
    v = np.sum(entropy_like(traj.forward_values, x_bar), axis=1)
    for k, r in enumerate(net.reactions):
        if r.delay == 0:
            continue
        y = net.source_matrix[k].astype(float)
        mono_bar = float(np.exp(y @ log_bar))
        fn = lambda X, y=y, m=mono_bar: entropy_like(np.exp(np.log(X) @ y), m)  # noqa: E731
        v += r.rate * _WindowIntegrator(traj, fn).window(r.delay)
    return v


def dissipation_series(traj: Trajectory, x_bar) -> np.ndarray:
    """Analytic V-dot at every forward grid time."""
    net = traj.net
    t = traj.forward_times
    past = np.stack([traj(np.maximum(t - d, -traj.tau)) for d in net.delays], axis=1)
    return _dissipation(net, x_bar, traj.forward_values, past)


@dataclass
class LyapunovSeries:
    t: np.ndarray
    v: np.ndarray
    v_dot_analytic: np.ndarray
    v_dot_numeric: np.ndarray

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i) -> LyapunovRecord:
        return LyapunovRecord(float(self.t[i]), float(self.v[i]), float(self.v_dot_analytic[i]), float(self.v_dot_numeric[i]))

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("t,V,Vdot_analytic,Vdot_numeric\n")
            for row in zip(self.t, self.v, self.v_dot_analytic, self.v_dot_numeric):
                fh.write(",".join(f"{x:.12g}" for x in row) + "\n")


def lyapunov_records(traj: Trajectory, x_bar) -> LyapunovSeries:
    """V, analytic V-dot and the finite difference of V on the forward grid.

    ``v_dot_numeric[n]`` is the forward difference over [t_n, t_{n+1}] (the
    backward difference on the last row).
    """
    v = lyapunov_series(traj, x_bar)
    vdot = dissipation_series(traj, x_bar)
    fd = np.empty_like(v)
    if v.size > 1:
        fd[:-1] = np.diff(v) / traj.step
        fd[-1] = fd[-2]
    else:
        fd[:] = 0.0
    return LyapunovSeries(traj.forward_times.copy(), v, vdot, fd)


# -- certification ----------------------------------------------------------------


@dataclass
class CertificationReport:
    verdict: str
    failed_checks: list[str]
    drift_max: float
    v_max_increase: float
    dissipation_max: float
    vdot_mismatch_max: float
    vdot_mismatch_constant: float
    terminal_error: float
    predicted_limit: list[float]
    terminal_state: list[float]
    xdot_terminal: float
    boundary_min: float
    min_before_clamp: float
    diagnostics: list[str] = field(default_factory=list)
    lyapunov: LyapunovSeries | None = field(default=None, repr=False)
    trajectory: Trajectory | None = field(default=None, repr=False)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("lyapunov", "trajectory")}
        return d


def certify_trajectory(
    net: ReactionNetwork,
    report: StoichiometryReport,
    x_bar,
    theta: HistoryFunction,
    horizon: float,
    step: float,
    tolerances: Tolerances | None = None,
) -> CertificationReport:
    """Integrate from theta and check the run against the stability theory.

    Checks: class-signature drift, monotone V, nonpositive dissipation,
    finite-difference vs analytic V-dot, and distance of x(T) to the
    predicted class equilibrium.
    """
    tol = tolerances or Tolerances()
    x_bar = _require_complex_balanced(net, x_bar)
    if theta.min_value() <= 0:
        raise ValueError("theta must be strictly positive")
    predicted = equilibrium_in_class(net, report, x_bar, theta)
    nan = float("nan")

    try:
        traj = integrate(net, theta, horizon, step, clamp_tol=tol.clamp)
    except IntegrationError as exc:
        return CertificationReport(
            verdict="fail",
            failed_checks=["nonnegativity"],
            drift_max=nan,
            v_max_increase=nan,
            dissipation_max=nan,
            vdot_mismatch_max=nan,
            vdot_mismatch_constant=nan,
            terminal_error=nan,
            predicted_limit=predicted.tolist(),
            terminal_state=[] if exc.state is None else exc.state.tolist(),
            xdot_terminal=nan,
            boundary_min=nan,
            min_before_clamp=nan if exc.state is None else float(exc.state.min()),
            diagnostics=[f"nonnegativity: {exc}"],
        )

    target = class_signature(net, report, theta).values
    if target.size:
        sig = signature_series(traj, report.s_perp_basis)
        drift = float(np.max(np.abs(sig - target) / (1.0 + np.abs(target))))
    else:
        drift = 0.0

    lyap = lyapunov_records(traj, x_bar)
    v_inc = float(np.max(np.diff(lyap.v))) if len(lyap) > 1 else 0.0
    diss_max = float(np.max(lyap.v_dot_analytic))
    if len(lyap) > 1:
        trapezoid = 0.5 * (lyap.v_dot_analytic[:-1] + lyap.v_dot_analytic[1:])
        mismatch = float(np.max(np.abs(lyap.v_dot_numeric[:-1] - trapezoid)))
    else:
        mismatch = 0.0
    terminal_error = float(np.linalg.norm(traj.terminal - predicted))

    checks = {
        "conservation": drift <= tol.drift,
        "lyapunov_monotone": v_inc <= tol.v_increase,
        "dissipation_sign": diss_max <= tol.dissipation,
        "dissipation_consistency": mismatch <= tol.vdot_mismatch,
        "terminal_error": terminal_error <= tol.terminal,
    }
    values = {
        "conservation": (drift, tol.drift),
        "lyapunov_monotone": (v_inc, tol.v_increase),
        "dissipation_sign": (diss_max, tol.dissipation),
        "dissipation_consistency": (mismatch, tol.vdot_mismatch),
        "terminal_error": (terminal_error, tol.terminal),
    }
    failed = [name for name, ok in checks.items() if not ok]
    diagnostics = [f"{name}: {values[name][0]:.3e} exceeds {values[name][1]:.1e}" for name in failed]
    return CertificationReport(
        verdict="pass" if not failed else "fail",
        failed_checks=failed,
        drift_max=drift,
        v_max_increase=v_inc,
        dissipation_max=diss_max,
        vdot_mismatch_max=mismatch,
        vdot_mismatch_constant=mismatch / traj.step,
        terminal_error=terminal_error,
        predicted_limit=predicted.tolist(),
        terminal_state=traj.terminal.tolist(),
        xdot_terminal=float(np.linalg.norm(traj.forward_derivs[-1])),
        boundary_min=float(traj.values.min()),
        min_before_clamp=float(traj.min_raw),
        diagnostics=diagnostics,
        lyapunov=lyap,
        trajectory=traj,
    )
