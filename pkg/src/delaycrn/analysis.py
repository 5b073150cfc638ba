"""Conserved functionals, delayed compatibility classes and the Lyapunov-Krasovskii functional.

Functionals act on history segments psi on [-tau, 0]. Integrals over
[-tau_k, 0] use a closed form for constant segments and composite Simpson
otherwise (at least ``SIMPSON_NODES`` nodes, always including the segment's
sample breakpoints).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .exceptions import ConvergenceError, NotComplexBalancedError
from .network import HistoryFunction, ReactionNetwork
from .stoichiometry import StoichiometryReport, is_complex_balanced

SIMPSON_NODES = 201
CLASS_TOL = 1e-6
NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 60
GAMMA_RESOLUTION = 1e-3


@dataclass
class ClassSignature:
    """Values c_v(theta) for each vector v of an orthonormal basis of S-perp."""

    basis: np.ndarray
    values: np.ndarray

    def __len__(self):
        return len(self.values)


@dataclass
class LyapunovRecord:
    t: float
    v_value: float
    v_dot_analytic: float
    v_dot_numeric: float


# -- quadrature ---------------------------------------------------------------


def _simpson_nodes(psi: HistoryFunction, lo: float, n_nodes: int) -> np.ndarray:
    """Sorted nodes on [lo, 0]: breakpoints refined so every panel is quadratic-exact."""
    brk = psi.breakpoints()
    pts = np.unique(np.concatenate([[lo, 0.0], brk[(brk > lo) & (brk < 0)]]))
    n_int = pts.size - 1
    sub = max(1, math.ceil((n_nodes - 1) / (2 * n_int)))
    # each of the n_int * sub panels gets a midpoint -> 2 * n_int * sub + 1 nodes
    frac = np.linspace(0.0, 1.0, 2 * sub + 1)[:-1]
    nodes = (pts[:-1, None] + np.diff(pts)[:, None] * frac[None, :]).ravel()
    return np.append(nodes, 0.0)


def _simpson(y: np.ndarray, nodes: np.ndarray) -> float:
    # panels are (nodes[2j], nodes[2j+1], nodes[2j+2]) with the middle node centred
    a, b = nodes[0:-1:2], nodes[2::2]
    return float(np.sum((b - a) / 6.0 * (y[0:-1:2] + 4.0 * y[1::2] + y[2::2])))


def history_integral(psi: HistoryFunction, tau_k: float, fn, n_nodes: int = SIMPSON_NODES) -> float:
    """Integral of fn(psi(s)) over [-tau_k, 0]; ``fn`` maps (n, N) states to (n,) values."""
    if tau_k == 0:
        return 0.0
    if psi.is_constant:
        return float(tau_k * fn(psi.value[None, :])[0])
    nodes = _simpson_nodes(psi, -tau_k, n_nodes)
    return _simpson(fn(psi(nodes)), nodes)


def _check_dims(net: ReactionNetwork, psi: HistoryFunction):
    if psi.n_species != net.n_species:
        raise ValueError(f"history has {psi.n_species} components, network has {net.n_species} species")
    if psi.tau + 1e-12 * max(1.0, psi.tau) < net.max_delay:
        raise ValueError(f"history domain [-{psi.tau}, 0] is shorter than the max delay {net.max_delay}")


# -- conserved functionals and classes ------------------------------------------


def _source_integrals(net: ReactionNetwork, psi: HistoryFunction, n_nodes: int) -> np.ndarray:
    """kappa_k * integral of psi^{y_k} over [-tau_k, 0], one entry per reaction."""
    out = np.zeros(net.n_reactions)
    for k, r in enumerate(net.reactions):
        y = net.source_matrix[k]
        out[k] = r.rate * history_integral(psi, r.delay, lambda X, y=y: np.prod(X ** y, axis=1), n_nodes)
    return out


def _conserved_vector(net: ReactionNetwork, psi: HistoryFunction, n_nodes: int) -> np.ndarray:
    """psi(0) + sum_k kappa_k (int psi^{y_k}) y_k; c_v(psi) is its dot product with v."""
    _check_dims(net, psi)
    return psi(0.0) + _source_integrals(net, psi, n_nodes) @ net.source_matrix


def conserved_functional(net: ReactionNetwork, v, psi: HistoryFunction, n_nodes: int = SIMPSON_NODES) -> float:
    v = np.asarray(v, dtype=float)
    if v.shape != (net.n_species,):
        raise ValueError(f"v must have length {net.n_species}")
    return float(v @ _conserved_vector(net, psi, n_nodes))


def class_signature(
    net: ReactionNetwork, report: StoichiometryReport, theta: HistoryFunction, n_nodes: int = SIMPSON_NODES
) -> ClassSignature:
    basis = report.s_perp_basis
    values = basis @ _conserved_vector(net, theta, n_nodes) if len(basis) else np.zeros(0)
    return ClassSignature(basis=basis, values=np.asarray(values, dtype=float))


def class_membership(
    net: ReactionNetwork,
    report: StoichiometryReport,
    theta: HistoryFunction,
    psi: HistoryFunction,
    tol: float = CLASS_TOL,
    n_nodes: int = SIMPSON_NODES,
) -> bool:
    """Whether psi lies in the delayed compatibility class of theta (relative tolerance)."""
    a = class_signature(net, report, theta, n_nodes).values
    b = class_signature(net, report, psi, n_nodes).values
    return bool(np.all(np.abs(a - b) <= tol * (1.0 + np.abs(a))))


def constant_conserved_vector(net: ReactionNetwork, x) -> np.ndarray:
    """Closed form of the conserved vector for the constant segment psi = x."""
    x = np.asarray(x, dtype=float)
    weights = net.rates * net.delays * net.monomials(x)
    return x + weights @ net.source_matrix


def _require_complex_balanced(net, x_bar):
    x_bar = np.asarray(x_bar, dtype=float)
    if x_bar.shape != (net.n_species,) or np.any(x_bar <= 0):
        raise ValueError("x_bar must be a strictly positive state")
    if not is_complex_balanced(net, x_bar).complex_balanced:
        raise NotComplexBalancedError(f"x_bar={x_bar.tolist()} is not complex balanced")
    return x_bar


def equilibrium_in_class(
    net: ReactionNetwork,
    report: StoichiometryReport,
    x_bar,
    theta: HistoryFunction,
    lam0=None,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
    n_nodes: int = SIMPSON_NODES,
) -> np.ndarray:
    """The positive equilibrium sharing theta's delayed class.

    Searches x = exp(Ln x_bar + B^T lam) over the equilibrium set (B the
    S-perp basis rows), so the unknowns are the dim(S-perp) coordinates lam.
    The Jacobian B (diag(x) + sum_k kappa_k tau_k x^{y_k} y_k y_k^T) B^T is
    symmetric positive definite, and Newton is damped by step halving.
    """
    x_bar = _require_complex_balanced(net, x_bar)
    if theta.min_value() <= 0:
        raise ValueError("theta must be strictly positive")
    B = report.s_perp_basis
    if B.shape[0] == 0:
        return x_bar.copy()
    target = class_signature(net, report, theta, n_nodes).values
    log_bar = np.log(x_bar)
    Y = net.source_matrix.astype(float)
    w_rates = net.rates * net.delays

    def point(lam):
        return np.exp(log_bar + lam @ B)

    def residual(lam):
        return B @ constant_conserved_vector(net, point(lam)) - target

    lam = np.zeros(B.shape[0]) if lam0 is None else np.asarray(lam0, dtype=float).copy()
    g = residual(lam)
    norm = float(np.linalg.norm(g))
    scale = max(1.0, float(np.linalg.norm(target)))
    for _ in range(max_iter):
        if norm <= tol * scale:
            return point(lam)
        x = point(lam)
        w = w_rates * net.monomials(x)
        hess = np.diag(x) + (Y.T * w) @ Y
        jac = B @ hess @ B.T
        step = np.linalg.solve(jac, -g)
        alpha = 1.0
        while alpha > 1e-12:
            lam_new = lam + alpha * step
            g_new = residual(lam_new)
            norm_new = float(np.linalg.norm(g_new))
            if np.isfinite(norm_new) and norm_new < norm:
                break
            alpha *= 0.5
        else:
            break
        lam, g, norm = lam_new, g_new, norm_new
    if norm <= tol * scale:
        return point(lam)
    raise ConvergenceError(
        f"class equilibrium Newton did not converge (residual {norm:.3e})",
        last_iterate=point(lam),
        residual=norm,
    )


# -- Lyapunov-Krasovskii functional ---------------------------------------------


def entropy_like(x, b):
    """x (ln x - ln b - 1) + b, elementwise; nonnegative with its only zero at x = b."""
    x = np.asarray(x, dtype=float)
    return x * (np.log(x) - np.log(b) - 1.0) + b


def _check_positive(psi: HistoryFunction):
    if psi.min_value() <= 0:
        raise ValueError("the Lyapunov-Krasovskii functional needs a strictly positive segment")


def lk_functional(net: ReactionNetwork, x_bar, psi: HistoryFunction, n_nodes: int = SIMPSON_NODES) -> float:
    """V(psi) for the reference equilibrium x_bar."""
    _check_dims(net, psi)
    _check_positive(psi)
    x_bar = np.asarray(x_bar, dtype=float)
    value = float(np.sum(entropy_like(psi(0.0), x_bar)))
    log_bar = np.log(x_bar)
    for k, r in enumerate(net.reactions):
        y = net.source_matrix[k].astype(float)
        mono_bar = math.exp(y @ log_bar)

        def integrand(X, y=y, mono_bar=mono_bar):
            return entropy_like(np.exp(np.log(X) @ y), mono_bar)

        value += r.rate * history_integral(psi, r.delay, integrand, n_nodes)
    return value


def _dissipation(net: ReactionNetwork, x_bar, now, past) -> np.ndarray:
    """Exact V-dot from x(t) (``now``, shape (..., N)) and x(t - tau_k) (``past``, shape (..., M, N))."""
    log_bar = np.log(np.asarray(x_bar, dtype=float))
    Y = net.source_matrix.astype(float)
    Yp = net.product_matrix.astype(float)
    mono_bar = np.exp(Y @ log_bar)
    l_now = np.log(now) - log_bar  # Ln(x(t)/x_bar)
    l_past = np.log(past) - log_bar  # Ln(x(t - tau_k)/x_bar)
    a_past = np.sum(l_past * Y, axis=-1)  # ln((x(t-tau_k)/x_bar)^{y_k})
    a_prod = l_now @ Yp.T  # ln((x(t)/x_bar)^{y_k'})
    a_now = l_now @ Y.T  # ln((x(t)/x_bar)^{y_k})
    r_past = np.exp(a_past)
    weights = net.rates * mono_bar
    return np.sum(weights * (r_past * (a_prod - a_past) + r_past - np.exp(a_now)), axis=-1)


def lk_dissipation(net: ReactionNetwork, x_bar, psi: HistoryFunction) -> float:
    """Directional derivative of V along solutions, evaluated on the segment psi."""
    _check_dims(net, psi)
    _check_positive(psi)
    now = psi(0.0)
    past = psi(-net.delays)
    return float(_dissipation(net, x_bar, now, past))


def exp_inequality_check(a, b, slack: float = 1e-12):
    """e^a (b - a) <= e^b - e^a (+ slack); works elementwise on arrays.

    Evaluated as e^a ((b - a) - expm1(b - a)) <= slack, the same inequality
    without the cancellation in e^b - e^a.
    """
    a = np.asarray(a, dtype=float)
    d = np.asarray(b, dtype=float) - a
    ok = np.exp(a) * (d - np.expm1(d)) <= slack
    return bool(ok) if ok.ndim == 0 else ok


# -- the constant in the logarithmic lower bound ----------------------------------


def _xlogx_excess(u):
    """(1 + u) ln(1 + u) - u, with a series near u = 0."""
    u = np.asarray(u, dtype=float)
    small = np.abs(u) < 1e-3
    out = np.empty_like(u)
    us = u[small]
    out[small] = us**2 / 2 - us**3 / 6 + us**4 / 12 - us**5 / 20 + us**6 / 30
    ub = u[~small]
    with np.errstate(divide="ignore", invalid="ignore"):
        out[~small] = np.where(ub <= -1.0, 1.0, (1 + ub) * np.log1p(np.maximum(ub, -1.0)) - ub)
    return out


def lower_bound_ratio(x, b: float):
    """h(x) = f(x)/g(x) with f = x(ln x - ln b - 1) + b, g = ln(1 + (x - b)^2).

    Continuous on [0, inf): h(b) = 1/(2b) and h(0) = b / ln(1 + b^2).
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    u = (x - b) / b
    f = b * _xlogx_excess(u)
    g = np.log1p((x - b) ** 2)
    out = np.empty_like(x)
    near = (np.abs(u) < 1e-4) & (np.abs(x - b) < 1e-4)
    # h = b phi(u) / ln(1 + b^2 u^2), phi(u) = u^2/2 - u^3/6 + ..., so h -> (1/(2b)) (1 - u/3 + ...)
    un = u[near]
    out[near] = (1.0 / (2 * b)) * (1 - un / 3 + un**2 / 6 + b**2 * un**2 / 2)
    out[~near] = f[~near] / g[~near]
    return out[0] if scalar else out


def lower_bound_constant(b: float, resolution: float = GAMMA_RESOLUTION) -> float:
    """min over x >= 0 of h(x) for one species with equilibrium value b.

    Grid search with spacing ``resolution`` over [0, T], T the first grid
    point past the minimiser of f with h(T) > h(0), then golden-section
    refinement around the best grid point.
    """
    if not b > 0:
        raise ValueError("b must be positive")
    h0 = b / math.log1p(b * b)
    chunk = 100_000
    best_x, best_h = 0.0, h0
    start = 0
    while True:
        xs = resolution * np.arange(start, start + chunk, dtype=float)
        hs = lower_bound_ratio(xs, b)
        i = int(np.argmin(hs))
        if hs[i] < best_h:
            best_x, best_h = float(xs[i]), float(hs[i])
        beyond = np.nonzero((xs > b) & (hs > h0))[0]
        if beyond.size:
            break
        start += chunk
    lo, hi = max(0.0, best_x - resolution), best_x + resolution
    res = None
    if lo > 0:
        try:
            res = minimize_scalar(
                lambda t: float(lower_bound_ratio(t, b)), bracket=(lo, best_x, hi), method="golden", tol=1e-12
            )
        except ValueError:
            res = None
    if res is None or not (lo <= res.x <= hi):
        res = minimize_scalar(
            lambda t: float(lower_bound_ratio(t, b)), bounds=(lo, hi), method="bounded", options={"xatol": 1e-12}
        )
    return float(min(best_h, res.fun))


def lk_lower_bound_gamma(net: ReactionNetwork, x_bar, resolution: float = GAMMA_RESOLUTION) -> float:
    """gamma with V(psi) >= gamma ln(1 + |psi(0) - x_bar|^2) for every positive psi."""
    x_bar = np.asarray(x_bar, dtype=float)
    if x_bar.shape != (net.n_species,) or np.any(x_bar <= 0):
        raise ValueError("x_bar must be a strictly positive state")
    return min(lower_bound_constant(float(b), resolution) for b in x_bar)
