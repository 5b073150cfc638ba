"""Stoichiometric subspace, reaction-graph structure, complex balance and equilibria.

All equilibrium questions here ignore delays: a constant function solves the
delayed system exactly when it solves the undelayed one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .exceptions import ConvergenceError, NotComplexBalancedError
from .network import Complex, ReactionNetwork

RANK_RTOL = 1e-10
NEWTON_MAX_ITER = 60
NEWTON_ABS_TOL = 1e-12
NEWTON_REL_TOL = 1e-9
CB_REL_TOL = 1e-9
MEMBERSHIP_TOL = 1e-9
# below this an iterate is treated as having left the positive orthant
MIN_LOG_STATE = np.log(1e-250)


@dataclass
class StoichiometryReport:
    s_basis: np.ndarray  # (s_dim, N), orthonormal rows
    s_perp_basis: np.ndarray  # (N - s_dim, N), orthonormal rows
    s_dim: int
    n_complexes: int
    n_linkage_classes: int
    deficiency: int
    weakly_reversible: bool

    def to_dict(self) -> dict:
        return {
            "s_basis": self.s_basis.tolist(),
            "s_perp_basis": self.s_perp_basis.tolist(),
            "s_dim": self.s_dim,
            "n_complexes": self.n_complexes,
            "n_linkage_classes": self.n_linkage_classes,
            "deficiency": self.deficiency,
            "weakly_reversible": self.weakly_reversible,
        }


@dataclass
class EquilibriumReport:
    point: np.ndarray
    residual: float
    complex_balanced: bool
    per_complex_flux: dict[Complex, tuple[float, float]] = field(default_factory=dict)

    def violations(self, rel_tol: float = CB_REL_TOL) -> list[Complex]:
        """Complexes whose inflow and outflow disagree."""
        return [
            c
            for c, (inflow, outflow) in self.per_complex_flux.items()
            if abs(inflow - outflow) > rel_tol * max(inflow, outflow, 1.0)
        ]

    def to_dict(self, species=None) -> dict:
        def name(c):
            return c.format(species) if species is not None else str(list(c.coeffs))

        return {
            "point": self.point.tolist(),
            "residual": self.residual,
            "complex_balanced": self.complex_balanced,
            "per_complex_flux": {
                name(c): {"inflow": inflow, "outflow": outflow}
                for c, (inflow, outflow) in self.per_complex_flux.items()
            },
        }


def _canonical_sign(rows: np.ndarray) -> np.ndarray:
    # make the largest-magnitude entry of each basis vector positive
    rows = np.where(np.abs(rows) < 1e-15, 0.0, rows)
    for r in rows:
        if r[np.argmax(np.abs(r))] < 0:
            r *= -1
    return rows


def subspace_bases(vectors: np.ndarray, rtol: float = RANK_RTOL) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal bases (rows) for span(vectors) and its orthogonal complement."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    n = vectors.shape[1]
    _, s, vt = np.linalg.svd(vectors, full_matrices=True)
    rank = int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0
    return _canonical_sign(vt[:rank]), _canonical_sign(vt[rank:n])


def reaction_graph(net: ReactionNetwork) -> nx.DiGraph:
    g = nx.DiGraph()
    g.add_nodes_from(range(len(net.complexes)))
    g.add_edges_from(zip(net.source_index.tolist(), net.product_index.tolist()))
    return g


def stoichiometric_subspace(net: ReactionNetwork) -> StoichiometryReport:
    s_basis, s_perp = subspace_bases(net.reaction_vectors)
    g = reaction_graph(net)
    linkage = list(nx.weakly_connected_components(g))
    # weakly reversible iff every linkage class is a single strong component
    weakly_reversible = nx.number_strongly_connected_components(g) == len(linkage)
    n_complexes = len(net.complexes)
    s_dim = s_basis.shape[0]
    return StoichiometryReport(
        s_basis=s_basis,
        s_perp_basis=s_perp,
        s_dim=s_dim,
        n_complexes=n_complexes,
        n_linkage_classes=len(linkage),
        deficiency=n_complexes - len(linkage) - s_dim,
        weakly_reversible=weakly_reversible,
    )


def equilibrium_rhs(net: ReactionNetwork, x) -> np.ndarray:
    """sum_k kappa_k x^{y_k} (y_k' - y_k)."""
    return (net.rates * net.monomials(x)) @ net.reaction_vectors


def _flux_scale(net: ReactionNetwork, x) -> float:
    fluxes = net.rates * net.monomials(x)
    return float(fluxes @ np.linalg.norm(net.reaction_vectors, axis=1))


def is_complex_balanced(net: ReactionNetwork, x, rel_tol: float = CB_REL_TOL) -> EquilibriumReport:
    """Per-complex inflow/outflow balance at a positive state ``x``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (net.n_species,):
        raise ValueError(f"expected a state of length {net.n_species}")
    if np.any(x <= 0) or not np.all(np.isfinite(x)):
        raise ValueError("complex balance is only defined at strictly positive states")
    fluxes = net.rates * net.monomials(x)
    n_c = len(net.complexes)
    outflow = np.bincount(net.source_index, weights=fluxes, minlength=n_c)
    inflow = np.bincount(net.product_index, weights=fluxes, minlength=n_c)
    per_complex = {c: (float(inflow[i]), float(outflow[i])) for i, c in enumerate(net.complexes)}
    balanced = bool(np.all(np.abs(inflow - outflow) <= rel_tol * np.maximum(np.maximum(inflow, outflow), 1.0)))
    return EquilibriumReport(
        point=x.copy(),
        residual=float(np.linalg.norm(equilibrium_rhs(net, x))),
        complex_balanced=balanced,
        per_complex_flux=per_complex,
    )


def find_equilibrium(
    net: ReactionNetwork,
    guess,
    max_iter: int = NEWTON_MAX_ITER,
    abs_tol: float = NEWTON_ABS_TOL,
    rel_tol: float = NEWTON_REL_TOL,
) -> EquilibriumReport:
    """Damped Gauss-Newton on z = Ln x for a positive equilibrium.

    The Jacobian is singular whenever conservation laws exist, so steps are
    minimum-norm least-squares solutions. Convergence needs the residual
    below ``abs_tol * max(1, flux scale)`` and below ``rel_tol * flux scale``;
    the relative test stops runs that only shrink the residual by draining
    species towards zero.
    """
    z = np.log(np.asarray(guess, dtype=float))
    if z.shape != (net.n_species,) or not np.all(np.isfinite(z)):
        raise ValueError("guess must be a strictly positive vector of the species length")
    gamma = net.reaction_vectors
    src = net.source_matrix.astype(float)

    def residual(z):
        return equilibrium_rhs(net, np.exp(z))

    def converged(z, r):
        scale = _flux_scale(net, np.exp(z))
        return r <= abs_tol * max(1.0, scale) and r <= rel_tol * scale

    f = residual(z)
    norm = float(np.linalg.norm(f))
    for _ in range(max_iter + 1):
        if converged(z, norm):
            return is_complex_balanced(net, np.exp(z))
        fluxes = net.rates * net.monomials(np.exp(z))
        jac = gamma.T @ (fluxes[:, None] * src)
        step = np.linalg.lstsq(jac, -f, rcond=None)[0]
        lam = 1.0
        while lam > 1e-10:
            z_new = z + lam * step
            f_new = residual(z_new)
            norm_new = float(np.linalg.norm(f_new))
            if np.all(np.isfinite(f_new)) and norm_new < norm:
                break
            lam *= 0.5
        else:
            break
        z, f, norm = z_new, f_new, norm_new
        if np.any(z < MIN_LOG_STATE):
            raise ConvergenceError(
                "Newton iterate left the positive orthant (no positive equilibrium near the guess?)",
                last_iterate=np.exp(z),
                residual=norm,
            )
    raise ConvergenceError(
        f"Newton iteration did not converge in {max_iter} iterations (residual {norm:.3e})",
        last_iterate=np.exp(z),
        residual=norm,
    )


def equilibrium_set_membership(
    net: ReactionNetwork,
    x_bar,
    x_tilde,
    report: StoichiometryReport | None = None,
    tol: float = MEMBERSHIP_TOL,
) -> bool:
    """Whether x_tilde lies in the positive equilibrium set through the complex balanced x_bar."""
    if not is_complex_balanced(net, x_bar).complex_balanced:
        raise NotComplexBalancedError("x_bar is not complex balanced")
    x_tilde = np.asarray(x_tilde, dtype=float)
    if np.any(x_tilde <= 0):
        raise ValueError("x_tilde must be strictly positive")
    report = report or stoichiometric_subspace(net)
    diff = np.log(x_tilde) - np.log(np.asarray(x_bar, dtype=float))
    return bool(np.linalg.norm(report.s_basis @ diff) <= tol)
