"""Hamiltonians and macroscopic conserved functionals.

The central object is A(kappa, q) = integral of q g_minus / (2 + gamma); its
graded pieces in powers of q, the kappa-difference combination, and the
kappa-integrated functional

    E(q) = integral_1^L kappa^{2s} V(kappa, q) dkappa  (+ certified tail)

with V(kappa, q) the at-least-quartic part of A(kappa,q) - A(kappa/2,q)/2.
Quadrature uses Gauss-Legendre nodes on geometric panels; because the panels
double, the kappa/2 evaluations of one panel reuse the nodes of the previous
panel, so each kappa requires a single Green's-function solve.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import TailNotConvergedError
from .lax import DEFAULT_ODE_TOL, default_green_grid, diagonal_greens_many, _diag_batch
from .spectral import (
    SpectralField,
    analyze,
    inner,
    multiply_many,
    next_pow2,
    resolvent_apply,
    resolvent_multiplier,
    synthesize,
)

QUARTIC_PAD = 4


# ---------------------------------------------------------------------------
# mass and Hamiltonians
# ---------------------------------------------------------------------------

def mass(q: SpectralField) -> float:
    """M(q) = (1/2) integral q^2."""
    return 0.5 * inner(q, q)


def hamiltonian_mkdv(q: SpectralField, sign: str = "defocusing") -> float:
    """H(q) = (1/2) integral (dq)^2 +/- q^4, defocusing carrying the plus."""
    if sign not in ("defocusing", "focusing"):
        raise ValueError(f"unknown sign {sign!r}")
    dq = q.derivative()
    grad_sq = inner(dq, dq)
    m = next_pow2(max(QUARTIC_PAD * (2 * q.n_modes + 1), 16))
    quartic = float(np.mean(synthesize(q, m) ** 4))
    s = 1.0 if sign == "defocusing" else -1.0
    return 0.5 * (grad_sq + s * quartic)


def h_kappa(q: SpectralField, kappa: float, **kw) -> float:
    """H_kappa(q) = 4 kappa^2 integral q^2 - 4 kappa^3 A(kappa, q)."""
    if kappa < 1:
        raise ValueError("h_kappa requires kappa >= 1")
    return 4.0 * kappa ** 2 * inner(q, q) - 4.0 * kappa ** 3 * a_full(q, kappa, **kw)


# ---------------------------------------------------------------------------
# A(kappa, q) and graded pieces
# ---------------------------------------------------------------------------

def a_full(q: SpectralField, kappa: float, *, ode_tol: float = DEFAULT_ODE_TOL,
           method: str = "auto") -> float:
    """A(kappa, q): grid quadrature of q g_minus / (2 + gamma)."""
    return a_full_many([q], kappa, ode_tol=ode_tol, method=method)[0]


def a_full_many(fields: list[SpectralField], kappa: float, *,
                ode_tol: float = DEFAULT_ODE_TOL,
                method: str = "auto") -> np.ndarray:
    diags = diagonal_greens_many(fields, kappa, ode_tol=ode_tol, method=method)
    out = np.empty(len(fields))
    for i, (q, dg) in enumerate(zip(fields, diags)):
        qv = synthesize(q, dg.n_grid)
        gam = dg.grid["gamma"]
        gm = dg.grid["g_minus"]
        floor = float(np.min(2.0 + gam))
        if floor <= 0.1:
            raise ValueError(
                f"2 + gamma reached {floor:.3f}; potential outside the "
                "trusted amplitude range")
        out[i] = float(np.mean(qv * gm / (2.0 + gam)))
    return out


def a2(q: SpectralField, kappa: float) -> float:
    """Quadratic piece sum_xi 2 kappa |qhat(xi)|^2 / (4 kappa^2 + xi^2)."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    xi = q.frequencies
    return float(np.sum(2.0 * kappa * np.abs(q.coeffs) ** 2
                        / (4.0 * kappa ** 2 + xi ** 2)))


def a4(q: SpectralField, kappa: float) -> float:
    """Quartic piece -2 kappa * integral q R0(2k)[q ((2k-d)^-1 q)((2k+d)^-1 q)]."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    rm = resolvent_apply(q, "minus", kappa)
    rp = resolvent_apply(q, "plus", kappa)
    n_out = 3 * q.n_modes
    cubic = multiply_many([q, rm, rp], pad=QUARTIC_PAD, n_out=n_out)
    smoothed = resolvent_apply(cubic, "r0", 2.0 * kappa)
    return -2.0 * kappa * inner(q, smoothed)


def a_ge6(q: SpectralField, kappa: float, *, ode_tol: float = DEFAULT_ODE_TOL,
          method: str = "auto") -> tuple[float, float]:
    """The two sextic-and-higher remainders of the expansion of A.

    First entry couples gamma with the quadratic part gamma^[2], second with
    the quartic-and-higher remainder gamma^[>=4]:

      A1 = -int kappa gamma/(2+gamma) {2 q R0(2k)[q g2] - q g2 R0(2k) q}
      A2 =  int 2 kappa /(2+gamma)    {2 q R0(2k)[q g4] - q g4 R0(2k) q}
    """
    diags = diagonal_greens_many([q], kappa, ode_tol=ode_tol, method=method)
    dg = diags[0]
    m = dg.n_grid
    qv = synthesize(q, m)
    gam = dg.grid["gamma"]
    r0 = resolvent_multiplier("r0", 2.0 * kappa)
    n_work = m // 2 - 1

    rm = resolvent_apply(q, "minus", kappa)
    rp = resolvent_apply(q, "plus", kappa)
    g2v = -2.0 * synthesize(rm, m) * synthesize(rp, m)
    g4v = gam - g2v
    r0qv = synthesize(r0.apply(q.truncated(n_work)), m)

    def bracket(gv):
        qg = analyze(qv * gv, n_work)
        return 2.0 * qv * synthesize(r0.apply(qg), m) - qv * gv * r0qv

    a1 = -kappa * float(np.mean(gam / (2.0 + gam) * bracket(g2v)))
    a2_ = 2.0 * kappa * float(np.mean(bracket(g4v) / (2.0 + gam)))
    return a1, a2_


def a_ge4(q: SpectralField, kappa: float, *, ode_tol: float = DEFAULT_ODE_TOL,
          method: str = "auto") -> float:
    """A - A^[2], computed from a single Green's-function solve."""
    return a_full(q, kappa, ode_tol=ode_tol, method=method) - a2(q, kappa)


def script_a(q: SpectralField, kappa: float, **kw) -> float:
    """A(kappa, q) - A(kappa/2, q)/2 (requires kappa >= 1)."""
    if kappa < 1:
        raise ValueError("script_a requires kappa >= 1")
    return a_full(q, kappa, **kw) - 0.5 * a_full(q, kappa / 2.0, **kw)


def v_remainder(q: SpectralField, kappa: float, **kw) -> float:
    """V(kappa, q) = A^[>=4](kappa, q) - A^[>=4](kappa/2, q)/2."""
    if kappa < 1:
        raise ValueError("v_remainder requires kappa >= 1")
    return a_ge4(q, kappa, **kw) - 0.5 * a_ge4(q, kappa / 2.0, **kw)


# ---------------------------------------------------------------------------
# kappa quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KappaQuadrature:
    """Panel rule for integral_1^L kappa^{2s} V dkappa with a power-law tail.

    Geometric panels [2^j, 2^{j+1}] capped at ``l_max`` carry
    ``nodes_per_panel`` Gauss-Legendre nodes each.  The tail beyond L is
    modelled as tail_constant * kappa^{2s-3}; when ``tail_constant`` is None
    it is calibrated from the integrand on the last panel.  ``tol`` is the
    absolute tail tolerance above which evaluation errors out.
    """

    l_max: float = 256.0
    nodes_per_panel: int = 8
    tol: float = 5e-3
    tail_constant: float | None = None

    def __post_init__(self):
        if self.l_max <= 1:
            raise ValueError("l_max must exceed 1")
        if self.nodes_per_panel < 2:
            raise ValueError("need at least 2 nodes per panel")

    def panel_edges(self) -> list[tuple[float, float]]:
        edges = []
        lo = 1.0
        while lo < self.l_max:
            hi = min(2.0 * lo, self.l_max)
            edges.append((lo, hi))
            lo = hi
        return edges

    def nodes_and_weights(self) -> tuple[np.ndarray, np.ndarray]:
        """All nodes/weights in ascending kappa order."""
        gx, gw = np.polynomial.legendre.leggauss(self.nodes_per_panel)
        ks, ws = [], []
        for lo, hi in self.panel_edges():
            half = 0.5 * (hi - lo)
            mid = 0.5 * (hi + lo)
            ks.append(mid + half * gx)
            ws.append(half * gw)
        return np.concatenate(ks), np.concatenate(ws)

    def tail_bound(self, s: float, last_panel_vmax: float) -> float:
        """Certified tail integral_{L}^{inf} kappa^{2s} * c kappa^{-3} dkappa."""
        if not 0.5 < s < 1.0:
            raise ValueError("tail model requires 1/2 < s < 1")
        c = self.tail_constant
        if c is None:
            c = last_panel_vmax
        return c * self.l_max ** (2.0 * s - 2.0) / (2.0 - 2.0 * s)


def _v_nodes_batch(fields: list[SpectralField], kappas: np.ndarray, s: float,
                   ode_tol: float, method: str) -> np.ndarray:
    """Matrix V[i, j] = V(kappa_j, q_i) over unique solve points.

    A^[>=4] is evaluated at kappa and kappa/2; doubling panels make the
    halves of one panel coincide with the nodes of the panel below, and the
    remaining fresh points lie in [1/2, 1).
    """
    solve_pts = sorted(set(float(k) for k in kappas)
                       | set(float(k) / 2.0 for k in kappas), reverse=True)
    table = {}
    coeff_mat = np.stack([f.coeffs for f in fields])
    n_modes = fields[0].n_modes
    n_grid = default_green_grid(n_modes, max(f.grid_factor for f in fields))
    qv = None
    warm = None
    for kp in solve_pts:
        # descending kappa sweep: gamma varies smoothly in kappa, so each
        # solve warm-starts the next (harder, lower-kappa) one
        gamma, g_plus, g_minus, methods, mono, closure = _diag_batch(
            coeff_mat, n_modes, kp, ode_tol, method, n_grid, gamma0=warm)
        if method != "floquet":
            warm = gamma
        if qv is None:
            qv = np.stack([synthesize(f, n_grid) for f in fields])
        afull = np.mean(qv * g_minus / (2.0 + gamma), axis=1)
        xi = 2.0 * np.pi * np.arange(-n_modes, n_modes + 1)
        a2_vals = np.sum(2.0 * kp * np.abs(coeff_mat) ** 2
                         / (4.0 * kp ** 2 + xi ** 2), axis=1)
        table[kp] = afull - a2_vals
    out = np.empty((len(fields), len(kappas)))
    for j, kp in enumerate(kappas):
        out[:, j] = table[float(kp)] - 0.5 * table[float(kp) / 2.0]
    return out


def e_functional_with_tail(q: SpectralField, quad: KappaQuadrature, s: float,
                           *, ode_tol: float = DEFAULT_ODE_TOL,
                           method: str = "auto") -> tuple[float, float]:
    vals, tails = e_functional_many([q], quad, s, ode_tol=ode_tol, method=method)
    return float(vals[0]), float(tails[0])


def e_functional_many(fields: list[SpectralField], quad: KappaQuadrature,
                      s: float, *, ode_tol: float = DEFAULT_ODE_TOL,
                      method: str = "auto") -> tuple[np.ndarray, np.ndarray]:
    """Batched E_L(q) = integral_1^L kappa^{2s} V dkappa plus tail estimates."""
    if not 0.5 < s < 1.0:
        raise ValueError("e_functional requires 1/2 < s < 1")
    nontrivial = [i for i, f in enumerate(fields) if f.l2_norm() > 0]
    values = np.zeros(len(fields))
    tails = np.zeros(len(fields))
    if not nontrivial:
        return values, tails
    sub = [fields[i] for i in nontrivial]
    kappas, weights = quad.nodes_and_weights()
    vmat = _v_nodes_batch(sub, kappas, s, ode_tol, method)
    integrand = kappas ** (2.0 * s) * vmat
    values[nontrivial] = integrand @ weights
    n_last = quad.nodes_per_panel
    vmax_last = np.max(np.abs(vmat[:, -n_last:]) * kappas[-n_last:] ** 3, axis=1)
    tails[nontrivial] = [quad.tail_bound(s, float(v)) for v in vmax_last]
    return values, tails


def e_functional(q: SpectralField, quad: KappaQuadrature, s: float,
                 **kw) -> float:
    """E(q) with the certified tail enforced below quad.tol."""
    value, tail = e_functional_with_tail(q, quad, s, **kw)
    if tail > quad.tol:
        raise TailNotConvergedError(tail, quad.tol, quad.l_max)
    return value


def quadratic_energy(q: SpectralField, table) -> float:
    """(1/2) || m_s(-i d) q ||_{L2}^2 from a multiplier table."""
    m2 = table.m2_for_field(q)
    return 0.5 * float(np.sum(m2 * np.abs(q.coeffs) ** 2))


def e_s_total(q: SpectralField, s: float, quad: KappaQuadrature, *,
              table=None, ode_tol: float = DEFAULT_ODE_TOL,
              method: str = "auto") -> float:
    """Full conserved quantity (1/2)||m_s q||^2 + E(q)."""
    if table is None:
        from .measures import multiplier_table
        table = multiplier_table(s, q.n_modes)
    return quadratic_energy(q, table) + e_functional(q, quad, s,
                                                     ode_tol=ode_tol,
                                                     method=method)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FunctionalReport:
    """Snapshot of the standard functionals of one field."""

    mass: float
    hamiltonian: float
    a_probe: dict[float, float]
    e_s: float
    e_tail: float
    s: float
    quad_l_max: float
    quad_nodes_per_panel: int

    def check_finite(self) -> bool:
        vals = [self.mass, self.hamiltonian, self.e_s, self.e_tail,
                *self.a_probe.values()]
        return bool(np.all(np.isfinite(vals)))

    def to_json_dict(self) -> dict:
        return {
            "mass": repr(self.mass),
            "hamiltonian_mkdv": repr(self.hamiltonian),
            "a_probe": {repr(k): repr(v) for k, v in sorted(self.a_probe.items())},
            "e_s": repr(self.e_s),
            "e_tail": repr(self.e_tail),
            "s": repr(self.s),
            "quad": {"l_max": repr(self.quad_l_max),
                     "nodes_per_panel": self.quad_nodes_per_panel},
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=1,
                                         sort_keys=True) + "\n")

    def csv_row(self) -> list:
        row = [self.mass, self.hamiltonian]
        row += [self.a_probe[k] for k in sorted(self.a_probe)]
        row += [self.e_s, self.e_tail]
        return row


def functional_report(q: SpectralField, s: float = 0.75,
                      probe_kappas=(1.0, 2.0),
                      quad: KappaQuadrature | None = None,
                      sign: str = "defocusing", **kw) -> FunctionalReport:
    quad = quad or KappaQuadrature()
    e_val, e_tail = e_functional_with_tail(q, quad, s, **kw)
    return FunctionalReport(
        mass=mass(q),
        hamiltonian=hamiltonian_mkdv(q, sign),
        a_probe={float(k): a_full(q, float(k), **kw) for k in probe_kappas},
        e_s=e_val,
        e_tail=e_tail,
        s=s,
        quad_l_max=quad.l_max,
        quad_nodes_per_panel=quad.nodes_per_panel,
    )


def write_sweep_csv(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v
                             for v in row])
