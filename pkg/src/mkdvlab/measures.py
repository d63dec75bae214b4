"""Gaussian base measures, importance weights, and measure diagnostics.

The base measure draws independent complex Gaussians per Fourier mode with
per-mode variance 1/(1 + m_s(xi)^2), where the multiplier

    m_s(xi)^2 = integral_1^inf kappa^{2s-1} w(xi, kappa) dkappa,
    w(xi, kappa) = 3 kappa^2 xi^2 / ((kappa^2+xi^2)(4 kappa^2+xi^2)),

is comparable to <xi>^{2s}.  The weighted measure multiplies in the density
F(q) = 1{||q||^2 <= R} exp(-E(q)) and is realized by self-normalized
importance sampling; no Markov chain is involved.

Sampling is reproducible by construction: each draw owns a counter-based
Philox stream keyed by (master seed, draw index), and the per-mode layout
within a draw is fixed, so ensembles do not depend on scheduling or worker
count.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.integrate import quad as _scipy_quad

from .exceptions import QuadratureError
from .fieldio import write_pfc
from .functionals import KappaQuadrature, e_functional_many
from .lax import DEFAULT_ODE_TOL
from .spectral import TWO_PI, SpectralField

WEIGHT_ODE_TOL = 1e-8


def w_kernel(xi, kappa):
    """The positive weight w(xi, kappa); vanishes at xi = 0."""
    xi = np.asarray(xi, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    return 3.0 * kappa ** 2 * xi ** 2 / ((kappa ** 2 + xi ** 2)
                                         * (4.0 * kappa ** 2 + xi ** 2))


def w_kernel_partial_fractions(xi, kappa):
    """Algebraically identical form xi^2/(k^2+xi^2) - xi^2/(4k^2+xi^2)."""
    xi = np.asarray(xi, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    return xi ** 2 / (kappa ** 2 + xi ** 2) - xi ** 2 / (4.0 * kappa ** 2 + xi ** 2)


def _m2_integrand(u, s):
    return 3.0 * u ** (2.0 * s + 1.0) / ((1.0 + u * u) * (1.0 + 4.0 * u * u))


def m_squared(xi: float, s: float, tol: float = 1e-11) -> float:
    """m_s(xi)^2 by adaptive quadrature in the rescaled variable u = kappa/|xi|."""
    if xi == 0.0:
        return 0.0
    a = 1.0 / abs(xi)
    pieces = []
    if a < 1.0:
        pieces.append((a, 1.0))
        pieces.append((1.0, np.inf))
    else:
        pieces.append((a, np.inf))
    total = 0.0
    err = 0.0
    for lo, hi in pieces:
        v, e = _scipy_quad(_m2_integrand, lo, hi, args=(s,),
                           epsabs=tol, epsrel=tol, limit=200)
        total += v
        err += e
    if err > 100.0 * tol * max(1.0, total):
        raise QuadratureError(err, tol)
    return abs(xi) ** (2.0 * s) * total


def c_s_constant(s: float, tol: float = 1e-12) -> float:
    """C_s = 3 integral_0^inf u^{2s+1} / ((1+u^2)(1+4u^2)) du by quadrature."""
    v1, e1 = _scipy_quad(_m2_integrand, 0.0, 1.0, args=(s,),
                         epsabs=tol, epsrel=tol, limit=200)
    v2, e2 = _scipy_quad(_m2_integrand, 1.0, np.inf, args=(s,),
                         epsabs=tol, epsrel=tol, limit=200)
    if e1 + e2 > 100.0 * tol:
        raise QuadratureError(e1 + e2, tol)
    return v1 + v2


@dataclass(frozen=True)
class MultiplierTable:
    """Tabulated m_s(xi)^2 for |k| <= k_max together with the constant C_s."""

    s: float
    values: np.ndarray  # m_s(2 pi k)^2 for k = 0..k_max
    c_s: float
    tol: float

    @property
    def k_max(self) -> int:
        return len(self.values) - 1

    def m2(self, k) -> np.ndarray:
        k = np.abs(np.asarray(k, dtype=int))
        if np.any(k > self.k_max):
            raise ValueError(f"mode {int(np.max(k))} beyond table k_max={self.k_max}")
        return self.values[k]

    def bracket(self, k) -> np.ndarray:
        """(1 + m_s^2)/<xi>^{2s}, the two-sided comparability ratio."""
        k = np.asarray(k, dtype=int)
        xi2 = (TWO_PI * k) ** 2
        return (1.0 + self.m2(k)) / (1.0 + xi2) ** self.s

    def m2_for_field(self, f: SpectralField) -> np.ndarray:
        return self.m2(f.k_indices)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["k", "xi", "m2", "bracket"])
            for k in range(self.k_max + 1):
                wr.writerow([k, repr(TWO_PI * k), repr(float(self.values[k])),
                             repr(float(self.bracket(k)))])


@lru_cache(maxsize=32)
def _multiplier_table_cached(s: float, k_max: int, tol: float) -> MultiplierTable:
    vals = np.array([m_squared(TWO_PI * k, s, tol) for k in range(k_max + 1)])
    return MultiplierTable(s=s, values=vals, c_s=c_s_constant(s), tol=tol)


def multiplier_table(s: float, k_max: int, tol: float = 1e-11) -> MultiplierTable:
    if not 0.0 <= s < 1.0:
        raise ValueError("multiplier table requires 0 <= s < 1")
    return _multiplier_table_cached(float(s), int(k_max), float(tol))


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MeasureSpec:
    """Parameters of the weighted measure at truncation n_modes."""

    s: float
    r_cut: float
    n_modes: int
    quad: KappaQuadrature

    def __post_init__(self):
        if not 0.5 < self.s < 1.0:
            raise ValueError("require 1/2 < s < 1")
        if self.r_cut <= 0:
            raise ValueError("require R > 0")


@dataclass(frozen=True)
class Sample:
    """One draw of pi_N q together with its importance weight."""

    field: SpectralField
    weight: float
    e_value: float
    seed_path: tuple[int, int]


def _normals(master_seed: int, draw_index: int, count: int) -> np.ndarray:
    """Standard normals from the (seed, draw) Philox substream, fixed layout."""
    key = np.array([np.uint64(master_seed & (2 ** 64 - 1)),
                    np.uint64(draw_index)], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    return gen.standard_normal(count)


def _coeffs_from_normals(z: np.ndarray, n_modes: int, inv_weight: np.ndarray,
                         mean_zero: bool) -> np.ndarray:
    """Hermitian coefficient vector from the fixed normal layout.

    Layout: z[0] drives the zero mode, z[1..n] the real parts and z[n+1..2n]
    the imaginary parts of modes k = 1..n; E|g_k|^2 = 1 for k != 0.
    """
    n = n_modes
    c = np.zeros(2 * n + 1, np.complex128)
    c[n] = 0.0 if mean_zero else z[0] * inv_weight[0]
    g = (z[1:n + 1] + 1j * z[n + 1:2 * n + 1]) / np.sqrt(2.0)
    c[n + 1:] = g * inv_weight[1:]
    c[:n] = np.conj(c[n + 1:][::-1])
    return c


def sample_mu_s(spec: MeasureSpec, table: MultiplierTable, seed: int,
                draw_index: int = 0, mean_zero: bool = False) -> SpectralField:
    """One draw of pi_N q under the base Gaussian (no weight attached)."""
    n = spec.n_modes
    if table.k_max < n:
        raise ValueError("multiplier table does not cover n_modes")
    inv = 1.0 / np.sqrt(1.0 + table.values[:n + 1])
    z = _normals(seed, draw_index, 2 * n + 1)
    return SpectralField(n, _coeffs_from_normals(z, n, inv, mean_zero))


def sample_mu_tilde(s: float, n_modes: int, table: MultiplierTable, seed: int,
                    draw_index: int = 0, mean_zero: bool = False) -> SpectralField:
    """Draw from the comparison Gaussian with variances 1/(C_s <xi>^{2s})."""
    n = n_modes
    xi = TWO_PI * np.arange(n + 1)
    inv = 1.0 / np.sqrt(table.c_s * (1.0 + xi ** 2) ** s)
    z = _normals(seed, draw_index, 2 * n + 1)
    return SpectralField(n, _coeffs_from_normals(z, n, inv, mean_zero))


def draw_ensemble(spec: MeasureSpec, table: MultiplierTable, master_seed: int,
                  m_samples: int, mean_zero: bool = False) -> list[SpectralField]:
    return [sample_mu_s(spec, table, master_seed, j, mean_zero)
            for j in range(m_samples)]


# ---------------------------------------------------------------------------
# density and weighting
# ---------------------------------------------------------------------------

def density_f(q: SpectralField, spec: MeasureSpec, *,
              n_trunc: int | None = None, l_cut: float | None = None,
              ode_tol: float = WEIGHT_ODE_TOL,
              method: str = "auto") -> tuple[float, float]:
    """(weight, e_value) with weight = 1{||q||^2 <= R} exp(-E).

    ``n_trunc``/``l_cut`` expose the truncated density F_{N,L} used in the
    convergence studies; by default the field's own band and the spec's
    quadrature cutoff apply.
    """
    w, e = weight_ensemble([q], spec, n_trunc=n_trunc, l_cut=l_cut,
                           ode_tol=ode_tol, method=method)
    return float(w[0]), float(e[0])


def weight_ensemble(fields: list[SpectralField], spec: MeasureSpec, *,
                    n_trunc: int | None = None, l_cut: float | None = None,
                    ode_tol: float = WEIGHT_ODE_TOL,
                    method: str = "auto") -> tuple[np.ndarray, np.ndarray]:
    """Batched weights; the kappa quadrature is shared across the ensemble."""
    quad = spec.quad
    if l_cut is not None:
        quad = KappaQuadrature(l_max=l_cut, nodes_per_panel=quad.nodes_per_panel,
                               tol=quad.tol, tail_constant=quad.tail_constant)
    if n_trunc is not None:
        from .spectral import project
        fields = [project(f, n_trunc, "low") for f in fields]
    e_vals, _tails = e_functional_many(fields, quad, spec.s,
                                       ode_tol=ode_tol, method=method)
    norms_sq = np.array([f.l2_norm() ** 2 for f in fields])
    weights = np.where(norms_sq <= spec.r_cut, np.exp(-e_vals), 0.0)
    return weights, e_vals


def weighted_samples(spec: MeasureSpec, table: MultiplierTable,
                     master_seed: int, m_samples: int,
                     mean_zero: bool = False, **kw) -> list[Sample]:
    fields = draw_ensemble(spec, table, master_seed, m_samples, mean_zero)
    weights, e_vals = weight_ensemble(fields, spec, **kw)
    return [Sample(field=f, weight=float(w), e_value=float(e),
                   seed_path=(master_seed, j))
            for j, (f, w, e) in enumerate(zip(fields, weights, e_vals))]


def effective_sample_size(weights: np.ndarray) -> float:
    weights = np.asarray(weights, dtype=float)
    total = np.sum(weights)
    if total <= 0:
        return 0.0
    return float(total ** 2 / np.sum(weights ** 2))


def write_ensemble_manifest(out_dir, spec: MeasureSpec, master_seed: int,
                            samples: list[Sample]) -> None:
    """Manifest JSON plus one .pfc per member."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for j, smp in enumerate(samples):
        name = f"sample_{j:05d}.pfc"
        write_pfc(out / name, smp.field, metadata=spec.s)
        entries.append({
            "file": name,
            "weight": repr(smp.weight),
            "e_value": repr(smp.e_value),
            "seed_path": list(smp.seed_path),
        })
    manifest = {
        "spec": {"s": repr(spec.s), "R": repr(spec.r_cut),
                 "n_modes": spec.n_modes,
                 "quad_l_max": repr(spec.quad.l_max),
                 "quad_nodes_per_panel": spec.quad.nodes_per_panel},
        "master_seed": master_seed,
        "samples": entries,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1,
                                                  sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Kakutani diagnostic
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KakutaniDiagnostic:
    """Partial sums of (a/b - 1)^2 over per-mode variances of the two Gaussians."""

    ks: np.ndarray
    summands: np.ndarray      # combined +k and -k contribution at each k >= 1
    zero_mode_term: float
    partial_sums: np.ndarray
    slope: float              # fitted log-log decay of the summand

    def total(self) -> float:
        return float(self.partial_sums[-1])


def kakutani_diagnostic(s: float, k_max: int,
                        table: MultiplierTable | None = None,
                        fit_range: tuple[int, int] = (32, 256)) -> KakutaniDiagnostic:
    """Summability test of the equivalence criterion between the two Gaussians.

    a(xi) = 1/(1+m_s^2) and b(xi) = 1/(C_s <xi>^{2s}); the series converges
    iff the measures are equivalent, with summands decaying like |xi|^{-4s}.
    """
    if table is None or table.k_max < k_max:
        table = multiplier_table(s, k_max)
    ks = np.arange(1, k_max + 1)
    xi2 = (TWO_PI * ks) ** 2
    a = 1.0 / (1.0 + table.values[1:k_max + 1])
    b = 1.0 / (table.c_s * (1.0 + xi2) ** s)
    summand = 2.0 * (a / b - 1.0) ** 2
    zero_term = (table.c_s - 1.0) ** 2
    partial = zero_term + np.cumsum(summand)
    lo, hi = fit_range
    hi = min(hi, k_max)
    sel = (ks >= lo) & (ks <= hi)
    slope = float(np.polyfit(np.log(ks[sel]), np.log(summand[sel]), 1)[0])
    return KakutaniDiagnostic(ks=ks, summands=summand, zero_mode_term=zero_term,
                              partial_sums=partial, slope=slope)
