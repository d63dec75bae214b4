"""Experiment drivers: the Monte Carlo invariance test and convergence scans.

The invariance test draws a weighted ensemble for the truncated measure,
pushes every member through the requested flow, and compares weighted means
of bounded observables before and after.  Weights are computed once at time
zero: invariance is a pushforward statement, so equality of the weighted
means is the prediction, not re-weighting.  An underpowered run (degenerate
weights) is flagged inconclusive rather than failed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .flows import FlowSpec, evolve_many
from .functionals import KappaQuadrature, e_functional_many
from .measures import (
    MeasureSpec,
    MultiplierTable,
    draw_ensemble,
    effective_sample_size,
    multiplier_table,
    weight_ensemble,
)
from .spectral import SpectralField, project, sobolev_norm

ESS_FLOOR_FRACTION = 0.1


@dataclass(frozen=True)
class Observable:
    name: str
    fn: callable

    def __call__(self, f: SpectralField) -> float:
        return float(self.fn(f))


def default_observables() -> list[Observable]:
    """Bounded low-mode statistics (cosines/exponentials stay in [-1, 1])."""
    return [
        Observable("cos_re_mode1", lambda f: np.cos(f.coeff(1).real)),
        Observable("exp_neg_low_energy",
                   lambda f: np.exp(-project(f, 4, "low").l2_norm() ** 2)),
        Observable("sin_im_mode2", lambda f: np.sin(f.coeff(2).imag)),
    ]


def conserved_l2_observable() -> Observable:
    return Observable("l2_squared", lambda f: f.l2_norm() ** 2)


@dataclass(frozen=True)
class ObservableStat:
    name: str
    before_mean: float
    after_mean: float
    se_before: float
    se_after: float
    z_score: float


@dataclass(frozen=True)
class InvarianceReport:
    observables: list[ObservableStat]
    ensemble_size: int
    effective_sample_size: float
    inconclusive: bool
    flow_kind: str
    flow_t_end: float
    failures: int
    master_seed: int

    def max_abs_z(self) -> float:
        return max(abs(o.z_score) for o in self.observables)

    def to_json_dict(self) -> dict:
        return {
            "observables": [
                {
                    "name": o.name,
                    "before_mean": repr(o.before_mean),
                    "after_mean": repr(o.after_mean),
                    "bootstrap_se_before": repr(o.se_before),
                    "bootstrap_se_after": repr(o.se_after),
                    "z_score": repr(o.z_score),
                }
                for o in self.observables
            ],
            "ensemble_size": self.ensemble_size,
            "effective_sample_size": repr(self.effective_sample_size),
            "inconclusive": self.inconclusive,
            "flow": {"kind": self.flow_kind, "t_end": repr(self.flow_t_end)},
            "failures": self.failures,
            "master_seed": self.master_seed,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=1,
                                         sort_keys=True) + "\n")


def _bootstrap_weighted_se(values: np.ndarray, weights: np.ndarray,
                           n_resamples: int, seed: int) -> np.ndarray:
    """SE of the self-normalized weighted mean for each observable column."""
    m = len(weights)
    key = np.array([np.uint64(seed & (2 ** 64 - 1)), np.uint64(0xB005)],
                   dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    idx = gen.integers(0, m, size=(n_resamples, m))
    w_rs = weights[idx]
    v_rs = values[idx]
    totals = np.sum(w_rs, axis=1)
    totals = np.where(totals > 0, totals, np.inf)
    means = np.einsum("rm,rmc->rc", w_rs, v_rs) / totals[:, None]
    return np.std(means, axis=0, ddof=1)


def _apply_flow(fields: list[SpectralField], flow: FlowSpec):
    """Final-time fields under the flow; supports the conjugated KdV route."""
    if flow.kind == "kdv-conjugated":
        from .miura import kdv_conjugated

        base = replace(flow, kind="mkdv")
        out = []
        failures = 0
        for f in fields:
            try:
                tr = kdv_conjugated(f, base)
                out.append(tr.final())
            except Exception:
                failures += 1
                out.append(f)
        return out, failures
    run_spec = replace(flow, snapshot_stride=max(flow.n_steps(), 1))
    trajectories = evolve_many(fields, run_spec)
    return [tr.final() for tr in trajectories], 0


def invariance_test(spec: MeasureSpec, flow: FlowSpec,
                    observables: list[Observable] | None = None,
                    m_samples: int = 512, seed: int = 0,
                    bootstrap_b: int = 200,
                    table: MultiplierTable | None = None,
                    weight_method: str = "auto") -> InvarianceReport:
    """Weighted before/after comparison of observables under one flow.

    For the truncated measure the flow kind may be any of mkdv, h_kappa,
    h_kappa_trunc or kdv-conjugated (the latter draws mean-zero samples).
    """
    observables = observables if observables is not None else default_observables()
    if table is None:
        table = multiplier_table(spec.s, spec.n_modes)
    mean_zero = flow.kind == "kdv-conjugated"
    fields = draw_ensemble(spec, table, seed, m_samples, mean_zero=mean_zero)
    weights, _e_vals = weight_ensemble(fields, spec, method=weight_method)
    ess = effective_sample_size(weights)

    before = np.array([[obs(f) for obs in observables] for f in fields])
    evolved, failures = _apply_flow(fields, flow)
    after = np.array([[obs(f) for obs in observables] for f in evolved])

    total = float(np.sum(weights))
    if total <= 0:
        stats = [ObservableStat(obs.name, np.nan, np.nan, np.nan, np.nan, np.nan)
                 for obs in observables]
        return InvarianceReport(stats, m_samples, 0.0, True, flow.kind,
                                flow.t_end, failures, seed)

    mean_before = weights @ before / total
    mean_after = weights @ after / total
    se_before = _bootstrap_weighted_se(before, weights, bootstrap_b, seed)
    se_after = _bootstrap_weighted_se(after, weights, bootstrap_b, seed)

    stats = []
    for j, obs in enumerate(observables):
        denom = np.sqrt(se_before[j] ** 2 + se_after[j] ** 2)
        diff = mean_after[j] - mean_before[j]
        z = 0.0 if diff == 0.0 else float(diff / max(denom, 1e-300))
        stats.append(ObservableStat(
            name=obs.name,
            before_mean=float(mean_before[j]),
            after_mean=float(mean_after[j]),
            se_before=float(se_before[j]),
            se_after=float(se_after[j]),
            z_score=z,
        ))
    inconclusive = ess <= m_samples * ESS_FLOOR_FRACTION
    return InvarianceReport(stats, m_samples, ess, inconclusive, flow.kind,
                            flow.t_end, failures, seed)


# ---------------------------------------------------------------------------
# convergence suite
# ---------------------------------------------------------------------------

def e_truncation_scan(spec: MeasureSpec, seed: int, l_values=(16.0, 64.0, 256.0),
                      n_fields: int = 8, table=None, method="auto") -> dict:
    """Decay of |E_L - E_{L_max}| in the quadrature cutoff on a small ensemble."""
    table = table or multiplier_table(spec.s, spec.n_modes)
    fields = draw_ensemble(spec, table, seed, n_fields)
    values = {}
    for l_cut in l_values:
        quad = KappaQuadrature(l_max=float(l_cut),
                               nodes_per_panel=spec.quad.nodes_per_panel,
                               tol=np.inf)
        e_vals, _ = e_functional_many(fields, quad, spec.s, method=method)
        values[float(l_cut)] = e_vals
    ls = sorted(values)
    ref = values[ls[-1]]
    gaps = [float(np.mean(np.abs(values[l] - ref))) for l in ls[:-1]]
    from .flows import fit_decay_exponent

    theta = fit_decay_exponent(ls[:-1], gaps)
    return {"L": ls[:-1], "mean_gap": gaps, "theta_hat": theta}


def e_projection_scan(spec: MeasureSpec, seed: int, n_values=(8, 16, 32),
                      n_fields: int = 8, table=None, method="auto") -> dict:
    """Decay of |E(pi_N q) - E(pi_{N_max} q)| in the mode cutoff."""
    table = table or multiplier_table(spec.s, spec.n_modes)
    fields = draw_ensemble(spec, table, seed, n_fields)
    n_all = sorted(set(int(n) for n in n_values) | {spec.n_modes})
    values = {}
    for n_cut in n_all:
        projected = [project(f, n_cut, "low") for f in fields]
        e_vals, _ = e_functional_many(projected, spec.quad, spec.s, method=method)
        values[n_cut] = e_vals
    ref = values[n_all[-1]]
    scan_ns = [n for n in n_all[:-1]]
    gaps = [float(np.mean(np.abs(values[n] - ref))) for n in scan_ns]
    from .flows import fit_decay_exponent

    theta = fit_decay_exponent(scan_ns, gaps)
    return {"N": scan_ns, "mean_gap": gaps, "theta_hat": theta}


def convergence_suite(spec: MeasureSpec, seed: int, *,
                      q0: SpectralField | None = None,
                      kappa: float = 2.0,
                      flow_n_values=(8, 16, 32),
                      scan_n_values=(8, 16, 32, 64),
                      t_end: float = 0.02) -> dict:
    """The four truncation scans with fitted decay exponents."""
    from .flows import asymptotic_conservation_scan, truncation_convergence

    table = multiplier_table(spec.s, max(spec.n_modes, max(scan_n_values)))
    if q0 is None:
        rough = draw_ensemble(spec, table, seed + 17, 1)[0]
        q0 = rough
    results = {
        "e_truncation": e_truncation_scan(spec, seed, table=table),
        "e_projection": e_projection_scan(spec, seed, table=table),
        "flow_truncation": truncation_convergence(q0, kappa, flow_n_values,
                                                  t_end),
        "asymptotic_conservation": asymptotic_conservation_scan(
            q0, kappa, spec.s, scan_n_values, t_end, quad=spec.quad),
    }
    return results


def sampler_support_scan(spec: MeasureSpec, seed: int, sigmas=(0.2, 0.3),
                         n_values=(64, 256), n_draws: int = 1000) -> dict:
    """Growth trend of empirical H^sigma norms with the sampler cutoff."""
    out = {}
    for n_modes in n_values:
        table = multiplier_table(spec.s, n_modes)
        sub_spec = MeasureSpec(s=spec.s, r_cut=spec.r_cut, n_modes=n_modes,
                               quad=spec.quad)
        fields = draw_ensemble(sub_spec, table, seed, n_draws)
        for sigma in sigmas:
            vals = [sobolev_norm(f, sigma) ** 2 for f in fields]
            out.setdefault(sigma, {})[n_modes] = float(np.mean(vals))
    return out
