"""The corrected Miura transform, its Newton inverse, and KdV by conjugation.

The transform B(q) = q' + q^2 - ||q||^2 maps mean-zero fields to mean-zero
fields (the subtracted constant is exactly the zero mode of q^2) and is a
real-analytic isomorphism between the mean-zero spaces.  Conjugating the
*renormalized* defocusing mKdV flow with B reproduces the KdV flow on
mean-zero data; the renormalization is the exact gauge x -> x - 12 t M(q)
of plain mKdV, and without it the conjugated field satisfies KdV plus a
residual transport 6||q||^2 w_x.  Data with mean alpha reduce to mean zero
by tau_alpha(w) = w - alpha combined with the Galilean phase x -> x + 6 alpha t.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .exceptions import MiuraInversionError
from .flows import FlowSpec, Trajectory, evolve
from .spectral import SpectralField, multiply


def assert_mean_zero(f: SpectralField, tol: float = 1e-12, what: str = "field"):
    if abs(f.mean()) > tol:
        raise ValueError(f"{what} must be mean-zero (mean = {f.mean():.3e})")


def miura_forward(q: SpectralField) -> SpectralField:
    """B(q) = dq/dx + q^2 - ||q||_{L2}^2 with a dealiased square.

    The output keeps the full product bandwidth 2*n_modes so that forward
    and inverse compose exactly on band-limited data; its mean is zero to
    round-off by construction.
    """
    assert_mean_zero(q)
    n_out = 2 * q.n_modes if q.n_modes > 0 else 0
    sq = multiply(q, q, pad=2, n_out=n_out)
    corrected = sq.coeffs.copy()
    corrected[n_out] = 0.0
    dq = q.derivative().truncated(n_out)
    return SpectralField(n_out, dq.coeffs + corrected, q.grid_factor)


def miura_jacobian_apply(q: SpectralField, f: SpectralField) -> SpectralField:
    """Directional derivative of B at q: f -> f' + 2qf - 2 <q, f>.

    On mean-zero perturbations the rank-one term exactly cancels the mean of
    2qf, so the image is mean-zero as well.
    """
    n_out = max(q.n_modes + f.n_modes, f.n_modes)
    prod = multiply(q, f, pad=2, n_out=n_out)
    corrected = 2.0 * prod.coeffs
    corrected[n_out] = 0.0
    df = f.derivative().truncated(n_out)
    return SpectralField(n_out, df.coeffs + corrected)


def _real_dofs_to_field(vec: np.ndarray, n: int) -> SpectralField:
    c = np.zeros(2 * n + 1, np.complex128)
    c[n + 1:] = vec[:n] + 1j * vec[n:]
    c[:n] = np.conj(c[n + 1:][::-1])
    return SpectralField(n, c)


def _field_to_real_dofs(f: SpectralField, n: int) -> np.ndarray:
    c = f.truncated(n).coeffs
    pos = c[n + 1:]
    return np.concatenate([pos.real, pos.imag])


def _jacobian_matrix(q: SpectralField, n: int) -> np.ndarray:
    """Dense Jacobian of the band-projected transform in real mode variables."""
    dim = 2 * n
    jac = np.empty((dim, dim))
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = 1.0
        basis = _real_dofs_to_field(e, n)
        img = miura_jacobian_apply(q, basis)
        jac[:, j] = _field_to_real_dofs(img, n)
    return jac


def miura_inverse(w: SpectralField, newton_tol: float = 1e-12,
                  max_iter: int = 40) -> SpectralField:
    """Newton solve of B(q) = w on the mean-zero band of w.

    A cold start from the linearization q0 = 0 covers moderate amplitudes;
    otherwise the solver re-enters with amplitude continuation through
    t*w for t = 1/4, 1/2, 3/4, 1.
    """
    assert_mean_zero(w, what="transform datum")
    n = w.n_modes
    if n == 0:
        return SpectralField.zero(0)
    target = _field_to_real_dofs(w, n)

    def solve_from(q_start: SpectralField, rhs: np.ndarray):
        q_vec = _field_to_real_dofs(q_start, n)
        best = None
        for it in range(max_iter):
            q_field = _real_dofs_to_field(q_vec, n)
            resid = _field_to_real_dofs(miura_forward(q_field), n) - rhs
            rnorm = float(np.linalg.norm(resid))
            if best is None or rnorm < best[0]:
                best = (rnorm, q_vec.copy(), it)
            if rnorm <= newton_tol:
                return _real_dofs_to_field(q_vec, n), rnorm, it
            jac = _jacobian_matrix(q_field, n)
            try:
                step = np.linalg.solve(jac, resid)
            except np.linalg.LinAlgError:
                break
            if not np.all(np.isfinite(step)):
                break
            q_vec = q_vec - step
        return None, best[0], best[2]

    q_sol, rnorm, its = solve_from(SpectralField.zero(n), target)
    if q_sol is not None:
        return q_sol
    # amplitude continuation
    q_curr = SpectralField.zero(n)
    for t in (0.25, 0.5, 0.75, 1.0):
        q_sol, rnorm, its = solve_from(q_curr, t * target)
        if q_sol is None:
            raise MiuraInversionError(rnorm, its)
        q_curr = q_sol
    return q_curr


def tau_shift(w: SpectralField, alpha: float) -> SpectralField:
    """tau_alpha(w) = w - alpha (shifts only the zero mode)."""
    c = w.coeffs.copy()
    c[w.n_modes] = c[w.n_modes] - alpha
    return SpectralField(w.n_modes, c, w.grid_factor)


def _galilean_phase(w: SpectralField, shift: float) -> SpectralField:
    """Exact spatial translation w(x) -> w(x + shift) via Fourier phases."""
    phase = np.exp(1j * w.frequencies * shift)
    return SpectralField(w.n_modes, phase * w.coeffs, w.grid_factor)


def _require_mkdv_spec(spec: FlowSpec) -> FlowSpec:
    if spec.kind != "mkdv" or spec.sign != "defocusing":
        raise ValueError("conjugated KdV requires a defocusing mkdv FlowSpec")
    # the corrected transform intertwines the gauge-renormalized flow
    return replace(spec, renormalized=True)


def kdv_conjugated(w0: SpectralField, spec: FlowSpec,
                   newton_tol: float = 1e-12) -> Trajectory:
    """KdV trajectory as the image of an mKdV trajectory under the transform.

    The returned trajectory carries the conjugated snapshots w(t) = B(q(t));
    logs are the underlying mKdV logs (mass and L2 of q are conserved, hence
    the mean of w stays zero).
    """
    assert_mean_zero(w0, what="initial datum")
    spec = _require_mkdv_spec(spec)
    q0 = miura_inverse(w0, newton_tol=newton_tol)
    tr = evolve(q0, spec)
    snaps = [miura_forward(f).truncated(w0.n_modes) for f in tr.snapshots]
    return Trajectory(spec=spec, times=tr.times, snapshots=snaps, logs=tr.logs)


def kdv_direct(w0: SpectralField, dt: float, t_end: float,
               snapshot_stride: int = 1, **kw) -> Trajectory:
    """Reference pseudo-spectral KdV integration (for cross-validation)."""
    spec = FlowSpec(kind="kdv", dt=dt, t_end=t_end,
                    snapshot_stride=snapshot_stride, **kw)
    return evolve(w0, spec)


def conjugation_mismatch(w0: SpectralField, spec: FlowSpec) -> float:
    """sup over snapshots of || w_conj(t) - w_direct(t) ||_L2."""
    conj = kdv_conjugated(w0, spec)
    direct = kdv_direct(w0, spec.dt, spec.t_end,
                        snapshot_stride=spec.snapshot_stride)
    worst = 0.0
    for fa, fb in zip(conj.snapshots, direct.snapshots):
        worst = max(worst, (fa - fb.truncated(fa.n_modes)).l2_norm())
    return worst


def kdv_alpha(w0: SpectralField, spec: FlowSpec,
              newton_tol: float = 1e-12) -> Trajectory:
    """KdV flow on data of mean alpha by shift conjugation.

    The mean-alpha flow is tau_{-alpha} after the mean-zero flow after
    tau_alpha, combined with the exact Galilean translation x -> x + 6 alpha t
    that relates the two reference frames.
    """
    alpha = w0.mean()
    w0_zero = tau_shift(w0, alpha)
    tr = kdv_conjugated(w0_zero, spec, newton_tol=newton_tol)
    snaps = []
    for t, f in zip(tr.times, tr.snapshots):
        shifted = _galilean_phase(f, 6.0 * alpha * t)
        snaps.append(tau_shift(shifted, -alpha))
    return Trajectory(spec=tr.spec, times=tr.times, snapshots=snaps,
                      logs=tr.logs)


def pushforward_ensemble(samples, spec_n: int | None = None):
    """Map a weighted mean-zero ensemble through the transform.

    Weights ride along unchanged (pushforward of a weighted empirical
    measure); fields are transformed member by member in index order.
    """
    from .measures import Sample

    out = []
    for smp in samples:
        w_field = miura_forward(smp.field)
        if spec_n is not None:
            w_field = w_field.truncated(spec_n)
        out.append(Sample(field=w_field, weight=smp.weight,
                          e_value=smp.e_value, seed_path=smp.seed_path))
    return out
