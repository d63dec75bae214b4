"""Periodic Fourier representation on the unit torus.

A real function f on [0, 1) is carried as Hermitian-symmetric Fourier
coefficients against the convention

    f(x) = sum_{xi in 2*pi*Z} fhat(xi) e^{i xi x},
    fhat(xi) = integral_0^1 e^{-i xi x} f(x) dx,

so Plancherel reads ||f||_{L2}^2 = sum |fhat(xi)|^2.  Frequencies are
xi = 2*pi*k with integer index k; every symbol table in this package is a
function of k internally, which keeps lookups exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .exceptions import ResolutionError

TWO_PI = 2.0 * np.pi


def next_pow2(m: int) -> int:
    p = 1
    while p < m:
        p *= 2
    return p


def _hermitianize(coeffs: np.ndarray) -> np.ndarray:
    """Project onto the Hermitian-symmetric (real-field) subspace."""
    n = (len(coeffs) - 1) // 2
    out = 0.5 * (coeffs + np.conj(coeffs[::-1]))
    out[n] = complex(out[n].real, 0.0)
    return out


@dataclass(frozen=True)
class SpectralField:
    """Real periodic function stored as coefficients for k = -n_modes..n_modes.

    ``coeffs[j]`` is the coefficient of e^{2*pi*i*(j - n_modes)*x}; Hermitian
    symmetry coeff(-k) = conj(coeff(k)) is enforced at construction.
    ``grid_factor`` is the default zero-padding factor for real-space work.
    """

    n_modes: int
    coeffs: np.ndarray
    grid_factor: int = 2

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.shape != (2 * self.n_modes + 1,):
            raise ValueError(
                f"expected {2 * self.n_modes + 1} coefficients, got {c.shape}"
            )
        object.__setattr__(self, "coeffs", _hermitianize(c))
        self.coeffs.setflags(write=False)

    # -- constructors -----------------------------------------------------

    @staticmethod
    def zero(n_modes: int, grid_factor: int = 2) -> "SpectralField":
        return SpectralField(n_modes, np.zeros(2 * n_modes + 1, np.complex128),
                             grid_factor)

    @staticmethod
    def constant(value: float, n_modes: int = 0) -> "SpectralField":
        c = np.zeros(2 * n_modes + 1, np.complex128)
        c[n_modes] = value
        return SpectralField(n_modes, c)

    @staticmethod
    def from_modes(modes: dict[int, complex], n_modes: int) -> "SpectralField":
        """Build from {k: coefficient} for k >= 0; negatives filled by symmetry."""
        c = np.zeros(2 * n_modes + 1, np.complex128)
        for k, v in modes.items():
            if abs(k) > n_modes:
                raise ValueError(f"mode {k} outside band [-{n_modes}, {n_modes}]")
            c[n_modes + k] = v
            c[n_modes - k] = np.conj(v)
        return SpectralField(n_modes, c)

    @staticmethod
    def harmonic(k: int, amplitude: float = 1.0, kind: str = "cos",
                 n_modes: int | None = None) -> "SpectralField":
        """amplitude*cos(2*pi*k*x) or amplitude*sin(2*pi*k*x)."""
        n = k if n_modes is None else n_modes
        half = amplitude / 2.0
        v = half if kind == "cos" else complex(0.0, -half)
        return SpectralField.from_modes({k: v}, n)

    # -- views -------------------------------------------------------------

    @property
    def k_indices(self) -> np.ndarray:
        return np.arange(-self.n_modes, self.n_modes + 1)

    @property
    def frequencies(self) -> np.ndarray:
        return TWO_PI * self.k_indices

    def coeff(self, k: int) -> complex:
        if abs(k) > self.n_modes:
            return 0.0 + 0.0j
        return complex(self.coeffs[self.n_modes + k])

    def default_grid(self) -> int:
        return default_grid_size(self.n_modes, self.grid_factor)

    def values(self, grid: int | None = None) -> np.ndarray:
        """Sample on the uniform grid x_j = j/M (trigonometric synthesis)."""
        return synthesize(self, grid)

    def eval_at(self, x) -> np.ndarray:
        """Evaluate the Fourier series at arbitrary points."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        phases = np.exp(1j * np.outer(x, self.frequencies))
        return np.real(phases @ self.coeffs)

    # -- algebra -----------------------------------------------------------

    def __add__(self, other: "SpectralField") -> "SpectralField":
        n = max(self.n_modes, other.n_modes)
        return SpectralField(n, pad_coeffs(self.coeffs, self.n_modes, n)
                             + pad_coeffs(other.coeffs, other.n_modes, n),
                             max(self.grid_factor, other.grid_factor))

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        return self + (other * -1.0)

    def __mul__(self, scalar: float) -> "SpectralField":
        return SpectralField(self.n_modes, self.coeffs * scalar, self.grid_factor)

    __rmul__ = __mul__

    def truncated(self, n: int) -> "SpectralField":
        return SpectralField(n, pad_coeffs(self.coeffs, self.n_modes, n),
                             self.grid_factor)

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.coeffs) ** 2)))

    def mean(self) -> float:
        return float(self.coeffs[self.n_modes].real)

    def derivative(self, order: int = 1) -> "SpectralField":
        sym = (1j * self.frequencies) ** order
        return SpectralField(self.n_modes, sym * self.coeffs, self.grid_factor)


@dataclass(frozen=True)
class Multiplier:
    """Fourier multiplier acting coefficient-wise, symbol given as k -> complex.

    Applying preserves Hermitian symmetry whenever symbol(-k) = conj(symbol(k)).
    """

    symbol: Callable[[np.ndarray], np.ndarray]
    description: str = ""

    def apply(self, f: SpectralField) -> SpectralField:
        vals = np.asarray(self.symbol(f.k_indices), dtype=np.complex128)
        return SpectralField(f.n_modes, vals * f.coeffs, f.grid_factor)

    def __call__(self, f: SpectralField) -> SpectralField:
        return self.apply(f)


def derivative_multiplier(order: int = 1) -> Multiplier:
    return Multiplier(lambda k: (1j * TWO_PI * k) ** order,
                      description=f"d^{order}/dx^{order}")


def resolvent_multiplier(kind: str, kappa: float) -> Multiplier:
    """Symbols (2k+ix)^-1, (2k-ix)^-1 and (k^2+x^2)^-1 in the frequency x.

    Note the free two-sided resolvent at doubled argument, R0(2*kappa), is
    ``resolvent_multiplier("r0", 2*kappa)`` with symbol (4*kappa^2+xi^2)^-1.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    if kind == "plus":
        return Multiplier(lambda k: 1.0 / (2.0 * kappa + 1j * TWO_PI * k),
                          description=f"(2k+d)^-1, k={kappa}")
    if kind == "minus":
        return Multiplier(lambda k: 1.0 / (2.0 * kappa - 1j * TWO_PI * k),
                          description=f"(2k-d)^-1, k={kappa}")
    if kind == "r0":
        return Multiplier(lambda k: 1.0 / (kappa ** 2 + (TWO_PI * k) ** 2) + 0j,
                          description=f"(k^2-d^2)^-1, k={kappa}")
    raise ValueError(f"unknown resolvent kind {kind!r}")


def transport_phase(t: float, kappa: float) -> Multiplier:
    """Exact propagator of dq/dt = 4*kappa^2 dq/dx: phase e^{4it kappa^2 xi}."""
    return Multiplier(lambda k: np.exp(4j * t * kappa ** 2 * TWO_PI * k),
                      description=f"transport phase t={t}, k={kappa}")


# ---------------------------------------------------------------------------
# grid transforms
# ---------------------------------------------------------------------------

def default_grid_size(n_modes: int, grid_factor: int = 2) -> int:
    return next_pow2(max(grid_factor * (2 * n_modes + 1), 16))


def analyze(samples: np.ndarray, n_modes: int | None = None,
            grid_factor: int = 2) -> SpectralField:
    """Exact FFT quadrature of uniform-grid samples into a SpectralField.

    The grid must hold at least 2*n_modes+1 points, else the requested band
    is not resolvable.
    """
    samples = np.asarray(samples, dtype=float)
    m = len(samples)
    if n_modes is None:
        n_modes = (m - 1) // 2
    if m < 2 * n_modes + 1:
        raise ResolutionError(
            f"grid of {m} points cannot resolve {n_modes} modes "
            f"(need >= {2 * n_modes + 1})"
        )
    spec = np.fft.fft(samples) / m
    c = np.zeros(2 * n_modes + 1, np.complex128)
    c[n_modes] = spec[0]
    for k in range(1, n_modes + 1):
        c[n_modes + k] = spec[k]
        c[n_modes - k] = spec[-k]
    return SpectralField(n_modes, c, grid_factor)


def synthesize(f: SpectralField, grid: int | None = None) -> np.ndarray:
    """Values of f on x_j = j/M, M defaulting to the field's padded grid."""
    m = f.default_grid() if grid is None else int(grid)
    if m < 2 * f.n_modes + 1:
        raise ResolutionError(
            f"grid of {m} points cannot hold {f.n_modes} modes"
        )
    spec = np.zeros(m, np.complex128)
    n = f.n_modes
    spec[0] = f.coeffs[n]
    for k in range(1, n + 1):
        spec[k] = f.coeffs[n + k]
        spec[m - k] = f.coeffs[n - k]
    return np.real(np.fft.ifft(spec) * m)


def pad_coeffs(coeffs: np.ndarray, n_from: int, n_to: int) -> np.ndarray:
    """Re-band a centered coefficient vector (zero-fill or truncate)."""
    if n_from == n_to:
        return coeffs.copy()
    out = np.zeros(2 * n_to + 1, np.complex128)
    n_keep = min(n_from, n_to)
    out[n_to - n_keep: n_to + n_keep + 1] = \
        coeffs[n_from - n_keep: n_from + n_keep + 1]
    return out


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def sobolev_norm(f: SpectralField, s: float, kappa: float | None = None) -> float:
    """H^s norm with weight <xi>^{2s}, or H^s_kappa with weight (4k^2+xi^2)^s."""
    xi = f.frequencies
    if kappa is None:
        w = (1.0 + xi ** 2) ** s
    else:
        if kappa <= 0:
            raise ValueError("kappa must be positive")
        w = (4.0 * kappa ** 2 + xi ** 2) ** s
    return float(np.sqrt(np.sum(w * np.abs(f.coeffs) ** 2)))


def resolvent_apply(f: SpectralField, kind: str, kappa: float) -> SpectralField:
    return resolvent_multiplier(kind, kappa).apply(f)


def multiply(f: SpectralField, g: SpectralField, pad: int = 2,
             n_out: int | None = None) -> SpectralField:
    """Dealiased pointwise product on a zero-padded grid.

    The product is truncated back to max(n_modes) unless ``n_out`` asks for a
    wider (or narrower) band; with the default pad >= 2 every retained
    coefficient of a quadratic product is exact to round-off.
    """
    n_max = max(f.n_modes, g.n_modes)
    n_out = n_max if n_out is None else n_out
    m = next_pow2(max(pad * (2 * n_max + 1), 2 * n_out + 1, 16))
    prod = synthesize(f, m) * synthesize(g, m)
    return analyze(prod, n_out, max(f.grid_factor, g.grid_factor))


def multiply_many(fields: list[SpectralField], pad: int, n_out: int) -> SpectralField:
    """Single-grid product of several factors; pad sets the common grid."""
    n_max = max(fld.n_modes for fld in fields)
    m = next_pow2(max(pad * (2 * n_max + 1), 2 * n_out + 1, 16))
    prod = np.ones(m)
    for fld in fields:
        prod = prod * synthesize(fld, m)
    return analyze(prod, n_out)


def project(f: SpectralField, n_cut: int, side: str = "low") -> SpectralField:
    """pi_N (keep |k| <= N) or pi_{>N} (zero |k| <= N); the two sum to f."""
    if n_cut < 0:
        raise ValueError("N must be >= 0")
    mask = np.abs(f.k_indices) <= n_cut
    if side == "low":
        c = np.where(mask, f.coeffs, 0.0)
    elif side == "high":
        c = np.where(mask, 0.0, f.coeffs)
    else:
        raise ValueError(f"unknown side {side!r}")
    return SpectralField(f.n_modes, c, f.grid_factor)


def integral(f: SpectralField) -> float:
    """integral_0^1 f dx, i.e. the zero mode."""
    return f.mean()


def inner(f: SpectralField, g: SpectralField) -> float:
    """L^2 inner product of two real fields via Plancherel."""
    n = min(f.n_modes, g.n_modes)
    cf = f.coeffs[f.n_modes - n: f.n_modes + n + 1]
    cg = g.coeffs[g.n_modes - n: g.n_modes + n + 1]
    return float(np.real(np.sum(cf * np.conj(cg))))


def random_field(n_modes: int, rng: np.random.Generator, amplitude: float = 1.0,
                 decay: float = 1.5) -> SpectralField:
    """Random smooth real field with coefficients ~ <k>^-decay * gaussian."""
    c = np.zeros(2 * n_modes + 1, np.complex128)
    c[n_modes] = amplitude * rng.normal() * 0.3
    for k in range(1, n_modes + 1):
        z = (rng.normal() + 1j * rng.normal()) / np.sqrt(2.0)
        c[n_modes + k] = amplitude * z / (1 + k) ** decay
        c[n_modes - k] = np.conj(c[n_modes + k])
    return SpectralField(n_modes, c)
