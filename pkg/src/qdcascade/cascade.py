"""Two-photon spectral amplitudes of a radiative cascade and window filtering.

A two-level cascade decays through one of two intermediate states (labelled
H and V by the polarization it emits), producing photon pairs whose energies
carry which-path information.  Passing the second photon through a spectral
window centered between the two intermediate lines erases that information
and restores polarization coherence.

Energies are in micro-eV throughout; hbar = 1 so radiative widths are also
energies.  The first-photon energy integral is carried out analytically
(its Lorentzian norm is common to every term and cancels from all reported
ratios), leaving smooth 1-D integrals over the windowed second-photon
energy, evaluated by adaptive quadrature.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import polstate
from .errors import DomainError, NonConvergence

__all__ = [
    "CascadeParams",
    "SpectralWindow",
    "WindowSweep",
    "make_params",
    "joint_amplitude",
    "gamma_prime_numeric",
    "gamma_prime_analytic",
    "detection_probability",
    "filtered_density_matrix",
    "sweep_gamma_vs_window",
]

_SQRT_HALF = math.sqrt(0.5)


@dataclass(frozen=True)
class CascadeParams:
    """Energies, radiative widths, and path amplitudes of the cascade.

    ``energy_h``/``energy_v`` are the two intermediate-state transition
    energies (their difference is the fine-structure splitting); the upper
    transition emits the first photon.  ``amp_h``/``amp_v`` are the complex
    path amplitudes (`|amp_h|^2 + |amp_v|^2 = 1`), ``phase_h``/``phase_v``
    gauge phases of the emitted wave packets, and ``dot_overlap`` the
    overlap factor of the initial and final dot states (|overlap| <= 1).
    """

    energy_upper: float
    width_upper: float
    energy_h: float
    width_h: float
    energy_v: float
    width_v: float
    amp_h: complex = _SQRT_HALF
    amp_v: complex = _SQRT_HALF
    phase_h: float = 0.0
    phase_v: float = 0.0
    dot_overlap: complex = 1.0

    def __post_init__(self):
        for name in ("width_upper", "width_h", "width_v"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be positive")
        norm = abs(self.amp_h) ** 2 + abs(self.amp_v) ** 2
        if abs(norm - 1.0) > 1e-9:
            raise DomainError(f"path amplitudes must be normalized, got |.|^2 sum {norm}")
        if abs(self.dot_overlap) > 1.0 + 1e-12:
            raise DomainError("dot_overlap magnitude must not exceed 1")

    @property
    def splitting(self) -> float:
        """Fine-structure splitting between the two intermediate lines."""
        return self.energy_h - self.energy_v

    @property
    def doublet_center(self) -> float:
        return 0.5 * (self.energy_h + self.energy_v)


def make_params(
    splitting: float = 27.0,
    width: float = 1.6,
    *,
    energy_upper: float = 0.0,
    width_upper: float | None = None,
    doublet_center: float = 0.0,
    amp_h: complex = _SQRT_HALF,
    amp_v: complex = _SQRT_HALF,
    phase_h: float = 0.0,
    phase_v: float = 0.0,
    dot_overlap: complex = 1.0,
) -> CascadeParams:
    """Build CascadeParams from the usual measured quantities.

    Defaults follow the reference dot: 27 ueV splitting, 1.6 ueV intermediate
    width, upper width twice the intermediate width.
    """
    return CascadeParams(
        energy_upper=energy_upper,
        width_upper=2.0 * width if width_upper is None else width_upper,
        energy_h=doublet_center + 0.5 * splitting,
        width_h=width,
        energy_v=doublet_center - 0.5 * splitting,
        width_v=width,
        amp_h=amp_h,
        amp_v=amp_v,
        phase_h=phase_h,
        phase_v=phase_v,
        dot_overlap=dot_overlap,
    )


@dataclass(frozen=True)
class SpectralWindow:
    """Rectangular transmission window applied to the second photon."""

    center: float
    width: float

    def __post_init__(self):
        if self.width < 0:
            raise DomainError("window width must be non-negative")

    @property
    def lo(self) -> float:
        return self.center - 0.5 * self.width

    @property
    def hi(self) -> float:
        return self.center + 0.5 * self.width

    @classmethod
    def centered(cls, params: CascadeParams, width: float) -> "SpectralWindow":
        """Window centered between the two intermediate lines."""
        return cls(center=params.doublet_center, width=width)


def joint_amplitude(params: CascadeParams, k1, k2, path: str):
    """Two-photon spectral amplitude of one decay path.

    ``k1`` is the first (upper-transition) photon energy, ``k2`` the second.
    Both may be arrays.  The common prefactor uses the H-path width by
    convention; overall normalization cancels from every reported ratio.
    """
    energy2, width2, phase = _path_constants(params, path)
    eps_upper = params.energy_upper - 0.5j * params.width_upper
    eps_2 = energy2 - 0.5j * width2
    prefactor = params.width_h / (2.0 * np.pi)
    k1 = np.asarray(k1, dtype=float)
    k2 = np.asarray(k2, dtype=float)
    amp = np.exp(1j * phase) * prefactor / ((k1 + k2 - eps_upper) * (k2 - eps_2))
    return amp if amp.ndim else complex(amp)


def _path_constants(params: CascadeParams, path: str):
    p = path.upper()
    if p == "H":
        return params.energy_h, params.width_h, params.phase_h
    if p == "V":
        return params.energy_v, params.width_v, params.phase_v
    raise DomainError(f"path must be 'H' or 'V', got {path!r}")


def _quad_checked(func, lo, hi, tol, points):
    if tol < 50.0 * np.finfo(float).eps:
        raise NonConvergence(
            f"relative tolerance {tol:.3e} is below achievable quadrature precision"
        )
    val, err, info, *rest = integrate.quad(
        func, lo, hi, epsabs=0.0, epsrel=tol, limit=200, points=points, full_output=1
    )
    if rest:
        raise NonConvergence(f"quadrature failed on [{lo}, {hi}]: {rest[-1]}")
    return val, err


@dataclass(frozen=True)
class _WindowIntegrals:
    cross: complex
    cross_err: float
    norm_h: float
    norm_h_err: float
    norm_v: float
    norm_v_err: float


def _window_integrals(params: CascadeParams, window: SpectralWindow, tol: float):
    """Second-photon integrals over the window, first photon integrated out.

    ``cross`` is the path-interference overlap integral (H conjugated against
    V reversed so that its phase follows phase_h - phase_v); ``norm_h`` and
    ``norm_v`` are the windowed single-path line shapes.  All three share the
    first-photon norm and the squared amplitude prefactor, which are divided
    out.
    """
    lo, hi = window.lo, window.hi
    pole_v_up = params.energy_v + 0.5j * params.width_v
    pole_h_dn = params.energy_h - 0.5j * params.width_h
    hw_h = 0.5 * params.width_h
    hw_v = 0.5 * params.width_v
    breaks = [e for e in sorted((params.energy_v, params.energy_h)) if lo < e < hi]
    points = breaks or None
    quad_tol = 0.25 * tol

    def cross_re(k):
        return (1.0 / ((k - pole_v_up) * (k - pole_h_dn))).real

    def cross_im(k):
        return (1.0 / ((k - pole_v_up) * (k - pole_h_dn))).imag

    def lorentz_h(k):
        return 1.0 / ((k - params.energy_h) ** 2 + hw_h**2)

    def lorentz_v(k):
        return 1.0 / ((k - params.energy_v) ** 2 + hw_v**2)

    re, re_err = _quad_checked(cross_re, lo, hi, quad_tol, points)
    im, im_err = _quad_checked(cross_im, lo, hi, quad_tol, points)
    nh, nh_err = _quad_checked(lorentz_h, lo, hi, quad_tol, points)
    nv, nv_err = _quad_checked(lorentz_v, lo, hi, quad_tol, points)
    return _WindowIntegrals(
        cross=re + 1j * im,
        cross_err=math.hypot(re_err, im_err),
        norm_h=nh,
        norm_h_err=nh_err,
        norm_v=nv,
        norm_v_err=nv_err,
    )


def _weighted_norms(params: CascadeParams, ints: _WindowIntegrals):
    wh = abs(params.amp_h) ** 2
    wv = abs(params.amp_v) ** 2
    den = wh * ints.norm_h + wv * ints.norm_v
    den_err = wh * ints.norm_h_err + wv * ints.norm_v_err
    return den, den_err


def gamma_prime_numeric(
    params: CascadeParams, window: SpectralWindow, tol: float = 1e-9
) -> complex:
    """Polarization coherence surviving the spectral window.

    Ratio of the windowed path-interference overlap to the total windowed
    detection weight, times the path-amplitude product and the dot overlap.
    Raises NonConvergence when the quadrature cannot certify relative
    accuracy ``tol``.
    """
    if window.width <= 0:
        raise DomainError("gamma_prime_numeric requires a window of positive width")
    coeff = (
        params.dot_overlap
        * params.amp_h
        * np.conj(params.amp_v)
        * np.exp(1j * (params.phase_h - params.phase_v))
    )
    if coeff == 0:
        return 0j
    ints = _window_integrals(params, window, tol)
    den, den_err = _weighted_norms(params, ints)
    rel_err = ints.cross_err / abs(ints.cross) + den_err / den
    if rel_err > tol:
        raise NonConvergence(
            f"quadrature error {rel_err:.3e} exceeds requested tolerance {tol:.3e}"
        )
    return complex(coeff * ints.cross / den)


def detection_probability(
    params: CascadeParams, window: SpectralWindow, tol: float = 1e-9
) -> float:
    """Fraction of pairs whose second photon falls inside the window."""
    if window.width == 0:
        return 0.0
    ints = _window_integrals(params, window, tol)
    den, _ = _weighted_norms(params, ints)
    full = (
        abs(params.amp_h) ** 2 * 2.0 * np.pi / params.width_h
        + abs(params.amp_v) ** 2 * 2.0 * np.pi / params.width_v
    )
    return min(den / full, 1.0)


def gamma_prime_analytic(x):
    """Narrow-line limit of |gamma'| for window-to-splitting ratio ``x``.

    Valid for 0 < x < 1 (window narrower than the splitting) when the
    radiative width is the smallest energy scale.  Uses log1p so the
    x -> 0 limit of 1/2 is reached without cancellation.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise DomainError("gamma_prime_analytic requires 0 < x < 1")
    out = 0.25 * (1.0 / arr - arr) * (np.log1p(arr) - np.log1p(-arr))
    return out if out.ndim else float(out)


def filtered_density_matrix(
    params: CascadeParams, window: SpectralWindow, tol: float = 1e-9
) -> polstate.TwoQubitDensityMatrix:
    """Two-photon polarization state after the second photon is windowed.

    Populations are the windowed per-path weights; the HH-VV coherence is
    gamma_prime_numeric.  The result is PSD by the Cauchy-Schwarz inequality
    on the window integrals.
    """
    if window.width <= 0:
        raise DomainError("filtered_density_matrix requires a window of positive width")
    ints = _window_integrals(params, window, tol)
    den, _ = _weighted_norms(params, ints)
    p_hh = abs(params.amp_h) ** 2 * ints.norm_h / den
    p_vv = abs(params.amp_v) ** 2 * ints.norm_v / den
    coeff = (
        params.dot_overlap
        * params.amp_h
        * np.conj(params.amp_v)
        * np.exp(1j * (params.phase_h - params.phase_v))
    )
    coherence = complex(coeff * ints.cross / den)
    form = polstate.CascadeForm(p_hh, p_vv, coherence)
    return polstate.from_cascade_form(form)


@dataclass(frozen=True)
class WindowSweep:
    """Erasure figures of merit on a grid of window widths."""

    widths: np.ndarray
    gamma_abs: np.ndarray
    gamma_abs_analytic: np.ndarray  # NaN where the closed form is undefined
    detection_prob: np.ndarray


def sweep_gamma_vs_window(
    params: CascadeParams, w_grid, tol: float = 1e-9
) -> WindowSweep:
    """Evaluate |gamma'|, its narrow-line closed form, and the detection
    probability on a strictly increasing grid of window widths."""
    widths = np.asarray(w_grid, dtype=float)
    if widths.ndim != 1 or widths.size == 0:
        raise DomainError("w_grid must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(widths)) or np.any(widths <= 0):
        raise DomainError("window widths must be finite and positive")
    if np.any(np.diff(widths) <= 0):
        raise DomainError("window widths must be strictly increasing")

    split = abs(params.splitting)
    gamma_abs = np.empty_like(widths)
    analytic = np.full_like(widths, np.nan)
    prob = np.empty_like(widths)
    for i, w in enumerate(widths):
        window = SpectralWindow.centered(params, w)
        try:
            gamma_abs[i] = abs(gamma_prime_numeric(params, window, tol))
            prob[i] = detection_probability(params, window, tol)
        except NonConvergence as exc:
            raise NonConvergence(f"window width {w}: {exc}") from exc
        x = w / split if split > 0 else np.inf
        if 0.0 < x < 1.0:
            analytic[i] = gamma_prime_analytic(x)
    return WindowSweep(widths, gamma_abs, analytic, prob)
