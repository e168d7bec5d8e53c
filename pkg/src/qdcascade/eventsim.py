"""Time-tagged photon-pair simulation and coincidence analysis.

Pairs are emitted by a pulsed-free (continuous-wave) pump: cascade starts
form a Poisson process, but pump events arriving while a cascade is still
in flight are rejected (the emitter is busy), which reproduces the
antibunching dip around zero delay.  The first photon is emitted after an
exponential wait with the upper-state lifetime, the second after a further
exponential wait with the intermediate-state lifetime.

Energies use the cascade line shapes (sum of pair energies is Lorentzian
around the upper transition; second-photon energy is the two-line doublet).
Delay histograms use the convention that positive delay means the second
photon was detected after the first, so the cascade peak decays on the
positive side with the intermediate-state lifetime.

Times are in ns, energies in micro-eV; HBAR_UEV_NS converts between
radiative width and lifetime.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from . import kernels, polstate, tomography
from .cascade import CascadeParams, SpectralWindow, filtered_density_matrix
from .errors import BinMismatch, DomainError, FitFailed

__all__ = [
    "HBAR_UEV_NS",
    "RateModelParams",
    "HistogramConfig",
    "TimeTagRun",
    "EventStream",
    "CorrelationHistogram",
    "lifetime_from_width",
    "width_from_lifetime",
    "sample_pair_energies",
    "apply_window",
    "sample_polarization",
    "generate_timetags",
    "build_event_stream",
    "correlate",
    "reduced_correlation",
    "extract_lifetime",
    "simulate_filtered_hbt",
    "export_events_csv",
    "export_histogram_csv",
]

#: hbar in micro-eV * ns (658.2119 micro-eV * fs).
HBAR_UEV_NS = 0.6582119


def lifetime_from_width(width_uev: float) -> float:
    """Radiative lifetime (ns) of a transition with the given width (ueV)."""
    return HBAR_UEV_NS / width_uev


def width_from_lifetime(lifetime_ns: float) -> float:
    return HBAR_UEV_NS / lifetime_ns


@dataclass(frozen=True)
class RateModelParams:
    """Pump and decay rates of the emitter plus uncorrelated background."""

    pump_rate_per_ns: float = 5e-3
    lifetime_xx_ns: float = 0.4
    lifetime_x_ns: float = 0.8
    background_rate_per_ns: float = 0.0

    def __post_init__(self):
        if self.pump_rate_per_ns < 0 or self.background_rate_per_ns < 0:
            raise DomainError("rates must be non-negative")
        if self.lifetime_xx_ns <= 0 or self.lifetime_x_ns <= 0:
            raise DomainError("lifetimes must be positive")


@dataclass(frozen=True)
class HistogramConfig:
    """Uniform delay binning over [-tau_max, tau_max)."""

    bin_width_ns: float = 0.05
    tau_max_ns: float = 8.0

    def __post_init__(self):
        if self.bin_width_ns <= 0 or self.tau_max_ns <= 0:
            raise DomainError("bin width and delay range must be positive")
        half = self.tau_max_ns / self.bin_width_ns
        if abs(half - round(half)) > 1e-9:
            raise DomainError("tau_max_ns must be an integer multiple of bin_width_ns")

    @property
    def nbins(self) -> int:
        return 2 * int(round(self.tau_max_ns / self.bin_width_ns))

    @property
    def bin_centers(self) -> np.ndarray:
        return -self.tau_max_ns + (np.arange(self.nbins) + 0.5) * self.bin_width_ns


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_pair_energies(params: CascadeParams, n: int, seed=0) -> np.ndarray:
    """Draw n (first-photon, second-photon) energy pairs from the cascade.

    The decay path is chosen with probability |amp|^2; the pair-sum energy
    is Lorentzian around the upper transition with the upper width, and the
    second-photon energy is Lorentzian around the chosen intermediate line.
    Returns an (n, 2) array of (e_first, e_second).
    """
    rng = _rng(seed)
    take_h = rng.random(n) < abs(params.amp_h) ** 2
    c2 = 0.5 * np.where(take_h, params.width_h, params.width_v)
    e2_center = np.where(take_h, params.energy_h, params.energy_v)
    e_second = e2_center + c2 * rng.standard_cauchy(n)
    e_sum = params.energy_upper + 0.5 * params.width_upper * rng.standard_cauchy(n)
    return np.column_stack((e_sum - e_second, e_second))


def apply_window(pairs: np.ndarray, window: SpectralWindow):
    """Keep pairs whose second photon lies inside the window.

    Returns (accepted_pairs, acceptance_fraction); the fraction estimates
    the cascade module's detection probability.
    """
    pairs = np.asarray(pairs, dtype=float).reshape(-1, 2)
    if pairs.shape[0] == 0:
        return pairs, 0.0
    mask = np.abs(pairs[:, 1] - window.center) <= 0.5 * window.width
    return pairs[mask], float(mask.mean())


def sample_polarization(rho, analyzer_pair, n: int, seed=0) -> np.ndarray:
    """Per-pair analyzer outcomes; returns (n, 2) booleans (pass1, pass2).

    Joint outcome probabilities follow the Born rule for the four
    pass/block projector combinations of the two analyzers.
    """
    s1, s2 = analyzer_pair
    m = polstate.as_matrix(rho)
    eye = np.eye(2, dtype=complex)
    v1 = tomography.JONES[s1]
    v2 = tomography.JONES[s2]
    p1 = np.outer(v1, v1.conj())
    p2 = np.outer(v2, v2.conj())
    probs = np.array(
        [
            np.einsum("ij,ji->", np.kron(a, b), m).real
            for a in (p1, eye - p1)
            for b in (p2, eye - p2)
        ]
    )
    probs = np.maximum(probs, 0.0)
    total = probs.sum()
    if abs(total - 1.0) > 1e-6:
        raise DomainError(f"outcome probabilities sum to {total}, not 1")
    probs /= total
    outcome = _rng(seed).choice(4, size=n, p=probs)
    return np.column_stack((outcome < 2, outcome % 2 == 0))


@dataclass(frozen=True)
class TimeTagRun:
    """Emission times of accepted cascades plus background detections."""

    t_first: np.ndarray
    t_second: np.ndarray
    background_arm1: np.ndarray
    background_arm2: np.ndarray
    duration_ns: float
    n_pump_candidates: int

    @property
    def n_pairs(self) -> int:
        return self.t_first.size


def generate_timetags(rates: RateModelParams, duration_ns: float, seed=0) -> TimeTagRun:
    """Simulate cascade emission times over the run duration.

    Pump arrivals are Poisson; arrivals during an active cascade are
    rejected.  Decay delays are exponential with the configured lifetimes.
    Background detections are uniform in time on each arm.
    """
    if duration_ns < 0:
        raise DomainError("duration must be non-negative")
    rng = _rng(seed)
    rate = rates.pump_rate_per_ns
    if rate > 0 and duration_ns > 0:
        expected = rate * duration_ns
        chunk = int(expected + 6.0 * math.sqrt(expected) + 16.0)
        gaps = rng.exponential(1.0 / rate, chunk)
        t_pump = np.cumsum(gaps)
        while t_pump.size and t_pump[-1] < duration_ns:
            more = np.cumsum(rng.exponential(1.0 / rate, chunk)) + t_pump[-1]
            t_pump = np.concatenate((t_pump, more))
        t_pump = t_pump[t_pump <= duration_ns]
    else:
        t_pump = np.empty(0)
    n_candidates = t_pump.size
    decay_first = rng.exponential(rates.lifetime_xx_ns, n_candidates)
    decay_second = rng.exponential(rates.lifetime_x_ns, n_candidates)
    accepted = kernels.accept_cascades(t_pump, decay_first, decay_second)
    t_first = (t_pump + decay_first)[accepted]
    t_second = (t_pump + decay_first + decay_second)[accepted]

    def background():
        n_bg = rng.poisson(rates.background_rate_per_ns * duration_ns)
        return np.sort(rng.uniform(0.0, duration_ns, n_bg))

    return TimeTagRun(
        t_first=t_first,
        t_second=t_second,
        background_arm1=background(),
        background_arm2=background(),
        duration_ns=float(duration_ns),
        n_pump_candidates=int(n_candidates),
    )


@dataclass(frozen=True)
class EventStream:
    """Detected events: arm index (1 or 2), time, energy, polarizer label.

    Background events carry NaN energy.  Sorted by time.
    """

    arm: np.ndarray
    t_ns: np.ndarray
    energy_uev: np.ndarray
    pol: np.ndarray


def build_event_stream(
    run: TimeTagRun,
    energies: np.ndarray | None = None,
    outcomes: np.ndarray | None = None,
    analyzers=None,
) -> EventStream:
    """Assemble per-arm detection records from a time-tag run.

    ``energies`` ((n_pairs, 2), optional) attaches photon energies;
    ``outcomes`` ((n_pairs, 2) booleans, optional) keeps only pair photons
    that passed the arm's analyzer; ``analyzers`` labels detected events
    (background included - it reaches the detector through the same
    polarizer).
    """
    n = run.n_pairs
    keep1 = outcomes[:, 0] if outcomes is not None else np.ones(n, dtype=bool)
    keep2 = outcomes[:, 1] if outcomes is not None else np.ones(n, dtype=bool)
    e1 = energies[:, 0] if energies is not None else np.full(n, np.nan)
    e2 = energies[:, 1] if energies is not None else np.full(n, np.nan)
    lab1 = analyzers[0] if analyzers is not None else ""
    lab2 = analyzers[1] if analyzers is not None else ""

    arm = np.concatenate(
        (
            np.ones(int(keep1.sum()), dtype=np.int8),
            np.full(int(keep2.sum()), 2, dtype=np.int8),
            np.ones(run.background_arm1.size, dtype=np.int8),
            np.full(run.background_arm2.size, 2, dtype=np.int8),
        )
    )
    t = np.concatenate(
        (run.t_first[keep1], run.t_second[keep2], run.background_arm1, run.background_arm2)
    )
    energy = np.concatenate(
        (
            e1[keep1],
            e2[keep2],
            np.full(run.background_arm1.size, np.nan),
            np.full(run.background_arm2.size, np.nan),
        )
    )
    pol = np.concatenate(
        (
            np.full(int(keep1.sum()), lab1, dtype="<U1"),
            np.full(int(keep2.sum()), lab2, dtype="<U1"),
            np.full(run.background_arm1.size, lab1, dtype="<U1"),
            np.full(run.background_arm2.size, lab2, dtype="<U1"),
        )
    )
    order = np.argsort(t, kind="stable")
    return EventStream(arm[order], t[order], energy[order], pol[order])


@dataclass(frozen=True)
class CorrelationHistogram:
    """Cross-arm delay histogram (delay = arm-2 time minus arm-1 time)."""

    bin_centers_ns: np.ndarray
    counts: np.ndarray
    bin_width_ns: float
    tau_max_ns: float
    n_arm1: int
    n_arm2: int
    label: str = ""

    @property
    def total_pairs(self) -> int:
        return int(np.sum(self.counts))


def correlate(
    stream: EventStream, analyzer_pair=None, config: HistogramConfig = HistogramConfig()
) -> CorrelationHistogram:
    """Histogram all cross-arm delays within the configured range.

    When ``analyzer_pair`` is given, only events detected behind those
    polarizer labels enter each arm.
    """
    sel1 = stream.arm == 1
    sel2 = stream.arm == 2
    label = ""
    if analyzer_pair is not None:
        s1, s2 = analyzer_pair
        sel1 &= stream.pol == s1
        sel2 &= stream.pol == s2
        label = f"{s1}{s2}"
    t1 = np.ascontiguousarray(stream.t_ns[sel1])
    t2 = np.ascontiguousarray(stream.t_ns[sel2])
    counts = kernels.coincidence_histogram(t1, t2, config.tau_max_ns, config.nbins)
    return CorrelationHistogram(
        bin_centers_ns=config.bin_centers,
        counts=counts,
        bin_width_ns=config.bin_width_ns,
        tau_max_ns=config.tau_max_ns,
        n_arm1=t1.size,
        n_arm2=t2.size,
        label=label,
    )


def reduced_correlation(
    co: CorrelationHistogram,
    cross_a: CorrelationHistogram,
    cross_b: CorrelationHistogram,
) -> CorrelationHistogram:
    """Co-polarized trace minus the average of the two cross-polarized traces."""
    for other in (cross_a, cross_b):
        if (
            other.counts.shape != co.counts.shape
            or other.bin_width_ns != co.bin_width_ns
            or other.tau_max_ns != co.tau_max_ns
        ):
            raise BinMismatch("correlation histograms have different binnings")
    reduced = co.counts - 0.5 * (cross_a.counts + cross_b.counts)
    return CorrelationHistogram(
        bin_centers_ns=co.bin_centers_ns,
        counts=reduced,
        bin_width_ns=co.bin_width_ns,
        tau_max_ns=co.tau_max_ns,
        n_arm1=co.n_arm1,
        n_arm2=co.n_arm2,
        label=f"reduced({co.label})" if co.label else "reduced",
    )


def extract_lifetime(hist: CorrelationHistogram) -> tuple[float, float]:
    """Fit the positive-delay cascade tail with A*exp(-tau/T) + floor.

    Poisson maximum likelihood over (A, T, floor); a chi-square fit with
    sqrt(counts) weights would bias T low through the empty tail bins.
    Bins within one bin width of zero delay are excluded.  Returns
    (lifetime, standard error from the Fisher information); raises
    FitFailed when the histogram shows no usable decaying structure.
    """
    tau = hist.bin_centers_ns
    sel = tau > hist.bin_width_ns
    x = tau[sel]
    y = hist.counts[sel].astype(float)
    if x.size < 4 or not np.any(y > 0):
        raise FitFailed("not enough positive-delay structure to fit")

    floor0 = max(float(np.median(y[-max(x.size // 4, 1):])), 1e-3)
    amp0 = max(float(y.max()) - floor0, 1.0)
    t0 = max(hist.tau_max_ns / 4.0, hist.bin_width_ns)

    def negll(p):
        amp, lifetime, floor = p
        decay = np.exp(-x / lifetime)
        mu = amp * decay + floor + 1e-12
        f = float(np.sum(mu - y * np.log(mu)))
        resid = 1.0 - y / mu
        grad = np.array(
            [
                np.sum(resid * decay),
                np.sum(resid * amp * decay * x) / lifetime**2,
                np.sum(resid),
            ]
        )
        return f, grad

    res = optimize.minimize(
        negll,
        np.array([amp0, t0, floor0]),
        jac=True,
        method="L-BFGS-B",
        bounds=[(1e-9, None), (hist.bin_width_ns * 1e-3, None), (0.0, None)],
        options={"maxiter": 2000, "ftol": 1e-15, "gtol": 1e-10},
    )
    amp, lifetime, floor = (float(v) for v in res.x)
    if not res.success and np.max(np.abs(res.jac)) > 1e-3:
        raise FitFailed(f"exponential fit did not converge: {res.message}")

    decay = np.exp(-x / lifetime)
    mu = amp * decay + floor + 1e-12
    jac = np.column_stack([decay, amp * decay * x / lifetime**2, np.ones_like(x)])
    fisher = jac.T @ (jac / mu[:, None])
    try:
        cov = np.linalg.inv(fisher)
    except np.linalg.LinAlgError as exc:
        raise FitFailed("singular Fisher information in lifetime fit") from exc
    err = float(np.sqrt(max(cov[1, 1], 0.0)))
    if not (lifetime > 0) or not np.isfinite(err) or err == 0.0 or err > 0.5 * lifetime:
        raise FitFailed(
            f"no decaying structure: lifetime {lifetime:.3g} +- {err:.3g} ns"
        )
    return lifetime, err


def simulate_filtered_hbt(
    params: CascadeParams,
    window: SpectralWindow,
    rates: RateModelParams,
    analyzer_pair,
    duration_ns: float,
    seed=0,
    rho=None,
) -> EventStream:
    """One polarizer-pair run of the spectrally filtered coincidence setup.

    The second photon passes the window before detection; polarization
    outcomes for windowed pairs follow the filtered two-photon state
    (``rho``; computed from params/window when omitted).  Blocked pairs
    still produce a first-photon detection with the unfiltered marginal
    pass probability.
    """
    rng = _rng(seed)
    run = generate_timetags(rates, duration_ns, rng)
    n = run.n_pairs
    energies = sample_pair_energies(params, n, rng)
    in_window = np.abs(energies[:, 1] - window.center) <= 0.5 * window.width

    if rho is None:
        rho = filtered_density_matrix(params, window)
    outcomes = sample_polarization(rho, analyzer_pair, n, rng)
    # Pairs whose second photon is blocked: arm 1 still fires with the
    # unfiltered marginal probability of its analyzer.
    s1 = analyzer_pair[0]
    v1 = tomography.JONES[s1]
    p1 = np.kron(np.outer(v1, v1.conj()), np.eye(2, dtype=complex))
    marginal = float(
        np.einsum(
            "ij,ji->",
            p1,
            polstate.as_matrix(
                polstate.from_cascade_form(
                    polstate.CascadeForm(
                        abs(params.amp_h) ** 2, abs(params.amp_v) ** 2, 0.0
                    )
                )
            ),
        ).real
    )
    blocked_pass1 = rng.random(n) < marginal
    pass1 = np.where(in_window, outcomes[:, 0], blocked_pass1)
    pass2 = outcomes[:, 1] & in_window
    return build_event_stream(
        run,
        energies=energies,
        outcomes=np.column_stack((pass1, pass2)),
        analyzers=analyzer_pair,
    )


def export_events_csv(stream: EventStream, path) -> None:
    """Write the stream as CSV with header arm,t_ns,energy_ueV,pol."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["arm", "t_ns", "energy_ueV", "pol"])
        for arm, t, e, pol in zip(stream.arm, stream.t_ns, stream.energy_uev, stream.pol):
            writer.writerow([int(arm), repr(float(t)), repr(float(e)), pol])


def export_histogram_csv(hist: CorrelationHistogram, path) -> None:
    """Write a delay histogram as CSV with header tau_ns,counts."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau_ns", "counts"])
        for tau, c in zip(hist.bin_centers_ns, hist.counts):
            value = int(c) if float(c).is_integer() else repr(float(c))
            writer.writerow([repr(float(tau)), value])
