"""Two-photon polarization tomography from coincidence counts.

Settings are per-arm polarizer labels from {H, V, D, A, R, L} with
D = (H+V)/sqrt2, A = (H-V)/sqrt2, R = (H-iV)/sqrt2, L = (H+iV)/sqrt2.
The default set is the 16 pairs from {H, V, D, R} per arm, which spans the
space of two-qubit observables.

Counts follow Poisson statistics around weight * Tr(P rho).  Reconstruction
is either direct linear inversion (fast, not necessarily PSD) or maximum
likelihood over a triangular-factor parameterization rho = L L^dag / Tr,
which is PSD by construction.  Records with fewer than 10 counts (possible
after background subtraction) enter the likelihood through a Gaussian tail
so the objective stays finite for negative values.
"""

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from . import kernels, polstate
from .errors import InvalidForm, NonConvergence, SingularDesign

__all__ = [
    "JONES",
    "DEFAULT_SETTINGS",
    "MeasurementRecord",
    "TomographyResult",
    "BootstrapSummary",
    "projector",
    "expected_rate",
    "simulate_counts",
    "linear_inversion",
    "mle_reconstruct",
    "bootstrap_uncertainty",
    "reconstruct_with_uncertainty",
    "write_records",
    "read_records",
]

_S = 1.0 / math.sqrt(2.0)

JONES = {
    "H": np.array([1.0, 0.0], dtype=complex),
    "V": np.array([0.0, 1.0], dtype=complex),
    "D": np.array([_S, _S], dtype=complex),
    "A": np.array([_S, -_S], dtype=complex),
    "R": np.array([_S, -1j * _S], dtype=complex),
    "L": np.array([_S, 1j * _S], dtype=complex),
}

DEFAULT_SETTINGS = tuple((a, b) for a in "HVDR" for b in "HVDR")

_PAULI4 = [np.eye(2, dtype=complex), *polstate.PAULI]


def _check_label(label: str) -> str:
    if label not in JONES:
        raise InvalidForm(f"unknown polarizer label {label!r}; expected one of HVDARL")
    return label


@dataclass(frozen=True)
class MeasurementRecord:
    """One polarizer setting with its (possibly background-subtracted) counts.

    ``weight`` is the exposure: expected counts are weight * Tr(P rho).
    """

    arm1: str
    arm2: str
    counts: float
    weight: float

    def __post_init__(self):
        _check_label(self.arm1)
        _check_label(self.arm2)
        if not self.weight > 0:
            raise InvalidForm(f"weight must be positive, got {self.weight}")
        if self.counts < -5.0 * math.sqrt(abs(self.counts) + 1.0):
            raise InvalidForm(
                f"counts {self.counts} are more negative than subtraction noise allows"
            )


def projector(arm1: str, arm2: str) -> np.ndarray:
    """Coincidence projector |arm1><arm1| x |arm2><arm2|."""
    v1 = JONES[_check_label(arm1)]
    v2 = JONES[_check_label(arm2)]
    return np.kron(np.outer(v1, v1.conj()), np.outer(v2, v2.conj()))


def expected_rate(rho, arm1: str, arm2: str) -> float:
    """Born-rule coincidence probability Tr(P rho) for one setting."""
    m = polstate.as_matrix(rho)
    return float(np.einsum("ij,ji->", projector(arm1, arm2), m).real)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def simulate_counts(rho, settings=DEFAULT_SETTINGS, n_per_setting: float = 1e5, seed=0):
    """Draw Poisson counts for each setting; returns MeasurementRecords."""
    rng = _rng(seed)
    m = polstate.as_matrix(rho)
    records = []
    for s1, s2 in settings:
        mu = n_per_setting * max(expected_rate(m, s1, s2), 0.0)
        records.append(
            MeasurementRecord(s1, s2, float(rng.poisson(mu)), float(n_per_setting))
        )
    return records


def _stacks(records):
    projs = np.ascontiguousarray(
        [projector(r.arm1, r.arm2) for r in records], dtype=np.complex128
    )
    counts = np.array([r.counts for r in records], dtype=float)
    weights = np.array([r.weight for r in records], dtype=float)
    return projs, counts, weights


def _pauli_design(projs: np.ndarray) -> np.ndarray:
    """Real design matrix D[k, m] = Tr(P_k B_m)/4 over the 16 Pauli products."""
    basis = [np.kron(a, b) for a in _PAULI4 for b in _PAULI4]
    design = np.empty((projs.shape[0], 16))
    for m, bm in enumerate(basis):
        design[:, m] = np.einsum("kij,ji->k", projs, bm).real / 4.0
    return design


def linear_inversion(records) -> np.ndarray:
    """Least-squares inversion of counts/weight = Tr(P rho).

    Hermitian and unit trace by construction; not necessarily PSD.  Raises
    SingularDesign when the settings do not span all 16 observables.
    """
    projs, counts, weights = _stacks(records)
    design = _pauli_design(projs)
    coeffs, _, rank, _ = np.linalg.lstsq(design, counts / weights, rcond=None)
    if rank < 16:
        raise SingularDesign(
            f"settings span only {rank} of 16 two-qubit observables; "
            "add non-redundant polarizer pairs"
        )
    basis = [np.kron(a, b) for a in _PAULI4 for b in _PAULI4]
    rho = sum(c * bm for c, bm in zip(coeffs, basis)) / 4.0
    trace = rho.trace().real
    if trace <= 0:
        raise InvalidForm("counts are inconsistent with a positive total rate")
    return rho / trace


@dataclass(frozen=True)
class TomographyResult:
    """Reconstructed state with its cascade-family projection and diagnostics.

    Uncertainty fields are None until filled by bootstrap_uncertainty (see
    reconstruct_with_uncertainty).
    """

    rho: np.ndarray
    cascade_fit: polstate.CascadeForm
    fit_residual: float
    log_likelihood: float
    n_iterations: int
    std_gamma_re: float | None = None
    std_gamma_im: float | None = None
    significance_sigmas: float | None = None


@dataclass(frozen=True)
class BootstrapSummary:
    std_gamma_re: float
    std_gamma_im: float
    significance_sigmas: float
    n_failed: int


def _psd_start(rho: np.ndarray) -> np.ndarray:
    """Clip eigenvalues to a small floor and return the Cholesky factor."""
    vals, vecs = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    vals = np.maximum(vals, 1e-6)
    m = (vecs * vals) @ vecs.conj().T
    m /= m.trace().real
    return np.linalg.cholesky(m)


def _gradient_jacobian(objective, x: np.ndarray) -> np.ndarray:
    """Central-difference Jacobian of the objective gradient (the Hessian)."""
    n = x.size
    jac = np.empty((n, n))
    steps = 1e-6 * np.maximum(np.abs(x), 1.0)
    for i in range(n):
        probe = np.zeros(n)
        probe[i] = steps[i]
        _, g_up = objective(x + probe)
        _, g_dn = objective(x - probe)
        jac[:, i] = (np.asarray(g_up) - np.asarray(g_dn)) / (2.0 * steps[i])
    return jac


def mle_reconstruct(
    records,
    *,
    init: np.ndarray | None = None,
    grad_tol: float = 1e-9,
    max_iter: int = 10000,
) -> TomographyResult:
    """Maximum-likelihood state reconstruction.

    Deterministic quasi-Newton (limited-memory BFGS through the kernel
    path, finished with damped Newton steps) on the 16 real
    triangular-factor parameters; the default start is the PSD-projected
    linear inversion.  Raises NonConvergence when the gradient of the
    per-count-normalized objective does not fall below grad_tol within
    max_iter iterations.
    """
    projs, counts, weights = _stacks(records)
    if init is None:
        start = _psd_start(linear_inversion(records))
    else:
        start = _psd_start(polstate.as_matrix(init))
    x0 = kernels.params_from_tril(start)

    def objective(t):
        return kernels.mle_objective(
            t, projs, counts, weights, kernels.GAUSS_COUNT_THRESHOLD
        )

    x, fun, grad, n_iter, stalled = kernels.mle_minimize(
        x0, projs, counts, weights, kernels.GAUSS_COUNT_THRESHOLD, grad_tol, max_iter
    )
    x = np.asarray(x, dtype=float)
    fun = float(fun)
    grad = np.asarray(grad, dtype=float)
    n_iter = int(n_iter)
    # The quasi-Newton line search can stall once objective differences
    # sink below double-precision rounding noise.  The gradient itself is
    # analytic, so finish by driving it to zero with Newton steps solved in
    # the Hessian eigenbasis; the relative eigenvalue floor screens out the
    # factor-scaling gauge direction, and backtracking on the gradient norm
    # guards against overshooting along nearly flat boundary directions.
    polish = 0
    while np.max(np.abs(grad)) > grad_tol and polish < 40 and n_iter < max_iter:
        hess = _gradient_jacobian(objective, x)
        hess = 0.5 * (hess + hess.T)
        evals, evecs = np.linalg.eigh(hess)
        top = float(evals[-1])
        if not np.isfinite(top) or top <= 0.0:
            break
        inv = np.where(evals > 1e-10 * top, 1.0 / np.maximum(evals, 1e-10 * top), 0.0)
        step = -(evecs @ (inv * (evecs.T @ grad)))
        length = float(np.linalg.norm(step))
        if length > 0.5:
            step *= 0.5 / length
        g_sq = float(grad @ grad)
        accepted = False
        for _ in range(8):
            fun_new, grad_new = objective(x + step)
            grad_new = np.asarray(grad_new, dtype=float)
            if np.isfinite(fun_new) and float(grad_new @ grad_new) < g_sq:
                x = x + step
                fun = float(fun_new)
                grad = grad_new
                accepted = True
                break
            step *= 0.25
        polish += 1
        n_iter += 1
        if not accepted:
            break
    grad_inf = float(np.max(np.abs(grad)))
    if grad_inf > grad_tol:
        raise NonConvergence(
            f"MLE gradient {grad_inf:.3e} above tolerance {grad_tol:g} "
            f"after {n_iter} iterations"
            + (" (line search stalled)" if stalled else "")
        )
    ell = kernels.tril_from_params(x)
    s = ell @ ell.conj().T
    rho = s / s.trace().real
    form, residual = polstate.fit_cascade_form(rho)
    norm = max(np.sum(np.maximum(counts, 0.0)), 1.0)
    # The optimizer works on the deviance (log-likelihood relative to the
    # saturated model); add the model-independent part back for reporting.
    big = counts >= kernels.GAUSS_COUNT_THRESHOLD
    saturated = float(np.sum(counts[big] * np.log(counts[big]) - counts[big]))
    return TomographyResult(
        rho=rho,
        cascade_fit=form,
        fit_residual=residual,
        log_likelihood=float(-fun * norm) + saturated,
        n_iterations=n_iter,
    )


def bootstrap_uncertainty(
    records,
    n_resamples: int = 100,
    seed=0,
    *,
    grad_tol: float = 1e-9,
    max_iter: int = 10000,
) -> BootstrapSummary:
    """Parametric bootstrap of the cascade coherence.

    Each resample redraws every record's counts from Poisson around the
    observed value and re-runs the MLE (warm-started from the point
    estimate).  Returns component standard deviations of the coherence and
    the significance |coherence| / sigma_parallel, where sigma_parallel is
    the spread projected on the point-estimate direction.  Raises
    NonConvergence when more than 5% of resamples fail.
    """
    if n_resamples < 100:
        raise InvalidForm("n_resamples must be at least 100")
    point = mle_reconstruct(records, grad_tol=grad_tol, max_iter=max_iter)
    gamma_hat = point.cascade_fit.coherence
    rng = _rng(seed)
    lam = np.maximum(np.array([r.counts for r in records], dtype=float), 0.0)
    draws = rng.poisson(lam=lam, size=(n_resamples, lam.size)).astype(float)

    gammas = []
    n_failed = 0
    for b in range(n_resamples):
        resampled = [replace(r, counts=draws[b, k]) for k, r in enumerate(records)]
        try:
            result = mle_reconstruct(
                resampled, init=point.rho, grad_tol=grad_tol, max_iter=max_iter
            )
        except (NonConvergence, SingularDesign, InvalidForm):
            n_failed += 1
            continue
        gammas.append(result.cascade_fit.coherence)
    if n_failed > 0.05 * n_resamples:
        raise NonConvergence(
            f"{n_failed}/{n_resamples} bootstrap resamples failed to converge"
        )

    gammas = np.asarray(gammas)
    std_re = float(np.std(gammas.real, ddof=1))
    std_im = float(np.std(gammas.imag, ddof=1))
    if abs(gamma_hat) == 0.0:
        significance = 0.0
    else:
        direction = gamma_hat / abs(gamma_hat)
        parallel = (gammas * np.conj(direction)).real
        sigma_par = max(float(np.std(parallel, ddof=1)), 1e-12)
        significance = abs(gamma_hat) / sigma_par
    return BootstrapSummary(std_re, std_im, significance, n_failed)


def reconstruct_with_uncertainty(
    records,
    n_resamples: int = 100,
    seed=0,
    *,
    grad_tol: float = 1e-9,
    max_iter: int = 10000,
) -> TomographyResult:
    """MLE point estimate with bootstrap uncertainty fields filled in."""
    point = mle_reconstruct(records, grad_tol=grad_tol, max_iter=max_iter)
    boot = bootstrap_uncertainty(
        records, n_resamples, seed, grad_tol=grad_tol, max_iter=max_iter
    )
    return replace(
        point,
        std_gamma_re=boot.std_gamma_re,
        std_gamma_im=boot.std_gamma_im,
        significance_sigmas=boot.significance_sigmas,
    )


_CSV_HEADER = ["arm1", "arm2", "counts", "weight"]


def write_records(records, path) -> None:
    """Serialize records as CSV with header arm1,arm2,counts,weight."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_HEADER)
        for r in records:
            writer.writerow([r.arm1, r.arm2, repr(r.counts), repr(r.weight)])


def read_records(path):
    """Parse a records CSV; raises ValueError with the offending line."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != _CSV_HEADER:
            raise ValueError(
                f"{path}: expected header {','.join(_CSV_HEADER)!r}, got {header!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                records.append(
                    MeasurementRecord(
                        row[0].strip(), row[1].strip(), float(row[2]), float(row[3])
                    )
                )
            except (ValueError, InvalidForm) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return records
