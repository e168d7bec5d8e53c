"""Two-photon polarization states from an HH/VV radiative cascade.

Basis order is (HH, HV, VH, VV) with H the first linear-polarization basis
state of each arm.  The cascade family of states is diagonal in this basis
except for a single HH-VV coherence:

    [[p_hh, 0, 0, coherence],
     [0,    0, 0, 0        ],
     [0,    0, 0, 0        ],
     [conj(coherence), 0, 0, p_vv]]

Entanglement witnesses implemented here: the minimum eigenvalue of the
partial transpose (Peres criterion) and the maximal CHSH combination
(Horodecki criterion).
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidForm

__all__ = [
    "TwoQubitDensityMatrix",
    "CascadeForm",
    "from_cascade_form",
    "fit_cascade_form",
    "ppt_min_eigenvalue",
    "bell_value_cascade",
    "bell_value_general",
]

_ATOL = 1e-9

PAULI = (
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)


@dataclass(frozen=True)
class TwoQubitDensityMatrix:
    """Validated 4x4 density matrix (Hermitian, unit trace, PSD within tol)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (4, 4):
            raise InvalidForm(f"expected a 4x4 matrix, got shape {m.shape}")
        if not np.allclose(m, m.conj().T, atol=_ATOL):
            raise InvalidForm("matrix is not Hermitian")
        if abs(m.trace().real - 1.0) > 1e-6:
            raise InvalidForm(f"trace {m.trace().real!r} != 1")
        if np.linalg.eigvalsh(m).min() < -1e-7:
            raise InvalidForm("matrix has a significantly negative eigenvalue")
        object.__setattr__(self, "matrix", m)


def as_matrix(rho) -> np.ndarray:
    """Accept either a raw ndarray or a TwoQubitDensityMatrix."""
    if isinstance(rho, TwoQubitDensityMatrix):
        return rho.matrix
    return np.asarray(rho, dtype=complex)


@dataclass(frozen=True)
class CascadeForm:
    """Cascade-family state parameters: HH/VV populations and their coherence."""

    p_hh: float
    p_vv: float
    coherence: complex

    def __post_init__(self):
        if self.p_hh < -_ATOL or self.p_vv < -_ATOL:
            raise InvalidForm("populations must be non-negative")
        if abs(self.p_hh + self.p_vv - 1.0) > 1e-6:
            raise InvalidForm(f"populations sum to {self.p_hh + self.p_vv}, expected 1")
        if abs(self.coherence) ** 2 > self.p_hh * self.p_vv + 1e-12:
            raise InvalidForm(
                "coherence magnitude exceeds sqrt(p_hh * p_vv); state not PSD"
            )


def from_cascade_form(form: CascadeForm) -> TwoQubitDensityMatrix:
    """Embed cascade-family parameters as a full density matrix."""
    m = np.zeros((4, 4), dtype=complex)
    m[0, 0] = form.p_hh
    m[3, 3] = form.p_vv
    m[0, 3] = form.coherence
    m[3, 0] = np.conj(form.coherence)
    return TwoQubitDensityMatrix(m)


def fit_cascade_form(rho) -> tuple[CascadeForm, float]:
    """Project a density matrix onto the cascade family.

    Non-family entries are dropped, the corner coherences are symmetrized,
    and the HH/VV populations are renormalized to sum to one.  Returns the
    fitted parameters and the Frobenius norm of the discarded part.
    """
    m = as_matrix(rho)
    p_hh = m[0, 0].real
    p_vv = m[3, 3].real
    total = p_hh + p_vv
    if total <= _ATOL:
        raise InvalidForm("no population in the HH/VV subspace")
    coherence = 0.5 * (m[0, 3] + np.conj(m[3, 0]))
    # Renormalizing the populations can only loosen the |coherence| bound,
    # but guard against float dust for inputs right on the PSD edge.
    cap = np.sqrt(max(p_hh * p_vv, 0.0)) / total
    if abs(coherence) > cap:
        coherence *= cap / abs(coherence)
    form = CascadeForm(p_hh / total, p_vv / total, coherence)
    residual = float(np.linalg.norm(m - from_cascade_form(form).matrix))
    return form, residual


def _partial_transpose_second(m: np.ndarray) -> np.ndarray:
    # Transpose the second-qubit indices: rho[i j, k l] -> rho[i l, k j].
    return m.reshape(2, 2, 2, 2).transpose(0, 3, 2, 1).reshape(4, 4)


def ppt_min_eigenvalue(rho) -> float:
    """Minimum eigenvalue of the partial transpose; negative iff entangled."""
    return float(np.linalg.eigvalsh(_partial_transpose_second(as_matrix(rho))).min())


def bell_value_cascade(coherence: complex) -> float:
    """Maximal CHSH value 2*sqrt(1 + 4|coherence|^2) for a cascade-family state."""
    return 2.0 * np.sqrt(1.0 + 4.0 * abs(coherence) ** 2)


def bell_value_general(rho) -> float:
    """Maximal CHSH value of an arbitrary two-qubit state (Horodecki criterion).

    Builds the 3x3 correlation matrix T_ij = Tr(rho sigma_i x sigma_j) and
    returns 2*sqrt of the sum of the two largest eigenvalues of T^T T.
    Values below the classical threshold 2 are reported as-is.
    """
    m = as_matrix(rho)
    t = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            t[i, j] = np.trace(m @ np.kron(PAULI[i], PAULI[j])).real
    eigs = np.linalg.eigvalsh(t.T @ t)
    return float(2.0 * np.sqrt(eigs[-1] + eigs[-2]))
