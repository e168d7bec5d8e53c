"""Entangled photon pairs from a semiconductor radiative cascade.

Spectral which-path erasure, two-photon polarization states and their
entanglement witnesses, polarization tomography with maximum-likelihood
reconstruction, and time-tagged coincidence simulation.
"""

from .cascade import (
    CascadeParams,
    SpectralWindow,
    WindowSweep,
    detection_probability,
    filtered_density_matrix,
    gamma_prime_analytic,
    gamma_prime_numeric,
    joint_amplitude,
    make_params,
    sweep_gamma_vs_window,
)
from .errors import (
    BinMismatch,
    DomainError,
    FitFailed,
    InvalidForm,
    NonConvergence,
    QDCascadeError,
    SingularDesign,
)
from .eventsim import (
    HBAR_UEV_NS,
    CorrelationHistogram,
    EventStream,
    HistogramConfig,
    RateModelParams,
    TimeTagRun,
    apply_window,
    build_event_stream,
    correlate,
    export_events_csv,
    export_histogram_csv,
    extract_lifetime,
    generate_timetags,
    lifetime_from_width,
    reduced_correlation,
    sample_pair_energies,
    sample_polarization,
    simulate_filtered_hbt,
    width_from_lifetime,
)
from .polstate import (
    CascadeForm,
    TwoQubitDensityMatrix,
    bell_value_cascade,
    bell_value_general,
    fit_cascade_form,
    from_cascade_form,
    ppt_min_eigenvalue,
)
from .tomography import (
    DEFAULT_SETTINGS,
    BootstrapSummary,
    MeasurementRecord,
    TomographyResult,
    bootstrap_uncertainty,
    expected_rate,
    linear_inversion,
    mle_reconstruct,
    projector,
    read_records,
    reconstruct_with_uncertainty,
    simulate_counts,
    write_records,
)

__version__ = "0.1.0"
