"""Simulation toolkit linking eigenstate matrix-element statistics to
autocorrelation dynamics in spin-1 chains.

Subpackages build chain Hamiltonians (lattice), exact spectra and binned
matrix-element profiles (spectra), typicality autocorrelators (typicality),
fits and frequency-domain analysis (analysis), joint cumulant overlap
orders (moments), an independent hydrodynamic reference solution (hydro),
and a pipeline orchestrator with a command line front end (workflow, cli).
"""

from .errors import CapExceeded, ConfigError, TaskError
from .lattice import (
    PRESETS,
    ObservableDescriptor,
    SparseOperator,
    SpinChainSpec,
    apply,
    build_hamiltonian,
    build_observable,
    commutator_observable,
    hilbert_dim,
    kac_normalization,
    make_spec,
    preset_spec,
    site_observable,
    spectral_bounds,
    transverse_string,
)
from .spectra import (
    DiagonalProfile,
    FrequencyProfile,
    SectorBasis,
    SectorLabel,
    Spectrum,
    diagonal_ensemble_variance,
    diagonal_matrix_elements,
    diagonal_profile,
    diagonalize,
    diagonalize_sector,
    ed_autocorrelator,
    eigen_blocks,
    f2_binned,
    gap_ratio,
    sector_decompose,
)
from .typicality import (
    TimeSeries,
    TypicalityRun,
    chebyshev_propagate,
    default_realizations,
    dqt_autocorrelator,
    haar_state,
    make_run,
    realization_scaling_check,
)
from .analysis import (
    InequalityVerdict,
    PowerLawFit,
    SaturationValue,
    finite_size_fit,
    fourier_f2,
    oscillation_filter,
    powerlaw_fit,
    roi_check,
    saturation_value,
    singular_remainder,
    smooth_part_estimate,
)
from .moments import (
    MomentTable,
    OverlapOrderResult,
    connected_cumulants,
    kappa_constant,
    moment_table,
    moment_trace,
    overlap_order,
    taylor_prefactor,
    variance_prediction,
)
from .hydro import (
    HydroSetup,
    correlator_series,
    decay_exponent,
    evolve_correlator,
    plateau_scaling,
)
from .workflow import (
    RunConfig,
    RunManifest,
    from_ini,
    from_ini_text,
    parse_observable,
    rerun,
    resolved,
    run,
    task_seed,
    to_ini,
    to_json,
)
from .store import emit_plots, load_or_build_blocks, read_csv, write_csv

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
