"""Twin-beam counting statistics and interferometer visibility toolkit."""

__version__ = "0.1.0"

from .analysis import (
    BinnedCounts,
    CellGrid,
    CellSelection,
    CellStats,
    CountHistogram,
    bin_events,
    bootstrap_std,
    cell_histograms,
    filter_cells,
    pooled_counts_histogram,
    sum_histograms,
)
from .distributions import (
    DetectorModel,
    Pmf,
    TmsvParams,
    binomial_thin,
    detected_mean,
    multimode_pmf,
    pmf_moments,
    poisson_pmf,
    thermal_pmf,
)
from .fitting import (
    DegeneracyFit,
    DipFit,
    FitFailureError,
    VisibilityPrediction,
    fit_degeneracy,
    fit_gaussian_dip,
    predict_visibility,
    propagate_visibility_uncertainty,
)
from .fock import (
    JointPmf,
    OverlapModel,
    TruncatedPureState,
    UndefinedVisibilityError,
    beamsplitter,
    build_tmsv,
    cross_correlation,
    hom_joint_pmf,
    joint_counts,
    marginal_counts,
    thermal_input_visibility,
    visibility_oracle,
)
from .simulate import (
    EventTable,
    HomRun,
    HomScanConfig,
    ShotRecord,
    SourceConfig,
    correlation_scan,
    derive_shot_seed,
    read_event_table,
    simulate_counting_run,
    simulate_hom_run,
    write_event_table,
    write_hom_events,
)

__all__ = [name for name in dir() if not name.startswith("_")]
