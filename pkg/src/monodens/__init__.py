"""Online monotone density estimation and p-to-e calibration."""

from .densities import (
    BoundsAB,
    DensityError,
    DomainError,
    Linear,
    MonotoneHistogram,
    PiecewiseConstant,
    Quadratic,
    Uniform,
    divergence,
    evaluate,
    expected_log_density,
    inverse_cdf_sample,
    validate,
)
from .evaluation import (
    GoodSetParams,
    LossLedger,
    excess_kl_risk_mc,
    good_set_check,
    regret_vs_offline,
    static_log_loss,
)
from .experts import (
    ExpertClass,
    ExpertGridParams,
    class_size_bound,
    default_factory_class,
    enumerate_expert_class,
    factory_equal_mass_histograms,
    validate_expert_membership,
)
from .grenander import (
    FitError,
    InfeasibleError,
    WeightedCells,
    brute_force_mle_oracle,
    compress,
    discretize_to_net,
    fit_constrained,
    fit_unconstrained,
    fit_unconstrained_floored,
)
from .calibration import (
    EProcess,
    OnlineCalibrator,
    OracleCalibrator,
    StaticCalibrator,
    log_wealth_rate_gap,
    make_calibrator,
    run_sequential_test,
    step,
)
from .online import EAState, OGState, OnlineConfig, ea_stream, og_stream, run_online
from .sim import ScenarioConfig, run_experiment, sample_path, write_outputs

__version__ = "0.1.0"
