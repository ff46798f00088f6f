"""Price impact as dissipated work: round-trip P&L laws, fluctuation bounds and Gibbs ensembles."""

__version__ = "0.1.0"

from .exceptions import (
    AsymmetricImpactWarning,
    ConvergenceError,
    InvalidInputError,
    NonRoundTripError,
)
from .impact_models import (
    CallableImpact,
    ImpactModel,
    LinearImpact,
    PermanentImpact,
    PowerLawImpact,
    convexity_check,
    instantaneous_cost,
    model_from_config,
    model_to_config,
    perm_impact_eval,
    temp_impact_eval,
)
from .strategies import (
    Strategy,
    build_from_samples,
    build_piecewise_constant,
    build_ramp,
    build_square_wave,
    build_triangular,
    build_zero,
    inventory,
    position_variance,
    random_roundtrip,
    rate_power_integral,
    read_strategy_csv,
    roundtrip_check,
    stack_assets,
    write_strategy_csv,
)
from .thermo_core import (
    ExponentialKernel,
    PnLStats,
    PowerLawKernel,
    analyze,
    chernoff_bound,
    chernoff_optimum,
    dissipated_work,
    general_work_lagrangian,
    heat_variance,
    market_temperature,
    multi_asset_bound,
    pnl_distribution,
    power_law_bound,
    profit_probability_exact,
    scaling_bound,
    second_law_verify,
    transient_work,
)
from .monte_carlo import (
    MCResult,
    SimConfig,
    convergence_study,
    mc_profit_probability,
    pathwise_decomposition_check,
    simulate_paths,
)
from .ensemble import (
    GibbsTemperatureEstimator,
    StrategyEnsemble,
    StrategyKMeans,
    beta_free_energy,
    beta_limits,
    calibrate_beta,
    cluster_strategies,
    decomposition_residual,
    gibbs_state,
    identity_checks,
)
from .empirical import (
    ImpactCurveRegressor,
    TradeTape,
    bound_violation_report,
    convexity_test,
    estimate_impact_curve,
    estimate_work_variance,
    read_tape_csv,
    realized_variance,
    synthesize_tape,
    write_tape_csv,
)
