"""Two-stage residual inclusion instrumental-variable estimation under additive hazards."""

__version__ = "0.1.0"

from .censoring import CensoringKM, WeightTable, build_weights, fit_censoring_km  # noqa: E402
from .competing import CompetingFit, baseline_subdist_cov, fit_competing, predict_cif  # noqa: E402
from .data import (  # noqa: E402
    AreaPanel,
    Dataset,
    SurvivalRecord,
    attach_area_instrument,
    construct_area_instrument,
    load_area_panel,
    load_dataset,
    make_dataset,
)
from .errors import (  # noqa: E402
    ConvergenceError,
    DataError,
    IVAHError,
    NegativeHazardError,
    NumericalError,
    SeparationError,
)
from .first_stage import FirstStageFit, LinkKind, fit_first_stage  # noqa: E402
from .simulation import (  # noqa: E402
    ReplicationReport,
    ScenarioConfig,
    generate_competing,
    generate_survival,
    run_replications,
)
from .stepfun import StepFunction  # noqa: E402
from .survival import (  # noqa: E402
    PredictionCurve,
    SecondStageFit,
    baseline_cumhaz_cov,
    fit_additive_hazards,
    fit_survival,
    predict_survival,
)
