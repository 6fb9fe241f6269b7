"""Design-based and model-assisted estimation of annual carbon-stock loss.

The package turns panel-structured forest inventory plots, a forest cover loss
map and (optionally) airborne laser canopy heights into basic-expansion and
model-assisted totals with variance estimates, and ships a Monte Carlo harness
to check the estimators' design properties.
"""

from cstockloss.errors import (
    CstockError,
    DegenerateModelError,
    EstimationError,
    GridError,
    InputError,
    ValidationFailure,
)
from cstockloss.survey import (
    ClusterPlot,
    DomainSelector,
    Stratum,
    SubPlotRecord,
    SurveyDataset,
    cluster_domain_mean,
    load_dataset,
    load_strata,
    split_panels,
    write_dataset,
    write_strata,
)
from cstockloss.design import (
    EstimateResult,
    EstimatorTag,
    average_annual,
    be_annual,
    be_estimate,
    be_total,
    be_variance,
    stratified_combine,
)
from cstockloss.models import (
    AlsFclModel,
    CstockModelParams,
    FclModelParams,
    OutlierRule,
    PanelWindow,
    als_eligible,
    fit_cstock_model,
    fit_fcl_model,
    predict_subplot,
    recode_fcl,
)
from cstockloss.assisted import (
    PopulationAggregates,
    ResidualSample,
    best_combination,
    ma_total,
    relative_efficiency,
    residuals,
    synthetic_total_als_fcl,
    synthetic_total_fcl,
)
from cstockloss.grid import GridRaster, aggregate, load_grid, synthetic_map, write_grid

__version__ = "0.1.0"
