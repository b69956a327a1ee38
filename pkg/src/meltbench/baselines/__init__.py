"""Traditional downscaling baselines."""

from . import dem, mar, pmw, running_mean
from .dem import DemBandParams, DemFitConfig, fit_threshold_dem, tanh_hat, tanh_hat_grad, threshold_dem_predict
from .mar import MarCalibParams, fit_interpolate_mar, interpolate_mar
from .pmw import PmwThresholdParams, pmw_winter_mean, threshold_pmw
from .running_mean import RunningMeanParams, fit_running_mean, running_mean_sar

MODEL_NAMES = ("running_mean_sar", "interpolate_mar", "threshold_pmw", "threshold_dem")
N_PARAMS = {
    "running_mean_sar": running_mean.N_PARAMS,
    "interpolate_mar": mar.N_PARAMS,
    "threshold_pmw": pmw.N_PARAMS,
    "threshold_dem": dem.N_PARAMS,
}
