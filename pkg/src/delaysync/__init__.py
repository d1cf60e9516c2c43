"""Simultaneous synchronization and parameter identification of drive/response systems."""

from .adaptation import augmented_law, chen_law, proposed_law
from .analysis import (
    ThresholdReport, cov_estimate, cov_rmse, gram, gram_augmented, lyapunov_joint,
    lyapunov_sync, min_r, time_to_threshold,
)
from .controllers import augmented_controller, chen_controller, proposed_controller
from .models import (
    DimensionError, DivergenceError, ParametricModel, drive_deriv, get_model, lorenz_model,
    register, response_deriv, rossler_model,
)
from .simulator import DelayHistory, SimSetup, Trace, delayed_state, rk4_step, simulate

__version__ = "0.1.0"
