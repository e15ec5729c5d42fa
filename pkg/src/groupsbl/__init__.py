"""Joint sparse channel recovery and user grouping toolkit.

Core pieces: steering/dictionary construction for linear and planar
arrays, a grouped clustered-channel simulator, the alternating
variational engine with optional off-grid angle refinement, baseline
recoverers, and a seeded Monte Carlo experiment harness.  A FastAPI
service (``groupsbl.service``) and a thin-client CLI (``groupsbl.cli``)
wrap the same functionality.
"""

from .arrays import (AngleGrid, PlanarArray, UniformLinearArray,
                     build_dictionary, effective_sensing, load_geometry,
                     save_geometry, steering, steering_grad)
from .channels import (ChannelRealization, GroupScenario, ObservationSet,
                       draw_scenario, generate_pilots, observe, observe_users,
                       synthesize_channels)
from .elbo import NumericalError, compute_elbo
from .metrics import grouping_accuracy, nmse, support_f1
from .offgrid import OffgridStepConfig
from .vbi import (Hyperparams, InferenceDivergenceError, PosteriorSummary,
                  VariationalState, Workspace, extract_groups,
                  reconstruct_channels, run_inference)

__version__ = "0.1.0"

__all__ = [
    "AngleGrid", "PlanarArray", "UniformLinearArray", "build_dictionary",
    "effective_sensing", "load_geometry", "save_geometry", "steering",
    "steering_grad", "ChannelRealization", "GroupScenario", "ObservationSet",
    "draw_scenario", "generate_pilots", "observe", "observe_users",
    "synthesize_channels", "NumericalError", "compute_elbo",
    "grouping_accuracy", "nmse", "support_f1", "OffgridStepConfig",
    "Hyperparams", "InferenceDivergenceError", "PosteriorSummary",
    "VariationalState", "Workspace", "extract_groups",
    "reconstruct_channels", "run_inference", "__version__",
]
