"""twolevel: exact simulation and scaling limits of a two-level
birth-death-mutation-competition point process (hosts carrying two
competing cell types)."""

__version__ = "0.1.0"

from .params import (ChannelRates, Envelopes, ModelParams, Population, RateFn,
                     TraitBox, channel_rates, competition_field, const,
                     raw_effective, sample_mutant_trait, validate_params)
from .scaling import (RescaledMeasure, ScalingRegime, empirical_measure,
                      make_effective, rescale_params_h2, rescale_params_h3)
from .engine import SimState, Trajectory, ReplicateSet, simulate, simulate_reference, step, total_rate
from .lv import EquilibriumReport, LVParams, lv_equilibrium, lv_flow, lv_flow_many, lv_params_at
from .meanfield import (laplace_stationarity_check, logistic_mass,
                        meanfield_constant_solve, stationary_report)
from .transport import DensityGrid, gaussian_bump, make_grid, transport_mild_solve
from .reactdiff import reaction_diffusion_solve
from .analysis import (MartingaleReport, TestFunction, martingale_residuals,
                       pair, scaling_exponent_fit, tf_coord, tf_exp_x, tf_exp_y,
                       tf_mass, tf_square, weak_distance)
from .config import load_config, resolve_config, config_hash
from .runner import run_experiment
