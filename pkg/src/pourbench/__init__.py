"""pourbench: closed-loop pouring simulation, sensing, estimation and evaluation."""

from .arm_model import (GRAVITY, ML_TO_N, JointState, KinematicChain, SingularityError,
                        Wrench, default_chain, estimate_ee_wrench, forward_kinematics,
                        geometric_jacobian)
from .controller import ControllerConfig, FsmState, Outcome, PouringFsm
from .dataset import TrialConfig, TrialLog, TrialRunner, sample_config, split_trials
from .estimator import AnalyticalFz, EstimatorSpec, Model, TrainConfig, evaluate_mse, train
from .evalkit import EVAL_GRID, eval_grid, generalization_sweep, metrics_summary
from .pour_sim import ContainerSpec, SimWorld, free_fall_delay, outflow_rate

__version__ = "0.1.0"
