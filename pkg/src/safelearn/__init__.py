"""Safe episodic learning control with feature-based residual models,
Thompson sampling, MPPI planning and a conformally calibrated CBF filter."""

from .acp import AcpState, acp_init, acp_quantile, acp_update, nonconformity
from .dyn_model import (
    GpResidualModel,
    LinearDynModel,
    ResidualDataset,
    WeightSample,
    fit_ridge,
    init_from_safe_dataset,
    load_checkpoint,
    predict,
    save_checkpoint,
    thompson_sample,
)
from .envs import EnvSpec, make_env
from .harness import RunConfig, TrainLog, EpisodeLog, empirical_regret, oracle_cost, run_episode, train
from .kernel_features import FeatureConfig, FeatureMap, build_qff, build_rff, features, gp_fit, gp_predict
from .mppi import MppiConfig, PlanState, mppi_plan, rollout
from .safety_filter import B_true, B_value, BarrierSpec, FilterResult, filter_control

__version__ = "0.1.0"
