from .config import DEFAULT_HISTORY, SimulatorConfig
from .layers import (
    RankError,
    apply_lift,
    attention_layer,
    attention_weights,
    edge_feature,
    edge_feature_centered,
    lift_rotation,
    ret_message,
    semi_orthogonalize,
)
from .params import ModelParams, load_checkpoint, save_checkpoint
from .simulator import RolloutResult, Simulator, StepResult, integrate
from .tokens import HistoryError, SceneStatic, StepInputs, TokenGraph, encode_tokens, \
    inputs_from_sequence
