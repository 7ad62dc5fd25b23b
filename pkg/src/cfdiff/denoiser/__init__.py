from .config import ConditionLabel, DenoiserConfig
from .core import ParamStore, Tape, backprop, init_params, predict_noise, record_forward, template
from .embed import time_embed
from .transformer import patchify, unpatchify

__all__ = [
    "ConditionLabel", "DenoiserConfig", "ParamStore", "Tape", "backprop", "init_params",
    "predict_noise", "record_forward", "template", "time_embed", "patchify", "unpatchify",
]
