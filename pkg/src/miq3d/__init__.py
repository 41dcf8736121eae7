"""Single-point-to-multi-instance 3D segmentation at desk scale."""

from .assignment import MatchAssignment, hungarian
from .config import RunConfig, load_config
from .decoder import DecoderConfig, InstancePrediction
from .encoder import EncoderConfig, EncoderOutput
from .losses import GroundTruthSet, LossWeights, total_loss
from .metrics import MetricReport, dice_coeff, instance_report, nsd
from .model import MIQModel
from .queries import PointPrompt
from .synthdata import SynthConfig, VolumeSample, generate, read_vol, sample_prompt, write_vol
from .tensor import Parameter, Tensor, no_grad
from .training import load_checkpoint, save_checkpoint, train

__all__ = [
    "DecoderConfig",
    "EncoderConfig",
    "EncoderOutput",
    "GroundTruthSet",
    "InstancePrediction",
    "LossWeights",
    "MatchAssignment",
    "MetricReport",
    "MIQModel",
    "Parameter",
    "PointPrompt",
    "RunConfig",
    "SynthConfig",
    "Tensor",
    "VolumeSample",
    "dice_coeff",
    "generate",
    "hungarian",
    "instance_report",
    "load_checkpoint",
    "load_config",
    "no_grad",
    "nsd",
    "read_vol",
    "sample_prompt",
    "save_checkpoint",
    "total_loss",
    "train",
    "write_vol",
]

__version__ = "0.1.0"
