from .codec import RunLengthSequence, UnitSequence, dedup, expand, seconds_of
from .corpus import Corpus, GeneratorConfig, UtteranceRecord, generate, load, save, split
from .evaluator import EvalReport, Evaluator, convert_durations, evaluate
from .experiment import Experiment
from .predictor import DurationModel, ModelConfig, predict, reverse_durations
from .trainer import TrainConfig, Trainer, train

try:
    from .version import __version__, version
except ImportError:
    __version__ = version = "0.0.0"

__all__ = [
    "UnitSequence",
    "RunLengthSequence",
    "dedup",
    "expand",
    "seconds_of",
    "Corpus",
    "GeneratorConfig",
    "UtteranceRecord",
    "generate",
    "load",
    "save",
    "split",
    "DurationModel",
    "ModelConfig",
    "predict",
    "reverse_durations",
    "TrainConfig",
    "Trainer",
    "train",
    "EvalReport",
    "Evaluator",
    "convert_durations",
    "evaluate",
    "Experiment",
    "__version__",
    "version",
]
