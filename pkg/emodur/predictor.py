"""Emotion- and speaker-conditioned duration predictor.

The predictor maps de-duplicated units to log repetition counts through
``unit lookup -> [unit || speaker || emotion] -> conv -> relu -> conv -> relu -> linear``.
The uncertainty variant adds a second head column holding ``log sigma``.

During training only the log-scale predictions reach the loss; integer
durations are produced by :func:`reverse_durations` at inference time, which
refuses to run while :data:`resynthesis` says a training step is in progress.
The training flag is per thread, so a training step on one thread never
blocks inference running concurrently on another.
"""

import contextlib
import json
import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .codec import DEFAULT_FRAME_RATE_HZ, RunLengthSequence, expand
from .config import ConfigMixin
from .embeddings import EMOTION_DIM, SPEAKER_DIM, broadcast_concat, check_arousal, embed_emotion, embed_units
from .losses import LOG_SIGMA_MAX, LOG_SIGMA_MIN
from .numerics import (
    ParamStore,
    Tape,
    Variable,
    conv1d_forward,
    glorot_uniform,
    linear_forward,
    mask_rows,
    relu,
)
from .storage import open_text
from .utils import Signal

# 2: speaker vectors are scaled by ModelConfig.speaker_scale
CHECKPOINT_FORMAT_VERSION = 2
# exp() input ceiling when reversing, about 1e13 frames
MAX_LOG_DURATION = 30.0

logger = logging.getLogger(__name__)

resynthesis = Signal(thread_local=("training",))
resynthesis.set(training=False, reversals=0)


class ResynthesisViolation(AssertionError):
    """Predicted durations were requested inside a training step."""


@contextlib.contextmanager
def training_step():
    """Mark the enclosed code as a training step for the resynthesis guard."""
    previous = resynthesis.get("training")
    resynthesis.set(training=True)
    try:
        yield
    finally:
        resynthesis.set(training=previous)


class Variant(str, Enum):
    MSE = "mse"
    L1 = "l1"
    UNCERT = "uncert"

    @property
    def head_width(self):
        return 2 if self is Variant.UNCERT else 1


def parse_variant(value):
    if isinstance(value, Variant):
        return value
    try:
        return Variant(str(value).lower())
    except ValueError:
        raise ValueError(f'unknown variant "{value}", choose from {[v.value for v in Variant]}') from None


class ReversalMode(str, Enum):
    """How log predictions become integer durations.

    ``ROUND`` gives ``max(1, round(exp(y)))``. ``OFFSET_MIN`` applies
    ``min(1, exp(y + 1))`` raised to at least one frame, which yields one
    frame for every input; it is kept for comparison only.
    """

    ROUND = "round"
    OFFSET_MIN = "offset_min"


@dataclass(frozen=True)
class ModelConfig(ConfigMixin):
    """Hyperparameters of the duration predictor.

    Attributes:
        vocabulary (int): number of discrete unit ids V.
        unit_dim (int): unit embedding width E.
        hidden (int): convolution width H.
        kernel_size (int): odd convolution kernel size K.
        variant (str): ``mse``, ``l1`` or ``uncert``.
        speaker_scale (float): factor applied to speaker vectors before they
            are concatenated. Standard-normal 512-d vectors have a norm near
            22, the default brings them to unit norm.
    """

    vocabulary: int = 100
    unit_dim: int = 128
    hidden: int = 256
    kernel_size: int = 3
    variant: str = Variant.MSE.value
    speaker_scale: float = SPEAKER_DIM**-0.5

    def __post_init__(self):
        for name in ("vocabulary", "unit_dim", "hidden", "kernel_size"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f'"{name}" must be a positive integer, got {value!r}')
        if self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if not np.isfinite(self.speaker_scale) or self.speaker_scale <= 0:
            raise ValueError(f"speaker_scale must be a positive number, got {self.speaker_scale!r}")
        object.__setattr__(self, "speaker_scale", float(self.speaker_scale))
        object.__setattr__(self, "variant", parse_variant(self.variant).value)

    @property
    def input_dim(self):
        return self.unit_dim + SPEAKER_DIM + EMOTION_DIM


@dataclass(frozen=True, eq=False)
class DurationPrediction:
    """Per-unit log-duration predictions, plus ``log sigma`` for the uncertainty variant."""

    log_durations: np.ndarray
    log_sigma: np.ndarray = None

    def __post_init__(self):
        log_durations = np.asarray(self.log_durations, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(log_durations)):
            raise ValueError("log-duration predictions must be finite")
        object.__setattr__(self, "log_durations", log_durations)
        if self.log_sigma is not None:
            log_sigma = np.asarray(self.log_sigma, dtype=np.float64).reshape(-1)
            if log_sigma.shape != log_durations.shape:
                raise ValueError("log_sigma must have one entry per position")
            if not np.all(np.isfinite(log_sigma)):
                raise ValueError("log_sigma predictions must be finite")
            object.__setattr__(self, "log_sigma", log_sigma)

    def __len__(self):
        return len(self.log_durations)

    @property
    def sigma(self):
        """Clamped standard deviations, or None without an uncertainty head."""
        if self.log_sigma is None:
            return None
        return np.exp(np.clip(self.log_sigma, LOG_SIGMA_MIN, LOG_SIGMA_MAX))


@dataclass
class ForwardPass:
    """Head output of a batched forward pass and the layout needed to read it.

    Utterance ``b`` occupies rows ``b * block`` to ``b * block + lengths[b]`` of
    ``output``; the remaining rows of each block are masked padding.
    """

    output: Variable
    lengths: np.ndarray
    block: int

    @property
    def max_len(self):
        return int(self.lengths.max()) if len(self.lengths) else 0

    def padded(self, column=0):
        """Return column ``column`` of the head output as a ``B x max_U`` matrix."""
        n_utts = len(self.lengths)
        return self.output.value[:, column].reshape(n_utts, self.block)[:, : self.max_len]

    def position_mask(self):
        return (np.arange(self.max_len)[None, :] < self.lengths[:, None]).astype(np.float64)

    def scatter(self, grads):
        """Turn ``B x max_U`` gradients per head column into a gradient for ``output``."""
        n_utts = len(self.lengths)
        full = np.zeros_like(self.output.value)
        for column, grad in enumerate(grads):
            if grad is None:
                continue
            rows = np.zeros((n_utts, self.block))
            rows[:, : self.max_len] = grad
            full[:, column] = rows.reshape(-1)
        return full


def check_deduplicated(units, vocabulary):
    units = np.asarray(units, dtype=np.int64).reshape(-1)
    if len(units) == 0:
        return units
    if len(units) > 1 and np.any(units[1:] == units[:-1]):
        raise ValueError("units must be de-duplicated (consecutive ids must differ)")
    if units.min() < 0 or units.max() >= vocabulary:
        raise ValueError(f"unit id out of vocabulary of size {vocabulary}")
    return units


class DurationModel:
    """Parameters and forward pass of the duration predictor.

    Attributes:
        config (ModelConfig): hyperparameters.
        params (ParamStore): the trainable arrays.
    """

    def __init__(self, config, params):
        self.config = config
        self.params = params
        self._check_shapes()

    @classmethod
    def init(cls, config=None, seed=0):
        """Build a freshly initialised model.

        Args:
            config (ModelConfig, optional): hyperparameters, defaults when omitted.
            seed (int): seed of the weight initialisation.
        """
        config = config or ModelConfig()
        rng = np.random.default_rng(seed)
        k, h = config.kernel_size, config.hidden
        width = Variant(config.variant).head_width
        params = ParamStore()
        params.add("unit_table", rng.normal(0.0, 1.0 / np.sqrt(config.unit_dim), (config.vocabulary, config.unit_dim)))
        params.add("emotion_weight", rng.normal(0.0, 1.0 / np.sqrt(EMOTION_DIM), EMOTION_DIM))
        params.add("emotion_bias", np.zeros(EMOTION_DIM))
        params.add("conv1_kernel", glorot_uniform(rng, (k, config.input_dim, h), k * config.input_dim, k * h))
        params.add("conv1_bias", np.zeros(h))
        params.add("conv2_kernel", glorot_uniform(rng, (k, h, h), k * h, k * h))
        params.add("conv2_bias", np.zeros(h))
        params.add("head_weight", glorot_uniform(rng, (h, width), h, width))
        params.add("head_bias", np.zeros(width))
        return cls(config, params)

    def _check_shapes(self):
        cfg = self.config
        k, h, width = cfg.kernel_size, cfg.hidden, self.variant.head_width
        expected = {
            "unit_table": (cfg.vocabulary, cfg.unit_dim),
            "emotion_weight": (EMOTION_DIM,),
            "emotion_bias": (EMOTION_DIM,),
            "conv1_kernel": (k, cfg.input_dim, h),
            "conv1_bias": (h,),
            "conv2_kernel": (k, h, h),
            "conv2_bias": (h,),
            "head_weight": (h, width),
            "head_bias": (width,),
        }
        if set(self.params) != set(expected):
            raise KeyError(f"model parameters must be exactly {', '.join(expected)}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ValueError(f'parameter "{name}" has shape {self.params[name].shape}, expected {shape}')

    @property
    def variant(self):
        return Variant(self.config.variant)

    def _check_inputs(self, units_list, speakers, arousal):
        units_list = [check_deduplicated(units, self.config.vocabulary) for units in units_list]
        n_utts = len(units_list)
        if n_utts == 0:
            raise ValueError("cannot run the predictor on an empty batch")
        speakers = np.asarray(speakers, dtype=np.float64).reshape(n_utts, -1)
        if speakers.shape[1] != SPEAKER_DIM:
            raise ValueError(f"speaker vectors must have {SPEAKER_DIM} values, got {speakers.shape[1]}")
        arousal = check_arousal(arousal)
        if len(arousal) != n_utts:
            raise ValueError(f"got {n_utts} utterances but {len(arousal)} arousal labels")
        return units_list, speakers, arousal

    def forward(self, tape, units_list, speakers, arousal):
        """Batched forward pass.

        Args:
            tape (Tape): tape to record on.
            units_list (list): B de-duplicated unit id arrays. Some may be
                empty, as long as one is not.
            speakers: ``B x 512`` speaker vectors.
            arousal: B arousal labels.

        Returns:
            ForwardPass: head output plus batch layout.
        """
        cfg = self.config
        units_list, speakers, arousal = self._check_inputs(units_list, speakers, arousal)
        n_utts = len(units_list)
        lengths = np.array([len(units) for units in units_list], dtype=np.int64)
        if lengths.max() == 0:
            raise ValueError("cannot run the predictor on a batch without units")
        # gap rows keep convolutions from reaching into the next utterance
        block = int(lengths.max()) + (cfg.kernel_size // 2 if n_utts > 1 else 0)
        ids = np.zeros((n_utts, block), dtype=np.int64)
        for b, units in enumerate(units_list):
            ids[b, : len(units)] = units
        mask = (np.arange(block)[None, :] < lengths[:, None]).astype(np.float64).reshape(-1)
        segments = np.repeat(np.arange(n_utts), block)

        p = self.params
        unit_emb = embed_units(tape, ids.reshape(-1), p["unit_table"])
        z_e = embed_emotion(tape, arousal, p["emotion_weight"], p["emotion_bias"])
        z_s = Variable(speakers * cfg.speaker_scale)
        x = mask_rows(tape, broadcast_concat(tape, unit_emb, z_s, z_e, segments), mask)
        x = mask_rows(tape, relu(tape, conv1d_forward(tape, x, p["conv1_kernel"], p["conv1_bias"])), mask)
        x = mask_rows(tape, relu(tape, conv1d_forward(tape, x, p["conv2_kernel"], p["conv2_bias"])), mask)
        output = linear_forward(tape, x, p["head_weight"], p["head_bias"])
        return ForwardPass(output=output, lengths=lengths, block=block)


def predict_batch(model, units_list, speakers, arousal):
    """Predict log durations for several utterances at once.

    Empty utterances get empty predictions.

    Returns:
        list: one :class:`DurationPrediction` per utterance.
    """
    units_list, speakers, arousal = model._check_inputs(units_list, speakers, arousal)
    if not any(len(units) for units in units_list):
        empty = np.zeros(0)
        log_sigma = empty if model.variant is Variant.UNCERT else None
        return [DurationPrediction(empty, log_sigma) for _ in units_list]
    result = model.forward(Tape(), units_list, speakers, arousal)
    means = result.padded(0)
    sigmas = result.padded(1) if model.variant is Variant.UNCERT else None
    predictions = []
    for b, length in enumerate(result.lengths):
        log_sigma = None if sigmas is None else sigmas[b, :length]
        predictions.append(DurationPrediction(means[b, :length].copy(), log_sigma))
    return predictions


def predict(model, units, z_s, label):
    """Predict the log duration of every de-duplicated unit.

    Args:
        model (DurationModel): the predictor.
        units: de-duplicated unit ids.
        z_s: a :class:`SpeakerVector` or 512 values.
        label: an :class:`ArousalLabel` or a value on the 1-7 scale.

    Returns:
        DurationPrediction: one prediction per unit.
    """
    speaker = getattr(z_s, "values", z_s)
    return predict_batch(model, [units], [speaker], [float(label)])[0]


def predicted_sigma(pred):
    """Clamped standard deviations of an uncertainty prediction."""
    if pred.log_sigma is None:
        raise ValueError("the prediction carries no sigma, it was not made by an uncert model")
    return pred.sigma


def reverse_durations(pred, mode=ReversalMode.ROUND):
    """Turn log-duration predictions into integer frame counts of at least 1.

    Args:
        pred: a :class:`DurationPrediction` or an array of log durations.
        mode (ReversalMode or str): reversal formula.

    Returns:
        ndarray: int64 durations.
    """
    if resynthesis.get("training"):
        raise ResynthesisViolation("predicted durations must not be used during training")
    try:
        mode = ReversalMode(mode)
    except ValueError:
        raise ValueError(f'unknown reversal mode "{mode}", choose from {[m.value for m in ReversalMode]}') from None
    log_durations = np.asarray(getattr(pred, "log_durations", pred), dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(log_durations)):
        raise ValueError("log-duration predictions must be finite")
    resynthesis.incr("reversals")
    clipped = np.minimum(log_durations, MAX_LOG_DURATION)
    if mode is ReversalMode.ROUND:
        frames = np.rint(np.exp(clipped))
    else:
        frames = np.ceil(np.minimum(1.0, np.exp(clipped + 1.0)))
    return np.maximum(1, frames).astype(np.int64)


def apply_durations(units, durations, frame_rate_hz=DEFAULT_FRAME_RATE_HZ):
    """Repeat every de-duplicated unit by its predicted duration."""
    units = np.asarray(units, dtype=np.int64).reshape(-1)
    durations = np.asarray(durations, dtype=np.int64).reshape(-1)
    if len(units) != len(durations):
        raise ValueError(f"got {len(units)} units but {len(durations)} durations")
    return expand(RunLengthSequence(units, durations), frame_rate_hz)


def save_checkpoint(model, path):
    """Write the model as one JSON document (gzip-compressed for ``.gz`` paths)."""
    document = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "hyperparams": model.config.to_dict(),
        "variant": model.variant.value,
        "parameters": {
            name: {"shape": list(param.shape), "data": param.value.reshape(-1).tolist()}
            for name, param in model.params.items()
        },
    }
    with open_text(path, "w") as fout:
        json.dump(document, fout)
    logger.info("checkpoint written to %s", path)


def load_checkpoint(path):
    """Read a model written by :func:`save_checkpoint`."""
    with open_text(path) as fin:
        try:
            document = json.load(fin)
        except json.JSONDecodeError as e:
            raise ValueError(f"checkpoint {path} is not valid JSON: {e}") from None
    version = document.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version!r}")
    config = ModelConfig.from_dict(document["hyperparams"])
    if document.get("variant", config.variant) != config.variant:
        raise ValueError("checkpoint variant disagrees with its hyperparameters")
    params = ParamStore()
    for name, entry in document["parameters"].items():
        params.add(name, np.array(entry["data"], dtype=np.float64).reshape(entry["shape"]))
    return DurationModel(config, params)
