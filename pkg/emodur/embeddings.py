"""Conditioning representations fed to the duration predictor.

A de-duplicated utterance is represented by one row per unit: the unit's
lookup embedding followed by the speaker vector and the emotion embedding,
both repeated on every row (unit || speaker || emotion).
"""

from dataclasses import dataclass

import numpy as np

from .numerics import Variable, check_2d

SPEAKER_DIM = 512
EMOTION_DIM = 128
AROUSAL_MIN = 1.0
AROUSAL_MAX = 7.0


def check_arousal(values, name="arousal"):
    """Return ``values`` as a float64 array after checking they lie in [1, 7].

    Raises:
        ValueError: if any value is outside the annotation scale.
    """
    arousal = np.atleast_1d(np.asarray(values, dtype=np.float64))
    bad = ~np.isfinite(arousal) | (arousal < AROUSAL_MIN) | (arousal > AROUSAL_MAX)
    if np.any(bad):
        raise ValueError(f"{name} {arousal[bad][0]!r} outside the {AROUSAL_MIN:g}-{AROUSAL_MAX:g} scale")
    return arousal


@dataclass(frozen=True)
class ArousalLabel:
    """Arousal on the 1-7 annotation scale (source ``e`` or target ``ē``)."""

    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", float(check_arousal(self.value)[0]))

    def __float__(self):
        return self.value


def _fixed_vector(values, size, kind):
    vector = np.array(values, dtype=np.float64).reshape(-1)
    if vector.shape != (size,):
        raise ValueError(f"{kind} must have {size} values, got {vector.size}")
    if not np.all(np.isfinite(vector)):
        raise ValueError(f"{kind} has non-finite entries")
    vector.setflags(write=False)
    return vector


@dataclass(frozen=True, eq=False)
class SpeakerVector:
    """Fixed-size speaker identity vector (a d-vector or a synthetic stand-in)."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _fixed_vector(self.values, SPEAKER_DIM, "speaker vector"))

    def __eq__(self, other):
        return isinstance(other, SpeakerVector) and np.array_equal(self.values, other.values)


@dataclass(frozen=True, eq=False)
class EmotionEmbedding:
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _fixed_vector(self.values, EMOTION_DIM, "emotion embedding"))

    def __eq__(self, other):
        return isinstance(other, EmotionEmbedding) and np.array_equal(self.values, other.values)


def embed_emotion(tape, labels, weight, bias):
    """Trainable linear map from arousal labels to emotion embeddings.

    ``out[b, j] = labels[b] * weight[j] + bias[j]``

    Args:
        tape (Tape): tape to record on.
        labels: one label or an array of B labels on the 1-7 scale.
        weight (Variable): shape ``D``.
        bias (Variable): shape ``D``.

    Returns:
        Variable: embeddings of shape ``B x D``.
    """
    if isinstance(labels, ArousalLabel):
        labels = labels.value
    elif isinstance(labels, (list, tuple)):
        labels = [float(label) for label in labels]
    arousal = check_arousal(labels)
    if weight.value.ndim != 1 or bias.shape != weight.shape:
        raise ValueError(f"emotion weight and bias must be matching vectors, got {weight.shape} and {bias.shape}")
    out = Variable(arousal[:, None] * weight.value[None, :] + bias.value[None, :])

    def backward(grad):
        weight.grad += arousal @ grad
        bias.grad += grad.sum(axis=0)

    return tape.record(out, backward)


def embed_units(tape, units, table):
    """Look up one table row per unit id.

    Args:
        units: de-duplicated unit ids.
        table (Variable): embedding table of shape ``V x E``.

    Returns:
        Variable: rows ``table[units]`` of shape ``U x E``.
    """
    units = np.asarray(units, dtype=np.int64).reshape(-1)
    vocabulary = table.shape[0]
    if len(units) and (units.min() < 0 or units.max() >= vocabulary):
        raise ValueError(f"unit id out of vocabulary of size {vocabulary}")
    out = Variable(table.value[units])

    def backward(grad):
        np.add.at(table.grad, units, grad)

    return tape.record(out, backward)


def _as_variable(value):
    if isinstance(value, (SpeakerVector, EmotionEmbedding)):
        return Variable(value.values)
    return value


def broadcast_concat(tape, unit_emb, z_s, z_e, segments=None):
    """Append speaker and emotion rows to every unit row.

    Args:
        unit_emb (Variable): ``N x E`` unit embeddings.
        z_s (Variable): ``B x Ds`` speaker vectors, or a single ``Ds`` vector.
            A :class:`SpeakerVector` is taken as a constant.
        z_e (Variable): ``B x De`` emotion embeddings, or a single ``De`` vector.
            An :class:`EmotionEmbedding` is taken as a constant.
        segments: per-row utterance index into ``z_s``/``z_e``; all zeros
            (a single utterance) when omitted.

    Returns:
        Variable: ``N x (E + Ds + De)`` rows ``[unit || speaker || emotion]``.
    """
    z_s, z_e = _as_variable(z_s), _as_variable(z_e)
    check_2d(unit_emb, "unit embeddings")
    n_rows, e_dim = unit_emb.shape
    speaker = z_s.value if z_s.value.ndim == 2 else z_s.value[None, :]
    emotion = z_e.value if z_e.value.ndim == 2 else z_e.value[None, :]
    if speaker.shape[0] != emotion.shape[0]:
        raise ValueError(f"got {speaker.shape[0]} speaker rows but {emotion.shape[0]} emotion rows")
    segments = np.zeros(n_rows, dtype=np.int64) if segments is None else np.asarray(segments, dtype=np.int64)
    if segments.shape != (n_rows,):
        raise ValueError(f"segments must have shape ({n_rows},), got {segments.shape}")
    if n_rows and (segments.min() < 0 or segments.max() >= speaker.shape[0]):
        raise ValueError("segment index out of range")
    s_dim = speaker.shape[1]
    out = Variable(np.concatenate([unit_emb.value, speaker[segments], emotion[segments]], axis=1))

    def backward(grad):
        unit_emb.grad += grad[:, :e_dim]
        d_speaker = np.zeros_like(speaker)
        d_emotion = np.zeros_like(emotion)
        np.add.at(d_speaker, segments, grad[:, e_dim : e_dim + s_dim])
        np.add.at(d_emotion, segments, grad[:, e_dim + s_dim :])
        z_s.grad += d_speaker.reshape(z_s.shape)
        z_e.grad += d_emotion.reshape(z_e.shape)

    return tape.record(out, backward)
