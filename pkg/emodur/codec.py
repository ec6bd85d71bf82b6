"""Run-length codec between frame-level discrete units and (unit, duration) pairs.

Frame-level unit sequences repeat a unit id for as many frames as the sound
lasts. De-duplication collapses every run into one unit plus its repetition
count; expansion undoes it.

>>> rls = dedup(UnitSequence([1, 1, 2, 2, 2, 1, 3, 3, 3, 3]))
>>> rls.units.tolist(), rls.durations.tolist()
([1, 2, 1, 3], [2, 3, 1, 4])
>>> expand(rls).ids.tolist()
[1, 1, 2, 2, 2, 1, 3, 3, 3, 3]
"""

from dataclasses import dataclass

import numpy as np

DEFAULT_FRAME_RATE_HZ = 49.0


def _as_ids(values, name):
    ids = np.asarray(values)
    if ids.size == 0:
        return np.zeros(0, dtype=np.int64)
    if ids.ndim != 1:
        raise ValueError(f'"{name}" must be one-dimensional, got shape {ids.shape}')
    if not np.issubdtype(ids.dtype, np.integer):
        if not np.all(np.equal(np.mod(ids, 1), 0)):
            raise TypeError(f'"{name}" must hold integers')
    ids = ids.astype(np.int64)
    if ids.min() < 0:
        raise ValueError(f'"{name}" must be non-negative')
    return ids


@dataclass(frozen=True, eq=False)
class UnitSequence:
    """Frame-rate discrete speech-unit ids.

    Attributes:
        ids (ndarray): int64 unit ids, one per frame.
        frame_rate_hz (float): frames per second.
    """

    ids: np.ndarray
    frame_rate_hz: float = DEFAULT_FRAME_RATE_HZ

    def __post_init__(self):
        object.__setattr__(self, "ids", _as_ids(self.ids, "ids"))
        if not self.frame_rate_hz > 0:
            raise ValueError(f"frame rate must be positive, got {self.frame_rate_hz}")
        self.ids.setflags(write=False)

    def __len__(self):
        return len(self.ids)

    def __eq__(self, other):
        if not isinstance(other, UnitSequence):
            return NotImplemented
        return self.frame_rate_hz == other.frame_rate_hz and np.array_equal(self.ids, other.ids)

    def validate(self, vocabulary):
        """Check every id against the vocabulary size.

        Raises:
            ValueError: if an id is out of vocabulary.
        """
        if len(self.ids) and self.ids.max() >= vocabulary:
            raise ValueError(f"unit id {int(self.ids.max())} out of vocabulary of size {vocabulary}")
        return self


@dataclass(frozen=True, eq=False)
class RunLengthSequence:
    """De-duplicated unit ids paired with their repetition counts.

    Attributes:
        units (ndarray): int64 unit ids, no two consecutive ones equal.
        durations (ndarray): int64 frame counts, each at least 1.
    """

    units: np.ndarray
    durations: np.ndarray

    def __post_init__(self):
        units = _as_ids(self.units, "units")
        durations = _as_ids(self.durations, "durations")
        if len(units) != len(durations):
            raise ValueError(f"units and durations differ in length: {len(units)} != {len(durations)}")
        if len(durations) and durations.min() < 1:
            raise ValueError("every duration must be at least 1 frame")
        if len(units) > 1 and np.any(units[1:] == units[:-1]):
            raise ValueError("consecutive units must differ")
        units.setflags(write=False)
        durations.setflags(write=False)
        object.__setattr__(self, "units", units)
        object.__setattr__(self, "durations", durations)

    def __len__(self):
        return len(self.units)

    def __eq__(self, other):
        if not isinstance(other, RunLengthSequence):
            return NotImplemented
        return np.array_equal(self.units, other.units) and np.array_equal(self.durations, other.durations)

    @property
    def num_frames(self):
        return int(self.durations.sum())


def dedup(seq):
    """Collapse consecutive repetitions of a unit sequence.

    Args:
        seq (UnitSequence): frame-level units.

    Returns:
        RunLengthSequence: the unique consecutive units and their run lengths.
    """
    ids = seq.ids
    if len(ids) == 0:
        return RunLengthSequence(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
    starts = np.concatenate(([0], np.flatnonzero(ids[1:] != ids[:-1]) + 1))
    durations = np.diff(np.concatenate((starts, [len(ids)])))
    return RunLengthSequence(ids[starts], durations)


def expand(rls, frame_rate_hz=DEFAULT_FRAME_RATE_HZ):
    """Repeat every unit by its duration.

    Args:
        rls (RunLengthSequence): units and durations.
        frame_rate_hz (float): frame rate attached to the result.

    Returns:
        UnitSequence: frame-level units of length ``sum(durations)``.
    """
    return UnitSequence(np.repeat(rls.units, rls.durations), frame_rate_hz)


def seconds_of(rls, frame_rate_hz=DEFAULT_FRAME_RATE_HZ):
    """Length in seconds of the frames a run-length sequence expands to.

    >>> seconds_of(RunLengthSequence([4], [49]), 49)
    1.0
    """
    if not frame_rate_hz > 0:
        raise ValueError(f"frame rate must be positive, got {frame_rate_hz}")
    return float(rls.durations.sum()) / frame_rate_hz
