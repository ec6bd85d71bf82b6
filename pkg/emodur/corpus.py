"""Utterance corpora: JSON-lines ingestion and a seeded synthetic generator.

A corpus file starts with a header line
``{"format_version", "vocabulary", "frame_rate_hz", "speakers", "metadata"}``
followed by one utterance record per line. Paths ending with ``.gz`` are
read and written gzip-compressed.
"""

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .codec import DEFAULT_FRAME_RATE_HZ, RunLengthSequence, UnitSequence, dedup, expand, seconds_of
from .config import ConfigMixin
from .embeddings import AROUSAL_MAX, AROUSAL_MIN, SPEAKER_DIM, check_arousal
from .storage import open_text

CORPUS_FORMAT_VERSION = 1
AROUSAL_LEVELS = tuple(range(int(AROUSAL_MIN), int(AROUSAL_MAX) + 1))
AROUSAL_CENTER = 4.0

logger = logging.getLogger(__name__)


class CorpusFormatError(ValueError):
    """A corpus file or record breaks the format or an invariant.

    Attributes:
        lineno (int): 1-based line number, or None for in-memory records.
        record_id (str): id of the offending record when known.
    """

    def __init__(self, message, lineno=None, record_id=None):
        location = []
        if lineno is not None:
            location.append(f"line {lineno}")
        if record_id is not None:
            location.append(f"record {record_id}")
        super().__init__(f"{', '.join(location)}: {message}" if location else message)
        self.lineno = lineno
        self.record_id = record_id


def _optional_vector(values):
    if values is None:
        return None
    vector = np.array(values, dtype=np.float64).reshape(-1)
    if vector.shape != (SPEAKER_DIM,):
        raise ValueError(f"speaker vector must have {SPEAKER_DIM} values, got {vector.size}")
    if not np.all(np.isfinite(vector)):
        raise ValueError("speaker vector has non-finite entries")
    vector.setflags(write=False)
    return vector


@dataclass(frozen=True, eq=False)
class UtteranceRecord:
    """One labeled utterance at unit level.

    Attributes:
        id (str): unique record id.
        units (ndarray): frame-level unit ids.
        arousal (float): annotated arousal on the 1-7 scale.
        speaker_id (str): speaker label.
        speaker_vector (ndarray): optional 512-d speaker vector; the corpus
            speaker table is used when absent.
        frame_rate_hz (float): frame rate of ``units``.
        ser_prediction (float): optional externally recognised arousal.
        mel (str): optional reference to a feature matrix file.
    """

    id: str
    units: np.ndarray
    arousal: float
    speaker_id: str
    speaker_vector: np.ndarray = None
    frame_rate_hz: float = DEFAULT_FRAME_RATE_HZ
    ser_prediction: float = None
    mel: str = None

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ValueError("record id must be a non-empty string")
        if not isinstance(self.speaker_id, str) or not self.speaker_id:
            raise ValueError("speaker id must be a non-empty string")
        seq = UnitSequence(self.units, float(self.frame_rate_hz))
        object.__setattr__(self, "units", seq.ids)
        object.__setattr__(self, "frame_rate_hz", seq.frame_rate_hz)
        object.__setattr__(self, "arousal", float(check_arousal(self.arousal)[0]))
        object.__setattr__(self, "speaker_vector", _optional_vector(self.speaker_vector))
        if self.ser_prediction is not None:
            object.__setattr__(self, "ser_prediction", float(self.ser_prediction))

    def __eq__(self, other):
        if not isinstance(other, UtteranceRecord):
            return NotImplemented
        same_vector = (self.speaker_vector is None and other.speaker_vector is None) or (
            self.speaker_vector is not None
            and other.speaker_vector is not None
            and np.array_equal(self.speaker_vector, other.speaker_vector)
        )
        return (
            self.id == other.id
            and np.array_equal(self.units, other.units)
            and self.arousal == other.arousal
            and self.speaker_id == other.speaker_id
            and same_vector
            and self.frame_rate_hz == other.frame_rate_hz
            and self.ser_prediction == other.ser_prediction
            and self.mel == other.mel
        )

    @property
    def sequence(self):
        return UnitSequence(self.units, self.frame_rate_hz)

    @property
    def run_lengths(self):
        return dedup(self.sequence)

    @property
    def seconds(self):
        return len(self.units) / self.frame_rate_hz

    def to_dict(self):
        data = {
            "id": self.id,
            "units": self.units.tolist(),
            "arousal": self.arousal,
            "speaker_id": self.speaker_id,
            "frame_rate_hz": self.frame_rate_hz,
        }
        if self.speaker_vector is not None:
            data["speaker_vector"] = self.speaker_vector.tolist()
        if self.ser_prediction is not None:
            data["ser_prediction"] = self.ser_prediction
        if self.mel is not None:
            data["mel"] = self.mel
        return data

    @classmethod
    def from_dict(cls, data):
        supported = {"id", "units", "arousal", "speaker_id", "speaker_vector", "frame_rate_hz", "ser_prediction", "mel"}
        unknown = sorted(set(data) - supported)
        if unknown:
            raise KeyError(f"unsupported record field(s) {', '.join(unknown)}")
        for name in ("id", "units", "arousal", "speaker_id"):
            if name not in data:
                raise KeyError(f'record is missing "{name}"')
        return cls(**data)


class Corpus:
    """An immutable collection of utterance records plus provenance metadata.

    Attributes:
        records (tuple): the utterance records, in file order.
        vocabulary (int): unit vocabulary size.
        frame_rate_hz (float): frame rate shared by the records.
        speakers (dict): speaker id -> 512-d vector.
        metadata (dict): provenance, e.g. the generator config.
    """

    def __init__(self, records, vocabulary, frame_rate_hz=DEFAULT_FRAME_RATE_HZ, speakers=None, metadata=None):
        if isinstance(vocabulary, bool) or not isinstance(vocabulary, (int, np.integer)) or vocabulary < 1:
            raise ValueError(f"vocabulary must be a positive integer, got {vocabulary!r}")
        self.vocabulary = int(vocabulary)
        self.frame_rate_hz = float(frame_rate_hz)
        self.speakers = {name: _optional_vector(vector) for name, vector in (speakers or {}).items()}
        self.metadata = dict(metadata or {})
        self.records = tuple(records)
        self._index = {}
        for record in self.records:
            self._validate(record)
            self._index[record.id] = record

    def _validate(self, record, lineno=None):
        if record.id in self._index:
            raise CorpusFormatError("duplicate record id", lineno, record.id)
        if len(record.units) and record.units.max() >= self.vocabulary:
            raise CorpusFormatError(
                f"unit id {int(record.units.max())} out of vocabulary of size {self.vocabulary}", lineno, record.id
            )
        if record.frame_rate_hz != self.frame_rate_hz:
            raise CorpusFormatError(
                f"frame rate {record.frame_rate_hz} differs from the corpus rate {self.frame_rate_hz}",
                lineno,
                record.id,
            )

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, record_id):
        return self._index[record_id]

    def header(self):
        return {
            "format_version": CORPUS_FORMAT_VERSION,
            "vocabulary": self.vocabulary,
            "frame_rate_hz": self.frame_rate_hz,
            "speakers": {name: vector.tolist() for name, vector in self.speakers.items()},
            "metadata": self.metadata,
        }

    def speaker_vector(self, record):
        """Speaker vector of a record: its own, else the corpus table entry, else zeros."""
        if record.speaker_vector is not None:
            return record.speaker_vector
        vector = self.speakers.get(record.speaker_id)
        if vector is None:
            logger.debug("no speaker vector for %s, using zeros", record.speaker_id)
            return np.zeros(SPEAKER_DIM)
        return vector

    def subset(self, record_ids, **metadata):
        extra = dict(self.metadata)
        extra.update(metadata)
        return Corpus(
            [self._index[record_id] for record_id in record_ids],
            self.vocabulary,
            self.frame_rate_hz,
            self.speakers,
            extra,
        )

    def __eq__(self, other):
        if not isinstance(other, Corpus):
            return NotImplemented
        return (
            self.vocabulary == other.vocabulary
            and self.frame_rate_hz == other.frame_rate_hz
            and self.speakers.keys() == other.speakers.keys()
            and all(np.array_equal(self.speakers[k], other.speakers[k]) for k in self.speakers)
            and self.metadata == other.metadata
            and self.records == other.records
        )


def save(corpus, path):
    """Write a corpus as JSON lines."""
    with open_text(path, "w") as fout:
        fout.write(json.dumps(corpus.header()) + "\n")
        for record in corpus.records:
            fout.write(json.dumps(record.to_dict()) + "\n")
    logger.info("wrote %d records to %s", len(corpus), path)


def load(path):
    """Read and validate a JSON-lines corpus.

    Raises:
        CorpusFormatError: on a malformed line, a duplicated id or a record
            breaking an invariant; the message names the line and record.
    """
    with open_text(path) as fin:
        lines = fin.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise CorpusFormatError("missing header line", 1)
    try:
        header = json.loads(lines[0])
        if not isinstance(header, dict):
            raise TypeError("header must be an object")
        version = header.get("format_version")
        if version != CORPUS_FORMAT_VERSION:
            raise ValueError(f"unsupported corpus format version {version!r}")
        corpus = Corpus(
            [], header["vocabulary"], header["frame_rate_hz"], header.get("speakers"), header.get("metadata")
        )
    except (KeyError, TypeError, ValueError) as e:
        raise CorpusFormatError(f"bad header: {e}", 1) from None

    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as e:
            raise CorpusFormatError(f"malformed JSON ({e.msg})", lineno) from None
        record_id = data.get("id") if isinstance(data, dict) else None
        try:
            if not isinstance(data, dict):
                raise TypeError("record must be an object")
            record = UtteranceRecord.from_dict(data)
        except (KeyError, TypeError, ValueError) as e:
            raise CorpusFormatError(str(e), lineno, record_id) from None
        corpus._validate(record, lineno)
        corpus._index[record.id] = record
        records.append(record)
    corpus.records = tuple(records)
    logger.info("loaded %d records from %s", len(corpus), path)
    return corpus


@dataclass(frozen=True)
class GeneratorConfig(ConfigMixin):
    """Parameters of the synthetic corpus generator.

    Per-unit durations are planted as
    ``max(1, round(exp(b0 + o_v - b1 * (a - 4) + eps)))`` where ``o_v`` is a
    fixed offset of unit id ``v`` and ``eps ~ Normal(0, lognormal_sigma)``;
    with probability ``outlier_rate`` a duration is multiplied by
    ``outlier_factor``.
    """

    n_utterances: int = 2000
    vocabulary: int = 100
    units_per_utt: int = 100
    arousal_mean: float = 4.0
    arousal_std: float = 0.95
    base_log_duration: float = math.log(2.0)
    arousal_slope: float = 0.011
    lognormal_sigma: float = 0.3
    unit_log_duration_spread: float = 0.4
    outlier_rate: float = 0.0
    outlier_factor: int = 5
    n_speakers: int = 10
    frame_rate_hz: float = DEFAULT_FRAME_RATE_HZ
    seed: int = 0

    def __post_init__(self):
        for name in ("n_utterances", "vocabulary", "units_per_utt", "outlier_factor", "n_speakers"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f'"{name}" must be a positive integer, got {value!r}')
        if self.vocabulary < 2 and self.units_per_utt > 1:
            raise ValueError("a vocabulary of at least 2 is needed to avoid consecutive repeats")
        for name in ("arousal_std", "lognormal_sigma", "frame_rate_hz"):
            if not getattr(self, name) > 0:
                raise ValueError(f'"{name}" must be positive, got {getattr(self, name)!r}')
        for name in ("arousal_mean", "base_log_duration", "arousal_slope"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f'"{name}" must be finite')
        if not self.unit_log_duration_spread >= 0:
            raise ValueError("unit_log_duration_spread must be non-negative")
        if not 0 <= self.outlier_rate <= 1:
            raise ValueError(f"outlier_rate must lie in [0, 1], got {self.outlier_rate}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ValueError(f"seed must be a non-negative integer, got {self.seed!r}")


@dataclass
class PlantedUtterance:
    arousal: float
    speaker: int
    planted: RunLengthSequence
    base_log: np.ndarray = field(repr=False, default=None)
    outliers: np.ndarray = field(repr=False, default=None)


def _draw_units(rng, vocabulary, length):
    draws = rng.integers(0, vocabulary - 1, size=length) if vocabulary > 1 else np.zeros(length, dtype=np.int64)
    units = np.empty(length, dtype=np.int64)
    units[0] = rng.integers(0, vocabulary)
    for j in range(1, length):
        # draw among the ids different from the previous one
        units[j] = draws[j] + (draws[j] >= units[j - 1])
    return units


def planted_durations(cfg, base_log, outliers, arousal):
    log_d = base_log - cfg.arousal_slope * (arousal - AROUSAL_CENTER)
    durations = np.maximum(1, np.rint(np.exp(log_d))).astype(np.int64)
    durations[outliers] *= cfg.outlier_factor
    return durations


class SyntheticGenerator:
    """Draws planted utterances for a :class:`GeneratorConfig`.

    All randomness comes from one generator seeded with ``cfg.seed`` and is
    consumed in a fixed order: speaker vectors, unit offsets, arousal labels,
    then per utterance its speaker, units, noise and outlier flags.
    :meth:`utterances` continues that stream, so iterate it once.

    Attributes:
        speaker_vectors (ndarray): ``n_speakers x 512`` standard normal draws.
        offsets (ndarray): per unit id log-duration offset.
        raw_arousal (ndarray): arousal samples before clipping.
        arousal (ndarray): arousal samples clipped into [1, 7].
    """

    def __init__(self, cfg):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.speaker_vectors = self.rng.standard_normal((cfg.n_speakers, SPEAKER_DIM))
        self.offsets = self.rng.normal(0.0, cfg.unit_log_duration_spread, cfg.vocabulary)
        self.raw_arousal = self.rng.normal(cfg.arousal_mean, cfg.arousal_std, cfg.n_utterances)
        self.arousal = np.clip(self.raw_arousal, AROUSAL_MIN, AROUSAL_MAX)

    def utterances(self):
        cfg = self.cfg
        for i in range(cfg.n_utterances):
            speaker = int(self.rng.integers(0, cfg.n_speakers))
            units = _draw_units(self.rng, cfg.vocabulary, cfg.units_per_utt)
            noise = self.rng.normal(0.0, cfg.lognormal_sigma, cfg.units_per_utt)
            base_log = cfg.base_log_duration + self.offsets[units] + noise
            outliers = self.rng.random(cfg.units_per_utt) < cfg.outlier_rate
            yield PlantedUtterance(
                arousal=float(self.arousal[i]),
                speaker=speaker,
                planted=RunLengthSequence(units, planted_durations(cfg, base_log, outliers, self.arousal[i])),
                base_log=base_log,
                outliers=outliers,
            )


def generate(cfg=None):
    """Build a synthetic corpus with an arousal-dependent duration structure.

    Args:
        cfg (GeneratorConfig, optional): generator parameters.

    Returns:
        Corpus: reproducible from ``cfg.seed``.
    """
    cfg = cfg or GeneratorConfig()
    generator = SyntheticGenerator(cfg)
    speakers = {f"spk{s:03d}": generator.speaker_vectors[s] for s in range(cfg.n_speakers)}
    records = [
        UtteranceRecord(
            id=f"utt{i:06d}",
            units=expand(utt.planted, cfg.frame_rate_hz).ids,
            arousal=utt.arousal,
            speaker_id=f"spk{utt.speaker:03d}",
            frame_rate_hz=cfg.frame_rate_hz,
        )
        for i, utt in enumerate(generator.utterances())
    ]
    raw = generator.raw_arousal
    clipped = int(np.sum((raw < AROUSAL_MIN) | (raw > AROUSAL_MAX)))
    metadata = {
        "generator": cfg.to_dict(),
        "arousal_raw_mean": float(raw.mean()),
        "arousal_raw_std": float(raw.std()),
        "arousal_clipped": clipped,
    }
    if clipped:
        logger.info("clipped %d of %d arousal samples into [1, 7]", clipped, len(raw))
    return Corpus(records, cfg.vocabulary, cfg.frame_rate_hz, speakers, metadata)


def planted_contrast(cfg=None):
    """Expected utterance seconds at arousal 1 and 7 under the generator.

    Both arousal levels share every other random draw, so the difference is
    the planted contrast alone.

    Returns:
        dict: ``seconds_at_1``, ``seconds_at_7`` and ``delta``.
    """
    cfg = cfg or GeneratorConfig()
    frames = {AROUSAL_MIN: 0, AROUSAL_MAX: 0}
    for utt in SyntheticGenerator(cfg).utterances():
        for level in frames:
            frames[level] += int(planted_durations(cfg, utt.base_log, utt.outliers, level).sum())
    low = frames[AROUSAL_MIN] / cfg.n_utterances / cfg.frame_rate_hz
    high = frames[AROUSAL_MAX] / cfg.n_utterances / cfg.frame_rate_hz
    return {"seconds_at_1": low, "seconds_at_7": high, "delta": low - high}


def split(corpus, ratios=(0.8, 0.1, 0.1), seed=0):
    """Split into disjoint train/val/test corpora.

    Records are shuffled per speaker and ordered by their quantile within
    their speaker before cutting, so every split holds a proportional share
    of each speaker, up to one record.

    Returns:
        tuple: ``(train, val, test)`` corpora.
    """
    if len(corpus) == 0:
        raise ValueError("cannot split an empty corpus")
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ValueError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    groups = {}
    for record in corpus:
        groups.setdefault(record.speaker_id, []).append(record.id)
    keyed = []
    for _, group in sorted(groups.items()):
        for position, i in enumerate(rng.permutation(len(group))):
            keyed.append(((position + 0.5) / len(group), group[i]))
    order = [record_id for _, record_id in sorted(keyed, key=lambda item: item[0])]

    n_total = len(order)
    n_train = min(n_total, int(round(n_total * ratios[0])))
    n_val = min(n_total - n_train, int(round(n_total * ratios[1])))
    parts = (order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :])
    names = ("train", "val", "test")
    return tuple(corpus.subset(ids, split=name, split_seed=seed) for name, ids in zip(names, parts))


def _level_stats(values):
    if not values:
        return {"n": 0, "mean_seconds": None, "std_seconds": None}
    values = np.asarray(values, dtype=np.float64)
    return {"n": int(len(values)), "mean_seconds": float(values.mean()), "std_seconds": float(values.std())}


def dataset_reference(corpus):
    """Mean and std utterance seconds per rounded ground-truth arousal level."""
    seconds = {level: [] for level in AROUSAL_LEVELS}
    for record in corpus:
        level = int(np.clip(np.rint(record.arousal), AROUSAL_MIN, AROUSAL_MAX))
        seconds[level].append(record.seconds)
    return {level: _level_stats(values) for level, values in seconds.items()}


def summarize(corpus):
    """Headline statistics of a corpus."""
    if len(corpus) == 0:
        raise ValueError("cannot summarize an empty corpus")
    arousal = np.array([record.arousal for record in corpus])
    n_units = sum(len(record.run_lengths) for record in corpus)
    return {
        "n_records": len(corpus),
        "n_speakers": len({record.speaker_id for record in corpus}),
        "n_units": n_units,
        "arousal_mean": float(arousal.mean()),
        "arousal_std": float(arousal.std()),
        "mean_seconds": float(np.mean([seconds_of(record.run_lengths, corpus.frame_rate_hz) for record in corpus])),
        "arousal_clipped": corpus.metadata.get("arousal_clipped"),
    }
