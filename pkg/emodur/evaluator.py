"""Conversion and evaluation harness.

Every record is converted to each target arousal level: its units are
de-duplicated, durations are predicted under the target label, reversed to
integer frame counts and expanded again. The harness reports the mean and
standard deviation of converted utterance seconds per level along with the
duration losses of the predictor at the source labels.
"""

import json
import logging
import math
import queue
from dataclasses import dataclass, field
from threading import current_thread

import numpy as np
import pandas as pd

from .codec import seconds_of
from .config import ConfigMixin
from .corpus import AROUSAL_LEVELS, dataset_reference
from .embeddings import SPEAKER_DIM, check_arousal
from .losses import ccc, loss_abs, loss_mse, loss_nll, loss_ser, ser_error
from .predictor import ReversalMode, Variant, apply_durations, predict_batch, predicted_sigma, reverse_durations
from .utils import ThreadPool

REPORT_FORMAT_VERSION = 1
SOURCE = "source"
# two-sided 99% normal quantile
TREND_Z = 2.576


@dataclass(frozen=True)
class EvalConfig(ConfigMixin):
    """Evaluation settings.

    Attributes:
        targets (tuple): integer target arousal levels.
        reversal_mode (str): ``round`` or ``offset_min``.
        thread_num (int): conversion threads.
        chunk_size (int): records per conversion task.
    """

    targets: tuple = AROUSAL_LEVELS
    reversal_mode: str = ReversalMode.ROUND.value
    thread_num: int = 1
    chunk_size: int = 64

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(_level_key(target) for target in self.targets))
        object.__setattr__(self, "reversal_mode", ReversalMode(self.reversal_mode).value)
        for name in ("thread_num", "chunk_size"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ValueError(f'"{name}" must be a positive integer, got {value!r}')


@dataclass
class EvalRow:
    """Outcome of converting one record to one target arousal.

    ``target_arousal`` is None for the pass under the record's own label,
    which also keeps the prediction and the true log durations.
    """

    record_id: str
    speaker_id: str
    source_arousal: float
    target_arousal: float
    n_units: int
    source_seconds: float
    output_seconds: float
    prediction: object = field(default=None, repr=False)
    true_log_durations: np.ndarray = field(default=None, repr=False)


def _check_vocabulary(model, corpus=None, record=None):
    vocabulary = model.config.vocabulary
    if corpus is not None and corpus.vocabulary != vocabulary:
        raise ValueError(f"model vocabulary {vocabulary} does not match corpus vocabulary {corpus.vocabulary}")
    if record is not None and len(record.units) and record.units.max() >= vocabulary:
        raise ValueError(
            f"record {record.id} has unit id {int(record.units.max())} outside the model vocabulary {vocabulary}"
        )


def _speaker_of(record, corpus):
    if corpus is not None:
        return corpus.speaker_vector(record)
    if record.speaker_vector is not None:
        return record.speaker_vector
    return np.zeros(SPEAKER_DIM)


def convert_records(model, records, target_arousal=None, corpus=None, mode=ReversalMode.ROUND):
    """Convert several records in one batched forward pass.

    Args:
        model (DurationModel): trained predictor.
        records (list): utterance records with at least one unit each.
        target_arousal (float, optional): target label, the source labels when None.
        corpus (Corpus, optional): supplies speaker vectors by speaker id.
        mode (ReversalMode): reversal formula.

    Returns:
        tuple: ``(sequences, rows)`` with one :class:`UnitSequence` and one
        :class:`EvalRow` per record.
    """
    for record in records:
        _check_vocabulary(model, record=record)
    run_lengths = [record.run_lengths for record in records]
    if target_arousal is None:
        labels = [record.arousal for record in records]
    else:
        labels = [float(check_arousal(target_arousal)[0])] * len(records)
    predictions = predict_batch(
        model,
        [rls.units for rls in run_lengths],
        [_speaker_of(record, corpus) for record in records],
        labels,
    )
    sequences, rows = [], []
    for record, rls, prediction in zip(records, run_lengths, predictions):
        durations = reverse_durations(prediction, mode)
        converted = apply_durations(rls.units, durations, record.frame_rate_hz)
        sequences.append(converted)
        row = EvalRow(
            record_id=record.id,
            speaker_id=record.speaker_id,
            source_arousal=record.arousal,
            target_arousal=None if target_arousal is None else labels[0],
            n_units=len(rls),
            source_seconds=seconds_of(rls, record.frame_rate_hz),
            output_seconds=len(converted) / record.frame_rate_hz,
        )
        if target_arousal is None:
            row.prediction = prediction
            row.true_log_durations = np.log(rls.durations.astype(np.float64))
        rows.append(row)
    return sequences, rows


def convert_durations(model, record, target_arousal, corpus=None, mode=ReversalMode.ROUND):
    """Convert one record to ``target_arousal``.

    Returns:
        tuple: the converted :class:`UnitSequence` and its :class:`EvalRow`.
    """
    if corpus is not None:
        _check_vocabulary(model, corpus)
    if len(record.units) == 0:
        raise ValueError(f"record {record.id} has no units to convert")
    sequences, rows = convert_records(model, [record], target_arousal, corpus, mode)
    return sequences[0], rows[0]


class ConversionPool(ThreadPool):
    """Worker threads converting chunks of records.

    All tasks are queued before the workers start; a worker exits once the
    input queue is empty. The model is shared read-only.
    """

    def __init__(self, thread_num, model, corpus, mode=ReversalMode.ROUND):
        super().__init__(thread_num, name="converter")
        self.model = model
        self.corpus = corpus
        self.mode = ReversalMode(mode)

    def worker_exec(self):
        while True:
            try:
                task = self.in_queue.get(block=False)
            except queue.Empty:
                self.logger.debug("no more conversion tasks for thread %s", current_thread().name)
                break
            records = [self.corpus[record_id] for record_id in task["record_ids"]]
            target = None if task["target"] == SOURCE else task["target"]
            try:
                _, rows = convert_records(self.model, records, target, self.corpus, self.mode)
            except Exception as e:
                self.logger.error(
                    "conversion of chunk %d failed in thread %s: %s", task["index"], current_thread().name, e
                )
                self.output({"index": task["index"], "error": e})
            else:
                self.output({"index": task["index"], "rows": rows})
            finally:
                self.in_queue.task_done()


def arousal_trend(arousal, values, z=TREND_Z):
    """Least-squares slope of ``values`` against ``arousal``.

    Returns:
        dict: ``slope``, its standard error ``stderr``, and ``ci``, the
        ``[low, high]`` interval of ``z`` standard errors around the slope.
        None with fewer than three points or a single arousal value.
    """
    x = np.asarray(arousal, dtype=np.float64).reshape(-1)
    y = np.asarray(values, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ValueError(f"got {len(x)} arousal labels but {len(y)} values")
    centered = x - x.mean()
    spread = centered @ centered
    if len(x) < 3 or spread == 0:
        return None
    slope = float(centered @ (y - y.mean()) / spread)
    residual = y - y.mean() - slope * centered
    stderr = float(np.sqrt(residual @ residual / (len(x) - 2) / spread))
    return {"slope": slope, "stderr": stderr, "ci": [slope - z * stderr, slope + z * stderr]}


def _level_key(target):
    value = float(check_arousal(target)[0])
    if value != int(value):
        raise ValueError(f"target arousal levels must be integers, got {target}")
    return int(value)


def _level_summary(rows):
    seconds = np.array([row.output_seconds for row in rows])
    return {"n": int(len(seconds)), "mean_seconds": float(seconds.mean()), "std_seconds": float(seconds.std())}


def load_scores(path, column):
    """Read externally computed per-conversion scores.

    The CSV must have ``record_id``, ``target_arousal`` and ``column`` columns.
    """
    scores = pd.read_csv(path)
    missing = [name for name in ("record_id", "target_arousal", column) if name not in scores.columns]
    if missing:
        raise ValueError(f"score file {path} lacks column(s) {', '.join(missing)}")
    scores = scores.astype({"record_id": str, "target_arousal": float, column: float})
    if not np.all(np.isfinite(scores[column].to_numpy())):
        raise ValueError(f"score file {path} has non-finite {column} values")
    return scores


def _scores_per_level(scores, column, levels, summarize):
    per_level = {}
    for level in levels:
        values = scores.loc[scores["target_arousal"] == level, column].to_numpy()
        per_level[level] = summarize(level, values) if len(values) else None
    return per_level


@dataclass
class EvalReport:
    """Converted-duration statistics per target arousal level.

    Attributes:
        levels (dict): level -> ``{n, mean_seconds, std_seconds}``.
        delta_1_7 (float): mean seconds at level 1 minus mean seconds at level 7.
        losses (dict): duration losses at the source labels (``nll`` for uncert).
        ccc (float): concordance of predicted and true log durations.
        dataset_reference (dict): ground-truth seconds per rounded source arousal.
        self_consistency (dict): source and converted seconds when the target is the source label.
        sigma_rms (float): root mean square of predicted sigma, uncert only.
        residual_std (float): std of true minus predicted log durations.
        arousal_trend (dict): slope of each utterance's mean predicted log
            duration against its source arousal, see :func:`arousal_trend`.
        ser (dict): ccc and loss of externally recognised source arousal, if available.
        ser_error (dict): per level emotion-conversion error, if scores were supplied.
        wvmos (dict): per level mean naturalness score, if scores were supplied.
        config (dict): echo of the model hyperparameters and evaluation settings.
        seed (int): seed of the evaluated run.
    """

    levels: dict
    delta_1_7: float
    losses: dict
    ccc: float
    dataset_reference: dict
    self_consistency: dict
    sigma_rms: float = None
    residual_std: float = None
    arousal_trend: dict = None
    ser: dict = None
    ser_error: dict = None
    wvmos: dict = None
    config: dict = field(default_factory=dict)
    seed: int = None

    def to_dict(self):
        def by_level(mapping):
            return None if mapping is None else {str(level): value for level, value in mapping.items()}

        return {
            "format_version": REPORT_FORMAT_VERSION,
            "levels": by_level(self.levels),
            "delta_1_7": self.delta_1_7,
            "losses": self.losses,
            "ccc": self.ccc,
            "dataset_reference": by_level(self.dataset_reference),
            "self_consistency": self.self_consistency,
            "sigma_rms": self.sigma_rms,
            "residual_std": self.residual_std,
            "arousal_trend": self.arousal_trend,
            "ser": self.ser,
            "ser_error": by_level(self.ser_error),
            "wvmos": by_level(self.wvmos),
            "config": self.config,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data):
        version = data.get("format_version")
        if version != REPORT_FORMAT_VERSION:
            raise ValueError(f"unsupported report format version {version!r}")

        def by_level(mapping):
            return None if mapping is None else {int(level): value for level, value in mapping.items()}

        kwargs = {key: value for key, value in data.items() if key != "format_version"}
        for key in ("levels", "dataset_reference", "ser_error", "wvmos"):
            kwargs[key] = by_level(kwargs.get(key))
        return cls(**kwargs)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def level_table(self):
        """Per level statistics as a DataFrame with one row per target level."""
        table = pd.DataFrame(
            [
                {"arousal_level": level, "mean_seconds": stats["mean_seconds"], "std_seconds": stats["std_seconds"]}
                for level, stats in sorted(self.levels.items())
            ],
            columns=["arousal_level", "mean_seconds", "std_seconds"],
        )
        return table

    def to_csv(self):
        """``arousal_level,mean_seconds,std_seconds`` rows for plotting."""
        return self.level_table().to_csv(index=False, lineterminator="\n")

    def format_table(self):
        """Human readable summary."""
        table = self.level_table()
        reference = self.dataset_reference or {}
        table["dataset_seconds"] = [
            (reference.get(level) or {}).get("mean_seconds") for level in table["arousal_level"]
        ]
        if self.wvmos:
            table["wvmos"] = [(self.wvmos.get(level) or {}).get("mean") for level in table["arousal_level"]]
        if self.ser_error:
            table["ser_abs_percent"] = [
                (self.ser_error.get(level) or {}).get("abs_percent") for level in table["arousal_level"]
            ]
        lines = [table.to_string(index=False, float_format=lambda x: f"{x:.4f}"), ""]
        if self.delta_1_7 is not None:
            lines.append(f"delta 1-7: {self.delta_1_7:.4f} s")
        lines.append("losses: " + ", ".join(f"{name} {value:.4f}" for name, value in self.losses.items()))
        lines.append(f"ccc of log durations: {self.ccc:.4f}")
        if self.sigma_rms is not None:
            lines.append(f"sigma rms: {self.sigma_rms:.4f} (residual std {self.residual_std:.4f})")
        if self.arousal_trend is not None:
            slope, (low, high) = self.arousal_trend["slope"], self.arousal_trend["ci"]
            lines.append(f"arousal slope: {slope:.4f} log-frames per unit [{low:.4f}, {high:.4f}]")
        if self.ser is not None:
            lines.append(f"ser ccc: {self.ser['ccc']:.4f}")
        return "\n".join(lines)


class Evaluator:
    """Converts a corpus to a grid of target arousal levels and aggregates the results.

    Attributes:
        model (DurationModel): the predictor, used read-only.
        thread_num (int): number of conversion threads.
        chunk_size (int): records per conversion task.
        mode (ReversalMode): reversal formula.
        logger (Logger): module logger.
    """

    def __init__(self, model, thread_num=1, chunk_size=64, mode=ReversalMode.ROUND):
        if chunk_size < 1:
            raise ValueError(f"chunk_size must be positive, got {chunk_size}")
        self.model = model
        self.thread_num = thread_num
        self.chunk_size = chunk_size
        self.mode = ReversalMode(mode)
        self.logger = logging.getLogger(__name__)

    def run_conversions(self, corpus, targets):
        """Convert every record to the source label and every target.

        Returns:
            dict: ``SOURCE`` or target level -> rows sorted by record id.
        """
        record_ids = sorted(record.id for record in corpus if len(record.units))
        skipped = len(corpus) - len(record_ids)
        if skipped:
            self.logger.warning("skipped %d records without units", skipped)
        if not record_ids:
            raise ValueError("no record with units to evaluate")
        pool = ConversionPool(self.thread_num, self.model, corpus, self.mode)
        index = 0
        for target in [SOURCE, *targets]:
            for start in range(0, len(record_ids), self.chunk_size):
                chunk = record_ids[start : start + self.chunk_size]
                pool.input({"index": index, "record_ids": chunk, "target": target})
                index += 1
        self.logger.info(
            "converting %d records to %d targets with %d threads", len(record_ids), len(targets), self.thread_num
        )
        pool.start()
        pool.join()
        finished = sorted(pool.drain(), key=lambda result: result["index"])
        errors = [result["error"] for result in finished if "error" in result]
        if errors:
            raise errors[0]
        if len(finished) != index:
            raise RuntimeError(f"only {len(finished)} of {index} conversion tasks finished")

        by_target = {}
        for result in finished:
            for row in result["rows"]:
                key = SOURCE if row.target_arousal is None else int(row.target_arousal)
                by_target.setdefault(key, []).append(row)
        for rows in by_target.values():
            rows.sort(key=lambda row: row.record_id)
        return by_target

    def _source_metrics(self, rows):
        mean = np.concatenate([row.prediction.log_durations for row in rows])
        target = np.concatenate([row.true_log_durations for row in rows])
        losses = {"mse": loss_mse(mean, target), "abs": loss_abs(mean, target)}
        metrics = {"losses": losses, "ccc": ccc(mean, target), "residual_std": float(np.std(target - mean))}
        if self.model.variant is Variant.UNCERT:
            log_sigma = np.concatenate([row.prediction.log_sigma for row in rows])
            losses["nll"] = loss_nll(mean, log_sigma, target)
            sigma = np.concatenate([predicted_sigma(row.prediction) for row in rows])
            metrics["sigma_rms"] = float(np.sqrt(np.mean(sigma**2)))
        return metrics

    def evaluate(self, corpus, targets=AROUSAL_LEVELS, ser_scores=None, wvmos_scores=None, seed=None, config=None):
        """Build an :class:`EvalReport`.

        Args:
            corpus (Corpus): records to convert.
            targets (iterable): integer target arousal levels.
            ser_scores (DataFrame, optional): recognised arousal of converted
                utterances, columns ``record_id, target_arousal, ser_prediction``.
            wvmos_scores (DataFrame, optional): naturalness scores, columns
                ``record_id, target_arousal, wvmos``.
            seed (int, optional): seed echoed in the report.
            config (dict, optional): extra settings echoed in the report.
        """
        if len(corpus) == 0:
            raise ValueError("cannot evaluate on an empty corpus")
        _check_vocabulary(self.model, corpus)
        levels = sorted({_level_key(target) for target in targets})
        if not levels:
            raise ValueError("at least one target level is needed")
        by_target = self.run_conversions(corpus, levels)

        level_stats = {level: _level_summary(by_target[level]) for level in levels}
        delta = None
        if 1 in level_stats and 7 in level_stats:
            delta = level_stats[1]["mean_seconds"] - level_stats[7]["mean_seconds"]
        source_rows = by_target[SOURCE]
        metrics = self._source_metrics(source_rows)
        source_seconds = float(np.mean([row.source_seconds for row in source_rows]))
        converted_seconds = float(np.mean([row.output_seconds for row in source_rows]))
        trend = arousal_trend(
            [row.source_arousal for row in source_rows],
            [row.prediction.log_durations.mean() for row in source_rows],
        )

        ser = None
        with_ser = [record for record in corpus if record.ser_prediction is not None]
        if len(with_ser) >= 2:
            true = [record.arousal for record in with_ser]
            recognised = [record.ser_prediction for record in with_ser]
            ser = {"n": len(with_ser), "ccc": ccc(true, recognised), "loss": loss_ser(true, recognised)}
        ser_errors = None
        if ser_scores is not None:
            ser_errors = _scores_per_level(
                ser_scores,
                "ser_prediction",
                levels,
                lambda level, values: dict(ser_error(np.full(len(values), float(level)), values), n=int(len(values))),
            )
        wvmos = None
        if wvmos_scores is not None:
            wvmos = _scores_per_level(
                wvmos_scores,
                "wvmos",
                levels,
                lambda level, values: {"n": int(len(values)), "mean": float(values.mean()), "std": float(values.std())},
            )

        echo = {"model": self.model.config.to_dict(), "reversal_mode": self.mode.value, "targets": levels}
        echo.update(config or {})
        report = EvalReport(
            levels=level_stats,
            delta_1_7=delta,
            losses=metrics["losses"],
            ccc=metrics["ccc"],
            dataset_reference=dataset_reference(corpus),
            self_consistency={
                "source_seconds": source_seconds,
                "converted_seconds": converted_seconds,
                "ratio": converted_seconds / source_seconds if source_seconds > 0 else math.nan,
            },
            sigma_rms=metrics.get("sigma_rms"),
            residual_std=metrics["residual_std"],
            arousal_trend=trend,
            ser=ser,
            ser_error=ser_errors,
            wvmos=wvmos,
            config=echo,
            seed=seed,
        )
        if delta is not None:
            self.logger.info("delta 1-7 is %.4f s", delta)
        return report


def evaluate(model, corpus, targets=AROUSAL_LEVELS, **kwargs):
    """Evaluate ``model`` on ``corpus`` over ``targets`` with a single thread.

    Keyword arguments go to :meth:`Evaluator.evaluate`.
    """
    return Evaluator(model).evaluate(corpus, targets, **kwargs)
