"""Composition root tying corpus, training and evaluation to a storage backend."""

import json
import logging
import sys
from importlib import import_module

from . import storage as storage_package
from .config import OverrideRules, load_config_file
from .corpus import Corpus, GeneratorConfig, UtteranceRecord, generate, load, save, split
from .evaluator import EvalConfig, Evaluator, convert_records, load_scores
from .losses import LossWeights
from .predictor import ModelConfig, ReversalMode, Variant, load_checkpoint, save_checkpoint
from .storage import BaseStorage
from .trainer import TrainConfig, Trainer

SECTIONS = {
    "generator": GeneratorConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "loss": LossWeights,
    "eval": EvalConfig,
}


def build_override_rules():
    """Rules for every ``section.key`` a run accepts."""
    variants = [variant.value for variant in Variant]
    rules = OverrideRules()
    rules.add_config("generator", GeneratorConfig)
    rules.add_config("model", ModelConfig, {"variant": variants})
    rules.add_config("train", TrainConfig, {"variant": variants})
    rules.add_config("loss", LossWeights)
    rules.add_config("eval", EvalConfig, {"reversal_mode": [mode.value for mode in ReversalMode]})
    return rules


class Experiment:
    """One run of generation, training, conversion or evaluation.

    Attributes:
        storage (BaseStorage): where corpora, checkpoints, logs and reports live.
        generator_config (GeneratorConfig): synthetic corpus settings.
        model_config (ModelConfig): predictor hyperparameters.
        train_config (TrainConfig): optimisation settings, loss weights included.
        eval_config (EvalConfig): evaluation settings.
        logger (Logger): logger of the run.
    """

    def __init__(
        self,
        storage={"backend": "FileSystem", "root_dir": "."},
        log_level=logging.INFO,
        config=None,
        overrides=None,
    ):
        """Init the run.

        Args:
            storage (dict or BaseStorage): storage backend config or instance.
            log_level: logging level.
            config (dict or str, optional): config sections, or a YAML/JSON filename.
            overrides (dict, optional): ``{"section.key": raw_value}`` applied over ``config``.
        """
        self.set_logger(log_level)
        self.set_storage(storage)
        self.set_config(config, overrides)

    def set_logger(self, log_level=logging.INFO):
        """Configure logging with log_level."""
        logging.basicConfig(
            format="%(asctime)s - %(levelname)s - %(name)s - %(message)s", level=log_level, stream=sys.stderr
        )
        self.logger = logging.getLogger(__name__)

    def set_storage(self, storage):
        """Set the storage backend.

        Args:
            storage (dict or BaseStorage): ``{"backend": name, **kwargs}`` or an instance.
        """
        if isinstance(storage, BaseStorage):
            self.storage = storage
        elif isinstance(storage, dict):
            storage = dict(storage)
            if "backend" not in storage and "root_dir" in storage:
                storage["backend"] = "FileSystem"
            try:
                backend_cls = getattr(storage_package, storage["backend"])
            except AttributeError:
                module_name, _, class_name = storage["backend"].rpartition(".")
                try:
                    backend_cls = getattr(import_module(module_name), class_name)
                except (ImportError, AttributeError, ValueError):
                    self.logger.error("cannot find storage backend %s", storage["backend"])
                    raise ValueError(f'unknown storage backend "{storage["backend"]}"') from None
            kwargs = storage.copy()
            del kwargs["backend"]
            self.storage = backend_cls(**kwargs)
        else:
            raise TypeError('"storage" must be a storage object or a dict')

    def set_config(self, config=None, overrides=None):
        """Build the section configs from a mapping or file plus overrides."""
        if isinstance(config, str):
            config = load_config_file(config)
        config = {section: dict(values or {}) for section, values in (config or {}).items()}
        unknown = sorted(set(config) - set(SECTIONS))
        if unknown:
            raise KeyError(f"unsupported config section(s) {', '.join(unknown)}, supported are {', '.join(SECTIONS)}")
        for section, values in build_override_rules().apply(overrides).items():
            config.setdefault(section, {}).update(values)

        train = config.get("train", {})
        if "loss" in config:
            weights = dict(train.get("loss_weights") or {})
            weights.update(config["loss"])
            train["loss_weights"] = weights
        self.generator_config = GeneratorConfig.from_dict(config.get("generator"))
        self.train_config = TrainConfig.from_dict(train)
        # the model variant follows the training variant unless only the model section sets it
        model = config.get("model", {})
        if "variant" in train or "variant" not in model:
            model["variant"] = self.train_config.variant
        self.model_config = ModelConfig.from_dict(model)
        if self.model_config.variant != self.train_config.variant:
            self.train_config = self.train_config.replace(variant=self.model_config.variant)
        self.eval_config = EvalConfig.from_dict(config.get("eval"))

    def config_dict(self):
        return {
            "generator": self.generator_config.to_dict(),
            "model": self.model_config.to_dict(),
            "train": self.train_config.to_dict(),
            "eval": self.eval_config.to_dict(),
        }

    def generate(self, out="corpus.jsonl"):
        """Generate a synthetic corpus and save it under ``out``."""
        cfg = self.generator_config
        self.logger.info("generating %d utterances with seed %d", cfg.n_utterances, cfg.seed)
        corpus = generate(cfg)
        save(corpus, self.storage.path(out))
        return corpus

    def load_corpus(self, corpus_id):
        return load(self.storage.path(corpus_id))

    def train(self, corpus_id, checkpoint="model.json", log="train_log.jsonl"):
        """Train on the train split of a stored corpus.

        The best checkpoint is saved under ``checkpoint`` and the per-epoch
        losses as JSON lines under ``log``.
        """
        corpus = self.load_corpus(corpus_id)
        cfg = self.train_config
        if len(corpus) == 0:
            raise ValueError(f"corpus {corpus_id} is empty")
        train_part, val_part, test_part = split(corpus, cfg.split_ratios, cfg.split_seed)
        self.logger.info("split %s into %d/%d/%d records", corpus_id, len(train_part), len(val_part), len(test_part))
        trainer = Trainer(cfg, self.model_config)
        result = trainer.train(train_part, val_part if len(val_part) else None, corpus.vocabulary)
        save_checkpoint(result.model, self.storage.path(checkpoint))
        if log:
            self.storage.write(log, "".join(json.dumps(entry) + "\n" for entry in result.log))
            self.logger.info("training log written to %s", log)
        return result

    def convert(self, checkpoint, corpus_id, target_arousal, out=None):
        """Convert every record of a stored corpus to ``target_arousal``.

        Returns:
            Corpus: the converted records, labelled with the target arousal;
            saved under ``out`` when given.
        """
        model = load_checkpoint(self.storage.path(checkpoint))
        corpus = self.load_corpus(corpus_id)
        records = [record for record in corpus if len(record.units)]
        if not records:
            raise ValueError(f"corpus {corpus_id} has no record to convert")
        if corpus.vocabulary != model.config.vocabulary:
            raise ValueError(
                f"model vocabulary {model.config.vocabulary} does not match corpus vocabulary {corpus.vocabulary}"
            )
        sequences, rows = [], []
        chunk = self.eval_config.chunk_size
        for start in range(0, len(records), chunk):
            chunk_sequences, chunk_rows = convert_records(
                model, records[start : start + chunk], target_arousal, corpus, self.eval_config.reversal_mode
            )
            sequences.extend(chunk_sequences)
            rows.extend(chunk_rows)
        converted = Corpus(
            [
                UtteranceRecord(
                    id=record.id,
                    units=sequence.ids,
                    arousal=row.target_arousal,
                    speaker_id=record.speaker_id,
                    speaker_vector=record.speaker_vector,
                    frame_rate_hz=record.frame_rate_hz,
                )
                for record, sequence, row in zip(records, sequences, rows)
            ],
            corpus.vocabulary,
            corpus.frame_rate_hz,
            corpus.speakers,
            dict(corpus.metadata, converted_from=corpus_id, target_arousal=rows[0].target_arousal),
        )
        if out:
            save(converted, self.storage.path(out))
        self.logger.info(
            "converted %d records to arousal %s, mean %.3f s -> %.3f s",
            len(rows),
            rows[0].target_arousal,
            sum(row.source_seconds for row in rows) / len(rows),
            sum(row.output_seconds for row in rows) / len(rows),
        )
        return converted

    def evaluate(
        self,
        checkpoint,
        corpus_id,
        report="report.json",
        csv="report.csv",
        subset="all",
        ser_scores=None,
        wvmos_scores=None,
    ):
        """Evaluate a checkpoint on a stored corpus and write the report files.

        Args:
            subset (str): ``all`` or one of the ``train``, ``val`` and ``test``
                parts produced by the training split settings.
            ser_scores (str, optional): CSV of recognised arousal of converted speech.
            wvmos_scores (str, optional): CSV of naturalness scores of converted speech.
        """
        model = load_checkpoint(self.storage.path(checkpoint))
        corpus = self.load_corpus(corpus_id)
        if subset != "all":
            ratios, seed = self.train_config.split_ratios, self.train_config.split_seed
            parts = dict(zip(("train", "val", "test"), split(corpus, ratios, seed)))
            if subset not in parts:
                raise ValueError(f'unknown subset "{subset}", choose from all, train, val, test')
            corpus = parts[subset]
        cfg = self.eval_config
        evaluator = Evaluator(model, cfg.thread_num, cfg.chunk_size, cfg.reversal_mode)
        result = evaluator.evaluate(
            corpus,
            cfg.targets,
            ser_scores=None if ser_scores is None else load_scores(self.storage.path(ser_scores), "ser_prediction"),
            wvmos_scores=None if wvmos_scores is None else load_scores(self.storage.path(wvmos_scores), "wvmos"),
            seed=self.train_config.seed,
            config={
                "corpus": corpus_id,
                "checkpoint": checkpoint,
                "subset": subset,
                "corpus_metadata": corpus.metadata,
            },
        )
        if report:
            self.storage.write(report, result.to_json() + "\n")
            self.logger.info("report written to %s", report)
        if csv:
            self.storage.write(csv, result.to_csv())
        return result
