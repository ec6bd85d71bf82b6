"""Usage cases of a full run: generate, train, convert and evaluate."""

import json
import logging
import os.path as osp

import pytest

from emodur.config import OverrideRules, load_config_file, parse_assignments, parse_bool, parse_floats
from emodur.corpus import load
from emodur.experiment import Experiment, build_override_rules
from emodur.storage import FileSystem

SMALL = {
    "generator": {"n_utterances": 20, "vocabulary": 8, "units_per_utt": 5, "n_speakers": 2},
    "model": {"unit_dim": 4, "hidden": 6},
    "train": {"epochs": 2, "batch_size": 8, "learning_rate": 0.01},
    "eval": {"targets": [1, 4, 7]},
}


@pytest.fixture
def experiment(tmp_path):
    return Experiment(storage={"root_dir": str(tmp_path)}, log_level=logging.INFO, config=SMALL)


def test_parse_helpers():
    assert parse_bool("Yes") is True and parse_bool("off") is False
    with pytest.raises(ValueError):
        parse_bool("maybe")
    assert parse_floats("0.8,0.1,0.1") == (0.8, 0.1, 0.1)
    assert parse_assignments(["train.epochs = 5"]) == {"train.epochs": "5"}
    with pytest.raises(ValueError, match="section.key=value"):
        parse_assignments(["train.epochs"])


def test_override_rules():
    rules = build_override_rules()
    options = rules.apply({"train.epochs": "5", "train.split_ratios": "0.5,0.25,0.25", "eval.reversal_mode": "round"})
    assert options == {"train": {"epochs": 5, "split_ratios": (0.5, 0.25, 0.25)}, "eval": {"reversal_mode": "round"}}
    assert "train.loss_weights" not in rules.rules
    with pytest.raises(KeyError, match="unsupported option"):
        rules.apply({"train.epoch": "5"})
    with pytest.raises(ValueError, match="must be one of"):
        rules.apply({"model.variant": "huber"})
    with pytest.raises(ValueError, match="invalid value"):
        rules.apply({"train.epochs": "many"})


def test_custom_override_rule():
    rules = OverrideRules()
    rules.add_rule("run.name", str.upper)
    assert rules.apply({"run.name": "abc"}) == {"run": {"name": "ABC"}}
    assert rules.apply(None) == {}


def test_config_sections(tmp_path):
    run = Experiment(storage={"root_dir": str(tmp_path)}, config={"loss": {"lambda4": 1.0}, "model": {"variant": "l1"}})
    assert run.train_config.loss_weights.lambda4 == 1.0
    assert run.train_config.variant == "l1"
    assert run.model_config.variant == "l1"
    run.set_config({"train": {"variant": "uncert"}, "model": {"variant": "l1"}})
    assert run.model_config.variant == "uncert"
    run.set_config(None, {"train.variant": "mse", "eval.thread_num": "2"})
    assert run.model_config.variant == "mse"
    assert run.eval_config.thread_num == 2
    assert set(run.config_dict()) == {"generator", "model", "train", "eval"}


def test_config_errors(tmp_path):
    with pytest.raises(KeyError, match="unsupported config section"):
        Experiment(storage={"root_dir": str(tmp_path)}, config={"optimizer": {}})
    with pytest.raises(KeyError):
        Experiment(storage={"root_dir": str(tmp_path)}, config={"train": {"epoch": 3}})
    with pytest.raises(ValueError, match="storage backend"):
        Experiment(storage={"backend": "Cloud", "root_dir": str(tmp_path)})
    with pytest.raises(TypeError):
        Experiment(storage="somewhere")


def test_config_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("train:\n  epochs: 7\n  variant: l1\nloss:\n  lambda4: 0.5\n")
    assert load_config_file(str(path)) == {"train": {"epochs": 7, "variant": "l1"}, "loss": {"lambda4": 0.5}}
    run = Experiment(storage=FileSystem(str(tmp_path)), config=str(path))
    assert (run.train_config.epochs, run.model_config.variant) == (7, "l1")
    assert run.train_config.loss_weights.lambda4 == 0.5
    (tmp_path / "list.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(TypeError):
        load_config_file(str(tmp_path / "list.yaml"))
    with pytest.raises(OSError):
        load_config_file(str(tmp_path / "missing.yaml"))


def test_full_run(experiment, tmp_path):
    corpus = experiment.generate("corpus.jsonl.gz")
    assert len(corpus) == 20

    result = experiment.train("corpus.jsonl.gz", checkpoint="model.json", log="log.jsonl")
    assert osp.isfile(tmp_path / "model.json")
    log = [json.loads(line) for line in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert log == result.log
    assert log[0]["epoch"] == 0

    converted = experiment.convert("model.json", "corpus.jsonl.gz", 7, out="converted.jsonl")
    assert len(converted) == 20
    assert {record.arousal for record in converted} == {7.0}
    assert converted.metadata["converted_from"] == "corpus.jsonl.gz"
    assert load(str(tmp_path / "converted.jsonl")) == converted
    for source, target in zip(corpus, converted):
        assert (source.run_lengths.units == target.run_lengths.units).all()

    report = experiment.evaluate("model.json", "corpus.jsonl.gz", subset="test")
    assert sorted(report.levels) == [1, 4, 7]
    assert report.config["subset"] == "test"
    assert report.levels[1]["n"] == 2
    saved = json.loads((tmp_path / "report.json").read_text())
    assert saved["delta_1_7"] == report.delta_1_7
    assert (tmp_path / "report.csv").read_text().startswith("arousal_level,")


def test_evaluate_rejects_unknown_subset(experiment):
    experiment.generate("corpus.jsonl")
    experiment.train("corpus.jsonl", log=None)
    with pytest.raises(ValueError, match="unknown subset"):
        experiment.evaluate("model.json", "corpus.jsonl", subset="dev")


def test_convert_checks_vocabulary(experiment, tmp_path):
    experiment.generate("corpus.jsonl")
    experiment.train("corpus.jsonl")
    wide = {"generator": dict(SMALL["generator"], vocabulary=9)}
    other = Experiment(storage={"root_dir": str(tmp_path)}, config=wide)
    other.generate("wide.jsonl")
    with pytest.raises(ValueError, match="vocabulary"):
        experiment.convert("model.json", "wide.jsonl", 3)
