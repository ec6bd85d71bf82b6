import math
import threading

import numpy as np
import pytest
from numpy.testing import assert_allclose

from emodur import trainer as trainer_module
from emodur.corpus import Corpus, UtteranceRecord
from emodur.embeddings import SPEAKER_DIM
from emodur.losses import LossWeights
from emodur.evaluator import Evaluator
from emodur.numerics import ParamStore, Tape
from emodur.predictor import predict, resynthesis
from emodur.trainer import (
    Adam,
    Batch,
    DivergenceError,
    TrainConfig,
    Trainer,
    batch_losses,
    evaluate_losses,
    iter_batches,
    prepare_examples,
    train,
)


def quick_config(**kwargs):
    options = dict(epochs=3, batch_size=8, learning_rate=1e-2, patience=50)
    options.update(kwargs)
    return TrainConfig(**options)


def test_train_config_defaults_and_validation():
    cfg = TrainConfig()
    assert (cfg.epochs, cfg.batch_size, cfg.learning_rate) == (200, 32, 1e-3)
    assert cfg.loss_weights.lambda4 == 2.0
    assert cfg.dequantize is True
    assert TrainConfig(loss_weights={"lambda4": 1.0}).loss_weights == LossWeights(lambda4=1.0)
    assert cfg.replace(epochs=4).loss_weights == cfg.loss_weights
    with pytest.raises(ValueError, match="epochs"):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError, match="learning_rate"):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError, match="Adam"):
        TrainConfig(beta1=1.0)
    with pytest.raises(ValueError, match="variant"):
        TrainConfig(variant="huber")
    with pytest.raises(TypeError):
        TrainConfig(loss_weights=2.0)


def test_adam_first_step_moves_by_learning_rate():
    params = ParamStore()
    params.add("x", np.array([1.0, -2.0]))
    params["x"].grad[:] = [4.0, -0.5]
    Adam(params, learning_rate=0.1).step()
    assert_allclose(params["x"].value, [0.9, -1.9], atol=1e-6)


def test_adam_minimises_a_quadratic():
    params = ParamStore()
    params.add("x", np.zeros(3))
    target = np.array([3.0, -1.0, 0.5])
    optimizer = Adam(params, learning_rate=0.05)
    for _ in range(2000):
        params["x"].grad[:] = 2 * (params["x"].value - target)
        optimizer.step()
    assert optimizer.t == 2000
    assert_allclose(params["x"].value, target, atol=2e-2)


def test_prepare_examples(make_corpus):
    corpus = make_corpus(n_utterances=4, units_per_utt=5)
    examples = prepare_examples(corpus)
    assert len(examples) == 4
    first = examples[0]
    rls = corpus.records[0].run_lengths
    assert first.units.tolist() == rls.units.tolist()
    assert_allclose(np.exp(first.log_durations), rls.durations)
    assert first.speaker.shape == (SPEAKER_DIM,)


def test_prepare_examples_skips_empty_records(caplog):
    records = [
        UtteranceRecord(id="a", units=[], arousal=3, speaker_id="s"),
        UtteranceRecord(id="b", units=[1, 1, 2], arousal=3, speaker_id="s"),
    ]
    examples = prepare_examples(Corpus(records, vocabulary=4))
    assert [example.record_id for example in examples] == ["b"]
    assert "record a has no units" in caplog.text


def test_batches_pad_and_mask(make_corpus):
    corpus = make_corpus(n_utterances=5, units_per_utt=4)
    examples = prepare_examples(corpus)
    examples[1].units = examples[1].units[:2]
    examples[1].log_durations = examples[1].log_durations[:2]
    batch = Batch.collate(examples[:3])
    assert batch.targets.shape == (3, 4)
    assert batch.mask.tolist()[1] == [1, 1, 0, 0]
    assert batch.speakers.shape == (3, SPEAKER_DIM)
    sizes = [len(b.units_list) for b in iter_batches(examples, 2)]
    assert sizes == [2, 2, 1]
    shuffled = [b.units_list[0].tolist() for b in iter_batches(examples, 1, np.random.default_rng(0))]
    assert sorted(map(tuple, shuffled)) == sorted(tuple(e.units.tolist()) for e in examples)


def test_evaluate_losses_is_position_weighted(make_corpus, model):
    examples = prepare_examples(make_corpus(n_utterances=9, units_per_utt=5))
    whole = evaluate_losses(model, examples, batch_size=64)
    single = evaluate_losses(model, examples, batch_size=1)
    for name in ("mse", "abs", "loss"):
        assert whole[name] == pytest.approx(single[name], rel=1e-9)
    assert whole["loss"] == whole["mse"]


def test_learns_a_constant_duration(make_corpus, model_config):
    corpus = make_corpus(
        n_utterances=48,
        base_log_duration=math.log(3.0),
        arousal_slope=0.0,
        unit_log_duration_spread=0.0,
        lognormal_sigma=1e-6,
    )
    cfg = quick_config(epochs=150, learning_rate=5e-3, patience=1000, dequantize=False)
    result = Trainer(cfg, model_config).train(corpus)
    record = corpus.records[0]
    pred = predict(result.model, record.run_lengths.units, corpus.speaker_vector(record), record.arousal)
    assert np.max(np.abs(pred.log_durations - math.log(3.0))) <= 0.05


def test_training_log(make_corpus, model_config):
    train_part, val_part = make_corpus(n_utterances=16), make_corpus(n_utterances=6, seed=1)
    result = Trainer(quick_config(), model_config).train(train_part, val_part)
    assert [(entry["epoch"], entry["split"]) for entry in result.log] == [
        (epoch, name) for epoch in range(4) for name in ("train", "val")
    ]
    for entry in result.log:
        assert entry["loss"] == entry["mse"]
        assert entry["total"] == pytest.approx(2.0 * entry["loss"])
    val_losses = [entry["loss"] for entry in result.log if entry["split"] == "val"]
    assert val_losses[result.best_epoch] == min(val_losses)
    assert not result.stopped_early


def test_training_is_deterministic(make_corpus, model_config):
    corpus = make_corpus(n_utterances=12)
    first = Trainer(quick_config(epochs=2), model_config).train(corpus).model.params.state_dict()
    second = Trainer(quick_config(epochs=2), model_config).train(corpus).model.params.state_dict()
    assert all(np.array_equal(first[name], second[name]) for name in first)


@pytest.mark.parametrize("variant, extra", [("l1", None), ("uncert", "nll")])
def test_variants_train(make_corpus, model_config, variant, extra):
    result = Trainer(quick_config(variant=variant), model_config).train(make_corpus(n_utterances=10))
    assert result.model.variant.value == variant
    assert result.best_epoch >= 1
    assert result.log[result.best_epoch]["loss"] < result.log[0]["loss"]
    if extra:
        assert extra in result.log[0]
        assert result.log[0]["loss"] == result.log[0]["nll"]
    else:
        assert result.log[0]["loss"] == result.log[0]["abs"]


def test_early_stopping_keeps_initial_model(make_corpus, model_config, monkeypatch):
    monkeypatch.setattr(Adam, "step", lambda self: None)
    result = Trainer(quick_config(epochs=10, patience=2), model_config).train(make_corpus(n_utterances=8))
    assert result.stopped_early
    assert result.best_epoch == 0
    assert result.log[-1]["epoch"] == 2


def test_divergence_is_reported(make_corpus, model_config, monkeypatch):
    real_grad = trainer_module.loss_mse_grad

    def exploding_in_training(pred, target, mask=None):
        if resynthesis.get("training"):
            return float("nan"), np.zeros_like(np.asarray(pred, dtype=float))
        return real_grad(pred, target, mask)

    monkeypatch.setattr(trainer_module, "loss_mse_grad", exploding_in_training)
    with pytest.raises(DivergenceError) as info:
        Trainer(quick_config(), model_config).train(make_corpus(n_utterances=8))
    assert (info.value.epoch, info.value.step) == (1, 1)
    assert "diverged" in str(info.value)


def test_non_finite_initial_loss_is_a_divergence(make_corpus, model_config, monkeypatch):
    def exploding(pred, target, mask=None):
        return float("inf"), np.zeros_like(np.asarray(pred, dtype=float))

    monkeypatch.setattr(trainer_module, "loss_mse_grad", exploding)
    with pytest.raises(DivergenceError) as info:
        Trainer(quick_config(), model_config).train(make_corpus(n_utterances=8))
    assert (info.value.epoch, info.value.step) == (0, 0)


def test_batch_losses_records_on_the_given_tape(make_corpus, model):
    batch = Batch.collate(prepare_examples(make_corpus(n_utterances=3)))
    tape = Tape()
    _, result, grads = batch_losses(model, batch, tape)
    assert len(tape) > 0
    model.params.zero_grad()
    tape.backward(result.output, result.scatter(grads))
    assert np.any(model.params["head_bias"].grad != 0)


def test_dequantized_targets_stay_in_their_rounding_bin(make_corpus):
    batch = Batch.collate(prepare_examples(make_corpus(n_utterances=6)))
    jittered = batch.dequantized(np.random.default_rng(0))
    inside = batch.mask > 0
    frames, moved = np.exp(batch.targets[inside]), np.exp(jittered.targets[inside])
    assert np.all(np.abs(moved - frames) <= 0.5)
    assert not np.allclose(moved, frames)
    assert np.all(jittered.targets[~inside] == 0)
    assert jittered.units_list is batch.units_list


@pytest.mark.parametrize("variant", ["mse", "l1", "uncert"])
def test_learns_the_arousal_trend(make_corpus, model_config, variant):
    corpus = make_corpus(
        n_utterances=48,
        base_log_duration=math.log(4.0),
        arousal_slope=0.3,
        unit_log_duration_spread=0.0,
        lognormal_sigma=0.05,
    )
    cfg = quick_config(variant=variant, epochs=150, learning_rate=5e-3, patience=1000)
    model = Trainer(cfg, model_config).train(corpus).model
    record = corpus.records[0]
    units, speaker = record.run_lengths.units, corpus.speaker_vector(record)
    calm = predict(model, units, speaker, 2.0).log_durations.mean()
    excited = predict(model, units, speaker, 6.0).log_durations.mean()
    # 1.2 log-frames planted between the two labels
    assert calm - excited >= 0.5


def test_evaluation_runs_while_another_thread_trains(make_corpus, model_config, model):
    corpus = make_corpus(n_utterances=16)
    outcome = {}

    def run_training():
        try:
            outcome["result"] = Trainer(quick_config(epochs=5), model_config).train(corpus)
        except Exception as e:
            outcome["error"] = e

    worker = threading.Thread(target=run_training)
    worker.start()
    reports = []
    try:
        while worker.is_alive() or not reports:
            reports.append(Evaluator(model, thread_num=2).evaluate(corpus, targets=[1, 7]))
    finally:
        worker.join()
    assert "error" not in outcome
    assert len(outcome["result"].log) == 6
    assert all(report.delta_1_7 == reports[0].delta_1_7 for report in reports)


def test_steps_run_inside_the_training_guard(make_corpus, model_config, monkeypatch):
    seen = []
    monkeypatch.setattr(Adam, "step", lambda self: seen.append(resynthesis.get("training")))
    before = resynthesis.get("reversals")
    Trainer(quick_config(epochs=2), model_config).train(make_corpus(n_utterances=16))
    assert seen == [True] * 4
    assert resynthesis.get("reversals") == before
    assert resynthesis.get("training") is False


def test_duration_weight_scales_the_update(make_corpus, model_config, monkeypatch):
    grads = []

    def record_grad(self):
        grads.append(self.params["head_bias"].grad.copy())

    monkeypatch.setattr(Adam, "step", record_grad)
    corpus = make_corpus(n_utterances=8)
    for lambda4 in (1.0, 3.0):
        Trainer(quick_config(epochs=1, loss_weights={"lambda4": lambda4}), model_config).train(corpus)
    assert_allclose(grads[1], 3.0 * grads[0])


def test_train_splits_the_corpus(make_corpus, model_config):
    corpus = make_corpus(n_utterances=20)
    result = train(corpus, quick_config(epochs=1), model_config)
    assert {entry["split"] for entry in result.log} == {"train", "val"}
    assert result.model.config.vocabulary == corpus.vocabulary
    with pytest.raises(ValueError, match="empty"):
        train(corpus.subset([]), quick_config(), model_config)
