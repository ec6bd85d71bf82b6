import gzip
import json
import math

import numpy as np
import pytest

from emodur.codec import dedup
from emodur.corpus import (
    AROUSAL_LEVELS,
    Corpus,
    CorpusFormatError,
    GeneratorConfig,
    SyntheticGenerator,
    UtteranceRecord,
    dataset_reference,
    generate,
    load,
    planted_contrast,
    save,
    split,
    summarize,
)


def write_lines(path, header, records):
    lines = [json.dumps(header)] + [line if isinstance(line, str) else json.dumps(line) for line in records]
    path.write_text("\n".join(lines) + "\n")


HEADER = {"format_version": 1, "vocabulary": 8, "frame_rate_hz": 49.0, "speakers": {}, "metadata": {}}


def test_generate_is_deterministic(make_corpus):
    assert make_corpus(seed=4) == make_corpus(seed=4)
    assert make_corpus(seed=4) != make_corpus(seed=5)


def test_generated_records(make_corpus):
    corpus = make_corpus(n_utterances=10, units_per_utt=7)
    assert len(corpus) == 10
    assert [record.id for record in corpus][:2] == ["utt000000", "utt000001"]
    assert set(corpus.speakers) == {"spk000", "spk001", "spk002"}
    for record in corpus:
        assert len(record.run_lengths) == 7
        assert 1 <= record.arousal <= 7
        assert record.speaker_id in corpus.speakers
    assert corpus.metadata["generator"]["n_utterances"] == 10


def test_generated_durations_are_the_planted_ones():
    cfg = GeneratorConfig(n_utterances=20, vocabulary=6, units_per_utt=9, seed=2)
    corpus = generate(cfg)
    for record, utt in zip(corpus, SyntheticGenerator(cfg).utterances()):
        assert dedup(record.sequence) == utt.planted
        assert record.arousal == utt.arousal


def test_generator_config_validation():
    with pytest.raises(ValueError):
        GeneratorConfig(n_utterances=0)
    with pytest.raises(ValueError):
        GeneratorConfig(vocabulary=1)
    with pytest.raises(ValueError, match="lognormal_sigma"):
        GeneratorConfig(lognormal_sigma=0)
    with pytest.raises(ValueError, match="outlier_rate"):
        GeneratorConfig(outlier_rate=1.5)
    with pytest.raises(ValueError, match="seed"):
        GeneratorConfig(seed=-1)
    with pytest.raises(KeyError):
        GeneratorConfig.from_dict({"n_utterance": 3})


def test_arousal_distribution():
    generator = SyntheticGenerator(GeneratorConfig(n_utterances=10_000))
    assert len(generator.raw_arousal) == 10_000
    assert generator.raw_arousal.mean() == pytest.approx(4.0, abs=0.05)
    assert generator.raw_arousal.std() == pytest.approx(0.95, abs=0.05)
    assert generator.arousal.min() >= 1 and generator.arousal.max() <= 7


def test_planted_contrast_without_slope_is_zero():
    contrast = planted_contrast(GeneratorConfig(n_utterances=50, units_per_utt=20, arousal_slope=0.0))
    assert contrast["delta"] == 0.0
    assert contrast["seconds_at_1"] == contrast["seconds_at_7"] > 0


def test_default_planted_contrast():
    contrast = planted_contrast()
    assert 0.21 <= contrast["delta"] <= 0.37
    assert contrast["seconds_at_1"] > contrast["seconds_at_7"]


def test_generated_log_durations_follow_the_slope():
    cfg = GeneratorConfig(
        n_utterances=400,
        units_per_utt=20,
        base_log_duration=math.log(8.0),
        arousal_slope=0.1,
        unit_log_duration_spread=0.0,
        seed=3,
    )
    arousal, log_durations = [], []
    for record in generate(cfg):
        durations = record.run_lengths.durations
        arousal.extend([record.arousal] * len(durations))
        log_durations.extend(np.log(durations))
    slope = np.polyfit(arousal, log_durations, 1)[0]
    assert slope == pytest.approx(-0.1, abs=0.02)


def test_outliers_inflate_durations():
    base = dict(n_utterances=30, units_per_utt=10, vocabulary=8, seed=1)
    clean = generate(GeneratorConfig(**base))
    noisy = generate(GeneratorConfig(outlier_rate=0.2, **base))
    assert sum(r.seconds for r in noisy) > sum(r.seconds for r in clean)


@pytest.mark.parametrize("name", ["corpus.jsonl", "corpus.jsonl.gz"])
def test_save_and_load(tmp_path, make_corpus, name):
    corpus = make_corpus(n_utterances=5)
    path = tmp_path / name
    save(corpus, str(path))
    assert load(str(path)) == corpus
    if name.endswith(".gz"):
        with gzip.open(path, "rt") as fin:
            assert json.loads(fin.readline())["vocabulary"] == 8


def test_load_keeps_optional_fields(tmp_path):
    record = {"id": "a", "units": [1, 1, 2], "arousal": 3.5, "speaker_id": "s", "ser_prediction": 4.0, "mel": "a.npy"}
    path = tmp_path / "c.jsonl"
    write_lines(path, HEADER, [record])
    loaded = load(str(path))["a"]
    assert loaded.ser_prediction == 4.0
    assert loaded.mel == "a.npy"
    assert loaded.run_lengths.durations.tolist() == [2, 1]


@pytest.mark.parametrize(
    "lines, message",
    [
        ([{"id": "a", "units": [1], "arousal": 9, "speaker_id": "s"}], "line 2, record a: arousal"),
        (['{"id": "a", "units": [1'], "line 2: malformed JSON"),
        (
            [{"id": "a", "units": [1], "arousal": 3, "speaker_id": "s"}] * 2,
            "line 3, record a: duplicate record id",
        ),
        ([{"id": "b", "units": [8], "arousal": 3, "speaker_id": "s"}], "out of vocabulary"),
        ([{"id": "c", "units": [1], "arousal": 3}], "missing"),
        ([{"id": "d", "units": [1], "arousal": 3, "speaker_id": "s", "pitch": 1}], "unsupported"),
        ([{"id": "e", "units": [1], "arousal": 3, "speaker_id": "s", "frame_rate_hz": 50}], "frame rate"),
    ],
)
def test_load_rejects_bad_records(tmp_path, lines, message):
    path = tmp_path / "bad.jsonl"
    write_lines(path, HEADER, lines)
    with pytest.raises(CorpusFormatError, match=message):
        load(str(path))


def test_load_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.jsonl"
    write_lines(path, dict(HEADER, format_version=2), [])
    with pytest.raises(CorpusFormatError, match="line 1"):
        load(str(path))
    path.write_text("")
    with pytest.raises(CorpusFormatError, match="header"):
        load(str(path))


def test_format_error_attributes(tmp_path):
    path = tmp_path / "bad.jsonl"
    write_lines(path, HEADER, [{"id": "x", "units": [1], "arousal": 0, "speaker_id": "s"}])
    with pytest.raises(CorpusFormatError) as info:
        load(str(path))
    assert info.value.lineno == 2
    assert info.value.record_id == "x"
    assert isinstance(info.value, ValueError)


def test_corpus_speaker_vector():
    record = UtteranceRecord(id="a", units=[1], arousal=2, speaker_id="s")
    corpus = Corpus([record], vocabulary=4, speakers={"s": np.ones(512)})
    assert corpus.speaker_vector(record).sum() == 512
    other = Corpus([record], vocabulary=4)
    assert not other.speaker_vector(record).any()
    own = UtteranceRecord(id="b", units=[1], arousal=2, speaker_id="s", speaker_vector=np.full(512, 2.0))
    assert corpus.speaker_vector(own)[0] == 2.0


def test_split_is_disjoint_and_complete(make_corpus):
    corpus = make_corpus(n_utterances=60)
    train, val, test = split(corpus, (0.8, 0.1, 0.1), seed=7)
    assert (len(train), len(val), len(test)) == (48, 6, 6)
    ids = [record.id for part in (train, val, test) for record in part]
    assert sorted(ids) == sorted(record.id for record in corpus)
    assert train.metadata["split"] == "train" and test.metadata["split_seed"] == 7


def test_split_keeps_speaker_proportions(make_corpus):
    corpus = make_corpus(n_utterances=90)
    train, _, _ = split(corpus, seed=1)
    for speaker in corpus.speakers:
        total = sum(record.speaker_id == speaker for record in corpus)
        in_train = sum(record.speaker_id == speaker for record in train)
        assert abs(in_train - 0.8 * total) <= 1.5


def test_split_determinism_and_edge_cases(make_corpus):
    corpus = make_corpus(n_utterances=10)
    first, second = split(corpus, seed=3), split(corpus, seed=3)
    assert [r.id for r in first[0]] == [r.id for r in second[0]]
    train, val, test = split(corpus.subset(["utt000000"]))
    assert (len(train), len(val), len(test)) == (1, 0, 0)
    train, val, test = split(corpus, (0.0, 0.0, 1.0))
    assert len(test) == 10
    with pytest.raises(ValueError, match="ratios"):
        split(corpus, (0.5, 0.5, 0.5))
    with pytest.raises(ValueError, match="empty"):
        split(corpus.subset([]))


def test_dataset_reference(make_corpus):
    corpus = make_corpus(n_utterances=40)
    reference = dataset_reference(corpus)
    assert tuple(reference) == AROUSAL_LEVELS
    assert sum(entry["n"] for entry in reference.values()) == 40
    for entry in reference.values():
        assert entry["n"] > 0 or entry["mean_seconds"] is None


def test_summarize(make_corpus):
    corpus = make_corpus(n_utterances=12, units_per_utt=5)
    summary = summarize(corpus)
    assert summary["n_records"] == 12
    assert summary["n_units"] == 60
    assert summary["n_speakers"] <= 3
    assert summary["mean_seconds"] == pytest.approx(np.mean([r.seconds for r in corpus]))
    with pytest.raises(ValueError):
        summarize(corpus.subset([]))


def test_record_validation():
    with pytest.raises(ValueError):
        UtteranceRecord(id="", units=[1], arousal=3, speaker_id="s")
    with pytest.raises(ValueError):
        UtteranceRecord(id="a", units=[1], arousal=3, speaker_id="s", speaker_vector=[1.0])
    with pytest.raises(ValueError):
        Corpus([], vocabulary=0)
