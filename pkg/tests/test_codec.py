import numpy as np
import pytest

from emodur.codec import RunLengthSequence, UnitSequence, dedup, expand, seconds_of


def brute_force_expand(units, durations):
    ids = []
    for unit, duration in zip(units, durations):
        ids.extend([unit] * duration)
    return ids


@pytest.mark.parametrize(
    "ids, units, durations",
    [
        ([1, 1, 2, 2, 2, 1, 3, 3, 3, 3], [1, 2, 1, 3], [2, 3, 1, 4]),
        ([], [], []),
        ([5], [5], [1]),
        ([0, 1, 0, 1], [0, 1, 0, 1], [1, 1, 1, 1]),
    ],
)
def test_dedup(ids, units, durations):
    rls = dedup(UnitSequence(ids))
    assert rls.units.tolist() == units
    assert rls.durations.tolist() == durations
    assert rls.num_frames == len(ids)


def test_dedup_matches_expansion_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        ids = rng.integers(0, 4, size=rng.integers(0, 65)).tolist()
        rls = dedup(UnitSequence(ids))
        assert brute_force_expand(rls.units.tolist(), rls.durations.tolist()) == ids


@pytest.mark.parametrize(
    "units, durations, ids",
    [
        ([1, 2, 1, 3], [2, 3, 1, 4], [1, 1, 2, 2, 2, 1, 3, 3, 3, 3]),
        ([4, 0, 9], [1, 1, 1], [4, 0, 9]),
        ([7], [5], [7, 7, 7, 7, 7]),
    ],
)
def test_expand(units, durations, ids):
    seq = expand(RunLengthSequence(units, durations))
    assert seq.ids.tolist() == ids
    assert len(seq) == sum(durations)


def test_expand_keeps_frame_rate():
    assert expand(RunLengthSequence([1], [2]), frame_rate_hz=50).frame_rate_hz == 50


def test_default_frame_rate_is_49_hz():
    assert UnitSequence([1]).frame_rate_hz == 49.0
    assert expand(RunLengthSequence([1], [49])).frame_rate_hz == 49.0
    assert seconds_of(RunLengthSequence([1], [49])) == 1.0


@pytest.mark.parametrize(
    "units, durations",
    [
        ([1, 2], [1, 0]),
        ([1, 2], [1, -3]),
        ([1, 2, 3], [1, 1]),
        ([1, 1], [2, 2]),
    ],
)
def test_run_length_sequence_rejects_invalid(units, durations):
    with pytest.raises(ValueError):
        RunLengthSequence(units, durations)


def test_unit_sequence_rejects_invalid():
    with pytest.raises(ValueError):
        UnitSequence([1, -1])
    with pytest.raises(TypeError):
        UnitSequence([1.5, 2])
    with pytest.raises(ValueError):
        UnitSequence([[1, 2]])
    with pytest.raises(ValueError):
        UnitSequence([1], frame_rate_hz=0)


def test_unit_sequence_validate():
    assert UnitSequence([0, 9]).validate(10).ids.tolist() == [0, 9]
    with pytest.raises(ValueError, match="out of vocabulary"):
        UnitSequence([0, 10]).validate(10)


def test_round_trip_property():
    rng = np.random.default_rng(42)
    for _ in range(10000):
        vocabulary = int(rng.integers(1, 201))
        n = int(rng.integers(0, 513)) if rng.random() < 0.1 else int(rng.integers(0, 33))
        # few distinct ids keep repeats frequent
        ids = rng.integers(0, min(vocabulary, int(rng.integers(1, 5))), size=n)
        seq = UnitSequence(ids)
        assert expand(dedup(seq)) == seq


def test_reverse_round_trip_property():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        units = dedup(UnitSequence(rng.integers(0, 6, size=rng.integers(0, 40)))).units
        rls = RunLengthSequence(units, rng.integers(1, 9, size=len(units)))
        assert dedup(expand(rls)) == rls


def test_dedup_shortens_only_with_repeats():
    rng = np.random.default_rng(3)
    for _ in range(500):
        ids = rng.integers(0, 3, size=rng.integers(1, 30))
        rls = dedup(UnitSequence(ids))
        has_repeat = bool(np.any(ids[1:] == ids[:-1]))
        assert len(rls) <= len(ids)
        assert (len(rls) == len(ids)) == (not has_repeat)


@pytest.mark.parametrize(
    "durations, rate, seconds",
    [
        ([49], 49, 1.0),
        ([100, 96], 49, 4.0),
        ([], 49, 0.0),
        ([25, 25], 50, 1.0),
    ],
)
def test_seconds_of(durations, rate, seconds):
    units = list(range(len(durations)))
    assert seconds_of(RunLengthSequence(units, durations), rate) == pytest.approx(seconds)


@pytest.mark.parametrize("rate", [0, -49])
def test_seconds_of_rejects_non_positive_rate(rate):
    with pytest.raises(ValueError):
        seconds_of(RunLengthSequence([1], [1]), rate)
