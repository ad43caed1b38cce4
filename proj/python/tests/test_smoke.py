import itertools
import json
import math
import os
from pathlib import Path

import numpy as np
import pytest

import semicrfkit as sk

DATA = Path(os.environ.get("SEMICRF_TEST_DATA", Path(__file__).resolve().parents[2] / "tests" / "data"))


def random_scores(T, rng):
    upper = np.triu(rng.uniform(-2, 2, size=(T, T)))
    eps = rng.uniform(-2, 2, size=T - 1)
    return sk.IntervalScores(upper, eps)


def configurations(T):
    # every valid set: closed intervals may share an endpoint but not overlap
    cands = [(i, j) for i in range(T) for j in range(i, T)]
    for r in range(0, len(cands) + 1):
        for combo in itertools.combinations(cands, r):
            if all(a[0] >= b[1] or b[0] >= a[1] for a, b in itertools.combinations(combo, 2)):
                yield sorted(combo)


def test_decode_and_partition_match_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(20):
        T = int(rng.integers(1, 4))
        s = random_scores(T, rng)
        scores = [(sk.total_score(s, c), c) for c in configurations(T)]
        logz = math.log(sum(math.exp(v) for v, _ in scores))
        assert sk.log_partition(s) == pytest.approx(logz, rel=1e-12)
        best, total = sk.map_decode(s)
        assert total == pytest.approx(max(v for v, _ in scores), rel=1e-12)
        assert sk.total_score(s, best) == pytest.approx(total, rel=1e-12)


def test_marginals_are_gradients():
    rng = np.random.default_rng(1)
    upper = np.triu(rng.uniform(-2, 2, size=(5, 5)))
    eps = rng.uniform(-2, 2, size=4)
    marg, uncovered = sk.interval_marginals(sk.IntervalScores(upper, eps))
    h = 1e-6
    for i, j in [(0, 0), (1, 3), (2, 4)]:
        up, down = upper.copy(), upper.copy()
        up[i, j] += h
        down[i, j] -= h
        fd = (sk.log_partition(sk.IntervalScores(up, eps)) - sk.log_partition(sk.IntervalScores(down, eps))) / (2 * h)
        assert marg[i, j] == pytest.approx(fd, abs=1e-7)
    assert np.isnan(marg[3, 1])
    assert all(0 <= u <= 1 for u in uncovered)


def test_golden_scores_file():
    golden = json.loads((DATA / "golden_events.json").read_text())
    tracks = {t["type"]: [(e["onset_frame"], e["offset_frame"]) for e in t["events"]] for t in golden["tracks"]}
    for name, scores in sk.read_scores(str(DATA / "golden_scores.json")):
        assert sk.map_decode(scores)[0] == tracks[name]
    with pytest.raises(sk.ValidationError, match="drums"):
        sk.read_scores(str(DATA / "nan_scores.json"))


def test_invalid_input_raises():
    with pytest.raises(ValueError):
        sk.IntervalScores(np.full((2, 2), np.nan), np.zeros(1))
    with pytest.raises(ValueError):
        sk.map_decode(sk.IntervalScores(np.zeros((3, 3)), np.zeros(2)), start_frame=3)


def test_expressiveness_and_factorization():
    report = sk.verify_expressiveness(seed=0, cases=20)
    assert report["passed"] == 20
    ideal = sk.ideal_score_matrix([(1, 3), (5, 7)], 8)
    assert sk.numerical_rank(ideal) == 3
    q, k = sk.rank_factorize(ideal, 3)
    assert np.abs(q.T @ k - ideal).max() < 1e-8
    with pytest.raises(sk.InfeasibleError):
        sk.rank_factorize(ideal, 2)


def test_metrics_and_round_trip():
    ref = {"hop_seconds": 1.0, "num_frames": 10, "tracks": [{"type": "a", "events": [{"onset_frame": 0, "offset_frame": 2}]}]}
    est = {"hop_seconds": 1.0, "num_frames": 10, "tracks": [{"type": "a", "events": [{"onset_frame": 0, "offset_frame": 1}]}]}
    m = sk.evaluate(json.dumps(ref), json.dumps(est))
    assert m["activation"]["precision"] == 1.0
    assert m["activation"]["recall"] == 0.5
    same = sk.evaluate(json.dumps(ref), json.dumps(ref))
    assert all(v["f1"] == 1.0 for v in same.values())
    long = {"hop_seconds": 0.01, "num_frames": 300,
            "tracks": [{"type": "a", "events": [{"onset_frame": 5, "offset_frame": 290}]}]}
    back = json.loads(sk.split_and_stitch(json.dumps(long), 64))
    assert [(e["onset_frame"], e["offset_frame"]) for e in back["tracks"][0]["events"]] == [(5, 290)]


def test_training_utilities():
    assert sk.learning_rate(0, 5000, 4e-4, 0.05) == 0.0
    assert sk.learning_rate(250, 5000, 4e-4, 0.05) == pytest.approx(4e-4)
    grad = np.array([60.0, 0.0, 80.0])
    clipped, did = sk.quantile_clip(list(range(1, 11)), grad, 0.8, 10)
    assert did
    assert np.linalg.norm(clipped) == pytest.approx(8.0, rel=1e-14)
    assert worst_gradcheck() <= 1e-4


def worst_gradcheck():
    return max(err for _, err in sk.gradcheck_suite(0))
