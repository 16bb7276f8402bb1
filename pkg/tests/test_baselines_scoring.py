import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cdrsynth.evaluation.baselines import (BaselineKind, Prediction, ranged_multinomial,
                                           run_baseline)
from cdrsynth.evaluation.scoring import bin_sampling, comparison_table, score, write_table
from cdrsynth.seqmodel.lstm import zero_params
from cdrsynth.seqmodel.training import SequenceDataset


def _event_ds(seqs):
    Y = [np.asarray(s[1:]) for s in seqs]
    prev = [np.asarray(s[:-1]) for s in seqs]
    X = [np.zeros((len(y), 37)) for y in Y]
    return SequenceDataset("event", X, Y, prev, [y.astype(float) for y in Y],
                           list(range(len(seqs))))


def test_uniform_nll_is_ln4():
    ds = _event_ds([[0, 1, 2, 3, 0], [3, 3, 1]])
    pred = run_baseline(BaselineKind.UNIFORM, "event", ds)
    assert score(pred, ds, "nll").value == pytest.approx(math.log(4))


def test_repeat_on_constant_sequence():
    ds = _event_ds([[2] * 10, [1] * 4])
    pred = run_baseline(BaselineKind.REPEAT_EVT, "event", ds)
    assert score(pred, ds, "accuracy").value == 1.0
    assert score(pred, ds, "nll").value < 0.01


def test_multinomial_not_worse_than_uniform_on_own_data():
    rng = np.random.default_rng(0)
    ds = _event_ds([list(rng.choice(4, 50, p=(0.6, 0.2, 0.15, 0.05))) for _ in range(10)])
    m = score(run_baseline(BaselineKind.MULTINOMIAL, "event", ds, ds), ds, "nll").value
    u = score(run_baseline(BaselineKind.UNIFORM, "event", ds), ds, "nll").value
    assert m <= u


def test_ranged_multinomial_example():
    np.testing.assert_allclose(ranged_multinomial(np.array([0.5, 0.3, 0.2]), 2), (0.625, 0.375))
    np.testing.assert_allclose(ranged_multinomial(np.array([0.5, 0.5]), 4), (0.5, 0.5, 0, 0))
    np.testing.assert_allclose(ranged_multinomial(np.zeros(3), 2), (0.5, 0.5))


def test_ranged_baselines_and_expected_mae():
    Y = [np.array([1, 2, 1]), np.array([3])]
    ds = SequenceDataset("corr", [np.zeros((3, 36)), np.zeros((1, 36))], Y,
                         [np.array([-1, 1, 2]), np.array([-1])], [y.astype(float) for y in Y],
                         [0, 1], [2, 3])
    pred = run_baseline(BaselineKind.RANGED_UNIFORM, "corr", ds)
    assert [p.shape for p in pred.probs] == [(3, 2), (1, 3)]
    # expected |r - y|: uniform over {1,2} is 0.5 for y in {1,2}; over {1,2,3} with y=3 is 1
    assert score(pred, ds, "mae").value == pytest.approx((0.5 * 3 + 1) / 4)
    stats = SimpleNamespace(rank_proportions=np.array([0.5, 0.3, 0.2]))
    rm = run_baseline(BaselineKind.RANGED_MULTINOMIAL, "corr", ds, stats=stats)
    np.testing.assert_allclose(rm.probs[0][0], (0.625, 0.375))
    exact = Prediction("exact", values=[y.astype(float) for y in Y])
    assert score(exact, ds, "mae").value == 0.0


def test_perfect_classifier():
    ds = _event_ds([[0, 1, 2, 3, 2, 1]])
    onehot = np.eye(4)[ds.Y[0]]
    pred = Prediction("perfect", probs=[onehot])
    assert score(pred, ds, "accuracy").value == 1.0
    assert score(pred, ds, "nll").value == pytest.approx(0.0)


@given(st.lists(st.lists(st.integers(0, 3), min_size=2, max_size=30), min_size=1, max_size=6),
       st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_accuracy_matches_direct_count(seqs, seed):
    ds = _event_ds(seqs)
    rng = np.random.default_rng(seed)
    probs = [rng.dirichlet(np.ones(4), len(y)) for y in ds.Y]
    got = score(Prediction("r", probs=probs), ds, "accuracy").value
    hits = sum(int(np.argmax(p) == t) for P, y in zip(probs, ds.Y) for p, t in zip(P, y))
    assert got == pytest.approx(hits / ds.n_steps)


def test_misaligned_prediction_rejected():
    ds = _event_ds([[0, 1, 2]])
    with pytest.raises(ValueError, match="aligned"):
        score(Prediction("x", probs=[np.full((5, 4), 0.25)]), ds, "nll")
    with pytest.raises(ValueError):
        run_baseline(BaselineKind.REPEAT_BIN, "event", ds)


def _iet_ds():
    v = [np.array([60.0, 3600.0, 200000.0, 30.0])]
    Y = [np.array([0, 1, 2, 0])]
    return SequenceDataset("iet", [np.zeros((4, 37))], Y, [np.array([-1, 0, 1, 2])], v, [0])


def test_bin_sampling_stays_in_predicted_bin():
    ds = _iet_ds()
    probs = [np.eye(3)[[0, 1, 2, 0]]]
    p = bin_sampling(Prediction("p", probs=probs), np.random.default_rng(0), n_draws=50)
    assert 0 <= p.values[0][0] <= 1800 and 1800 < p.values[0][1] <= 86400
    assert p.values[0][2] >= 86401
    assert score(p, ds, "accuracy").value == 1.0
    bin3 = score(p, ds, "iet_mae_bin3").value
    assert bin3 == pytest.approx(abs(p.values[0][2] - 200000) / 60)


def test_repeat_bin_first_step_uses_majority():
    ds = _iet_ds()
    pred = run_baseline(BaselineKind.REPEAT_BIN, "iet", ds, ds)
    assert np.argmax(pred.probs[0][0]) == 0
    assert list(np.argmax(pred.probs[0][1:], axis=1)) == [0, 1, 2]


def test_comparison_table_rows(tmp_path):
    ds = _iet_ds()
    rows = comparison_table("iet", zero_params(37, (3,), 3), ds, ds, None,
                            np.random.default_rng(1))
    assert [r["predictor"] for r in rows] == ["LSTM", "Uniform", "Multinomial", "RepeatBin",
                                              "OverallLognormal"]
    assert rows[-1]["nll"] == "n/a"
    assert rows[0]["nll"] == pytest.approx(math.log(3))
    write_table(tmp_path / "t.csv", rows)
    assert (tmp_path / "t.csv").read_text().startswith("model,predictor,nll,accuracy")
