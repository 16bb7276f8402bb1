"""Reference predictors the traffic models are compared against.

Every predictor returns a :class:`Prediction` aligned step by step with a
:class:`~cdrsynth.seqmodel.training.SequenceDataset`.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from ..statmodel import N_IET_BINS, OVERALL_IET_DIST

REPEAT_SMOOTHING = 1e-3


class BaselineKind(enum.Enum):
    UNIFORM = "Uniform"
    MULTINOMIAL = "Multinomial"
    REPEAT_EVT = "RepeatEvt"
    REPEAT_BIN = "RepeatBin"
    RANGED_UNIFORM = "RangedUniform"
    RANGED_MULTINOMIAL = "RangedMultinomial"
    OVERALL_LOGNORMAL = "OverallLognormal"


APPLICABLE = {
    "event": (BaselineKind.UNIFORM, BaselineKind.MULTINOMIAL, BaselineKind.REPEAT_EVT),
    "iet": (BaselineKind.UNIFORM, BaselineKind.MULTINOMIAL, BaselineKind.REPEAT_BIN,
            BaselineKind.OVERALL_LOGNORMAL),
    "corr": (BaselineKind.RANGED_UNIFORM, BaselineKind.RANGED_MULTINOMIAL),
}


@dataclass
class Prediction:
    """Per-sequence predictions.

    ``probs``: class (or rank) distributions, one ``(T_i, K_i)`` array per
    sequence. ``values``: point predictions ``(T_i,)`` when the predictor
    emits numbers directly (regressors, continuous IET draws).
    """

    name: str
    probs: list = field(default_factory=list)
    values: list = field(default_factory=list)


def _smoothed_onehot(labels, k, eps=REPEAT_SMOOTHING):
    out = np.full((len(labels), k), eps / k)
    out[np.arange(len(labels)), labels] += 1.0 - eps
    return out


def class_marginals(train_ds, k):
    y = train_ds.concat_targets().astype(np.int64)
    counts = np.bincount(y, minlength=k).astype(float)
    return counts / counts.sum()


def run_baseline(kind: BaselineKind, model_kind, test_ds, train_ds=None, stats=None, rng=None):
    """Predictions of one baseline on ``test_ds``.

    ``train_ds`` supplies marginals (Multinomial) and the majority bin used at
    the first step of RepeatBin; ``stats`` supplies the mean rank proportions
    for RangedMultinomial; ``rng`` drives the Lognormal draws.
    """
    if kind not in APPLICABLE[model_kind]:
        raise ValueError(f"{kind.value} does not apply to the {model_kind} model")
    K = {"event": 4, "iet": N_IET_BINS}.get(model_kind)
    pred = Prediction(kind.value)
    if kind is BaselineKind.UNIFORM:
        pred.probs = [np.full((len(y), K), 1.0 / K) for y in test_ds.Y]
    elif kind is BaselineKind.MULTINOMIAL:
        p = class_marginals(train_ds, K)
        pred.probs = [np.tile(p, (len(y), 1)) for y in test_ds.Y]
    elif kind is BaselineKind.REPEAT_EVT:
        pred.probs = [_smoothed_onehot(prev.astype(np.int64), K) for prev in test_ds.prev]
    elif kind is BaselineKind.REPEAT_BIN:
        majority = int(np.argmax(class_marginals(train_ds, K)))
        pred.probs = [_smoothed_onehot(np.where(prev < 0, majority, prev).astype(np.int64), K)
                      for prev in test_ds.prev]
    elif kind is BaselineKind.OVERALL_LOGNORMAL:
        pred.values = [OVERALL_IET_DIST.sample(rng, len(y)) for y in test_ds.Y]
    elif kind is BaselineKind.RANGED_UNIFORM:
        pred.probs = [np.full((len(y), c), 1.0 / c) for y, c in zip(test_ds.Y, test_ds.counts)]
    elif kind is BaselineKind.RANGED_MULTINOMIAL:
        pbar = np.asarray(stats.rank_proportions, dtype=float)
        pred.probs = [np.tile(ranged_multinomial(pbar, c), (len(y), 1))
                      for y, c in zip(test_ds.Y, test_ds.counts)]
    return pred


def ranged_multinomial(pbar, n_corr):
    """First ``n_corr`` mean rank proportions, renormalised. Ranks beyond the
    reference maximum get zero weight; an all-zero prefix falls back to
    uniform."""
    p = np.zeros(n_corr)
    k = min(n_corr, len(pbar))
    p[:k] = pbar[:k]
    if p.sum() <= 0:
        return np.full(n_corr, 1.0 / n_corr)
    return p / p.sum()
