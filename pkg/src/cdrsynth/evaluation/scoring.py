"""Model-quality metrics and the model-versus-baseline comparison table."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ..seqmodel.training import predict_dataset
from ..statmodel import N_IET_BINS, iet_class, sample_iet
from .baselines import APPLICABLE, Prediction, run_baseline

BIN_SAMPLING_DRAWS = 500


@dataclass
class ScoreResult:
    value: float
    per_user: np.ndarray


def model_prediction(params, ds, name="LSTM"):
    """Outputs of a trained model on a dataset.

    Regressors are clamped to ``[1, #c_u]`` and rounded, as at generation.
    """
    outs = predict_dataset(params, ds)
    if params.loss == "nll":
        return Prediction(name, probs=outs)
    vals = [np.rint(np.clip(o, 1.0, max(c, 1))) for o, c in zip(outs, ds.counts)]
    return Prediction(name, values=vals)


def bin_sampling(pred: Prediction, rng, n_draws=BIN_SAMPLING_DRAWS):
    """Map bin distributions to IET seconds: take the most probable bin (ties
    broken at random) and average ``n_draws`` truncated draws from it."""
    if pred.values:
        return pred
    values = []
    for p in pred.probs:
        noisy = p + rng.random(p.shape) * 1e-12 * (p == p.max(axis=1, keepdims=True))
        bins = np.argmax(noisy, axis=1)
        v = np.empty(len(bins))
        for b in range(N_IET_BINS):
            sel = bins == b
            if sel.any():
                v[sel] = sample_iet(b + 1, rng, size=(int(sel.sum()), n_draws)).mean(axis=1)
        values.append(v)
    return Prediction(pred.name, probs=pred.probs, values=values)


def _check_aligned(pred, ds):
    seqs = pred.probs if pred.probs else pred.values
    if len(seqs) != len(ds.Y) or any(len(s) != len(y) for s, y in zip(seqs, ds.Y)):
        raise ValueError("prediction and truth streams are not aligned")


def score(pred: Prediction, ds, metric) -> ScoreResult:
    """Score one predictor.

    ``metric``: ``nll``, ``accuracy``, ``mae`` (correspondent rank),
    ``iet_mae`` (minutes) or ``iet_mae_bin1..3`` (minutes, steps whose true
    IET falls in that bin). Continuous IET metrics need ``pred.values``
    (see :func:`bin_sampling`).
    """
    _check_aligned(pred, ds)
    per_step = []
    for i, y in enumerate(ds.Y):
        if metric == "nll":
            p = pred.probs[i][np.arange(len(y)), y.astype(np.int64)]
            per_step.append(-np.log(np.maximum(p, 1e-300)))
        elif metric == "accuracy":
            if pred.probs:
                hit = np.argmax(pred.probs[i], axis=1) == y
            elif ds.kind == "iet":
                hit = iet_class(pred.values[i]) == y
            else:
                raise ValueError("accuracy needs class probabilities")
            per_step.append(hit.astype(float))
        elif metric == "mae":
            if pred.values:
                per_step.append(np.abs(pred.values[i] - y))
            else:
                ranks = np.arange(1, pred.probs[i].shape[1] + 1)
                per_step.append((pred.probs[i] * np.abs(ranks[None, :] - y[:, None])).sum(1))
        elif metric.startswith("iet_mae"):
            if not pred.values:
                raise ValueError("IET MAE needs point predictions; apply bin_sampling first")
            err = np.abs(pred.values[i] - ds.values[i]) / 60.0
            if metric != "iet_mae":
                err = err[y == int(metric[-1]) - 1]
            per_step.append(err)
        else:
            raise ValueError(f"unknown metric {metric!r}")
    per_user = np.array([s.mean() if len(s) else np.nan for s in per_step])
    allsteps = np.concatenate(per_step) if per_step else np.zeros(0)
    return ScoreResult(float(allsteps.mean()) if len(allsteps) else float("nan"), per_user)


METRICS = {
    "event": ("nll", "accuracy"),
    "iet": ("nll", "accuracy", "iet_mae", "iet_mae_bin1", "iet_mae_bin2", "iet_mae_bin3"),
    "corr": ("mae",),
}


def comparison_table(kind, params, test_ds, train_ds, stats, rng):
    """Rows ``{"model", "predictor", metric: value}`` for the trained model
    and every applicable baseline. The NLL of a predictor that only emits
    continuous draws is reported as ``n/a``."""
    preds = [model_prediction(params, test_ds, "LSTM")]
    for b in APPLICABLE[kind]:
        preds.append(run_baseline(b, kind, test_ds, train_ds, stats, rng))
    rows = []
    for p in preds:
        if kind == "iet":
            p = bin_sampling(p, rng)
        row = {"model": kind, "predictor": p.name}
        for m in METRICS[kind]:
            if m == "nll" and not p.probs:
                row[m] = "n/a"
            else:
                row[m] = score(p, test_ds, m).value
        rows.append(row)
    return rows


def write_table(path, rows):
    keys = ["model", "predictor"] + [m for m in dict.fromkeys(
        k for r in rows for k in r) if m not in ("model", "predictor")]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, restval="")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})
