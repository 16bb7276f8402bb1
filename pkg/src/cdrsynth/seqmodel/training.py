"""Datasets, mini-batch training with early stopping, and stepwise prediction."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..core import N_EVENT_TYPES
from ..refdata import friendship_ranks, modelled_sequence
from ..statmodel import N_IET_BINS, iet_class
from .features import FEATURE_DIMS, encode_sequence
from .lstm import (Adam, SeqModelParams, clip_gradients, init_params, loss_and_grads,
                   lstm_forward, step_loss)

log = logging.getLogger(__name__)

N_OUTPUTS = {"event": N_EVENT_TYPES, "iet": N_IET_BINS, "corr": 1}
LOSS = {"event": "nll", "iet": "nll", "corr": "mae"}


@dataclass
class SequenceDataset:
    """Encoded per-user sequences for one model kind.

    ``prev`` holds the label preceding each target (-1 when there is none),
    ``values`` the raw target quantity (IET seconds, ranks), ``counts`` the
    correspondent count of each sequence's user.
    """

    kind: str
    X: list
    Y: list
    prev: list
    values: list
    users: list
    counts: list = field(default_factory=list)

    def __len__(self):
        return len(self.X)

    @property
    def n_steps(self):
        return int(sum(len(y) for y in self.Y))

    def concat_targets(self):
        return np.concatenate(self.Y) if self.Y else np.zeros(0)


def build_dataset(per_user: dict, kind: str, start_weekday=0) -> SequenceDataset:
    X, Y, prev, values, users, counts = [], [], [], [], [], []
    for uid in sorted(per_user):
        ev = per_user[uid]
        if kind == "corr":
            ranks = friendship_ranks(ev)
            s = modelled_sequence(ev)
            sel = s.corr != ""
            if not sel.any():
                continue
            types = s.types[sel].astype(np.int64)
            r = np.array([ranks[c] for c in s.corr[sel]], dtype=float)
            X.append(encode_sequence("corr", types, s.times[sel], corr_count=len(ranks),
                                     start_weekday=start_weekday))
            Y.append(r)
            prev.append(np.concatenate([[-1.0], r[:-1]]))
            values.append(r)
            counts.append(len(ranks))
        else:
            s = modelled_sequence(ev)
            if len(s) < 2:
                continue
            types = s.types.astype(np.int64)
            if kind == "event":
                X.append(encode_sequence("event", types[:-1], s.times[:-1],
                                         start_weekday=start_weekday))
                Y.append(types[1:])
                prev.append(types[:-1])
                values.append(types[1:])
            elif kind == "iet":
                gaps = np.diff(s.times)
                bins = iet_class(gaps)
                X.append(encode_sequence("iet", None, s.times[:-1], next_types=types[1:],
                                         start_weekday=start_weekday))
                Y.append(bins)
                prev.append(np.concatenate([[-1], bins[:-1]]))
                values.append(gaps.astype(float))
            else:
                raise ValueError(f"unknown model kind {kind!r}")
            counts.append(len(friendship_ranks(ev)))
        users.append(uid)
    return SequenceDataset(kind, X, Y, prev, values, users, counts)


def chunk_dataset(ds: SequenceDataset, T: int) -> SequenceDataset:
    """Cut every sequence into consecutive pieces of at most ``T`` steps."""
    out = SequenceDataset(ds.kind, [], [], [], [], [], [])
    for i in range(len(ds)):
        n = len(ds.Y[i])
        for lo in range(0, n, T):
            hi = min(lo + T, n)
            out.X.append(ds.X[i][lo:hi])
            out.Y.append(ds.Y[i][lo:hi])
            out.prev.append(ds.prev[i][lo:hi])
            out.values.append(ds.values[i][lo:hi])
            out.users.append(ds.users[i])
            out.counts.append(ds.counts[i] if ds.counts else 0)
    return out


def pad_batch(ds: SequenceDataset, idx, T=None):
    """Stack sequences ``idx`` into ``(T, B, D)`` inputs, targets and mask."""
    lengths = [len(ds.Y[i]) for i in idx]
    T = max(lengths) if T is None else T
    B = len(idx)
    D = ds.X[idx[0]].shape[1]
    X = np.zeros((T, B, D))
    Y = np.zeros((T, B), dtype=ds.Y[idx[0]].dtype)
    M = np.zeros((T, B), dtype=bool)
    for j, i in enumerate(idx):
        n = lengths[j]
        X[:n, j] = ds.X[i]
        Y[:n, j] = ds.Y[i]
        M[:n, j] = True
    return X, Y, M


@dataclass
class TrainSpec:
    hidden: tuple = (50, 50)
    batch_size: int = 64
    learning_rate: float = 1e-3
    dropout: float = 0.2
    clip: float = 0.01
    clip_mode: str = "value"
    max_epochs: int = 60
    patience: int = 5
    seq_len: int | None = None
    seq_len_quantile: float = 0.9

    @classmethod
    def from_config(cls, cfg, kind, **overrides):
        H = {"event": cfg.hidden_event, "iet": cfg.hidden_iet, "corr": cfg.hidden_corr}[kind]
        kw = dict(hidden=(H,) * cfg.n_layers, batch_size=cfg.batch_size,
                  learning_rate=cfg.learning_rate, dropout=cfg.dropout, clip=cfg.clip,
                  clip_mode=cfg.clip_mode, max_epochs=cfg.max_epochs, patience=cfg.patience,
                  seq_len_quantile=cfg.seq_len_quantile)
        kw.update(overrides)
        return cls(**kw)


@dataclass
class TrainResult:
    params: SeqModelParams
    metrics: list
    best_epoch: int

    def write_metrics(self, path):
        if not self.metrics:
            return
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(self.metrics[0]))
            w.writeheader()
            w.writerows(self.metrics)


def predict_dataset(params, ds: SequenceDataset, batch_size=64):
    """Model outputs for every step of every sequence (full length, no chunking)."""
    order = np.argsort([len(y) for y in ds.Y], kind="stable")
    outs = [None] * len(ds)
    for lo in range(0, len(order), batch_size):
        idx = order[lo:lo + batch_size]
        X, _, _ = pad_batch(ds, idx)
        out, _ = lstm_forward(params, X)
        for j, i in enumerate(idx):
            outs[i] = out[:len(ds.Y[i]), j]
    return outs


def evaluate_loss(params, ds: SequenceDataset, batch_size=64):
    outs = predict_dataset(params, ds, batch_size)
    total = 0.0
    n = 0
    for out, y in zip(outs, ds.Y):
        m = np.ones(len(y), dtype=bool)
        total += float(step_loss(params, out[:, None] if out.ndim == 2 else out[:, None],
                                 y[:, None], m[:, None]).sum())
        n += len(y)
    return total / max(n, 1), outs


def train(kind, train_ds: SequenceDataset, valid_ds: SequenceDataset, spec: TrainSpec, rng,
          init=None) -> TrainResult:
    """Mini-batch Adam with clipping and dropout; returns the best-validation
    checkpoint and per-epoch metrics.

    Training sequences are cut into chunks of ``spec.seq_len`` steps (default:
    the configured quantile of training sequence lengths) and padded per
    batch; validation runs over full sequences.
    """
    if not len(train_ds) or not len(valid_ds):
        raise ValueError("training and validation sets must be non-empty")
    T = spec.seq_len or max(1, int(math.ceil(
        np.quantile([len(y) for y in train_ds.Y], spec.seq_len_quantile))))
    params = init if init is not None else init_params(
        FEATURE_DIMS[kind], spec.hidden, N_OUTPUTS[kind], LOSS[kind], rng, spec.dropout,
        spec.clip, spec.clip_mode)
    if init is None and LOSS[kind] == "mae":
        params.b_out[:] = np.median(train_ds.concat_targets())
    chunks = chunk_dataset(train_ds, T)
    arrays = params.arrays()
    opt = Adam(arrays, spec.learning_rate)
    best = params.copy()
    best_loss, _ = evaluate_loss(params, valid_ds)
    best_epoch = 0
    metrics = []
    wait = 0
    for epoch in range(1, spec.max_epochs + 1):
        order = rng.permutation(len(chunks))
        total = 0.0
        steps = 0
        for lo in range(0, len(order), spec.batch_size):
            idx = order[lo:lo + spec.batch_size]
            X, Y, M = pad_batch(chunks, idx)
            loss, grads, _ = loss_and_grads(params, X, Y, M, train_mode=True, rng=rng)
            if not math.isfinite(loss):
                raise FloatingPointError(f"training diverged (loss {loss}) at epoch {epoch}")
            opt.step(arrays, clip_gradients(grads, spec.clip, spec.clip_mode))
            n = int(M.sum())
            total += loss * n
            steps += n
        val_loss, _ = evaluate_loss(params, valid_ds)
        metrics.append({"epoch": epoch, "train_loss": total / max(steps, 1),
                        "valid_loss": val_loss})
        log.info("%s epoch %d train %.4f valid %.4f", kind, epoch, total / max(steps, 1),
                 val_loss)
        if val_loss < best_loss:
            best_loss, best, best_epoch, wait = val_loss, params.copy(), epoch, 0
        else:
            wait += 1
            if wait >= spec.patience:
                break
    return TrainResult(best, metrics, best_epoch)


# ---------------------------------------------------------------------------
# prediction from an encoded history

def _last_output(params, history):
    H = np.asarray(history, dtype=float)
    if H.ndim == 1:
        H = H[None]
    out, _ = lstm_forward(params, H[:, None, :])
    return out[-1, 0]


def predict_event_type(params, history):
    """Distribution of the next event type after an encoded history ``(T, 37)``."""
    return _last_output(params, history)


def predict_iet_bin(params, history):
    """Distribution over the three IET bins; the last history row carries the
    next event type."""
    return _last_output(params, history)


def predict_friendship_degree(params, history, corr_count):
    """Predicted rank, clamped to ``[1, corr_count]``."""
    return float(np.clip(_last_output(params, history), 1.0, max(corr_count, 1)))
