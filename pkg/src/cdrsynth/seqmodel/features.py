"""Input encodings for the three traffic models.

Event-type model: event one-hot (4), day-of-week one-hot (7), hour-of-day
one-hot (24), second-of-day as (sin, cos). IET model: the temporal part of the
current event (33) followed by the next event's one-hot (4). Correspondent
model: event one-hot, DOW, HOD and the raw correspondent count.
"""
from __future__ import annotations

import numpy as np

from ..core import DAY, N_EVENT_TYPES

KINDS = ("event", "iet", "corr")
FEATURE_DIMS = {"event": 37, "iet": 37, "corr": 36}


def _onehot(idx, k):
    idx = np.asarray(idx, dtype=np.int64)
    out = np.zeros(idx.shape + (k,))
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


def temporal_blocks(timestamps, start_weekday=0, with_sod=True):
    t = np.asarray(timestamps, dtype=np.int64)
    if np.any(t < 0):
        raise ValueError("timestamps must be non-negative")
    dow = (t // DAY + start_weekday) % 7
    sod = t % DAY
    hod = sod // 3600
    parts = [_onehot(dow, 7), _onehot(hod, 24)]
    if with_sod:
        phase = 2 * np.pi * sod / DAY
        parts.append(np.stack([np.sin(phase), np.cos(phase)], axis=-1))
    return np.concatenate(parts, axis=-1)


def encode_sequence(kind, types, timestamps, next_types=None, corr_count=None,
                    start_weekday=0):
    """Encode a whole sequence at once; returns an array ``(T, dim)``."""
    if kind == "event":
        return np.concatenate([_onehot(types, N_EVENT_TYPES),
                               temporal_blocks(timestamps, start_weekday)], axis=-1)
    if kind == "iet":
        if next_types is None:
            raise ValueError("IET features need the next event type")
        return np.concatenate([temporal_blocks(timestamps, start_weekday),
                               _onehot(next_types, N_EVENT_TYPES)], axis=-1)
    if kind == "corr":
        if corr_count is None:
            raise ValueError("correspondent features need the correspondent count")
        t = np.asarray(timestamps)
        cc = np.broadcast_to(np.asarray(corr_count, dtype=float), t.shape)[..., None]
        return np.concatenate([_onehot(types, N_EVENT_TYPES),
                               temporal_blocks(t, start_weekday, with_sod=False), cc], axis=-1)
    raise ValueError(f"unknown model kind {kind!r}")


def encode_features(event, timestamp, next_event=None, corr_count=None, kind="event",
                    start_weekday=0):
    """Feature vector of a single event."""
    return encode_sequence(kind, [int(event)] if event is not None else [0], [timestamp],
                           None if next_event is None else [int(next_event)],
                           corr_count, start_weekday)[0]
