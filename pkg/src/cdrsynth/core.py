"""Shared types, seeded randomness, configuration and the stage file schemas."""
from __future__ import annotations

import ast
import csv
import dataclasses
import enum
import hashlib
import json
import math
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np

DAY = 86400
WEEK = 7 * DAY


class ConfigError(ValueError):
    """Raised for unparsable or invalid configuration files."""

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class EventType(enum.IntEnum):
    """The four event classes the traffic models generate."""

    DATA = 0
    LOCAL_CALL = 1
    INTL_CALL = 2
    LOCAL_SMS = 3

    @property
    def label(self):
        return _EVENT_LABELS[self]

    @classmethod
    def parse(cls, text):
        try:
            return _LABEL_EVENTS[text.strip()]
        except KeyError:
            raise ValueError(f"unknown event type {text!r}") from None

    @property
    def needs_correspondent(self):
        return self is not EventType.DATA


N_EVENT_TYPES = len(EventType)
_EVENT_LABELS = {
    EventType.DATA: "data",
    EventType.LOCAL_CALL: "local_call",
    EventType.INTL_CALL: "intl_call",
    EventType.LOCAL_SMS: "local_sms",
}
_LABEL_EVENTS = {v: k for k, v in _EVENT_LABELS.items()}


# ---------------------------------------------------------------------------
# randomness

def seeded_rng(seed: int, stream_label: str) -> np.random.Generator:
    """Independent, reproducible generator for one (seed, label) pair.

    The label is hashed with CRC32 (stable across processes, unlike ``hash``)
    and mixed with the seed through ``SeedSequence`` so streams never share
    state.
    """
    label_key = zlib.crc32(stream_label.encode("utf-8"))
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, label_key])
    return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------------------
# identifiers

def luhn_check_digit(digits: str) -> int:
    total = 0
    # double every second digit counting from the right of the payload
    for i, ch in enumerate(reversed(digits)):
        d = int(ch)
        if i % 2 == 0:
            d *= 2
            if d > 9:
                d -= 9
        total += d
    return (10 - total % 10) % 10


def luhn_valid(number: str) -> bool:
    if not number.isdigit() or len(number) < 2:
        return False
    return luhn_check_digit(number[:-1]) == int(number[-1])


def random_imei(rng: np.random.Generator) -> str:
    body = "".join(str(d) for d in rng.integers(0, 10, size=14))
    return body + str(luhn_check_digit(body))


# ---------------------------------------------------------------------------
# geometry

@dataclass(frozen=True)
class Projection:
    """Equirectangular projection between local metres and degrees.

    x grows eastwards and y northwards from the origin (the south-west corner
    of the emulation box).
    """

    origin_lat: float = 60.1699
    origin_lon: float = 24.9384
    radius: float = 6371008.8

    def to_latlon(self, x, y):
        lat = self.origin_lat + np.degrees(np.asarray(y, dtype=float) / self.radius)
        coslat = math.cos(math.radians(self.origin_lat))
        lon = self.origin_lon + np.degrees(np.asarray(x, dtype=float) / (self.radius * coslat))
        return lat, lon

    def to_xy(self, lat, lon):
        coslat = math.cos(math.radians(self.origin_lat))
        y = np.radians(np.asarray(lat, dtype=float) - self.origin_lat) * self.radius
        x = np.radians(np.asarray(lon, dtype=float) - self.origin_lon) * self.radius * coslat
        return x, y


# ---------------------------------------------------------------------------
# records

@dataclass(frozen=True)
class TrajectoryPoint:
    timestamp: int
    user_id: int
    lat: float
    lon: float


CALL_DIRECTIONS = ("MO", "MT", "IMO", "IMT")
SMS_DIRECTIONS = ("MO", "MT")


@dataclass(frozen=True)
class CdrRecord:
    """One CdR line. ``event_type`` is one of ``call``, ``sms`` or ``data``."""

    phone: str
    imei: str
    cell_id: int
    timestamp: int
    event_type: str
    direction: Optional[str] = None
    call_duration: Optional[int] = None
    correspondent: Optional[str] = None
    data_volume: Optional[int] = None

    def validate(self, horizon: Optional[int] = None):
        """Raise ``ValueError`` if the record breaks the CdR field rules."""
        if len(self.imei) != 15 or not luhn_valid(self.imei):
            raise ValueError(f"bad IMEI {self.imei!r}")
        if self.timestamp < 0 or (horizon is not None and self.timestamp >= horizon):
            raise ValueError(f"timestamp {self.timestamp} outside trace")
        if self.event_type == "call":
            if self.direction not in CALL_DIRECTIONS:
                raise ValueError(f"bad call direction {self.direction!r}")
            if self.call_duration is None or self.call_duration <= 0:
                raise ValueError("call without positive duration")
            if not self.correspondent:
                raise ValueError("call without correspondent")
            if self.data_volume is not None:
                raise ValueError("call with data volume")
        elif self.event_type == "sms":
            if self.direction not in SMS_DIRECTIONS:
                raise ValueError(f"bad sms direction {self.direction!r}")
            if not self.correspondent:
                raise ValueError("sms without correspondent")
            if self.call_duration is not None or self.data_volume is not None:
                raise ValueError("sms with duration or volume")
        elif self.event_type == "data":
            if self.data_volume is None or self.data_volume <= 0:
                raise ValueError("data record without positive volume")
            if (self.direction is not None or self.call_duration is not None
                    or self.correspondent is not None):
                raise ValueError("data record with call/sms fields")
        else:
            raise ValueError(f"unknown event type {self.event_type!r}")

    def to_row(self):
        def s(v):
            return "" if v is None else str(v)
        return [
            self.phone, self.imei, str(self.cell_id), str(self.timestamp), self.event_type,
            self.direction if self.event_type == "call" else "",
            s(self.call_duration),
            s(self.correspondent),
            self.direction if self.event_type == "sms" else "",
            s(self.data_volume),
        ]

    @classmethod
    def from_row(cls, row):
        (phone, imei, cell, ts, etype, call_type, duration, corr, sms_type, volume) = row
        return cls(
            phone=phone, imei=imei, cell_id=int(cell), timestamp=int(ts), event_type=etype,
            direction=(call_type or sms_type or None),
            call_duration=int(duration) if duration else None,
            correspondent=corr or None,
            data_volume=int(volume) if volume else None,
        )


CDR_HEADER = ["phone", "imei", "cell_id", "timestamp", "event_type", "call_type",
              "call_duration", "correspondent", "sms_type", "data_volume"]
MOBILITY_HEADER = ["timestamp", "user_id", "lat", "lon"]
CELL_HEADER = ["timestamp", "user_id", "cell_id"]
REF_HEADER = ["timestamp", "user_id", "event_type", "correspondent_id", "direction",
              "call_duration"]
PHONEBOOK_HEADER = ["phone", "category", "correspondent_phone", "rank"]
STATION_HEADER = ["cell_id", "lat", "lon"]


def write_cdr_csv(path, records: Iterable[CdrRecord]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CDR_HEADER)
        for r in records:
            w.writerow(r.to_row())


def read_cdr_csv(path) -> list[CdrRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CDR_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        return [CdrRecord.from_row(row) for row in reader]


def check_header(path, reader, expected):
    header = next(reader, None)
    if header is None:
        return False
    header = [h.strip() for h in header]
    if header[:len(expected)] != expected:
        raise ValueError(f"{path}: expected header {','.join(expected)}, got {','.join(header)}")
    return True


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable of the pipeline, flat.

    Mobility defaults describe a mid-sized working-day city: group sizes,
    evening durations, car ownership, and area and cluster sizes.
    Keys are loaded from ``key = value`` text files by :func:`load_config`.
    """

    seed: int = 42
    n_users: int = 1000
    duration_s: int = WEEK
    start_weekday: int = 0  # 0 = Monday
    sample_interval_s: int = 60

    # operators, as "MCC-MNC" strings, with the share of users of each
    operators: tuple = ("244-91", "244-05")
    user_share: tuple = (0.5, 0.5)
    foreign_mccs: tuple = (208, 262, 234, 310, 250, 222)

    # city map and En-WDM
    world_width: float = 10000.0
    world_height: float = 8000.0
    origin_lat: float = 60.1699
    origin_lon: float = 24.9384
    road_spacing: float = 250.0
    road_jitter: float = 30.0
    home_cluster_size: tuple = (250.0, 150.0)
    office_cluster_size: tuple = (500.0, 300.0)
    leisure_spot_size: tuple = (120.0, 120.0)
    office_size: float = 100.0
    n_home_neighborhoods: int = 30
    n_office_neighborhoods: int = 10
    n_leisure_spots: int = 16
    n_areas: int = 3
    n_bus_lines: int = 8
    bus_stop_every: int = 3
    bus_period_s: int = 600
    bus_dwell_s: int = 30
    walk_speed: float = 1.4
    car_speed: float = 13.9
    bus_speed: float = 8.3
    prob_own_car: float = 0.19
    exploration_shares: tuple = (0.2027, 0.5475, 0.2498)  # scouter, regular, routiner
    p_night: tuple = (0.8, 0.5, 0.2)
    distance_shares: tuple = (0.72, 0.19, 0.09)  # P1, P2, P3
    min_group_size: int = 1
    max_group_size: int = 5
    min_evening_s: int = 3600
    max_evening_s: int = 14400
    office_start_s: int = 8 * 3600
    office_start_sd_s: float = 1800.0
    office_jitter_sd_s: float = 600.0
    workday_s: int = 8 * 3600
    office_moves_per_day: float = 4.0

    # topology
    n_stations: int = 150

    # social ties: friend, colleague, neighbor, other
    selection_probs: tuple = (0.4, 0.25, 0.15, 0.2)
    max_rewire_attempts: int = 200

    # sequence models
    hidden_event: int = 50
    hidden_iet: int = 100
    hidden_corr: int = 100
    n_layers: int = 2
    dropout: float = 0.2
    clip: float = 0.01
    clip_mode: str = "value"
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 60
    patience: int = 5
    seq_len_quantile: float = 0.9
    traffic_split: str = "chronological"  # split used for event-type and IET models
    corr_split: str = "by_user"

    # combiner
    call_truncation: str = "caller"  # or "both": also stop at the callee's next event

    # metric models
    iet_n_samples: int = 1
    volume_shares: tuple = (0.5, 0.35, 0.15)  # light, medium, heavy
    volume_peak_median: tuple = (60e3, 600e3, 6e6)  # bytes
    volume_offpeak_median: tuple = (40e3, 400e3, 4e6)
    volume_sigma: tuple = (1.2, 1.2, 1.2)
    peak_start_h: int = 8
    peak_end_h: int = 20

    # evaluation / use cases
    contact_radius: float = 10.0
    rho_min: float = 0.37
    macro_grid: tuple = (5, 5)
    micro_power: tuple = (2, 56.0, 6.3, 2.6)  # N_trx, P0, Pmax, delta_p
    macro_power: tuple = (6, 130.0, 20.0, 4.7)
    macro_capacity_ratio: float = 10.0

    # reference bootstrap (planted structure)
    boot_n_users: int = 500
    boot_duration_s: int = 4 * WEEK
    boot_self_transition: float = 0.6
    boot_stickiness: tuple = (1.0, 1.0, 0.1, 0.2)
    boot_base_mix: tuple = (0.5, 0.3, 0.05, 0.15)
    boot_night_ratio: float = 0.2
    boot_events_per_day: float = 10.0
    boot_rate_sigma: float = 0.5
    boot_iet_sigma: float = 1.3
    boot_iet_type_shift: tuple = (-0.8, 0.6, 0.9, 0.3)
    boot_category_means: tuple = (0.1, 0.3, 0.3, 0.3)  # inter, out, in, both
    boot_mean_correspondents: float = 5.0
    boot_max_correspondents: int = 20
    boot_zipf: float = 1.0
    boot_intl_incoming: float = 0.3
    boot_incoming_per_day: float = 1.5

    @property
    def projection(self):
        return Projection(self.origin_lat, self.origin_lon)

    def replace(self, **changes):
        cfg = dataclasses.replace(self, **changes)
        validate_config(cfg)
        return cfg

    def as_dict(self):
        return {f.name: _jsonable(getattr(self, f.name)) for f in dataclasses.fields(self)}

    def hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    return v


_FIELD_DEFAULTS = {f.name: f.default for f in dataclasses.fields(PipelineConfig)}


def _coerce(key, raw, line):
    default = _FIELD_DEFAULTS[key]
    try:
        value = ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        value = raw
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                value = value.lower() in ("1", "true", "yes", "on")
            return bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError("expected an integer")
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, str):
            return str(value)
        if isinstance(default, tuple):
            if isinstance(value, str):
                value = [v.strip() for v in value.split(",") if v.strip()]
            if not isinstance(value, (list, tuple)):
                value = (value,)
            proto = default[0] if default else None
            out = []
            for v in value:
                if isinstance(proto, float) and not isinstance(v, str):
                    v = float(v)
                out.append(v)
            return tuple(out)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"cannot interpret {raw!r}: {exc}", key=key, line=line) from None
    return value


def parse_config_text(text: str) -> PipelineConfig:
    values = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw_line.strip()!r}", line=lineno)
        key, raw = (s.strip() for s in line.split("=", 1))
        if not key or not raw:
            raise ConfigError(f"expected 'key = value', got {raw_line.strip()!r}", line=lineno)
        if key not in _FIELD_DEFAULTS:
            raise ConfigError("unknown configuration key", key=key, line=lineno)
        values[key] = _coerce(key, raw, lineno)
    cfg = PipelineConfig(**values)
    validate_config(cfg)
    return cfg


def load_config(path=None) -> PipelineConfig:
    """Read a ``key = value`` config file; missing keys take their defaults."""
    if path is None:
        cfg = PipelineConfig()
        validate_config(cfg)
        return cfg
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def _check_simplex(cfg, key, tol=1e-9):
    values = getattr(cfg, key)
    if any(not (0.0 <= float(v) <= 1.0) for v in values):
        raise ConfigError("values must lie in [0, 1]", key=key)
    total = math.fsum(float(v) for v in values)
    if abs(total - 1.0) > tol:
        raise ConfigError(f"values sum to {total:.12g}, not 1", key=key)
    if abs(sum(values) - 1.0) > tol:
        raise ConfigError(f"values sum to {sum(values):.12g}, expected 1", key=key)


def validate_config(cfg: PipelineConfig):
    for key in ("user_share", "exploration_shares", "distance_shares", "selection_probs",
                "volume_shares", "boot_category_means", "boot_base_mix"):
        _check_simplex(cfg, key)
    if len(cfg.user_share) != len(cfg.operators):
        raise ConfigError("needs one share per operator", key="user_share")
    for op in cfg.operators:
        parts = str(op).split("-")
        if len(parts) != 2 or not all(p.isdigit() for p in parts) or len(parts[0]) != 3:
            raise ConfigError(f"operator {op!r} is not 'MCC-MNC'", key="operators")
    for key in ("prob_own_car", "dropout", "rho_min", "boot_self_transition", "boot_night_ratio",
                "boot_intl_incoming", "seq_len_quantile"):
        v = getattr(cfg, key)
        if not 0.0 <= v <= 1.0:
            raise ConfigError(f"{v} outside [0, 1]", key=key)
    for p in cfg.p_night:
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"{p} outside [0, 1]", key="p_night")
    if len(cfg.p_night) != 3 or len(cfg.exploration_shares) != 3:
        raise ConfigError("needs three profiles", key="p_night")
    for key in ("n_users", "duration_s", "sample_interval_s", "batch_size", "n_stations",
                "boot_n_users", "boot_duration_s", "iet_n_samples"):
        if getattr(cfg, key) <= 0:
            raise ConfigError("must be positive", key=key)
    if not 0 <= cfg.start_weekday <= 6:
        raise ConfigError("must be in 0..6", key="start_weekday")
    if cfg.min_group_size < 1 or cfg.max_group_size < cfg.min_group_size:
        raise ConfigError("bad group size range", key="max_group_size")
    if cfg.min_evening_s <= 0 or cfg.max_evening_s < cfg.min_evening_s:
        raise ConfigError("bad evening duration range", key="max_evening_s")
    if cfg.clip_mode not in ("value", "norm"):
        raise ConfigError("must be 'value' or 'norm'", key="clip_mode")
    if cfg.call_truncation not in ("caller", "both"):
        raise ConfigError("must be 'caller' or 'both'", key="call_truncation")
    for key in ("traffic_split", "corr_split"):
        if getattr(cfg, key) not in ("chronological", "by_user"):
            raise ConfigError("must be 'chronological' or 'by_user'", key=key)
    return cfg


def operator_codes(cfg: PipelineConfig):
    """List of ``(mcc, mnc)`` string pairs."""
    return [tuple(str(op).split("-")) for op in cfg.operators]


def iter_csv_rows(path, expected_header) -> Iterator[tuple[int, list[str]]]:
    """Yield ``(line_number, row)`` after checking the header."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if not check_header(path, reader, expected_header):
            return
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            yield i, row


def write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


__all__ = [
    "DAY", "WEEK", "ConfigError", "EventType", "N_EVENT_TYPES", "seeded_rng", "luhn_check_digit",
    "luhn_valid", "random_imei", "Projection", "TrajectoryPoint", "CdrRecord", "CDR_HEADER",
    "MOBILITY_HEADER", "CELL_HEADER", "REF_HEADER", "PHONEBOOK_HEADER", "STATION_HEADER",
    "write_cdr_csv", "read_cdr_csv", "PipelineConfig", "load_config", "parse_config_text",
    "validate_config", "operator_codes", "iter_csv_rows", "write_rows",
]
