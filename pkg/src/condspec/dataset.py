"""Loading, validation and preprocessing of replicated multichannel series.

File layout: a long-format series CSV with columns
``subject_id, t, ch1..chP`` (rows sorted by subject then t, t = 1..n) and an
outcomes CSV with columns ``subject_id, outcome``.  UTF-8, '.' decimal point.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .errors import ValidationError

MIN_LENGTH = 15
MAX_CHANNELS = 3


@dataclass(frozen=True)
class OutcomeTransform:
    """Affine map raw -> unit scale: u = (raw - offset) / scale."""

    offset: float
    scale: float

    def apply(self, raw):
        return (np.asarray(raw, dtype=float) - self.offset) / self.scale

    def invert(self, unit):
        return np.asarray(unit, dtype=float) * self.scale + self.offset


@dataclass(frozen=True)
class MultiSubjectSeries:
    """N subjects x n time points x P channels plus unit-scaled outcomes."""

    data: np.ndarray              # (N, n, P)
    outcomes_raw: np.ndarray      # (N,)
    outcomes: np.ndarray          # (N,) in [0, 1]
    outcome_transform: OutcomeTransform
    subject_ids: tuple = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 3:
            raise ValidationError("data must be (subjects, time, channels)")
        n_sub, n_time, n_ch = data.shape
        if n_sub < 2:
            raise ValidationError("need at least 2 subjects")
        if n_time < MIN_LENGTH:
            raise ValidationError(f"series length {n_time} < {MIN_LENGTH}")
        if not 1 <= n_ch <= MAX_CHANNELS:
            raise ValidationError(f"channel count {n_ch} outside 1..{MAX_CHANNELS}")
        if not np.all(np.isfinite(data)):
            raise ValidationError("non-finite values in series data")
        u = np.asarray(self.outcomes, dtype=float)
        if u.shape != (n_sub,):
            raise ValidationError("outcomes length does not match subject count")
        if np.any(u < -1e-12) or np.any(u > 1 + 1e-12):
            raise ValidationError("outcomes must be unit-scaled to [0, 1]")
        back = self.outcome_transform.apply(self.outcomes_raw)
        if np.max(np.abs(back - u)) > 1e-12:
            raise ValidationError("outcome transform does not reproduce unit outcomes")

    @property
    def n_subjects(self) -> int:
        return self.data.shape[0]

    @property
    def n_time(self) -> int:
        return self.data.shape[1]

    @property
    def n_channels(self) -> int:
        return self.data.shape[2]


def scale_outcomes(raw):
    """Map raw outcomes affinely onto [0, 1]: min -> 0, max -> 1.

    Returns the unit vector and the recorded transform; already unit-scaled
    inputs spanning [0, 1] come back unchanged with the identity transform.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 1 or raw.size < 2:
        raise ValidationError("outcomes must be a vector of length >= 2")
    if not np.all(np.isfinite(raw)):
        raise ValidationError("non-finite outcome value")
    lo, hi = raw.min(), raw.max()
    if hi - lo <= 0:
        raise ValidationError("constant outcome vector: unit scale undefined")
    transform = OutcomeTransform(offset=float(lo), scale=float(hi - lo))
    return transform.apply(raw), transform


def from_arrays(data, outcomes_raw, subject_ids=None) -> MultiSubjectSeries:
    """Build a validated dataset from in-memory arrays, scaling outcomes."""
    unit, transform = scale_outcomes(outcomes_raw)
    ids = tuple(subject_ids) if subject_ids is not None else tuple(
        str(i + 1) for i in range(np.asarray(data).shape[0]))
    return MultiSubjectSeries(data=np.asarray(data, dtype=float),
                              outcomes_raw=np.asarray(outcomes_raw, dtype=float),
                              outcomes=unit, outcome_transform=transform,
                              subject_ids=ids)


def detrend(series: MultiSubjectSeries, mode: str = "mean") -> MultiSubjectSeries:
    """Remove the per-subject, per-channel mean or least-squares line.

    mode 'none' returns the input unchanged.
    """
    if mode == "none":
        return series
    data = series.data.copy()
    n = series.n_time
    if mode == "mean":
        data -= data.mean(axis=1, keepdims=True)
    elif mode == "linear":
        t = np.arange(1, n + 1, dtype=float)
        x = np.column_stack([np.ones(n), t])
        # one least-squares fit per (subject, channel) column
        flat = data.transpose(1, 0, 2).reshape(n, -1)
        coef, *_ = np.linalg.lstsq(x, flat, rcond=None)
        flat = flat - x @ coef
        data = flat.reshape(n, series.n_subjects, series.n_channels).transpose(1, 0, 2)
    else:
        raise ValidationError(f"unknown detrend mode {mode!r}")
    return replace(series, data=data)


def _parse_float(text, where):
    try:
        return float(text)
    except (TypeError, ValueError):
        raise ValidationError(f"non-numeric cell {text!r} at {where}") from None


def load_dataset(series_path, outcomes_path, detrend_mode: str = "mean") -> MultiSubjectSeries:
    """Load and validate the two CSV files; outcomes are unit-scaled."""
    per_subject, order, n_ch = _read_series_csv(series_path)
    raw_by_id = _read_outcomes_csv(outcomes_path)

    missing = [sid for sid in order if sid not in raw_by_id]
    if missing:
        raise ValidationError(f"outcomes missing for subjects {missing[:5]}")
    extra = [sid for sid in raw_by_id if sid not in per_subject]
    if extra:
        raise ValidationError(f"outcomes for unknown subjects {extra[:5]}")

    lengths = {len(rows) for rows in per_subject.values()}
    if len(lengths) != 1:
        raise ValidationError(f"subjects have differing series lengths {sorted(lengths)}")
    n = lengths.pop()

    data = np.empty((len(order), n, n_ch))
    for i, sid in enumerate(order):
        rows = per_subject[sid]
        ts = [t for t, _ in rows]
        if ts != list(range(1, n + 1)):
            raise ValidationError(f"subject {sid}: t must run 1..{n} in order")
        data[i] = [vals for _, vals in rows]

    raw = np.array([raw_by_id[sid] for sid in order])
    dataset = from_arrays(data, raw, subject_ids=order)
    return detrend(dataset, detrend_mode)


def _read_series_csv(path):
    per_subject: dict = {}
    order: list = []
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot open series file: {exc}") from None
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header or [h.strip() for h in header[:2]] != ["subject_id", "t"]:
            raise ValidationError("series CSV must start with columns subject_id, t")
        channels = [h.strip() for h in header[2:]]
        expected = [f"ch{i + 1}" for i in range(len(channels))]
        if not channels or channels != expected:
            raise ValidationError(f"series channel columns must be {expected or ['ch1..chP']}")
        if len(channels) > MAX_CHANNELS:
            raise ValidationError(f"at most {MAX_CHANNELS} channels supported")
        seen_t: dict = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2 + len(channels):
                raise ValidationError(f"series line {lineno}: expected {2 + len(channels)} cells")
            sid = row[0].strip()
            t = _parse_float(row[1], f"series line {lineno}")
            if t != int(t) or t < 1:
                raise ValidationError(f"series line {lineno}: t must be a positive integer")
            t = int(t)
            vals = [_parse_float(cell, f"series line {lineno}") for cell in row[2:]]
            if sid not in per_subject:
                per_subject[sid] = []
                order.append(sid)
            if (sid, t) in seen_t:
                raise ValidationError(f"duplicate (subject, t) = ({sid}, {t})")
            seen_t[(sid, t)] = True
            per_subject[sid].append((t, vals))
    if len(order) < 2:
        raise ValidationError("need at least 2 subjects")
    return per_subject, order, len(channels)


def _read_outcomes_csv(path):
    raw: dict = {}
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot open outcomes file: {exc}") from None
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header or [h.strip() for h in header[:2]] != ["subject_id", "outcome"]:
            raise ValidationError("outcomes CSV must have columns subject_id, outcome")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            sid = row[0].strip()
            if sid in raw:
                raise ValidationError(f"duplicate subject id {sid!r} in outcomes")
            raw[sid] = _parse_float(row[1], f"outcomes line {lineno}")
    return raw


def save_dataset(series: MultiSubjectSeries, series_path, outcomes_path):
    """Write the dataset back out in the load_dataset layout.

    Floats are written with repr-style shortest round-trip formatting, so a
    load -> save -> load cycle is bit-exact for finite doubles.
    """
    ids = series.subject_ids or tuple(str(i + 1) for i in range(series.n_subjects))
    with open(series_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["subject_id", "t"] + [f"ch{p + 1}" for p in range(series.n_channels)])
        for j, sid in enumerate(ids):
            for t in range(series.n_time):
                writer.writerow([sid, t + 1] + [repr(float(v)) for v in series.data[j, t]])
    with open(outcomes_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["subject_id", "outcome"])
        for j, sid in enumerate(ids):
            writer.writerow([sid, repr(float(series.outcomes_raw[j]))])
