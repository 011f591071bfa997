"""Observed-data containers, CSV ingestion and area-level instrument construction."""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

SURVIVAL = "survival"
COMPETING = "competing"
MODES = (SURVIVAL, COMPETING)


@dataclass(frozen=True)
class SurvivalRecord:
    """One subject: follow-up time, event status, cause, exposure, instrument, confounders."""

    time: float
    status: int
    exposure: float
    instrument: float
    confounders: tuple = ()
    cause: Optional[int] = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented, validated sample.

    Arrays are stored read-only; ``records`` reconstructs the row view.
    ``cause`` holds 0 for censored rows.
    """

    time: np.ndarray
    status: np.ndarray
    cause: np.ndarray
    exposure: np.ndarray
    instrument: np.ndarray
    confounders: np.ndarray
    confounder_names: tuple = ()
    horizon: float = 0.0
    mode: str = SURVIVAL
    exposure_name: str = "exposure"
    instrument_name: str = "instrument"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("time", "status", "cause", "exposure", "instrument", "confounders"):
            arr = np.array(getattr(self, name), copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self):
        return self.time.shape[0]

    @property
    def p(self):
        return self.confounders.shape[1]

    @property
    def records(self):
        out = []
        for i in range(self.n):
            cause = int(self.cause[i]) if self.status[i] == 1 and self.mode == COMPETING else None
            out.append(
                SurvivalRecord(
                    time=float(self.time[i]),
                    status=int(self.status[i]),
                    exposure=float(self.exposure[i]),
                    instrument=float(self.instrument[i]),
                    confounders=tuple(float(v) for v in self.confounders[i]),
                    cause=cause,
                )
            )
        return out

    def first_stage_design(self):
        """Rows ``(1, X_I, X_o)`` for the exposure model."""
        return np.column_stack([np.ones(self.n), self.instrument, self.confounders])

    def subset(self, mask):
        mask = np.asarray(mask, dtype=bool)
        return make_dataset(
            self.time[mask], self.status[mask], self.exposure[mask], self.instrument[mask],
            self.confounders[mask], cause=self.cause[mask], mode=self.mode,
            confounder_names=self.confounder_names, horizon=self.horizon,
            exposure_name=self.exposure_name, instrument_name=self.instrument_name,
        )


def make_dataset(time, status, exposure, instrument, confounders=None, *, cause=None,
                 mode=SURVIVAL, confounder_names=None, horizon=None,
                 exposure_name="exposure", instrument_name="instrument"):
    """Validate arrays and build a :class:`Dataset`.

    If ``horizon`` is below the largest time, later records are
    administratively censored at ``horizon``.
    """
    if mode not in MODES:
        raise DataError(f"mode must be one of {MODES}, got {mode!r}")
    time = np.asarray(time, dtype=float).ravel()
    n = time.shape[0]
    status = np.asarray(status).ravel()
    exposure = np.asarray(exposure, dtype=float).ravel()
    instrument = np.asarray(instrument, dtype=float).ravel()
    if confounders is None:
        confounders = np.zeros((n, 0))
    confounders = np.asarray(confounders, dtype=float)
    if confounders.ndim == 1:
        confounders = confounders[:, None]
    if not (status.shape[0] == exposure.shape[0] == instrument.shape[0] == confounders.shape[0] == n):
        raise DataError("all columns must have the same number of rows")
    p = confounders.shape[1]
    if confounder_names is None:
        confounder_names = tuple(f"x{j + 1}" for j in range(p))
    confounder_names = tuple(confounder_names)
    if len(confounder_names) != p:
        raise DataError("confounder_names length does not match confounder columns")

    if not np.all(np.isfinite(time)) or np.any(time < 0):
        bad = int(np.flatnonzero(~np.isfinite(time) | (time < 0))[0])
        raise DataError(f"row {bad}: time must be finite and nonnegative")
    for name, arr in (("exposure", exposure), ("instrument", instrument), ("confounders", confounders)):
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(arr.reshape(n, -1)), axis=1))[0])
            raise DataError(f"row {bad}: {name} must be finite")
    if not np.all(np.isin(status, (0, 1))):
        bad = int(np.flatnonzero(~np.isin(status, (0, 1)))[0])
        raise DataError(f"row {bad}: status must be 0 or 1")
    status = status.astype(int)

    if cause is None:
        if mode == COMPETING:
            raise DataError("competing mode requires a cause column")
        cause = status.copy()
    cause = np.asarray(cause)
    if cause.shape[0] != n:
        raise DataError("cause column has the wrong length")
    if mode == COMPETING:
        cause = cause.astype(float)
        ev = status == 1
        with np.errstate(invalid="ignore"):
            bad_ev = ev & ~(np.isfinite(cause) & (cause >= 1) & (cause == np.floor(cause)))
            bad_cens = ~ev & np.isfinite(cause) & (cause != 0)
        if np.any(bad_ev):
            raise DataError(f"row {int(np.flatnonzero(bad_ev)[0])}: status=1 requires a positive integer cause")
        if np.any(bad_cens):
            raise DataError(f"row {int(np.flatnonzero(bad_cens)[0])}: censored record must not carry a cause")
        cause = np.where(ev, np.nan_to_num(cause), 0).astype(int)
    else:
        cause = status.copy()

    if n < p + 4:
        raise DataError(f"need at least p + 4 = {p + 4} rows, got {n}")

    tmax = float(time.max())
    if horizon is None:
        horizon = tmax
    horizon = float(horizon)
    if not np.isfinite(horizon) or horizon <= 0:
        raise DataError("horizon must be a positive finite number")
    if horizon < tmax:
        late = time > horizon
        time = np.where(late, horizon, time)
        status = np.where(late, 0, status)
        cause = np.where(late, 0, cause)

    return Dataset(
        time=time, status=status, cause=cause, exposure=exposure, instrument=instrument,
        confounders=confounders, confounder_names=confounder_names, horizon=horizon,
        mode=mode, exposure_name=exposure_name, instrument_name=instrument_name,
    )


def dataset_from_records(records: Sequence[SurvivalRecord], mode=SURVIVAL, confounder_names=None,
                         horizon=None):
    if not records:
        raise DataError("no records")
    p = len(records[0].confounders)
    if any(len(r.confounders) != p for r in records):
        raise DataError("confounder vector length differs between records")
    cause = None
    if mode == COMPETING:
        cause = [r.cause if r.cause is not None else (np.nan if r.status == 1 else 0) for r in records]
    return make_dataset(
        [r.time for r in records], [r.status for r in records], [r.exposure for r in records],
        [r.instrument for r in records], np.array([r.confounders for r in records], dtype=float).reshape(len(records), p),
        cause=cause, mode=mode, confounder_names=confounder_names, horizon=horizon,
    )


DEFAULT_COLUMNS = {
    "time": "time",
    "status": "status",
    "cause": "cause",
    "exposure": "exposure",
    "instrument": "instrument",
}


def _parse_float(text, row, column):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise DataError(f"row {row}, column {column!r}: non-numeric value {text!r}") from None
    if not math.isfinite(value):
        raise DataError(f"row {row}, column {column!r}: non-finite value {text!r}")
    return value


def load_dataset(path, column_map: Optional[Mapping] = None, mode=SURVIVAL, horizon=None):
    """Read a comma-separated file with a header row into a :class:`Dataset`.

    ``column_map`` binds roles (``time``, ``status``, ``cause``, ``exposure``,
    ``instrument``) to header names, and ``confounders`` to a list of header
    names.  Without an explicit confounder list, every column not bound to a
    role is used.  Row numbers in error messages count data rows from 1.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    cmap = dict(DEFAULT_COLUMNS)
    cmap.update({k: v for k, v in (column_map or {}).items() if v is not None})
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if any(cell.strip() for cell in r)]

    roles = ["time", "status", "exposure", "instrument"] + (["cause"] if mode == COMPETING else [])
    for role in roles:
        if cmap[role] not in header:
            raise DataError(f"missing column {cmap[role]!r} (role {role})")
    confounders = cmap.get("confounders")
    if confounders is None:
        bound = {cmap[r] for r in ("time", "status", "cause", "exposure", "instrument")}
        confounders = [h for h in header if h not in bound]
    confounders = list(confounders)
    for name in confounders:
        if name not in header:
            raise DataError(f"missing confounder column {name!r}")
    col = {h: j for j, h in enumerate(header)}

    n = len(rows)
    time = np.empty(n)
    status = np.empty(n, dtype=int)
    cause = np.zeros(n)
    exposure = np.empty(n)
    instrument = np.empty(n)
    conf = np.empty((n, len(confounders)))
    for i, row in enumerate(rows):
        r = i + 1
        if len(row) != len(header):
            raise DataError(f"row {r}: expected {len(header)} fields, got {len(row)}")
        time[i] = _parse_float(row[col[cmap["time"]]], r, cmap["time"])
        s = _parse_float(row[col[cmap["status"]]], r, cmap["status"])
        if s not in (0.0, 1.0):
            raise DataError(f"row {r}, column {cmap['status']!r}: status must be 0 or 1")
        status[i] = int(s)
        exposure[i] = _parse_float(row[col[cmap["exposure"]]], r, cmap["exposure"])
        instrument[i] = _parse_float(row[col[cmap["instrument"]]], r, cmap["instrument"])
        for j, name in enumerate(confounders):
            conf[i, j] = _parse_float(row[col[name]], r, name)
        if mode == COMPETING:
            text = row[col[cmap["cause"]]].strip()
            if status[i] == 1:
                if text == "":
                    raise DataError(f"row {r}: status=1 but cause is empty")
                c = _parse_float(text, r, cmap["cause"])
                if c < 1 or c != int(c):
                    raise DataError(f"row {r}: cause must be a positive integer, got {text!r}")
                cause[i] = c
            elif text not in ("", "0"):
                raise DataError(f"row {r}: censored record (status=0) must not carry a cause")

    return make_dataset(
        time, status, exposure, instrument, conf,
        cause=cause if mode == COMPETING else None, mode=mode,
        confounder_names=confounders, horizon=horizon,
        exposure_name=cmap["exposure"], instrument_name=cmap["instrument"],
    )


def write_csv(data: Dataset, path):
    """Write ``data`` with default role names; floats use ``repr`` so they round-trip exactly."""
    header = ["time", "status"]
    if data.mode == COMPETING:
        header.append("cause")
    header += ["exposure", "instrument", *data.confounder_names]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(data.n):
            row = [repr(float(data.time[i])), str(int(data.status[i]))]
            if data.mode == COMPETING:
                row.append(str(int(data.cause[i])) if data.status[i] == 1 else "")
            row += [repr(float(data.exposure[i])), repr(float(data.instrument[i]))]
            row += [repr(float(v)) for v in data.confounders[i]]
            w.writerow(row)


@dataclass(frozen=True)
class AreaPanel:
    """Rows of (region, year, treated, predicted probability of treatment)."""

    region: tuple
    year: tuple
    treated: tuple
    p_hat: tuple

    @classmethod
    def from_rows(cls, rows: Iterable[Sequence]):
        rows = list(rows)
        if not rows:
            raise DataError("area panel is empty")
        region, year, treated, p_hat = zip(*rows)
        return cls(tuple(region), tuple(int(y) for y in year),
                   tuple(float(t) for t in treated), tuple(float(p) for p in p_hat))

    def __len__(self):
        return len(self.region)


def load_area_panel(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = ("region", "year", "treated", "p_hat")
        if reader.fieldnames is None or any(c not in reader.fieldnames for c in required):
            raise DataError(f"area panel needs columns {required}")
        rows = []
        for r, rec in enumerate(reader, start=1):
            try:
                year = int(rec["year"])
            except (TypeError, ValueError):
                raise DataError(f"row {r}, column 'year': not an integer: {rec['year']!r}") from None
            rows.append((rec["region"], year, _parse_float(rec["treated"], r, "treated"),
                         _parse_float(rec["p_hat"], r, "p_hat")))
    return AreaPanel.from_rows(rows)


def construct_area_instrument(panel: AreaPanel) -> dict:
    """Lagged regional treatment-preference instrument.

    For each region and year ``y`` such that the region also has data in
    ``y - 1``, the value is the observed treatment proportion in ``y - 1``
    minus the mean predicted treatment probability in ``y - 1``.
    """
    if len(panel) == 0:
        raise DataError("area panel is empty")
    p = np.asarray(panel.p_hat, dtype=float)
    if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
        raise DataError("predicted probabilities must lie in [0, 1]")
    groups = defaultdict(lambda: ([], []))
    for reg, yr, tr, ph in zip(panel.region, panel.year, panel.treated, panel.p_hat):
        groups[(reg, yr)][0].append(tr)
        groups[(reg, yr)][1].append(ph)
    # fsum keeps the result independent of row order
    diff = {key: (math.fsum(t) - math.fsum(q)) / len(t) for key, (t, q) in groups.items()}
    out = {}
    for (reg, yr) in sorted(diff, key=lambda k: (str(k[0]), k[1])):
        prev = (reg, yr - 1)
        if prev in diff:
            out[(reg, yr)] = diff[prev]
    return out


def attach_area_instrument(regions, years, iv_map):
    """Per-subject instrument values; returns ``(values, available_mask)``.

    Subjects whose (region, year) has no lagged value get NaN and
    ``available_mask`` False; callers drop them.
    """
    values = np.array([iv_map.get((r, int(y)), np.nan) for r, y in zip(regions, years)], dtype=float)
    ok = np.isfinite(values)
    if not ok.all():
        log.warning("%d of %d subjects have no lagged instrument value and are dropped",
                    int((~ok).sum()), ok.size)
    return values, ok
