"""Household-level data ingestion, quantity trimming, and summary stats.

Input is delimited text with one header row.  A schema map binds the
logical fields (log quantity, log price, log income, optional instrument
and region tag) to file columns; columns recorded in levels can be
log-transformed at load.  All variables are stored in logs throughout.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "HouseholdRecord",
    "Dataset",
    "ColumnSpec",
    "DataError",
    "load_dataset",
    "save_dataset",
    "trim_quantity",
    "summary_stats",
]

DEFAULT_REGION = "all"


class DataError(ValueError):
    """Malformed input; carries the offending row number when known."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        where = ""
        if row is not None:
            where += f" (row {row}"
            where += f", column {column!r})" if column is not None else ")"
        elif column is not None:
            where += f" (column {column!r})"
        super().__init__(message + where)


@dataclass(frozen=True)
class HouseholdRecord:
    """One observation, all continuous fields in logs."""

    log_q: float
    log_p: float
    log_y: float
    instrument: float | None = None
    region: str = DEFAULT_REGION

    def __post_init__(self) -> None:
        for name in ("log_q", "log_p", "log_y"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
        if self.instrument is not None and not math.isfinite(self.instrument):
            raise ValueError(f"instrument must be finite, got {self.instrument}")


@dataclass(frozen=True)
class Dataset:
    """Ordered household records plus the trim fraction already applied."""

    records: tuple[HouseholdRecord, ...]
    trim_fraction: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        if not 0.0 <= self.trim_fraction < 0.5:
            raise ValueError(f"trim_fraction must lie in [0, 0.5), got {self.trim_fraction}")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def log_q(self) -> np.ndarray:
        return np.array([r.log_q for r in self.records])

    @property
    def log_p(self) -> np.ndarray:
        return np.array([r.log_p for r in self.records])

    @property
    def log_y(self) -> np.ndarray:
        return np.array([r.log_y for r in self.records])

    @property
    def instrument(self) -> np.ndarray | None:
        vals = [r.instrument for r in self.records]
        if any(v is None for v in vals):
            return None
        return np.array(vals, dtype=float)

    @property
    def regions(self) -> tuple[str, ...]:
        return tuple(r.region for r in self.records)

    def subset(self, mask) -> "Dataset":
        mask = np.asarray(mask, dtype=bool)
        kept = tuple(r for r, m in zip(self.records, mask) if m)
        return replace(self, records=kept)


@dataclass(frozen=True)
class ColumnSpec:
    """File column for one logical field; set log=True for level data."""

    column: str
    log: bool = False


def _normalize_schema(schema: dict) -> dict[str, ColumnSpec]:
    known = {"log_q", "log_p", "log_y", "instrument", "region"}
    out: dict[str, ColumnSpec] = {}
    for field_name, spec in schema.items():
        if field_name not in known:
            raise DataError(f"unknown schema field {field_name!r}; expected one of {sorted(known)}")
        if isinstance(spec, ColumnSpec):
            out[field_name] = spec
        elif isinstance(spec, str):
            out[field_name] = ColumnSpec(spec)
        else:
            raise DataError(f"schema entry for {field_name!r} must be a column name or ColumnSpec")
    for required in ("log_q", "log_p", "log_y"):
        if required not in out:
            raise DataError(f"schema is missing required field {required!r}")
    return out


def _parse_float(raw: str, row: int, column: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise DataError(f"could not parse {raw!r} as a number", row=row, column=column) from None
    if not math.isfinite(value):
        raise DataError(f"non-finite value {raw!r}", row=row, column=column)
    return value


def load_dataset(path, schema: dict, berkson=None, delimiter: str = ",") -> Dataset:
    """Read a delimited file into an untrimmed Dataset, preserving row order.

    Parameters
    ----------
    path : str or path-like
        Input file with one header row.
    schema : dict
        Maps logical field names (log_q, log_p, log_y, instrument,
        region) to column names or ColumnSpec entries.  Fields flagged
        with ``log=True`` are log-transformed at load and must be
        positive in the file.
    berkson : BerksonSpec, optional
        When given, every region tag in the file is validated against
        its sigma map.
    delimiter : str
        Field separator, comma by default.

    Raises
    ------
    DataError
        Missing file columns, malformed rows (reported with row number
        and column), or region tags absent from ``berkson``.
    """
    cols = _normalize_schema(schema)
    try:
        fh = open(path, newline="")
    except FileNotFoundError:
        raise DataError(f"input file not found: {path}") from None
    with fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        header = reader.fieldnames or []
        for field_name, colspec in cols.items():
            if colspec.column not in header:
                raise DataError(
                    f"declared column {colspec.column!r} for field {field_name!r} "
                    f"not in header {header}"
                )
        records: list[HouseholdRecord] = []
        for i, row in enumerate(reader):
            rownum = i + 2  # header is line 1
            values: dict[str, float | str | None] = {}
            for field_name, colspec in cols.items():
                raw = row.get(colspec.column)
                raw = raw.strip() if raw is not None else ""
                if raw == "":
                    if field_name in ("instrument", "region"):
                        values[field_name] = None
                        continue
                    raise DataError("missing required value", row=rownum, column=colspec.column)
                if field_name == "region":
                    values[field_name] = raw
                    continue
                value = _parse_float(raw, rownum, colspec.column)
                if colspec.log:
                    if value <= 0:
                        raise DataError(
                            f"cannot log-transform nonpositive value {value}",
                            row=rownum,
                            column=colspec.column,
                        )
                    value = math.log(value)
                values[field_name] = value
            region = values.get("region") or DEFAULT_REGION
            records.append(
                HouseholdRecord(
                    log_q=values["log_q"],
                    log_p=values["log_p"],
                    log_y=values["log_y"],
                    instrument=values.get("instrument"),
                    region=str(region),
                )
            )
    if not records:
        raise DataError(f"no data rows in {path}")
    if berkson is not None:
        unknown = sorted({r.region for r in records} - set(berkson.sigma_by_region))
        if unknown:
            raise DataError(f"region tags {unknown} not present in the Berkson sigma map")
    return Dataset(records=tuple(records))


def save_dataset(dataset: Dataset, path, delimiter: str = ",") -> None:
    """Write the dataset in the same delimited format load_dataset reads.

    Floats use repr so a load/save/load round trip is exact.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(["log_q", "log_p", "log_y", "instrument", "region"])
        for r in dataset.records:
            writer.writerow(
                [
                    repr(r.log_q),
                    repr(r.log_p),
                    repr(r.log_y),
                    "" if r.instrument is None else repr(r.instrument),
                    r.region,
                ]
            )


def trim_quantity(dataset: Dataset, fraction: float) -> Dataset:
    """Drop records outside the central quantity band.

    Records whose log quantity lies strictly below the ``fraction``
    empirical quantile or strictly above the ``1 - fraction`` quantile
    (linear interpolation between order statistics) are removed.
    Deterministic for fixed input; at least 2 records must survive.
    """
    if not 0.0 <= fraction < 0.5:
        raise ValueError(f"trim fraction must lie in [0, 0.5), got {fraction}")
    if fraction == 0.0:
        return replace(dataset, trim_fraction=0.0)
    q = dataset.log_q
    lo = np.quantile(q, fraction)
    hi = np.quantile(q, 1.0 - fraction)
    mask = (q >= lo) & (q <= hi)
    if mask.sum() < 2:
        raise ValueError(f"trimming at fraction {fraction} leaves fewer than 2 records")
    kept = tuple(r for r, m in zip(dataset.records, mask) if m)
    return Dataset(records=kept, trim_fraction=fraction)


def summary_stats(dataset: Dataset) -> list[dict]:
    """Per-field sample mean, sd (denominator n-1), and count.

    Returns a list of ``{"field", "mean", "sd", "n"}`` dicts ready for
    JSON output; sd is None when n < 2 (undefined).  The instrument is
    included only when present on every record.
    """
    if len(dataset) == 0:
        raise ValueError("summary_stats requires a nonempty dataset")
    fields: dict[str, np.ndarray] = {
        "log_q": dataset.log_q,
        "log_p": dataset.log_p,
        "log_y": dataset.log_y,
    }
    instrument = dataset.instrument
    if instrument is not None:
        fields["instrument"] = instrument
    out = []
    for name, values in fields.items():
        n = len(values)
        sd = float(np.std(values, ddof=1)) if n >= 2 else None
        out.append({"field": name, "mean": float(np.mean(values)), "sd": sd, "n": n})
    return out
