"""Comparison of retrievals against coarse products and ground stations.

Fields here are 2-D arrays with NaN marking missing pixels (cloud-masked
or failed retrievals).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, FormatError

__all__ = [
    "DEFAULT_WINDOW_SECONDS",
    "GroundRecord",
    "ComparisonReport",
    "OverpassMatch",
    "Georegistration",
    "aggregate",
    "compare_fields",
    "angstrom_convert",
    "sort_records",
    "match_overpass",
    "parse_timestamp",
    "read_ground_records",
    "write_ground_records",
]

DEFAULT_WINDOW_SECONDS = 3600
GROUND_COLUMNS = ("timestamp", "wavelength_nm", "aod", "angstrom_exponent")


@dataclass(frozen=True)
class GroundRecord:
    """One station measurement; ``timestamp`` is UTC seconds since the epoch."""

    timestamp: float
    wavelength_nm: float
    aod: float
    angstrom_exponent: float

    def __post_init__(self):
        if not self.wavelength_nm > 0:
            raise ConfigurationError("wavelength_nm must be positive")
        if not self.aod >= 0:
            raise ConfigurationError("aod must be non-negative")
        if not all(math.isfinite(v) for v in (self.timestamp, self.angstrom_exponent)):
            raise ConfigurationError("timestamp and angstrom_exponent must be finite")

    def at(self, wavelength_nm: float) -> float:
        return angstrom_convert(self.aod, self.wavelength_nm, wavelength_nm, self.angstrom_exponent)


@dataclass
class ComparisonReport:
    """Agreement statistics over pixels valid in both fields."""

    pairs: np.ndarray  # (n, 2): (a, b)
    rms: float
    correlation: float  # NaN when either side is constant
    n_valid: int
    n_missing: int

    def to_text(self) -> str:
        corr = "absent" if math.isnan(self.correlation) else repr(self.correlation)
        return (f"# bayesaod comparison\nn_valid = {self.n_valid}\nn_missing = {self.n_missing}\n"
                f"rms = {self.rms!r}\ncorrelation = {corr}\n")


@dataclass
class OverpassMatch:
    """Result of matching station records to an overpass.

    ``mean_aod`` is None when no record falls inside the window; ``gap_seconds``
    is then the distance to the nearest record (None if there are no records).
    """

    mean_aod: float | None
    n_records: int
    gap_seconds: float | None

    @property
    def matched(self) -> bool:
        return self.mean_aod is not None


def aggregate(fine, factor: int = 4, min_clear_fraction: float = 1.0 / 16.0) -> np.ndarray:
    """Average ``factor x factor`` footprints of a fine field.

    A coarse pixel is the mean of the non-missing fine pixels in its
    footprint, or NaN when their fraction is below ``min_clear_fraction``.
    """
    a = np.asarray(fine, dtype=float)
    if a.ndim != 2:
        raise ConfigurationError("field must be 2-D")
    factor = int(factor)
    if factor < 1 or a.shape[0] % factor or a.shape[1] % factor:
        raise ConfigurationError(f"factor {factor} does not divide field shape {a.shape}")
    if not 0.0 <= min_clear_fraction <= 1.0:
        raise ConfigurationError("min_clear_fraction must lie in [0, 1]")
    R, C = a.shape[0] // factor, a.shape[1] // factor
    tiles = a.reshape(R, factor, C, factor).swapaxes(1, 2).reshape(R, C, factor * factor)
    valid = ~np.isnan(tiles)
    n_valid = valid.sum(axis=2)
    sums = np.where(valid, tiles, 0.0).sum(axis=2)
    frac = n_valid / float(factor * factor)
    out = np.full((R, C), np.nan)
    ok = (n_valid > 0) & (frac >= min_clear_fraction)
    out[ok] = sums[ok] / n_valid[ok]
    return out


def compare_fields(a, b) -> ComparisonReport:
    """RMS difference and Pearson correlation over co-valid pixels."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ConfigurationError(f"field shapes differ: {a.shape} vs {b.shape}")
    both = ~(np.isnan(a) | np.isnan(b))
    n = int(both.sum())
    if n == 0:
        raise ConfigurationError("no pixel is valid in both fields")
    x, y = a[both], b[both]
    rms = float(np.sqrt(np.mean((x - y) ** 2)))
    dx, dy = x - x.mean(), y - y.mean()
    denom = math.sqrt(float(dx @ dx) * float(dy @ dy))
    corr = float(np.clip((dx @ dy) / denom, -1.0, 1.0)) if denom > 0 else math.nan
    return ComparisonReport(np.column_stack([x, y]), rms, corr, n, int(a.size - n))


def angstrom_convert(aod, from_nm, to_nm, exponent):
    """Convert AOD between wavelengths: ``aod * (to/from) ** -exponent``."""
    if np.any(np.asarray(from_nm) <= 0) or np.any(np.asarray(to_nm) <= 0):
        raise ConfigurationError("wavelengths must be positive")
    return aod * (np.asarray(to_nm, dtype=float) / from_nm) ** (-np.asarray(exponent, dtype=float))


def sort_records(records) -> list[GroundRecord]:
    return sorted(records, key=lambda r: r.timestamp)


def match_overpass(records, overpass_time: float, window_seconds: float = DEFAULT_WINDOW_SECONDS,
                   wavelength_nm: float = 558.0) -> OverpassMatch:
    """Mean station AOD, converted to ``wavelength_nm``, within a centered window.

    Records with ``|t - overpass_time| <= window_seconds / 2`` are averaged.
    ``records`` must be time-sorted (see :func:`sort_records`).
    """
    recs = list(records)
    if any(recs[i].timestamp > recs[i + 1].timestamp for i in range(len(recs) - 1)):
        raise ConfigurationError("records must be sorted by timestamp; use sort_records")
    if not recs:
        return OverpassMatch(None, 0, None)
    t = np.array([r.timestamp for r in recs])
    gaps = np.abs(t - overpass_time)
    inside = gaps <= 0.5 * window_seconds
    if not inside.any():
        return OverpassMatch(None, 0, float(gaps.min()))
    vals = [recs[i].at(wavelength_nm) for i in np.flatnonzero(inside)]
    return OverpassMatch(float(np.mean(vals)), len(vals), float(gaps.min()))


@dataclass(frozen=True)
class Georegistration:
    """Affine map from (row, col) pixel centres to (lat, lon) degrees.

    ``lat = lat0 + row * dlat_row + col * dlat_col`` and likewise for lon.
    """

    lat0: float
    lon0: float
    dlat_row: float
    dlat_col: float
    dlon_row: float
    dlon_col: float

    def pixel_of(self, lat: float, lon: float, shape) -> tuple[int, int]:
        """Nearest pixel centre (in the affine coordinates) inside ``shape``."""
        A = np.array([[self.dlat_row, self.dlat_col], [self.dlon_row, self.dlon_col]])
        rc = np.linalg.solve(A, np.array([lat - self.lat0, lon - self.lon0]))
        r, c = (int(np.clip(np.rint(v), 0, n - 1)) for v, n in zip(rc, shape))
        return r, c


def parse_timestamp(text: str) -> float:
    """ISO-8601 timestamp to UTC epoch seconds; naive times are taken as UTC."""
    s = text.strip()
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _format_timestamp(t: float) -> str:
    dt = datetime.fromtimestamp(t, tz=timezone.utc)
    return dt.isoformat(timespec="microseconds" if t % 1 else "seconds").replace("+00:00", "Z")


def read_ground_records(path) -> list[GroundRecord]:
    """Parse a comma-separated station file with a header row.

    Required columns: ``timestamp`` (ISO-8601, UTC), ``wavelength_nm``,
    ``aod`` and ``angstrom_exponent``, in any order.  Errors carry the
    1-based line number.
    """
    path = Path(path)
    text = path.read_text()
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise FormatError("empty file", line=1, path=path) from None
    missing = [c for c in GROUND_COLUMNS if c not in header]
    if missing:
        raise FormatError(f"header lacks column(s) {', '.join(missing)}", line=1, path=path)
    col = {c: header.index(c) for c in GROUND_COLUMNS}
    out = []
    for row in reader:
        lineno = reader.line_num
        if not row or all(not f.strip() for f in row):
            continue
        if len(row) != len(header):
            raise FormatError(f"expected {len(header)} fields, got {len(row)}", line=lineno, path=path)
        try:
            ts = parse_timestamp(row[col["timestamp"]])
        except ValueError:
            raise FormatError(f"bad timestamp {row[col['timestamp']]!r}", line=lineno, path=path) from None
        try:
            vals = [float(row[col[c]]) for c in GROUND_COLUMNS[1:]]
        except ValueError as exc:
            raise FormatError(f"bad number: {exc}", line=lineno, path=path) from None
        try:
            out.append(GroundRecord(ts, *vals))
        except ConfigurationError as exc:
            raise FormatError(str(exc), line=lineno, path=path) from None
    return out


def write_ground_records(records, path) -> None:
    lines = [",".join(GROUND_COLUMNS)]
    for r in records:
        lines.append(f"{_format_timestamp(r.timestamp)},{r.wavelength_nm!r},{r.aod!r},{r.angstrom_exponent!r}")
    Path(path).write_text("\n".join(lines) + "\n")
