"""Text and archive file formats.

All text formats write floats with Python's shortest round-trip ``repr``,
so ``write -> read -> write`` reproduces the bytes exactly.  Readers are
strict and report the offending line.

Block file::

    # bayesaod block
    version 1
    rows <R>
    cols <K>
    channels <C>
    components <M>
    resolution_km <float>
    mask <run-length tokens "<0|1>x<count>", row-major over all cells>
    radiance
    <one line per clear pixel, row-major: C floats separated by spaces>

Truth file: same header through ``mask`` (``magic # bayesaod truth``), then
``kappa``, ``alpha``, ``sigma`` and ``clipped`` lines, then ``state`` and one
line per clear pixel ``tau theta_1 .. theta_M``.

Summary grid: header (``# bayesaod summary``, ``version``, ``rows``,
``cols``, ``components``, ``columns`` naming the fields) then one line per
cell, row-major: ``row col status`` followed by the numeric fields.  Status
is ``ok``, ``cloud`` (masked, never attempted) or ``failed`` (retrieved but
flagged as non-converged); numeric fields of a cloud cell are ``nan``.

Field grid: ``# bayesaod grid``, ``rows``, ``cols`` then one line per row
of floats (``nan`` marks missing) -- a flat layout for external plotters.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .exceptions import FormatError
from .lattice import BlockGrid
from .model import AerosolState, RadianceBlock

__all__ = [
    "encode_mask",
    "decode_mask",
    "write_block",
    "read_block",
    "write_truth",
    "read_truth",
    "write_summary",
    "read_summary",
    "write_grid",
    "read_grid",
    "write_record",
    "read_record",
    "write_json",
]

VERSION = 1
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def _f(x) -> str:
    return repr(float(x))


def encode_mask(mask) -> str:
    """Run-length encode a boolean vector as ``<bit>x<count>`` tokens."""
    m = np.asarray(mask, dtype=bool).ravel()
    if m.size == 0:
        return ""
    change = np.flatnonzero(m[1:] != m[:-1]) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [m.size]])
    return " ".join(f"{int(m[s])}x{e - s}" for s, e in zip(starts, ends))


def decode_mask(text: str, n: int, line=None, path=None) -> np.ndarray:
    out = []
    for tok in text.split():
        bit, sep, count = tok.partition("x")
        if not sep or bit not in ("0", "1") or not count.isdigit() or int(count) == 0:
            raise FormatError(f"bad mask token {tok!r}", line=line, path=path)
        out.append(np.full(int(count), bit == "1"))
    mask = np.concatenate(out) if out else np.zeros(0, dtype=bool)
    if mask.size != n:
        raise FormatError(f"mask covers {mask.size} cells, expected {n}", line=line, path=path)
    return mask


class _Lines:
    """Cursor over the lines of a text file with line-numbered errors."""

    def __init__(self, path, magic):
        self.path = path
        try:
            text = Path(path).read_text(encoding="ascii")
        except UnicodeDecodeError as exc:
            raise FormatError(f"non-ASCII content: {exc}", path=path) from None
        if not text.endswith("\n"):
            raise FormatError("file must end with a newline", path=path)
        self.lines = text[:-1].split("\n")
        self.i = 0
        if self.lines[0] != magic:
            raise FormatError(f"expected {magic!r}", line=1, path=path)
        self.i = 1

    def error(self, msg, offset=0):
        return FormatError(msg, line=self.i + offset, path=self.path)

    def next(self) -> str:
        if self.i >= len(self.lines):
            raise FormatError("unexpected end of file", line=self.i + 1, path=self.path)
        self.i += 1
        return self.lines[self.i - 1]

    def key(self, name) -> str:
        line = self.next()
        k, _, rest = line.partition(" ")
        if k != name:
            raise self.error(f"expected key {name!r}, found {line!r}")
        return rest

    def int(self, name, minimum=1) -> int:
        s = self.key(name)
        try:
            v = int(s)
        except ValueError:
            raise self.error(f"{name}: not an integer: {s!r}") from None
        if v < minimum:
            raise self.error(f"{name} must be >= {minimum}")
        return v

    def floats(self, text, n=None, what="values") -> np.ndarray:
        try:
            v = np.array([float(t) for t in text.split()], dtype=float)
        except ValueError:
            raise self.error(f"{what}: malformed number in {text!r}") from None
        if n is not None and v.size != n:
            raise self.error(f"{what}: expected {n} numbers, got {v.size}")
        return v

    def table(self, n_rows, n_cols, what) -> np.ndarray:
        out = np.empty((n_rows, n_cols))
        for r in range(n_rows):
            out[r] = self.floats(self.next(), n_cols, what)
        return out

    def done(self):
        if self.i != len(self.lines):
            raise self.error("trailing content after data", offset=1)


def _grid_header(lines, magic, grid, C, M):
    lines += [magic, f"version {VERSION}", f"rows {grid.rows}", f"cols {grid.cols}",
              f"channels {C}", f"components {M}", f"resolution_km {_f(grid.resolution_km)}",
              f"mask {encode_mask(grid.clear_mask)}"]


def _read_grid_header(cur: _Lines):
    if cur.int("version") != VERSION:
        raise cur.error("unsupported version")
    rows, cols = cur.int("rows"), cur.int("cols")
    C, M = cur.int("channels"), cur.int("components")
    res = cur.floats(cur.key("resolution_km"), 1, "resolution_km")[0]
    mask = decode_mask(cur.key("mask"), rows * cols, cur.i, cur.path)
    return BlockGrid(rows, cols, float(res), mask.reshape(rows, cols)), C, M


def _write(path, lines):
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def write_block(block: RadianceBlock, path) -> None:
    lines = []
    _grid_header(lines, "# bayesaod block", block.grid, block.n_channels, block.n_components)
    lines.append("radiance")
    lines += [" ".join(_f(x) for x in row) for row in block.radiance]
    _write(path, lines)


def read_block(path) -> RadianceBlock:
    cur = _Lines(path, "# bayesaod block")
    grid, C, M = _read_grid_header(cur)
    if cur.next() != "radiance":
        raise cur.error("expected 'radiance'")
    L = cur.table(grid.n_clear, C, "radiance")
    cur.done()
    if not np.all(np.isfinite(L)) or np.any(L <= 0):
        raise FormatError("radiances must be finite and positive", path=path)
    return RadianceBlock(grid, L, M)


def write_truth(grid: BlockGrid, truth, path) -> None:
    """Write a :class:`~bayesaod.simgen.SimTruth` for ``grid``."""
    C = np.asarray(truth.sigma).size
    M = truth.state.theta.shape[1]
    lines = []
    _grid_header(lines, "# bayesaod truth", grid, C, M)
    lines += [f"kappa {_f(truth.kappa)}",
              "alpha " + " ".join(_f(a) for a in truth.alpha),
              "sigma " + " ".join(_f(s) for s in truth.sigma),
              f"clipped {int(truth.n_clipped)}", "state"]
    lines += [" ".join(_f(x) for x in (t, *th)) for t, th in zip(truth.state.tau, truth.state.theta)]
    _write(path, lines)


def read_truth(path):
    """Return ``(grid, SimTruth)``; the truth's clean radiances are not stored."""
    from .simgen import SimTruth

    cur = _Lines(path, "# bayesaod truth")
    grid, C, M = _read_grid_header(cur)
    kappa = cur.floats(cur.key("kappa"), 1, "kappa")[0]
    alpha = cur.floats(cur.key("alpha"), M, "alpha")
    sigma = cur.floats(cur.key("sigma"), C, "sigma")
    clipped = cur.int("clipped", minimum=0)
    if cur.next() != "state":
        raise cur.error("expected 'state'")
    tab = cur.table(grid.n_clear, M + 1, "state")
    cur.done()
    state = AerosolState(tab[:, 0], tab[:, 1:])
    return grid, SimTruth(state, float(kappa), alpha, sigma, None, clipped)


SUMMARY_STATUS = ("ok", "cloud", "failed")


def summary_columns(M: int) -> list[str]:
    return (["tau_mean", "tau_sd", "tau_p5", "tau_p25", "tau_p50", "tau_p75", "tau_p95"]
            + [f"theta{m + 1}_mean" for m in range(M)] + [f"theta{m + 1}_sd" for m in range(M)])


def write_summary(grid: BlockGrid, summary, path, failed=None) -> None:
    """Write a per-cell posterior summary grid.

    ``failed`` is an optional boolean per clear pixel (or a single bool)
    marking retrievals whose chains did not converge.
    """
    M = summary.theta_mean.shape[1]
    P = grid.n_clear
    failed = np.broadcast_to(np.asarray(False if failed is None else failed, dtype=bool), (P,))
    cols = summary_columns(M)
    values = np.column_stack([summary.tau_mean, summary.tau_sd, summary.tau_pct.T,
                              summary.theta_mean, summary.theta_sd])
    lines = ["# bayesaod summary", f"version {VERSION}", f"rows {grid.rows}", f"cols {grid.cols}",
             f"components {M}", "columns row col status " + " ".join(cols)]
    idx = grid.clear_index
    nan_row = " ".join(["nan"] * len(cols))
    for cell in range(grid.n_cells):
        r, c = divmod(cell, grid.cols)
        p = idx[cell]
        if p < 0:
            lines.append(f"{r} {c} cloud {nan_row}")
        else:
            status = "failed" if failed[p] else "ok"
            lines.append(f"{r} {c} {status} " + " ".join(_f(v) for v in values[p]))
    _write(path, lines)


def read_summary(path) -> dict:
    """Return ``{"rows", "cols", "status" (R, K) str array, <column>: (R, K) float array}``."""
    cur = _Lines(path, "# bayesaod summary")
    if cur.int("version") != VERSION:
        raise cur.error("unsupported version")
    rows, cols, M = cur.int("rows"), cur.int("cols"), cur.int("components")
    names = cur.key("columns").split()
    expected = ["row", "col", "status"] + summary_columns(M)
    if names != expected:
        raise cur.error("unexpected column list")
    status = np.empty((rows, cols), dtype=object)
    data = np.empty((rows, cols, len(names) - 3))
    for cell in range(rows * cols):
        parts = cur.next().split(" ", 3)
        r, c = divmod(cell, cols)
        if len(parts) != 4 or parts[0] != str(r) or parts[1] != str(c):
            raise cur.error(f"expected cell {r} {c}")
        if parts[2] not in SUMMARY_STATUS:
            raise cur.error(f"bad status {parts[2]!r}")
        status[r, c] = parts[2]
        data[r, c] = cur.floats(parts[3], len(names) - 3, "summary")
    cur.done()
    out = {"rows": rows, "cols": cols, "status": status}
    for k, name in enumerate(names[3:]):
        out[name] = data[:, :, k]
    return out


def write_grid(field, path) -> None:
    a = np.asarray(field, dtype=float)
    if a.ndim != 2:
        raise ValueError("grid must be 2-D")
    lines = ["# bayesaod grid", f"rows {a.shape[0]}", f"cols {a.shape[1]}"]
    lines += [" ".join(_f(x) for x in row) for row in a]
    _write(path, lines)


def read_grid(path) -> np.ndarray:
    cur = _Lines(path, "# bayesaod grid")
    rows, cols = cur.int("rows"), cur.int("cols")
    a = cur.table(rows, cols, "grid")
    cur.done()
    return a


_RECORD_ARRAYS = ("tau", "theta", "kappa", "alpha", "sigma2", "sample_iterations", "log_posterior")


def write_record(record, path) -> None:
    """Store a chain record as a ``.npz`` archive with fixed member timestamps.

    The archive is byte-reproducible: members are written in a fixed order,
    uncompressed, with a constant date.
    """
    arrays = {k: np.asarray(getattr(record, k)) for k in _RECORD_ARRAYS}
    for k in sorted(record.accept_log):
        arrays[f"accept_{k}"] = np.asarray(record.accept_log[k])
        arrays[f"attempt_{k}"] = np.asarray(record.attempt_log[k])
    arrays["burn_in"] = np.asarray(record.burn_in, dtype=np.int64)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr) if arr.ndim else arr, allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_DATE)
            info.external_attr = 0o644 << 16
            zf.writestr(info, buf.getvalue())


def read_record(path):
    from .sampler import ChainRecord

    try:
        with np.load(path, allow_pickle=False) as z:
            data = {k: z[k] for k in z.files}
    except (OSError, ValueError, zipfile.BadZipFile) as exc:
        raise FormatError(f"cannot read chain record: {exc}", path=path) from None
    try:
        kernels = sorted(k[len("accept_"):] for k in data if k.startswith("accept_"))
        return ChainRecord(
            *(data[k] for k in _RECORD_ARRAYS[:5]),
            sample_iterations=data["sample_iterations"],
            log_posterior=data["log_posterior"],
            accept_log={k: data[f"accept_{k}"] for k in kernels},
            attempt_log={k: data[f"attempt_{k}"] for k in kernels},
            burn_in=int(data["burn_in"]),
        )
    except KeyError as exc:
        raise FormatError(f"chain record lacks {exc}", path=path) from None


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")
