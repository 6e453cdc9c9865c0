"""Command-line interface: ``bayesaod <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 I/O or parse error,
4 convergence warning (outputs are still written).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
import warnings
from importlib import metadata
from pathlib import Path

import numpy as np

from . import formats
from .diagnostics import diagnose, summarize
from .estimator import DEFAULT_TABLE_NODES, _auto_patches, _pool
from .exceptions import ConfigurationError, ConvergenceWarning, FormatError
from .forward import SurrogateModel, TableModel, build_table_from_surrogate, default_surrogate_params, read_table, write_table
from .lattice import build_patch_layout
from .parallel import RoundConfig, run_parallel
from .sampler import ChainConfig, overdispersed_inits, run_chain, run_chains
from .simgen import SimConfig, simulate_block
from .validation import aggregate, compare_fields, match_overpass, parse_timestamp, read_ground_records, sort_records

__all__ = ["main", "build_parser", "cmd_simulate", "cmd_retrieve", "cmd_diagnose", "cmd_aggregate",
           "cmd_compare", "cmd_validate", "CONFIG_ENV"]

logger = logging.getLogger("bayesaod")

CONFIG_ENV = "BAYESAOD_CONFIG"
EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_CONVERGENCE = 0, 2, 3, 4


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:  # pragma: no cover - running from a source tree
        return "0+unknown"


def _jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (tuple, list)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _write_manifest(out: Path, command: str, inputs: dict, outputs: dict, settings: dict, seed, timings: dict):
    manifest = {
        "subcommand": command,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": {k: str(v) for k, v in outputs.items()},
        "settings": _jsonable(settings),
        "seed": seed,
        "tool_version": _version(),
        "timings_seconds": timings,
    }
    formats.write_json(manifest, out / "manifest.json")


def _load_config(path) -> dict:
    if path is None:
        path = os.environ.get(CONFIG_ENV)
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", line=exc.lineno, path=path) from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be an object")
    return data


_SIM_KEYS = {f.name for f in dataclasses.fields(SimConfig)} - {"clear_mask"}


def sim_config_from(data: dict) -> SimConfig:
    """Build a SimConfig from a config mapping (its ``simulate`` section or the top level)."""
    section = data.get("simulate", data)
    kwargs = {}
    for key, value in section.items():
        if key == "clear_mask":
            kwargs[key] = np.asarray(value, dtype=bool)
        elif key in _SIM_KEYS:
            kwargs[key] = tuple(value) if key == "alpha" else value
        elif key not in ("retrieve",):
            raise ConfigurationError(f"unknown config key {key!r}")
    try:
        return SimConfig(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"bad config value: {exc}") from None


def cmd_simulate(args) -> int:
    """Simulate a block; writes block.txt, truth.txt and manifest.json."""
    t0 = time.perf_counter()
    cfg = sim_config_from(_load_config(args.config))
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    fm = _forward_model(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        block, truth = simulate_block(cfg, fm)
    formats.write_block(block, out / "block.txt")
    formats.write_truth(block.grid, truth, out / "truth.txt")
    formats.write_grid(block.grid.to_grid(truth.state.tau), out / "truth_tau.txt")
    _write_manifest(out, "simulate", {"config": args.config or os.environ.get(CONFIG_ENV, "")},
                    {"block": out / "block.txt", "truth": out / "truth.txt", "truth_tau": out / "truth_tau.txt"},
                    {"sim_config": dataclasses.replace(cfg, clear_mask=None),
                     "clear_mask_rle": formats.encode_mask(block.grid.clear_mask),
                     "forward_model": _fm_name(args)},
                    cfg.seed, {"total": time.perf_counter() - t0})
    print(f"wrote {out / 'block.txt'} ({block.grid.rows}x{block.grid.cols}, {block.n_pixels} clear)")
    return EXIT_OK


def _fm_name(args) -> str:
    return f"table:{args.table}" if getattr(args, "table", None) else "surrogate"


def _forward_model(args):
    if getattr(args, "table", None):
        return TableModel(read_table(args.table))
    return SurrogateModel()


def cmd_retrieve(args) -> int:
    """Retrieve AOD from a block file; writes summary, grids, chain record, diagnostics, manifest."""
    t0 = time.perf_counter()
    block = formats.read_block(args.block)
    fm = _forward_model(args)
    data = _load_config(args.config).get("retrieve", {})
    settings = {k: tuple(v) if isinstance(v, list) else v
                for k, v in data.items() if k in {f.name for f in dataclasses.fields(ChainConfig)}}
    unknown = set(data) - set(settings) - {"chains", "parallel", "workers", "rhat_threshold"}
    if unknown:
        raise ConfigurationError(f"unknown config key {sorted(unknown)[0]!r} in 'retrieve'")
    for flag, key in (("iterations", "iterations"), ("burn_in", "burn_in"), ("seed", "seed"),
                      ("thinning", "thinning")):
        if getattr(args, flag) is not None:
            settings[key] = getattr(args, flag)
    config = ChainConfig(**settings)
    n_chains = args.chains if args.chains is not None else int(data.get("chains", 1))
    parallel = args.parallel or bool(data.get("parallel", False))
    workers = args.workers if args.workers is not None else int(data.get("workers", 1))
    threshold = args.rhat_threshold if args.rhat_threshold is not None else float(data.get("rhat_threshold", 1.1))
    if n_chains < 1:
        raise ConfigurationError("--chains must be >= 1")
    if config.n_samples < 1:
        raise ConfigurationError("the run retains no samples; raise --iterations or lower --burn-in")

    t1 = time.perf_counter()
    round_config = None
    if parallel:
        layout = build_patch_layout(block.grid, *_auto_patches(block.grid))
        round_config = RoundConfig(workers=workers)
        if n_chains == 1:
            records = [run_parallel(block, fm, layout, round_config, config)]
        else:
            seeds = np.random.SeedSequence(config.seed).generate_state(n_chains)
            inits = overdispersed_inits(block, fm, n_chains, config.kappa_init)
            records = [run_parallel(block, fm, layout, round_config,
                                    dataclasses.replace(config, seed=int(s)), init)
                       for s, init in zip(seeds, inits)]
    elif n_chains == 1:
        records = [run_chain(block, fm, config)]
    else:
        records = run_chains(block, fm, config, n_chains, workers=workers)
    t2 = time.perf_counter()

    summary = summarize(_pool(records))
    report = diagnose(records, rhat_threshold=threshold)
    failed = report.converged is False
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = block.grid
    formats.write_summary(grid, summary, out / "summary.txt", failed=failed)
    formats.write_grid(grid.to_grid(summary.tau_mean), out / "tau_mean.txt")
    formats.write_grid(grid.to_grid(summary.tau_sd), out / "tau_sd.txt")
    formats.write_record(records[0], out / "chain.npz")
    for i, r in enumerate(records[1:], start=1):
        formats.write_record(r, out / f"chain{i}.npz")
    (out / "diagnostics.txt").write_text(report.to_text())
    _write_manifest(out, "retrieve", {"block": args.block, "table": args.table or ""},
                    {"summary": out / "summary.txt", "tau_mean": out / "tau_mean.txt",
                     "chain": out / "chain.npz", "diagnostics": out / "diagnostics.txt"},
                    {"chain_config": config, "round_config": round_config, "chains": n_chains,
                     "parallel": parallel, "workers": workers, "rhat_threshold": threshold,
                     "forward_model": _fm_name(args)},
                    config.seed, {"sampling": t2 - t1, "total": time.perf_counter() - t0})
    print(f"posterior mean AOD {np.mean(summary.tau_mean):.4f}, kappa {summary.kappa_mean:.2f}, "
          f"rhat {report.rhat if report.rhat is not None else 'n/a'}")
    if failed:
        warnings.warn(f"R-hat {report.rhat:.3f} is not below {threshold}; pixels marked failed",
                      ConvergenceWarning, stacklevel=1)
        return EXIT_CONVERGENCE
    return EXIT_OK


def cmd_diagnose(args) -> int:
    """Diagnostics of stored chain records."""
    records = [formats.read_record(p) for p in args.records]
    report = diagnose(records, max_lag=args.max_lag, rhat_threshold=args.rhat_threshold)
    text = report.to_text()
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_CONVERGENCE if report.converged is False else EXIT_OK


def _read_field(path):
    """Read a grid file, or the ``tau_mean`` column of a summary file."""
    head = Path(path).read_text(encoding="ascii", errors="replace").split("\n", 1)[0]
    if head == "# bayesaod summary":
        return formats.read_summary(path)["tau_mean"]
    return formats.read_grid(path)


def cmd_aggregate(args) -> int:
    coarse = aggregate(_read_field(args.field), args.factor, args.min_clear_fraction)
    formats.write_grid(coarse, args.out)
    print(f"wrote {args.out} ({coarse.shape[0]}x{coarse.shape[1]})")
    return EXIT_OK


def cmd_compare(args) -> int:
    a, b = _read_field(args.a), _read_field(args.b)
    if a.shape != b.shape:
        raise ConfigurationError(f"dimension mismatch: {args.a} is {a.shape}, {args.b} is {b.shape}")
    report = compare_fields(a, b)
    text = report.to_text()
    if args.out:
        Path(args.out).write_text(text)
        np.savetxt(Path(args.out).with_suffix(".pairs.csv"), report.pairs, delimiter=",",
                   header="a,b", comments="", fmt="%r")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_validate(args) -> int:
    """Pair a station's overpass-matched AOD with the posterior mean of its pixel."""
    summ = formats.read_summary(args.summary)
    r, c = args.pixel
    if not (0 <= r < summ["rows"] and 0 <= c < summ["cols"]):
        raise ConfigurationError(f"pixel ({r}, {c}) outside the {summ['rows']}x{summ['cols']} grid")
    records = sort_records(read_ground_records(args.stations))
    match = match_overpass(records, parse_timestamp(args.overpass), args.window, args.wavelength)
    retrieved = summ["tau_mean"][r, c]
    lines = ["# bayesaod validation", f"pixel = {r} {c}", f"status = {summ['status'][r, c]}",
             f"retrieved = {'absent' if np.isnan(retrieved) else repr(float(retrieved))}",
             f"station = {'absent' if match.mean_aod is None else repr(match.mean_aod)}",
             f"n_records = {match.n_records}",
             f"gap_seconds = {'absent' if match.gap_seconds is None else repr(match.gap_seconds)}"]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_table(args) -> int:
    """Tabulate the default surrogate on a uniform AOD grid."""
    nodes = np.linspace(0.0, 3.0, args.nodes) if args.nodes else DEFAULT_TABLE_NODES
    write_table(build_table_from_surrogate(default_surrogate_params(), nodes), args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _pixel(text):
    try:
        r, c = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected ROW,COL") from None
    return r, c


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bayesaod", description="Bayesian spatial AOD retrieval.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a radiance block and its true state")
    s.add_argument("--config", help=f"JSON config (default: ${CONFIG_ENV})")
    s.add_argument("--seed", type=int)
    s.add_argument("--table", help="radiance table file (default: analytic surrogate)")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("retrieve", help="run the sampler on a block file")
    s.add_argument("block")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--config", help=f"JSON config with a 'retrieve' section (default: ${CONFIG_ENV})")
    s.add_argument("--parallel", action="store_true", help="patch-parallel sampler")
    s.add_argument("--chains", type=int)
    s.add_argument("--iterations", type=int)
    s.add_argument("--burn-in", dest="burn_in", type=int)
    s.add_argument("--thinning", type=int)
    s.add_argument("--seed", type=int)
    fm = s.add_mutually_exclusive_group()
    fm.add_argument("--table", help="radiance table file")
    fm.add_argument("--surrogate", action="store_true", help="analytic surrogate (default)")
    s.add_argument("--workers", type=int, help="thread cap for chains or patches")
    s.add_argument("--rhat-threshold", dest="rhat_threshold", type=float)
    s.set_defaults(func=cmd_retrieve)

    s = sub.add_parser("diagnose", help="diagnostics of stored chain records")
    s.add_argument("records", nargs="+")
    s.add_argument("--max-lag", type=int, default=20)
    s.add_argument("--rhat-threshold", dest="rhat_threshold", type=float, default=1.1)
    s.add_argument("--out")
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("aggregate", help="aggregate a fine grid to coarse resolution")
    s.add_argument("field")
    s.add_argument("--factor", type=int, default=4)
    s.add_argument("--min-clear-fraction", type=float, default=1.0 / 16.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_aggregate)

    s = sub.add_parser("compare", help="RMS and correlation of two grids")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--out")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("validate", help="match station records to a retrieved pixel")
    s.add_argument("summary")
    s.add_argument("stations")
    s.add_argument("--pixel", type=_pixel, required=True, help="ROW,COL of the station's pixel")
    s.add_argument("--overpass", required=True, help="ISO-8601 UTC overpass time")
    s.add_argument("--window", type=float, default=3600.0, help="window width in seconds (centered)")
    s.add_argument("--wavelength", type=float, default=558.0, help="target wavelength in nm")
    s.add_argument("--out")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("table", help="write a radiance table tabulating the surrogate")
    s.add_argument("--nodes", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_table)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
