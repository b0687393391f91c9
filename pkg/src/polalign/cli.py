"""Command-line front end and file formats.

Subcommands:

* ``simulate``     — Monte Carlo sweep over photon budget / signal fidelity,
                     written as CSV or JSON plus a reproducibility manifest;
* ``fit``          — power-law fit of a sweep file;
* ``align``        — tomography + compensation from a detection count file;
* ``timing-check`` — timing-vs-polarization verdict from linear-basis counts;
* ``rate``         — expected weak-coherent-pulse detection rate.

All randomness is seeded; rerunning any command with identical flags
produces byte-identical output files at any ``--jobs`` value.  Angles are
reported in degrees here (hardware convention) and stored in radians
everywhere inside the library.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .compensation import CompensationOptions, optimize
from .errors import PolalignError, SchemaError
from .montecarlo import (
    DetectionRateParams,
    SweepCell,
    expected_detection_rate,
    fit_power_law,
    run_sweep,
)
from .polarization import BB84_LABELS, stokes_vector
from .tomography import (
    COLUMN_LABELS,
    COUNT_SHAPE,
    ROW_LABELS,
    CountMatrix,
    Direction,
    reconstruct_forward,
    reconstruct_reversed,
)
from .timing import classify

COUNT_FILE_SCHEMA_VERSION = 1
MANIFEST_SCHEMA_VERSION = 1
SWEEP_CSV_HEADER = "direction,n,fs,bg_mean,bg_subtract,samples,failures,mean_qber,std_qber"


# ---------------------------------------------------------------------------
# count files


def save_count_file(path, cm: CountMatrix, metadata: dict | None = None):
    """Write a count matrix as self-describing JSON."""
    payload = {
        "schema_version": COUNT_FILE_SCHEMA_VERSION,
        "direction": cm.direction.value,
        "row_labels": list(ROW_LABELS[cm.direction]),
        "column_labels": list(COLUMN_LABELS[cm.direction]),
        "counts": [[int(round(x)) for x in row] for row in cm.counts],
    }
    if metadata:
        payload["metadata"] = metadata
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def _require(condition: bool, message: str):
    if not condition:
        raise SchemaError(message)


def load_count_file(path) -> tuple[CountMatrix, dict]:
    """Read and validate a count file; returns the matrix and its metadata.

    Labels may appear in any order in the file; rows and columns are
    reindexed to the canonical (H, V, D, A[, R, L]) order.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from None
    _require(isinstance(payload, dict), f"{path}: top level must be an object")
    _require(
        payload.get("schema_version") == COUNT_FILE_SCHEMA_VERSION,
        f"{path}: unsupported schema_version {payload.get('schema_version')!r}",
    )
    try:
        direction = Direction(payload.get("direction"))
    except ValueError:
        raise SchemaError(
            f"{path}: direction must be 'forward' or 'reversed', "
            f"got {payload.get('direction')!r}"
        ) from None

    rows = payload.get("row_labels")
    cols = payload.get("column_labels")
    n_rows, n_cols = COUNT_SHAPE[direction]
    for name, labels, expected in (("row", rows, ROW_LABELS[direction]),
                                   ("column", cols, COLUMN_LABELS[direction])):
        _require(isinstance(labels, list), f"{path}: {name}_labels must be a list")
        _require(
            len(labels) == len(set(labels)),
            f"{path}: repeated {name} label in {labels}",
        )
        _require(
            set(labels) == set(expected),
            f"{path}: {direction.value} {name}_labels must be {sorted(expected)}, "
            f"got {labels}",
        )

    counts = payload.get("counts")
    _require(isinstance(counts, list) and len(counts) == n_rows,
             f"{path}: counts must have {n_rows} rows for direction {direction.value}")
    matrix = np.zeros((n_rows, n_cols))
    for i, row in enumerate(counts):
        _require(isinstance(row, list) and len(row) == n_cols,
                 f"{path}: counts row {i} must have {n_cols} entries")
        for j, x in enumerate(row):
            ok = isinstance(x, int) or (isinstance(x, float) and float(x).is_integer())
            _require(ok and not isinstance(x, bool) and x >= 0,
                     f"{path}: counts[{i}][{j}] = {x!r} is not a nonnegative integer")
            matrix[i, j] = float(x)

    # reindex to canonical label order
    row_order = [rows.index(lab) for lab in ROW_LABELS[direction]]
    col_order = [cols.index(lab) for lab in COLUMN_LABELS[direction]]
    matrix = matrix[np.ix_(row_order, col_order)]
    metadata = payload.get("metadata") or {}
    _require(isinstance(metadata, dict), f"{path}: metadata must be an object")
    return CountMatrix(direction, matrix), metadata


# ---------------------------------------------------------------------------
# output formatting


def _fmt(x) -> str:
    """Floats at nine significant digits; empty for missing values."""
    if x is None:
        return ""
    return f"{x:.9g}"


def _json_float(x):
    return None if x is None else float(f"{x:.9g}")


def _cell_record(cell: SweepCell) -> dict:
    return {
        "direction": cell.direction.value,
        "n": cell.n_detected,
        "fs": _json_float(cell.signal_fidelity),
        "bg_mean": _json_float(cell.background_mean),
        "bg_subtract": cell.subtract_background,
        "samples": cell.samples,
        "failures": cell.failures,
        "mean_qber": _json_float(cell.mean_qber),
        "std_qber": _json_float(cell.std_qber),
    }


def _write_sweep_csv(path, cells):
    lines = [SWEEP_CSV_HEADER]
    for c in cells:
        lines.append(
            ",".join(
                [
                    c.direction.value,
                    str(c.n_detected),
                    _fmt(c.signal_fidelity),
                    _fmt(c.background_mean),
                    "true" if c.subtract_background else "false",
                    str(c.samples),
                    str(c.failures),
                    _fmt(c.mean_qber),
                    _fmt(c.std_qber),
                ]
            )
        )
    _write_text(path, "\n".join(lines) + "\n")


def _write_sweep_json(path, cells):
    payload = {"schema_version": 1, "cells": [_cell_record(c) for c in cells]}
    _write_text(path, json.dumps(payload, indent=1) + "\n")


def _write_text(path, text: str):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _emit(text: str, out_path):
    if out_path:
        _write_text(out_path, text if text.endswith("\n") else text + "\n")
    else:
        print(text, end="" if text.endswith("\n") else "\n")


def read_sweep_file(path) -> list[SweepCell]:
    """Parse a sweep written by ``simulate`` (CSV or JSON)."""
    text = open(path, "r", encoding="utf-8").read()
    cells = []
    if path.endswith(".json") or text.lstrip().startswith("{"):
        payload = json.loads(text)
        records = payload["cells"]
        for r in records:
            cells.append(
                SweepCell(
                    direction=Direction(r["direction"]),
                    n_detected=int(r["n"]),
                    signal_fidelity=float(r["fs"]),
                    background_mean=float(r["bg_mean"]),
                    subtract_background=bool(r["bg_subtract"]),
                    samples=int(r["samples"]),
                    failures=int(r["failures"]),
                    mean_qber=float(r["mean_qber"]),
                    std_qber=None if r["std_qber"] is None else float(r["std_qber"]),
                )
            )
        return cells
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != SWEEP_CSV_HEADER:
        raise SchemaError(f"{path}: missing sweep CSV header")
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 9:
            raise SchemaError(f"{path}: malformed sweep row {ln!r}")
        cells.append(
            SweepCell(
                direction=Direction(parts[0]),
                n_detected=int(parts[1]),
                signal_fidelity=float(parts[2]),
                background_mean=float(parts[3]),
                subtract_background=parts[4] == "true",
                samples=int(parts[5]),
                failures=int(parts[6]),
                mean_qber=float(parts[7]),
                std_qber=float(parts[8]) if parts[8] else None,
            )
        )
    return cells


# ---------------------------------------------------------------------------
# argument plumbing


def _parse_list(parser, text, flag, converter, label):
    values = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        try:
            values.append(converter(token))
        except ValueError:
            parser.error(f"{flag}: {token!r} is not a valid {label}")
    if not values:
        parser.error(f"{flag}: expected at least one {label}")
    return values


def _default_jobs() -> int:
    return max(1, os.cpu_count() or 1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polalign",
        description="Polarization-frame alignment toolkit for BB84 QKD.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="Monte Carlo sweep of the alignment protocol")
    sim.add_argument("--direction", choices=["forward", "reversed"])
    sim.add_argument("--n", help="comma-separated detected-photon budgets, e.g. 400,1600")
    sim.add_argument("--fs", help="comma-separated signal fidelities in [0.5, 1]")
    sim.add_argument("--bg", default="0", help="comma-separated mean background counts per detector")
    sim.add_argument("--bg-subtract", action="store_true", help="subtract the mean background")
    sim.add_argument("--samples", type=int, help="Monte Carlo samples per grid cell")
    sim.add_argument("--seed", type=int, help="master seed (nonnegative integer)")
    sim.add_argument("--jobs", type=int, default=_default_jobs(), help="worker processes")
    sim.add_argument("--format", choices=["csv", "json"], default="csv")
    sim.add_argument("--out", help="output file path")
    sim.add_argument("--from-manifest", help="re-run the configuration stored in a manifest")
    sim.set_defaults(handler=cmd_simulate)

    fit = sub.add_parser("fit", help="power-law fit of a sweep file")
    fit.add_argument("--in", dest="input", required=True, help="sweep CSV/JSON from simulate")
    fit.add_argument("--direction", choices=["forward", "reversed"])
    fit.add_argument("--min-n", type=int)
    fit.add_argument("--max-n", type=int)
    fit.add_argument("--min-fs", type=float)
    fit.add_argument("--max-fs", type=float)
    fit.add_argument("--format", choices=["text", "json"], default="text")
    fit.add_argument("--out")
    fit.set_defaults(handler=cmd_fit)

    align = sub.add_parser("align", help="reconstruct and optimize from a count file")
    align.add_argument("--counts", required=True, help="detection count file (JSON)")
    align.add_argument("--restarts", type=int, default=10)
    align.add_argument("--seed", type=int, default=0)
    align.add_argument("--format", choices=["text", "json"], default="text")
    align.add_argument("--out")
    align.set_defaults(handler=cmd_align)

    timing = sub.add_parser("timing-check", help="timing vs polarization misalignment verdict")
    timing.add_argument("--counts", required=True, help="detection count file (JSON)")
    timing.add_argument("--confidence", type=float, default=0.99)
    timing.add_argument("--format", choices=["text", "json"], default="text")
    timing.add_argument("--out")
    timing.set_defaults(handler=cmd_timing_check)

    rate = sub.add_parser("rate", help="expected WCP detection rate")
    rate.add_argument("--pulse-rate", type=float, required=True, help="source pulse rate in Hz")
    rate.add_argument("--mu", type=float, required=True, help="mean photon number per pulse")
    rate.add_argument("--loss-db", type=float, help="channel loss in dB")
    rate.add_argument("--eta", type=float, help="channel transmission in [0, 1]")
    rate.add_argument("--y0", type=float, default=0.0, help="vacuum yield per pulse")
    rate.add_argument("--format", choices=["text", "json"], default="text")
    rate.set_defaults(handler=cmd_rate)
    return parser


# ---------------------------------------------------------------------------
# commands


def _simulate_config_from_args(parser, args) -> dict:
    if args.from_manifest:
        try:
            with open(args.from_manifest, "r", encoding="utf-8") as fh:
                manifest = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"--from-manifest: cannot read {args.from_manifest}: {exc}")
        config = manifest.get("config")
        if not isinstance(config, dict):
            parser.error(f"--from-manifest: {args.from_manifest} has no config block")
        if args.out:
            config = dict(config, out=args.out)
        return config

    missing = [flag for flag, value in (("--direction", args.direction), ("--n", args.n),
                                        ("--fs", args.fs), ("--samples", args.samples),
                                        ("--seed", args.seed), ("--out", args.out))
               if value is None]
    if missing:
        parser.error(f"missing required flags: {', '.join(missing)}")

    n_values = _parse_list(parser, args.n, "--n", int, "integer")
    fs_values = _parse_list(parser, args.fs, "--fs", float, "number")
    bg_values = _parse_list(parser, args.bg, "--bg", float, "number")
    minimum_n = 4 if args.direction == "forward" else 6
    for n in n_values:
        if n < minimum_n:
            parser.error(f"--n: {n} is below the {args.direction} minimum of {minimum_n}")
    for fs in fs_values:
        if not 0.5 <= fs <= 1.0:
            parser.error(f"--fs: {fs} outside the signal-fidelity range [0.5, 1]")
    for bg in bg_values:
        if bg < 0:
            parser.error(f"--bg: {bg} must be >= 0")
    if args.samples < 1:
        parser.error(f"--samples: {args.samples} must be >= 1")
    if args.seed < 0:
        parser.error(f"--seed: {args.seed} must be >= 0")
    return {
        "direction": args.direction,
        "n": n_values,
        "fs": fs_values,
        "bg": bg_values,
        "bg_subtract": bool(args.bg_subtract),
        "samples": args.samples,
        "seed": args.seed,
        "format": args.format,
        "out": args.out,
    }


def cmd_simulate(parser, args) -> int:
    config = _simulate_config_from_args(parser, args)
    started = time.monotonic()
    sweep = run_sweep(
        directions=[Direction(config["direction"])],
        n_values=config["n"],
        fs_values=config["fs"],
        background_means=config["bg"],
        subtract_background=config["bg_subtract"],
        samples=config["samples"],
        master_seed=config["seed"],
        jobs=max(1, args.jobs),
    )
    out = config["out"]
    if config["format"] == "json":
        _write_sweep_json(out, sweep.cells)
    else:
        _write_sweep_csv(out, sweep.cells)
    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "tool": "polalign",
        "version": __version__,
        "command": "simulate",
        "config": config,
        "wall_seconds": round(time.monotonic() - started, 3),
    }
    with open(out + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    print(f"wrote {len(sweep.cells)} cells to {out}")
    return 0


def cmd_fit(parser, args) -> int:
    cells = read_sweep_file(args.input)
    criteria = []
    if args.direction is not None:
        criteria.append(("direction", args.direction))
    if args.min_n is not None:
        criteria.append(("min-n", args.min_n))
    if args.max_n is not None:
        criteria.append(("max-n", args.max_n))
    if args.min_fs is not None:
        criteria.append(("min-fs", args.min_fs))
    if args.max_fs is not None:
        criteria.append(("max-fs", args.max_fs))

    def keep(c: SweepCell) -> bool:
        if args.direction is not None and c.direction.value != args.direction:
            return False
        if args.min_n is not None and c.n_detected < args.min_n:
            return False
        if args.max_n is not None and c.n_detected > args.max_n:
            return False
        if args.min_fs is not None and c.signal_fidelity < args.min_fs:
            return False
        if args.max_fs is not None and c.signal_fidelity > args.max_fs:
            return False
        return True

    selected = [c for c in cells if keep(c)]
    fit = fit_power_law(selected)
    selection = ", ".join(f"{k}={v}" for k, v in criteria) or "all cells"
    if args.format == "json":
        payload = {
            "alpha": fit.alpha,
            "beta": fit.beta,
            "gamma": fit.gamma,
            "r_squared": fit.r_squared,
            "cells_used": len(selected),
            "selection": selection,
        }
        _emit(json.dumps(payload, indent=1), args.out)
    else:
        lines = [
            f"model: mean_qber = alpha * (2*fs - 1)^beta * n^gamma",
            f"alpha     = {fit.alpha:.6f}",
            f"beta      = {fit.beta:.6f}",
            f"gamma     = {fit.gamma:.6f}",
            f"r_squared = {fit.r_squared:.6f}",
            f"cells used: {len(selected)} ({selection})",
        ]
        _emit("\n".join(lines), args.out)
    return 0


def cmd_align(parser, args) -> int:
    cm, _metadata = load_count_file(args.counts)
    if args.restarts < 1:
        parser.error(f"--restarts: {args.restarts} must be >= 1")
    if cm.direction is Direction.FORWARD:
        recon = reconstruct_forward(cm)
    else:
        recon = reconstruct_reversed(cm)
    opts = CompensationOptions(restarts=args.restarts)
    result = optimize(recon, opts=opts, rng=np.random.default_rng(args.seed))
    angles_deg = [math.degrees(t) for t in result.angles.as_tuple()]
    stokes = {
        label: [round(x, 9) for x in stokes_vector(state)]
        for label, state in zip(BB84_LABELS, recon.states)
    }
    if args.format == "json":
        payload = {
            "direction": cm.direction.value,
            "total_counts": cm.total,
            "reconstructed_stokes": stokes,
            "angles_deg": [round(a, 9) for a in angles_deg],
            "predicted_qber": result.predicted_qber,
            "cost": result.cost,
            "converged": result.converged,
            "evaluations_used": result.evaluations_used,
        }
        _emit(json.dumps(payload, indent=1), args.out)
    else:
        lines = [f"direction: {cm.direction.value}", f"total counts: {cm.total:g}"]
        lines.append("reconstructed states (Stokes S1, S2, S3):")
        for label in BB84_LABELS:
            s = stokes[label]
            lines.append(f"  {label}: ({s[0]: .6f}, {s[1]: .6f}, {s[2]: .6f})")
        lines.append(
            "wave-plate angles (deg): "
            + ", ".join(f"{a:.4f}" for a in angles_deg)
        )
        lines.append(f"predicted residual QBER: {result.predicted_qber * 100:.4f}%")
        lines.append(
            f"converged: {'yes' if result.converged else 'no'} "
            f"({result.evaluations_used} cost evaluations)"
        )
        _emit("\n".join(lines), args.out)
    return 0


def cmd_timing_check(parser, args) -> int:
    if not 0.0 < args.confidence < 1.0:
        parser.error(f"--confidence: {args.confidence} must be in (0, 1)")
    cm, _metadata = load_count_file(args.counts)
    rows = ROW_LABELS[cm.direction]
    cols = COLUMN_LABELS[cm.direction]
    row_idx = [rows.index(lab) for lab in BB84_LABELS]
    col_idx = [cols.index(lab) for lab in BB84_LABELS]
    linear = cm.counts[np.ix_(row_idx, col_idx)]
    verdict = classify(linear, confidence=args.confidence)
    if args.format == "json":
        payload = {
            "verdict": verdict.status.value,
            "max_conditional_frequency": verdict.max_conditional_frequency,
            "input": verdict.input_label,
            "outcome": verdict.outcome_label,
            "total_counts": verdict.total_counts,
            "ci_low": verdict.ci_low,
            "ci_high": verdict.ci_high,
            "confidence": verdict.confidence,
        }
        _emit(json.dumps(payload, indent=1), args.out)
    else:
        lines = [
            f"verdict: {verdict.status.value}",
            f"max conditional frequency: {verdict.max_conditional_frequency:.4f} "
            f"at (input {verdict.input_label}, outcome {verdict.outcome_label})",
            f"{verdict.confidence:.0%} interval: "
            f"[{verdict.ci_low:.4f}, {verdict.ci_high:.4f}]"
            f" (timing model: 0.25, polarization bound: 0.375)",
            f"counts used: {verdict.total_counts}",
        ]
        _emit("\n".join(lines), args.out)
    return 0


def cmd_rate(parser, args) -> int:
    if args.pulse_rate < 0:
        parser.error(f"--pulse-rate: {args.pulse_rate} must be >= 0")
    if args.mu < 0:
        parser.error(f"--mu: {args.mu} must be >= 0")
    if not 0.0 <= args.y0 <= 1.0:
        parser.error(f"--y0: {args.y0} must be in [0, 1]")
    if (args.loss_db is None) == (args.eta is None):
        parser.error("specify exactly one of --loss-db or --eta")
    if args.loss_db is not None:
        if args.loss_db < 0:
            parser.error(f"--loss-db: {args.loss_db} must be >= 0")
        eta = 10.0 ** (-args.loss_db / 10.0)
    else:
        if not 0.0 <= args.eta <= 1.0:
            parser.error(f"--eta: {args.eta} must be in [0, 1]")
        eta = args.eta
    params = DetectionRateParams(
        pulse_rate_hz=args.pulse_rate,
        mean_photon_number=args.mu,
        channel_transmission=eta,
        vacuum_yield=args.y0,
    )
    rate = expected_detection_rate(params)
    seconds_400 = 400.0 / rate if rate > 0 else math.inf
    if args.format == "json":
        payload = {
            "rate_hz": rate,
            "eta": eta,
            "seconds_to_400_detections": None if math.isinf(seconds_400) else seconds_400,
        }
        print(json.dumps(payload, indent=1))
    else:
        print(f"expected detection rate: {rate:.6g} Hz")
        if math.isinf(seconds_400):
            print("time to 400 detections: never (zero rate)")
        else:
            print(f"time to 400 detections: {seconds_400:.6g} s")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(parser, args)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PolalignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
