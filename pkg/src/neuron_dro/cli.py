"""Command line entry point: ``neuron-dro generate|train|verify|report``.

Exit codes: 0 ok, 1 verification failure, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .activations import from_dict
from .datagen import (DataError, DatasetMeta, GeneratorConfig, TruncationParams,
                      compute_truncation_level, generate, read_csv, truncate_labels, write_csv,
                      write_meta)
from .diagnostics import check_ambiguity_radius, estimate_sharpness, final_bounds_report
from .driver import (AlgoConfig, NumericalError, calibrate, initial_distance, make_reference, run,
                     theoretical_iteration_budget, zero_test)
from .empirical import RegularizedObjective, risk_closed_form

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3
FORMATS = ("csv", "json", "svg")
ALGO_REQUIRED = ("W", "epsilon")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    generator: GeneratorConfig | None
    activation: dict
    algo: dict
    output_dir: str = "out"
    formats: list = field(default_factory=lambda: ["csv", "json"])
    sharpness_trials: int = 1000

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {"generator", "activation", "algo", "output_dir", "formats", "sharpness_trials"}
        extra = set(raw) - known
        if extra:
            raise ConfigError(f"{sorted(extra)[0]}: unknown field")
        gen = None
        if "generator" in raw:
            try:
                gen = GeneratorConfig.from_dict(raw["generator"])
            except KeyError as exc:
                raise ConfigError(f"generator.{exc.args[0]}: missing field") from None
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"generator.{exc}") from None
        act = raw.get("activation", {"kind": "relu"})
        try:
            from_dict(act)
        except KeyError as exc:
            raise ConfigError(f"activation.{exc.args[0]}: missing field") from None
        except ValueError as exc:
            raise ConfigError(f"activation.kind: {exc}") from None
        if "algo" not in raw:
            raise ConfigError("algo: missing field")
        algo = dict(raw["algo"])
        for req in ALGO_REQUIRED:
            if req not in algo:
                raise ConfigError(f"algo.{req}: missing field")
        unknown = set(algo) - set(AlgoConfig.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"algo.{sorted(unknown)[0]}: unknown field")
        formats = raw.get("formats", ["csv", "json"])
        if not formats or any(f not in FORMATS for f in formats):
            raise ConfigError(f"formats: must be a nonempty subset of {list(FORMATS)}")
        trials = raw.get("sharpness_trials", 1000)
        if not (isinstance(trials, int) and trials >= 100):
            raise ConfigError("sharpness_trials: must be an integer >= 100")
        return cls(gen, act, algo, str(raw.get("output_dir", "out")), list(formats), trials)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be an object")
    return ExperimentConfig.from_dict(raw)


def _meta_path(dataset_path: Path) -> Path:
    return dataset_path.with_suffix(".meta.json")


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)


def _out_dir(args, cfg: ExperimentConfig | None) -> Path:
    out = Path(args.out if args.out else (cfg.output_dir if cfg else "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _formats(args, cfg: ExperimentConfig | None) -> list:
    return list(dict.fromkeys(args.format)) if args.format else (cfg.formats if cfg else ["csv"])


def _threads() -> int:
    raw = os.environ.get("NEURON_DRO_THREADS")
    if raw is None:
        return min(len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else 1, 6)
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError("NEURON_DRO_THREADS: must be a positive integer") from None
    if n < 1:
        raise ConfigError("NEURON_DRO_THREADS: must be a positive integer")
    return n


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    if cfg.generator is None:
        raise ConfigError("generator: missing field")
    gen = cfg.generator
    if args.seed is not None:
        gen = GeneratorConfig.from_dict({**gen.to_dict(), "seed": args.seed})
    ds = generate(gen, from_dict(cfg.activation))
    out = _out_dir(args, cfg)
    path = out / "dataset.csv"
    write_csv(ds, path)
    write_meta(DatasetMeta(gen.seed, list(gen.w_star), ds.S, ds.d, ds.n, gen.to_dict()),
               _meta_path(path))
    print(f"wrote {path} ({ds.n} samples, d={ds.d}, S={ds.S:.6g})")
    return EXIT_OK


def _read_meta(path: Path):
    mp = _meta_path(path)
    if not mp.exists():
        return None
    try:
        with open(mp) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{mp}: line {exc.lineno}: invalid JSON") from None


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args.config)
    act = from_dict(cfg.activation)
    out = _out_dir(args, cfg)
    data_path = Path(args.dataset) if args.dataset else out / "dataset.csv"
    if not data_path.exists():
        raise DataError(f"{data_path}: no such dataset")
    ds = read_csv(data_path)
    meta = _read_meta(data_path)
    w_star = None
    if meta is not None and meta.get("w_star") is not None:
        w_star = np.asarray(meta["w_star"], dtype=float)
        if w_star.size != ds.d:
            raise DataError(f"{data_path}: dimension {ds.d} does not match w_star of length {w_star.size}")
    if cfg.generator is not None and cfg.generator.d != ds.d:
        raise DataError(f"{data_path}: dimension {ds.d} does not match generator.d = {cfg.generator.d}")

    algo = dict(cfg.algo)
    if args.seed is not None:
        algo["seed"] = args.seed
    nu, c1 = algo.pop("nu", None), algo.pop("c1", None)
    W, eps = algo["W"], algo["epsilon"]
    B, C_M = algo.get("B", 1.0), algo.get("C_M", 1.0)
    try:
        M = compute_truncation_level(TruncationParams(W=W, epsilon=eps, beta=act.beta, B=B, C_M=C_M))
    except ValueError as exc:
        raise ConfigError(f"algo.epsilon: {exc}") from None
    ds = truncate_labels(ds, M)

    cal = None
    if nu is None:
        if w_star is None:
            raise ConfigError("algo.nu: required when the dataset carries no w_star metadata")
        cal = calibrate(ds, act, w_star, eps, B=B, trials=cfg.sharpness_trials,
                        seed=algo.get("seed", 0), c1=c1)
        nu, c1 = cal.nu, cal.c1
        algo.setdefault("c1_source", "estimated" if cal.sharpness is not None else "supplied")
    elif c1 is None:
        if w_star is None:
            raise ConfigError("algo.c1: required when the dataset carries no w_star metadata")
        rep = estimate_sharpness(ds.ref_weights, ds, w_star, act, cfg.sharpness_trials, eps, B,
                                 algo.get("seed", 0))
        c1 = rep.c1_hat
        algo.setdefault("c1_source", "estimated")
    try:
        acfg = AlgoConfig(nu=nu, c1=c1, **algo)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"algo.{exc}") from None

    ref = make_reference(ds, act, nu, w_star, B) if w_star is not None else None
    res = run(ds, act, acfg, ref)
    w_final = zero_test(ds, act, acfg, res.w_hat)
    obj = RegularizedObjective(ds, act, nu)

    result = {
        "version": __version__,
        "w_hat": w_final.tolist(),
        "w_hat_run": res.w_hat.tolist(),
        "zero_test_chose_origin": bool(np.all(w_final == 0) and np.any(res.w_hat != 0)),
        "risk": risk_closed_form(w_final, obj)[0],
        "iterations": res.iterations,
        "stopped_early": res.stopped_early,
        "nu": nu, "c1": c1, "nu0": res.nu0, "M": M,
        "S": res.S, "G": res.G, "kappa": res.kappa,
        "a1": res.schedule.a1, "eta": res.schedule.eta,
        "algo": acfg.to_dict(),
        "seconds": None,
    }
    if ref is not None:
        D0 = initial_distance(w_star, ref.p_star, ds.ref_weights, res.nu0)
        result["distance"] = float(np.linalg.norm(w_final - w_star))
        result["D0"] = D0
        result["budget"] = theoretical_iteration_budget(acfg, res.kappa, res.G, D0, act.beta)

    formats = _formats(args, cfg)
    res.trace.to_csv(out / "trace.csv")
    if "json" in formats:
        res.trace.to_json(out / "trace.json")
    if "svg" in formats and len(res.trace):
        write_svg(out / "convergence.svg", _trace_table(res.trace.columns))
    _write_json(out / "p_hat.json", res.p_hat.tolist())

    if ref is not None:
        value, bound, ok = check_ambiguity_radius(w_star, obj, B, c1)
        report = {
            "applicable": True,
            "OPT": ref.OPT,
            "OPT2": ref.OPT2,
            "ambiguity": {"chi2": value, "bound": bound, "passed": ok},
            "final_bounds": final_bounds_report(w_final, w_star, obj, B, c1, eps),
            "sharpness": (cal.sharpness.to_dict() if cal is not None and cal.sharpness is not None
                          else None),
        }
        if len(res.trace):
            tr = res.trace
            report["sandwich"] = {
                "lower_violation": float(np.max(tr.column("cum_lb") - tr.column("cum_gap"))),
                "upper_violation": float(np.max(tr.column("cum_gap") - tr.column("gap_ub"))),
            }
        _write_json(out / "report.json", report)
    result["seconds"] = time.perf_counter() - t0
    _write_json(out / "result.json", result)
    msg = f"{res.iterations} iterations, risk {result['risk']:.6g}"
    if "distance" in result:
        msg += f", distance to w* {result['distance']:.6g}"
    print(msg)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import SUITES, run_all

    inject = tuple(args.inject_fault or ())
    bad = [s for s in inject if s not in SUITES]
    if bad:
        raise ConfigError(f"inject-fault: unknown suite {bad[0]!r}")
    seed = args.seed if args.seed is not None else 0
    t0 = time.perf_counter()
    results = run_all(seed=seed, max_n=args.max_n, threads=_threads(), inject=inject)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print(f"{'all suites passed' if ok else 'verification FAILED'} in {time.perf_counter() - t0:.1f}s")
    return EXIT_OK if ok else EXIT_VERIFY


# ---------------------------------------------------------------------------
# report


REPORT_COLUMNS = ("i", "A", "dist", "gap", "gap_lb", "cum_gap", "cum_lb", "gap_ub")


def read_trace(path) -> dict:
    """Parse a trace CSV into float columns; errors name the offending line."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"{path}: cannot read trace: {exc.strerror}") from None
    with fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if not header:
            raise DataError(f"{path}: empty trace")
        header = [h.strip() for h in header]
        if "i" not in header or "A" not in header:
            raise DataError(f"{path}: line 1: trace header needs columns i and A")
        cols = {h: [] for h in header}
        for row in rd:
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: line {rd.line_num}: expected {len(header)} fields")
            try:
                for h, v in zip(header, row):
                    cols[h].append(float(v))
            except ValueError:
                raise DataError(f"{path}: line {rd.line_num}: unparsable number") from None
    if not cols["i"]:
        raise DataError(f"{path}: empty trace")
    return {k: np.asarray(v) for k, v in cols.items()}


def _trace_table(columns) -> dict:
    return {k: np.asarray(columns[k], dtype=float) for k in REPORT_COLUMNS if k in columns}


def write_table_csv(path, table: dict) -> None:
    names = list(table)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(names)
        for vals in zip(*(table[n] for n in names)):
            wr.writerow([repr(float(v)) for v in vals])


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * k / (n - 1) for k in range(n)]


def write_svg(path, table: dict, width=640, height=400) -> None:
    """Line chart of ``log10 ||w - w*||`` (or ``log10 A``) against ``A_k``."""
    x = table["A"]
    if "dist" in table:
        y, label = np.log10(np.maximum(table["dist"], 1e-300)), "log10 ||w_k - w*||"
    else:
        y, label = np.log10(np.maximum(table["A"], 1e-300)), "log10 A_k"
    left, right, top, bottom = 70, 20, 20, 50
    pw, ph = width - left - right, height - top - bottom
    x0, x1 = float(x.min()), float(x.max())
    y0, y1 = float(y.min()), float(y.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def sx(v):
        return left + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return top + (y1 - v) / (y1 - y0) * ph

    # thin long traces so the file stays small
    idx = np.unique(np.linspace(0, len(x) - 1, min(len(x), 2000)).astype(int))
    pts = " ".join(f"{sx(x[k]):.2f},{sy(y[k]):.2f}" for k in idx)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>',
    ]
    for t in _ticks(x0, x1):
        parts.append(f'<line x1="{sx(t):.2f}" y1="{top + ph}" x2="{sx(t):.2f}" y2="{top + ph + 4}" stroke="#888"/>')
        parts.append(f'<text x="{sx(t):.2f}" y="{top + ph + 16}" text-anchor="middle">{t:.3g}</text>')
    for t in _ticks(y0, y1):
        parts.append(f'<line x1="{left - 4}" y1="{sy(t):.2f}" x2="{left}" y2="{sy(t):.2f}" stroke="#888"/>')
        parts.append(f'<text x="{left - 6}" y="{sy(t) + 4:.2f}" text-anchor="end">{t:.3g}</text>')
    parts.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">A_k</text>')
    parts.append(f'<text x="14" y="{top + ph / 2}" text-anchor="middle" '
                 f'transform="rotate(-90 14 {top + ph / 2})">{label}</text>')
    parts.append(f'<polyline fill="none" stroke="#1f5fa8" stroke-width="1.5" points="{pts}"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def cmd_report(args) -> int:
    trace_path = Path(args.trace) if args.trace else None
    if trace_path is None:
        raise ConfigError("trace: --trace PATH is required")
    cols = read_trace(trace_path)
    table = _trace_table(cols)
    if np.any(np.diff(table["A"]) < 0):
        raise DataError(f"{trace_path}: column A is not nondecreasing")
    out = Path(args.out) if args.out else trace_path.parent
    out.mkdir(parents=True, exist_ok=True)
    formats = list(dict.fromkeys(args.format)) if args.format else ["csv", "svg"]
    if "csv" in formats:
        write_table_csv(out / "convergence.csv", table)
    if "json" in formats:
        _write_json(out / "convergence.json", {k: v.tolist() for k, v in table.items()})
    if "svg" in formats:
        write_svg(out / "convergence.svg", table)
    last = {k: float(v[-1]) for k, v in table.items()}
    line = f"{len(table['i'])} rows, final A = {last['A']:.6g}"
    if "dist" in last:
        line += f", final distance {last['dist']:.6g}"
    print(line)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="neuron-dro", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="experiment JSON")
        p.add_argument("--out", help="output directory (default: output_dir of the config)")
        p.add_argument("--seed", type=int, help="overrides the seed in the config")
        p.add_argument("--format", action="append", choices=FORMATS,
                       help="output format, may be repeated")

    common(sub.add_parser("generate", help="write a synthetic dataset"))
    p = sub.add_parser("train", help="run the primal-dual method on a dataset")
    common(p)
    p.add_argument("--dataset", help="dataset CSV (default: OUT/dataset.csv)")
    p = sub.add_parser("verify", help="run the oracle agreement suites")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-n", type=int, default=50, help="largest instance size")
    p.add_argument("--inject-fault", action="append", metavar="SUITE", help=argparse.SUPPRESS)
    p = sub.add_parser("report", help="convergence table and chart from a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--out")
    p.add_argument("--format", action="append", choices=FORMATS)
    return ap


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "verify": cmd_verify,
            "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors, which matches the config code
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
