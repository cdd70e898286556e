"""``erbtool`` command line: ERB file tools and lifelong-replay experiments.

Exit codes: 0 success, 2 missing file, 3 malformed input, 4 invalid
arguments or configuration.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import shutil
import sys
from collections import defaultdict
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import gridworld as gw
from .agent import TrainConfig, lifelong_train
from .compressors import CompressionSpec, compress, unpack
from .metrics import ZeroVarianceError, distribution_report, paired_ttest
from .replay import METHODS, CompressedERB, ERBError, ReplayBuffer, load, reward_vector, save

EXIT_OK = 0
EXIT_MISSING = 2
EXIT_MALFORMED = 3
EXIT_INVALID = 4

# pseudo-methods accepted by `lifelong` besides the compressors
BASELINES = ("none", "noreplay")
RESULTS_HEADER = ["round", "env", "method", "ratio", "seed", "mean_terminal_distance"]
COMPARE_HEADER = ["method", "ratio", "n_pairs", "mean_baseline", "mean_method", "t", "p", "note"]


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(EXIT_INVALID, f"{self.prog}: {message}")


def _read_erb(path: str) -> ReplayBuffer | CompressedERB:
    try:
        return load(path)
    except (FileNotFoundError, IsADirectoryError, NotADirectoryError) as exc:
        raise CliError(EXIT_MISSING, f"cannot open {path}: {exc.strerror or exc}") from None
    except (ERBError, ValueError) as exc:
        raise CliError(EXIT_MALFORMED, f"{path}: {exc}") from None


def _write_erb(buffer, path: str) -> None:
    try:
        save(buffer, path)
    except FileNotFoundError as exc:
        raise CliError(EXIT_MISSING, f"cannot write {path}: {exc.strerror}") from None


def _emit(obj) -> None:
    print(json.dumps(obj, separators=(",", ":")))


def _ratio(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid ratio {text!r}") from None
    if not (math.isfinite(value) and value >= 1):
        raise argparse.ArgumentTypeError(f"ratio must be a finite number >= 1, got {text}")
    return value


def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


# ---------------------------------------------------------------- file commands


def cmd_compress(in_path: str, method: str, ratio: float, seed: int, out_path: str) -> int:
    buffer = _read_erb(in_path)
    if not isinstance(buffer, ReplayBuffer):
        raise CliError(EXIT_MALFORMED, f"{in_path}: expected a raw ERB, found a compressed one")
    if len(buffer) == 0:
        raise CliError(EXIT_MALFORMED, f"{in_path}: empty buffer, nothing to compress")
    packed = compress(buffer, CompressionSpec(method=method, ratio=ratio, seed=seed))
    _write_erb(packed, out_path)
    report = distribution_report(buffer, packed)
    _emit(
        {
            "N": len(buffer),
            "entries": len(packed),
            "weight_sum": int(sum(packed.weights)),
            "w1": report.w1,
            "ks": report.ks,
        }
    )
    return EXIT_OK


def cmd_unpack(in_path: str, out_path: str) -> int:
    packed = _read_erb(in_path)
    if not isinstance(packed, CompressedERB):
        raise CliError(EXIT_MALFORMED, f"{in_path}: expected a compressed ERB, found a raw one")
    _write_erb(unpack(packed), out_path)
    return EXIT_OK


def _summary(buffer: ReplayBuffer | CompressedERB) -> dict:
    r = reward_vector(buffer)
    if isinstance(buffer, CompressedERB):
        w = np.asarray(buffer.weights, dtype=np.float64)
    else:
        w = np.ones_like(r)
    mean = float(np.average(r, weights=w))
    out = {
        "kind": "compressed" if isinstance(buffer, CompressedERB) else "raw",
        "entries": len(r),
        "count": int(w.sum()),
        "reward_mean": mean,
        "reward_sd": float(math.sqrt(np.average((r - mean) ** 2, weights=w))),
        "reward_min": float(r.min()),
        "reward_max": float(r.max()),
    }
    if isinstance(buffer, CompressedERB):
        out.update(method=buffer.method, ratio=buffer.ratio)
    return out


def cmd_stats(in_path: str, ref_path: str | None = None, hist_out: str | None = None) -> int:
    if hist_out is not None and ref_path is None:
        raise CliError(EXIT_INVALID, "--hist-out needs --ref")
    buffer = _read_erb(in_path)
    ref = _read_erb(ref_path) if ref_path is not None else None
    for path, b in ((in_path, buffer), (ref_path, ref)):
        if b is not None and len(b) == 0:
            raise CliError(EXIT_MALFORMED, f"{path}: empty buffer, no reward statistics")
    _emit(_summary(buffer))
    if ref is not None:
        report = distribution_report(ref, buffer)
        print(report.to_json())
        if hist_out is not None:
            try:
                with open(hist_out, "w", encoding="utf-8", newline="") as fh:
                    report.write_histogram_csv(fh)
            except FileNotFoundError as exc:
                raise CliError(EXIT_MISSING, f"cannot write {hist_out}: {exc.strerror}") from None
    return EXIT_OK


# ---------------------------------------------------------------- experiments


@dataclass(frozen=True)
class ExperimentConfig:
    env: dict
    agent: TrainConfig
    methods: tuple[str, ...]
    ratios: tuple[float, ...]
    seeds: tuple[int, ...]
    output_dir: str
    starts_per_env: int = 20
    save_erbs: bool = True
    gzip_erbs: bool = True

    def cells(self) -> list[tuple[str, float, int]]:
        """Grid cells in output order: method, then ratio, then seed."""
        out = []
        for method in self.methods:
            ratios = (1.0,) if method in BASELINES else self.ratios
            for ratio in ratios:
                for seed in self.seeds:
                    out.append((method, ratio, seed))
        return out

    def envs(self) -> list[gw.EnvSpec]:
        return gw.make_env_sequence(**self.env)


_ENV_KEYS = {
    "num_envs": "count",
    "base_seed": "base_seed",
    "grid_size": "grid_size",
    "dims": "dims",
    "context_dim": "context_dim",
    "terminal_radius": "terminal_radius",
    "max_steps": "max_steps",
}
_AGENT_KEYS = {f.name for f in fields(TrainConfig)} - {"seed"}
_RUN_KEYS = {"seeds", "output_dir", "starts_per_env", "save_erbs", "gzip_erbs"}
_SECTIONS = {"env", "agent", "compression", "run"}


def _check_keys(section: str, table, allowed) -> dict:
    if not isinstance(table, dict):
        raise ValueError(f"[{section}] must be a table")
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ValueError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    return table


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def parse_config(text: str, output_override: str | None = None) -> ExperimentConfig:
    """Validate a TOML experiment description; raises ValueError on any problem."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ValueError(f"invalid TOML: {exc}") from None
    unknown = sorted(set(raw) - _SECTIONS)
    if unknown:
        raise ValueError(f"unknown section(s): {', '.join(unknown)}")

    env_raw = _check_keys("env", raw.get("env", {}), _ENV_KEYS)
    env = {_ENV_KEYS[k]: v for k, v in env_raw.items()}
    env.setdefault("count", 10)
    env.setdefault("base_seed", 0)
    for key in ("count", "base_seed", "grid_size", "dims", "context_dim", "max_steps"):
        if key in env and not _is_int(env[key]):
            raise ValueError(f"[env] {key} must be an integer")
    if "terminal_radius" in env and not isinstance(env["terminal_radius"], (int, float)):
        raise ValueError("[env] terminal_radius must be a number")
    if not 0 <= env["base_seed"] < 2**64:
        raise ValueError("[env] base_seed must be an unsigned 64-bit integer")

    agent_raw = _check_keys("agent", raw.get("agent", {}), _AGENT_KEYS)
    try:
        agent = TrainConfig(**agent_raw)
    except TypeError as exc:
        raise ValueError(f"[agent] {exc}") from None

    comp = _check_keys("compression", raw.get("compression", {}), {"methods", "ratios"})
    methods = comp.get("methods", ["none", "coreset"])
    ratios = comp.get("ratios", [10])
    if not isinstance(methods, list) or not methods or not all(isinstance(m, str) for m in methods):
        raise ValueError("[compression] methods must be a nonempty list of strings")
    for m in methods:
        if m not in METHODS + BASELINES:
            raise ValueError(f"[compression] unknown method {m!r}; expected one of {METHODS + BASELINES}")
    if len(set(methods)) != len(methods):
        raise ValueError("[compression] methods repeat")
    if not isinstance(ratios, list) or not all(isinstance(r, (int, float)) and not isinstance(r, bool) for r in ratios):
        raise ValueError("[compression] ratios must be a list of numbers")
    if any(not (math.isfinite(r) and r >= 1) for r in ratios):
        raise ValueError("[compression] ratios must be finite and >= 1")
    if any(m in METHODS for m in methods) and not ratios:
        raise ValueError("[compression] ratios must be nonempty when a compressor is listed")
    if len(set(ratios)) != len(ratios):
        raise ValueError("[compression] ratios repeat")

    run = _check_keys("run", raw.get("run", {}), _RUN_KEYS)
    seeds = run.get("seeds")
    if not isinstance(seeds, list) or not seeds or not all(_is_int(s) and 0 <= s < 2**64 for s in seeds):
        raise ValueError("[run] seeds must be a nonempty list of unsigned 64-bit integers")
    if len(set(seeds)) != len(seeds):
        raise ValueError("[run] seeds repeat")
    output_dir = output_override or run.get("output_dir")
    if not isinstance(output_dir, str) or not output_dir:
        raise ValueError("[run] output_dir must be given (or set ERBTOOL_OUT)")
    starts = run.get("starts_per_env", 20)
    if not _is_int(starts) or starts < 1:
        raise ValueError("[run] starts_per_env must be a positive integer")
    for flag in ("save_erbs", "gzip_erbs"):
        if not isinstance(run.get(flag, True), bool):
            raise ValueError(f"[run] {flag} must be true or false")

    cfg = ExperimentConfig(
        env=env,
        agent=agent,
        methods=tuple(methods),
        ratios=tuple(float(r) for r in ratios),
        seeds=tuple(seeds),
        output_dir=output_dir,
        starts_per_env=starts,
        save_erbs=run.get("save_erbs", True),
        gzip_erbs=run.get("gzip_erbs", True),
    )
    cfg.envs()  # surfaces invalid environment parameters now
    return cfg


def _fmt_ratio(ratio: float) -> str:
    return f"{ratio:g}"


def cell_name(method: str, ratio: float, seed: int) -> str:
    return f"{method}_r{_fmt_ratio(ratio)}_s{seed}"


def run_cell(cfg: ExperimentConfig, method: str, ratio: float, seed: int, cell_dir: Path) -> list[list[str]]:
    """Run one grid cell; returns its results.csv rows and persists its ERBs."""
    envs = cfg.envs()
    agent = replace(cfg.agent, seed=seed)
    compression = None
    if method == "noreplay":
        agent = replace(agent, replay_mix=0.0)
    elif method != "none":
        compression = CompressionSpec(method=method, ratio=ratio, seed=seed)
    suffix = ".erb.jsonl.gz" if cfg.gzip_erbs else ".erb.jsonl"

    def persist(t: int, raw: ReplayBuffer, packed: CompressedERB | None) -> str:
        if not cfg.save_erbs:
            return ""
        raw_path = cell_dir / f"round{t:02d}_raw{suffix}"
        save(raw, raw_path)
        if packed is None:
            return raw_path.name
        packed_path = cell_dir / f"round{t:02d}_{method}{suffix}"
        save(packed, packed_path)
        return packed_path.name

    result = lifelong_train(envs, agent, compression, cfg.starts_per_env, eval_seed=seed, on_round=persist)
    rows = []
    for report in result.reports:
        for env in envs:
            rows.append(
                [
                    str(report.round_index),
                    env.name,
                    method,
                    _fmt_ratio(ratio),
                    str(seed),
                    repr(report.per_env_mean_distance[env.name]),
                ]
            )
    return rows


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(buf.getvalue(), encoding="utf-8")
    os.replace(tmp, path)


def _read_rows(path: Path) -> list[list[str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[1:]


def cmd_lifelong(config_path: str) -> int:
    try:
        text = Path(config_path).read_text(encoding="utf-8")
    except (FileNotFoundError, IsADirectoryError) as exc:
        raise CliError(EXIT_MISSING, f"cannot open {config_path}: {exc.strerror}") from None
    try:
        cfg = parse_config(text, os.environ.get("ERBTOOL_OUT") or None)
    except ValueError as exc:
        raise CliError(EXIT_INVALID, f"{config_path}: {exc}") from None

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    all_rows: list[list[str]] = []
    for method, ratio, seed in cfg.cells():
        cell_dir = out / "cells" / cell_name(method, ratio, seed)
        rows_path = cell_dir / "rows.csv"
        if (cell_dir / "DONE").exists():
            print(f"skip {cell_dir.name} (done)", file=sys.stderr)
        else:
            # leftovers of an interrupted attempt are discarded
            shutil.rmtree(cell_dir, ignore_errors=True)
            cell_dir.mkdir(parents=True)
            print(f"run  {cell_dir.name}", file=sys.stderr)
            _write_csv(rows_path, RESULTS_HEADER, run_cell(cfg, method, ratio, seed, cell_dir))
            (cell_dir / "DONE").write_text("", encoding="utf-8")
        all_rows.extend(_read_rows(rows_path))
    _write_csv(out / "results.csv", RESULTS_HEADER, all_rows)
    print(str(out / "results.csv"))
    return EXIT_OK


# ---------------------------------------------------------------- comparison


@dataclass(frozen=True)
class Comparison:
    method: str
    ratio: str
    n_pairs: int
    mean_baseline: float
    mean_method: float
    t: float | None
    p: float | None
    note: str = ""

    def row(self) -> list[str]:
        opt = lambda x: "" if x is None else repr(x)
        return [
            self.method,
            self.ratio,
            str(self.n_pairs),
            repr(self.mean_baseline),
            repr(self.mean_method),
            opt(self.t),
            opt(self.p),
            self.note,
        ]


def final_round_distances(rows) -> dict[tuple[str, str], dict[tuple[str, str], float]]:
    """(method, ratio) -> {(env, seed): distance after that run's last round}."""
    last: dict[tuple[str, str, str], int] = {}
    for r in rows:
        key = (r["method"], r["ratio"], r["seed"])
        last[key] = max(last.get(key, 0), int(r["round"]))
    out: dict = defaultdict(dict)
    for r in rows:
        if int(r["round"]) == last[(r["method"], r["ratio"], r["seed"])]:
            out[(r["method"], r["ratio"])][(r["env"], r["seed"])] = float(r["mean_terminal_distance"])
    return dict(out)


def compare_methods(rows, baseline: str) -> list[Comparison]:
    """Paired t-tests of every (method, ratio) against the baseline's final-round distances."""
    finals = final_round_distances(rows)
    if "@" in baseline:
        name, ratio = baseline.split("@", 1)
        keys = [k for k in finals if k[0] == name and float(k[1]) == float(ratio)]
    else:
        keys = [k for k in finals if k[0] == baseline]
    if not keys:
        raise LookupError(f"no rows for baseline {baseline!r}")
    if len(keys) > 1:
        raise LookupError(f"baseline {baseline!r} has several ratios; use METHOD@RATIO")
    base_key = keys[0]
    base = finals[base_key]
    others = [k for k in finals if k != base_key] or [base_key]
    out = []
    for key in others:
        cur = finals[key]
        pairs = sorted(set(base) & set(cur))
        a = [base[p] for p in pairs]
        b = [cur[p] for p in pairs]
        t = p = None
        note = ""
        if len(pairs) < 2:
            note = "fewer than two pairs"
        else:
            try:
                res = paired_ttest(b, a)
                t, p = res.t, res.p
            except ZeroVarianceError as exc:
                note = f"zero variance: {exc}"
        out.append(
            Comparison(
                method=key[0],
                ratio=key[1],
                n_pairs=len(pairs),
                mean_baseline=float(np.mean(a)) if a else math.nan,
                mean_method=float(np.mean(b)) if b else math.nan,
                t=t,
                p=p,
                note=note,
            )
        )
    return out


def _table(comps: list[Comparison], baseline: str) -> str:
    lines = [f"{'method':<12} {'ratio':>5} {'pairs':>5} {baseline[:10]:>10} {'method':>10} {'t':>9} {'p':>9}  note"]
    for c in comps:
        t = "" if c.t is None else f"{c.t:9.3f}"
        p = "" if c.p is None else f"{c.p:9.4f}"
        lines.append(
            f"{c.method:<12} {c.ratio:>5} {c.n_pairs:>5} {c.mean_baseline:10.3f} {c.mean_method:10.3f} {t:>9} {p:>9}  {c.note}"
        )
    return "\n".join(lines)


def cmd_compare(results_path: str, baseline: str, out_path: str) -> int:
    try:
        with open(results_path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != RESULTS_HEADER:
                raise CliError(EXIT_MALFORMED, f"{results_path}: header must be {','.join(RESULTS_HEADER)}")
            rows = list(reader)
    except (FileNotFoundError, IsADirectoryError) as exc:
        raise CliError(EXIT_MISSING, f"cannot open {results_path}: {exc.strerror}") from None
    try:
        for r in rows:
            int(r["round"])
            float(r["ratio"])
            float(r["mean_terminal_distance"])
    except (TypeError, ValueError):
        raise CliError(EXIT_MALFORMED, f"{results_path}: non-numeric field in row {r}") from None
    try:
        comps = compare_methods(rows, baseline)
    except LookupError as exc:
        raise CliError(EXIT_INVALID, str(exc.args[0])) from None
    for c in comps:
        if c.note:
            print(f"warning: {c.method}@{c.ratio}: {c.note}", file=sys.stderr)
    try:
        _write_csv(Path(out_path), COMPARE_HEADER, [c.row() for c in comps])
    except FileNotFoundError as exc:
        raise CliError(EXIT_MISSING, f"cannot write {out_path}: {exc.strerror}") from None
    print(_table(comps, baseline))
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="erbtool", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("compress", help="compress a raw ERB file")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--method", choices=METHODS, default="coreset")
    p.add_argument("--ratio", type=_ratio, required=True)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", dest="out_path", required=True)

    p = sub.add_parser("unpack", help="expand a compressed ERB by repetition")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", dest="out_path", required=True)

    p = sub.add_parser("stats", help="reward summary, optionally against a reference ERB")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--ref", dest="ref_path")
    p.add_argument("--hist-out", dest="hist_out")

    p = sub.add_parser("lifelong", help="run a lifelong replay experiment grid")
    p.add_argument("--config", required=True)

    p = sub.add_parser("compare", help="paired t-tests of final distances against a baseline")
    p.add_argument("--results", required=True)
    p.add_argument("--baseline", default="none")
    p.add_argument("--out", dest="out_path", required=True)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "compress":
            return cmd_compress(args.in_path, args.method, args.ratio, args.seed, args.out_path)
        if args.command == "unpack":
            return cmd_unpack(args.in_path, args.out_path)
        if args.command == "stats":
            return cmd_stats(args.in_path, args.ref_path, args.hist_out)
        if args.command == "lifelong":
            return cmd_lifelong(args.config)
        return cmd_compare(args.results, args.baseline, args.out_path)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
