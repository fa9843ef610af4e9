"""Command-line entry point: ``litesim sweep | eval | economics``.

Every option can also be set through an environment variable named
``LITESIM_`` + the option's dest in upper case (``--max-tbt`` ->
``LITESIM_MAX_TBT``). Command-line flags take precedence.

Exit codes: 0 success, 1 usage or configuration error, 2 valid but
infeasible.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path
from typing import Sequence

from .hardware import (
    ConfigError,
    DieSpec,
    default_gpu_config_text,
    die_yield,
    load_die_spec,
    load_gpu_specs,
    relative_cost_per_compute,
    shoreline_bandwidth_ratio,
)
from .report import chart_from_sweep, emit_barchart, emit_table, explain, fmt
from .roofline import ClusterConfig, evaluate_config
from .search import PHASES, Constraints, compare_types, sweep
from .workload import ModelSpec, default_model_config_text, load_model_specs

ENV_PREFIX = "LITESIM_"
EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2
DTYPE_BYTES = {"fp8": 1, "int8": 1, "fp16": 2, "bf16": 2, "fp32": 4}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _env(dest: str, default):
    return os.environ.get(ENV_PREFIX + dest.upper(), default)


def _add(parser: argparse.ArgumentParser, flag: str, **kwargs) -> None:
    dest = kwargs.get("dest") or flag.lstrip("-").replace("-", "_")
    kwargs["default"] = _env(dest, kwargs.get("default"))
    if kwargs.get("action") == "store_true" and isinstance(kwargs["default"], str):
        kwargs["default"] = kwargs["default"].lower() in ("1", "true", "yes", "on")
    parser.add_argument(flag, **kwargs)


def _positive(kind):
    def convert(text: str):
        value = kind(text)
        if value <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value

    return convert


def _non_negative(text: str) -> float:
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def _common_model_options(p: argparse.ArgumentParser) -> None:
    _add(p, "--gpus", metavar="FILE", help="GPU spec file (default: shipped GPU table)")
    _add(p, "--model-config", metavar="FILE", help="model config file (default: shipped models)")
    _add(p, "--dtype", choices=sorted(DTYPE_BYTES), help="override weight and activation datatype of every model")
    _add(p, "--prompt-len", type=_positive(int), default=1500)
    _add(p, "--decode-ctx", type=_positive(int), default=1500)
    _add(p, "--max-ttft", type=_non_negative, default=1.0, help="seconds")
    _add(p, "--max-tbt", type=_non_negative, default=0.05, help="seconds")
    _add(p, "--serial", action="store_true", help="do not overlap collectives with the producing stage")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="litesim", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("sweep", help="search the best configuration per GPU type, model and phase")
    _common_model_options(p)
    _add(p, "--models", help="comma-separated model names (default: all in the model config)")
    _add(p, "--out", default=".", metavar="DIR")
    _add(p, "--format", choices=("csv", "chart", "both"), default="both")
    _add(p, "--normalize", metavar="GPU", help="report tokens/s/SM relative to this GPU type")
    _add(p, "--workers", type=_positive(int), default=1)

    p = sub.add_parser("eval", help="evaluate one configuration and explain its bottlenecks")
    _common_model_options(p)
    _add(p, "--model", required="LITESIM_MODEL" not in os.environ)
    _add(p, "--gpu", required="LITESIM_GPU" not in os.environ)
    _add(p, "--tp", type=_positive(int), default=1)
    _add(p, "--batch", type=_positive(int), default=1)

    defaults = DieSpec()
    p = sub.add_parser("economics", help="die yield, cost per compute and shoreline scaling")
    _add(p, "--config", metavar="FILE", help="read die parameters from this config's 'die' block")
    _add(p, "--area", type=_positive(float), help=f"die area in cm^2 (default {defaults.area})")
    _add(p, "--defect-density", type=_non_negative, help=f"defects per cm^2 (default {defaults.defect_density})")
    _add(p, "--alpha", type=_positive(float), help=f"clustering parameter (default {defaults.cluster_alpha})")
    _add(p, "--split", type=_positive(int), default=4)
    return parser


def _read(path: str | None, fallback: str) -> str:
    if path is None:
        return fallback
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _load_models(args: argparse.Namespace, names: Sequence[str] | None) -> list[ModelSpec]:
    models = load_model_specs(_read(args.model_config, default_model_config_text()))
    if args.dtype:
        nbytes = DTYPE_BYTES[args.dtype]
        models = [dataclasses.replace(m, bytes_per_param=nbytes, bytes_per_act=nbytes) for m in models]
    if not names:
        return models
    by_name = {m.name: m for m in models}
    unknown = [n for n in names if n not in by_name]
    if unknown:
        raise UsageError(f"unknown model {', '.join(map(repr, unknown))}; available: {', '.join(by_name)}")
    return [by_name[n] for n in names]


def _constraints(args: argparse.Namespace) -> Constraints:
    return Constraints(max_ttft=args.max_ttft, max_tbt=args.max_tbt, prompt_len=args.prompt_len)


def cmd_sweep(args: argparse.Namespace) -> int:
    names = [n.strip() for n in args.models.split(",") if n.strip()] if args.models else None
    models = _load_models(args, names)
    gpus = load_gpu_specs(_read(args.gpus, default_gpu_config_text()))
    if args.normalize and args.normalize not in {g.name for g in gpus}:
        raise UsageError(f"unknown GPU {args.normalize!r} for --normalize")
    result = sweep(
        models,
        gpus,
        _constraints(args),
        decode_ctx=args.decode_ctx,
        overlap=not args.serial,
        workers=args.workers,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if args.format in ("csv", "both"):
        (out / "results.csv").write_text(emit_table(result, "csv"))
        (out / "results.json").write_text(emit_table(result, "structured"))
        written += ["results.csv", "results.json"]
        if args.normalize:
            lines = ["model,phase,gpu,tput_per_sm,normalized"]
            for row in compare_types(result, args.normalize):
                v = "" if row.tput_per_sm is None else fmt(row.tput_per_sm)
                n = "" if row.normalized is None else fmt(row.normalized)
                lines.append(f"{row.model},{row.phase},{row.gpu},{v},{n}")
            (out / "comparison.csv").write_text("\n".join(lines) + "\n")
            written.append("comparison.csv")
    if args.format in ("chart", "both"):
        for phase in PHASES:
            chart = chart_from_sweep(result, phase, args.normalize)
            (out / f"{phase}.svg").write_text(emit_barchart(chart))
            written.append(f"{phase}.svg")

    for b in result.best:
        if b.result is None:
            print(f"{b.model:<14} {b.gpu:<18} {b.phase:<8} no feasible config (binding: {b.binding})")
        else:
            r = b.result
            print(
                f"{b.model:<14} {b.gpu:<18} {b.phase:<8} tp={r.cfg.tp:<3} batch={r.cfg.batch:<5} "
                f"{fmt(r.tput_per_sm(b.phase))} tok/s/SM"
            )
    print(f"wrote {', '.join(str(out / w) for w in written)}")
    bad = result.infeasible_gpus()
    if bad:
        print(f"no feasible configuration for: {', '.join(bad)}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    (model,) = _load_models(args, [args.model])
    gpus = {g.name: g for g in load_gpu_specs(_read(args.gpus, default_gpu_config_text()))}
    if args.gpu not in gpus:
        raise UsageError(f"unknown GPU {args.gpu!r}; available: {', '.join(gpus)}")
    try:
        cfg = ClusterConfig(
            gpu=gpus[args.gpu],
            tp=args.tp,
            batch=args.batch,
            prompt_len=args.prompt_len,
            decode_ctx=args.decode_ctx,
            overlap=not args.serial,
        )
        result = evaluate_config(model, cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(explain(result), end="")
    violations = _constraints(args).violations(result)
    if violations:
        reasons = {
            "memory": f"weights and KV cache need {result.mem_required / 1e9:.3f} GB per GPU, "
            f"exceeding {cfg.gpu.mem_capacity:g} GB",
            "ttft": f"TTFT {result.ttft:.4g} s exceeds {args.max_ttft:g} s",
            "tbt": f"TBT {result.tbt:.4g} s exceeds {args.max_tbt:g} s",
        }
        print("infeasible: " + "; ".join(reasons[v] for v in violations))
        return EXIT_INFEASIBLE
    print("feasible")
    return EXIT_OK


def cmd_economics(args: argparse.Namespace) -> int:
    base = load_die_spec(_read(args.config, default_gpu_config_text()))
    die = DieSpec(
        area=base.area if args.area is None else args.area,
        defect_density=base.defect_density if args.defect_density is None else args.defect_density,
        cluster_alpha=base.cluster_alpha if args.alpha is None else args.alpha,
    )
    k = args.split
    small = dataclasses.replace(die, area=die.area / k)
    y_full, y_small = die_yield(die), die_yield(small)
    cost = relative_cost_per_compute(die, k)
    print(f"die area {fmt(die.area)} cm^2, defect density {fmt(die.defect_density)}/cm^2, alpha {fmt(die.cluster_alpha)}")
    print(f"yield at full area:     {y_full:.4f}")
    print(f"yield at 1/{k} area:     {y_small:.4f}")
    print(f"yield ratio:            {y_small / y_full:.4f}")
    print(f"relative cost/compute:  {cost:.4f} ({(1 - cost) * 100:.1f}% reduction)")
    print(f"shoreline bw ratio:     {shoreline_bandwidth_ratio(k):.4f}")
    return EXIT_OK


COMMANDS = {"sweep": cmd_sweep, "eval": cmd_eval, "economics": cmd_economics}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"litesim: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
