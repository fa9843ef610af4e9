"""Tables, SVG bar charts and bottleneck breakdowns for sweep results."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence
from xml.sax.saxutils import escape, quoteattr

from .roofline import PhaseLatency, PhaseResult
from .search import PHASES, SweepResult

CSV_COLUMNS = (
    "gpu",
    "model",
    "phase",
    "tp",
    "batch",
    "ttft_s",
    "tbt_s",
    "tput_tok_s",
    "tput_per_sm",
    "bottleneck",
)
FLOAT_COLUMNS = ("ttft_s", "tbt_s", "tput_tok_s", "tput_per_sm")


def fmt(x: float) -> str:
    # str formatting is locale independent
    return format(x, ".6g")


def table_rows(sweep: SweepResult) -> list[dict[str, Any]]:
    rows = []
    for best in sweep.best:
        r = best.result
        if r is None:
            continue
        rows.append(
            {
                "gpu": best.gpu,
                "model": best.model,
                "phase": best.phase,
                "tp": r.cfg.tp,
                "batch": r.cfg.batch,
                "ttft_s": r.ttft,
                "tbt_s": r.tbt,
                "tput_tok_s": r.tput(best.phase),
                "tput_per_sm": r.tput_per_sm(best.phase),
                "bottleneck": r.latency(best.phase).bottleneck,
            }
        )
    return rows


def emit_table(sweep: SweepResult, format: str = "csv") -> str:
    """Best configuration per (gpu, model, phase).

    ``csv`` uses the fixed column order of ``CSV_COLUMNS``; ``structured``
    (alias ``json``) nests the same fields as model -> gpu -> phase.
    Floats carry 6 significant digits.
    """
    rows = table_rows(sweep)
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([fmt(row[c]) if c in FLOAT_COLUMNS else row[c] for c in CSV_COLUMNS])
        return buf.getvalue()
    if format in ("structured", "json"):
        doc: dict[str, Any] = {"columns": list(CSV_COLUMNS), "results": {}}
        for row in rows:
            leaf = {c: float(fmt(row[c])) if c in FLOAT_COLUMNS else row[c] for c in CSV_COLUMNS[2:]}
            doc["results"].setdefault(row["model"], {}).setdefault(row["gpu"], {})[row["phase"]] = leaf
        doc["infeasible"] = [
            {"gpu": b.gpu, "model": b.model, "phase": b.phase, "binding": b.binding}
            for b in sweep.best
            if b.result is None
        ]
        return json.dumps(doc, indent=2, sort_keys=False) + "\n"
    raise ValueError(f"unknown table format {format!r}")


def parse_table(text: str) -> list[dict[str, Any]]:
    """Inverse of the CSV form of ``emit_table``."""
    rows = []
    for raw in csv.DictReader(io.StringIO(text)):
        row: dict[str, Any] = dict(raw)
        row["tp"] = int(row["tp"])
        row["batch"] = int(row["batch"])
        for c in FLOAT_COLUMNS:
            row[c] = float(row[c])
        rows.append(row)
    return rows


@dataclass(frozen=True)
class ChartSpec:
    phase: str
    models: tuple[str, ...]
    gpus: tuple[str, ...]
    values: Mapping[tuple[str, str], float] = field(default_factory=dict)
    baseline: str | None = None
    title: str = ""

    def __post_init__(self) -> None:
        for key, v in self.values.items():
            if v < 0:
                raise ValueError(f"negative bar value for {key}: {v}")

    def value(self, model: str, gpu: str) -> float:
        return self.values.get((model, gpu), 0.0)


def chart_from_sweep(sweep: SweepResult, phase: str, normalize: str | None = None) -> ChartSpec:
    values: dict[tuple[str, str], float] = {}
    for model in sweep.models:
        base = None
        if normalize is not None:
            if normalize not in sweep.gpus:
                raise KeyError(f"unknown baseline GPU {normalize!r}")
            b = sweep.best_for(model, normalize, phase).result
            base = b.tput_per_sm(phase) if b else None
        for gpu in sweep.gpus:
            r = sweep.best_for(model, gpu, phase).result
            if r is None:
                continue
            v = r.tput_per_sm(phase)
            if normalize is not None:
                if not base:
                    continue
                v /= base
            values[(model, gpu)] = v
    title = {"prefill": "Prompt prefill", "decode": "Decode"}.get(phase, phase)
    return ChartSpec(phase, tuple(sweep.models), tuple(sweep.gpus), values, normalize, title)


PALETTE = ("#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c")


def _nice_max(v: float) -> float:
    """Smallest 1/2/2.5/5 x 10^k at or above ``v``."""
    if v <= 0:
        return 1.0
    exp = 10.0 ** math.floor(math.log10(v))
    return next(step * exp for step in (1, 2, 2.5, 5, 10) if step * exp >= v)


def emit_barchart(chart: ChartSpec) -> str:
    """Grouped bar chart: one group per model, one bar per GPU type."""
    n_models, n_gpus = max(len(chart.models), 1), max(len(chart.gpus), 1)
    bar_w, gap = 18, 24
    left, right, top, bottom = 70, 20, 40, 60
    legend_h = 18 * len(chart.gpus) + 10
    plot_w = n_models * (n_gpus * bar_w + gap) + gap
    plot_h = 240
    width = left + plot_w + right
    height = top + plot_h + bottom + legend_h
    y_max = _nice_max(max(chart.values.values(), default=0.0))
    y_label = "tokens/s/SM" + (f" (relative to {chart.baseline})" if chart.baseline else "")

    def y(v: float) -> float:
        return top + plot_h - v / y_max * plot_h

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(chart.title)}</text>',
    ]
    for i in range(5):
        v = y_max * i / 4
        yy = y(v)
        out.append(f'<line x1="{left}" y1="{yy:.3f}" x2="{left + plot_w}" y2="{yy:.3f}" stroke="#dddddd"/>')
        out.append(f'<text x="{left - 6}" y="{yy + 4:.3f}" text-anchor="end">{fmt(v)}</text>')
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>')
    out.append(f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" stroke="black"/>')
    out.append(
        f'<text transform="translate(16 {top + plot_h / 2:.1f}) rotate(-90)" text-anchor="middle">'
        f"{escape(y_label)}</text>"
    )
    for mi, model in enumerate(chart.models):
        x0 = left + gap + mi * (n_gpus * bar_w + gap)
        for gi, gpu in enumerate(chart.gpus):
            v = chart.value(model, gpu)
            h = v / y_max * plot_h
            out.append(
                f'<rect class="bar" x="{x0 + gi * bar_w}" y="{top + plot_h - h:.6f}" width="{bar_w - 2}" '
                f'height="{h:.6f}" fill="{PALETTE[gi % len(PALETTE)]}" data-model={quoteattr(model)} '
                f'data-gpu={quoteattr(gpu)} data-value="{fmt(v)}"/>'
            )
        cx = x0 + n_gpus * bar_w / 2
        out.append(f'<text x="{cx:.1f}" y="{top + plot_h + 16}" text-anchor="middle">{escape(model)}</text>')
    ly = top + plot_h + bottom - 20
    for gi, gpu in enumerate(chart.gpus):
        yy = ly + gi * 18
        out.append(
            f'<g class="legend-entry"><rect x="{left}" y="{yy}" width="12" height="12" '
            f'fill="{PALETTE[gi % len(PALETTE)]}"/>'
            f'<text x="{left + 18}" y="{yy + 10}">{escape(gpu)}</text></g>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _ms(seconds: float) -> str:
    return f"{seconds * 1e3:10.4f}"


def explain_phase(name: str, lat: PhaseLatency) -> list[str]:
    lines = [
        f"{name}: {lat.total * 1e3:.4f} ms, bound by {lat.bottleneck}",
        f"  {'stage':<28}{'x':>5}{'compute ms':>11}{'memory ms':>11}{'network ms':>11}{'time ms':>11}  bound",
    ]
    for st, n in zip(lat.stages, lat.repeats):
        lines.append(
            f"  {st.label:<28}{n:>5}{_ms(st.compute_s):>11}{_ms(st.memory_s):>11}"
            f"{_ms(st.network_s):>11}{_ms(st.time):>11}  {st.bottleneck}"
        )
    shares = lat.time_by_resource()
    lines.append(
        "  total by binding resource: "
        + ", ".join(f"{r} {shares[r] * 1e3:.4f} ms" for r in ("compute", "memory", "network"))
    )
    return lines


def explain(result: PhaseResult, phases: Sequence[str] = PHASES) -> str:
    """Per-stage compute/memory/network times and the binding resource.

    Times are per stage instance; ``x`` is how many times the stage runs
    (once per layer for layer stages).
    """
    cfg = result.cfg
    lines = [
        f"{result.model} on {cfg.tp} x {cfg.gpu.name}, batch {cfg.batch}, "
        f"prompt {cfg.prompt_len}, decode context {cfg.decode_ctx}",
        f"memory per GPU: {result.mem_required / 1e9:.3f} GB of {cfg.gpu.mem_capacity:g} GB"
        + ("" if result.fits_memory else "  (does not fit)"),
        f"TTFT {result.ttft * 1e3:.4f} ms, TBT {result.tbt * 1e3:.4f} ms",
        f"prefill {fmt(result.prefill_tput)} tok/s ({fmt(result.prefill_tput_per_sm)} tok/s/SM), "
        f"decode {fmt(result.decode_tput)} tok/s ({fmt(result.decode_tput_per_sm)} tok/s/SM)",
    ]
    for phase in phases:
        lines.append("")
        lines.extend(explain_phase(phase, result.latency(phase)))
    return "\n".join(lines) + "\n"
