"""Exhaustive (tp, batch) sweep per GPU type and best-configuration selection."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .hardware import GpuSpec
from .roofline import IDEAL, ClusterConfig, Efficiency, PhaseResult, evaluate_config, max_batch_in_memory
from .workload import ModelSpec

PHASES = ("prefill", "decode")


@dataclass(frozen=True)
class Constraints:
    max_ttft: float = 1.0
    max_tbt: float = 0.050
    prompt_len: int = 1500

    def __post_init__(self) -> None:
        # zero latency bounds are legal and admit nothing
        if self.max_ttft < 0 or self.max_tbt < 0:
            raise ValueError("latency bounds must be >= 0")
        if self.prompt_len <= 0:
            raise ValueError("prompt_len must be positive")

    def violations(self, result: PhaseResult) -> tuple[str, ...]:
        out = []
        if not result.fits_memory:
            out.append("memory")
        if not result.ttft <= self.max_ttft:
            out.append("ttft")
        if not result.tbt <= self.max_tbt:
            out.append("tbt")
        return tuple(out)


@dataclass(frozen=True)
class SweepGrid:
    """Points to evaluate.

    ``None`` selects the defaults: tp over powers of two up to the GPU's
    cluster limit that divide the head count; batch over powers of two up to
    ``max_batch`` plus, per tp, the largest batch admitted by memory, by the
    TTFT bound and by the TBT bound. Explicit lists are used verbatim.
    """

    tps: tuple[int, ...] | None = None
    batches: tuple[int, ...] | None = None
    max_batch: int = 2048

    def tp_values(self, model: ModelSpec, gpu: GpuSpec) -> list[int]:
        if self.tps is not None:
            return sorted(set(self.tps))
        out, tp = [], 1
        while tp <= gpu.max_gpus:
            if model.heads % tp == 0:
                out.append(tp)
            tp *= 2
        return out


@dataclass(frozen=True)
class SweepPoint:
    model: str
    gpu: str
    tp: int
    batch: int
    result: PhaseResult | None
    rejected: tuple[str, ...] = ()

    @property
    def feasible(self) -> bool:
        return self.result is not None and not self.rejected


@dataclass(frozen=True)
class Best:
    model: str
    gpu: str
    phase: str
    result: PhaseResult | None
    binding: str = ""  # set when nothing is feasible

    @property
    def feasible(self) -> bool:
        return self.result is not None


@dataclass(frozen=True)
class SweepResult:
    models: tuple[str, ...]
    gpus: tuple[str, ...]
    points: tuple[SweepPoint, ...]
    best: tuple[Best, ...]
    constraints: Constraints = field(default_factory=Constraints)

    def best_for(self, model: str, gpu: str, phase: str) -> Best:
        for b in self.best:
            if (b.model, b.gpu, b.phase) == (model, gpu, phase):
                return b
        raise KeyError((model, gpu, phase))

    def feasible(self, model: str | None = None, gpu: str | None = None) -> list[SweepPoint]:
        return [
            p
            for p in self.points
            if p.feasible and (model is None or p.model == model) and (gpu is None or p.gpu == gpu)
        ]

    def infeasible_gpus(self) -> list[str]:
        return sorted({b.gpu for b in self.best if not b.feasible})


def _largest(ok: Callable[[int], bool], hi: int) -> int:
    """Largest b in [1, hi] with ok(b), assuming ok is monotone decreasing; 0 if none."""
    lo = 0
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if ok(mid):
            lo = mid
        else:
            hi = mid - 1
    return lo


@dataclass(frozen=True)
class _Task:
    model: ModelSpec
    gpu: GpuSpec
    tp: int
    grid: SweepGrid
    constraints: Constraints
    decode_ctx: int
    eff: Efficiency
    overlap: bool
    network: bool
    replicate_kv: bool


def _batches(task: _Task) -> list[int]:
    if task.grid.batches is not None:
        return sorted(set(task.grid.batches))
    out = set()
    b = 1
    while b <= task.grid.max_batch:
        out.add(b)
        b *= 2
    ctx = max(task.constraints.prompt_len, task.decode_ctx)
    cap = max_batch_in_memory(task.model, task.gpu, task.tp, ctx, task.replicate_kv)
    if cap >= 1:
        out.add(cap)
        evaluate = lambda b: _evaluate(task, b)  # noqa: E731
        for knee in (
            _largest(lambda b: evaluate(b).ttft <= task.constraints.max_ttft, cap),
            _largest(lambda b: evaluate(b).tbt <= task.constraints.max_tbt, cap),
        ):
            if knee >= 1:
                out.add(knee)
    return sorted(out)


def _evaluate(task: _Task, batch: int) -> PhaseResult:
    cfg = ClusterConfig(
        gpu=task.gpu,
        tp=task.tp,
        batch=batch,
        prompt_len=task.constraints.prompt_len,
        decode_ctx=task.decode_ctx,
        eff=task.eff,
        overlap=task.overlap,
        network=task.network,
        replicate_kv=task.replicate_kv,
    )
    return evaluate_config(task.model, cfg)


def _run_task(task: _Task) -> list[SweepPoint]:
    m, g, tp = task.model, task.gpu, task.tp
    if not 1 <= tp <= g.max_gpus or m.heads % tp:
        return [SweepPoint(m.name, g.name, tp, 0, None, ("tp",))]
    points = []
    for batch in _batches(task):
        result = _evaluate(task, batch)
        points.append(SweepPoint(m.name, g.name, tp, batch, result, task.constraints.violations(result)))
    return points


def _rank_key(point: SweepPoint, phase: str) -> tuple[float, int, int]:
    assert point.result is not None
    return (-point.result.tput_per_sm(phase), point.tp, point.batch)


def select_best(points: Iterable[SweepPoint], phase: str) -> SweepPoint | None:
    """Highest tokens/s/SM among feasible points; ties go to smaller tp, then smaller batch."""
    feasible = [p for p in points if p.feasible]
    return min(feasible, key=lambda p: _rank_key(p, phase)) if feasible else None


def _binding(points: Sequence[SweepPoint]) -> str:
    # the constraint that rejects the most evaluated points
    counts: dict[str, int] = {}
    for p in points:
        for reason in p.rejected:
            counts[reason] = counts.get(reason, 0) + 1
    if not counts:
        return "empty grid"
    return max(sorted(counts), key=lambda r: counts[r])


def sweep(
    models: ModelSpec | Sequence[ModelSpec],
    gpu_types: Sequence[GpuSpec],
    constraints: Constraints | None = None,
    grid: SweepGrid | None = None,
    decode_ctx: int = 1500,
    eff: Efficiency = IDEAL,
    overlap: bool = True,
    network: bool = True,
    replicate_kv: bool = False,
    workers: int = 1,
) -> SweepResult:
    """Evaluate every grid point for every (model, GPU type) and pick the best per phase.

    A point is feasible when it fits in memory and meets both the TTFT and the
    TBT bound. Output ordering is canonical regardless of ``workers``.
    """
    if isinstance(models, ModelSpec):
        models = [models]
    if not models or not gpu_types:
        raise ValueError("sweep needs at least one model and one GPU type")
    constraints = constraints or Constraints()
    grid = grid or SweepGrid()
    tasks = [
        _Task(m, g, tp, grid, constraints, decode_ctx, eff, overlap, network, replicate_kv)
        for m in models
        for g in gpu_types
        for tp in grid.tp_values(m, g)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_task, tasks))
    else:
        chunks = [_run_task(t) for t in tasks]
    points = tuple(p for chunk in chunks for p in chunk)

    best = []
    for m in models:
        for g in gpu_types:
            group = [p for p in points if p.model == m.name and p.gpu == g.name]
            for phase in PHASES:
                top = select_best(group, phase)
                if top is None:
                    best.append(Best(m.name, g.name, phase, None, _binding(group)))
                else:
                    best.append(Best(m.name, g.name, phase, top.result))
    return SweepResult(
        models=tuple(m.name for m in models),
        gpus=tuple(g.name for g in gpu_types),
        points=points,
        best=tuple(best),
        constraints=constraints,
    )


@dataclass(frozen=True)
class Comparison:
    model: str
    phase: str
    gpu: str
    tput_per_sm: float | None
    normalized: float | None


def compare_types(result: SweepResult, baseline: str) -> list[Comparison]:
    """tokens/s/SM of each GPU type's best config, relative to ``baseline``.

    Rows are ordered phase, then model, then GPU type as swept. Missing
    values (no feasible config) are ``None``.
    """
    if baseline not in result.gpus:
        raise KeyError(f"unknown baseline GPU {baseline!r}; swept: {', '.join(result.gpus)}")
    rows = []
    for phase in PHASES:
        for model in result.models:
            base = result.best_for(model, baseline, phase)
            base_v = base.result.tput_per_sm(phase) if base.result else None
            for gpu in result.gpus:
                b = result.best_for(model, gpu, phase)
                v = b.result.tput_per_sm(phase) if b.result else None
                norm = v / base_v if v is not None and base_v else None
                rows.append(Comparison(model, phase, gpu, v, norm))
    return rows


def ratio(rows: Sequence[Comparison], model: str, phase: str, gpu: str) -> float | None:
    for r in rows:
        if (r.model, r.phase, r.gpu) == (model, phase, gpu):
            return r.normalized
    raise KeyError((model, phase, gpu))
