"""Roofline timing of stage workloads and whole-configuration evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

from .hardware import GpuSpec
from .workload import (
    ModelSpec,
    PhaseWorkload,
    StageCost,
    decode_stage_costs,
    kv_cache_bytes,
    prefill_stage_costs,
    weight_bytes_per_gpu,
)

Resource = Literal["compute", "memory", "network"]
RESOURCES: tuple[Resource, ...] = ("compute", "memory", "network")


@dataclass(frozen=True)
class Efficiency:
    """Attainable fraction of each peak rate."""

    compute: float = 1.0
    memory: float = 1.0
    network: float = 1.0

    def __post_init__(self) -> None:
        for name in RESOURCES:
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ValueError(f"{name} efficiency must be in (0, 1], got {value!r}")


IDEAL = Efficiency()


@dataclass(frozen=True)
class StageTime:
    label: str
    compute_s: float
    memory_s: float
    network_s: float

    @property
    def time(self) -> float:
        return max(self.compute_s, self.memory_s, self.network_s)

    @property
    def bottleneck(self) -> Resource:
        # max() returns the first maximal element, giving the compute > memory > network tie-break
        return max(zip(RESOURCES, (self.compute_s, self.memory_s, self.network_s)), key=lambda rv: rv[1])[0]


def stage_time(cost: StageCost, gpu: GpuSpec, eff: Efficiency = IDEAL, network: bool = True) -> StageTime:
    """Roofline time of one stage: the slowest of compute, memory and network."""
    return StageTime(
        cost.label,
        compute_s=cost.flops / (gpu.tflops * 1e12 * eff.compute),
        memory_s=cost.mem_bytes / (gpu.mem_bw * 1e9 * eff.memory),
        network_s=cost.net_bytes / (gpu.net_bw * 1e9 * eff.network) if network else 0.0,
    )


@dataclass(frozen=True)
class PhaseLatency:
    total: float
    stages: tuple[StageTime, ...]
    repeats: tuple[int, ...]

    def time_by_resource(self) -> dict[Resource, float]:
        """Seconds of the phase attributed to each stage's binding resource."""
        out: dict[Resource, float] = {r: 0.0 for r in RESOURCES}
        for st, n in zip(self.stages, self.repeats):
            out[st.bottleneck] += st.time * n
        return out

    @property
    def bottleneck(self) -> Resource:
        shares = self.time_by_resource()
        return max(RESOURCES, key=lambda r: shares[r])


def _fold_collectives(times: list[StageTime]) -> list[StageTime]:
    # A collective runs concurrently with the stage producing its payload.
    out: list[StageTime] = []
    for st in times:
        if out and st.compute_s == 0 and st.memory_s == 0 and st.network_s > 0:
            prev = out.pop()
            st = StageTime(
                f"{prev.label}+{st.label}",
                prev.compute_s,
                prev.memory_s,
                max(prev.network_s, st.network_s),
            )
        out.append(st)
    return out


def phase_latency(
    work: PhaseWorkload,
    gpu: GpuSpec,
    eff: Efficiency = IDEAL,
    overlap: bool = False,
    network: bool = True,
) -> PhaseLatency:
    """Sum of stage times; stages run back to back.

    With ``overlap`` each all-reduce is hidden behind the stage that produced
    its payload (the pair costs the max of their resource times).
    ``network=False`` zeroes every network time.
    """
    if work.layer_stages and work.layers:
        # every layer is identical: time one layer and scale
        layer = [stage_time(s, gpu, eff, network) for s in work.layer_stages]
        tail = [stage_time(s, gpu, eff, network) for s in work.stages[work.layers * len(work.layer_stages):]]
        if overlap:
            layer, tail = _fold_collectives(layer), _fold_collectives(tail)
        stages = tuple(layer + tail)
        repeats = (work.layers,) * len(layer) + (1,) * len(tail)
    else:
        times = [stage_time(s, gpu, eff, network) for s in work.stages]
        stages = tuple(_fold_collectives(times) if overlap else times)
        repeats = (1,) * len(stages)
    total = sum(st.time * n for st, n in zip(stages, repeats))
    return PhaseLatency(total, stages, repeats)


@dataclass(frozen=True)
class ClusterConfig:
    gpu: GpuSpec
    tp: int
    batch: int
    prompt_len: int = 1500
    decode_ctx: int = 1500
    eff: Efficiency = IDEAL
    overlap: bool = True
    network: bool = True
    replicate_kv: bool = False

    def __post_init__(self) -> None:
        if isinstance(self.tp, bool) or not isinstance(self.tp, int) or not 1 <= self.tp <= self.gpu.max_gpus:
            raise ValueError(f"tp must be in [1, {self.gpu.max_gpus}] for {self.gpu.name}, got {self.tp!r}")
        if isinstance(self.batch, bool) or not isinstance(self.batch, int) or self.batch < 1:
            raise ValueError(f"batch must be a positive integer, got {self.batch!r}")
        if self.prompt_len < 1 or self.decode_ctx < 0:
            raise ValueError("prompt_len must be >= 1 and decode_ctx >= 0")

    @property
    def total_sms(self) -> int:
        return self.tp * self.gpu.sms


@dataclass(frozen=True)
class PhaseResult:
    cfg: ClusterConfig
    model: str
    ttft: float
    tbt: float
    prefill_tput: float
    decode_tput: float
    prefill_tput_per_sm: float
    decode_tput_per_sm: float
    fits_memory: bool
    mem_required: float
    prefill: PhaseLatency = field(repr=False)
    decode: PhaseLatency = field(repr=False)

    def tput_per_sm(self, phase: str) -> float:
        return self.prefill_tput_per_sm if phase == "prefill" else self.decode_tput_per_sm

    def tput(self, phase: str) -> float:
        return self.prefill_tput if phase == "prefill" else self.decode_tput

    def latency(self, phase: str) -> PhaseLatency:
        return self.prefill if phase == "prefill" else self.decode


def memory_required(model: ModelSpec, cfg: ClusterConfig) -> float:
    """Bytes per GPU: resident weights plus the KV cache at the longer of prompt and decode context."""
    ctx = max(cfg.prompt_len, cfg.decode_ctx)
    return weight_bytes_per_gpu(model, cfg.tp, cfg.replicate_kv) + kv_cache_bytes(
        model, cfg.batch, ctx, cfg.tp, cfg.replicate_kv
    )


def max_batch_in_memory(model: ModelSpec, gpu: GpuSpec, tp: int, ctx: int, replicate_kv: bool = False) -> int:
    """Largest batch whose weights and KV cache fit; 0 when even the weights do not."""
    free = gpu.mem_capacity * 1e9 - weight_bytes_per_gpu(model, tp, replicate_kv)
    per_seq = kv_cache_bytes(model, 1, ctx, tp, replicate_kv)
    if free < 0:
        return 0
    if per_seq == 0:
        raise ValueError("context length 0 leaves batch unbounded by memory")
    return int(free // per_seq)


def evaluate_config(model: ModelSpec, cfg: ClusterConfig) -> PhaseResult:
    pre = prefill_stage_costs(model, cfg.batch, cfg.prompt_len, cfg.tp, cfg.replicate_kv)
    dec = decode_stage_costs(model, cfg.batch, cfg.decode_ctx, cfg.tp, cfg.replicate_kv)
    pre_lat = phase_latency(pre, cfg.gpu, cfg.eff, cfg.overlap, cfg.network)
    dec_lat = phase_latency(dec, cfg.gpu, cfg.eff, cfg.overlap, cfg.network)
    ttft, tbt = pre_lat.total, dec_lat.total
    prefill_tput = cfg.batch * cfg.prompt_len / ttft
    decode_tput = cfg.batch / tbt
    need = memory_required(model, cfg)
    return PhaseResult(
        cfg=cfg,
        model=model.name,
        ttft=ttft,
        tbt=tbt,
        prefill_tput=prefill_tput,
        decode_tput=decode_tput,
        prefill_tput_per_sm=prefill_tput / cfg.total_sms,
        decode_tput_per_sm=decode_tput / cfg.total_sms,
        fits_memory=need <= cfg.gpu.mem_capacity * 1e9,
        mem_required=need,
        prefill=pre_lat,
        decode=dec_lat,
    )
