"""Transformer architectures and per-stage resource demands under tensor parallelism.

Stage accounting, per GPU, for ``tokens`` = batch x new tokens:

* matmuls cost ``2*m*n*k`` FLOPs; weight bytes are the local shard;
* residual-stream activations are kept sequence-sharded across the tensor
  parallel group, so every activation read or write is a 1/tp share;
* fused attention never writes the score matrix; causal prefill halves the
  score and value FLOPs; decode additionally streams the KV cache;
* each layer issues two ring all-reduces of ``tokens * hidden`` activations.

When ``tp`` exceeds ``kv_heads`` the KV projection and cache are split among
the GPUs that share a KV head (the default), so every per-GPU demand scales
exactly as 1/tp. ``replicate_kv=True`` instead keeps one full KV head per GPU.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from typing import Literal, Mapping

from .hardware import ConfigError, _from_mapping, parse_yaml

Phase = Literal["prefill", "decode"]

MODEL_FIELDS = {
    "name": "name",
    "layers": "layers",
    "hidden": "hidden",
    "heads": "heads",
    "kv_heads": "kv_heads",
    "head_dim": "head_dim",
    "ffn_dim": "ffn_dim",
    "vocab": "vocab",
    "bytes_per_param": "bytes_per_param",
    "bytes_per_act": "bytes_per_act",
    "mlp_kind": "mlp_kind",
    "tie_embeddings": "tie_embeddings",
    "nominal_params": "nominal_params",
}

PARAM_TOLERANCE = 0.05


@dataclass(frozen=True)
class ModelSpec:
    name: str
    layers: int
    hidden: int
    heads: int
    kv_heads: int
    ffn_dim: int
    vocab: int
    head_dim: int | None = None
    bytes_per_param: float = 2
    bytes_per_act: float = 2
    mlp_kind: str = "gated"
    tie_embeddings: bool = False
    nominal_params: float | None = None

    def __post_init__(self) -> None:
        for attr in ("layers", "vocab"):
            value = getattr(self, attr)
            if isinstance(value, bool) or not isinstance(value, int) or value < 0:
                raise ConfigError(f"{self.name}: {attr} must be a non-negative integer, got {value!r}")
        for attr in ("hidden", "heads", "kv_heads", "ffn_dim"):
            value = getattr(self, attr)
            if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
                raise ConfigError(f"{self.name}: {attr} must be a positive integer, got {value!r}")
        for attr in ("bytes_per_param", "bytes_per_act"):
            value = getattr(self, attr)
            if isinstance(value, bool) or not isinstance(value, (int, float)) or value <= 0:
                raise ConfigError(f"{self.name}: {attr} must be positive, got {value!r}")
        if self.heads % self.kv_heads:
            raise ConfigError(f"{self.name}: heads ({self.heads}) not divisible by kv_heads ({self.kv_heads})")
        if self.head_dim is None:
            if self.hidden % self.heads:
                raise ConfigError(f"{self.name}: hidden ({self.hidden}) not divisible by heads ({self.heads})")
            object.__setattr__(self, "head_dim", self.hidden // self.heads)
        elif isinstance(self.head_dim, bool) or not isinstance(self.head_dim, int) or self.head_dim <= 0:
            raise ConfigError(f"{self.name}: head_dim must be a positive integer, got {self.head_dim!r}")
        if self.mlp_kind not in ("gated", "plain"):
            raise ConfigError(f"{self.name}: mlp_kind must be 'gated' or 'plain', got {self.mlp_kind!r}")
        if self.nominal_params is not None:
            if isinstance(self.nominal_params, bool) or not isinstance(self.nominal_params, (int, float)):
                raise ConfigError(f"{self.name}: nominal_params must be a number, got {self.nominal_params!r}")
            actual = param_count(self)
            if abs(actual - self.nominal_params) > PARAM_TOLERANCE * self.nominal_params:
                raise ConfigError(
                    f"{self.name}: nominal_params {self.nominal_params:.4g} disagrees with "
                    f"computed parameter count {actual:.4g} by more than {PARAM_TOLERANCE:.0%}"
                )

    @property
    def q_dim(self) -> int:
        return self.heads * self.head_dim

    @property
    def kv_dim(self) -> int:
        return self.kv_heads * self.head_dim

    @property
    def mlp_matrices(self) -> int:
        return 3 if self.mlp_kind == "gated" else 2


@dataclass(frozen=True)
class StageCost:
    label: str
    flops: float
    mem_bytes: float
    net_bytes: float = 0.0

    @property
    def is_collective(self) -> bool:
        return self.net_bytes > 0 and self.flops == 0 and self.mem_bytes == 0


@dataclass(frozen=True)
class PhaseWorkload:
    phase: Phase
    stages: tuple[StageCost, ...]
    tokens_processed: int
    layer_stages: tuple[StageCost, ...] = field(default=(), repr=False)
    layers: int = 0

    def __post_init__(self) -> None:
        if not self.stages:
            raise ValueError("a phase needs at least one stage")
        if self.tokens_processed <= 0:
            raise ValueError("tokens_processed must be positive")

    def total(self, attr: str) -> float:
        return sum(getattr(s, attr) for s in self.stages)


def load_model_specs(config_text: str) -> list[ModelSpec]:
    doc = parse_yaml(config_text, "model config")
    if not isinstance(doc, Mapping) or "models" not in doc:
        raise ConfigError("model config: top-level 'models' list is required")
    entries = doc["models"]
    if not isinstance(entries, list) or not entries:
        raise ConfigError("model config: 'models' must be a non-empty list")
    models: list[ModelSpec] = []
    for i, entry in enumerate(entries):
        label = entry.get("name", "?") if isinstance(entry, Mapping) else "?"
        model = _from_mapping(ModelSpec, entry, MODEL_FIELDS, f"models[{i}] ({label})")
        if any(m.name == model.name for m in models):
            raise ConfigError(f"models[{i}]: duplicate name {model.name!r}")
        models.append(model)
    return models


def load_model_spec(config_text: str, name: str | None = None) -> ModelSpec:
    """Load one model; ``name`` is required when the document holds several."""
    models = load_model_specs(config_text)
    if name is None:
        if len(models) != 1:
            raise ConfigError("model config holds several models; pass a name")
        return models[0]
    for model in models:
        if model.name == name:
            return model
    raise ConfigError(f"unknown model {name!r}; available: {', '.join(m.name for m in models)}")


def default_model_config_text() -> str:
    return resources.files("litesim").joinpath("data/models.yaml").read_text()


def default_models() -> list[ModelSpec]:
    return load_model_specs(default_model_config_text())


def embedding_params(model: ModelSpec) -> int:
    return model.vocab * model.hidden * (1 if model.tie_embeddings else 2)


def layer_params(model: ModelSpec) -> int:
    h = model.hidden
    attention = h * model.q_dim + 2 * h * model.kv_dim + model.q_dim * h
    mlp = model.mlp_matrices * h * model.ffn_dim
    return attention + mlp


def param_count(model: ModelSpec) -> int:
    """Matmul weights of every layer plus embedding and LM head (norms and biases ignored)."""
    return model.layers * layer_params(model) + embedding_params(model)


def allreduce_bytes_per_gpu(elements: float, bytes_per_elem: float, tp: int) -> float:
    """Bytes each GPU sends in a ring all-reduce of ``elements`` values."""
    if tp < 1:
        raise ValueError(f"tp must be >= 1, got {tp!r}")
    return 2.0 * (tp - 1) / tp * elements * bytes_per_elem


def _kv_heads_per_gpu(model: ModelSpec, tp: int, replicate_kv: bool) -> float:
    if replicate_kv:
        return max(model.kv_heads / tp, 1.0)
    return model.kv_heads / tp


def kv_cache_bytes(model: ModelSpec, batch: int, context_len: int, tp: int, replicate_kv: bool = False) -> float:
    if tp < 1:
        raise ValueError(f"tp must be >= 1, got {tp!r}")
    if batch < 1:
        raise ValueError(f"batch must be >= 1, got {batch!r}")
    if context_len < 0:
        raise ValueError(f"context_len must be >= 0, got {context_len!r}")
    kvh = _kv_heads_per_gpu(model, tp, replicate_kv)
    return 2 * model.layers * kvh * model.head_dim * context_len * batch * model.bytes_per_act


def weight_bytes_per_gpu(model: ModelSpec, tp: int, replicate_kv: bool = False) -> float:
    """Resident weight bytes per GPU, including the vocab-sharded embedding tables."""
    h = model.hidden
    kvh = _kv_heads_per_gpu(model, tp, replicate_kv)
    per_layer = (
        h * model.q_dim / tp
        + 2 * h * kvh * model.head_dim
        + model.q_dim * h / tp
        + model.mlp_matrices * h * model.ffn_dim / tp
    )
    return (model.layers * per_layer + embedding_params(model) / tp) * model.bytes_per_param


def _check_tp(model: ModelSpec, tp: int) -> None:
    if isinstance(tp, bool) or not isinstance(tp, int) or tp < 1:
        raise ValueError(f"tp must be a positive integer, got {tp!r}")
    if tp > model.heads or model.heads % tp:
        raise ValueError(f"{model.name}: tp={tp} does not evenly divide {model.heads} attention heads")


def _layer_stages(
    model: ModelSpec,
    batch: int,
    new_tokens: int,
    context_len: int,
    tp: int,
    decode: bool,
    replicate_kv: bool,
) -> tuple[StageCost, ...]:
    h, hd, tp_f = model.hidden, model.head_dim, float(tp)
    bw, ba = model.bytes_per_param, model.bytes_per_act
    tokens = batch * new_tokens
    q_local = model.q_dim / tp_f
    kv_local = _kv_heads_per_gpu(model, tp, replicate_kv) * hd
    ffn_local = model.ffn_dim / tp_f
    resid = tokens * h / tp_f  # sequence-sharded residual activations

    qkv_out = q_local + 2 * kv_local
    qkv = StageCost(
        "qkv_proj",
        flops=2.0 * tokens * h * qkv_out,
        mem_bytes=h * qkv_out * bw + (resid + tokens * qkv_out) * ba,
    )

    if decode:
        # one query per sequence against context_len cached keys/values
        attn_flops = 4.0 * batch * context_len * q_local
        attn_bytes = (
            kv_cache_bytes(model, batch, context_len, tp, replicate_kv) / model.layers
            + batch * 2 * kv_local * ba  # append the new K/V
            + 2 * tokens * q_local * ba  # read Q, write O
        )
    else:
        # causal mask halves QK^T and PV
        attn_flops = 0.5 * 4.0 * batch * new_tokens * new_tokens * q_local
        attn_bytes = tokens * (2 * q_local + 2 * kv_local) * ba
    attention = StageCost("attention", flops=attn_flops, mem_bytes=attn_bytes)

    o_proj = StageCost(
        "o_proj",
        flops=2.0 * tokens * q_local * h,
        mem_bytes=q_local * h * bw + (tokens * q_local + resid) * ba,
    )
    ar = allreduce_bytes_per_gpu(tokens * h, ba, tp)
    allreduce_attn = StageCost("allreduce_attn", flops=0.0, mem_bytes=0.0, net_bytes=ar)

    n_up = model.mlp_matrices - 1
    mlp = StageCost(
        "mlp",
        flops=2.0 * tokens * h * ffn_local * model.mlp_matrices,
        mem_bytes=model.mlp_matrices * h * ffn_local * bw
        # residual in and out, up/gate outputs written then read back
        + (2 * resid + 2 * n_up * tokens * ffn_local) * ba,
    )
    allreduce_mlp = StageCost("allreduce_mlp", flops=0.0, mem_bytes=0.0, net_bytes=ar)
    return (qkv, attention, o_proj, allreduce_attn, mlp, allreduce_mlp)


def _lm_head(model: ModelSpec, tokens: int, tp: int) -> StageCost:
    v_local = model.vocab / float(tp)
    return StageCost(
        "lm_head",
        flops=2.0 * tokens * model.hidden * v_local,
        mem_bytes=model.hidden * v_local * model.bytes_per_param
        + (tokens * model.hidden / tp + tokens * v_local) * model.bytes_per_act,
    )


def _phase(phase: Phase, layer: tuple[StageCost, ...], head: StageCost, layers: int, tokens: int) -> PhaseWorkload:
    return PhaseWorkload(
        phase=phase,
        stages=layer * layers + (head,),
        tokens_processed=tokens,
        layer_stages=layer,
        layers=layers,
    )


def prefill_stage_costs(
    model: ModelSpec, batch: int, seq: int, tp: int, replicate_kv: bool = False
) -> PhaseWorkload:
    """Per-GPU stage demands for processing ``batch`` prompts of ``seq`` tokens.

    Logits are produced for every prompt position.
    """
    _check_tp(model, tp)
    if batch < 1 or seq < 1:
        raise ValueError(f"batch and seq must be >= 1, got batch={batch!r} seq={seq!r}")
    layer = _layer_stages(model, batch, seq, 0, tp, decode=False, replicate_kv=replicate_kv)
    return _phase("prefill", layer, _lm_head(model, batch * seq, tp), model.layers, batch * seq)


def decode_stage_costs(
    model: ModelSpec, batch: int, context_len: int, tp: int, replicate_kv: bool = False
) -> PhaseWorkload:
    """Per-GPU stage demands for one decode step with ``context_len`` cached tokens."""
    _check_tp(model, tp)
    if batch < 1 or context_len < 0:
        raise ValueError(f"invalid batch={batch!r} or context_len={context_len!r}")
    layer = _layer_stages(model, batch, 1, context_len, tp, decode=True, replicate_kv=replicate_kv)
    return _phase("decode", layer, _lm_head(model, batch, tp), model.layers, batch)
