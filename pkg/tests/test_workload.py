import dataclasses
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from litesim.hardware import ConfigError
from litesim.workload import (
    ModelSpec,
    allreduce_bytes_per_gpu,
    decode_stage_costs,
    default_model_config_text,
    kv_cache_bytes,
    load_model_spec,
    param_count,
    prefill_stage_costs,
    weight_bytes_per_gpu,
)

ARCH = {
    "llama3-70b": (80, 8192, 64, 8, 28672, 128256),
    "gpt3-175b": (96, 12288, 96, 96, 49152, 50257),
    "llama3-405b": (126, 16384, 128, 8, 53248, 128256),
}


def oracle_params(layers, h, heads, kvh, ffn, vocab, gated, tied):
    hd = h // heads
    attn = 2 * h * h + 2 * h * kvh * hd
    mlp = (3 if gated else 2) * h * ffn
    return layers * (attn + mlp) + vocab * h * (1 if tied else 2)


def test_shipped_architectures(models):
    for name, arch in ARCH.items():
        m = models[name]
        assert (m.layers, m.hidden, m.heads, m.kv_heads, m.ffn_dim, m.vocab) == arch


@pytest.mark.parametrize(
    "name, nominal, gated, tied",
    [("llama3-70b", 70e9, True, False), ("gpt3-175b", 175e9, False, True), ("llama3-405b", 405e9, True, False)],
)
def test_param_count(models, name, nominal, gated, tied):
    p = param_count(models[name])
    assert p == oracle_params(*ARCH[name], gated, tied)
    assert abs(p / nominal - 1) <= 0.05


def test_llama70b_param_count_value(models):
    assert param_count(models["llama3-70b"]) == pytest.approx(70.6e9, rel=0.01)


def test_zero_layers_is_embeddings_only(models):
    m = dataclasses.replace(models["llama3-70b"], layers=0, nominal_params=None)
    assert param_count(m) == 2 * m.vocab * m.hidden
    g = dataclasses.replace(models["gpt3-175b"], layers=0, nominal_params=None)
    assert param_count(g) == g.vocab * g.hidden


def test_nominal_mismatch_rejected(models):
    with pytest.raises(ConfigError, match="nominal"):
        dataclasses.replace(models["llama3-70b"], nominal_params=100e9)


def test_load_by_name_and_unknown():
    text = default_model_config_text()
    assert load_model_spec(text, "gpt3-175b").kv_heads == 96
    with pytest.raises(ConfigError, match="mystery-7b"):
        load_model_spec(text, "mystery-7b")


def test_heads_must_divide():
    with pytest.raises(ConfigError, match="kv_heads"):
        ModelSpec("bad", layers=1, hidden=64, heads=8, kv_heads=3, ffn_dim=64, vocab=10)


def test_allreduce_examples():
    assert allreduce_bytes_per_gpu(12345, 2, 1) == 0
    assert allreduce_bytes_per_gpu(2**29, 2, 4) == 1.5 * 2**30
    assert allreduce_bytes_per_gpu(1000, 2, 2) == 2 * 1000
    with pytest.raises(ValueError):
        allreduce_bytes_per_gpu(1, 2, 0)


@given(n=st.integers(1, 10**9), b=st.sampled_from([1, 2, 4]), tp=st.integers(1, 63))
def test_allreduce_monotone_and_bounded(n, b, tp):
    lo, hi = allreduce_bytes_per_gpu(n, b, tp), allreduce_bytes_per_gpu(n, b, tp + 1)
    assert lo <= hi <= 2 * n * b


def test_kv_cache_examples(fp16_models):
    m = fp16_models["llama3-70b"]
    assert kv_cache_bytes(m, 1, 1500, 1) == 491_520_000
    assert kv_cache_bytes(m, 1, 1500, 8) == 61_440_000
    with pytest.raises(ValueError):
        kv_cache_bytes(m, 0, 1500, 1)
    with pytest.raises(ValueError):
        kv_cache_bytes(m, 1, 1500, 0)


def test_kv_split_versus_replicated(models):
    m = models["llama3-70b"]
    split = kv_cache_bytes(m, 1, 1500, 32)
    assert split * 32 == kv_cache_bytes(m, 1, 1500, 1)
    assert kv_cache_bytes(m, 1, 1500, 32, replicate_kv=True) == kv_cache_bytes(m, 1, 1500, 8)


def flop_oracle(m, batch, seq):
    return 2 * param_count(m) * batch * seq + 2 * m.layers * seq**2 * m.hidden * batch


@pytest.mark.parametrize("name", list(ARCH))
def test_prefill_flops_match_oracle(models, name):
    m = models[name]
    got = prefill_stage_costs(m, 1, 1500, 1).total("flops")
    assert got == pytest.approx(flop_oracle(m, 1, 1500), rel=0.02)


def test_prefill_flops_llama70b_value(models):
    m = models["llama3-70b"]
    assert 2 * m.layers * 1500**2 * m.hidden == pytest.approx(2.95e12, rel=0.01)
    assert prefill_stage_costs(m, 1, 1500, 1).total("flops") == pytest.approx(2.147e14, rel=0.02)


def test_stage_order(models):
    w = prefill_stage_costs(models["llama3-70b"], 1, 16, 2)
    assert [s.label for s in w.layer_stages] == [
        "qkv_proj", "attention", "o_proj", "allreduce_attn", "mlp", "allreduce_mlp"
    ]
    assert len(w.stages) == 80 * 6 + 1 and w.stages[-1].label == "lm_head"


@pytest.mark.parametrize("build", [prefill_stage_costs, decode_stage_costs])
def test_no_network_alone(models, build):
    for m in models.values():
        assert all(s.net_bytes == 0 for s in build(m, 4, 1500, 1).stages)


@pytest.mark.parametrize("build", [prefill_stage_costs, decode_stage_costs])
def test_tp_must_divide_heads(models, build):
    with pytest.raises(ValueError, match="heads"):
        build(models["llama3-70b"], 1, 100, 3)


@pytest.mark.parametrize("name", list(ARCH))
@pytest.mark.parametrize("tp", [2, 4, 8])
def test_flops_conserved_across_tp(models, name, tp):
    m = models[name]
    one = prefill_stage_costs(m, 2, 300, 1).total("flops")
    assert tp * prefill_stage_costs(m, 2, 300, tp).total("flops") == pytest.approx(one, rel=1e-12)


@pytest.mark.parametrize("name", list(ARCH))
def test_weights_shard_exactly(models, name):
    m = models[name]
    for tp in (2, 4, 8):
        assert weight_bytes_per_gpu(m, tp) == pytest.approx(weight_bytes_per_gpu(m, 1) / tp, rel=1e-12)


def test_decode_reads_all_matmul_weights(fp16_models):
    m = fp16_models["llama3-70b"]
    mem = decode_stage_costs(m, 1, 1500, 1).total("mem_bytes")
    # the input embedding is a table lookup, so only its rows are touched
    matmul_weights = (param_count(m) - m.vocab * m.hidden) * m.bytes_per_param
    assert mem >= matmul_weights
    assert matmul_weights == pytest.approx(1.39e11, rel=0.01)


@pytest.mark.parametrize("name", list(ARCH))
def test_decode_attention_linear_in_context(models, name):
    m = models[name]
    a = decode_stage_costs(m, 1, 1500, 1).total("mem_bytes")
    b = decode_stage_costs(m, 1, 3000, 1).total("mem_bytes")
    assert b - a == pytest.approx(kv_cache_bytes(m, 1, 1500, 1), rel=1e-9)


def by_label(work):
    return {s.label: s for s in work.layer_stages}


@pytest.mark.parametrize("name", list(ARCH))
def test_batch_doubling(models, name):
    m = models[name]
    p1, p2 = by_label(prefill_stage_costs(m, 3, 200, 4)), by_label(prefill_stage_costs(m, 6, 200, 4))
    assert p2["attention"].flops == 2 * p1["attention"].flops
    assert p2["allreduce_mlp"].net_bytes == 2 * p1["allreduce_mlp"].net_bytes
    d1, d2 = decode_stage_costs(m, 3, 900, 4), decode_stage_costs(m, 6, 900, 4)
    assert by_label(d2)["attention"].mem_bytes == pytest.approx(2 * by_label(d1)["attention"].mem_bytes)
    assert kv_cache_bytes(m, 6, 900, 4) == 2 * kv_cache_bytes(m, 3, 900, 4)
    # weight bytes are the batch-independent intercept of each matmul stage
    for label in ("qkv_proj", "o_proj", "mlp"):
        w = 2 * by_label(d1)[label].mem_bytes - by_label(d2)[label].mem_bytes
        assert w == pytest.approx(2 * by_label(decode_stage_costs(m, 1, 900, 4))[label].mem_bytes
                                  - by_label(decode_stage_costs(m, 2, 900, 4))[label].mem_bytes)


@settings(max_examples=60, deadline=None)
@given(
    name=st.sampled_from(list(ARCH)),
    batch=st.integers(1, 512),
    seq=st.integers(1, 8192),
    tp_exp=st.integers(0, 5),
    replicate=st.booleans(),
)
def test_costs_non_negative_and_finite(models, name, batch, seq, tp_exp, replicate):
    m = models[name]
    tp = 2**tp_exp
    for build in (prefill_stage_costs, decode_stage_costs):
        for s in build(m, batch, seq, tp, replicate).stages:
            for v in (s.flops, s.mem_bytes, s.net_bytes):
                assert v >= 0 and math.isfinite(v)
