"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected by conftest and echoed in the pytest summary.
Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import random
import time

import pytest

from conftest import ACCEPTANCE_LINES
from litesim.hardware import (
    DieSpec,
    default_gpu_specs,
    derive_lite_spec,
    die_yield,
    relative_cost_per_compute,
    shoreline_bandwidth_ratio,
)
from litesim.roofline import ClusterConfig, evaluate_config
from litesim.search import Constraints, SweepGrid, compare_types, ratio, select_best, sweep
from litesim.workload import default_models, param_count, prefill_stage_costs

MODELS = ("llama3-70b", "gpt3-175b", "llama3-405b")


def verdict(tag: str, ok: bool, detail: str, elapsed: float, budget: float) -> None:
    within = elapsed < budget
    line = f"[{'PASS' if ok and within else 'FAIL'}] {tag}: {detail} ({elapsed:.2f} s, budget {budget:g} s)"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line
    assert within, line


@pytest.fixture(scope="module")
def timed_sweep():
    t0 = time.perf_counter()
    res = sweep(default_models(), default_gpu_specs())
    return res, compare_types(res, "h100"), time.perf_counter() - t0


def test_criterion_1_gpu_table():
    t0 = time.perf_counter()
    table = {
        "h100": (2000, 80, 3352, 450, 132),
        "lite": (500, 20, 838, 112.5, 33),
        "lite+netbw": (500, 20, 838, 225, 33),
        "lite+netbw+flops": (550, 20, 419, 225, 33),
        "lite+membw": (500, 20, 1675, 112.5, 33),
        "lite+membw+netbw": (500, 20, 1675, 225, 33),
    }
    got = {g.name: (g.tflops, g.mem_capacity, g.mem_bw, g.net_bw, g.sms) for g in default_gpu_specs()}
    gpus = {g.name: g for g in default_gpu_specs()}
    lite = derive_lite_spec(gpus["h100"], 4)
    derived_ok = (lite.tflops, lite.mem_capacity, lite.mem_bw, lite.net_bw, lite.sms, lite.max_gpus) == (
        500, 20, 838, 112.5, 33, 32
    )
    ok = got == table and derived_ok
    verdict("1 GPU table", ok, f"{len(got)} rows match: {got == table}, derived lite matches: {derived_ok}",
            time.perf_counter() - t0, 1)


def test_criterion_2_economics():
    t0 = time.perf_counter()
    base = DieSpec()
    y_ratio = die_yield(DieSpec(area=base.area / 4)) / die_yield(base)
    reduction = 1 - relative_cost_per_compute(base, 4)
    shore = shoreline_bandwidth_ratio(4)
    ok = abs(y_ratio - 1.8) <= 0.05 and 0.40 <= reduction <= 0.50 and shore == 2.0
    verdict("2 economics", ok, f"yield ratio {y_ratio:.4f}, cost reduction {reduction:.1%}, shoreline {shore}",
            time.perf_counter() - t0, 1)


def test_criterion_3_scale_equivalence():
    t0 = time.perf_counter()
    h100 = next(g for g in default_gpu_specs() if g.name == "h100")
    lite = derive_lite_spec(h100, 4)
    worst = 0.0
    for m in default_models():
        for k in (1, 2, 4, 8):
            for batch in (1, 16, 128):
                big = evaluate_config(m, ClusterConfig(h100, tp=k, batch=batch, network=False))
                small = evaluate_config(m, ClusterConfig(lite, tp=4 * k, batch=batch, network=False))
                for phase in ("prefill", "decode"):
                    a, b = big.tput_per_sm(phase), small.tput_per_sm(phase)
                    worst = max(worst, abs(a - b) / a)
    verdict("3 scale equivalence", worst <= 1e-9, f"max relative difference {worst:.2e}",
            time.perf_counter() - t0, 10)


def _fmt(rows, phase, pairs):
    return ", ".join(f"{m}/{g} {ratio(rows, m, phase, g):.3f}" for m, g in pairs)


def _r(rows, phase):
    return lambda m, g: ratio(rows, m, phase, g)


# part -> (pairs echoed in the verdict line, predicate over the normalized lookup)
PREFILL = {
    "a": ([("llama3-70b", "lite")], lambda r: abs(r("llama3-70b", "lite") - 1) <= 0.15),
    "b": ([("llama3-405b", "lite")], lambda r: r("llama3-405b", "lite") < 1),
    "c": (
        [(m, g) for m in ("gpt3-175b", "llama3-405b") for g in ("lite", "lite+netbw")],
        lambda r: all(r(m, "lite+netbw") >= r(m, "lite") for m in ("gpt3-175b", "llama3-405b")),
    ),
    "d": (
        [(m, g) for m in MODELS for g in ("lite+netbw", "lite+netbw+flops")],
        lambda r: all(r(m, "lite+netbw+flops") > r(m, "lite+netbw") for m in MODELS),
    ),
}

DECODE = {
    "a": ([(m, "lite") for m in MODELS], lambda r: all(r(m, "lite") < 1 for m in MODELS)),
    "b": (
        [("llama3-70b", "lite"), ("gpt3-175b", "lite")],
        lambda r: r("gpt3-175b", "lite") < r("llama3-70b", "lite"),
    ),
    "c": (
        [(m, g) for m in MODELS for g in ("lite+membw", "lite+membw+netbw")],
        lambda r: all(r(m, g) >= 1 for m in MODELS for g in ("lite+membw", "lite+membw+netbw")),
    ),
}


@pytest.mark.parametrize("part", sorted(PREFILL))
def test_criterion_4_prefill_ordering(timed_sweep, part):
    _, rows, elapsed = timed_sweep
    pairs, check = PREFILL[part]
    verdict(f"4{part} prefill ordering", check(_r(rows, "prefill")), _fmt(rows, "prefill", pairs), elapsed, 60)


@pytest.mark.parametrize("part", sorted(DECODE))
def test_criterion_5_decode_ordering(timed_sweep, part):
    _, rows, elapsed = timed_sweep
    pairs, check = DECODE[part]
    verdict(f"5{part} decode ordering", check(_r(rows, "decode")), _fmt(rows, "decode", pairs), elapsed, 60)


def _violating_best(res, cons):
    bad = []
    for b in res.best:
        if b.result is None:
            continue
        again = evaluate_config(default_models()[MODELS.index(b.model)], b.result.cfg)
        if again != b.result or cons.violations(again):
            bad.append((b.model, b.gpu, b.phase))
    return bad


def test_criterion_6_constraint_soundness(timed_sweep):
    res, _, _ = timed_sweep
    t0 = time.perf_counter()
    bad = _violating_best(res, Constraints())
    rng = random.Random(20241018)
    models, gpus = default_models(), default_gpu_specs()
    draws = 100
    for _ in range(draws):
        cons = Constraints(max_ttft=rng.uniform(0.02, 3.0), max_tbt=rng.uniform(0.002, 0.2))
        # one model per draw keeps the fuzz inside its budget; all models are covered
        m = rng.choice(models)
        bad += _violating_best(sweep(m, gpus, cons), cons)
    verdict("6 constraint soundness", not bad, f"default best set plus {draws} fuzzed draws, violations: {bad or 0}",
            time.perf_counter() - t0, 30)


def test_criterion_7_oracle_equivalence():
    t0 = time.perf_counter()
    models, gpus = default_models(), default_gpu_specs()
    cons = Constraints()
    res = sweep(models, gpus, cons, SweepGrid(tps=(1, 2, 4), batches=(1, 4, 16)))
    mismatches = 0
    for m in models:
        for g in gpus:
            brute = []
            for tp in (1, 2, 4):
                for b in (1, 4, 16):
                    r = evaluate_config(m, ClusterConfig(g, tp=tp, batch=b))
                    brute.append((tp, b, r, not cons.violations(r)))
            group = [p for p in res.points if p.model == m.name and p.gpu == g.name]
            if [(p.tp, p.batch, p.result, p.feasible) for p in group] != brute:
                mismatches += 1
            for phase in ("prefill", "decode"):
                ok = [x for x in brute if x[3]]
                want = min(ok, key=lambda x: (-x[2].tput_per_sm(phase), x[0], x[1]))[2] if ok else None
                top = select_best(group, phase)
                if (top.result if top else None) != want or res.best_for(m.name, g.name, phase).result != want:
                    mismatches += 1
    verdict("7 oracle equivalence", mismatches == 0, f"{mismatches} mismatching groups on the 3x3 grid",
            time.perf_counter() - t0, 5)


def test_criterion_8_workload_conservation():
    t0 = time.perf_counter()
    nominal = {"llama3-70b": 70e9, "gpt3-175b": 175e9, "llama3-405b": 405e9}
    parts, ok = [], True
    for m in default_models():
        p = param_count(m)
        oracle = 2 * p * 1500 + 2 * m.layers * 1500**2 * m.hidden
        flops = prefill_stage_costs(m, 1, 1500, 1).total("flops")
        flop_err, param_err = abs(flops / oracle - 1), abs(p / nominal[m.name] - 1)
        ok &= flop_err <= 0.02 and param_err <= 0.05
        parts.append(f"{m.name} flops {flop_err:.2%} params {param_err:.2%}")
    verdict("8 workload conservation", ok, "; ".join(parts), time.perf_counter() - t0, 1)
