"""GPU specifications, package splitting and die economics."""

from __future__ import annotations

import math
from dataclasses import MISSING, dataclass, fields, replace
from importlib import resources
from typing import Any, Mapping

import yaml


class ConfigError(ValueError):
    """Raised when a configuration document is malformed or violates an invariant."""


# Config key -> GpuSpec attribute. The config keys are the stable file schema.
GPU_FIELDS = {
    "name": "name",
    "tflops": "tflops",
    "mem_capacity_gb": "mem_capacity",
    "mem_bw_gbps": "mem_bw",
    "net_bw_gbps": "net_bw",
    "sms": "sms",
    "max_gpus": "max_gpus",
}

DIE_FIELDS = {
    "area_cm2": "area",
    "defect_density_per_cm2": "defect_density",
    "cluster_alpha": "cluster_alpha",
}


@dataclass(frozen=True)
class GpuSpec:
    """One GPU type. Bandwidths are per GPU, in GB/s; capacity in GB."""

    name: str
    tflops: float
    mem_capacity: float
    mem_bw: float
    net_bw: float
    sms: int
    max_gpus: int

    def __post_init__(self) -> None:
        if not isinstance(self.name, str) or not self.name:
            raise ConfigError("name: must be a non-empty string")
        for attr in ("tflops", "mem_capacity", "mem_bw", "net_bw"):
            value = getattr(self, attr)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{self.name}: {attr} must be a number, got {value!r}")
            if not math.isfinite(value) or value <= 0:
                raise ConfigError(f"{self.name}: {attr} must be positive, got {value!r}")
        for attr in ("sms", "max_gpus"):
            value = getattr(self, attr)
            if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
                raise ConfigError(f"{self.name}: {attr} must be a positive integer, got {value!r}")


@dataclass(frozen=True)
class DieSpec:
    area: float = 8.14
    defect_density: float = 0.1
    cluster_alpha: float = 10.0

    def __post_init__(self) -> None:
        if self.area < 0:
            raise ConfigError(f"area must be >= 0, got {self.area!r}")
        if self.defect_density < 0:
            raise ConfigError(f"defect_density must be >= 0, got {self.defect_density!r}")
        if self.cluster_alpha <= 0:
            raise ConfigError(f"cluster_alpha must be > 0, got {self.cluster_alpha!r}")


def parse_yaml(config_text: str, what: str = "config") -> Any:
    try:
        return yaml.safe_load(config_text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"{what}: parse error{where}: {problem}") from exc


def _from_mapping(cls, entry: Any, keymap: Mapping[str, str], context: str):
    if not isinstance(entry, Mapping):
        raise ConfigError(f"{context}: expected a mapping, got {type(entry).__name__}")
    unknown = sorted(set(entry) - set(keymap))
    if unknown:
        raise ConfigError(f"{context}: unknown field(s) {', '.join(map(str, unknown))}")
    required = {f.name for f in fields(cls) if f.default is MISSING}
    kwargs = {}
    for key, attr in keymap.items():
        if key in entry:
            kwargs[attr] = entry[key]
        elif attr in required:
            raise ConfigError(f"{context}: missing field {key}")
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{context}: {exc}") from None
    except TypeError as exc:
        raise ConfigError(f"{context}: {exc}") from None


def load_gpu_specs(config_text: str) -> list[GpuSpec]:
    """Parse a GPU config document (YAML or JSON) into validated specs.

    The document is a mapping with a ``gpus`` list; each entry carries
    ``name, tflops, mem_capacity_gb, mem_bw_gbps, net_bw_gbps, sms, max_gpus``.
    """
    doc = parse_yaml(config_text, "gpu config")
    if not isinstance(doc, Mapping) or "gpus" not in doc:
        raise ConfigError("gpu config: top-level 'gpus' list is required")
    entries = doc["gpus"]
    if not isinstance(entries, list) or not entries:
        raise ConfigError("gpu config: 'gpus' must be a non-empty list")
    specs: list[GpuSpec] = []
    seen: set[str] = set()
    for i, entry in enumerate(entries):
        label = entry.get("name", "?") if isinstance(entry, Mapping) else "?"
        spec = _from_mapping(GpuSpec, entry, GPU_FIELDS, f"gpus[{i}] ({label})")
        if spec.name in seen:
            raise ConfigError(f"gpus[{i}]: duplicate name {spec.name!r}")
        seen.add(spec.name)
        specs.append(spec)
    return specs


def load_die_spec(config_text: str) -> DieSpec:
    """Read the optional ``die`` block; missing keys fall back to defaults."""
    doc = parse_yaml(config_text, "die config")
    block = doc.get("die", {}) if isinstance(doc, Mapping) else {}
    return _from_mapping(DieSpec, block or {}, DIE_FIELDS, "die")


def default_gpu_config_text() -> str:
    return resources.files("litesim").joinpath("data/gpus.yaml").read_text()


def default_gpu_specs() -> list[GpuSpec]:
    return load_gpu_specs(default_gpu_config_text())


def derive_lite_spec(
    base: GpuSpec,
    split_factor: int,
    overrides: Mapping[str, float] | None = None,
    name: str | None = None,
) -> GpuSpec:
    """Split ``base`` into ``split_factor`` equal GPUs.

    Capabilities are divided by the split factor and the cluster size limit
    multiplied by it, keeping the total SM budget fixed. ``overrides`` then
    scales individual fields, e.g. ``{"mem_bw": 2.0}``.
    """
    k = split_factor
    if isinstance(k, bool) or not isinstance(k, int) or k < 1:
        raise ValueError(f"split_factor must be a positive integer, got {k!r}")
    if base.sms % k:
        raise ValueError(f"{base.name}: {base.sms} SMs not divisible by split factor {k}")
    values = {
        "tflops": base.tflops / k,
        "mem_capacity": base.mem_capacity / k,
        "mem_bw": base.mem_bw / k,
        "net_bw": base.net_bw / k,
    }
    for attr, factor in (overrides or {}).items():
        if attr not in values:
            raise ValueError(f"cannot override {attr!r}; choose from {sorted(values)}")
        values[attr] *= factor
    if name is None:
        name = base.name if k == 1 and not overrides else f"{base.name}/{k}"
    return replace(base, name=name, sms=base.sms // k, max_gpus=base.max_gpus * k, **values)


def shoreline_bandwidth_ratio(split_factor: int) -> float:
    # k square dies of area A/k have sqrt(k) times the total perimeter of one die of area A.
    if split_factor < 1:
        raise ValueError(f"split_factor must be >= 1, got {split_factor!r}")
    return math.sqrt(split_factor)


def die_yield(die: DieSpec) -> float:
    """Negative-binomial yield ``(1 + A*D0/alpha) ** -alpha``."""
    if die.area == 0 or die.defect_density == 0:
        return 1.0
    return (1.0 + die.area * die.defect_density / die.cluster_alpha) ** (-die.cluster_alpha)


def relative_cost_per_compute(base_die: DieSpec, split_factor: int) -> float:
    """Cost of ``k`` small dies relative to one large die of the same total area.

    Raw silicon cost is proportional to area, so the ratio reduces to the
    inverse yield ratio. Values below 1 mean splitting is cheaper.
    """
    if split_factor < 1:
        raise ValueError(f"split_factor must be >= 1, got {split_factor!r}")
    small = replace(base_die, area=base_die.area / split_factor)
    return die_yield(base_die) / die_yield(small)
