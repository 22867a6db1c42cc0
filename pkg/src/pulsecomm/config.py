"""Run configuration: JSON file + command-line overrides, validated against a schema.

Precedence is flag > file > default. Unknown keys anywhere are rejected;
errors name the offending key path (for example ``hardware.merger_depth``).
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import fields
from pathlib import Path
from typing import Any

import jsonschema

from .errors import ConfigError
from .playback import PackingConfig
from .simcore import HardwareConfig
from .spikegen import SurrogateParams

COMMANDS = ("char-downstream", "char-upstream", "loopback", "bench")


def _int(lo: int | None = None, hi: int | None = None) -> dict:
    s: dict[str, Any] = {"type": "integer"}
    if lo is not None:
        s["minimum"] = lo
    if hi is not None:
        s["maximum"] = hi
    return s


def _num(lo: float | None = None, exclusive: bool = False) -> dict:
    s: dict[str, Any] = {"type": "number"}
    if lo is not None:
        s["exclusiveMinimum" if exclusive else "minimum"] = lo
    return s


def _obj(props: dict) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False}


HARDWARE_SCHEMA = _obj({
    "downstream_fifo_depth": _int(1),
    "link_latency_ns": _int(0),
    "merger_depth": _int(1),
    "loopback_latency_ns": _int(0),
    "trace_fifo_depth": _int(1),
    "trace_pulses_per_cycle": _int(1),
    "trace_capacity": _int(0, 125_000_000),
    "group_overhead_cycles": _int(6),
    "early_release_limit_cycles": _int(0),
})

PACKING_SCHEMA = _obj({
    "max_group_size": _int(1, 184),
    "group_overhead_cycles": _int(6),
    "delay_compensation_ns": _int(0),
    "early_release_limit_cycles": _int(0),
})

SURROGATE_SCHEMA = _obj({
    "n_neurons": _int(1),
    "frac_excitatory": {"type": "number", "minimum": 0, "maximum": 1},
    "up_rate_hz": _num(0),
    "down_rate_hz": _num(0),
    "mean_up_ms": _num(0),
    "mean_down_ms": _num(0),
    "initial_ai_ms": _num(0),
    "ai_rate_hz": _num(0),
    "inh_rate_factor": _num(0),
    "up_rate_cv": _num(0),
    "target_total_rate_hz": {"type": ["number", "null"], "exclusiveMinimum": 0},
    "duration_ms": _num(0, exclusive=True),
    "seed": _int(0),
})

SCHEMA = _obj({
    "seed": _int(0),
    "n_seeds": _int(1),
    "hicanns": {"enum": [1, 8]},
    "rates_hz": {"type": "array", "items": _num(0, exclusive=True), "minItems": 1},
    "modes": {"type": "array", "items": {"enum": ["regular", "poisson", "pseudorandom"]},
              "minItems": 1},
    "n_pulses": _int(1),
    "jobs": _int(1),
    "out_dir": {"type": ["string", "null"]},
    "hardware": HARDWARE_SCHEMA,
    "packing": PACKING_SCHEMA,
    "loopback": _obj({
        "rate_hz": _num(0, exclusive=True),
        "mode": {"enum": ["regular", "poisson"]},
        "spike_file": {"type": ["string", "null"]},
    }),
    "bench": _obj({
        "nph": {"type": "array", "items": _int(1, 256), "minItems": 1},
        "spike_file": {"type": ["string", "null"]},
        "duration_ms": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "surrogate": SURROGATE_SCHEMA,
    }),
})

_DOWN_RATES = [200.0, 417.0, 600.0, 800.0, 1000.0, 1200.0, 1400.0, 1500.0, 1600.0, 1700.0,
               1750.0, 1780.0, 1800.0, 1850.0, 1900.0, 2000.0, 2200.0, 2500.0, 3000.0]
_UP_RATES = [1000.0, 1400.0, 1600.0, 1700.0, 1800.0, 1900.0, 2000.0, 2100.0, 2200.0,
             2300.0, 2400.0, 2500.0, 2600.0, 3000.0]


def _dc_dict(cls) -> dict:
    inst = cls()
    return {f.name: getattr(inst, f.name) for f in fields(cls)}


def defaults(command: str) -> dict:
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}", "command")
    surrogate = _dc_dict(SurrogateParams)
    packing = _dc_dict(PackingConfig)
    if command != "bench":
        # characterization and loopback runs measure raw channel delay
        packing["delay_compensation_ns"] = 0
    return {
        "seed": 0,
        "n_seeds": 1,
        "hicanns": 1,
        "rates_hz": list(_UP_RATES if command == "char-upstream" else _DOWN_RATES),
        "modes": ["regular", "pseudorandom"] if command == "char-upstream" else ["regular", "poisson"],
        "n_pulses": 20000,
        "jobs": 1,
        "out_dir": None,
        "hardware": _dc_dict(HardwareConfig),
        "packing": packing,
        "loopback": {"rate_hz": 417.0, "mode": "poisson", "spike_file": None},
        "bench": {"nph": [5, 10, 15, 20, 25, 30, 35, 39, 40, 45, 50, 64],
                  "spike_file": None, "duration_ms": None, "surrogate": surrogate},
    }


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def validate(cfg: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        path = ".".join(str(p) for p in e.absolute_path)
        if e.validator == "additionalProperties":
            extra = sorted(set(e.instance) - set(e.schema.get("properties", {})))
            path = ".".join(filter(None, [path, extra[0] if extra else ""]))
            raise ConfigError("unknown key", path)
        raise ConfigError(e.message, path or "<root>")


def load_file(path: str | Path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}", "") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}", "") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object", "")
    return data


def resolve(command: str, file_cfg: dict | None = None, overrides: dict | None = None) -> dict:
    """Effective configuration: defaults, then the file, then flag overrides."""
    cfg = defaults(command)
    for layer in (file_cfg or {}, overrides or {}):
        validate(_merge(cfg, layer))
        cfg = _merge(cfg, layer)
    return cfg


def config_digest(cfg: dict) -> str:
    blob = json.dumps({k: v for k, v in cfg.items() if k not in ("out_dir", "jobs")}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:10]


def hardware_from(cfg: dict) -> HardwareConfig:
    return HardwareConfig(**cfg["hardware"])


def packing_from(cfg: dict) -> PackingConfig:
    return PackingConfig(**cfg["packing"])


def surrogate_from(cfg: dict) -> SurrogateParams:
    return SurrogateParams(**cfg["bench"]["surrogate"])
