"""Simulation configuration: machine, metadata plane and client registry.

Config files are JSON objects.  Keys may be flat (``"l1_ways": 8``) or
grouped under ``"machine"`` / ``"metadata"``; anything else is a top-level
:class:`SimConfig` field.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .machine import MachineConfig
from .metadata import LookupMode, MetadataConfig


class ConfigError(ValueError):
    pass


CLIENT_NAMES = ("graph_prefetch", "graph_pref_ideal", "stride_prefetch", "bounds",
                "rap", "null_all", "null_miss", "tlb_miss")

# Client ids double as PMT owners; the two listings in the design both
# place their client at id 0.
DEFAULT_CLIENT_IDS = {
    "graph_prefetch": 0,
    "graph_pref_ideal": 0,
    "bounds": 0,
    "rap": 1,
    "null_all": 2,
    "null_miss": 3,
    "tlb_miss": 4,
    "stride_prefetch": 5,
}

DEFAULT_MODES = {
    "graph_prefetch": "best_effort",
    "graph_pref_ideal": "best_effort",
    "stride_prefetch": "best_effort",
    "bounds": "force_stall",
    "rap": "force_stall",
    "null_all": "force_stall",
    "null_miss": "force_stall",
    "tlb_miss": "force_stall",
}


@dataclass
class ClientSpec:
    name: str
    mode: str | None = None
    client_id: int | None = None

    def __post_init__(self):
        if self.name not in CLIENT_NAMES:
            raise ConfigError(f"unknown client {self.name!r}; expected one of {CLIENT_NAMES}")
        if self.mode is None:
            self.mode = DEFAULT_MODES[self.name]
        try:
            LookupMode(self.mode)
        except ValueError:
            raise ConfigError(f"unknown lookup mode {self.mode!r}") from None
        if self.client_id is None:
            self.client_id = DEFAULT_CLIENT_IDS[self.name]

    @property
    def lookup_mode(self):
        return LookupMode(self.mode)


def _client(x):
    if isinstance(x, ClientSpec):
        return x
    if isinstance(x, str):
        name, _, mode = x.partition(":")
        return ClientSpec(name, mode or None)
    return ClientSpec(**x)


@dataclass
class SimConfig:
    machine: MachineConfig = field(default_factory=MachineConfig)
    metadata: MetadataConfig = field(default_factory=MetadataConfig)
    clients: list = field(default_factory=list)
    seed: int = 0
    trap_mode: str = "terminate"  # or "record"
    context_switch_cycles: int = 1000
    flush_mmc_on_switch: bool = True
    prefetch_buffer_lines: int = 32
    stride_prefetch_degree: int = 2
    frame_scatter_seed: int | None = None

    def __post_init__(self):
        self.clients = [_client(c) for c in self.clients]
        ids = [c.client_id for c in self.clients]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate client ids in {self.client_names()}")
        if self.trap_mode not in ("terminate", "record"):
            raise ConfigError(f"trap_mode must be terminate or record, not {self.trap_mode!r}")
        pc = self.metadata.priority_client
        if pc is not None and pc not in self.client_names():
            raise ConfigError(f"priority client {pc!r} is not configured")

    def client_names(self):
        return [c.name for c in self.clients]

    def replace(self, **changes):
        """Copy with flat-key changes applied (see :func:`apply_overrides`)."""
        return apply_overrides(self, changes)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["clients"] = [dataclasses.asdict(c) for c in self.clients]
        return d


MACHINE_KEYS = {f.name for f in dataclasses.fields(MachineConfig)}
METADATA_KEYS = {f.name for f in dataclasses.fields(MetadataConfig)}
TOP_KEYS = {f.name for f in dataclasses.fields(SimConfig)} - {"machine", "metadata"}


def apply_overrides(cfg: SimConfig, changes: dict) -> SimConfig:
    machine = dataclasses.asdict(cfg.machine)
    metadata = dataclasses.asdict(cfg.metadata)
    top = {k: getattr(cfg, k) for k in TOP_KEYS}
    top["clients"] = list(cfg.clients)
    for key, value in changes.items():
        if key in ("machine", "metadata") and isinstance(value, dict):
            for k, v in value.items():
                (machine if key == "machine" else metadata)[k] = v
            continue
        key = key.removeprefix("machine.").removeprefix("metadata.")
        if key in MACHINE_KEYS:
            machine[key] = value
        elif key in METADATA_KEYS:
            metadata[key] = value
        elif key in TOP_KEYS:
            top[key] = value
        else:
            raise ConfigError(f"unknown configuration key {key!r}")
    try:
        for k in ("machine", "metadata"):
            unknown = set((machine if k == "machine" else metadata)) - (
                MACHINE_KEYS if k == "machine" else METADATA_KEYS)
            if unknown:
                raise ConfigError(f"unknown {k} keys {sorted(unknown)}")
        return SimConfig(MachineConfig(**machine), MetadataConfig(**metadata), **top)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def parse_value(text):
    try:
        return json.loads(text)
    except ValueError:
        return text


def parse_assignments(items):
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"expected key=value, got {item!r}")
        out[key.strip()] = parse_value(value.strip())
    return out


def load_config(path=None, overrides=None) -> SimConfig:
    cfg = SimConfig()
    if path is not None:
        try:
            with open(path) as f:
                data = json.load(f)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg = apply_overrides(cfg, data)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg
