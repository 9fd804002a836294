"""Trace-driven simulator of a tagged-memory metadata plane with optimization clients."""

from .config import ClientSpec, ConfigError, SimConfig, load_config
from .harness import EXPERIMENTS, Experiment, ResultRow, Variant, emit_csv, get_experiment, run_experiment
from .isa import Create, Map, Map2D, Map3D, PendingBinding, Unmap, Unmap2D, Unmap3D, exec_create, exec_map
from .machine import MachineConfig, SimulationFault, Stats
from .metadata import LookupMode, MetadataConfig, MmcMode, TranslationMode
from .osmodel import TrapKind, TrapRecord, allocate_mmt
from .sim import Simulator, run_one
from .trace import Trace, trace_read, trace_write, validate_trace

__version__ = "0.1.0"
