"""Decoder hardware model: unit allocation, VLIW compiler and cycle simulator."""

from .allocate import Allocation, InfeasibleAllocation, allocate, continuous_optimum, spec_workload
from .compiler import compile_program, issue_count_formula, schedule
from .machine import (
    NpeConfig,
    NpeInstruction,
    NpeProgram,
    RegisterFileOverflow,
    load_program,
    save_program,
)
from .simulator import HazardError, SimResult, cycle_count, pipeline_latency, report, simulate, write_trace

__all__ = [
    "Allocation", "InfeasibleAllocation", "allocate", "continuous_optimum", "spec_workload",
    "compile_program", "issue_count_formula", "schedule", "NpeConfig", "NpeInstruction",
    "NpeProgram", "RegisterFileOverflow", "load_program", "save_program", "HazardError",
    "SimResult", "cycle_count", "pipeline_latency", "report", "simulate", "write_trace",
]
