"""Cycle-level model of the three-stage engine (MA, adder tree, SF).

The simulator replays the instruction stream cycle by cycle, keeps its own
register-ready table, and aborts on any read of a register whose value has
not left the SF stage.  Arithmetic is vectorised over a batch of inputs.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from ..neural import activate_int
from .compiler import schedule
from .machine import OP_ACC, OP_ACT, OP_NOP, OP_OUT, OPCODES, ZERO_REG, REPORT_CLOCK_HZ, NpeProgram

log = logging.getLogger(__name__)

NOT_WRITTEN = np.iinfo(np.int64).max


class HazardError(RuntimeError):
    def __init__(self, message: str, trace: list):
        super().__init__(message)
        self.trace = trace


@dataclass
class SimResult:
    class_logits: np.ndarray
    s_logits: list
    cycles: int
    clock_hz: float
    trace: list | None = None

    @property
    def latency_s(self) -> float:
        return self.cycles / self.clock_hz

    def latency_at(self, clock_hz: float) -> float:
        return self.cycles / clock_hz


def _sf(v: np.ndarray, mult: np.ndarray, shift: np.ndarray, activation: str) -> np.ndarray:
    """Bias-added accumulator -> rounded fixed-point rescale -> activation -> int8 clamp."""
    p = v * mult
    half = np.where(shift > 0, np.left_shift(1, np.maximum(shift - 1, 0)), 0)
    mag = (np.abs(p) + half) >> shift
    y = np.where(p < 0, -mag, mag)
    return np.clip(activate_int(y, activation), -128, 127)


def _timeline(program: NpeProgram, keep_trace: bool):
    """Walk the stream once: issue cycles, hazard check, optional event trace."""
    cfg = program.config
    ready = np.full(cfg.register_file_size, NOT_WRITTEN, np.int64)
    ready[ZERO_REG] = 0
    ready[program.input_base : program.input_base + program.n_inputs] = 0
    trace: list = []
    issues = []
    now = 0
    sf_last = -1
    fetch_last = -1
    for idx, ins in enumerate(program.instructions):
        if ins.opcode == OP_NOP:
            if keep_trace:
                trace.append((now, "CTRL", idx, f"stall {ins.jobs}"))
            now += ins.jobs
            continue
        st = program.stages[ins.stage]
        lo, hi = program.chunk_range(ins)
        src = st.sources(ins.src, ins.jobs, lo, hi)
        fetch = now - cfg.mem_latency
        sf = now + ins.tap + 1
        if keep_trace:
            trace.append((fetch, "MEM", idx, f"fetch {ins.jobs}x{hi - lo} @ {ins.addr}"))
            trace.append((now, "MA", idx, f"{OPCODES[ins.opcode]} {st.name} jobs {ins.src}+{ins.jobs} chunk {ins.chunk}"))
            for d in range(1, ins.tap + 1):
                trace.append((now + d, "AT", idx, f"level {d}/{ins.tap}"))
            trace.append((sf, "SF", idx, OPCODES[ins.opcode]))
        if fetch < 0 or fetch <= fetch_last:
            raise HazardError(f"instruction {idx}: parameter fetch at cycle {fetch} not available", trace)
        worst = int(ready[src].max()) if np.size(src) else 0
        if worst > now:
            when = "never written" if worst == NOT_WRITTEN else f"ready at {worst}"
            raise HazardError(f"instruction {idx} at cycle {now} reads a register {when}", trace)
        if sf <= sf_last:
            raise HazardError(f"instruction {idx}: SF slot {sf} conflicts with an earlier result", trace)
        if ins.opcode == OP_ACT:
            if ins.dst + ins.jobs > cfg.register_file_size:
                raise HazardError(f"instruction {idx} writes past the register file", trace)
            ready[ins.dst : ins.dst + ins.jobs] = sf + 1
        issues.append((ins, lo, hi))
        fetch_last = fetch
        sf_last = sf
        now += 1
    cycles = sf_last + 1 if sf_last >= 0 else now
    return issues, cycles, trace


def simulate(program: NpeProgram, x, trace: bool = False, chunk: int = 2048) -> SimResult:
    """Execute ``program`` on a batch of network inputs (B, T, H, W) of 0/1 bits."""
    x = np.asarray(x)
    if x.shape == program.input_shape:
        x = x[None]
    if x.shape[1:] != program.input_shape:
        raise ValueError(f"input shape {x.shape[1:]} does not match {program.input_shape}")
    issues, cycles, events = _timeline(program, trace)
    outs = [_execute(program, issues, x[lo : lo + chunk]) for lo in range(0, x.shape[0], chunk)]
    out = np.concatenate(outs) if outs else np.zeros((0, program.n_outputs), np.int64)
    splits = np.cumsum(program.head_outputs)[:-1]
    heads = np.split(out, splits, axis=1)
    return SimResult(heads[0], heads[1:], cycles, program.config.clock_hz,
                     events if trace else None)


def _execute(program: NpeProgram, issues: list, x: np.ndarray) -> np.ndarray:
    bsz = x.shape[0]
    rf = np.zeros((bsz, program.rf_used), np.float64)
    rf[:, program.input_base : program.input_base + program.n_inputs] = x.reshape(bsz, -1)
    out = np.zeros((bsz, program.n_outputs), np.int64)
    acc = None
    for ins, lo, hi in issues:
        st = program.stages[ins.stage]
        rows = slice(ins.src, ins.src + ins.jobs)
        w = st.weights[rows, lo:hi].astype(np.float64)
        if st.shared:
            # MA + adder tree: every packed job reads the same operand window
            part = rf[:, st.src_base + lo : st.src_base + hi] @ w.T
        else:
            ops = rf[:, st.gather[rows, lo:hi]]
            part = np.einsum("bjn,jn->bj", ops, w)
        part = part.astype(np.int64)
        if acc is not None:
            part = part + acc
        if ins.opcode == OP_ACC:
            acc = part
            continue
        acc = None
        v = part + st.bias[rows]
        if ins.opcode == OP_OUT:
            out[:, ins.dst : ins.dst + ins.jobs] = v
        else:
            y = _sf(v, st.mult[rows], st.shift[rows], program.activation)
            rf[:, ins.dst : ins.dst + ins.jobs] = y
    return out


def write_trace(fh, events: list) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["cycle", "stage", "instruction", "event"])
    for row in sorted(events, key=lambda e: (e[0], e[2])):
        w.writerow(row)


def cycle_count(program: NpeProgram) -> int:
    return _timeline(program, False)[1]


def pipeline_latency(program: NpeProgram, sm_period_s: float, T: int | None = None) -> float:
    """Seconds from the last syndrome round's arrival to the final output.

    Round ``r`` becomes readable ``r * sm_period_s`` after the first.  Work
    on rounds that have arrived proceeds while later rounds are measured.
    """
    if not sm_period_s >= 0 or math.isinf(sm_period_s):
        raise ValueError("sm_period_s must be finite and non-negative")
    cfg = program.config
    full = cycle_count(program)
    if not program.first_is_conv:
        log.warning("frontend does not split into per-round blocks; using full latency")
        return full / cfg.clock_hz
    rounds = program.input_shape[0]
    if T is not None and T != rounds:
        raise ValueError(f"program expects T={rounds}, got {T}")
    period = math.ceil(sm_period_s * cfg.clock_hz)
    per_round = math.prod(program.input_shape[1:])
    arrival = np.repeat(np.arange(rounds, dtype=np.int64) * period, per_round)
    _, finish = schedule(program, arrival)
    last = int(arrival[-1])
    return (finish - last) / cfg.clock_hz


def report(program: NpeProgram, result: SimResult) -> list[str]:
    cfg = program.config
    lines = [
        f"compute cycles: {result.cycles}",
        f"latency at {cfg.clock_hz / 1e6:g} MHz: {result.latency_s * 1e9:.1f} ns",
        f"latency at {REPORT_CLOCK_HZ / 1e9:g} GHz: {result.latency_at(REPORT_CLOCK_HZ) * 1e9:.2f} ns",
        f"MA issues: {program.issue_count}, MAUs: {cfg.mau_count} x {cfg.mau_width}",
        "external reference (L=5 network-specific FPGA design, not a target): 67 cycles, 197 ns",
    ]
    return lines
