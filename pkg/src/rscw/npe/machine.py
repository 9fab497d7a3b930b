"""Machine description, instruction words, and the compiled program container."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

OP_NOP = 0
OP_ACT = 1  # bias + rescale + activate + clamp, write to the register file
OP_ACC = 2  # add the reduced partial sum into the SF accumulator
OP_OUT = 3  # bias only, raw accumulator to the output buffer
OPCODES = {OP_NOP: "nop", OP_ACT: "act", OP_ACC: "acc", OP_OUT: "out"}

ZERO_REG = 0
PROGRAM_MAGIC = b"NPEP"
PROGRAM_VERSION = 1
REPORT_CLOCK_HZ = 2.5e9


class RegisterFileOverflow(ValueError):
    """The network's activations do not fit the register file."""


@dataclass(frozen=True)
class NpeConfig:
    mau_count: int = 64
    mau_width: int = 16
    register_file_size: int = 1 << 16
    clock_hz: float = 260e6
    mem_latency: int = 2

    def __post_init__(self):
        c = self.mau_count
        if c < 2 or c & (c - 1):
            raise ValueError(f"mau_count must be a power of two >= 2, got {c}")
        if self.mau_width < 1:
            raise ValueError("mau_width must be positive")
        if not 1 <= self.register_file_size <= 1 << 16:
            raise ValueError("register_file_size must be in [1, 65536]")
        if not self.clock_hz > 0:
            raise ValueError("clock_hz must be positive")
        if self.mem_latency < 0:
            raise ValueError("mem_latency must be non-negative")

    @property
    def tree_depth(self) -> int:
        return int(math.log2(self.mau_count))

    @property
    def lanes(self) -> int:
        """Multiplications per MA issue."""
        return self.mau_count * self.mau_width

    @classmethod
    def from_mapping(cls, kv: dict) -> NpeConfig:
        conv = {"mau_count": int, "mau_width": int, "register_file_size": int,
                "clock_hz": float, "mem_latency": int}
        unknown = set(kv) - set(conv)
        if unknown:
            raise ValueError(f"unknown NPE config keys: {sorted(unknown)}")
        return cls(**{k: conv[k](v) for k, v in kv.items()})


_WORD = struct.Struct("<BBHHHHHI")


@dataclass(frozen=True)
class NpeInstruction:
    """One 16-byte VLIW word.

    Compute slot: ``opcode``, ``tap`` (adder-tree depth), ``jobs`` packed
    dot products, ``chunk`` index, ``stage``.  Memory slot: ``src`` first
    job of the stage's gather table, ``dst`` destination register (or
    output index), ``addr`` parameter-memory address.  A NOP stalls for
    ``jobs`` cycles.
    """

    opcode: int
    tap: int = 0
    jobs: int = 0
    chunk: int = 0
    stage: int = 0
    src: int = 0
    dst: int = 0
    addr: int = 0

    def pack(self) -> bytes:
        return _WORD.pack(self.opcode, self.tap, self.jobs, self.chunk, self.stage,
                          self.src, self.dst, self.addr)

    @classmethod
    def unpack(cls, word: bytes) -> NpeInstruction:
        return cls(*_WORD.unpack(word))

    @property
    def is_nop(self) -> bool:
        return self.opcode == OP_NOP


@dataclass
class Stage:
    """A batch of equal-length dot products lowered together.

    ``gather`` holds the register index of every operand, shape (J, n);
    ``shared`` marks stages where all jobs read the same contiguous
    registers ``src_base .. src_base + n``.
    """

    name: str
    n: int
    gather: np.ndarray | None
    shared: bool
    src_base: int
    dst_base: int
    final: bool
    weights: np.ndarray  # (J, n) int8 range
    bias: np.ndarray  # (J,)
    mult: np.ndarray  # (J,)
    shift: np.ndarray  # (J,)
    tap: int
    pack: int  # jobs per issue
    chunks: int  # issues per job
    param_base: int

    @property
    def jobs(self) -> int:
        return self.weights.shape[0]

    @property
    def issues(self) -> int:
        return self.chunks * self.jobs if self.chunks > 1 else -(-self.jobs // self.pack)

    def sources(self, j0: int, jobs: int, lo: int, hi: int) -> np.ndarray:
        if self.shared:
            return np.arange(self.src_base + lo, self.src_base + hi)
        return self.gather[j0 : j0 + jobs, lo:hi]


@dataclass
class NpeProgram:
    config: NpeConfig
    input_shape: tuple[int, int, int]
    head_outputs: list
    activation: str
    input_base: int
    rf_used: int
    stages: list
    instructions: list
    first_is_conv: bool = True
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def issue_count(self) -> int:
        return sum(1 for i in self.instructions if not i.is_nop)

    @property
    def n_inputs(self) -> int:
        return math.prod(self.input_shape)

    @property
    def n_outputs(self) -> int:
        return sum(self.head_outputs)

    def mac_instructions(self) -> list:
        return [i for i in self.instructions if not i.is_nop]

    def chunk_range(self, ins: NpeInstruction) -> tuple[int, int]:
        st = self.stages[ins.stage]
        if st.chunks == 1:
            return 0, st.n
        lo = ins.chunk * self.config.lanes
        return lo, min(st.n, lo + self.config.lanes)

    # --- file format ---------------------------------------------------------

    def to_bytes(self) -> bytes:
        c = self.config
        out = [
            struct.pack(
                "<4sHHHIdHBBHHHHI", PROGRAM_MAGIC, PROGRAM_VERSION, c.mau_count, c.mau_width,
                c.register_file_size, c.clock_hz, c.mem_latency,
                0 if self.activation == "relu" else 1, int(self.first_is_conv),
                *self.input_shape, len(self.head_outputs), len(self.instructions),
            ),
            struct.pack(f"<{len(self.head_outputs)}H", *self.head_outputs),
            struct.pack("<IIH", self.input_base, self.rf_used, len(self.stages)),
        ]
        out += [i.pack() for i in self.instructions]
        for st in self.stages:
            name = st.name.encode()
            out.append(struct.pack("<B", len(name)) + name)
            out.append(struct.pack("<IIBBIIBBHHI", st.jobs, st.n, int(st.shared), int(st.final),
                                   st.src_base, st.dst_base, st.tap, 0, st.pack, st.chunks,
                                   st.param_base))
            if not st.shared:
                out.append(st.gather.astype("<u2").tobytes())
            out.append(st.weights.astype("i1").tobytes())
            out.append(st.bias.astype("<i4").tobytes())
            out.append(st.mult.astype("<i4").tobytes())
            out.append(st.shift.astype("u1").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, blob: bytes) -> NpeProgram:
        view = memoryview(blob)
        off = 0

        def take(fmt):
            nonlocal off
            vals = struct.unpack_from(fmt, view, off)
            off += struct.calcsize(fmt)
            return vals

        def arr(dtype, count):
            nonlocal off
            a = np.frombuffer(view, dtype, count=count, offset=off)
            off += a.nbytes
            return a.astype(np.int64)

        (magic, version, mc, mw, rf, clock, lat, act, first_conv,
         t, h, w, n_heads, n_ins) = take("<4sHHHIdHBBHHHHI")
        if magic != PROGRAM_MAGIC or version != PROGRAM_VERSION:
            raise ValueError("not an NPE program file")
        heads = list(take(f"<{n_heads}H"))
        input_base, rf_used, n_stages = take("<IIH")
        ins = []
        for _ in range(n_ins):
            ins.append(NpeInstruction.unpack(bytes(view[off : off + _WORD.size])))
            off += _WORD.size
        stages = []
        for _ in range(n_stages):
            (ln,) = take("<B")
            name = bytes(view[off : off + ln]).decode()
            off += ln
            jobs, n, shared, final, sb, db, tap, _pad, pack, chunks, pbase = take("<IIBBIIBBHHI")
            gather = None if shared else arr("<u2", jobs * n).reshape(jobs, n)
            weights = arr("i1", jobs * n).reshape(jobs, n)
            bias = arr("<i4", jobs)
            mult = arr("<i4", jobs)
            shift = arr("u1", jobs)
            stages.append(Stage(name, n, gather, bool(shared), sb, db, bool(final), weights,
                                bias, mult, shift, tap, pack, chunks, pbase))
        config = NpeConfig(mc, mw, rf, clock, lat)
        return cls(config, (t, h, w), heads, "relu" if act == 0 else "leaky", input_base,
                   rf_used, stages, ins, bool(first_conv))


def save_program(fh: BinaryIO, program: NpeProgram) -> None:
    fh.write(program.to_bytes())


def load_program(fh: BinaryIO) -> NpeProgram:
    return NpeProgram.from_bytes(fh.read())
