"""Lowering a quantised network to a static VLIW instruction stream.

Every layer becomes a stage of equal-length dot products.  A job of
length ``n`` uses ``m`` MAUs, the smallest power of two (at least 2) with
``m * mau_width >= n``; the adder tree is tapped at depth ``log2 m`` and
``c / m`` jobs share one issue.  Jobs longer than a full issue are split
into chunks at full depth and summed in the SF accumulator.  All heads'
first layers form one stage, and all heads' second layers another, so
independent heads are packed side by side at shallow taps.

Issue cycles come from an in-order list schedule that respects operand
readiness; gaps are filled with explicit NOP stalls.
"""

from __future__ import annotations

import math

import numpy as np

from ..neural import Conv3D, FC, QuantizedNetwork, conv_patches
from .machine import (
    OP_ACC,
    OP_ACT,
    OP_NOP,
    OP_OUT,
    ZERO_REG,
    NpeConfig,
    NpeInstruction,
    NpeProgram,
    RegisterFileOverflow,
    Stage,
)

MAX_STALL = 0xFFFF


def _lowering(n: int, config: NpeConfig) -> tuple[int, int, int]:
    """(tap depth, jobs per issue, chunks per job) for dot products of length ``n``."""
    c, w = config.mau_count, config.mau_width
    if n <= c * w:
        m = max(2, 1 << max(0, math.ceil(math.log2(-(-n // w)))))
        return int(math.log2(m)), c // m, 1
    return config.tree_depth, 1, -(-n // (c * w))


def issue_count_formula(spec, config: NpeConfig) -> int:
    """Closed-form MA issue count of ``compile_program`` for ``spec``."""
    total = 0
    for lay in spec.frontend:
        jobs = lay.sites * lay.out_ch if isinstance(lay, Conv3D) else lay.n_out
        total += _issues(jobs, lay.fan_in, config)
    for pos in (0, 1):
        lays = [h[pos] for h in spec.heads]
        total += _issues(sum(l.n_out for l in lays), lays[0].n_in, config)
    return total


def _issues(jobs: int, n: int, config: NpeConfig) -> int:
    _, pack, chunks = _lowering(n, config)
    return jobs * chunks if chunks > 1 else -(-jobs // pack)


def _conv_gather(lay: Conv3D, base: int) -> np.ndarray:
    """Register index of every patch operand, zero register for padding."""
    idx = base + np.arange(math.prod(lay.in_shape) * lay.in_ch).reshape(
        1, *lay.in_shape, lay.in_ch
    )
    # shift by one so that padding (0) is distinguishable, then map it to ZERO_REG
    patches = conv_patches(idx + 1, lay) - 1
    patches[patches < 0] = ZERO_REG
    return np.repeat(patches, lay.out_ch, axis=0)


def _build_stages(qnet: QuantizedNetwork, config: NpeConfig):
    spec = qnet.spec
    if spec.frontend and not isinstance(spec.frontend[0], (Conv3D, FC)):
        raise ValueError("unsupported layer kind")
    input_base = 1
    reg = input_base + math.prod(spec.input_shape)
    src = input_base
    stages = []
    layers = list(qnet.layers)
    nf = len(spec.frontend)
    for i, (lay, q) in enumerate(zip(spec.frontend, layers[:nf])):
        if isinstance(lay, Conv3D):
            gather = _conv_gather(lay, src)
            w = np.tile(q.w_q.reshape(lay.out_ch, -1), (lay.sites, 1))
            b = np.tile(q.b_q, lay.sites)
            name, shared, jobs, n = f"conv{i}", False, lay.sites * lay.out_ch, lay.fan_in
        elif isinstance(lay, FC):
            gather, w, b = None, q.w_q, q.b_q
            name, shared, jobs, n = f"fc{i}", True, lay.n_out, lay.n_in
        else:
            raise ValueError(f"unsupported layer kind {type(lay).__name__}")
        stages.append(dict(name=name, n=n, gather=gather, shared=shared, src_base=src,
                           dst_base=reg, final=False, weights=w, bias=b,
                           mult=np.full(jobs, q.mult), shift=np.full(jobs, q.shift)))
        src = reg
        reg += jobs
    feat = src

    heads = [(layers[nf + 2 * h], layers[nf + 2 * h + 1]) for h in range(len(spec.heads))]
    hidden = [q1.layer.n_out for q1, _ in heads]
    if len(set(hidden)) != 1:
        raise ValueError("heads with different hidden widths are not supported")
    hid = hidden[0]
    w1 = np.concatenate([q1.w_q for q1, _ in heads])
    stages.append(dict(
        name="heads1", n=w1.shape[1], gather=None, shared=True, src_base=feat, dst_base=reg,
        final=False, weights=w1, bias=np.concatenate([q1.b_q for q1, _ in heads]),
        mult=np.concatenate([np.full(hid, q1.mult) for q1, _ in heads]),
        shift=np.concatenate([np.full(hid, q1.shift) for q1, _ in heads]),
    ))
    hid_base = reg
    reg += hid * len(heads)
    gather2 = np.concatenate([
        np.tile(hid_base + h * hid + np.arange(hid), (q2.layer.n_out, 1))
        for h, (_, q2) in enumerate(heads)
    ])
    outs = gather2.shape[0]
    stages.append(dict(
        name="heads2", n=hid, gather=gather2, shared=False, src_base=hid_base, dst_base=0,
        final=True, weights=np.concatenate([q2.w_q for _, q2 in heads]),
        bias=np.concatenate([q2.b_q for _, q2 in heads]),
        mult=np.ones(outs, np.int64), shift=np.zeros(outs, np.int64),
    ))
    if reg > config.register_file_size:
        raise RegisterFileOverflow(
            f"activations need {reg} registers, the register file has {config.register_file_size}"
        )
    return input_base, reg, stages


def compile_program(qnet: QuantizedNetwork, config: NpeConfig) -> NpeProgram:
    spec = qnet.spec
    input_base, rf_used, raw = _build_stages(qnet, config)
    stages = []
    param = 0
    for d in raw:
        tap, pack, chunks = _lowering(d["n"], config)
        st = Stage(tap=tap, pack=pack, chunks=chunks, param_base=param, **d)
        param += st.jobs * st.n
        stages.append(st)

    macs = []
    for si, st in enumerate(stages):
        last_op = OP_OUT if st.final else OP_ACT
        if st.chunks == 1:
            for j0 in range(0, st.jobs, st.pack):
                k = min(st.pack, st.jobs - j0)
                macs.append(NpeInstruction(last_op, st.tap, k, 0, si, j0, st.dst_base + j0,
                                           st.param_base + j0 * st.n))
        else:
            for j in range(st.jobs):
                for c in range(st.chunks):
                    op = last_op if c == st.chunks - 1 else OP_ACC
                    macs.append(NpeInstruction(op, st.tap, 1, c, si, j, st.dst_base + j,
                                               st.param_base + j * st.n + c * config.lanes))

    program = NpeProgram(config, tuple(spec.input_shape), list(spec.head_outputs),
                         spec.activation, input_base, rf_used, stages, macs,
                         isinstance(spec.frontend[0], Conv3D) if spec.frontend else False)
    cycles, _ = schedule(program)
    stream = []
    now = 0
    for ins, t in zip(macs, cycles):
        gap = int(t) - now
        while gap > 0:
            step = min(gap, MAX_STALL)
            stream.append(NpeInstruction(OP_NOP, jobs=step))
            gap -= step
        stream.append(ins)
        now = int(t) + 1
    program.instructions = stream
    return program


def _source_ready(program: NpeProgram, macs: list) -> list:
    """Per MAC instruction, the registers it reads (cached on the program)."""
    key = "sources"
    if key not in program._cache:
        out = []
        for ins in macs:
            st = program.stages[ins.stage]
            lo, hi = program.chunk_range(ins)
            src = st.sources(ins.src, ins.jobs, lo, hi)
            out.append(np.unique(src))
        program._cache[key] = out
    return program._cache[key]


def schedule(program: NpeProgram, arrival: np.ndarray | None = None) -> tuple[np.ndarray, int]:
    """Earliest in-order issue cycle of every MAC instruction, and the cycle count.

    ``arrival[i]`` is the first cycle input register ``input_base + i``
    may be read (all zero when omitted).  An issue at cycle ``t`` reads
    its operands at ``t``, fetches parameters at ``t - mem_latency``, and
    its SF result becomes readable at ``t + tap + 2``.  SF completions
    stay in program order.
    """
    cfg = program.config
    macs = program.mac_instructions()
    sources = _source_ready(program, macs)
    ready = np.full(cfg.register_file_size, np.iinfo(np.int64).max // 2, np.int64)
    ready[ZERO_REG] = 0
    lo = program.input_base
    ready[lo : lo + program.n_inputs] = 0 if arrival is None else arrival
    cycles = np.zeros(len(macs), np.int64)
    t_prev = cfg.mem_latency - 1
    sf_prev = -1
    for i, (ins, src) in enumerate(zip(macs, sources)):
        t = max(t_prev + 1, int(ready[src].max()) if src.size else 0, sf_prev - ins.tap)
        cycles[i] = t
        sf_prev = t + ins.tap + 1
        if ins.opcode == OP_ACT:
            ready[ins.dst : ins.dst + ins.jobs] = sf_prev + 1
        t_prev = t
    return cycles, sf_prev + 1
