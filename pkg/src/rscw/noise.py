"""Circuit-level Pauli-frame simulation of repeated syndrome measurement.

The simulator is batched: every array carries a leading sample axis and
one round of the measurement circuit is a handful of numpy operations.
Pauli components are encoded as 2-bit integers, ``x = k & 1``,
``z = k >> 1`` (1 = X, 2 = Z, 3 = Y); two-qubit Paulis use 4 bits,
``(x_c, z_c, x_t, z_t)`` from least significant upward.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Literal, Sequence

import numpy as np

from .code import (
    TYPE_TAGS,
    PauliOperator,
    PureErrorTable,
    RscCode,
    build_pure_error_table,
    class_batch,
    pure_error_bits,
    syndrome_batch,
)

Model = Literal["circuit", "phenomenological"]

PRESETS = ("standard", "reweighted", "google")
BLOCK = 4096  # samples per RNG substream

DATASET_MAGIC = b"RSCD"
DATASET_VERSION = 1


@dataclass(frozen=True)
class NoiseParams:
    p_s: float
    p_g: float
    p_m: float
    model: Model = "circuit"

    def __post_init__(self):
        if self.model not in ("circuit", "phenomenological"):
            raise ValueError(f"unknown noise model {self.model!r}")
        for name in ("p_s", "p_g", "p_m"):
            v = getattr(self, name)
            if not (0.0 <= v < 1.0):
                raise ValueError(f"{name}={v} outside [0, 1)")
        if self.model == "phenomenological":
            object.__setattr__(self, "p_g", 0.0)

    @classmethod
    def uniform(cls, p: float, model: Model = "circuit") -> NoiseParams:
        return cls(p, p, p, model)


def preset(name: str, p: float | None = None, model: Model = "circuit") -> NoiseParams:
    """Named noise settings.

    ``standard`` needs ``p`` and sets all three rates to it.  ``reweighted``
    keeps the 1:3:5 storage:gate:measurement ratio; with ``p`` given it is
    rescaled so that ``p_s = 0.4 p`` (the fixed point 0.0024/0.0072/0.012
    corresponds to p = 0.006).  ``google`` is fixed.
    """
    if name == "standard":
        if p is None:
            raise ValueError("the standard preset needs p")
        return NoiseParams.uniform(p, model)
    if name == "reweighted":
        if p is None:
            return NoiseParams(0.0024, 0.0072, 0.012, model)
        return NoiseParams(0.4 * p, 1.2 * p, 2.0 * p, model)
    if name == "google":
        return NoiseParams(0.004, 0.005, 0.018, model)
    raise ValueError(f"unknown preset {name!r}; expected one of {PRESETS}")


@dataclass(frozen=True)
class Fault:
    """A deterministic fault injected on top of sampled noise (for tests).

    kind ``"storage"``: ``where`` = data qubit, ``pauli`` in 1..3.
    kind ``"gate"``: ``where`` = (step, gate index within step), ``pauli`` in 1..15.
    kind ``"measure"``: ``where`` = (type tag, stabilizer index), ``pauli`` ignored.
    """

    round: int
    kind: Literal["storage", "gate", "measure"]
    where: object
    pauli: int = 0


@dataclass(frozen=True)
class SyndromeArray:
    """Raw per-round outcomes for one stabilizer type, shape (T, n_anc)."""

    type_tag: str
    bits: np.ndarray

    @property
    def T(self) -> int:
        return self.bits.shape[0]


@dataclass(frozen=True)
class LabeledSample:
    syndromes: dict  # type tag -> SyndromeArray
    residual: PauliOperator
    label_class: dict  # type tag -> int
    label_s: dict  # type tag -> np.ndarray


@dataclass
class SampleBatch:
    """Structure-of-arrays form of many :class:`LabeledSample`."""

    syn: dict  # type tag -> (B, T, n_anc) uint8
    res_x: np.ndarray  # (B, n)
    res_z: np.ndarray
    cls: dict  # type tag -> (B,) uint8
    s: dict  # type tag -> (B, n_anc) uint8

    def __len__(self) -> int:
        return self.res_x.shape[0]

    def __getitem__(self, idx) -> SampleBatch:
        return SampleBatch(
            syn={t: v[idx] for t, v in self.syn.items()},
            res_x=self.res_x[idx],
            res_z=self.res_z[idx],
            cls={t: v[idx] for t, v in self.cls.items()},
            s={t: v[idx] for t, v in self.s.items()},
        )

    def sample(self, i: int) -> LabeledSample:
        return LabeledSample(
            syndromes={t: SyndromeArray(t, self.syn[t][i]) for t in TYPE_TAGS},
            residual=PauliOperator(self.res_x[i], self.res_z[i]),
            label_class={t: int(self.cls[t][i]) for t in TYPE_TAGS},
            label_s={t: self.s[t][i] for t in TYPE_TAGS},
        )

    @classmethod
    def concat(cls, parts: Sequence[SampleBatch]) -> SampleBatch:
        return cls(
            syn={t: np.concatenate([p.syn[t] for p in parts]) for t in TYPE_TAGS},
            res_x=np.concatenate([p.res_x for p in parts]),
            res_z=np.concatenate([p.res_z for p in parts]),
            cls={t: np.concatenate([p.cls[t] for p in parts]) for t in TYPE_TAGS},
            s={t: np.concatenate([p.s[t] for p in parts]) for t in TYPE_TAGS},
        )

    def detected(self, type_tag: str) -> np.ndarray:
        """Residual component seen by the ``type_tag`` stabilizers."""
        return self.res_z if type_tag == "X" else self.res_x


def substream(seed: int, *counter: int) -> np.random.Generator:
    """Independent generator for ``(seed, *counter)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=counter)))


class FrameSimulator:
    """Batched Pauli-frame propagation through the syndrome-measurement circuit.

    Qubit layout: data ``0..n-1``, X ancillas ``n..n+a-1``, Z ancillas
    ``n+a..n+2a-1``.
    """

    def __init__(self, code: RscCode):
        self.code = code
        n, a = code.n, code.n_anc
        self.n_qubits = n + 2 * a
        self.anc = {"X": np.arange(n, n + a), "Z": np.arange(n + a, n + 2 * a)}
        self.steps = []
        for step in code.cnot_schedule:
            ctrl, targ = [], []
            for t, k, q in step:
                anc = int(self.anc[t][k])
                if t == "X":
                    ctrl.append(anc)
                    targ.append(q)
                else:
                    ctrl.append(q)
                    targ.append(anc)
            self.steps.append((np.array(ctrl), np.array(targ)))

    @cached_property
    def tables(self) -> dict:
        return {t: build_pure_error_table(self.code, t) for t in TYPE_TAGS}

    def run(
        self,
        params: NoiseParams,
        T: int,
        rng: np.random.Generator,
        batch: int,
        initial: tuple[np.ndarray, np.ndarray] | None = None,
        faults: Sequence[Fault] = (),
    ) -> tuple[dict, np.ndarray, np.ndarray]:
        """Run ``T`` rounds; return (syndromes by type, data x frame, data z frame).

        Random draws have fixed shapes that do not depend on the frame, so
        two runs with equal generators see identical noise.
        """
        if T < 1:
            raise ValueError("T must be at least 1")
        code = self.code
        n, a = code.n, code.n_anc
        fx = np.zeros((batch, self.n_qubits), np.uint8)
        fz = np.zeros((batch, self.n_qubits), np.uint8)
        if initial is not None:
            fx[:, :n] = initial[0]
            fz[:, :n] = initial[1]
        syn = {t: np.zeros((batch, T, a), np.uint8) for t in TYPE_TAGS}
        by_round: dict = {}
        for f in faults:
            by_round.setdefault(f.round, []).append(f)

        for r in range(T):
            fr = by_round.get(r, ())
            # storage noise on data qubits
            k = _draw_paulis(rng, (batch, n), params.p_s, 3)
            for f in fr:
                if f.kind == "storage":
                    k[:, f.where] ^= f.pauli
            fx[:, :n] ^= k & 1
            fz[:, :n] ^= k >> 1

            for si, (ctrl, targ) in enumerate(self.steps):
                fx[:, targ] ^= fx[:, ctrl]
                fz[:, ctrl] ^= fz[:, targ]
                gate_faults = [f for f in fr if f.kind == "gate" and f.where[0] == si]
                if params.model == "circuit" or gate_faults:
                    e = _draw_paulis(rng, (batch, ctrl.size), params.p_g, 15)
                    for f in gate_faults:
                        e[:, f.where[1]] ^= f.pauli
                    fx[:, ctrl] ^= e & 1
                    fz[:, ctrl] ^= (e >> 1) & 1
                    fx[:, targ] ^= (e >> 2) & 1
                    fz[:, targ] ^= (e >> 3) & 1

            # X checks read the Z frame of their ancilla, Z checks the X frame.
            out_x = fz[:, self.anc["X"]].copy()
            out_z = fx[:, self.anc["Z"]].copy()
            flips = (rng.random((batch, 2 * a)) < params.p_m).astype(np.uint8)
            out_x ^= flips[:, :a]
            out_z ^= flips[:, a:]
            for f in fr:
                if f.kind == "measure":
                    t, kk = f.where
                    (out_x if t == "X" else out_z)[:, kk] ^= 1
            syn["X"][:, r] = out_x
            syn["Z"][:, r] = out_z
            fx[:, n:] = 0
            fz[:, n:] = 0

        return syn, fx[:, :n].copy(), fz[:, :n].copy()

    def label(self, syn: dict, res_x: np.ndarray, res_z: np.ndarray) -> SampleBatch:
        cls, s = {}, {}
        for t in TYPE_TAGS:
            det = res_z if t == "X" else res_x
            st = syndrome_batch(self.code, det, t)
            corrected = det ^ pure_error_bits(self.tables[t], st)
            s[t] = st
            cls[t] = class_batch(self.code, corrected, t)
        return SampleBatch(syn=syn, res_x=res_x, res_z=res_z, cls=cls, s=s)

    def sample(
        self, params: NoiseParams, T: int, rng: np.random.Generator, batch: int, **kw
    ) -> SampleBatch:
        syn, rx, rz = self.run(params, T, rng, batch, **kw)
        return self.label(syn, rx, rz)


def _draw_paulis(rng: np.random.Generator, shape, p: float, n_kinds: int) -> np.ndarray:
    """Each entry nonzero with probability p, uniform over 1..n_kinds."""
    hit = rng.random(shape) < p
    out = np.zeros(shape, np.uint8)
    m = int(hit.sum())
    if m:
        out[hit] = rng.integers(1, n_kinds + 1, size=m, dtype=np.uint8)
    return out


_SIMS: dict = {}


def simulator(code: RscCode) -> FrameSimulator:
    sim = _SIMS.get(code.L)
    if sim is None:
        sim = _SIMS[code.L] = FrameSimulator(code)
    return sim


def simulate_rounds(
    code: RscCode,
    params: NoiseParams,
    T: int,
    rng_seed: int,
    faults: Sequence[Fault] = (),
) -> LabeledSample:
    """One labelled sample of ``T`` noisy measurement rounds from a clean frame."""
    if T < 1:
        raise ValueError("T must be at least 1")
    return simulator(code).sample(params, T, substream(rng_seed, 0), 1, faults=faults).sample(0)


def generate_batch(
    code: RscCode, params: NoiseParams, T: int, n_samples: int, rng_seed: int, start: int = 0
) -> SampleBatch:
    """Samples ``start .. start+n_samples-1`` of the dataset for ``rng_seed``.

    Sample ``i`` depends only on ``(rng_seed, i // BLOCK)``, so disjoint
    block ranges can be generated by separate workers and concatenated.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    if T < 1:
        raise ValueError("T must be at least 1")
    sim = simulator(code)
    parts = []
    first, last = start // BLOCK, (start + n_samples - 1) // BLOCK
    for b in range(first, last + 1):
        part = sim.sample(params, T, substream(rng_seed, b), BLOCK)
        lo = max(start, b * BLOCK) - b * BLOCK
        hi = min(start + n_samples, (b + 1) * BLOCK) - b * BLOCK
        parts.append(part[lo:hi])
    return SampleBatch.concat(parts)


def generate_dataset(
    code: RscCode, params: NoiseParams, T: int, n_samples: int, rng_seed: int
) -> Iterator[LabeledSample]:
    """Stream of i.i.d. labelled samples, deterministic in ``rng_seed``."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    done = 0
    while done < n_samples:
        take = min(BLOCK, n_samples - done)
        batch = generate_batch(code, params, T, take, rng_seed, start=done)
        for i in range(take):
            yield batch.sample(i)
        done += take


# --- dataset file ------------------------------------------------------------

_HEADER = struct.Struct("<4sHHHBx3dQ")


def _sample_bits(batch: SampleBatch) -> np.ndarray:
    b = len(batch)
    return np.concatenate(
        [
            batch.syn["X"].reshape(b, -1),
            batch.syn["Z"].reshape(b, -1),
            batch.res_x,
            batch.res_z,
            batch.cls["X"].reshape(b, 1),
            batch.cls["Z"].reshape(b, 1),
            batch.s["X"],
            batch.s["Z"],
        ],
        axis=1,
    ).astype(np.uint8)


def write_dataset(
    fh: io.BufferedIOBase, code: RscCode, params: NoiseParams, T: int, batch: SampleBatch
) -> None:
    model = 0 if params.model == "circuit" else 1
    fh.write(
        _HEADER.pack(
            DATASET_MAGIC, DATASET_VERSION, code.L, T, model,
            params.p_s, params.p_g, params.p_m, len(batch),
        )
    )
    fh.write(np.packbits(_sample_bits(batch), axis=1, bitorder="little").tobytes())


def read_dataset(fh: io.BufferedIOBase) -> tuple[int, int, NoiseParams, SampleBatch]:
    head = fh.read(_HEADER.size)
    if len(head) != _HEADER.size:
        raise ValueError("truncated dataset header")
    magic, version, L, T, model, ps, pg, pm, count = _HEADER.unpack(head)
    if magic != DATASET_MAGIC or version != DATASET_VERSION:
        raise ValueError("not a dataset file")
    n = L * L
    a = (n - 1) // 2
    width = 2 * T * a + 2 * n + 2 + 2 * a
    row = (width + 7) // 8
    raw = np.frombuffer(fh.read(row * count), np.uint8)
    if raw.size != row * count:
        raise ValueError("truncated dataset body")
    bits = np.unpackbits(raw.reshape(count, row), axis=1, count=width, bitorder="little")
    o = 0

    def take(k):
        nonlocal o
        v = bits[:, o : o + k]
        o += k
        return v

    sx = take(T * a).reshape(count, T, a)
    sz = take(T * a).reshape(count, T, a)
    rx, rz = take(n), take(n)
    cx, cz = take(1)[:, 0], take(1)[:, 0]
    lx, lz = take(a), take(a)
    params = NoiseParams(ps, pg, pm, "circuit" if model == 0 else "phenomenological")
    batch = SampleBatch(
        syn={"X": sx, "Z": sz}, res_x=rx, res_z=rz, cls={"X": cx, "Z": cz}, s={"X": lx, "Z": lz}
    )
    return L, T, params, batch
