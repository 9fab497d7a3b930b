"""Full decoders: the multi-task neural decoder and two exact baselines.

Every decoder maps a pair of raw syndrome arrays to a correction.  The
batched entry point ``decode_batch`` takes ``{tag: (B, T, n_anc)}`` and
returns ``(corr_x, corr_z)`` bit rows of shape ``(B, n)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from typing import BinaryIO

import numpy as np

from .code import (
    TYPE_TAGS,
    PauliOperator,
    PureErrorTable,
    RscCode,
    build_pure_error_table,
    combine_batch,
    stabilizer_graph,
)
from .neural import (
    FloatWeights,
    NetworkSpec,
    QuantizedNetwork,
    encode_syndromes,
    forward_float,
    forward_quantized,
    predict,
)
from .noise import SampleBatch

MAX_DEFECTS = 20
LUT_MAGIC = b"L3LU"
PRESET_IDS = {"standard": 0, "reweighted": 1, "google": 2, "custom": 255}


class MatchingOverflow(RuntimeError):
    """More defects than the exact matcher accepts."""


class Decoder:
    code: RscCode

    def predict_batch(self, syn: dict) -> dict:
        """tag -> (class bits (B,), s bits (B, n_anc)) for the detected error type."""
        raise NotImplementedError

    @cached_property
    def tables(self) -> dict:
        return {t: build_pure_error_table(self.code, t) for t in TYPE_TAGS}

    def decode_batch(self, syn: dict) -> tuple[np.ndarray, np.ndarray]:
        pred = self.predict_batch(syn)
        # X checks locate Z errors, Z checks locate X errors.
        corr_z = combine_batch(self.tables["X"], self.code, *pred["X"])
        corr_x = combine_batch(self.tables["Z"], self.code, *pred["Z"])
        return corr_x, corr_z

    def decode(self, syndromes: dict) -> PauliOperator:
        syn = {t: np.asarray(getattr(v, "bits", v))[None] for t, v in syndromes.items()}
        cx, cz = self.decode_batch(syn)
        return PauliOperator(cx[0], cz[0])


class IdentityDecoder(Decoder):
    """Applies no correction."""

    def __init__(self, code: RscCode):
        self.code = code

    def decode_batch(self, syn: dict):
        b = next(iter(syn.values())).shape[0]
        z = np.zeros((b, self.code.n), np.uint8)
        return z, z.copy()

    def predict_batch(self, syn: dict) -> dict:
        b = next(iter(syn.values())).shape[0]
        return {t: (np.zeros(b, np.uint8), np.zeros((b, self.code.n_anc), np.uint8)) for t in TYPE_TAGS}


# --- neural ------------------------------------------------------------------


class MtlndDecoder(Decoder):
    """Two per-type networks plus pure-error combination.

    ``nets[tag]`` is ``(spec, net)`` where ``net`` is a
    :class:`QuantizedNetwork` or :class:`FloatWeights`; the network for tag
    ``t`` reads the ``t`` syndromes.
    """

    def __init__(self, code: RscCode, nets: dict):
        self.code = code
        for t in TYPE_TAGS:
            spec = nets[t][0]
            if spec.L != code.L:
                raise ValueError(f"network for {t} is for L={spec.L}, code has L={code.L}")
        self.nets = nets

    def predict_batch(self, syn: dict) -> dict:
        out = {}
        for t in TYPE_TAGS:
            spec, net = self.nets[t]
            bits = syn[t]
            if bits.shape[1:] != (spec.T, self.code.n_anc):
                raise ValueError(f"syndrome shape {bits.shape[1:]} does not match T={spec.T}")
            x = encode_syndromes(self.code, bits, t)
            if isinstance(net, QuantizedNetwork):
                cl, sl = forward_quantized(net, x)
            else:
                cl, sl = forward_float(spec, net, x)
            out[t] = predict(cl, sl, spec.piece_sizes)
        return out


def mtlnd_decode(nets: dict, code: RscCode, syndromes: dict) -> PauliOperator:
    return MtlndDecoder(code, nets).decode(syndromes)


# --- exact matching ----------------------------------------------------------


@dataclass(frozen=True)
class DetectionGraph:
    """Space-time defects of one syndrome history and their pairwise costs.

    ``pair[i, j]`` = time separation + space distance; ``boundary[i]`` =
    cheaper of the spatial boundary and the open future boundary.
    """

    defects: tuple  # (round, stabilizer)
    pair: np.ndarray
    boundary: np.ndarray
    boundary_is_space: np.ndarray

    @classmethod
    def build(cls, code: RscCode, type_tag: str, bits: np.ndarray) -> DetectionGraph:
        g = stabilizer_graph(code, type_tag)
        T = bits.shape[0]
        ev = bits.copy()
        ev[1:] ^= bits[:-1]
        tt, kk = np.nonzero(ev)
        defects = tuple(zip(tt.tolist(), kk.tolist()))
        pair = np.abs(tt[:, None] - tt[None, :]) + g.dist[kk[:, None], kk[None, :]]
        space = g.dist[kk, g.boundary]
        future = T - tt
        return cls(defects, pair, np.minimum(space, future), space <= future)


def _dp_match(pair: np.ndarray, boundary: np.ndarray) -> tuple[int, list]:
    """Exact min-weight matching with optional boundary, O(2^k k) states.

    Returns (weight, [(i, j)]) with ``j = -1`` meaning boundary.
    """
    k = len(boundary)
    full = (1 << k) - 1
    memo: dict = {0: (0, None)}
    pl = pair.tolist()
    bl = boundary.tolist()

    def solve(mask: int) -> int:
        hit = memo.get(mask)
        if hit is not None:
            return hit[0]
        i = (mask & -mask).bit_length() - 1
        rest = mask & ~(1 << i)
        best = bl[i] + solve(rest)
        choice = -1
        row = pl[i]
        m = rest
        while m:
            j = (m & -m).bit_length() - 1
            m &= m - 1
            c = row[j] + solve(rest & ~(1 << j))
            if c < best:
                best, choice = c, j
        memo[mask] = (best, choice)
        return best

    total = solve(full)
    pairs = []
    mask = full
    while mask:
        i = (mask & -mask).bit_length() - 1
        j = memo[mask][1]
        pairs.append((i, j))
        mask &= ~(1 << i)
        if j >= 0:
            mask &= ~(1 << j)
    return total, pairs


def match_weight(pair: np.ndarray, boundary: np.ndarray) -> int:
    if len(boundary) > MAX_DEFECTS:
        raise MatchingOverflow(f"{len(boundary)} defects exceed the cap of {MAX_DEFECTS}")
    return _dp_match(pair, boundary)[0]


def _mwpm_bits(code: RscCode, type_tag: str, bits: np.ndarray) -> np.ndarray:
    """Detected-component correction for one type's (T, n_anc) history."""
    dg = DetectionGraph.build(code, type_tag, bits)
    k = len(dg.defects)
    if k > MAX_DEFECTS:
        raise MatchingOverflow(f"{k} defects exceed the cap of {MAX_DEFECTS}")
    out = np.zeros(code.n, np.uint8)
    if not k:
        return out
    g = stabilizer_graph(code, type_tag)
    _, pairs = _dp_match(dg.pair, dg.boundary)
    for i, j in pairs:
        ki = dg.defects[i][1]
        if j >= 0:
            chain = g.chains[ki][dg.defects[j][1]]
        elif dg.boundary_is_space[i]:
            chain = g.chains[ki][g.boundary]
        else:
            continue
        out[list(chain)] ^= 1
    return out


class MwpmDecoder(Decoder):
    """Exact matching on the unit-weight space-time detection graph.

    Results are memoised per syndrome history; on overflow the decoder
    falls back to the pure error of the last round when ``fallback`` is
    set and raises :class:`MatchingOverflow` otherwise.
    """

    def __init__(self, code: RscCode, fallback: bool = True, cache_size: int = 1 << 18):
        self.code = code
        self.fallback = fallback
        self.cache_size = cache_size
        self._cache: dict = {}
        self.overflows = 0

    def _one(self, t: str, bits: np.ndarray) -> np.ndarray:
        key = (t, bits.tobytes(), bits.shape[0])
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        try:
            out = _mwpm_bits(self.code, t, bits)
        except MatchingOverflow:
            if not self.fallback:
                raise
            self.overflows += 1
            from .code import pure_error_bits

            out = pure_error_bits(self.tables[t], bits[-1])
        if len(self._cache) < self.cache_size:
            self._cache[key] = out
        return out

    def decode_batch(self, syn: dict):
        corr = {}
        for t in TYPE_TAGS:
            bits = syn[t]
            corr[t] = np.stack([self._one(t, bits[i]) for i in range(bits.shape[0])])
        return corr["Z"], corr["X"]

    def predict_batch(self, syn: dict) -> dict:
        from .code import class_batch, pure_error_bits, syndrome_batch

        cx, cz = self.decode_batch(syn)
        out = {}
        for t, det in (("X", cz), ("Z", cx)):
            s = syndrome_batch(self.code, det, t)
            cls = class_batch(self.code, det ^ pure_error_bits(self.tables[t], s), t)
            out[t] = (cls, s)
        return out


def mwpm_decode(code: RscCode, syndromes: dict) -> PauliOperator:
    return MwpmDecoder(code, fallback=False).decode(syndromes)


# --- L=3 lookup table --------------------------------------------------------


def _keys(bits: np.ndarray) -> np.ndarray:
    flat = bits.reshape(bits.shape[0], -1).astype(np.int64)
    return (flat << np.arange(flat.shape[1])).sum(axis=1)


@dataclass
class LookupTable:
    """Most frequent (class, s) label per full raw syndrome history."""

    T: int
    preset_id: int
    label: dict  # tag -> (2^(4T),) int64, class * 16 + s, or -1 when unseen
    count: dict  # tag -> (2^(4T),) int64

    @property
    def key_bits(self) -> int:
        return 4 * self.T

    def entries(self, tag: str) -> int:
        return int(np.count_nonzero(self.label[tag] >= 0))

    @classmethod
    def build(cls, batch: SampleBatch, T: int, preset_id: int = 255) -> LookupTable:
        label, count = {}, {}
        for t in TYPE_TAGS:
            if batch.syn[t].shape[1:] != (T, 4):
                raise ValueError("lookup tables exist only for L=3")
            keys = _keys(batch.syn[t])
            lab = batch.cls[t].astype(np.int64) * 16 + _keys(batch.s[t][:, None, :])
            hist = np.zeros((1 << (4 * T), 32), np.int64)
            np.add.at(hist, (keys, lab), 1)
            best = hist.argmax(axis=1)
            seen = hist.sum(axis=1) > 0
            label[t] = np.where(seen, best, -1)
            count[t] = np.where(seen, hist.max(axis=1), 0)
        return cls(T, preset_id, label, count)

    def to_bytes(self) -> bytes:
        out = [struct.pack("<4sBBxx", LUT_MAGIC, self.preset_id, self.T)]
        rec = np.dtype([("ls", "u1"), ("count", "<u4")])
        for t in TYPE_TAGS:
            arr = np.zeros(1 << self.key_bits, rec)
            lab = np.where(self.label[t] >= 0, self.label[t], 0)
            # class bit in bit 4, s in the low nibble; count 0 marks unseen keys
            arr["ls"] = ((lab // 16) << 4) | (lab % 16)
            arr["count"] = self.count[t]
            out.append(arr.tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, blob: bytes) -> LookupTable:
        magic, preset_id, T = struct.unpack_from("<4sBBxx", blob)
        if magic != LUT_MAGIC:
            raise ValueError("not an L=3 lookup table")
        rec = np.dtype([("ls", "u1"), ("count", "<u4")])
        n = 1 << (4 * T)
        label, count = {}, {}
        off = 8
        for t in TYPE_TAGS:
            arr = np.frombuffer(blob, rec, count=n, offset=off)
            off += n * rec.itemsize
            lab = ((arr["ls"] >> 4) & 1).astype(np.int64) * 16 + (arr["ls"] & 15)
            count[t] = arr["count"].astype(np.int64)
            label[t] = np.where(count[t] > 0, lab, -1)
        return cls(T, preset_id, label, count)


class LutDecoder(Decoder):
    def __init__(self, code: RscCode, lut: LookupTable):
        if code.L != 3:
            raise ValueError("the lookup-table decoder supports L=3 only")
        self.code = code
        self.lut = lut

    def predict_batch(self, syn: dict) -> dict:
        out = {}
        for t in TYPE_TAGS:
            bits = syn[t]
            if bits.shape[1] != self.lut.T:
                raise ValueError(f"table built for T={self.lut.T}, got T={bits.shape[1]}")
            lab = self.lut.label[t][_keys(bits)]
            last = _keys(bits[:, -1:, :])
            cls = np.where(lab >= 0, lab // 16, 0).astype(np.uint8)
            s_int = np.where(lab >= 0, lab % 16, last)
            s = ((s_int[:, None] >> np.arange(4)) & 1).astype(np.uint8)
            out[t] = (cls, s)
        return out


def lut_decode_l3(lut: LookupTable, code: RscCode, syndromes: dict) -> PauliOperator:
    return LutDecoder(code, lut).decode(syndromes)
