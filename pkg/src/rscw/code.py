"""Rotated surface code algebra.

Lattice construction, symplectic Pauli arithmetic, syndromes, homology
classes, and the pure-error lookup tables used to turn a predicted
``(class, s)`` pair back into a Pauli correction.

Conventions
-----------
Data qubit ``(r, c)`` of the ``L x L`` grid has index ``r * L + c``.
Stabilizers live on the ``(L+1) x (L+1)`` grid of plaquette corners; the
plaquette at ``(i, j)`` touches data qubits ``(i-1, j-1), (i-1, j), (i, j-1),
(i, j)`` that exist.  X-type when ``(i + j)`` is even.  Weight-2 X checks sit
on the top and bottom edges, weight-2 Z checks on the left and right edges.

A type tag always names the *stabilizer* type.  X stabilizers detect the
Z component of an error, so the pure errors for the X table are Z-type
Pauli strings and the logical class for tag ``"X"`` is read off against the
X logical.
"""

from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np

TypeTag = Literal["X", "Z"]
TYPE_TAGS: tuple[TypeTag, TypeTag] = ("X", "Z")

# CNOT visiting order, offsets (dr, dc) from plaquette corner to data qubit.
# X checks sweep NW, NE, SW, SE (hook lands on a horizontal pair),
# Z checks sweep NW, SW, NE, SE (hook lands on a vertical pair).
_NW, _NE, _SW, _SE = (-1, -1), (-1, 0), (0, -1), (0, 0)
_ORDER = {"X": (_NW, _NE, _SW, _SE), "Z": (_NW, _SW, _NE, _SE)}

LUT_MAGIC = b"RSCL"
LUT_VERSION = 1


def _frozen(a) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.uint8)
    a.setflags(write=False)
    return a


def _check_tag(type_tag: str) -> TypeTag:
    if type_tag not in TYPE_TAGS:
        raise ValueError(f"type tag must be 'X' or 'Z', got {type_tag!r}")
    return type_tag  # type: ignore[return-value]


@dataclass(frozen=True, eq=False)
class PauliOperator:
    """n-qubit Pauli in symplectic form, phase dropped."""

    x_bits: np.ndarray
    z_bits: np.ndarray

    def __post_init__(self):
        x = _frozen(np.asarray(self.x_bits) & 1)
        z = _frozen(np.asarray(self.z_bits) & 1)
        if x.ndim != 1 or x.shape != z.shape:
            raise ValueError("x_bits and z_bits must be 1-D of equal length")
        object.__setattr__(self, "x_bits", x)
        object.__setattr__(self, "z_bits", z)

    @property
    def n(self) -> int:
        return self.x_bits.size

    @classmethod
    def identity(cls, n: int) -> PauliOperator:
        return cls(np.zeros(n, np.uint8), np.zeros(n, np.uint8))

    @classmethod
    def from_support(cls, n: int, kind: str, qubits) -> PauliOperator:
        """Single-kind operator ``kind`` ('X', 'Y' or 'Z') on ``qubits``."""
        x = np.zeros(n, np.uint8)
        z = np.zeros(n, np.uint8)
        idx = list(qubits)
        if kind in ("X", "Y"):
            x[idx] = 1
        if kind in ("Z", "Y"):
            z[idx] = 1
        if kind not in ("X", "Y", "Z"):
            raise ValueError(f"unknown Pauli kind {kind!r}")
        return cls(x, z)

    @classmethod
    def from_string(cls, s: str) -> PauliOperator:
        x = np.array([ch in "XY" for ch in s], np.uint8)
        z = np.array([ch in "ZY" for ch in s], np.uint8)
        return cls(x, z)

    def __mul__(self, other: PauliOperator) -> PauliOperator:
        if self.n != other.n:
            raise ValueError(f"size mismatch: {self.n} vs {other.n}")
        return PauliOperator(self.x_bits ^ other.x_bits, self.z_bits ^ other.z_bits)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PauliOperator):
            return NotImplemented
        return (
            self.n == other.n
            and np.array_equal(self.x_bits, other.x_bits)
            and np.array_equal(self.z_bits, other.z_bits)
        )

    def __hash__(self) -> int:
        return hash((self.x_bits.tobytes(), self.z_bits.tobytes()))

    def __repr__(self) -> str:
        return f"PauliOperator({self.to_string()!r})"

    def to_string(self) -> str:
        chars = "IXZY"
        return "".join(chars[x + 2 * z] for x, z in zip(self.x_bits, self.z_bits))

    @property
    def weight(self) -> int:
        return int(np.count_nonzero(self.x_bits | self.z_bits))

    def is_identity(self) -> bool:
        return not (self.x_bits.any() or self.z_bits.any())

    def x_part(self) -> PauliOperator:
        return PauliOperator(self.x_bits, np.zeros_like(self.z_bits))

    def z_part(self) -> PauliOperator:
        return PauliOperator(np.zeros_like(self.x_bits), self.z_bits)


def commutation(p: PauliOperator, q: PauliOperator) -> int:
    """0 if ``p`` and ``q`` commute, 1 if they anticommute."""
    if p.n != q.n:
        raise ValueError(f"size mismatch: {p.n} vs {q.n}")
    s = np.dot(p.x_bits, q.z_bits).item() + np.dot(p.z_bits, q.x_bits).item()
    return s & 1


@dataclass(frozen=True, eq=False)
class RscCode:
    """Distance-``L`` rotated surface code geometry."""

    L: int
    x_stabilizers: tuple[PauliOperator, ...]
    z_stabilizers: tuple[PauliOperator, ...]
    logical_x: PauliOperator
    logical_z: PauliOperator
    ancilla_coords: dict  # type tag -> tuple of (i, j) plaquette corners
    supports: dict  # type tag -> tuple of qubit-index tuples, in CNOT order
    cnot_schedule: tuple  # 4 steps of (type tag, stabilizer index, data qubit)

    @property
    def n(self) -> int:
        return self.L * self.L

    @property
    def n_anc(self) -> int:
        """Stabilizer count per type, (L^2 - 1) / 2."""
        return (self.L * self.L - 1) // 2

    @property
    def data_qubits(self) -> tuple[tuple[int, int], ...]:
        return tuple((r, c) for r in range(self.L) for c in range(self.L))

    def stabilizers(self, type_tag: str) -> tuple[PauliOperator, ...]:
        return self.x_stabilizers if _check_tag(type_tag) == "X" else self.z_stabilizers

    def logical(self, type_tag: str) -> PauliOperator:
        return self.logical_x if _check_tag(type_tag) == "X" else self.logical_z

    @cached_property
    def check_matrix(self) -> dict:
        """type tag -> (n_anc, n) 0/1 incidence matrix of stabilizer supports."""
        out = {}
        for t in TYPE_TAGS:
            h = np.zeros((self.n_anc, self.n), np.uint8)
            for k, sup in enumerate(self.supports[t]):
                h[k, list(sup)] = 1
            h.setflags(write=False)
            out[t] = h
        return out

    @cached_property
    def logical_support(self) -> dict:
        """type tag -> 0/1 support vector of that type's logical operator."""
        lx = self.logical_x.x_bits.copy()
        lz = self.logical_z.z_bits.copy()
        return {"X": _frozen(lx), "Z": _frozen(lz)}

    @cached_property
    def logical_error(self) -> dict:
        """type tag -> support of the logical operator built from the errors that
        tag detects (Z logical for X checks, X logical for Z checks)."""
        return {"X": _frozen(self.logical_z.z_bits.copy()), "Z": _frozen(self.logical_x.x_bits.copy())}

    @cached_property
    def grid_index(self) -> dict:
        """type tag -> (rows, cols) positions of each stabilizer on the (L+1)^2 grid."""
        return {
            t: (
                np.array([ij[0] for ij in self.ancilla_coords[t]]),
                np.array([ij[1] for ij in self.ancilla_coords[t]]),
            )
            for t in TYPE_TAGS
        }


def build_code(L: int) -> RscCode:
    """Construct the rotated surface code of odd distance ``3 <= L <= 15``."""
    if not isinstance(L, (int, np.integer)) or isinstance(L, bool):
        raise TypeError("L must be an integer")
    L = int(L)
    if L % 2 == 0 or not 3 <= L <= 15:
        raise ValueError(f"L must be odd with 3 <= L <= 15, got {L}")
    n = L * L

    coords: dict = {"X": [], "Z": []}
    supports: dict = {"X": [], "Z": []}
    for i in range(L + 1):
        for j in range(L + 1):
            t = "X" if (i + j) % 2 == 0 else "Z"
            on_tb = i in (0, L)
            on_lr = j in (0, L)
            if on_tb and on_lr:
                continue
            if on_tb and t != "X":
                continue
            if on_lr and t != "Z":
                continue
            sup = []
            for dr, dc in _ORDER[t]:
                r, c = i + dr, j + dc
                if 0 <= r < L and 0 <= c < L:
                    sup.append(r * L + c)
            coords[t].append((i, j))
            supports[t].append(tuple(sup))

    xs = tuple(PauliOperator.from_support(n, "X", s) for s in supports["X"])
    zs = tuple(PauliOperator.from_support(n, "Z", s) for s in supports["Z"])
    # Z strings end on the left/right edges, X strings on the top/bottom.
    logical_z = PauliOperator.from_support(n, "Z", range(L))
    logical_x = PauliOperator.from_support(n, "X", range(0, n, L))

    steps: list[list] = [[], [], [], []]
    for t in TYPE_TAGS:
        for k, (i, j) in enumerate(coords[t]):
            for step, (dr, dc) in enumerate(_ORDER[t]):
                r, c = i + dr, j + dc
                if 0 <= r < L and 0 <= c < L:
                    steps[step].append((t, k, r * L + c))

    return RscCode(
        L=L,
        x_stabilizers=xs,
        z_stabilizers=zs,
        logical_x=logical_x,
        logical_z=logical_z,
        ancilla_coords={t: tuple(coords[t]) for t in TYPE_TAGS},
        supports={t: tuple(supports[t]) for t in TYPE_TAGS},
        cnot_schedule=tuple(tuple(s) for s in steps),
    )


def _detected_bits(e: PauliOperator, type_tag: TypeTag) -> np.ndarray:
    # X checks see the Z component and vice versa.
    return e.z_bits if type_tag == "X" else e.x_bits


def syndrome(code: RscCode, e: PauliOperator, type_tag: str) -> np.ndarray:
    """Syndrome bits of ``e`` against the stabilizers of ``type_tag``."""
    t = _check_tag(type_tag)
    if e.n != code.n:
        raise ValueError(f"operator has {e.n} qubits, code has {code.n}")
    return (code.check_matrix[t] @ _detected_bits(e, t)) & 1


def syndrome_batch(code: RscCode, bits: np.ndarray, type_tag: str) -> np.ndarray:
    """Vectorised syndrome of the detected component ``bits`` with shape (..., n)."""
    t = _check_tag(type_tag)
    return (bits.astype(np.int64) @ code.check_matrix[t].T.astype(np.int64) & 1).astype(np.uint8)


def homology_class(code: RscCode, residual: PauliOperator, type_tag: str) -> int:
    """Logical class of a residual that is syndrome-free for ``type_tag``."""
    t = _check_tag(type_tag)
    if syndrome(code, residual, t).any():
        raise ValueError("residual has a nonzero syndrome; multiply by the pure error first")
    return int(np.dot(_detected_bits(residual, t), code.logical_support[t]).item() & 1)


def class_batch(code: RscCode, bits: np.ndarray, type_tag: str) -> np.ndarray:
    t = _check_tag(type_tag)
    return ((bits.astype(np.int64) @ code.logical_support[t].astype(np.int64)) & 1).astype(np.uint8)


# --- stabilizer graph --------------------------------------------------------


@dataclass(frozen=True)
class StabilizerGraph:
    """Decoding graph for one stabilizer type.

    Nodes ``0..n_anc-1`` are stabilizers and ``n_anc`` is the boundary.  Each
    data qubit that the type detects contributes one edge.
    """

    n_anc: int
    edges: tuple  # (u, v, qubit), u < v, sorted by qubit
    dist: np.ndarray = field(repr=False)  # (n_anc+1, n_anc+1) hop distances
    chains: tuple = field(repr=False)  # chains[u][v] -> tuple of qubits

    @property
    def boundary(self) -> int:
        return self.n_anc


def _shortest_chains(n_nodes: int, adj: list) -> tuple[np.ndarray, tuple]:
    """All-pairs min-weight chains; ties resolved toward the lexicographically
    smallest sorted qubit tuple."""
    dist = np.zeros((n_nodes, n_nodes), np.int64)
    chains = []
    for src in range(n_nodes):
        best: dict = {src: (0, ())}
        heap = [(0, (), src)]
        done = set()
        while heap:
            d, q, u = heapq.heappop(heap)
            if u in done:
                continue
            done.add(u)
            for v, qubit in adj[u]:
                cand = (d + 1, tuple(sorted(q + (qubit,))))
                if v not in best or cand < best[v]:
                    best[v] = cand
                    heapq.heappush(heap, (cand[0], cand[1], v))
        row = []
        for v in range(n_nodes):
            d, q = best[v]
            dist[src, v] = d
            row.append(q)
        chains.append(tuple(row))
    dist.setflags(write=False)
    return dist, tuple(chains)


_GRAPH_CACHE: dict = {}


def stabilizer_graph(code: RscCode, type_tag: str) -> StabilizerGraph:
    t = _check_tag(type_tag)
    key = (code.L, t)
    if key in _GRAPH_CACHE:
        return _GRAPH_CACHE[key]
    h = code.check_matrix[t]
    nb = code.n_anc
    edges = []
    for q in range(code.n):
        owners = np.flatnonzero(h[:, q]).tolist()
        if len(owners) == 2:
            edges.append((owners[0], owners[1], q))
        elif len(owners) == 1:
            edges.append((owners[0], nb, q))
    adj: list = [[] for _ in range(nb + 1)]
    for u, v, q in edges:
        adj[u].append((v, q))
        adj[v].append((u, q))
    dist, chains = _shortest_chains(nb + 1, adj)
    g = StabilizerGraph(n_anc=nb, edges=tuple(edges), dist=dist, chains=chains)
    _GRAPH_CACHE[key] = g
    return g


# --- pure errors -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PureErrorTable:
    """Row ``k`` is a single-type Pauli whose syndrome is the unit string h_k."""

    type_tag: TypeTag
    L: int
    entries: tuple[PauliOperator, ...]

    @cached_property
    def rows(self) -> np.ndarray:
        """(n_anc, L^2) matrix of the detected component of each entry."""
        m = np.stack([_detected_bits(e, self.type_tag) for e in self.entries])
        m.setflags(write=False)
        return m

    @property
    def size_bits(self) -> int:
        return len(self.entries) * self.L * self.L

    def to_bytes(self) -> bytes:
        head = struct.pack("<4sHHB7x", LUT_MAGIC, LUT_VERSION, self.L, ord(self.type_tag))
        body = np.packbits(self.rows, axis=1, bitorder="little")
        return head + body.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> PureErrorTable:
        if len(blob) < 16:
            raise ValueError("truncated pure-error table")
        magic, version, L, tag = struct.unpack_from("<4sHHB7x", blob)
        if magic != LUT_MAGIC or version != LUT_VERSION:
            raise ValueError("not a pure-error table blob")
        t = _check_tag(chr(tag))
        n = L * L
        n_rows = (n - 1) // 2
        row_bytes = (n + 7) // 8
        body = np.frombuffer(blob, np.uint8, count=n_rows * row_bytes, offset=16)
        rows = np.unpackbits(body.reshape(n_rows, row_bytes), axis=1, count=n, bitorder="little")
        kind = "Z" if t == "X" else "X"
        entries = tuple(PauliOperator.from_support(n, kind, np.flatnonzero(r)) for r in rows)
        return cls(type_tag=t, L=L, entries=entries)


def build_pure_error_table(code: RscCode, type_tag: str) -> PureErrorTable:
    """Minimum-weight chain from each stabilizer to its compatible boundary."""
    t = _check_tag(type_tag)
    g = stabilizer_graph(code, t)
    kind = "Z" if t == "X" else "X"
    entries = tuple(
        PauliOperator.from_support(code.n, kind, g.chains[k][g.boundary]) for k in range(code.n_anc)
    )
    return PureErrorTable(type_tag=t, L=code.L, entries=entries)


def pure_error_bits(table: PureErrorTable, s_bits: np.ndarray) -> np.ndarray:
    """Detected component of the pure error for syndrome(s) ``s_bits`` (..., n_anc)."""
    s = np.asarray(s_bits, np.int64)
    return ((s @ table.rows.astype(np.int64)) & 1).astype(np.uint8)


def combine_error(
    table: PureErrorTable, class_bit: int, s_bits, code: RscCode
) -> PauliOperator:
    """Logical^class times the XOR of the table rows selected by ``s_bits``."""
    s = np.asarray(s_bits, np.uint8).ravel()
    if s.size != code.n_anc:
        raise ValueError(f"expected {code.n_anc} syndrome bits, got {s.size}")
    if class_bit not in (0, 1):
        raise ValueError("class bit must be 0 or 1")
    bits = pure_error_bits(table, s)
    if class_bit:
        bits = bits ^ code.logical_error[table.type_tag]
    kind = "Z" if table.type_tag == "X" else "X"
    return PauliOperator.from_support(code.n, kind, np.flatnonzero(bits))


def combine_batch(
    table: PureErrorTable, code: RscCode, class_bits: np.ndarray, s_bits: np.ndarray
) -> np.ndarray:
    """Vectorised :func:`combine_error` returning detected-component bit rows."""
    bits = pure_error_bits(table, s_bits)
    c = np.asarray(class_bits, np.uint8).reshape(-1, 1)
    return bits ^ (c * code.logical_error[table.type_tag])


def decompose(
    code: RscCode, table: PureErrorTable, e: PauliOperator
) -> tuple[int, np.ndarray]:
    """``(class, s)`` label of ``e`` with respect to ``table``'s stabilizer type."""
    t = table.type_tag
    s = syndrome(code, e, t)
    corrected = _detected_bits(e, t) ^ pure_error_bits(table, s)
    return int(np.dot(corrected, code.logical_support[t]).item() & 1), s
