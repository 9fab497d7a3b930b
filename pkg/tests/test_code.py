import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rscw.code import (
    PauliOperator,
    PureErrorTable,
    build_code,
    build_pure_error_table,
    class_batch,
    combine_batch,
    combine_error,
    commutation,
    decompose,
    homology_class,
    pure_error_bits,
    stabilizer_graph,
    syndrome,
    syndrome_batch,
)

DISTANCES = (3, 5, 7)


def _span(rows: np.ndarray) -> set:
    """Every XOR combination of ``rows`` as a bytes key (brute force)."""
    out = set()
    for pick in itertools.product((0, 1), repeat=rows.shape[0]):
        v = (np.array(pick, np.int64) @ rows.astype(np.int64)) & 1
        out.add(v.astype(np.uint8).tobytes())
    return out


# --- Pauli algebra -----------------------------------------------------------

paulis = st.integers(1, 12).flatmap(
    lambda n: st.tuples(
        st.text(alphabet="IXYZ", min_size=n, max_size=n),
        st.text(alphabet="IXYZ", min_size=n, max_size=n),
    )
)


@given(paulis)
def test_pauli_string_round_trip_and_product(pair):
    a, b = (PauliOperator.from_string(s) for s in pair)
    assert PauliOperator.from_string(a.to_string()) == a
    assert (a * b) * b == a
    assert (a * a).is_identity()
    assert commutation(a, b) == commutation(b, a)


def test_pauli_single_qubit_table():
    x, y, z = (PauliOperator.from_string(c) for c in "XYZ")
    assert x * z == y
    assert commutation(x, z) == 1 and commutation(x, x) == 0 and commutation(y, z) == 1
    assert PauliOperator.from_string("XIZY").weight == 3


def test_pauli_size_mismatch():
    with pytest.raises(ValueError):
        PauliOperator.from_string("XX") * PauliOperator.from_string("X")


@pytest.mark.parametrize("bad", [2, 4, 1, 17, 16])
def test_build_code_rejects(bad):
    with pytest.raises(ValueError):
        build_code(bad)


def test_build_code_type_error():
    with pytest.raises(TypeError):
        build_code(3.0)


# --- lattice -----------------------------------------------------------------


@pytest.mark.parametrize("L", DISTANCES)
def test_stabilizer_group_structure(L):
    code = build_code(L)
    n = L * L
    for t in "XZ":
        assert len(code.stabilizers(t)) == (n - 1) // 2
    stabs = code.x_stabilizers + code.z_stabilizers
    for a, b in itertools.combinations(stabs, 2):
        assert commutation(a, b) == 0
    for s in stabs:
        assert commutation(s, code.logical_x) == 0
        assert commutation(s, code.logical_z) == 0
    assert commutation(code.logical_x, code.logical_z) == 1
    weights = sorted(s.weight for s in stabs)
    assert weights.count(2) == 2 * (L - 1)
    assert set(weights) == {2, 4}


@pytest.mark.parametrize("L", DISTANCES)
def test_cnot_schedule_touches_each_qubit_once_per_step(L):
    code = build_code(L)
    for step in code.cnot_schedule:
        qubits = [q for _, _, q in step]
        ancillas = [(t, k) for t, k, _ in step]
        assert len(set(qubits)) == len(qubits)
        assert len(set(ancillas)) == len(ancillas)
    total = sum(len(s) for s in code.cnot_schedule)
    assert total == sum(len(s) for t in "XZ" for s in code.supports[t])


def test_l3_x_supports():
    code = build_code(3)
    assert code.supports["X"] == ((1, 2), (0, 1, 3, 4), (4, 5, 7, 8), (6, 7))


@pytest.mark.parametrize("L", DISTANCES)
def test_stabilizer_graph_distances(L):
    code = build_code(L)
    for t in "XZ":
        g = stabilizer_graph(code, t)
        h = code.check_matrix[t]
        for u in range(g.n_anc + 1):
            for v in range(g.n_anc + 1):
                chain = g.chains[u][v]
                assert len(chain) == g.dist[u, v]
                e = np.zeros(code.n, np.uint8)
                e[list(chain)] = 1
                s = (h.astype(np.int64) @ e) & 1
                want = np.zeros(g.n_anc, np.uint8)
                for node in (u, v):
                    if node < g.n_anc and u != v:
                        want[node] ^= 1
                assert (s == want).all()


# --- pure errors and the (class, s) partition -----------------------------


@pytest.mark.parametrize("L", DISTANCES)
def test_unit_syndromes(L):
    code = build_code(L)
    for t in "XZ":
        table = build_pure_error_table(code, t)
        for k, e in enumerate(table.entries):
            want = np.zeros(code.n_anc, np.uint8)
            want[k] = 1
            assert (syndrome(code, e, t) == want).all()


@pytest.mark.parametrize("L", [3, 5, 7, 9, 11, 13, 15])
def test_table_size_is_l4_minus_l2(L):
    code = build_code(L)
    total = sum(build_pure_error_table(code, t).size_bits for t in "XZ")
    assert total == L**4 - L**2


def test_l13_table_size():
    code = build_code(13)
    total = sum(build_pure_error_table(code, t).size_bits for t in "XZ")
    assert total == 28392
    assert round(total / 8 / 1024, 1) == 3.5


@pytest.mark.parametrize("t", "XZ")
def test_l3_partition_by_enumeration(t):
    """All 2^9 single-type errors split into 32 cosets of the stabilizer group."""
    code = build_code(3)
    table = build_pure_error_table(code, t)
    other = "Z" if t == "X" else "X"
    group = _span(code.check_matrix[other])  # stabilizers built from the same Pauli kind
    assert len(group) == 16
    seen: dict = {}
    for bits in itertools.product((0, 1), repeat=9):
        e = np.array(bits, np.uint8)
        op = PauliOperator.from_support(9, "Z" if t == "X" else "X", np.flatnonzero(e))
        cls, s = decompose(code, table, op)
        rep = combine_error(table, cls, s, code)
        rep_bits = rep.z_bits if t == "X" else rep.x_bits
        assert (e ^ rep_bits).tobytes() in group
        seen.setdefault((cls, s.tobytes()), 0)
        seen[(cls, s.tobytes())] += 1
    assert len(seen) == 32
    assert set(seen.values()) == {16}


def test_l3_combine_exhaustive(code3):
    for t in "XZ":
        table = build_pure_error_table(code3, t)
        for cls in (0, 1):
            for s in itertools.product((0, 1), repeat=4):
                s = np.array(s, np.uint8)
                e = combine_error(table, cls, s, code3)
                assert (syndrome(code3, e, t) == s).all()
                assert decompose(code3, table, e)[0] == cls


@pytest.mark.parametrize("L", [5, 7])
def test_combine_random_pairs(L, rng):
    code = build_code(L)
    for t in "XZ":
        table = build_pure_error_table(code, t)
        s = rng.integers(0, 2, (10_000, code.n_anc)).astype(np.uint8)
        cls = rng.integers(0, 2, 10_000).astype(np.uint8)
        e = combine_batch(table, code, cls, s)
        assert (syndrome_batch(code, e, t) == s).all()
        residual = e ^ pure_error_bits(table, s)
        assert (syndrome_batch(code, residual, t) == 0).all()
        assert (class_batch(code, residual, t) == cls).all()


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(DISTANCES), st.sampled_from("XZ"), st.data())
def test_decompose_round_trip(L, t, data):
    code = build_code(L)
    table = build_pure_error_table(code, t)
    bits = np.array(data.draw(st.lists(st.integers(0, 1), min_size=L * L, max_size=L * L)), np.uint8)
    kind = "Z" if t == "X" else "X"
    e = PauliOperator.from_support(code.n, kind, np.flatnonzero(bits))
    cls, s = decompose(code, table, e)
    rebuilt = combine_error(table, cls, s, code)
    # e and its (class, s) representative differ by a stabilizer: same syndrome, same class
    diff = e * rebuilt
    assert not syndrome(code, diff, t).any()
    assert homology_class(code, diff, t) == 0


def test_logicals_have_class_one(code3):
    assert homology_class(code3, code3.logical_z, "X") == 1
    assert homology_class(code3, code3.logical_x, "Z") == 1
    for s in code3.z_stabilizers:
        assert homology_class(code3, s, "X") == 0


def test_homology_requires_syndrome_free(code3):
    with pytest.raises(ValueError):
        homology_class(code3, PauliOperator.from_support(9, "Z", [4]), "X")


def test_combine_error_length_check(code3):
    table = build_pure_error_table(code3, "X")
    with pytest.raises(ValueError):
        combine_error(table, 0, np.zeros(3, np.uint8), code3)


@pytest.mark.parametrize("L", DISTANCES)
def test_table_bytes_round_trip(L):
    code = build_code(L)
    for t in "XZ":
        table = build_pure_error_table(code, t)
        back = PureErrorTable.from_bytes(table.to_bytes())
        assert back.type_tag == t and back.L == L
        assert (back.rows == table.rows).all()


def test_table_bytes_bad_magic():
    with pytest.raises(ValueError):
        PureErrorTable.from_bytes(b"XXXX" + bytes(40))


def test_qubit_and_check_counts():
    for L, n in ((3, 9), (5, 25)):
        code = build_code(L)
        assert code.n == n
        assert len(code.x_stabilizers) == len(code.z_stabilizers) == (n - 1) // 2
    assert build_code(7).logical_x.weight == 7


def test_bulk_error_flips_two_checks(code3):
    assert not syndrome(code3, PauliOperator.from_string("I" * 9), "X").any()
    assert syndrome(code3, PauliOperator.from_support(9, "Z", [4]), "X").sum() == 2


def test_combine_trivial_cases(code3):
    zero = np.zeros(4, np.uint8)
    for t in "XZ":
        table = build_pure_error_table(code3, t)
        assert combine_error(table, 0, zero, code3).is_identity()
        rep = combine_error(table, 1, zero, code3)
        assert not syndrome(code3, rep, t).any()
        assert homology_class(code3, rep, t) == 1


def test_stabilizer_times_logical_by_group_enumeration(code3):
    group = _span(code3.check_matrix["Z"])  # all 16 products of Z-type stabilizers
    for bits in group:
        s = np.frombuffer(bits, np.uint8)
        op = PauliOperator.from_support(9, "Z", np.flatnonzero(s))
        assert homology_class(code3, op, "X") == 0
        assert homology_class(code3, op * code3.logical_z, "X") == 1


def test_pure_error_linearity_l3(code3):
    """T(s1 xor s2) equals T(s1) T(s2) up to a stabilizer, for all 16 x 16 pairs."""
    for t in "XZ":
        table = build_pure_error_table(code3, t)
        other = "Z" if t == "X" else "X"
        group = _span(code3.check_matrix[other])
        grid = [np.array([(v >> i) & 1 for i in range(4)], np.uint8) for v in range(16)]
        for a, b in itertools.product(grid, grid):
            lhs = pure_error_bits(table, (a ^ b)[None])[0]
            rhs = pure_error_bits(table, a[None])[0] ^ pure_error_bits(table, b[None])[0]
            assert (lhs ^ rhs).tobytes() in group
