import io

import numpy as np
import pytest

from rscw.code import build_code, syndrome_batch
from rscw.noise import (
    BLOCK,
    Fault,
    NoiseParams,
    generate_batch,
    generate_dataset,
    preset,
    read_dataset,
    simulate_rounds,
    simulator,
    substream,
    write_dataset,
)

# Pr[residual X-check syndrome != 0] for L=3, T=2, uniform circuit noise p=0.01,
# computed by the exact convolution below and frozen.
ORACLE_L3_T2_P01 = 0.32086410056757253


# --- independent reference: single-fault propagation ------------------------


def _circuit(code):
    """Flat list of (round-local step, [(ctrl, targ)]) with symbolic qubit names."""
    steps = []
    for step in code.cnot_schedule:
        pairs = []
        for t, k, q in step:
            anc = ("a", t, k)
            pairs.append((anc, ("d", q)) if t == "X" else (("d", q), anc))
        steps.append(pairs)
    return steps


def _propagate(code, T, r0, after_step, pauli: dict) -> np.ndarray:
    """Push ``pauli`` (qubit -> (x, z)) from round r0, after CNOT step
    ``after_step`` (-1 = before the first), to the end; return data z bits."""
    frame = dict(pauli)
    steps = _circuit(code)
    for r in range(r0, T):
        start = after_step + 1 if r == r0 else 0
        for pairs in steps[start:]:
            for c, t in pairs:
                xc, zc = frame.get(c, (0, 0))
                xt, zt = frame.get(t, (0, 0))
                frame[t] = (xt ^ xc, zt)
                frame[c] = (xc, zc ^ zt)
        frame = {q: v for q, v in frame.items() if q[0] == "d"}  # ancillas reset
    z = np.zeros(code.n, np.uint8)
    for (kind, q), (_, zb) in frame.items():
        z[q] = zb
    return z


def _fault_locations(code, T, p):
    """Every single-fault location as a list of (probability, syndrome key)."""
    steps = _circuit(code)

    def key(z):
        s = syndrome_batch(code, z[None], "X")[0]
        return int((s.astype(np.int64) << np.arange(code.n_anc)).sum())

    locs = []
    for r in range(T):
        for q in range(code.n):
            locs.append([(p / 3, key(_propagate(code, T, r, -1, {("d", q): (k & 1, k >> 1)})))
                         for k in (1, 2, 3)])
        for si, pairs in enumerate(steps):
            for c, t in pairs:
                outs = []
                for e in range(1, 16):
                    pl = {c: (e & 1, (e >> 1) & 1), t: ((e >> 2) & 1, (e >> 3) & 1)}
                    outs.append((p / 15, key(_propagate(code, T, r, si, pl))))
                locs.append(outs)
    return locs


def _exact_syndrome_distribution(code, T, p):
    """XOR-convolution of independent fault locations."""
    size = 1 << code.n_anc
    dist = np.zeros(size)
    dist[0] = 1.0
    idx = np.arange(size)
    for outcomes in _fault_locations(code, T, p):
        new = dist * (1.0 - sum(pr for pr, _ in outcomes))
        for pr, k in outcomes:
            new += pr * dist[idx ^ k]
        dist = new
    return dist


def _first_order(code, T, p):
    return sum(pr for outs in _fault_locations(code, T, p) for pr, k in outs if k)


def test_oracle_value_is_frozen():
    dist = _exact_syndrome_distribution(build_code(3), 2, 0.01)
    assert dist.sum() == pytest.approx(1.0, abs=1e-12)
    assert 1.0 - dist[0] == pytest.approx(ORACLE_L3_T2_P01, abs=1e-12)


def test_simulator_matches_exact_label_distribution():
    code = build_code(3)
    n = 400_000
    batch = generate_batch(code, NoiseParams.uniform(0.01), 2, n, seed := 99)
    hit = batch.s["X"].any(axis=1).mean()
    sigma = np.sqrt(ORACLE_L3_T2_P01 * (1 - ORACLE_L3_T2_P01) / n)
    assert abs(hit - ORACLE_L3_T2_P01) < 5 * sigma, (hit, seed)


def test_simulator_matches_convolution_at_t3():
    code = build_code(3)
    exact = 1.0 - _exact_syndrome_distribution(code, 3, 0.01)[0]
    n = 200_000
    hit = generate_batch(code, NoiseParams.uniform(0.01), 3, n, 5).s["X"].any(axis=1).mean()
    assert abs(hit - exact) < 5 * np.sqrt(exact * (1 - exact) / n)


def test_first_order_single_fault_count_at_low_noise():
    # first order is only meaningful while p * (number of locations) is small
    code = build_code(3)
    first = _first_order(code, 3, 0.001)
    hit = generate_batch(code, NoiseParams.uniform(0.001), 3, 200_000, 6).s["X"].any(axis=1).mean()
    assert abs(hit - first) <= 0.2 * first


def test_standard_preset_at_zero_and_byte_stream(code3):
    assert preset("standard", 0.0) == NoiseParams(0.0, 0.0, 0.0)
    p = NoiseParams.uniform(0.01)
    blobs = []
    for _ in range(2):
        buf = io.BytesIO()
        write_dataset(buf, code3, p, 3, generate_batch(code3, p, 3, 1000, 12))
        blobs.append(buf.getvalue())
    assert blobs[0] == blobs[1]


# --- deterministic behaviour -------------------------------------------------


def test_zero_noise_gives_zero_syndromes(code3):
    batch = generate_batch(code3, NoiseParams.uniform(0.0), 4, 100, 1)
    for t in "XZ":
        assert not batch.syn[t].any()
        assert not batch.cls[t].any() and not batch.s[t].any()
    assert not batch.res_x.any() and not batch.res_z.any()


def test_storage_fault_shows_in_all_later_rounds(code3):
    # X error on the centre qubit flips the two Z checks that contain it
    s = simulate_rounds(code3, NoiseParams.uniform(0.0), 4, 0, faults=[Fault(1, "storage", 4, 1)])
    z = s.syndromes["Z"].bits
    assert not z[0].any()
    owners = [k for k, sup in enumerate(code3.supports["Z"]) if 4 in sup]
    for r in range(1, 4):
        assert sorted(np.flatnonzero(z[r])) == owners
    assert not s.syndromes["X"].bits.any()
    assert s.residual.x_bits[4] == 1


def test_measurement_fault_is_transient(code3):
    s = simulate_rounds(code3, NoiseParams.uniform(0.0), 3, 0, faults=[Fault(1, "measure", ("X", 2), 0)])
    x = s.syndromes["X"].bits
    assert x[1, 2] == 1 and x.sum() == 1
    assert s.residual.is_identity()


def test_gate_fault_on_ancilla_propagates_to_data(code3):
    # Z on the control (an X ancilla) after its first CNOT spreads to later targets
    sim = simulator(code3)
    step0 = code3.cnot_schedule[0]
    gi = next(i for i, (t, k, q) in enumerate(step0) if t == "X" and len(code3.supports["X"][k]) == 4)
    t, k, q = step0[gi]
    syn, fx, fz = sim.run(NoiseParams.uniform(0.0), 1, substream(0, 0), 1,
                          faults=[Fault(0, "gate", (0, gi), 0b0010)])
    assert syn["X"][0, 0, k] == 1  # the ancilla flip is read out
    assert not fx.any() and not fz.any()  # Z on an X-check control does not reach data


def test_seed_determinism_and_block_independence(code3):
    p = NoiseParams.uniform(0.01)
    a = generate_batch(code3, p, 3, 5000, 7)
    b = generate_batch(code3, p, 3, 5000, 7)
    for t in "XZ":
        assert (a.syn[t] == b.syn[t]).all()
    # a slice starting inside the second block equals the same rows of a longer run
    part = generate_batch(code3, p, 3, 100, 7, start=BLOCK + 10)
    full = generate_batch(code3, p, 3, BLOCK + 110, 7)
    assert (part.syn["X"] == full.syn["X"][BLOCK + 10 :]).all()


def test_labels_consistent_with_residual(code3):
    batch = generate_batch(code3, NoiseParams.uniform(0.02), 3, 2000, 3)
    for t in "XZ":
        det = batch.detected(t)
        assert (syndrome_batch(code3, det, t) == batch.s[t]).all()


def test_phenomenological_has_no_gate_noise():
    p = NoiseParams(0.01, 0.05, 0.01, "phenomenological")
    assert p.p_g == 0.0


def test_paired_noise_is_frame_independent(code3):
    sim = simulator(code3)
    p = NoiseParams.uniform(0.02)
    syn0, fx0, fz0 = sim.run(p, 3, substream(5, 1), 64)
    init = (np.ones((64, 9), np.uint8), np.zeros((64, 9), np.uint8))
    syn1, fx1, fz1 = sim.run(p, 3, substream(5, 1), 64, initial=init)
    assert ((fx0 ^ fx1) == 1).all() and (fz0 == fz1).all()
    assert (syn0["X"] == syn1["X"]).all()


@pytest.mark.parametrize("bad", [-0.1, 1.0, 1.5])
def test_noise_params_validation(bad):
    with pytest.raises(ValueError):
        NoiseParams.uniform(bad)


def test_presets():
    assert preset("google") == NoiseParams(0.004, 0.005, 0.018)
    assert preset("reweighted") == NoiseParams(0.0024, 0.0072, 0.012)
    r = preset("reweighted", 0.01)
    assert (r.p_s, r.p_g, r.p_m) == pytest.approx((0.004, 0.012, 0.02))
    with pytest.raises(ValueError):
        preset("standard")
    with pytest.raises(ValueError):
        preset("nope", 0.1)


def test_generate_dataset_stream(code3):
    p = NoiseParams.uniform(0.01)
    items = list(generate_dataset(code3, p, 2, 10, 4))
    batch = generate_batch(code3, p, 2, 10, 4)
    assert len(items) == 10
    assert (items[3].syndromes["X"].bits == batch.syn["X"][3]).all()


def test_dataset_file_round_trip(code3):
    p = NoiseParams(0.001, 0.002, 0.003)
    batch = generate_batch(code3, NoiseParams.uniform(0.05), 3, 300, 2)
    buf = io.BytesIO()
    write_dataset(buf, code3, p, 3, batch)
    buf.seek(0)
    L, T, params, back = read_dataset(buf)
    assert (L, T, params) == (3, 3, p)
    for t in "XZ":
        assert (back.syn[t] == batch.syn[t]).all()
        assert (back.cls[t] == batch.cls[t]).all()
        assert (back.s[t] == batch.s[t]).all()
    assert (back.res_x == batch.res_x).all() and (back.res_z == batch.res_z).all()


def test_dataset_rejects_garbage():
    with pytest.raises(ValueError):
        read_dataset(io.BytesIO(b"nope"))
