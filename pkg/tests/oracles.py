"""Independent reference computations shared by unit and acceptance tests."""

import itertools

import numpy as np

from rscw.neural import make_spec, init_weights
from rscw.training import TrainingData, gradients, loss


def tiny_spec(activation="relu"):
    # conv, padded conv, FC frontend and FC heads: every layer kind once
    return make_spec(3, 3, conv_channels=(3, 2), fc_width=5, hidden=4, activation=activation)


def finite_difference_errors(spec, probes=100, seed=0, eps=1e-6, batch=16):
    """Relative |central difference - backprop| at random parameter probes.

    Returns (errors, layers probed).  Both values below 1e-8 in magnitude
    count as agreement (error 0).
    """
    rng = np.random.default_rng(seed)
    w = init_weights(spec, seed)
    for _, b in w.params:
        b += rng.normal(0, 0.1, b.shape)
    x = rng.integers(0, 2, (batch, *spec.input_shape)).astype(np.uint8)
    targets = [rng.integers(0, n, batch) for n in spec.head_outputs]
    data = TrainingData(x, targets)
    _, grads = gradients(spec, w, data)
    n_layers = len(w.params)
    errs, seen = [], set()
    for k in range(probes):
        li = k % n_layers if k < n_layers else int(rng.integers(n_layers))
        which = int(rng.integers(2))
        arr = w.params[li][which]
        idx = tuple(int(rng.integers(s)) for s in arr.shape)
        old = arr[idx]
        arr[idx] = old + eps
        up = loss(spec, w, data)
        arr[idx] = old - eps
        down = loss(spec, w, data)
        arr[idx] = old
        fd = (up - down) / (2 * eps)
        bp = grads[li][which][idx]
        scale = max(abs(fd), abs(bp))
        errs.append(0.0 if scale < 1e-8 else abs(fd - bp) / scale)
        seen.add(li)
    return errs, seen


def brute_force_matching(n, pair_cost, boundary_cost):
    """Minimum-weight perfect matching by enumerating every pairing.

    Each defect may pair with another defect or with its own boundary copy;
    boundary copies pair among themselves for free.
    """
    best = float("inf")

    def rec(left, acc):
        nonlocal best
        if not left:
            best = min(best, acc)
            return
        i, rest = left[0], left[1:]
        rec(rest, acc + boundary_cost(i))
        for k, j in enumerate(rest):
            rec(rest[:k] + rest[k + 1 :], acc + pair_cost(i, j))

    rec(tuple(range(n)), 0)
    return best


def brute_force_permutations(n, pair_cost, boundary_cost):
    """Same optimum via every permutation of defects plus boundary copies
    (factorial, only for tiny n)."""
    nodes = list(range(2 * n))  # i < n: defect, n + i: boundary copy of i

    def cost(a, b):
        if a >= n and b >= n:
            return 0
        if a >= n or b >= n:
            d, bnd = (a, b) if a < n else (b, a)
            return boundary_cost(d) if bnd - n == d else float("inf")
        return pair_cost(a, b)

    best = float("inf")
    for perm in itertools.permutations(nodes):
        if perm[0] != 0:
            break
        total = sum(cost(perm[2 * k], perm[2 * k + 1]) for k in range(n))
        best = min(best, total)
    return best


def random_qnet(spec, seed=0, density=0.2, n_cal=512):
    """Quantised network with random weights and biases, calibrated on random bits."""
    from rscw.neural import quantize

    rng = np.random.default_rng(seed)
    w = init_weights(spec, seed)
    for _, b in w.params:
        b += rng.normal(0, 0.05, b.shape)
    cal = (rng.random((n_cal, *spec.input_shape)) < density).astype(np.uint8)
    return quantize(spec, w, cal)


def exhaustive_allocation(M, alphas, C):
    """Minimum of sum alpha_j M_j / C_j over every integer C_j >= 1 with
    sum alpha_j C_j = C (None when no such allocation exists)."""
    best = None

    def rec(j, left, acc, units):
        nonlocal best
        if j == len(M) - 1:
            if left % alphas[j] == 0 and left // alphas[j] >= 1:
                c = left // alphas[j]
                total = acc + alphas[j] * M[j] / c
                if best is None or total < best[0]:
                    best = (total, units + [c])
            return
        rest = sum(alphas[j + 1 :])
        for c in range(1, (left - rest) // alphas[j] + 1):
            rec(j + 1, left - alphas[j] * c, acc + alphas[j] * M[j] / c, units + [c])

    rec(0, C, 0.0, [])
    return best
