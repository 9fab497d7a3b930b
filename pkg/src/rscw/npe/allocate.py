"""Distributing multiply-add units across layers of a network-specific engine.

Layer ``j`` has ``M_j`` multiplications and occurs ``alpha_j`` times; giving
each copy ``C_j`` units costs ``M_j / C_j`` cycles.  We minimise the total
``sum alpha_j M_j / C_j`` subject to ``sum alpha_j C_j = C``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DP_LIMIT = 1 << 14  # budgets up to this size are solved exactly by dynamic programming


class InfeasibleAllocation(ValueError):
    pass


@dataclass(frozen=True)
class Allocation:
    units: tuple[int, ...]  # C_j
    alphas: tuple[int, ...]
    total: int
    continuous: tuple[float, ...]
    latency: float  # sum alpha_j M_j / C_j for the integer units

    @property
    def used(self) -> int:
        return sum(a * c for a, c in zip(self.alphas, self.units))


def continuous_optimum(M: Sequence[float], alphas: Sequence[int], C: float) -> np.ndarray:
    """Stationary point of the Lagrangian: ``C_j ~ sqrt(M_j)``."""
    r = np.sqrt(np.asarray(M, np.float64))
    return C * r / float(np.dot(np.asarray(alphas, np.float64), r))


def cost(M: Sequence[float], alphas: Sequence[int], units: Sequence[int]) -> float:
    return float(sum(a * m / c for m, a, c in zip(M, alphas, units)))


def _validate(M, alphas, C):
    if len(M) == 0 or len(M) != len(alphas):
        raise ValueError("M and alphas must be non-empty and of equal length")
    if any(m <= 0 for m in M):
        raise ValueError("multiply counts must be positive")
    if any(int(a) != a or a < 1 for a in alphas):
        raise ValueError("multiplicities must be positive integers")
    if int(C) != C:
        raise ValueError("C must be an integer")
    if C < sum(alphas):
        raise InfeasibleAllocation(f"C={C} is below the minimum {sum(alphas)} (one unit per copy)")


def _dp(M, alphas, C) -> list[int] | None:
    inf = math.inf
    best = np.full(C + 1, inf)
    best[0] = 0.0
    choice = []
    for m, a in zip(M, alphas):
        nxt = np.full(C + 1, inf)
        pick = np.zeros(C + 1, np.int64)
        for c in range(1, (C - 0) // a + 1):
            shifted = np.full(C + 1, inf)
            shifted[a * c :] = best[: C + 1 - a * c] + a * m / c
            better = shifted < nxt
            nxt[better] = shifted[better]
            pick[better] = c
        best = nxt
        choice.append(pick)
    if not math.isfinite(best[C]):
        return None
    units = []
    b = C
    for pick, a in zip(reversed(choice), reversed(alphas)):
        c = int(pick[b])
        units.append(c)
        b -= a * c
    return units[::-1]


def _largest_remainder(M, alphas, C) -> list[int] | None:
    """Rounding of the continuous optimum followed by pairwise exchange."""
    cont = continuous_optimum(M, alphas, C)
    units = [max(1, int(math.floor(x))) for x in cont]
    slack = C - sum(a * u for a, u in zip(alphas, units))
    order = sorted(range(len(M)), key=lambda j: -(cont[j] - math.floor(cont[j])))
    changed = True
    while slack and changed:
        changed = False
        for j in order:
            if 0 < alphas[j] <= slack:
                units[j] += 1
                slack -= alphas[j]
                changed = True
    if slack:
        return None
    return units


def allocate(M: Sequence[float], alphas: Sequence[int], C: int) -> Allocation:
    _validate(M, alphas, C)
    M = [float(m) for m in M]
    alphas = [int(a) for a in alphas]
    C = int(C)
    units = _dp(M, alphas, C) if C <= DP_LIMIT else _largest_remainder(M, alphas, C)
    if units is None:
        raise InfeasibleAllocation(f"no integer allocation with sum(alpha_j C_j) = {C}")
    cont = tuple(float(x) for x in continuous_optimum(M, alphas, C))
    return Allocation(tuple(units), tuple(alphas), C, cont, cost(M, alphas, units))


def spec_workload(spec) -> tuple[list[int], list[int]]:
    """(M_j, alpha_j) of a network: identical head layers are grouped."""
    from ..neural import layer_multiplications

    mults = layer_multiplications(spec)
    roles = spec.layer_roles()
    M: list[int] = []
    alphas: list[int] = []
    seen: dict = {}
    for m, (head, pos) in zip(mults, roles):
        if head < 0:
            M.append(m)
            alphas.append(1)
            continue
        key = (pos, m)
        if key in seen:
            alphas[seen[key]] += 1
        else:
            seen[key] = len(M)
            M.append(m)
            alphas.append(1)
    return M, alphas
