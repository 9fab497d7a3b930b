"""Monte Carlo evaluation: trajectories to logical failure and syndrome statistics.

Trajectories are simulated in fixed groups of ``GROUP`` so the noise seen by
trajectory ``i`` in cycle ``c`` depends only on ``(seed, i // GROUP, c)``.
Two decoders run with the same seed therefore face identical noise, and the
result does not depend on how many trajectories were requested in total.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .code import TYPE_TAGS, RscCode, build_code, class_batch, pure_error_bits, syndrome_batch
from .decoders import Decoder
from .noise import BLOCK, NoiseParams, simulator, substream

log = logging.getLogger(__name__)

GROUP = 50
TRAJ_STREAM = 7  # keeps trajectory substreams apart from dataset blocks
MIN_TRAJECTORIES = 400
DEFAULT_MAX_CYCLES = 10**6


@dataclass
class RunConfig:
    L: int
    T: int
    params: NoiseParams
    decoder: str = "mwpm"
    trajectories: int = MIN_TRAJECTORIES
    max_cycles: int = DEFAULT_MAX_CYCLES
    seed: int = 0
    allow_few: bool = False

    def __post_init__(self):
        if self.trajectories < 1:
            raise ValueError("need at least one trajectory")
        if self.trajectories < MIN_TRAJECTORIES and not self.allow_few:
            raise ValueError(
                f"{self.trajectories} trajectories requested; at least {MIN_TRAJECTORIES} "
                "are required unless allow_few is set"
            )
        if self.max_cycles < 1:
            raise ValueError("max_cycles must be positive")
        if not self.L <= self.T <= 2 * self.L:
            log.warning("T=%d outside the usual band [L, 2L] for L=%d", self.T, self.L)


@dataclass
class LerResult:
    L: int
    T: int
    decoder: str
    cycles: np.ndarray  # per trajectory, cycles run up to and including the failing one
    censored: np.ndarray
    failed: dict  # tag -> per-trajectory bool
    warnings: list = field(default_factory=list)

    @property
    def trajectories(self) -> int:
        return len(self.cycles)

    @property
    def tau_bar(self) -> float:
        return int(self.cycles.sum()) / len(self.cycles)

    @property
    def logical_error_rate(self) -> float:
        return 1.0 / (self.T * self.tau_bar)

    @property
    def n_censored(self) -> int:
        return int(self.censored.sum())

    @property
    def upper_bound_only(self) -> bool:
        return bool(self.censored.all())

    @property
    def failures_by_type(self) -> dict:
        return {t: int(v.sum()) for t, v in self.failed.items()}

    @property
    def ci(self) -> tuple[float, float]:
        # every trajectory is counted as ending in failure, censored ones included,
        # which keeps the interval centred on the (conservative) point estimate
        lo, hi = wilson(self.trajectories, int(self.cycles.sum()))
        return lo / self.T, hi / self.T


def wilson(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion ``k / n``."""
    if n <= 0:
        raise ValueError("n must be positive")
    p = k / n
    den = 1.0 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if k == 0 else max(0.0, mid - half)
    hi = 1.0 if k == n else min(1.0, mid + half)
    return lo, hi


def residual_failure(code: RscCode, fx: np.ndarray, fz: np.ndarray) -> dict:
    """Per type, whether the syndrome-free part of the residual is a logical."""
    tables = simulator(code).tables
    out = {}
    for t in TYPE_TAGS:
        det = fz if t == "X" else fx
        s = syndrome_batch(code, det, t)
        out[t] = class_batch(code, det ^ pure_error_bits(tables[t], s), t).astype(bool)
    return out


def _run_group(code, params, T, decoder: Decoder, stream, size: int, max_cycles: int):
    """Run ``size`` trajectories; ``stream(c)`` gives the generator for cycle ``c``."""
    sim = simulator(code)
    fx = np.zeros((size, code.n), np.uint8)
    fz = np.zeros((size, code.n), np.uint8)
    cycles = np.full(size, max_cycles, np.int64)
    alive = np.ones(size, bool)
    failed = {t: np.zeros(size, bool) for t in TYPE_TAGS}
    for c in range(max_cycles):
        syn, fx, fz = sim.run(params, T, stream(c), size, initial=(fx, fz))
        cx, cz = decoder.decode_batch(syn)
        fx ^= cx
        fz ^= cz
        fail = residual_failure(code, fx, fz)
        now = alive & (fail["X"] | fail["Z"])
        if now.any():
            for t in TYPE_TAGS:
                failed[t] |= now & fail[t]
            cycles[now] = c + 1
            alive &= ~now
            if not alive.any():
                break
    return cycles, alive, failed


def run_trajectory(
    code: RscCode,
    params: NoiseParams,
    T: int,
    decoder: Decoder,
    rng: np.random.Generator,
    max_cycles: int = DEFAULT_MAX_CYCLES,
) -> tuple[int, bool]:
    """Cycles until the first logical failure, and whether the cap was hit."""
    cycles, alive, _ = _run_group(code, params, T, decoder, lambda c: rng, 1, max_cycles)
    return int(cycles[0]), bool(alive[0])


def run_trajectories(
    code: RscCode,
    params: NoiseParams,
    T: int,
    decoder: Decoder,
    n: int,
    seed: int,
    max_cycles: int = DEFAULT_MAX_CYCLES,
) -> tuple[np.ndarray, np.ndarray, dict]:
    cycles, censored = [], []
    failed: dict = {t: [] for t in TYPE_TAGS}
    for g in range(-(-n // GROUP)):
        stream = lambda c, g=g: substream(seed, TRAJ_STREAM, g, c)
        cy, al, fa = _run_group(code, params, T, decoder, stream, GROUP, max_cycles)
        cycles.append(cy)
        censored.append(al)
        for t in TYPE_TAGS:
            failed[t].append(fa[t])
    cut = lambda parts: np.concatenate(parts)[:n]
    return cut(cycles), cut(censored), {t: cut(v) for t, v in failed.items()}


def estimate_ler(config: RunConfig, decoder: Decoder, code: RscCode | None = None) -> LerResult:
    code = code or build_code(config.L)
    cycles, censored, failed = run_trajectories(
        code, config.params, config.T, decoder, config.trajectories, config.seed, config.max_cycles
    )
    res = LerResult(config.L, config.T, config.decoder, cycles, censored, failed)
    if res.upper_bound_only:
        res.warnings.append("all trajectories censored: LER is an upper bound only")
    elif res.n_censored:
        res.warnings.append(f"{res.n_censored} trajectories censored at the cycle cap")
    for w in res.warnings:
        log.warning(w)
    return res


def write_trajectories_csv(path, res: LerResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trajectory", "cycles", "censored", "failed_X", "failed_Z"])
        for i in range(res.trajectories):
            w.writerow(
                [i, int(res.cycles[i]), int(res.censored[i]),
                 int(res.failed["X"][i]), int(res.failed["Z"][i])]
            )


SUMMARY_FIELDS = [
    "L", "T", "decoder", "trajectories", "censored", "tau_bar", "ler",
    "ci_low", "ci_high", "failed_X", "failed_Z", "note",
]


def summary_row(res: LerResult) -> dict:
    lo, hi = res.ci
    note = "upper bound only" if res.upper_bound_only else (
        "censored trajectories counted at the cap (LER is an upper bound)" if res.n_censored else ""
    )
    return {
        "L": res.L, "T": res.T, "decoder": res.decoder, "trajectories": res.trajectories,
        "censored": res.n_censored, "tau_bar": repr(res.tau_bar),
        "ler": repr(res.logical_error_rate), "ci_low": repr(lo), "ci_high": repr(hi),
        "failed_X": res.failures_by_type["X"], "failed_Z": res.failures_by_type["Z"], "note": note,
    }


def write_summary_csv(path_or_fh, rows: Sequence[dict]) -> None:
    own = isinstance(path_or_fh, (str, bytes)) or hasattr(path_or_fh, "__fspath__")
    fh = open(path_or_fh, "w", newline="") if own else path_or_fh
    try:
        w = csv.DictWriter(fh, SUMMARY_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    finally:
        if own:
            fh.close()


# --- syndrome weight statistics ----------------------------------------------


@dataclass
class HammingStats:
    """Distribution of syndrome Hamming weight, one observation per type per sample."""

    counts: np.ndarray
    statistic: str

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def probabilities(self) -> np.ndarray:
        return self.counts / self.total

    @property
    def mean(self) -> float:
        return float((np.arange(len(self.counts)) * self.counts).sum() / self.total)

    def tail_weight(self, threshold: float = 1e-4) -> int:
        """First weight beyond the mode whose probability is below ``threshold``."""
        p = self.probabilities
        mode = int(np.argmax(p))
        below = np.nonzero(p[mode:] < threshold)[0]
        return mode + int(below[0]) if below.size else len(p)


def syndrome_weights(bits: np.ndarray, statistic: str = "events") -> np.ndarray:
    """Hamming weight per sample of a (B, T, n_anc) history.

    ``events`` counts detection events (each round XOR the previous one, the
    first against zero); ``raw`` counts the measured ones.
    """
    if statistic == "events":
        ev = bits.copy()
        ev[:, 1:] ^= bits[:, :-1]
        bits = ev
    elif statistic != "raw":
        raise ValueError(f"unknown statistic {statistic!r}")
    return bits.reshape(bits.shape[0], -1).sum(axis=1, dtype=np.int64)


def hamming_stats(
    code: RscCode,
    params: NoiseParams,
    T: int,
    n_samples: int,
    seed: int = 0,
    statistic: str = "events",
) -> HammingStats:
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    counts = np.zeros(T * code.n_anc + 1, np.int64)
    sim = simulator(code)
    for b in range(-(-n_samples // BLOCK)):
        size = min(BLOCK, n_samples - b * BLOCK)
        syn, _, _ = sim.run(params, T, substream(seed, b), size)
        for t in TYPE_TAGS:
            counts += np.bincount(syndrome_weights(syn[t], statistic), minlength=len(counts))
    return HammingStats(counts, statistic)


def write_hamming_csv(fh, stats: dict) -> None:
    """``stats`` maps a model name to its :class:`HammingStats`."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["model", "weight", "count", "probability"])
    for model, st in stats.items():
        p = st.probabilities
        for hw in np.nonzero(st.counts)[0]:
            w.writerow([model, int(hw), int(st.counts[hw]), repr(float(p[hw]))])
    for model, st in stats.items():
        w.writerow([model, "mean", "", repr(st.mean)])
        w.writerow([model, "tail_1e-4", "", st.tail_weight()])
