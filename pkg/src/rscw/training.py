"""Supervised training of the multi-task decoder network.

Loss is the batch mean of the summed per-head cross-entropies.  Gradients
are exact backpropagation through the stepper conv and FC layers.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .code import RscCode
from .neural import (
    Conv3D,
    FloatWeights,
    NetworkSpec,
    _as_batch,
    activate,
    activate_grad,
    conv_patches,
    conv_patches_backward,
    encode_syndromes,
    forward_float,
    init_weights,
    piece_labels,
)
from .noise import SampleBatch

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 1000
    epochs: int = 10
    learning_rate: float = 1e-3
    optimizer: str = "adam"  # "adam" or "sgd"
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainingData:
    """Network inputs and per-head integer targets for one stabilizer type."""

    x: np.ndarray  # (N, T, H, W) uint8
    targets: list  # per head, (N,) int64

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, idx) -> TrainingData:
        return TrainingData(self.x[idx], [t[idx] for t in self.targets])

    @classmethod
    def from_samples(
        cls, code: RscCode, spec: NetworkSpec, batch: SampleBatch, type_tag: str
    ) -> TrainingData:
        x = encode_syndromes(code, batch.syn[type_tag], type_tag)
        targets = [batch.cls[type_tag].astype(np.int64)]
        targets += piece_labels(batch.s[type_tag], spec.piece_sizes)
        return cls(x, targets)


@dataclass
class EpochLog:
    epoch: int
    loss: float
    head_accuracy: list = field(default_factory=list)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_targets(spec: NetworkSpec, targets: Sequence[np.ndarray]) -> None:
    if len(targets) != len(spec.heads):
        raise ValueError(f"expected {len(spec.heads)} target arrays, got {len(targets)}")
    for t, n in zip(targets, spec.head_outputs):
        if t.size and (t.min() < 0 or t.max() >= n):
            raise ValueError(f"label out of range for a head with {n} outputs")


def loss(spec: NetworkSpec, weights: FloatWeights, data: TrainingData) -> float:
    _check_targets(spec, data.targets)
    cls_lg, s_lg = forward_float(spec, weights, data.x)
    total = 0.0
    for lg, t in zip([cls_lg, *s_lg], data.targets):
        z = lg - lg.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        total += float(np.mean(lse - z[np.arange(len(t)), t]))
    return total


def gradients(
    spec: NetworkSpec,
    weights: FloatWeights,
    data: TrainingData,
    head_weights: Sequence[float] | None = None,
) -> tuple[float, list]:
    """Loss and its exact gradient, as a list of (dW, db) per layer.

    ``head_weights`` scales each head's loss term (default all 1), which
    allows per-head contributions to be isolated.
    """
    _check_targets(spec, data.targets)
    if head_weights is None:
        head_weights = [1.0] * len(spec.heads)
    x = _as_batch(spec, data.x).astype(np.float64)[..., None]
    bsz = x.shape[0]
    params = weights.params
    act = spec.activation
    nf = len(spec.frontend)

    cache = []
    h = x
    for lay, (w, b) in zip(spec.frontend, params[:nf]):
        if isinstance(lay, Conv3D):
            p = conv_patches(h, lay)
            z = (p @ w.reshape(lay.out_ch, -1).T + b).reshape(bsz, *lay.out_shape, lay.out_ch)
            cache.append((p, z))
        else:
            flat = h.reshape(bsz, -1)
            z = flat @ w.T + b
            cache.append((flat, z))
        h = activate(z, act)
    feat = h.reshape(bsz, -1)

    grads: list = [None] * len(params)
    dfeat = np.zeros_like(feat)
    total = 0.0
    for hi, (scale, t) in enumerate(zip(head_weights, data.targets)):
        (w1, b1), (w2, b2) = params[nf + 2 * hi], params[nf + 2 * hi + 1]
        z1 = feat @ w1.T + b1
        hid = activate(z1, act)
        lg = hid @ w2.T + b2
        pr = _softmax(lg)
        rows = np.arange(bsz)
        total += scale * float(np.mean(-np.log(np.maximum(pr[rows, t], 1e-300))))
        dlg = pr
        dlg[rows, t] -= 1.0
        dlg *= scale / bsz
        grads[nf + 2 * hi + 1] = (dlg.T @ hid, dlg.sum(0))
        dz1 = (dlg @ w2) * activate_grad(z1, act)
        grads[nf + 2 * hi] = (dz1.T @ feat, dz1.sum(0))
        dfeat += dz1 @ w1

    dh = dfeat
    for i in range(nf - 1, -1, -1):
        lay = spec.frontend[i]
        w, _ = params[i]
        inp, z = cache[i]
        dz = dh.reshape(z.shape) * activate_grad(z, act)
        if isinstance(lay, Conv3D):
            dzf = dz.reshape(-1, lay.out_ch)
            grads[i] = ((dzf.T @ inp).reshape(w.shape), dzf.sum(0))
            if i:
                dh = conv_patches_backward(dzf @ w.reshape(lay.out_ch, -1), lay, bsz)
        else:
            grads[i] = (dz.T @ inp, dz.sum(0))
            if i:
                dh = dz @ w
    return total, grads


def head_accuracy(spec: NetworkSpec, weights: FloatWeights, data: TrainingData) -> list[float]:
    cls_lg, s_lg = forward_float(spec, weights, data.x)
    return [
        float(np.mean(np.argmax(lg, axis=1) == t)) for lg, t in zip([cls_lg, *s_lg], data.targets)
    ]


def epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def _batched(fn, spec, weights, data: TrainingData, chunk: int = 8192):
    out = []
    for lo in range(0, len(data), chunk):
        out.append(fn(spec, weights, data[lo : lo + chunk]))
    return out


def evaluate(spec: NetworkSpec, weights: FloatWeights, data: TrainingData) -> EpochLog:
    n = len(data)
    losses = _batched(loss, spec, weights, data)
    accs = _batched(head_accuracy, spec, weights, data)
    sizes = [min(8192, n - lo) for lo in range(0, n, 8192)]
    mean_loss = sum(l * s for l, s in zip(losses, sizes)) / n
    mean_acc = [sum(a[h] * s for a, s in zip(accs, sizes)) / n for h in range(len(spec.heads))]
    return EpochLog(-1, mean_loss, mean_acc)


def train(
    spec: NetworkSpec,
    config: TrainConfig,
    data: TrainingData,
    init: FloatWeights | None = None,
) -> tuple[FloatWeights, list[EpochLog]]:
    """Minibatch training; deterministic in ``config.seed``.

    Returns the trained weights and one log row per epoch (row 0 is the
    initial state).
    """
    weights = init.copy() if init is not None else init_weights(spec, config.seed)
    state = [(np.zeros_like(w), np.zeros_like(b)) for w, b in weights.params]
    state2 = [(np.zeros_like(w), np.zeros_like(b)) for w, b in weights.params]
    n = len(data)
    first = evaluate(spec, weights, data)
    first.epoch = 0
    history = [first]
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = epoch_permutation(config.seed, epoch, n) if config.shuffle else np.arange(n)
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            value, grads = gradients(spec, weights, data[idx])
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"loss became {value} at epoch {epoch}, step {step}; "
                    f"lr={config.learning_rate}, optimizer={config.optimizer}"
                )
            step += 1
            _update(weights, grads, state, state2, config, step)
        row = evaluate(spec, weights, data)
        row.epoch = epoch
        if not math.isfinite(row.loss):
            raise TrainingDiverged(f"epoch {epoch} ended with loss {row.loss}")
        log.info("epoch %d loss %.5f acc %s", epoch, row.loss, row.head_accuracy)
        history.append(row)
    return weights, history


def _update(weights, grads, m1, m2, cfg: TrainConfig, step: int) -> None:
    lr = cfg.learning_rate
    if cfg.optimizer == "sgd":
        for (w, b), (gw, gb), (vw, vb) in zip(weights.params, grads, m1):
            if cfg.momentum:
                vw *= cfg.momentum
                vw += gw
                vb *= cfg.momentum
                vb += gb
                gw, gb = vw, vb
            w -= lr * gw
            b -= lr * gb
        return
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    for (w, b), (gw, gb), (mw, mb), (vw, vb) in zip(weights.params, grads, m1, m2):
        for p, g, m, v in ((w, gw, mw, vw), (b, gb, mb, vb)):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


def write_log(path, history: Sequence[EpochLog]) -> None:
    n_heads = len(history[0].head_accuracy) if history else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"] + [f"acc_head{i}" for i in range(n_heads)])
        for row in history:
            w.writerow([row.epoch, f"{row.loss:.8g}"] + [f"{a:.6f}" for a in row.head_accuracy])


def train_both(
    code: RscCode, spec: NetworkSpec, batch: SampleBatch, config: TrainConfig
) -> dict:
    """Train one network per stabilizer type on the same samples.

    Returns ``{tag: (weights, history)}``.
    """
    out = {}
    for t in ("X", "Z"):
        data = TrainingData.from_samples(code, spec, batch, t)
        out[t] = train(spec, config, data)
    return out
