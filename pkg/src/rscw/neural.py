"""Multi-task decoder network: description, float and 8-bit inference.

Activations use a channel-last layout ``(B, T, H, W, C)``; a flattened
volume is ordered ``(T, H, W, C)``.  Convolutions are "stepper" layers
whose stride equals the kernel, so a conv is a reshape into disjoint
patches followed by one matrix product.  Patch vectors are ordered
``(kt, kh, kw, C_in)`` and conv weights are stored as
``(C_out, kt, kh, kw, C_in)``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Sequence

import numpy as np

from .code import RscCode

LEAKY_SLOPE = 0.125
W_MAGIC = b"MTLW"
W_VERSION = 1

# (conv widths, frontend FC width or 0, head hidden width) per distance
_DEFAULTS = {
    3: ((64,), 0, 48),
    5: ((16,), 96, 32),
    7: ((16, 32, 64), 256, 48),
    9: ((16, 32, 64, 64), 256, 48),
}
DEFAULT_T = {3: 3, 5: 10, 7: 14, 9: 12, 11: 11}


@dataclass(frozen=True)
class Conv3D:
    in_shape: tuple[int, int, int]
    in_ch: int
    out_ch: int
    kernel: tuple[int, int, int] = (2, 2, 2)

    kind = "conv"

    @property
    def out_shape(self) -> tuple[int, int, int]:
        return tuple(-(-s // k) for s, k in zip(self.in_shape, self.kernel))

    @property
    def padded_shape(self) -> tuple[int, int, int]:
        return tuple(o * k for o, k in zip(self.out_shape, self.kernel))

    @property
    def kvol(self) -> int:
        return math.prod(self.kernel)

    @property
    def fan_in(self) -> int:
        return self.kvol * self.in_ch

    @property
    def sites(self) -> int:
        return math.prod(self.out_shape)

    @property
    def n_in(self) -> int:
        return math.prod(self.in_shape) * self.in_ch

    @property
    def n_out(self) -> int:
        return self.sites * self.out_ch

    @property
    def weight_shape(self) -> tuple[int, ...]:
        return (self.out_ch, *self.kernel, self.in_ch)

    @property
    def mults(self) -> int:
        return self.sites * self.fan_in * self.out_ch


@dataclass(frozen=True)
class FC:
    n_in: int
    n_out: int

    kind = "fc"

    @property
    def fan_in(self) -> int:
        return self.n_in

    @property
    def weight_shape(self) -> tuple[int, int]:
        return (self.n_out, self.n_in)

    @property
    def mults(self) -> int:
        return self.n_in * self.n_out


Layer = Conv3D | FC


@dataclass(frozen=True)
class NetworkSpec:
    """Shared stepper-CNN/FC frontend feeding one class head and m s-heads."""

    L: int
    T: int
    frontend: tuple
    heads: tuple  # tuple of (FC, FC); heads[0] is the class head
    piece_sizes: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ("relu", "leaky"):
            raise ValueError(f"unknown activation {self.activation!r}")
        n_anc = (self.L * self.L - 1) // 2
        if sum(self.piece_sizes) != n_anc:
            raise ValueError(f"piece sizes sum to {sum(self.piece_sizes)}, expected {n_anc}")
        if len(self.heads) != len(self.piece_sizes) + 1:
            raise ValueError("need one class head plus one head per s piece")
        outs = [2] + [1 << s for s in self.piece_sizes]
        for (h1, h2), n in zip(self.heads, outs):
            if h1.n_in != self.feature_size or h2.n_in != h1.n_out or h2.n_out != n:
                raise ValueError("head dimensions inconsistent with frontend or pieces")
        shape, ch = self.input_shape, 1
        for lay in self.frontend:
            if isinstance(lay, Conv3D):
                if lay.in_shape != shape or lay.in_ch != ch:
                    raise ValueError("conv layer input does not match previous layer")
                if any(k < 1 for k in lay.kernel):
                    raise ValueError("kernel sizes must be positive")
                shape, ch = lay.out_shape, lay.out_ch
            else:
                if lay.n_in != math.prod(shape) * ch:
                    raise ValueError("FC layer input does not match previous layer")
                shape, ch = (1, 1, 1), lay.n_out

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (self.T, self.L + 1, self.L + 1)

    @property
    def feature_size(self) -> int:
        if not self.frontend:
            return math.prod(self.input_shape)
        last = self.frontend[-1]
        return last.n_out

    @property
    def layers(self) -> list:
        """All layers in canonical order: frontend, then each head's two layers."""
        out = list(self.frontend)
        for h in self.heads:
            out.extend(h)
        return out

    @property
    def head_outputs(self) -> list[int]:
        return [h[1].n_out for h in self.heads]

    @property
    def m(self) -> int:
        return len(self.piece_sizes)

    def layer_roles(self) -> list[tuple[int, int]]:
        """(head index or -1, position within head) per canonical layer."""
        roles = [(-1, i) for i in range(len(self.frontend))]
        for h in range(len(self.heads)):
            roles += [(h, 0), (h, 1)]
        return roles


def make_spec(
    L: int,
    T: int,
    conv_channels: Sequence[int] = (),
    fc_width: int = 0,
    hidden: int = 32,
    piece_size: int = 4,
    kernel: tuple[int, int, int] = (2, 2, 2),
    activation: str = "relu",
) -> NetworkSpec:
    n_anc = (L * L - 1) // 2
    pieces = [piece_size] * (n_anc // piece_size)
    if n_anc % piece_size:
        pieces.append(n_anc % piece_size)
    shape, ch = (T, L + 1, L + 1), 1
    front: list = []
    for c in conv_channels:
        lay = Conv3D(shape, ch, c, tuple(kernel))
        front.append(lay)
        shape, ch = lay.out_shape, c
    feat = math.prod(shape) * ch
    if fc_width:
        front.append(FC(feat, fc_width))
        feat = fc_width
    heads = tuple((FC(feat, hidden), FC(hidden, n)) for n in [2] + [1 << p for p in pieces])
    return NetworkSpec(L, T, tuple(front), heads, tuple(pieces), activation)


def default_spec(L: int, T: int | None = None, activation: str = "relu") -> NetworkSpec:
    """Default network for distance ``L``.

    Distances 3-9 use tabulated layer counts; other distances add stride-2
    conv layers until the volume is small, then one FC layer.
    """
    if T is None:
        T = DEFAULT_T.get(L, L)
    if L in _DEFAULTS:
        convs, fc, hidden = _DEFAULTS[L]
    else:
        n_conv = max(1, math.ceil(math.log2(max(T, L + 1))) - 1)
        convs = tuple(min(16 << i, 64) for i in range(n_conv))
        fc, hidden = 256, 48
    return make_spec(L, T, convs, fc, hidden, activation=activation)


def count_multiplications(spec: NetworkSpec) -> int:
    return sum(lay.mults for lay in spec.layers)


def layer_multiplications(spec: NetworkSpec) -> list[int]:
    return [lay.mults for lay in spec.layers]


def count_parameters(spec: NetworkSpec) -> int:
    return sum(math.prod(lay.weight_shape) + lay.weight_shape[0] for lay in spec.layers)


# --- inputs ------------------------------------------------------------------


def encode_syndromes(code: RscCode, bits: np.ndarray, type_tag: str) -> np.ndarray:
    """Scatter (..., T, n_anc) syndrome bits onto the (T, L+1, L+1) plaquette grid."""
    bits = np.asarray(bits)
    rows, cols = code.grid_index[type_tag]
    out = np.zeros(bits.shape[:-1] + (code.L + 1, code.L + 1), np.uint8)
    out[..., rows, cols] = bits
    return out


def _as_batch(spec: NetworkSpec, x) -> np.ndarray:
    x = np.asarray(x)
    if x.shape == spec.input_shape:
        x = x[None]
    if x.shape[1:] != spec.input_shape:
        raise ValueError(f"input shape {x.shape[1:]} does not match {spec.input_shape}")
    return x


# --- layer primitives --------------------------------------------------------


def conv_patches(x: np.ndarray, lay: Conv3D) -> np.ndarray:
    """(B, T, H, W, C) -> (B * sites, kvol * C) disjoint patch matrix."""
    b = x.shape[0]
    (to, ho, wo), (kt, kh, kw) = lay.out_shape, lay.kernel
    pt, ph, pw = lay.padded_shape
    t, h, w = lay.in_shape
    if (pt, ph, pw) != (t, h, w):
        xp = np.zeros((b, pt, ph, pw, lay.in_ch), x.dtype)
        xp[:, :t, :h, :w] = x
        x = xp
    x = x.reshape(b, to, kt, ho, kh, wo, kw, lay.in_ch)
    x = x.transpose(0, 1, 3, 5, 2, 4, 6, 7)
    return x.reshape(b * to * ho * wo, lay.fan_in)


def conv_patches_backward(dp: np.ndarray, lay: Conv3D, batch: int) -> np.ndarray:
    (to, ho, wo), (kt, kh, kw) = lay.out_shape, lay.kernel
    t, h, w = lay.in_shape
    d = dp.reshape(batch, to, ho, wo, kt, kh, kw, lay.in_ch)
    d = d.transpose(0, 1, 4, 2, 5, 3, 6, 7).reshape(batch, *lay.padded_shape, lay.in_ch)
    return d[:, :t, :h, :w]


def activate(v: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(v, 0.0)
    return np.where(v > 0, v, LEAKY_SLOPE * v)


def activate_grad(v: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (v > 0).astype(v.dtype)
    return np.where(v > 0, 1.0, LEAKY_SLOPE)


# --- float inference ---------------------------------------------------------


@dataclass
class FloatWeights:
    """(W, b) per layer of ``spec.layers``, float64."""

    params: list

    def copy(self) -> FloatWeights:
        return FloatWeights([(w.copy(), b.copy()) for w, b in self.params])

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in self.params])


def init_weights(spec: NetworkSpec, seed: int = 0) -> FloatWeights:
    """Uniform Glorot initialisation, zero biases."""
    rng = np.random.default_rng(seed)
    params = []
    for lay in spec.layers:
        fan_out = lay.weight_shape[0]
        lim = math.sqrt(6.0 / (lay.fan_in + fan_out))
        params.append((rng.uniform(-lim, lim, lay.weight_shape), np.zeros(fan_out)))
    return FloatWeights(params)


def check_weights(spec: NetworkSpec, weights: FloatWeights) -> None:
    layers = spec.layers
    if len(weights.params) != len(layers):
        raise ValueError(f"expected {len(layers)} layers of weights, got {len(weights.params)}")
    for lay, (w, b) in zip(layers, weights.params):
        if w.shape != lay.weight_shape or b.shape != (lay.weight_shape[0],):
            raise ValueError(f"weight shape {w.shape} does not match layer {lay}")


def _apply_layer(lay, w: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Pre-activation output of one layer; x is (B, T, H, W, C) or (B, n)."""
    bsz = x.shape[0]
    if isinstance(lay, Conv3D):
        p = conv_patches(x, lay)
        return (p @ w.reshape(lay.out_ch, -1).T + b).reshape(bsz, *lay.out_shape, lay.out_ch)
    return x.reshape(bsz, -1) @ w.T + b


def forward_float(spec: NetworkSpec, weights: FloatWeights, x, trace: list | None = None):
    """Float forward pass; returns (class logits, [s-head logits]).

    If ``trace`` is a list, post-activation outputs of every non-final layer
    are appended to it in canonical layer order (frontend, then heads).
    """
    check_weights(spec, weights)
    x = _as_batch(spec, x).astype(np.float64)[..., None]
    params = iter(weights.params)
    for lay in spec.frontend:
        w, b = next(params)
        x = activate(_apply_layer(lay, w, b, x), spec.activation)
        if trace is not None:
            trace.append(x)
    feat = x.reshape(x.shape[0], -1)
    outs = []
    for h1, h2 in spec.heads:
        w1, b1 = next(params)
        w2, b2 = next(params)
        hid = activate(feat @ w1.T + b1, spec.activation)
        if trace is not None:
            trace.append(hid)
        outs.append(hid @ w2.T + b2)
    return outs[0], outs[1:]


def predict(class_logits: np.ndarray, s_logits: Sequence[np.ndarray], pieces) -> tuple:
    """Argmax of each head; s pieces concatenated little-endian within a piece."""
    cls = np.argmax(class_logits, axis=-1).astype(np.uint8)
    bits = []
    for lg, size in zip(s_logits, pieces):
        idx = np.argmax(lg, axis=-1)
        bits.append(((idx[:, None] >> np.arange(size)) & 1).astype(np.uint8))
    return cls, np.concatenate(bits, axis=1)


def piece_labels(s_bits: np.ndarray, pieces) -> list[np.ndarray]:
    """Integer class label of each s piece (inverse of :func:`predict`'s packing)."""
    out, o = [], 0
    for size in pieces:
        chunk = s_bits[:, o : o + size].astype(np.int64)
        out.append((chunk << np.arange(size)).sum(axis=1))
        o += size
    return out


# --- quantisation ------------------------------------------------------------


def round_half_away(v) -> np.ndarray:
    v = np.asarray(v, np.float64)
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def fixed_point(m: float) -> tuple[int, int]:
    """Multiplier in [2^14, 2^15) and right shift with ``mult / 2^shift ~= m``."""
    if not m > 0 or not math.isfinite(m):
        raise ValueError(f"rescale factor must be positive and finite, got {m}")
    shift = 14 - math.floor(math.log2(m))
    mult = int(round_half_away(m * 2.0**shift))
    if mult >= 1 << 15:
        mult = int(round_half_away(mult / 2))
        shift -= 1
    if not 0 <= shift <= 62:
        raise ValueError(f"rescale factor {m} needs shift {shift} outside [0, 62]")
    return mult, shift


def rescale(acc: np.ndarray, mult: int, shift: int) -> np.ndarray:
    """round_half_away(acc * mult / 2^shift) in integer arithmetic."""
    v = acc.astype(np.int64) * mult
    if shift == 0:
        return v
    mag = (np.abs(v) + (1 << (shift - 1))) >> shift
    return np.where(v < 0, -mag, mag)


def activate_int(y: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(y, 0)
    neg = -((-y + 4) >> 3)  # y / 8 rounded half away from zero, for y < 0
    return np.where(y < 0, neg, y)


@dataclass(frozen=True)
class QLayer:
    layer: object
    w_q: np.ndarray  # int8 values, stored as int64
    b_q: np.ndarray  # int32 range, stored as int64
    w_scale: float
    in_scale: float
    out_scale: float  # 0 for final head layers (outputs stay at accumulator scale)
    mult: int
    shift: int

    @property
    def final(self) -> bool:
        return self.out_scale == 0.0

    @property
    def acc_scale(self) -> float:
        return self.w_scale * self.in_scale


@dataclass(frozen=True)
class QuantizedNetwork:
    spec: NetworkSpec
    layers: tuple

    def dequantize_weights(self) -> FloatWeights:
        return FloatWeights(
            [(q.w_q / q.w_scale, q.b_q / q.acc_scale) for q in self.layers]
        )


def quantize_tensor(w: np.ndarray) -> tuple[np.ndarray, float]:
    peak = float(np.max(np.abs(w))) if w.size else 0.0
    if peak == 0.0:
        raise ValueError("all-zero weight tensor: scale undefined")
    scale = 127.0 / peak
    return np.clip(round_half_away(w * scale), -127, 127).astype(np.int64), scale


def quantize(spec: NetworkSpec, weights: FloatWeights, calibration) -> QuantizedNetwork:
    """Symmetric 8-bit quantisation with activation ranges from ``calibration``.

    ``calibration`` is a batch of network inputs (B, T, H, W).
    """
    calibration = _as_batch(spec, calibration)
    if calibration.shape[0] == 0:
        raise ValueError("calibration batch is empty")
    trace: list = []
    forward_float(spec, weights, calibration, trace=trace)
    peaks = iter(float(np.max(np.abs(a))) for a in trace)
    roles = spec.layer_roles()
    qlayers = []
    in_scale = 1.0  # inputs are 0/1
    front_scale = 1.0
    for lay, (w, b), (head, pos) in zip(spec.layers, weights.params, roles):
        if head >= 0 and pos == 0:
            in_scale = front_scale
        w_q, w_scale = quantize_tensor(w)
        acc_scale = w_scale * in_scale
        b_q = round_half_away(b * acc_scale).astype(np.int64)
        if np.any(np.abs(b_q) > 2**31 - 1):
            raise ValueError("bias does not fit in 32 bits at accumulator scale")
        if head >= 0 and pos == 1:
            qlayers.append(QLayer(lay, w_q, b_q, w_scale, in_scale, 0.0, 1, 0))
            continue
        peak = next(peaks)
        out_scale = 127.0 / peak if peak > 0 else 1.0
        mult, shift = fixed_point(out_scale / acc_scale)
        qlayers.append(QLayer(lay, w_q, b_q, w_scale, in_scale, out_scale, mult, shift))
        in_scale = out_scale
        if head < 0:
            front_scale = out_scale
    return QuantizedNetwork(spec, tuple(qlayers))


def _int_layer(q: QLayer, x: np.ndarray) -> np.ndarray:
    """Integer accumulator of one layer (exact: float64 holds these sums)."""
    lay = q.layer
    bsz = x.shape[0]
    xf = x.astype(np.float64)
    wf = q.w_q.astype(np.float64)
    if isinstance(lay, Conv3D):
        p = conv_patches(xf, lay)
        acc = p @ wf.reshape(lay.out_ch, -1).T
        acc = acc.reshape(bsz, *lay.out_shape, lay.out_ch)
    else:
        acc = xf.reshape(bsz, -1) @ wf.T
    return acc.astype(np.int64) + q.b_q


def requantize(acc: np.ndarray, q: QLayer, activation: str) -> np.ndarray:
    y = activate_int(rescale(acc, q.mult, q.shift), activation)
    return np.clip(y, -128, 127)


def forward_quantized(qnet: QuantizedNetwork, x, trace: list | None = None):
    """Bit-exact integer inference; returns int64 (class logits, [s logits])."""
    spec = qnet.spec
    x = _as_batch(spec, x).astype(np.int64)[..., None]
    layers = iter(qnet.layers)
    for _ in spec.frontend:
        q = next(layers)
        x = requantize(_int_layer(q, x), q, spec.activation)
        if trace is not None:
            trace.append(x)
    feat = x.reshape(x.shape[0], -1)
    outs = []
    for _ in spec.heads:
        q1, q2 = next(layers), next(layers)
        hid = requantize(_int_layer(q1, feat), q1, spec.activation)
        if trace is not None:
            trace.append(hid)
        outs.append(_int_layer(q2, hid))
    return outs[0], outs[1:]


def drift_bounds(qnet: QuantizedNetwork, weights: FloatWeights, x) -> list[np.ndarray]:
    """Per-sample bound on |dequantised - float| for every layer output.

    Propagates input error through ``|W|``, adds weight, bias, multiplier
    and output rounding terms.  Valid while float activations stay inside
    the calibrated range (clamping then only shrinks the error).
    """
    spec = qnet.spec
    xb = _as_batch(spec, x)
    ftrace: list = []
    qtrace: list = []
    forward_float(spec, weights, xb, trace=ftrace)
    forward_quantized(qnet, xb, trace=qtrace)
    bsz = xb.shape[0]
    bounds = []
    eps_in = np.zeros(bsz)
    xq = xb.reshape(bsz, -1).astype(np.float64)
    front_eps = eps_in
    front_xq = xq
    it_q = iter(qtrace)
    roles = spec.layer_roles()
    for q, (w, _), (head, pos) in zip(qnet.layers, weights.params, roles):
        if head >= 0 and pos == 0:
            eps_in, xq = front_eps, front_xq
        lay = q.layer
        if isinstance(lay, Conv3D):
            xin = xq.reshape(bsz, *lay.in_shape, lay.in_ch)
            p = conv_patches(xin, lay).reshape(bsz, lay.sites, lay.fan_in)
            wmat = w.reshape(lay.out_ch, -1)
            xin_abs = np.abs(p) / q.in_scale
            term_w = 0.5 / q.w_scale * xin_abs.sum(-1)  # (B, sites)
            term_in = eps_in[:, None] * np.abs(wmat).sum(1).max()
            pre = np.abs(p @ q.w_q.reshape(lay.out_ch, -1).T.astype(np.float64) + q.b_q) / q.acc_scale
            per = term_w.max(1) + term_in.max(1) + pre.reshape(bsz, -1).max(1) * 2.0**-14
        else:
            xin_abs = np.abs(xq) / q.in_scale
            term_w = 0.5 / q.w_scale * xin_abs.sum(-1)
            term_in = eps_in * np.abs(w).sum(1).max()
            pre = np.abs(xq @ q.w_q.T.astype(np.float64) + q.b_q) / q.acc_scale
            per = term_w + term_in + pre.max(1) * 2.0**-14
        per = per + 0.5 / q.acc_scale
        if q.final:
            bounds.append(per)
            continue
        per = per + 1.0 / q.out_scale
        bounds.append(per)
        eps_in = per
        xq = next(it_q).reshape(bsz, -1).astype(np.float64)
        if head < 0:
            front_eps, front_xq = eps_in, xq
    return bounds


# --- weight file -------------------------------------------------------------

_HEAD = struct.Struct("<4sHHHHHBBB")
_REC = struct.Struct("<BbB8IffffiB")


def _dims(lay) -> list[int]:
    if isinstance(lay, Conv3D):
        return [*lay.in_shape, lay.in_ch, lay.out_ch, *lay.kernel]
    return [lay.n_in, lay.n_out, 0, 0, 0, 0, 0, 0]


def save_weights(fh: BinaryIO, spec: NetworkSpec, net) -> None:
    """Write float weights or a quantised network to the MTLW container."""
    quant = isinstance(net, QuantizedNetwork)
    act = 0 if spec.activation == "relu" else 1
    fh.write(
        _HEAD.pack(W_MAGIC, W_VERSION, spec.L, spec.T, spec.m, len(spec.layers),
                   int(quant), act, len(spec.heads))
    )
    fh.write(bytes(spec.piece_sizes))
    roles = spec.layer_roles()
    for i, (lay, (head, pos)) in enumerate(zip(spec.layers, roles)):
        kind = 0 if isinstance(lay, Conv3D) else 1
        if quant:
            q = net.layers[i]
            fh.write(_REC.pack(kind, head, pos, *_dims(lay), q.w_scale, q.in_scale,
                               q.out_scale, 0.0, q.mult, q.shift))
            fh.write(q.w_q.astype(np.int8).tobytes())
            fh.write(q.b_q.astype("<i4").tobytes())
        else:
            w, b = net.params[i]
            fh.write(_REC.pack(kind, head, pos, *_dims(lay), 0.0, 0.0, 0.0, 0.0, 0, 0))
            fh.write(w.astype("<f4").tobytes())
            fh.write(b.astype("<f4").tobytes())


def load_weights(fh: BinaryIO):
    """Read an MTLW container; returns (spec, FloatWeights or QuantizedNetwork)."""
    head = fh.read(_HEAD.size)
    if len(head) != _HEAD.size:
        raise ValueError("truncated weight file")
    magic, version, L, T, m, n_layers, quant, act, n_heads = _HEAD.unpack(head)
    if magic != W_MAGIC or version != W_VERSION:
        raise ValueError("not a weight file")
    pieces = tuple(fh.read(m))
    recs = []
    for _ in range(n_layers):
        kind, hd, pos, *rest = _REC.unpack(fh.read(_REC.size))
        dims, (ws, ins, outs, _pad, mult, shift) = rest[:8], rest[8:]
        lay = Conv3D(tuple(dims[:3]), dims[3], dims[4], tuple(dims[5:8])) if kind == 0 else FC(dims[0], dims[1])
        n_w = math.prod(lay.weight_shape)
        n_b = lay.weight_shape[0]
        if quant:
            w = np.frombuffer(fh.read(n_w), np.int8).astype(np.int64).reshape(lay.weight_shape)
            b = np.frombuffer(fh.read(4 * n_b), "<i4").astype(np.int64)
        else:
            w = np.frombuffer(fh.read(4 * n_w), "<f4").astype(np.float64).reshape(lay.weight_shape)
            b = np.frombuffer(fh.read(4 * n_b), "<f4").astype(np.float64)
        recs.append((lay, hd, pos, w, b, ws, ins, outs, mult, shift))
    front = tuple(r[0] for r in recs if r[1] < 0)
    heads = tuple(
        tuple(r[0] for r in recs if r[1] == h) for h in range(n_heads)
    )
    spec = NetworkSpec(L, T, front, heads, pieces, "relu" if act == 0 else "leaky")
    order = {(r[1], r[2]): r for r in recs}
    ordered = [order[role] for role in spec.layer_roles()]
    if quant:
        layers = tuple(
            QLayer(r[0], r[3], r[4], r[5], r[6], r[7], r[8], r[9]) for r in ordered
        )
        return spec, QuantizedNetwork(spec, layers)
    return spec, FloatWeights([(r[3].copy(), r[4].copy()) for r in ordered])
