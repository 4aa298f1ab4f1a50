"""Local scale refinement: residual-to-scale composition, smoothed-L1 training
loss and a small convolutional residual regressor with analytic gradients."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    EmptyDomain,
    FloatMap,
    MapKind,
    RadarScaleError,
    ShapeMismatch,
    require_kind,
    require_same_shape,
)

EPS_SCALE = 1e-3
LEAKY_SLOPE = 0.01
LAYER_SHAPES = ((16, 2, 3, 3), (16, 16, 3, 3), (1, 16, 3, 3))


class DivergenceDetected(RadarScaleError):
    def __init__(self, message, history=None, params=None):
        super().__init__(message)
        self.history = list(history or [])
        self.params = params


def compose(z_ga: FloatMap, r: FloatMap) -> tuple[FloatMap, FloatMap]:
    """Scale map ``s`` with ``1/s = ReLU(1 + r)`` and refined depth ``s / z_ga``.

    ``1/s`` is floored at ``EPS_SCALE``; pixels where the floor applied are
    flagged in both outputs.
    """
    require_kind(z_ga, MapKind.INVERSE_DEPTH)
    require_same_shape(z_ga, r)
    valid = z_ga.valid & r.valid
    raw = np.maximum(0.0, 1.0 + r.values)
    clamped = valid & (raw < EPS_SCALE)
    inv_s = np.maximum(raw, EPS_SCALE)
    s = 1.0 / inv_s
    d_hat = np.divide(s, z_ga.values, out=np.zeros(z_ga.shape), where=valid)
    return (
        FloatMap(np.where(valid, s, 0.0), valid, MapKind.SCALE, flags=clamped),
        FloatMap(d_hat, valid, MapKind.DEPTH, flags=clamped),
    )


def _huber_terms(diff: np.ndarray, beta: float, variant: str) -> np.ndarray:
    a = np.abs(diff)
    if variant == "standard":
        return np.where(a < beta, 0.5 * a * a / beta, a - 0.5 * beta)
    if variant == "printed":
        # case order exactly as typeset: linear core, quadratic tail
        return np.where(a < beta, a - 0.5 * beta, 0.5 * a * a / beta)
    raise ValueError(f"unknown smooth-L1 variant {variant!r}")


def _huber_grad(diff: np.ndarray, beta: float, variant: str) -> np.ndarray:
    a = np.abs(diff)
    if variant == "standard":
        # the branch point takes the quadratic side
        return np.where(a <= beta, diff / beta, np.sign(diff))
    return np.where(a < beta, np.sign(diff), diff / beta)


def smooth_l1(d: FloatMap, d_hat: FloatMap, beta: float = 1.0, variant: str = "standard") -> float:
    """Mean smoothed-L1 penalty of ``|d - d_hat|`` over pixels valid in both."""
    require_same_shape(d, d_hat)
    if beta <= 0:
        raise ValueError("beta must be positive")
    dom = d.valid & d_hat.valid
    if not dom.any():
        raise EmptyDomain("no pixel valid in both maps")
    terms = _huber_terms(d.values[dom] - d_hat.values[dom], beta, variant)
    return math.fsum(terms) / terms.size


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    iterations: int = 500
    lambda_gt: float = 1.0
    beta: float = 1.0
    seed: int = 0
    momentum: float = 0.9
    guarded: bool = True
    variant: str = "standard"

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("learning rate must be >= 0")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


def sml_loss(d_gt: FloatMap, d_int: FloatMap, d_hat: FloatMap, cfg: TrainConfig = TrainConfig()) -> float:
    """``L(d_int, d_hat) + lambda_gt * L(d_gt, d_hat)``; an empty term counts 0."""
    require_same_shape(d_gt, d_int, d_hat)
    total, used = 0.0, False
    for target, weight in ((d_int, 1.0), (d_gt, cfg.lambda_gt)):
        try:
            term = smooth_l1(target, d_hat, cfg.beta, cfg.variant)
        except EmptyDomain:
            continue
        total += weight * term
        used = True
    if not used:
        raise EmptyDomain("both supervision maps are empty")
    return total


@dataclass(frozen=True, eq=False)
class RefinerParams:
    weights: tuple
    biases: tuple

    def __post_init__(self):
        ws = tuple(np.array(w, dtype=np.float64) for w in self.weights)
        bs = tuple(np.array(b, dtype=np.float64).reshape(-1) for b in self.biases)
        if tuple(w.shape for w in ws) != LAYER_SHAPES:
            raise ShapeMismatch(f"layer shapes {[w.shape for w in ws]} != {LAYER_SHAPES}")
        if tuple(len(b) for b in bs) != tuple(s[0] for s in LAYER_SHAPES):
            raise ShapeMismatch("bias lengths do not match output channels")
        for a in ws + bs:
            if not np.all(np.isfinite(a)):
                raise ValueError("non-finite refiner parameter")
            a.setflags(write=False)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @classmethod
    def init(cls, seed: int = 0, out_scale: float = 0.01) -> "RefinerParams":
        """He-normal hidden layers; the output layer is shrunk so r starts near 0."""
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
        ws = []
        for k, shape in enumerate(LAYER_SHAPES):
            fan_in = shape[1] * shape[2] * shape[3]
            w = rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)
            ws.append(w * out_scale if k == len(LAYER_SHAPES) - 1 else w)
        return cls(tuple(ws), tuple(np.zeros(s[0]) for s in LAYER_SHAPES))

    @classmethod
    def zeros(cls) -> "RefinerParams":
        return cls(tuple(np.zeros(s) for s in LAYER_SHAPES), tuple(np.zeros(s[0]) for s in LAYER_SHAPES))

    def arrays(self):
        """Parameters in declared order: w0, b0, w1, b1, w2, b2."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_flat(cls, vec) -> "RefinerParams":
        vec = np.asarray(vec, dtype=np.float64)
        ws, bs, k = [], [], 0
        for shape in LAYER_SHAPES:
            n = int(np.prod(shape))
            ws.append(vec[k:k + n].reshape(shape))
            k += n
            bs.append(vec[k:k + shape[0]])
            k += shape[0]
        if k != len(vec):
            raise ShapeMismatch(f"expected {k} values, got {len(vec)}")
        return cls(tuple(ws), tuple(bs))

    @staticmethod
    def size() -> int:
        return sum(int(np.prod(s)) + s[0] for s in LAYER_SHAPES)


def _im2col(x: np.ndarray) -> np.ndarray:
    # rows ordered (channel, ky, kx) to match the flattened kernels
    C, H, W = x.shape
    xp = np.zeros((C, H + 2, W + 2))
    xp[:, 1:-1, 1:-1] = x
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))
    return win.transpose(0, 3, 4, 1, 2).reshape(C * 9, H * W)


def _col2im(dcols: np.ndarray, C: int, H: int, W: int) -> np.ndarray:
    dcols = dcols.reshape(C, 3, 3, H, W)
    dxp = np.zeros((C, H + 2, W + 2))
    for ky in range(3):
        for kx in range(3):
            dxp[:, ky:ky + H, kx:kx + W] += dcols[:, ky, kx]
    return dxp[:, 1:-1, 1:-1]


INPUT_GAIN = 10.0
INPUT_CLIP = 1.0


def _network_input(z_ga: FloatMap, inv_s_q_filled: FloatMap) -> np.ndarray:
    # fixed preconditioning: the scale signal lives in small deviations from 1;
    # clipping keeps wild quasi-dense ratios from driving the net out of range
    require_same_shape(z_ga, inv_s_q_filled)
    dev = np.clip(inv_s_q_filled.values - 1.0, -INPUT_CLIP, INPUT_CLIP)
    return np.stack([INPUT_GAIN * z_ga.values, INPUT_GAIN * dev])


def _forward(params: RefinerParams, x: np.ndarray):
    _, H, W = x.shape
    cache = []
    h = x
    n = len(params.weights)
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        cols = _im2col(h)
        with np.errstate(over="ignore", invalid="ignore"):
            pre = w.reshape(w.shape[0], -1) @ cols + b[:, None]
        pre = pre.reshape(w.shape[0], H, W)
        cache.append((h.shape[0], cols, pre))
        h = np.where(pre > 0, pre, LEAKY_SLOPE * pre) if k < n - 1 else pre
    return h[0], cache


def refiner_forward(params: RefinerParams, z_ga: FloatMap, inv_s_q_filled: FloatMap) -> FloatMap:
    """Residual map from stacked (inverse aligned depth, inverse quasi-dense scale).

    Invalid input pixels enter the network as zeros.
    """
    r, _ = _forward(params, _network_input(z_ga, inv_s_q_filled))
    return FloatMap.dense(r, MapKind.RESIDUAL)


def _backward(params: RefinerParams, cache, dr: np.ndarray) -> list:
    grads = [None] * (2 * len(params.weights))
    g = dr[None]
    for k in range(len(params.weights) - 1, -1, -1):
        w = params.weights[k]
        c_in, cols, pre = cache[k]
        if k < len(params.weights) - 1:
            g = g * np.where(pre > 0, 1.0, LEAKY_SLOPE)
        O, H, W = g.shape
        g2 = g.reshape(O, H * W)
        grads[2 * k] = (g2 @ cols.T).reshape(w.shape)
        grads[2 * k + 1] = g2.sum(axis=1)
        if k > 0:
            g = _col2im(w.reshape(O, -1).T @ g2, c_in, H, W)
    return grads


@dataclass(frozen=True, eq=False)
class TrainingFrame:
    z_ga: FloatMap
    inv_s_q_filled: FloatMap
    d_gt: FloatMap
    d_int: FloatMap


def loss_and_grad(params: RefinerParams, frame: TrainingFrame, cfg: TrainConfig = TrainConfig()):
    """SML loss of one frame and its gradient (list in ``params.arrays()`` order)."""
    z_ga = frame.z_ga
    require_same_shape(z_ga, frame.inv_s_q_filled, frame.d_gt, frame.d_int)
    r, cache = _forward(params, _network_input(z_ga, frame.inv_s_q_filled))
    if not np.all(np.isfinite(r)):
        # finite weights can still overflow; the trainer treats this as divergence
        return math.inf, [np.zeros_like(a) for a in params.arrays()]
    _, d_hat = compose(z_ga, FloatMap.dense(r, MapKind.RESIDUAL))
    loss = sml_loss(frame.d_gt, frame.d_int, d_hat, cfg)

    dd = np.zeros(r.shape)
    for target, weight in ((frame.d_int, 1.0), (frame.d_gt, cfg.lambda_gt)):
        dom = target.valid & d_hat.valid
        n = int(dom.sum())
        if n == 0 or weight == 0.0:
            continue
        diff = d_hat.values[dom] - target.values[dom]
        dd[dom] += (weight / n) * _huber_grad(diff, cfg.beta, cfg.variant)
    inv_s = np.maximum(np.maximum(0.0, 1.0 + r), EPS_SCALE)
    # d_hat = 1 / (inv_s * z); gradient stops where the ReLU or the floor is active
    live = d_hat.valid & (1.0 + r > EPS_SCALE)
    dr = np.where(live, -dd * d_hat.values / inv_s, 0.0)
    return loss, _backward(params, cache, dr)


def refiner_grad(params, z_ga, inv_s_q_filled, d_gt, d_int, cfg: TrainConfig = TrainConfig()) -> list:
    return loss_and_grad(params, TrainingFrame(z_ga, inv_s_q_filled, d_gt, d_int), cfg)[1]


def refined_depth(params: RefinerParams, z_ga: FloatMap, inv_s_q_filled: FloatMap) -> FloatMap:
    return compose(z_ga, refiner_forward(params, z_ga, inv_s_q_filled))[1]


def batch_loss_and_grad(params, frames, cfg, map_fn=map):
    """Mean loss and gradient over frames; reduction runs in frame order."""
    results = list(map_fn(lambda f: loss_and_grad(params, f, cfg), frames))
    n = len(results)
    loss = math.fsum(r[0] for r in results) / n
    grads = [sum(r[1][i] for r in results) / n for i in range(len(results[0][1]))]
    return loss, grads


def _frame_loss(params, f, cfg) -> float:
    r, _ = _forward(params, _network_input(f.z_ga, f.inv_s_q_filled))
    if not np.all(np.isfinite(r)):
        return math.inf
    _, d_hat = compose(f.z_ga, FloatMap.dense(r, MapKind.RESIDUAL))
    return sml_loss(f.d_gt, f.d_int, d_hat, cfg)


def batch_loss(params, frames, cfg) -> float:
    return math.fsum(_frame_loss(params, f, cfg) for f in frames) / len(frames)


@dataclass
class TrainResult:
    params: RefinerParams
    history: list = field(default_factory=list)


def _step(arrays, grads, velocity, lr, momentum):
    new_v = [momentum * v - lr * g for v, g in zip(velocity, grads)]
    return [a + v for a, v in zip(arrays, new_v)], new_v


def _params_from_arrays(arrays) -> RefinerParams:
    return RefinerParams(tuple(arrays[0::2]), tuple(arrays[1::2]))


def train_refiner(init: RefinerParams, batch, cfg: TrainConfig = TrainConfig(), map_fn=map) -> TrainResult:
    """Full-batch gradient descent, optionally with momentum.

    ``history`` holds the batch loss before every step plus the final loss.
    In guarded mode a step that would raise the loss is rejected and the
    learning rate halved, so the history never increases.
    """
    frames = list(batch)
    if not frames:
        raise ValueError("training needs at least one frame")
    params = init
    arrays = params.arrays()
    velocity = [np.zeros_like(a) for a in arrays]
    lr = cfg.lr
    history = []
    loss, grads = batch_loss_and_grad(params, frames, cfg, map_fn)
    for _ in range(cfg.iterations):
        if not math.isfinite(loss):
            raise DivergenceDetected("non-finite training loss", history, params)
        history.append(loss)
        if cfg.guarded:
            for _retry in range(60):
                cand, cand_v = _step(arrays, grads, velocity, lr, cfg.momentum)
                cand_params = _params_from_arrays(cand) if all(np.all(np.isfinite(a)) for a in cand) else None
                cand_loss = batch_loss(cand_params, frames, cfg) if cand_params else math.inf
                if cand_loss <= loss:
                    break
                lr *= 0.5
                velocity = [np.zeros_like(a) for a in arrays]
            else:
                cand, cand_v, cand_params = arrays, velocity, params
        else:
            cand, cand_v = _step(arrays, grads, velocity, lr, cfg.momentum)
            if not all(np.all(np.isfinite(a)) for a in cand):
                raise DivergenceDetected("non-finite refiner parameters", history, params)
            cand_params = _params_from_arrays(cand)
        arrays, velocity, params = cand, cand_v, cand_params
        loss, grads = batch_loss_and_grad(params, frames, cfg, map_fn)
    if not math.isfinite(loss):
        raise DivergenceDetected("non-finite training loss", history, params)
    history.append(loss)
    return TrainResult(params, history)
