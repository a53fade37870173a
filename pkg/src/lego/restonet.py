"""Small residual CNN restorer with hand-written backprop and AdamW.

Architecture: ``out = y + conv3(lrelu(conv2(lrelu(conv1(y)))))`` with 3x3
kernels, reflect padding and channel widths 1 -> 16 -> 16 -> 1.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

from pathlib import Path

import numpy as np

from .errors import DimensionError, DivergenceError
from .imagecore import load_array, save_array

log = logging.getLogger(__name__)

SLOPE = 0.1
WIDTH = 16
PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")
PARAM_SHAPES = {
    "w1": (WIDTH, 1, 3, 3), "b1": (WIDTH,),
    "w2": (WIDTH, WIDTH, 3, 3), "b2": (WIDTH,),
    "w3": (1, WIDTH, 3, 3), "b3": (1,),
}


def init_params(rng) -> dict[str, np.ndarray]:
    """He-normal init for conv1/conv2, zeros for conv3 so the net starts as identity."""
    params = {}
    for name in PARAM_NAMES:
        shape = PARAM_SHAPES[name]
        if name in ("w1", "w2"):
            fan_in = shape[1] * 9
            w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
            # float32-representable so a zero-step run returns the init unchanged
            params[name] = w.astype(np.float32).astype(np.float64)
        else:
            params[name] = np.zeros(shape)
    return params


def zero_params() -> dict[str, np.ndarray]:
    return {name: np.zeros(PARAM_SHAPES[name]) for name in PARAM_NAMES}


def check_params(params) -> None:
    for name in PARAM_NAMES:
        if params[name].shape != PARAM_SHAPES[name]:
            raise DimensionError(f"{name} has shape {params[name].shape}, expected {PARAM_SHAPES[name]}")


# -- convolution primitives -------------------------------------------------
# Activations are kept channel-major, shape (C, B, H, W), so each conv and each
# weight gradient is a single matrix product over B*H*W columns.

def _unpad_adjoint(gp):
    """Adjoint of 1-pixel reflect padding: fold border gradients back inside."""
    g = gp[..., 1:-1, 1:-1].copy()
    g[..., 1, :] += gp[..., 0, 1:-1]
    g[..., -2, :] += gp[..., -1, 1:-1]
    g[..., :, 1] += gp[..., 1:-1, 0]
    g[..., :, -2] += gp[..., 1:-1, -1]
    g[..., 1, 1] += gp[..., 0, 0]
    g[..., 1, -2] += gp[..., 0, -1]
    g[..., -2, 1] += gp[..., -1, 0]
    g[..., -2, -2] += gp[..., -1, -1]
    return g


def _im2col(x):
    """(C, B, H, W) -> (C*9, B*H*W) patches of the reflect-padded input."""
    c, b, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="reflect")
    cols = np.empty((c, 9, b, h, w), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            cols[:, 3 * i + j] = xp[:, :, i:i + h, j:j + w]
    return cols.reshape(c * 9, b * h * w)


def _col2im(dcols, shape):
    c, b, h, w = shape
    dcols = dcols.reshape(c, 9, b, h, w)
    gp = np.zeros((c, b, h + 2, w + 2), dtype=dcols.dtype)
    for i in range(3):
        for j in range(3):
            gp[:, :, i:i + h, j:j + w] += dcols[:, 3 * i + j]
    return _unpad_adjoint(gp)


def conv3x3(x, w, b):
    """3x3 correlation with reflect padding on channel-major ``x`` (C, B, H, W)."""
    _, n, h, wd = x.shape
    cols = _im2col(x)
    out = w.reshape(w.shape[0], -1) @ cols
    out += b[:, None]
    return out.reshape(w.shape[0], n, h, wd), cols


def _lrelu(x):
    return np.maximum(x, SLOPE * x)


def _as_batch(y, dtype):
    y = np.asarray(y, dtype=dtype)
    if y.ndim == 2:
        return y[None, None], True
    if y.ndim == 3:
        return y[None], False
    raise DimensionError(f"expected (H, W) or (n, H, W) input, got {y.shape}")


def _dtype(params):
    return np.result_type(*(params[k] for k in PARAM_NAMES))


def _forward_cache(params, x4):
    a1, c1 = conv3x3(x4, params["w1"], params["b1"])
    h1 = _lrelu(a1)
    a2, c2 = conv3x3(h1, params["w2"], params["b2"])
    h2 = _lrelu(a2)
    a3, c3 = conv3x3(h2, params["w3"], params["b3"])
    return x4 + a3, (a1, c1, a2, c2, c3)


def forward(params, y) -> np.ndarray:
    """Restore an image ``(H, W)`` or a stack ``(n, H, W)``.

    Computation runs in the parameters' dtype.
    """
    x4, single = _as_batch(y, _dtype(params))
    if min(x4.shape[-2:]) < 3:
        raise DimensionError("input too small for 3x3 reflect padding")
    out, _ = _forward_cache(params, x4)
    return out[0, 0] if single else out[0]


def loss_restore(params, y, x) -> float:
    """Mean squared error between ``forward(params, y)`` and ``x`` (batch mean)."""
    y = np.asarray(y)
    x = np.asarray(x)
    if y.shape != x.shape:
        raise DimensionError(f"input {y.shape} and target {x.shape} differ")
    return float(np.mean((forward(params, y) - x) ** 2))


def loss_and_grad(params, y, x) -> tuple[float, dict[str, np.ndarray]]:
    """Batch-mean MSE and its exact gradient with respect to every parameter."""
    dt = _dtype(params)
    y4, _ = _as_batch(y, dt)
    x4, _ = _as_batch(x, dt)
    if y4.shape != x4.shape:
        raise DimensionError(f"input {y4.shape} and target {x4.shape} differ")
    if y4.shape[1] == 0:
        raise ValueError("empty batch")
    out, (a1, c1, a2, c2, c3) = _forward_cache(params, y4)
    diff = out - x4
    loss = float(np.mean(diff.astype(np.float64) ** 2))

    shape = (WIDTH,) + y4.shape[1:]
    g3 = ((2.0 / diff.size) * diff).reshape(1, -1).astype(dt)
    grads = {"w3": (g3 @ c3.T).reshape(PARAM_SHAPES["w3"]), "b3": g3.sum(axis=1)}
    dh2 = _col2im(params["w3"].reshape(1, -1).T @ g3, shape)

    g2 = np.where(a2 > 0, dh2, SLOPE * dh2).reshape(WIDTH, -1)
    grads["w2"] = (g2 @ c2.T).reshape(PARAM_SHAPES["w2"])
    grads["b2"] = g2.sum(axis=1)
    dh1 = _col2im(params["w2"].reshape(WIDTH, -1).T @ g2, shape)

    g1 = np.where(a1 > 0, dh1, SLOPE * dh1).reshape(WIDTH, -1)
    grads["w1"] = (g1 @ c1.T).reshape(PARAM_SHAPES["w1"])
    grads["b1"] = g1.sum(axis=1)
    return loss, grads


def backward(params, y, x) -> dict[str, np.ndarray]:
    """Gradient of the batch-mean restoration loss."""
    return loss_and_grad(params, y, x)[1]


# -- optimizer ----------------------------------------------------------------

@dataclass
class OptState:
    lr: float
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, lr, weight_decay=0.01):
        return cls(lr=lr, weight_decay=weight_decay,
                   m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adamw_step(opt: OptState, params, grads):
    """One AdamW update (decoupled weight decay, bias-corrected moments).

    Returns new ``(opt, params)``; the inputs are not modified.
    """
    b1, b2 = opt.betas
    step = opt.step + 1
    m, v, new = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {k} has shape {g.shape}, expected {p.shape}")
        m[k] = b1 * opt.m[k] + (1 - b1) * g
        v[k] = b2 * opt.v[k] + (1 - b2) * g * g
        mhat = m[k] / (1 - b1 ** step)
        vhat = v[k] / (1 - b2 ** step)
        new[k] = p * (1 - opt.lr * opt.weight_decay) - opt.lr * mhat / (np.sqrt(vhat) + opt.eps)
    out = OptState(opt.lr, opt.weight_decay, opt.betas, opt.eps, step, m, v)
    return out, new


def train(params, degraded, clean, iters, batch_size, lr, weight_decay, rng, dtype=np.float32):
    """Pre-train on paired stacks ``(n, H, W)`` with uniform with-replacement batches.

    Returns ``(params, losses)`` where ``losses[i]`` is the batch loss at
    iteration ``i``. Arithmetic runs in ``dtype``; returned params are float64.
    """
    if len(degraded) == 0:
        raise ValueError("training set is empty")
    degraded = np.asarray(degraded, dtype=dtype)
    clean = np.asarray(clean, dtype=dtype)
    if degraded.shape != clean.shape:
        raise DimensionError("degraded and clean stacks differ in shape")
    params = {k: np.asarray(p, dtype=dtype) for k, p in params.items()}
    opt = OptState.for_params(params, lr, weight_decay)
    losses = np.empty(iters)
    for it in range(iters):
        idx = rng.integers(0, len(degraded), size=batch_size)
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads = loss_and_grad(params, degraded[idx], clean[idx])
        if not np.isfinite(loss):
            raise DivergenceError(f"training loss became non-finite at iteration {it}", step=it)
        losses[it] = loss
        opt, params = adamw_step(opt, params, grads)
        if it % 1000 == 0:
            log.info("train iter %d loss %.6f", it, loss)
    return {k: p.astype(np.float64) for k, p in params.items()}, losses


# -- checkpoint -----------------------------------------------------------------

def save_checkpoint(directory, params, header=None) -> None:
    """Tensor block per parameter plus ``checkpoint.json`` (dims and caller metadata)."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    check_params(params)
    for name in PARAM_NAMES:
        save_array(out / f"{name}.lgt", params[name])
    meta = {"architecture": {"in": 1, "width": WIDTH, "out": 1, "kernel": 3, "slope": SLOPE},
            "blocks": {name: f"{name}.lgt" for name in PARAM_NAMES}}
    meta.update(header or {})
    (out / "checkpoint.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_checkpoint(directory) -> tuple[dict[str, np.ndarray], dict]:
    src = Path(directory)
    meta = json.loads((src / "checkpoint.json").read_text())
    params = {name: load_array(src / meta["blocks"][name]) for name in PARAM_NAMES}
    check_params(params)
    return params, meta
