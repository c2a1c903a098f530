"""Masked-position cross-entropy, poly-LR momentum SGD and the training loop.

Every iteration runs the whole (padded) image through the network, but only
the pixels of the current GS2 batch contribute to the loss.
"""
from dataclasses import dataclass, field
import logging
import time

import numpy as np

from . import gs2
from .checkpoint import save_checkpoint
from .errors import ConfigError, DomainError, NumericError, ShapeError
from .freenet import predict_padded
from .tensor import Tensor, backward

log = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    base_lr: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 1e-4
    max_iter: int = 1000
    power: float = 0.9
    velocity: dict = field(default_factory=dict, repr=False)


@dataclass
class TrainReport:
    losses: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    checkpoint: str = None

    def __len__(self):
        return len(self.losses)


def masked_cross_entropy(logits, labels, positions):
    """Mean cross-entropy over ``positions`` (``[n, 2]`` rows/cols).

    ``labels`` is the 1-based ground-truth raster; every sampled position
    must be labeled.
    """
    positions = np.asarray(positions, dtype=np.int64).reshape(-1, 2)
    n = len(positions)
    if n == 0:
        raise DomainError("empty batch")
    _, h, w = logits.shape
    rows, cols = positions[:, 0], positions[:, 1]
    if rows.min() < 0 or cols.min() < 0 or rows.max() >= h or cols.max() >= w:
        raise ShapeError(f"sampled position outside the {h}x{w} logit map")
    target = np.asarray(labels)[rows, cols].astype(np.int64) - 1
    if (target < 0).any():
        raise DomainError("batch contains an unlabeled position (label 0)")
    if (target >= logits.shape[0]).any():
        raise DomainError(f"label exceeds the {logits.shape[0]} model classes")

    z = logits.data[:, rows, cols].astype(np.float64)
    z = z - z.max(axis=0, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=0))
    logp = z - lse
    loss = -logp[target, np.arange(n)].mean()
    dtype = logits.dtype

    def bw(g):
        p = np.exp(logp)
        p[target, np.arange(n)] -= 1.0
        full = np.zeros(logits.shape, dtype=dtype)
        scale = float(np.asarray(g).reshape(-1)[0]) / n
        np.add.at(full, (slice(None), rows, cols), (p * scale).astype(dtype))
        return (full,)

    return Tensor.from_op(np.asarray(loss, dtype=dtype), (logits,), bw, "masked_ce")


def poly_lr(iteration, state):
    if iteration < 0 or iteration > state.max_iter:
        raise DomainError(f"iteration {iteration} outside [0, {state.max_iter}]")
    if state.max_iter == 0:
        return state.base_lr
    return state.base_lr * (1.0 - iteration / state.max_iter) ** state.power


def decays(param):
    """Weight decay applies to conv/dense kernels, not to biases or GN affine."""
    return param.ndim >= 2


def sgd_step(params, state, iteration, grads=None):
    """Momentum SGD with L2 decay folded into the gradient; clears grads."""
    lr = poly_lr(iteration, state)
    for i, p in enumerate(params):
        g = p.grad if grads is None else grads[i]
        g = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=p.dtype)
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if state.weight_decay and decays(p):
            g = g + state.weight_decay * p.data
        v = state.velocity.get(id(p))
        v = g.copy() if v is None else state.momentum * v + g
        state.velocity[id(p)] = v
        p.data = (p.data - lr * v).astype(p.dtype)
        p.grad = None
    return lr


def train(model, scene, alpha=20, optimizer=None, seed=0, checkpoint_path=None, log_file=None,
          echo=True):
    """Fit ``model`` on ``scene.train_mask`` for ``optimizer.max_iter`` iterations."""
    opt = optimizer or OptimizerState()
    if scene.train_mask is None:
        raise ConfigError("scene has no training mask")
    if scene.bands != model.config.in_bands or scene.num_classes > model.config.num_classes:
        raise ConfigError(f"scene ({scene.bands} bands, {scene.num_classes} classes) does not fit "
                          f"model ({model.config.in_bands} bands, {model.config.num_classes} classes)")
    positions = gs2.labeled_positions(scene.labels, scene.train_mask)
    schedule = gs2.build_schedule(positions, alpha, seed, epoch=0)
    x = Tensor(scene.cube, dtype=model.classifier.weight.dtype)
    params = model.parameters()
    report = TrainReport()
    epoch, cursor = 0, 0
    fh = open(log_file, "w") if log_file else None
    try:
        for it in range(opt.max_iter):
            t0 = time.perf_counter()
            if cursor == len(schedule):
                epoch += 1
                schedule = gs2.reshuffle_epoch(schedule, epoch)
                cursor = 0
            batch = schedule.batches[cursor]
            cursor += 1
            logits = predict_padded(model, x)
            loss = masked_cross_entropy(logits, scene.labels, batch[:, 1:])
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"loss became {value} at iteration {it}")
            backward(loss)
            lr = sgd_step(params, opt, it)
            dt = time.perf_counter() - t0
            report.losses.append(value)
            report.lrs.append(lr)
            report.seconds.append(dt)
            line = f"{it} {value:.6f} {lr:.6e} {dt:.4f}"
            if echo:
                print(line, flush=True)
            if fh:
                fh.write(line + "\n")
    finally:
        if fh:
            fh.close()
    if checkpoint_path:
        save_checkpoint(model, checkpoint_path)
        report.checkpoint = checkpoint_path
    return report
