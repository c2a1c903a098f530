"""Global stochastic stratified (GS2) sampling of training pixels.

Each class's training positions are shuffled and cut into chunks of
``alpha`` (the last chunk holds the remainder). Batch ``c`` is the union of
every class's ``c``-th chunk, so early batches are class-balanced and a class
simply stops contributing once its chunks run out. Shuffles draw from
:class:`~patchfree.rng.SplitMix64` streams keyed by ``(seed, epoch, class)``.
"""
from dataclasses import dataclass, field
import warnings

import numpy as np

from .errors import ConfigError
from .rng import SplitMix64


def labeled_positions(labels, mask=None):
    """``{class_id: int array [n, 2] of (row, col)}`` in row-major order.

    Class 0 is unlabeled and ignored. ``mask`` restricts to e.g. the
    training split.
    """
    labels = np.asarray(labels)
    sel = labels > 0
    if mask is not None:
        sel &= np.asarray(mask, dtype=bool)
    rows, cols = np.nonzero(sel)
    cls = labels[rows, cols]
    out = {}
    for k in np.unique(cls):
        pick = cls == k
        out[int(k)] = np.stack([rows[pick], cols[pick]], axis=1).astype(np.int64)
    return out


@dataclass
class SampleSchedule:
    """One epoch of GS2 batches.

    ``batches[b]`` is an int array ``[n_b, 3]`` of ``(class, row, col)``.
    """

    batches: list
    alpha: int
    seed: int
    epoch: int
    positions: dict = field(repr=False)
    warnings: list = field(default_factory=list)

    def __len__(self):
        return len(self.batches)

    def total(self):
        return sum(len(b) for b in self.batches)

    def dump(self):
        """Text lines ``batch_index class row col`` in batch order."""
        lines = []
        for b, batch in enumerate(self.batches):
            lines.extend(f"{b} {k} {r} {c}" for k, r, c in batch.tolist())
        return "\n".join(lines) + ("\n" if lines else "")


def _chunks(idx, alpha):
    out = []
    while len(idx) > alpha:
        out.append(idx[:alpha])
        idx = idx[alpha:]
    if len(idx):
        out.append(idx)
    return out


def build_schedule(positions, alpha=20, seed=0, epoch=0):
    """Turn per-class positions into a stochastic sequence of stratified batches."""
    if alpha < 1:
        raise ConfigError(f"alpha must be >= 1, got {alpha}")
    if not any(len(v) for v in positions.values()):
        raise ConfigError("no labeled training positions")
    notes = []
    per_class = []
    for k in sorted(positions):
        pos = np.asarray(positions[k], dtype=np.int64).reshape(-1, 2)
        if len(pos) == 0:
            notes.append(f"class {k} has no training positions; skipped")
            continue
        order = SplitMix64(seed, epoch, k).permutation(len(pos))
        shuffled = pos[order]
        tagged = np.column_stack([np.full(len(shuffled), k, np.int64), shuffled])
        per_class.append(_chunks(tagged, alpha))
    for msg in notes:
        warnings.warn(msg, stacklevel=2)

    batches = []
    c = 0
    while any(len(ch) > c for ch in per_class):
        batches.append(np.concatenate([ch[c] for ch in per_class if len(ch) > c]))
        c += 1
    return SampleSchedule(batches, alpha, seed, epoch, positions, notes)


def reshuffle_epoch(schedule, epoch):
    """Rebuild ``schedule`` with fresh per-class shuffles for ``epoch``."""
    return build_schedule(schedule.positions, schedule.alpha, schedule.seed, epoch)


def iterate(schedule):
    """Yield ``(positions [n, 2], class labels [n])`` per batch."""
    for batch in schedule.batches:
        yield batch[:, 1:], batch[:, 0]
