"""FreeNet: encoder-decoder FCN for whole-image hyperspectral classification.

Layout at ``beta = 1`` (C input bands, N classes)::

    stem      3x3 conv C->64, GN, ReLU
    block k   spectral attention -> 3x3 conv w_k, GN, ReLU [-> 3x3/s2 conv w_{k+1}, ReLU]
              w = 64, 128, 192, 256; block 4 has no downsampling
    laterals  1x1 conv to 128 from the outputs p4, p3, p2, p1
    decoder   q = lat4(p4); three times: q = up2x(relu(conv3x3(q))) + lat(p)
    head      3x3 conv 128, ReLU, 1x1 conv N

Encoder features are tapped before each downsampling conv, so ``p1..p4``
live at strides 1, 2, 4, 8 and every lateral sum lines up spatially.

Cost accounting is analytic. Convolutions and dense layers count 2 FLOPs per
multiply-accumulate (bias adds are not counted); group norm, ReLU, sigmoid,
upsampling, the attention scale and the lateral addition count 1 FLOP per
output element; the attention's spatial mean counts 1 FLOP per input element.
"""
from dataclasses import dataclass
import math

import numpy as np

from . import functional as F
from .errors import ConfigError, ShapeError
from .layers import BasicModule, Conv2d, Downsample, Module, SpectralAttention
from .tensor import Tensor, add, no_grad, relu

BASE_ENCODER_WIDTHS = (64, 128, 192, 256)
BASE_DECODER_WIDTH = 128
DEFAULT_PATCH_SIZE = 27


@dataclass(frozen=True)
class FreeNetConfig:
    in_bands: int
    num_classes: int
    beta: float = 1.0
    reduction_ratio: int = 16
    encoder_widths: tuple = BASE_ENCODER_WIDTHS
    decoder_width: int = BASE_DECODER_WIDTH

    def __post_init__(self):
        if self.in_bands < 1 or self.num_classes < 1:
            raise ConfigError("in_bands and num_classes must be positive")
        if not 0 < self.beta <= 1:
            raise ConfigError(f"beta must lie in (0, 1], got {self.beta}")
        if self.reduction_ratio < 1:
            raise ConfigError("reduction_ratio must be positive")
        if len(self.encoder_widths) != 4:
            raise ConfigError("encoder_widths needs exactly four entries")

    def scaled(self, width):
        w = int(math.floor(self.beta * width + 0.5))
        if w < 1:
            raise ConfigError(f"beta={self.beta} rounds width {width} down to zero channels")
        return w

    @property
    def widths(self):
        return tuple(self.scaled(w) for w in self.encoder_widths)

    @property
    def dec_width(self):
        return self.scaled(self.decoder_width)


class HybridBlock(Module):
    def __init__(self, channels, out_channels, reduction_ratio, rng):
        self.attention = SpectralAttention(channels, reduction_ratio, rng=rng)
        self.basic = BasicModule(channels, channels, rng=rng)
        self.down = Downsample(channels, out_channels, rng=rng) if out_channels else None

    def forward(self, x):
        """Return ``(feature before downsampling, block output)``."""
        p = self.basic(self.attention(x))
        return p, (self.down(p) if self.down is not None else p)


class Encoder(Module):
    def __init__(self, cfg, rng):
        w = cfg.widths
        self.stem = BasicModule(cfg.in_bands, w[0], rng=rng)
        self.blocks = [HybridBlock(w[i], w[i + 1] if i < 3 else None, cfg.reduction_ratio, rng)
                       for i in range(4)]

    def forward(self, x):
        """Return ``[p1, p2, p3, p4]``."""
        feats = []
        x = self.stem(x)
        for block in self.blocks:
            p, x = block(x)
            feats.append(p)
        return feats


def lateral_fuse(q, p, lateral):
    """Semantic-spatial fusion: ``q + lateral(p)`` with a 1x1 lateral conv."""
    side = lateral(p)
    if side.shape[1:] != q.shape[1:]:
        raise ShapeError(f"lateral fusion: decoder feature {q.shape} vs lateral {side.shape}")
    return add(q, side)


class FreeNet(Module):
    def __init__(self, cfg, rng=None):
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.config = cfg
        w, d = cfg.widths, cfg.dec_width
        self.encoder = Encoder(cfg, rng)
        # order: from p4, p3, p2, p1
        self.laterals = [Conv2d(w[i], d, 1, rng=rng) for i in (3, 2, 1, 0)]
        self.decoder = [Conv2d(d, d, 3, rng=rng) for _ in range(3)]
        self.head = Conv2d(d, d, 3, rng=rng)
        self.classifier = Conv2d(d, cfg.num_classes, 1, rng=rng)

    def decode(self, feats):
        p1, p2, p3, p4 = feats
        q = self.laterals[0](p4)
        for conv, lateral, p in zip(self.decoder, self.laterals[1:], (p3, p2, p1)):
            q = F.upsample_nearest2x(relu(conv(q)))
            q = lateral_fuse(q, p, lateral)
        return self.classifier(relu(self.head(q)))

    def forward(self, x):
        if not isinstance(x, Tensor):
            x = Tensor(x, dtype=self.classifier.weight.dtype)
        c, h, w = x.shape
        if c != self.config.in_bands:
            raise ShapeError(f"model expects {self.config.in_bands} bands, got {c}")
        if h % 8 or w % 8:
            raise ShapeError(f"forward needs H and W divisible by 8, got {h}x{w}; "
                             "use predict_padded for arbitrary sizes")
        return self.decode(self.encoder(x))


def build(cfg, seed=0):
    return FreeNet(cfg, rng=np.random.default_rng(seed))


def padded_size(n, multiple=8):
    return -(-n // multiple) * multiple


def pad_to_multiple(x, multiple=8):
    _, h, w = x.shape
    return F.pad_bottom_right(x, padded_size(h, multiple) - h, padded_size(w, multiple) - w)


def predict_padded(model, x):
    """Zero-pad to multiples of 8 (bottom/right), run forward, crop back."""
    if not isinstance(x, Tensor):
        x = Tensor(x, dtype=model.classifier.weight.dtype)
    _, h, w = x.shape
    return F.crop(model(pad_to_multiple(x)), h, w)


def predict_labels(model, cube):
    """Class raster (1-based) for a whole ``[C, H, W]`` cube."""
    with no_grad():
        logits = predict_padded(model, cube)
    return (np.argmax(logits.data, axis=0) + 1).astype(np.uint16)


# ---------------------------------------------------------------------------
# parameter and FLOP accounting
# ---------------------------------------------------------------------------


class PatchClassifier(Module):
    """Encoder followed by a 1x1 conv: the patch-based reference classifier.

    Labels the centre pixel of a square patch; the 1x1 conv runs over the
    final stride-8 feature map of the patch.
    """

    def __init__(self, cfg, rng=None):
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.config = cfg
        self.encoder = Encoder(cfg, rng)
        self.classifier = Conv2d(cfg.widths[3], cfg.num_classes, 1, rng=rng)

    def forward(self, patch):
        logits = self.classifier(self.encoder(patch)[3])
        _, h, w = logits.shape
        return logits.data[:, h // 2, w // 2]


def count_params(model):
    return int(model.num_parameters())


def _conv_cost(name, conv, c, h, w):
    ho, wo = conv.out_size(h, w)
    params = conv.weight.size + (conv.bias.size if conv.bias is not None else 0)
    flops = 2 * conv.kernel * conv.kernel * conv.cin * conv.cout * ho * wo
    return (name, (conv.cout, ho, wo), params, flops), (conv.cout, ho, wo)


def _basic_cost(name, mod, shape, rows):
    row, shape = _conv_cost(f"{name}.conv", mod.conv, *shape)
    n = int(np.prod(shape))
    gn = mod.gn
    rows.append(row)
    rows.append((f"{name}.gn+relu", shape, gn.gamma.size + gn.beta_shift.size, 2 * n))
    return shape


def _encoder_cost(enc, shape, rows):
    shape = _basic_cost("stem", enc.stem, shape, rows)
    feats = []
    for i, block in enumerate(enc.blocks, 1):
        att = block.attention
        c, h, w = shape
        hid = att.hidden
        flops = c * h * w + 2 * c * hid + hid + 2 * hid * c + c + c * h * w
        rows.append((f"block{i}.attention", shape, att.num_parameters(), flops))
        shape = _basic_cost(f"block{i}.basic", block.basic, shape, rows)
        feats.append(shape)
        if block.down is not None:
            row, shape = _conv_cost(f"block{i}.down", block.down.conv, *shape)
            rows.append((row[0] + "+relu", row[1], row[2], row[3] + int(np.prod(shape))))
    return shape, feats


def layer_costs(model, height, width):
    """Per-layer ``(name, output shape, params, flops)`` for one forward pass."""
    rows = []
    shape = (model.config.in_bands, height, width)
    if isinstance(model, PatchClassifier):
        shape, _ = _encoder_cost(model.encoder, shape, rows)
        row, _ = _conv_cost("classifier", model.classifier, *shape)
        rows.append(row)
        return rows
    if height % 8 or width % 8:
        raise ShapeError(f"FLOP count needs H and W divisible by 8, got {height}x{width}")
    _, feats = _encoder_cost(model.encoder, shape, rows)
    names = ("lateral4-1", "lateral3-1", "lateral2-2", "lateral1-3")
    row, q = _conv_cost(names[0], model.laterals[0], *feats[3])
    rows.append(row)
    for i, (conv, lat, p) in enumerate(zip(model.decoder, model.laterals[1:], feats[2::-1])):
        row, q = _conv_cost(f"decoder{i + 1}.conv+relu", conv, *q)
        rows.append((row[0], row[1], row[2], row[3] + int(np.prod(q))))
        q = (q[0], 2 * q[1], 2 * q[2])
        rows.append((f"decoder{i + 1}.upsample", q, 0, int(np.prod(q))))
        row, _ = _conv_cost(names[i + 1], lat, *p)
        rows.append((row[0] + "+add", q, row[2], row[3] + int(np.prod(q))))
    row, q = _conv_cost("head.conv+relu", model.head, *q)
    rows.append((row[0], row[1], row[2], row[3] + int(np.prod(q))))
    row, _ = _conv_cost("classifier", model.classifier, *q)
    rows.append(row)
    return rows


def count_flops(model, height, width):
    return float(sum(r[3] for r in layer_costs(model, height, width)))


def count_flops_patch_based(patch_model, patch_size=DEFAULT_PATCH_SIZE, num_pixels=1):
    """FLOPs to label ``num_pixels`` pixels one patch at a time.

    Each pixel pays a full encoder pass over its own ``patch_size`` square,
    which is exactly the redundant overlap a whole-image pass avoids.
    """
    if patch_size < 1 or patch_size % 2 == 0:
        raise ConfigError(f"patch size must be odd, got {patch_size}")
    per_patch = sum(r[3] for r in layer_costs(patch_model, patch_size, patch_size))
    return float(per_patch) * num_pixels


def summary(model, height, width):
    """Plain-text table of per-layer shapes, params and FLOPs."""
    rows = layer_costs(model, height, width)
    lines = [f"{'layer':<28}{'output':>18}{'params':>12}{'FLOPs':>16}"]
    for name, shape, params, flops in rows:
        lines.append(f"{name:<28}{'x'.join(map(str, shape)):>18}{params:>12,}{flops:>16,}")
    lines.append(f"{'total':<28}{'':>18}{count_params(model):>12,}"
                 f"{sum(r[3] for r in rows):>16,}")
    return "\n".join(lines)
