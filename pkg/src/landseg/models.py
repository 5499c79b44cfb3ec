"""Architecture builders and full-model forward/backward.

Three families share one segmentation contract (N×C×H×W in, N×1×H×W
probabilities out):

- unet-plain: double-conv encoder/decoder with skip concatenations.
- unet-dense: encoder stages swap the double conv for a dense block plus a
  1x1-conv/avg-pool transition.
- deeplab-lite: strided-conv encoder, ASPP context module, transposed-conv
  upsampling back to full resolution.

Channel widths double per encoder stage starting at base_width. The minimal
unet-plain (depth=1, base_width=1) has exactly 9*in_channels + 109 parameters:
encoder double conv (9*in_channels + 1) + 10, bottleneck 20 + 38, decoder
transposed conv 9 plus double conv 19 + 10, head 2.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import (
    ASPP,
    Conv2d,
    DenseBlock,
    Layer,
    MaxPool2,
    ReLU,
    SEBlock,
    Sequential,
    Sigmoid,
    Transition,
    TransposedConv2d,
    concat_channels,
)
from .tensor import DEFAULT_DTYPE, Rng, ShapeError, Tensor

ARCHITECTURES = ("unet-plain", "unet-dense", "deeplab-lite")


@dataclass
class ModelSpec:
    """Architecture selection and sizing.

    `aspp_rates` applies to deeplab-lite only; `dense_layers`/`growth` to
    unet-dense only. `use_se` inserts a squeeze-and-excitation gate after each
    encoder stage in any architecture.
    """

    arch: str = "unet-plain"
    in_channels: int = 14
    base_width: int = 8
    depth: int = 3
    aspp_rates: list = field(default_factory=lambda: [1, 2, 4])
    dense_layers: int = 2
    growth: int = 4
    use_se: bool = False
    threshold: float = 0.5

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.arch!r}; expected one of {ARCHITECTURES}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.base_width < 1:
            raise ValueError("base_width must be >= 1")
        if self.in_channels < 1:
            raise ValueError("in_channels must be >= 1")
        if not (0.0 <= self.threshold <= 1.0):
            raise ValueError("threshold must lie in [0, 1]")
        if self.arch == "deeplab-lite" and not self.aspp_rates:
            raise ValueError("deeplab-lite needs at least one ASPP rate")
        if self.arch == "unet-dense" and (self.dense_layers < 1 or self.growth < 1):
            raise ValueError("unet-dense needs dense_layers >= 1 and growth >= 1")

    def to_dict(self) -> dict:
        return {
            "arch": self.arch,
            "in_channels": self.in_channels,
            "base_width": self.base_width,
            "depth": self.depth,
            "aspp_rates": list(self.aspp_rates),
            "dense_layers": self.dense_layers,
            "growth": self.growth,
            "use_se": self.use_se,
            "threshold": self.threshold,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelSpec":
        return ModelSpec(**d)


class DoubleConv(Layer):
    """conv3x3 -> relu -> conv3x3 -> relu, padding 1 (extent-preserving)."""

    def __init__(self, in_channels: int, out_channels: int,
                 rng: Rng | None = None, dtype=DEFAULT_DTYPE):
        self.block = Sequential(
            Conv2d(in_channels, out_channels, 3, padding=1, rng=rng, dtype=dtype),
            ReLU(),
            Conv2d(out_channels, out_channels, 3, padding=1, rng=rng, dtype=dtype),
            ReLU(),
            names=["conv1", "relu1", "conv2", "relu2"],
        )
        self.out_channels = out_channels

    def _children(self):
        return [("block", self.block)]

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        return self.block.forward(x, training)

    def backward(self, grad_out: Tensor) -> Tensor:
        return self.block.backward(grad_out)


class _ConcatOp:
    """Bookkeeping for one skip concatenation (upsampled first)."""

    def __init__(self):
        self.split = None

    def forward(self, up: Tensor, skip: Tensor) -> Tensor:
        self.split = up.shape[1]
        return concat_channels(up, skip)

    def backward(self, grad: Tensor):
        s = self.split
        return Tensor(grad.data[:, :s]), Tensor(grad.data[:, s:])


class Model(Layer):
    """Base segmentation model: spec + divisibility checks + thresholding."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec

    def _check_input(self, x: Tensor) -> None:
        if x.ndim != 4:
            raise ShapeError(f"model input must be N×C×H×W, got rank {x.ndim}")
        if x.shape[1] != self.spec.in_channels:
            raise ShapeError(
                f"model expects {self.spec.in_channels} input channels, got {x.shape[1]}"
            )
        stride = 1 << self.spec.depth
        _, _, h, w = x.shape
        if h % stride or w % stride:
            raise ShapeError(
                f"input extents {h}x{w} must be divisible by 2^depth = {stride}"
            )


class UNet(Model):
    """unet-plain and unet-dense share this encoder/decoder skeleton."""

    def __init__(self, spec: ModelSpec, rng: Rng | None, dtype=DEFAULT_DTYPE):
        super().__init__(spec)
        b, d = spec.base_width, spec.depth
        dense = spec.arch == "unet-dense"
        self.enc_blocks, self.enc_trans, self.pools, self.se_blocks = [], [], [], []
        skip_channels = []
        ch = spec.in_channels
        for i in range(d):
            width = b << i
            if dense:
                blk = DenseBlock(ch, spec.dense_layers, spec.growth, rng=rng, dtype=dtype)
                skip_ch = blk.out_channels
                self.enc_blocks.append(blk)
                self.enc_trans.append(Transition(skip_ch, width, rng=rng, dtype=dtype))
            else:
                blk = DoubleConv(ch, width, rng=rng, dtype=dtype)
                skip_ch = width
                self.enc_blocks.append(blk)
                self.pools.append(MaxPool2())
            self.se_blocks.append(
                SEBlock(skip_ch, rng=rng, dtype=dtype) if spec.use_se else None
            )
            skip_channels.append(skip_ch)
            ch = width
        self.bottleneck = DoubleConv(ch, b << d, rng=rng, dtype=dtype)
        ch = b << d
        self.upconvs, self.dec_blocks, self.concats = [], [], []
        for i in range(d - 1, -1, -1):
            width = b << i
            self.upconvs.append(TransposedConv2d(ch, width, 2, stride=2, rng=rng, dtype=dtype))
            self.dec_blocks.append(
                DoubleConv(width + skip_channels[i], width, rng=rng, dtype=dtype)
            )
            self.concats.append(_ConcatOp())
            ch = width
        # structural consistency: each decoder block must consume exactly the
        # upsampled width plus the matching encoder skip width
        for j, i in enumerate(range(d - 1, -1, -1)):
            first_conv = self.dec_blocks[j].block.layers[0]
            expected = self.upconvs[j].out_channels + skip_channels[i]
            if first_conv.in_channels != expected:
                raise ShapeError(
                    f"decoder stage {j}: concat width {first_conv.in_channels} "
                    f"!= upsampled {self.upconvs[j].out_channels} + skip {skip_channels[i]}"
                )
        self.head = Conv2d(ch, 1, 1, rng=rng, dtype=dtype)
        self.out_act = Sigmoid()
        self._dense = dense

    def _children(self):
        out = []
        for i, blk in enumerate(self.enc_blocks):
            out.append((f"enc{i}", blk))
            if self._dense:
                out.append((f"trans{i}", self.enc_trans[i]))
            if self.se_blocks[i] is not None:
                out.append((f"se{i}", self.se_blocks[i]))
        out.append(("bottleneck", self.bottleneck))
        for j in range(len(self.upconvs)):
            out.append((f"up{j}", self.upconvs[j]))
            out.append((f"dec{j}", self.dec_blocks[j]))
        out.append(("head", self.head))
        return out

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        self._check_input(x)
        skips = []
        h = x
        for i, blk in enumerate(self.enc_blocks):
            h = blk.forward(h, training)
            if self.se_blocks[i] is not None:
                h = self.se_blocks[i].forward(h, training)
            skips.append(h)
            if self._dense:
                h = self.enc_trans[i].forward(h, training)
            else:
                h = self.pools[i].forward(h, training)
        h = self.bottleneck.forward(h, training)
        for j, (up, dec, cat) in enumerate(
            zip(self.upconvs, self.dec_blocks, self.concats)
        ):
            skip = skips[len(skips) - 1 - j]
            u = up.forward(h, training)
            h = dec.forward(cat.forward(u, skip), training)
        return self.out_act.forward(self.head.forward(h, training))

    def backward(self, grad_out: Tensor) -> Tensor:
        g = self.head.backward(self.out_act.backward(grad_out))
        skip_grads = [None] * len(self.enc_blocks)
        for j in range(len(self.upconvs) - 1, -1, -1):
            g = self.dec_blocks[j].backward(g)
            gu, gskip = self.concats[j].backward(g)
            skip_grads[len(self.enc_blocks) - 1 - j] = gskip
            g = self.upconvs[j].backward(gu)
        g = self.bottleneck.backward(g)
        for i in range(len(self.enc_blocks) - 1, -1, -1):
            if self._dense:
                g = self.enc_trans[i].backward(g)
            else:
                g = self.pools[i].backward(g)
            g = Tensor(g.data + skip_grads[i].data)
            if self.se_blocks[i] is not None:
                g = self.se_blocks[i].backward(g)
            g = self.enc_blocks[i].backward(g)
        return g


class DeepLabLite(Model):
    """Strided-conv encoder, ASPP context, transposed-conv upsampling."""

    def __init__(self, spec: ModelSpec, rng: Rng | None, dtype=DEFAULT_DTYPE):
        super().__init__(spec)
        b, d = spec.base_width, spec.depth
        self.enc = []
        self.se_blocks = []
        ch = spec.in_channels
        for i in range(d):
            width = b << i
            self.enc.append(
                Sequential(
                    Conv2d(ch, width, 3, stride=2, padding=1, rng=rng, dtype=dtype),
                    ReLU(),
                    Conv2d(width, width, 3, padding=1, rng=rng, dtype=dtype),
                    ReLU(),
                    names=["down", "relu1", "conv", "relu2"],
                )
            )
            self.se_blocks.append(
                SEBlock(width, rng=rng, dtype=dtype) if spec.use_se else None
            )
            ch = width
        self.aspp = ASPP(ch, spec.aspp_rates, branch_channels=ch,
                         out_channels=ch, rng=rng, dtype=dtype)
        self.ups = []
        for i in range(d - 1, -1, -1):
            width = b << max(i - 1, 0) if i > 0 else b
            self.ups.append(
                Sequential(
                    TransposedConv2d(ch, width, 2, stride=2, rng=rng, dtype=dtype),
                    ReLU(),
                    names=["up", "relu"],
                )
            )
            ch = width
        self.head = Conv2d(ch, 1, 1, rng=rng, dtype=dtype)
        self.out_act = Sigmoid()

    def _children(self):
        out = [(f"enc{i}", e) for i, e in enumerate(self.enc)]
        for i, se in enumerate(self.se_blocks):
            if se is not None:
                out.append((f"se{i}", se))
        out.append(("aspp", self.aspp))
        out.extend((f"up{j}", u) for j, u in enumerate(self.ups))
        out.append(("head", self.head))
        return out

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        self._check_input(x)
        h = x
        for i, e in enumerate(self.enc):
            h = e.forward(h, training)
            if self.se_blocks[i] is not None:
                h = self.se_blocks[i].forward(h, training)
        h = self.aspp.forward(h, training)
        for u in self.ups:
            h = u.forward(h, training)
        return self.out_act.forward(self.head.forward(h, training))

    def backward(self, grad_out: Tensor) -> Tensor:
        g = self.head.backward(self.out_act.backward(grad_out))
        for u in reversed(self.ups):
            g = u.backward(g)
        g = self.aspp.backward(g)
        for i in range(len(self.enc) - 1, -1, -1):
            if self.se_blocks[i] is not None:
                g = self.se_blocks[i].backward(g)
            g = self.enc[i].backward(g)
        return g


def build_model(spec: ModelSpec, rng: Rng | None = None, dtype=DEFAULT_DTYPE) -> Model:
    """Construct a model; identical seeds give bitwise-identical parameters.

    rng=None zero-initializes every weight (used when a checkpoint will
    overwrite them immediately). dtype=float64 builds a verification model
    for finite-difference checks.
    """
    if spec.arch == "deeplab-lite":
        return DeepLabLite(spec, rng, dtype=dtype)
    return UNet(spec, rng, dtype=dtype)


def predict_mask(probs: Tensor, threshold: float) -> Tensor:
    """Hard mask: 1 where prob >= threshold else 0."""
    return Tensor((probs.data >= threshold).astype(probs.dtype))


def count_parameters(model: Model) -> int:
    return sum(int(np.prod(p.shape)) for p in model.parameters())
