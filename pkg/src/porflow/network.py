"""Parallel U-Net mapping rasterized well controls to (pressure, saturation).

Two identical encoder-decoder branches predict the pressure and saturation
fields separately; each ends in a 1x1 convolution, a sigmoid, and an affine
scaling layer that pins the outputs inside their physical ranges regardless
of the weights (saturation in [s_wc, 1 - s_or], pressure in [p_min, p_max]).

The trainable parameter count depends only on the architecture spec, never on
the input height/width; inputs whose sides are not divisible by 2^depth are
zero-padded on the way in and cropped on the way out.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .core import GridSpec, State, WellSpec
from .errors import OutOfRangeControl, ShapeMismatch, ValidationError


@dataclass(frozen=True)
class NetworkSpec:
    input_channels: int = 2
    depth: int = 3
    base_channels: int = 32
    convs_per_level: int = 2

    def __post_init__(self):
        if self.depth < 1 or self.base_channels < 1 or self.convs_per_level < 1:
            raise ValidationError("network spec fields must be positive")

    def spec_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


@dataclass(frozen=True)
class ScalingParams:
    s_wc: float
    s_or: float
    p_min: float
    p_max: float

    def __post_init__(self):
        if self.p_min >= self.p_max:
            raise ValidationError("p_min must be < p_max")
        if not (0 <= self.s_wc < 1 and 0 <= self.s_or < 1):
            raise ValidationError("saturation endpoints must lie in [0, 1)")


@dataclass(frozen=True)
class NormalizationBounds:
    """Control-image normalization: BHP mapped affinely, rate divided by its cap."""

    bhp_lo: float = 2300.0
    bhp_hi: float = 2500.0
    rate_hi: float = 1500.0

    def __post_init__(self):
        if self.bhp_lo >= self.bhp_hi or self.rate_hi <= 0:
            raise ValidationError("normalization bounds must be ordered and positive")


def rasterize_controls(
    wells: list[WellSpec],
    controls_k: dict[str, float],
    grid: GridSpec,
    bounds: NormalizationBounds,
) -> np.ndarray:
    """Two-channel control image (2, ny, nx): ch0 producer BHPs, ch1 injector rates.

    Pixels away from well cells are zero; well pixels carry the normalized
    control value in [0, 1].
    """
    image = np.zeros((2, grid.ny, grid.nx))
    for w in wells:
        u = controls_k[w.name]
        if w.is_injector:
            if not (0.0 <= u <= bounds.rate_hi):
                raise OutOfRangeControl(
                    f"injector {w.name}: rate {u} outside [0, {bounds.rate_hi}]"
                )
            image[1, w.j, w.i] = u / bounds.rate_hi
        else:
            if not (bounds.bhp_lo <= u <= bounds.bhp_hi):
                raise OutOfRangeControl(
                    f"producer {w.name}: BHP {u} outside "
                    f"[{bounds.bhp_lo}, {bounds.bhp_hi}]"
                )
            image[0, w.j, w.i] = (u - bounds.bhp_lo) / (bounds.bhp_hi - bounds.bhp_lo)
    return image


class ChannelNorm(nn.Module):
    """Per-channel normalization over batch and spatial dims.

    Identical to batch normalization with batch statistics at batch size 1
    (the only regime this model ever sees), but well defined even at a 1x1
    bottleneck, and with no train/eval mode split: training and inference
    behave identically.
    """

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        mean = x.mean(dim=(0, 2, 3), keepdim=True)
        var = x.var(dim=(0, 2, 3), unbiased=False, keepdim=True)
        y = (x - mean) / torch.sqrt(var + self.eps)
        return y * self.weight[None, :, None, None] + self.bias[None, :, None, None]


def _conv_block(c_in, c_out):
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, kernel_size=3, padding=1),
        ChannelNorm(c_out),
        nn.GELU(),
    )


def _level(c_in, c_out, n_convs):
    layers = [_conv_block(c_in, c_out)]
    layers += [_conv_block(c_out, c_out) for _ in range(n_convs - 1)]
    return nn.Sequential(*layers)


class UNetBranch(nn.Module):
    """One encoder-decoder path ending in a 1x1 convolution and a sigmoid."""

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        self.spec = spec
        c = spec.base_channels
        self.enc = nn.ModuleList([_level(spec.input_channels, c, spec.convs_per_level)])
        chans = [c]
        for _ in range(spec.depth):
            self.enc.append(_level(c, 2 * c, spec.convs_per_level))
            c *= 2
            chans.append(c)
        self.pool = nn.MaxPool2d(kernel_size=2, stride=2)
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        for _ in range(spec.depth):
            self.up.append(nn.ConvTranspose2d(c, c // 2, kernel_size=2, stride=2))
            self.dec.append(_level(c, c // 2, spec.convs_per_level))
            c //= 2
        self.head = nn.Conv2d(c, 1, kernel_size=1)

    def forward(self, x):
        skips = []
        h = self.enc[0](x)
        for level in self.enc[1:]:
            skips.append(h)
            h = level(self.pool(h))
        for up, dec in zip(self.up, self.dec):
            h = up(h)
            h = dec(torch.cat([skips.pop(), h], dim=1))
        return torch.sigmoid(self.head(h))


class PicnnModel(nn.Module):
    """Parallel pressure/saturation U-Nets with output scaling layers."""

    def __init__(self, spec: NetworkSpec, scaling: ScalingParams):
        super().__init__()
        self.spec = spec
        self.scaling = scaling
        self.pressure_branch = UNetBranch(spec)
        self.saturation_branch = UNetBranch(spec)

    def forward(self, image: torch.Tensor):
        """(pressure, sw) fields of shape (ny, nx) for a (2, ny, nx) input."""
        if image.dim() == 3:
            image = image.unsqueeze(0)
        if image.dim() != 4 or image.shape[1] != self.spec.input_channels:
            raise ShapeMismatch(
                f"expected ({self.spec.input_channels}, H, W) input, got "
                f"{tuple(image.shape)}"
            )
        _, _, h, w = image.shape
        m = 2**self.spec.depth
        pad_h = (-h) % m
        pad_w = (-w) % m
        if pad_h or pad_w:
            image = nn.functional.pad(image, (0, pad_w, 0, pad_h))
        sc = self.scaling
        x_p = self.pressure_branch(image)[0, 0, :h, :w]
        x_s = self.saturation_branch(image)[0, 0, :h, :w]
        p = sc.p_min + (sc.p_max - sc.p_min) * x_p
        sw = sc.s_wc + (1.0 - sc.s_or - sc.s_wc) * x_s
        return p, sw

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def kaiming_initialize(model: nn.Module):
    """Variance-scaled initialization of all convolutional weights."""
    for m in model.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def build_model(
    spec: NetworkSpec,
    scaling: ScalingParams,
    dtype: torch.dtype = torch.float64,
    seed: int | None = None,
) -> PicnnModel:
    if seed is not None:
        torch.manual_seed(seed)
    model = PicnnModel(spec, scaling).to(dtype)
    kaiming_initialize(model)
    return model


def forward(image, model: PicnnModel) -> State:
    """Run the network on a control image and wrap the result as a State.

    Gradients flow through the returned fields when the model's parameters
    require grad.
    """
    t = image if isinstance(image, torch.Tensor) else torch.from_numpy(np.asarray(image))
    p, sw = model(t.to(next(model.parameters()).dtype))
    return State(pressure=p, sw=sw)
