"""Network definitions: ResUnet generator, residual discriminator,
inception-residual bar counter and an SE-residual compliance regressor.

The generator follows the fixed layer table: a five-stage encoder
(including the bridge) and a five-stage transposed-convolution decoder
with skip connections at matching resolutions, ending in a 3x3 projection
and a sigmoid.  The odd 101-pixel input forces asymmetric stride-2
geometry; the paddings below reproduce the documented spatial trajectory
101 -> 50 -> 25 -> 13 -> 7 -> 4 -> 7 -> 13 -> 25 -> 50 -> 101 exactly:

    down: k3/p0 (101->50), k4/p1 (50->25), k3/p1 (25->13, 13->7, 7->4)
    up:   k3/p1 (4->7, 7->13, 13->25), k4/p1 (25->50), k4/p1/op1 (50->101)
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .blocks import (
    InceptionResnetA,
    InceptionResnetB,
    InceptionResnetC,
    ReductionA,
    ReductionB,
    ResidualUnit,
    SEResidualBlock,
    conv_bn_relu,
)

CONDITION_CHANNELS = 6  # bc_x, bc_y, f_x, f_y, vf, cx
DISCRIMINATOR_CHANNELS = 7  # design + conditions
COUNTER_CHANNELS = 6  # design + conditions without the bar-count plane


@dataclass(frozen=True)
class GeneratorSpec:
    in_channels: int = CONDITION_CHANNELS
    nf: int = 16


@dataclass(frozen=True)
class CounterSpec:
    in_channels: int = COUNTER_CHANNELS
    nf: int = 32
    dropout: float = 0.2


class ShapeError(RuntimeError):
    """A built network violated its declared spatial trajectory."""


class _EncoderBlock(nn.Module):
    def __init__(self, in_ch, out_ch, kernel, padding):
        super().__init__()
        self.down = nn.Conv2d(in_ch, out_ch, kernel_size=kernel, stride=2, padding=padding)
        self.res = ResidualUnit(out_ch, out_ch)

    def forward(self, x):
        return self.res(self.down(x))


class _DecoderBlock(nn.Module):
    def __init__(self, in_ch, skip_ch, out_ch, kernel, padding, output_padding=0):
        super().__init__()
        self.up = nn.ConvTranspose2d(
            in_ch, out_ch, kernel_size=kernel, stride=2,
            padding=padding, output_padding=output_padding,
        )
        self.res = ResidualUnit(out_ch + skip_ch, out_ch)

    def forward(self, x, skip=None):
        x = self.up(x)
        if skip is not None:
            x = torch.cat([x, skip], dim=1)
        return self.res(x)


class ResUnetGenerator(nn.Module):
    """Encoder, bridge and decoder with U-style skips; outputs in [0, 1]."""

    # (kernel, padding) per downsample stage and (kernel, padding, output_padding) per upsample
    DOWN_GEOMETRY = [(3, 0), (4, 1), (3, 1), (3, 1), (3, 1)]
    UP_GEOMETRY = [(3, 1, 0), (3, 1, 0), (3, 1, 0), (4, 1, 0), (4, 1, 1)]
    TRAJECTORY = (101, 50, 25, 13, 7, 4, 7, 13, 25, 50, 101)

    def __init__(self, spec: GeneratorSpec = GeneratorSpec()):
        super().__init__()
        self.spec = spec
        nf = spec.nf
        widths = [nf, 2 * nf, 4 * nf, 8 * nf, 16 * nf]
        self.encoder = nn.ModuleList()
        in_ch = spec.in_channels
        for (kernel, padding), out_ch in zip(self.DOWN_GEOMETRY, widths):
            self.encoder.append(_EncoderBlock(in_ch, out_ch, kernel, padding))
            in_ch = out_ch
        up_widths = [8 * nf, 4 * nf, 2 * nf, nf, max(nf // 2, 1)]
        skip_widths = [8 * nf, 4 * nf, 2 * nf, nf, 0]
        self.decoder = nn.ModuleList()
        in_ch = widths[-1]
        for (kernel, padding, out_pad), out_ch, skip_ch in zip(
            self.UP_GEOMETRY, up_widths, skip_widths
        ):
            self.decoder.append(
                _DecoderBlock(in_ch, skip_ch, out_ch, kernel, padding, out_pad)
            )
            in_ch = out_ch
        self.head = nn.Conv2d(up_widths[-1], 1, kernel_size=3, padding=1)

    def forward(self, x):
        skips = []
        for block in self.encoder:
            x = block(x)
            skips.append(x)
        bridge_out = skips.pop()  # 4x4 activations feed the decoder directly
        x = bridge_out
        for k, block in enumerate(self.decoder):
            skip = skips[-(k + 1)] if k < len(skips) else None
            x = block(x, skip)
        return torch.sigmoid(self.head(x))

    def spatial_trajectory(
        self, size: int = 101, expected: tuple[int, ...] | None = None
    ) -> tuple[int, ...]:
        """Per-stage spatial sizes by dry run; checks each stage when
        expectations are given, so a bad stage is named before a skip
        concatenation can fail with a raw size error."""
        sizes = [size]

        def check():
            stage = len(sizes) - 1
            if expected is not None and sizes[-1] != expected[stage]:
                raise ShapeError(
                    f"stage {stage}: spatial size {sizes[-1]} != {expected[stage]}"
                )

        with torch.no_grad():
            x = torch.zeros(1, self.spec.in_channels, size, size)
            check()
            skips = []
            for block in self.encoder:
                x = block(x)
                sizes.append(x.shape[-1])
                check()
                skips.append(x)
            skips.pop()
            for k, block in enumerate(self.decoder):
                x = block.up(x)
                sizes.append(x.shape[-1])
                check()
                skip = skips[-(k + 1)] if k < len(skips) else None
                if skip is not None:
                    x = torch.cat([x, skip], dim=1)
                x = block.res(x)
        return tuple(sizes)

    def validate_trajectory(self) -> None:
        self.spatial_trajectory(101, expected=self.TRAJECTORY)


def build_generator(spec: GeneratorSpec = GeneratorSpec()) -> ResUnetGenerator:
    model = ResUnetGenerator(spec)
    model.validate_trajectory()
    return model


class ResidualDiscriminator(nn.Module):
    """The generator's encoder stack with a pooled sigmoid head."""

    def __init__(self, nf: int = 16, in_channels: int = DISCRIMINATOR_CHANNELS):
        super().__init__()
        widths = [nf, 2 * nf, 4 * nf, 8 * nf, 16 * nf]
        layers = []
        in_ch = in_channels
        for (kernel, padding), out_ch in zip(ResUnetGenerator.DOWN_GEOMETRY, widths):
            layers.append(_EncoderBlock(in_ch, out_ch, kernel, padding))
            in_ch = out_ch
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(widths[-1], 1)

    def forward(self, x):
        feats = self.features(x).mean(dim=(2, 3))
        return torch.sigmoid(self.head(feats)).squeeze(1)


def build_discriminator(nf: int = 16) -> ResidualDiscriminator:
    return ResidualDiscriminator(nf=nf)


class InceptionCounter(nn.Module):
    """Stem, inception-residual A/B/C cells with reductions, scalar head.

    The head is softplus-activated so count estimates stay non-negative.
    """

    def __init__(self, spec: CounterSpec = CounterSpec()):
        super().__init__()
        nf = spec.nf
        self.stem = nn.Sequential(
            conv_bn_relu(spec.in_channels, nf, 3, stride=2, padding=1),
            conv_bn_relu(nf, nf, 3, padding=1),
        )
        self.stage_a = InceptionResnetA(nf)
        self.reduce_a = ReductionA(nf, 2 * nf)
        self.stage_b = InceptionResnetB(2 * nf)
        self.reduce_b = ReductionB(2 * nf, 4 * nf)
        self.stage_c = InceptionResnetC(4 * nf)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.dropout = nn.Dropout(spec.dropout)
        self.fc = nn.Linear(4 * nf, 1)

    def forward(self, x):
        x = self.stem(x)
        x = self.stage_a(x)
        x = self.reduce_a(x)
        x = self.stage_b(x)
        x = self.reduce_b(x)
        x = self.stage_c(x)
        x = self.pool(x).flatten(1)
        x = self.dropout(x)
        return nn.functional.softplus(self.fc(x)).squeeze(1)


def build_counter(spec: CounterSpec = CounterSpec()) -> InceptionCounter:
    return InceptionCounter(spec)


class CompliancePredictor(nn.Module):
    """SE-residual regressor from a single-channel design to log-compliance."""

    def __init__(self, nf: int = 16):
        super().__init__()
        self.net = nn.Sequential(
            conv_bn_relu(1, nf, 3, stride=2, padding=1),
            SEResidualBlock(nf, nf),
            SEResidualBlock(nf, 2 * nf, stride=2),
            SEResidualBlock(2 * nf, 4 * nf, stride=2),
            nn.AdaptiveAvgPool2d(1),
        )
        self.fc = nn.Linear(4 * nf, 1)

    def forward(self, x):
        return self.fc(self.net(x).flatten(1)).squeeze(1)


def build_compliance_predictor(nf: int = 16) -> CompliancePredictor:
    return CompliancePredictor(nf)
