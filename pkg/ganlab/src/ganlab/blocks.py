"""Shared building blocks: residual units, inception-residual cells, SE."""

from __future__ import annotations

import torch
from torch import nn


class IdentityMapping(nn.Module):
    """Shortcut branch: 1x1 convolution, stride 1, padding 0, then batch norm."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, kernel_size=1, stride=1, padding=0)
        self.bn = nn.BatchNorm2d(out_ch)

    def forward(self, x):
        return self.bn(self.conv(x))


class ResidualUnit(nn.Module):
    """Two 3x3 conv+BN+ReLU stages plus the identity-mapping branch."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=1, padding=1),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_ch, out_ch, kernel_size=3, stride=1, padding=1),
            nn.BatchNorm2d(out_ch),
        )
        self.shortcut = IdentityMapping(in_ch, out_ch)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        return self.act(self.body(x) + self.shortcut(x))


def conv_bn_relu(in_ch: int, out_ch: int, kernel, stride=1, padding=0) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel_size=kernel, stride=stride, padding=padding),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


class InceptionResnetA(nn.Module):
    """Three 3x3-style branches, concatenated, projected, residual-added."""

    def __init__(self, ch: int):
        super().__init__()
        b = max(ch // 4, 4)
        self.branch0 = conv_bn_relu(ch, b, 1)
        self.branch1 = nn.Sequential(conv_bn_relu(ch, b, 1), conv_bn_relu(b, b, 3, padding=1))
        self.branch2 = nn.Sequential(
            conv_bn_relu(ch, b, 1),
            conv_bn_relu(b, b, 3, padding=1),
            conv_bn_relu(b, b, 3, padding=1),
        )
        self.project = nn.Conv2d(3 * b, ch, kernel_size=1)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        mixed = torch.cat([self.branch0(x), self.branch1(x), self.branch2(x)], dim=1)
        return self.act(x + self.project(mixed))


class InceptionResnetB(nn.Module):
    """1x7 / 7x1 factorized branch beside a 1x1 branch."""

    def __init__(self, ch: int):
        super().__init__()
        b = max(ch // 4, 4)
        self.branch0 = conv_bn_relu(ch, b, 1)
        self.branch1 = nn.Sequential(
            conv_bn_relu(ch, b, 1),
            conv_bn_relu(b, b, (1, 7), padding=(0, 3)),
            conv_bn_relu(b, b, (7, 1), padding=(3, 0)),
        )
        self.project = nn.Conv2d(2 * b, ch, kernel_size=1)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        mixed = torch.cat([self.branch0(x), self.branch1(x)], dim=1)
        return self.act(x + self.project(mixed))


class InceptionResnetC(nn.Module):
    """1x3 / 3x1 factorized branch beside a 1x1 branch."""

    def __init__(self, ch: int):
        super().__init__()
        b = max(ch // 4, 4)
        self.branch0 = conv_bn_relu(ch, b, 1)
        self.branch1 = nn.Sequential(
            conv_bn_relu(ch, b, 1),
            conv_bn_relu(b, b, (1, 3), padding=(0, 1)),
            conv_bn_relu(b, b, (3, 1), padding=(1, 0)),
        )
        self.project = nn.Conv2d(2 * b, ch, kernel_size=1)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        mixed = torch.cat([self.branch0(x), self.branch1(x)], dim=1)
        return self.act(x + self.project(mixed))


class ReductionA(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        half = max(out_ch // 2, 4)
        self.conv = conv_bn_relu(in_ch, half, 3, stride=2, padding=1)
        self.stack = nn.Sequential(
            conv_bn_relu(in_ch, half, 1),
            conv_bn_relu(half, half, 3, padding=1),
            conv_bn_relu(half, half, 3, stride=2, padding=1),
        )
        self.pool = nn.MaxPool2d(3, stride=2, padding=1)
        self.project = nn.Conv2d(2 * half + in_ch, out_ch, kernel_size=1)

    def forward(self, x):
        mixed = torch.cat([self.conv(x), self.stack(x), self.pool(x)], dim=1)
        return self.project(mixed)


class ReductionB(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        half = max(out_ch // 2, 4)
        self.branch0 = nn.Sequential(
            conv_bn_relu(in_ch, half, 1), conv_bn_relu(half, half, 3, stride=2, padding=1)
        )
        self.branch1 = nn.Sequential(
            conv_bn_relu(in_ch, half, 1),
            conv_bn_relu(half, half, 3, padding=1),
            conv_bn_relu(half, half, 3, stride=2, padding=1),
        )
        self.pool = nn.MaxPool2d(3, stride=2, padding=1)
        self.project = nn.Conv2d(2 * half + in_ch, out_ch, kernel_size=1)

    def forward(self, x):
        mixed = torch.cat([self.branch0(x), self.branch1(x), self.pool(x)], dim=1)
        return self.project(mixed)


class SqueezeExcitation(nn.Module):
    """Channel re-weighting: global pool, bottleneck MLP, sigmoid gate."""

    def __init__(self, ch: int, reduction: int = 4):
        super().__init__()
        hidden = max(ch // reduction, 2)
        self.fc = nn.Sequential(
            nn.Linear(ch, hidden),
            nn.ReLU(inplace=True),
            nn.Linear(hidden, ch),
            nn.Sigmoid(),
        )

    def forward(self, x):
        scale = self.fc(x.mean(dim=(2, 3)))
        return x * scale[:, :, None, None]


class SEResidualBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_ch, out_ch, 3, padding=1),
            nn.BatchNorm2d(out_ch),
        )
        self.se = SqueezeExcitation(out_ch)
        self.shortcut = (
            nn.Identity()
            if stride == 1 and in_ch == out_ch
            else nn.Sequential(nn.Conv2d(in_ch, out_ch, 1, stride=stride), nn.BatchNorm2d(out_ch))
        )
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        return self.act(self.se(self.body(x)) + self.shortcut(x))
