"""Tiny residual CNNs used as fixture models (torch)."""

from __future__ import annotations

import torch
from torch import nn


class ResidualUnit(nn.Module):
    """conv-bn-relu-conv-bn with identity or projection shortcut, then relu."""

    def __init__(self, c_in: int, c_out: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1, bias=True)
        self.bn1 = nn.BatchNorm2d(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, stride=1, padding=1, bias=True)
        self.bn2 = nn.BatchNorm2d(c_out)
        self.relu = nn.ReLU()
        if stride != 1 or c_in != c_out:
            self.proj = nn.Conv2d(c_in, c_out, 1, stride=stride, bias=True)
            self.proj_bn = nn.BatchNorm2d(c_out)
        else:
            self.proj = None
            self.proj_bn = None

    def forward(self, x):
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        shortcut = x if self.proj is None else self.proj_bn(self.proj(x))
        return self.relu(out + shortcut)


class TinyResNet(nn.Module):
    """Four stages of residual units, global average pooling, linear head.

    ``units_per_block`` > 1 in the deeper stages gives the engine taps that
    are not the last feature map, so deep-block zero-deflation rows stay
    informative.
    """

    def __init__(self, num_classes: int = 4, channels=(8, 12, 16, 20),
                 units_per_block=(1, 1, 2, 2), in_channels: int = 3):
        super().__init__()
        self.stem_conv = nn.Conv2d(in_channels, channels[0], 3, padding=1, bias=True)
        self.stem_bn = nn.BatchNorm2d(channels[0])
        self.relu = nn.ReLU()
        blocks = []
        c_prev = channels[0]
        for b, (c, n_units) in enumerate(zip(channels, units_per_block)):
            units = []
            for u in range(n_units):
                stride = 2 if (u == 0 and b > 0) else 1
                units.append(ResidualUnit(c_prev, c, stride))
                c_prev = c
            blocks.append(nn.ModuleList(units))
        self.blocks = nn.ModuleList(blocks)
        self.gap = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(c_prev, num_classes)

    def forward(self, x):
        x = self.relu(self.stem_bn(self.stem_conv(x)))
        for block in self.blocks:
            for unit in block:
                x = unit(x)
        x = self.gap(x).flatten(1)
        return self.fc(x)


def make_plain_cnn(in_channels: int = 1, num_classes: int = 2) -> nn.Sequential:
    """Minimal sequential model for exporter round-trip tests."""
    return nn.Sequential(
        nn.Conv2d(in_channels, 4, 3, padding=1, bias=True),
        nn.ReLU(),
        nn.Conv2d(4, 4, 3, padding=1, bias=True),
        nn.ReLU(),
        nn.AdaptiveAvgPool2d(1),
        nn.Flatten(),
        nn.Linear(4, num_classes),
    )
