"""Small convolutional building blocks shared by the flow and synthesis nets."""

import torch
import torch.nn as nn
import torch.nn.functional as F


def group_count(channels):
    return 8 if channels % 8 == 0 else 1


class ConvBlock(nn.Module):
    """conv -> group norm -> ReLU."""

    def __init__(self, cin, cout, kernel=3):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, kernel, padding=kernel // 2)
        self.norm = nn.GroupNorm(group_count(cout), cout)

    def forward(self, x):
        return F.relu(self.norm(self.conv(x)))


class DownBlock(nn.Module):
    """conv3x3 -> group norm -> ReLU -> 2x average pool; keeps the pre-pool
    activation as the skip connection."""

    def __init__(self, cin, cout):
        super().__init__()
        self.block = ConvBlock(cin, cout)
        self.pool = nn.AvgPool2d(2)

    def forward(self, x):
        skip = self.block(x)
        return self.pool(skip), skip


class UpBlock(nn.Module):
    """2x nearest upsample -> concat skip -> conv3x3 -> group norm -> ReLU."""

    def __init__(self, cin, cout):
        super().__init__()
        self.block = ConvBlock(cin, cout)

    def forward(self, x, skip):
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        return self.block(torch.cat([x, skip], dim=1))
