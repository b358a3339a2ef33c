"""Equivariant building blocks.

Every layer here maps regular-representation features (channel c = f*N + o)
to regular-representation features, and every learnable parameter is either
per-field or a base kernel whose N rotated copies are re-derived on each
forward pass. Those two rules are what make the whole stack commute with
grid rotations; the tests enforce them empirically rather than trusting the
comments.

Reductions that must be invariant under the group action (the attention
squeeze, orientation mean pooling) sum their operands in ascending sorted
order, so a permutation of the operands cannot change even the last bit of
the result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import tensor
from .autodiff import Node
from .group import CyclicGroup, expand_group_node, expand_lift_node


@dataclass(frozen=True)
class ConvSpec:
    """Kernel geometry record: kernel k, padding p, stride s, dilation d."""

    k: int
    p: int = 0
    s: int = 1
    d: int = 1

    def __post_init__(self):
        if self.k < 1 or self.s < 1:
            raise ValueError(f"kernel and stride must be >= 1, got k={self.k} s={self.s}")
        if self.p < 0:
            raise ValueError(f"padding must be >= 0, got {self.p}")
        if self.d != 1:
            raise ValueError("dilation other than 1 is unsupported")

    def out_size(self, s_in: int) -> int:
        """Output extent: floor((s_in + 2p - d(k-1) - 1)/s) + 1."""
        if s_in < 1:
            raise ValueError(f"input extent must be >= 1, got {s_in}")
        out = (s_in + 2 * self.p - self.d * (self.k - 1) - 1) // self.s + 1
        if out < 1:
            raise ValueError(
                f"conv k={self.k} p={self.p} s={self.s} on extent {s_in} "
                f"gives non-positive output {out}"
            )
        return out

    def padded_extent(self, s_in: int) -> int:
        return s_in + 2 * self.p

    def residue(self, s_in: int) -> int:
        """(padded extent - k) mod s; zero means the stride lattice reaches the
        far edge exactly and downsampling commutes with quarter turns."""
        return (self.padded_extent(s_in) - self.k) % self.s


def _he_std(fan_in: int) -> float:
    return math.sqrt(2.0 / fan_in)


def _bias_nchw(b: Node, n: int, channels: int) -> Node:
    """Per-field bias -> (1, C, 1, 1), each field value repeated N times."""
    return ad.reshape(ad.repeat_fields(b, n), (1, channels, 1, 1))


class LiftConv:
    """Convolution from plain channels into the regular representation.

    One learnable base kernel per output field; the forward pass expands it
    into N rotated copies, so channel f*N+o responds to orientation o of
    field f. Bias is per field, shared across the N copies.
    """

    def __init__(self, in_channels: int, fields: int, group: CyclicGroup,
                 spec: ConvSpec, rng: np.random.Generator):
        self.group = group
        self.fields = fields
        self.spec = spec
        self.w = Node(tensor.randn(rng, (fields, in_channels, spec.k, spec.k),
                                   std=_he_std(in_channels * spec.k * spec.k)))
        self.b = Node(tensor.zeros((fields,)))

    @property
    def out_channels(self) -> int:
        return self.fields * self.group.n

    def params(self) -> dict:
        return {"w": self.w, "b": self.b}

    def param_count(self) -> int:
        return self.w.value.size + self.b.value.size

    def forward(self, x: Node) -> Node:
        w = expand_lift_node(self.w, self.group)
        y = ad.conv2d(x, w, stride=self.spec.s, padding=self.spec.p)
        return ad.add(y, _bias_nchw(self.b, self.group.n, self.out_channels))


class GroupConv:
    """Convolution between regular-representation features.

    The base kernel sees F_in*N input channels; copy o is the base kernel
    spatially rotated by o*360/N with its input orientation sub-axis rolled
    by o, which is the channel-space half of the group action.
    """

    def __init__(self, in_fields: int, out_fields: int, group: CyclicGroup,
                 spec: ConvSpec, rng: np.random.Generator):
        self.group = group
        self.in_fields = in_fields
        self.fields = out_fields
        self.spec = spec
        cin = in_fields * group.n
        self.w = Node(tensor.randn(rng, (out_fields, cin, spec.k, spec.k),
                                   std=_he_std(cin * spec.k * spec.k)))
        self.b = Node(tensor.zeros((out_fields,)))

    @property
    def out_channels(self) -> int:
        return self.fields * self.group.n

    def params(self) -> dict:
        return {"w": self.w, "b": self.b}

    def param_count(self) -> int:
        return self.w.value.size + self.b.value.size

    def forward(self, x: Node) -> Node:
        w = expand_group_node(self.w, self.group)
        y = ad.conv2d(x, w, stride=self.spec.s, padding=self.spec.p)
        return ad.add(y, _bias_nchw(self.b, self.group.n, self.out_channels))


class BatchNorm:
    """Normalization that shares statistics and affine parameters per field.

    Mean/variance are taken jointly over (batch, orientation, H, W), so the
    N orientation copies of a field are normalized identically; that sharing
    is the entire equivariance argument. per_orientation=True switches to
    per-channel statistics, the deliberately broken variant the breakage
    tests measure.
    """

    EPS = 1e-5
    MOMENTUM = 0.1

    def __init__(self, fields: int, group: CyclicGroup, per_orientation: bool = False):
        self.group = group
        self.fields = fields
        self.per_orientation = per_orientation
        stat_dim = fields * group.n if per_orientation else fields
        self.gamma = Node(np.ones(fields, dtype=tensor.DTYPE))
        self.beta = Node(tensor.zeros((fields,)))
        self.running_mean = np.zeros(stat_dim, dtype=tensor.DTYPE)
        self.running_var = np.ones(stat_dim, dtype=tensor.DTYPE)

    def params(self) -> dict:
        return {"gamma": self.gamma, "beta": self.beta}

    def param_count(self) -> int:
        return self.gamma.value.size + self.beta.value.size

    def state(self) -> dict:
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def load_state(self, state: dict):
        self.running_mean = state["running_mean"].copy()
        self.running_var = state["running_var"].copy()

    def forward(self, x: Node, training: bool) -> Node:
        b, c, h, w = x.shape
        n = self.group.n
        f = self.fields
        if self.per_orientation:
            xe = x
            axes = (0, 2, 3)
            stat_shape = (1, c, 1, 1)
        else:
            xe = ad.reshape(x, (b, f, n, h, w))
            axes = (0, 2, 3, 4)
            stat_shape = (1, f, 1, 1, 1)

        if training:
            mu = ad.mean(xe, axis=axes, keepdims=True)
            diff = ad.sub(xe, mu)
            var = ad.mean(ad.mul(diff, diff), axis=axes, keepdims=True)
            m = self.MOMENTUM
            self.running_mean = ((1 - m) * self.running_mean
                                 + m * mu.value.reshape(-1)).astype(tensor.DTYPE)
            self.running_var = ((1 - m) * self.running_var
                                + m * var.value.reshape(-1)).astype(tensor.DTYPE)
        else:
            mu = Node(self.running_mean.reshape(stat_shape))
            var = Node(self.running_var.reshape(stat_shape))
            diff = ad.sub(xe, mu)

        xhat = ad.div(diff, ad.sqrt(ad.add(var, self.EPS)))
        if self.per_orientation:
            gamma = ad.reshape(ad.repeat_fields(self.gamma, n), (1, c, 1, 1))
            beta = ad.reshape(ad.repeat_fields(self.beta, n), (1, c, 1, 1))
            return ad.add(ad.mul(xhat, gamma), beta)
        gamma = ad.reshape(self.gamma, (1, f, 1, 1, 1))
        beta = ad.reshape(self.beta, (1, f, 1, 1, 1))
        y = ad.add(ad.mul(xhat, gamma), beta)
        return ad.reshape(y, (b, c, h, w))


class ChannelAttention:
    """Channel gating that commutes with the group action.

    Squeeze: spatial average per channel, summed in sorted order so a rot90
    of the input cannot change z at all. The N values of each field are then
    sorted within their block, making the excitation input invariant under
    orientation rolls while still seeing the full per-orientation profile.
    Excite: one fully connected map to C/N gate values through a
    hard-sigmoid, each repeated N consecutive times and multiplied in.

    per_channel=True is the naive variant with C independent gates; it is
    kept because measuring how badly it breaks equivariance is part of the
    test surface.
    """

    def __init__(self, fields: int, group: CyclicGroup, rng: np.random.Generator,
                 per_channel: bool = False):
        self.group = group
        self.fields = fields
        self.per_channel = per_channel
        c = fields * group.n
        gate_dim = c if per_channel else fields
        self.w = Node(tensor.randn(rng, (gate_dim, c), std=1.0 / math.sqrt(c)))
        self.b = Node(tensor.zeros((gate_dim,)))

    def params(self) -> dict:
        return {"w": self.w, "b": self.b}

    def param_count(self) -> int:
        return self.w.value.size + self.b.value.size

    def forward(self, x: Node) -> Node:
        b, c, h, w = x.shape
        n = self.group.n
        z = ad.mul(ad.ordered_sum(x, axis=(-2, -1)), 1.0 / (h * w))  # (B, C)
        if not self.per_channel:
            zb = ad.reshape(z, (b, self.fields, n))
            z = ad.reshape(ad.sort_last(zb), (b, c))
        s = ad.add(ad.matmul(z, ad.transpose(self.w, (1, 0))), self.b)
        gate = ad.hard_sigmoid(s)
        if not self.per_channel:
            gate = ad.repeat_fields(gate, n)
        return ad.mul(x, ad.reshape(gate, (b, c, 1, 1)))


TUNING_SPEC = ConvSpec(k=4, p=1, s=1)
DOWN_SPEC = ConvSpec(k=3, p=1, s=2)


class DownsampleBlock:
    """Stride-2 halving, optionally preceded by the even-to-odd tuning conv.

    The tuning conv (k=4, p=1, s=1) turns an even extent 2n into 2n-1 without
    otherwise changing the downsample output size; the stride-2 conv then
    sees an odd extent, for which its sampling lattice is preserved by
    quarter turns. The caller decides whether the tuning conv exists (strict
    mode on an even incoming extent) at build time.
    """

    def __init__(self, fields: int, group: CyclicGroup, rng: np.random.Generator,
                 with_tuning: bool):
        self.with_tuning = with_tuning
        if with_tuning:
            self.tuning = GroupConv(fields, fields, group, TUNING_SPEC, rng)
            self.tuning_bn = BatchNorm(fields, group)
        else:
            self.tuning = None
            self.tuning_bn = None
        self.down = GroupConv(fields, fields, group, DOWN_SPEC, rng)
        self.down_bn = BatchNorm(fields, group)

    def params(self) -> dict:
        out = {}
        if self.with_tuning:
            for k, v in self.tuning.params().items():
                out[f"tuning.{k}"] = v
            for k, v in self.tuning_bn.params().items():
                out[f"tuning_bn.{k}"] = v
        for k, v in self.down.params().items():
            out[f"down.{k}"] = v
        for k, v in self.down_bn.params().items():
            out[f"down_bn.{k}"] = v
        return out

    def forward(self, x: Node, training: bool) -> Node:
        if self.with_tuning:
            x = ad.silu(self.tuning_bn.forward(self.tuning.forward(x), training))
        return ad.silu(self.down_bn.forward(self.down.forward(x), training))


# ---------------------------------------------------------------------------
# Orientation-axis plumbing


def orientation_pool(x: Node, group: CyclicGroup, kind: str = "mean") -> Node:
    """(B, F*N, H, W) -> (B, F, H, W), reducing over the orientation sub-axis.

    mean sums in sorted order (bitwise invariant under rolls); max is
    order-free by nature.
    """
    b, c, h, w = x.shape
    n = group.n
    if c % n:
        raise ValueError(f"channel count {c} not divisible by group order {n}")
    xe = ad.reshape(x, (b, c // n, n, h, w))
    if kind == "mean":
        return ad.mul(ad.ordered_sum(xe, axis=2), 1.0 / n)
    if kind == "max":
        return ad.reduce_max(xe, axis=2)
    raise ValueError(f"unknown orientation pool kind {kind!r}")


def orientation_groups(x: Node, group: CyclicGroup) -> list:
    """Split channels by their orientation index: group o holds the channels
    with c mod N == o, order preserved. Inverse of merge_orientation_groups."""
    c = x.shape[1]
    n = group.n
    if c % n:
        raise ValueError(f"channel count {c} not divisible by group order {n}")
    return [ad.take_stride(x, 1, o, n) for o in range(n)]


def merge_orientation_groups(groups: list) -> Node:
    """Reassemble orientation groups into c = f*N + o channel order."""
    return ad.stack_orientations(groups)
