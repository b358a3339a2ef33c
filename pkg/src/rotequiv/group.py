"""The cyclic rotation group and its two actions.

On kernels the group acts by spatial rotation: quarter turns are exact
pixel permutations, and any other angle is decomposed as
(quarter turns) x (residual in [0, 90)), the residual being a fixed bilinear
resampling matrix. Because the quarter-turn factor is applied last and
exactly, rot90(rotate_kernel(k, a)) == rotate_kernel(k, a + 90) holds
bitwise for every angle, which is what all grid-rotation guarantees reduce
to.

On regular-representation features (channel convention c = f*N + o, i.e.
orientation varies fastest) the group acts by spatial rotation plus a roll
of the orientation sub-axis: a clockwise input rotation by the generator
increments the orientation index by one. The sign is pinned by the lift
equivariance test, not by prose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor
from .autodiff import Node, _accum, _make


@dataclass(frozen=True)
class CyclicGroup:
    """C_n: rotations by multiples of 360/n degrees; elements are ints mod n."""

    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"group order must be >= 1, got {self.n}")

    def angle_deg(self, o: int) -> float:
        return (o % self.n) * 360.0 / self.n

    def quarter_turns(self, g: int) -> int:
        """Number of 90-degree turns for element g; error if not a grid rotation."""
        g = g % self.n
        if (4 * g) % self.n != 0:
            raise ValueError(
                f"group element {g} of C_{self.n} is a {self.angle_deg(g)} degree "
                f"rotation, not a multiple of 90 degrees"
            )
        return (4 * g) // self.n


# ---------------------------------------------------------------------------
# Kernel rotation

_residual_cache: dict = {}


def _residual_matrix(k: int, angle_deg: float) -> np.ndarray:
    """(k*k, k*k) bilinear resampling matrix for a clockwise rotation by
    angle_deg in (0, 90), about the kernel center, zero outside support."""
    key = (k, round(angle_deg * 1e6))
    hit = _residual_cache.get(key)
    if hit is not None:
        return hit
    c = (k - 1) / 2.0
    a = math.radians(angle_deg)
    ca, sa = math.cos(a), math.sin(a)
    m = np.zeros((k * k, k * k), dtype=np.float64)
    for io in range(k):
        for jo in range(k):
            # output pixel center in (x right, y up) coords
            xo = jo - c
            yo = c - io
            # source point: rotate the output point back (counter-clockwise)
            xs = xo * ca - yo * sa
            ys = xo * sa + yo * ca
            js = xs + c
            is_ = c - ys
            i0 = math.floor(is_)
            j0 = math.floor(js)
            fi = is_ - i0
            fj = js - j0
            for di, wi in ((0, 1.0 - fi), (1, fi)):
                for dj, wj in ((0, 1.0 - fj), (1, fj)):
                    ii, jj = i0 + di, j0 + dj
                    if 0 <= ii < k and 0 <= jj < k and wi * wj != 0.0:
                        m[io * k + jo, ii * k + jj] += wi * wj
    _residual_cache[key] = m
    return m


def _split_angle(angle_deg: float):
    a = angle_deg % 360.0
    q, rem = divmod(a, 90.0)
    q = int(q)
    if rem > 90.0 - 1e-9:
        q = (q + 1) % 4
        rem = 0.0
    elif rem < 1e-9:
        rem = 0.0
    return q % 4, rem


def rotate_planes(arr: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate the two trailing axes of ``arr`` clockwise by angle_deg."""
    k = arr.shape[-1]
    if arr.shape[-2] != k:
        raise ValueError(f"kernel planes must be square, got {arr.shape[-2:]}")
    q, rem = _split_angle(angle_deg)
    out = arr
    if rem:
        m = _residual_matrix(k, rem).astype(arr.dtype)
        out = (out.reshape(-1, k * k) @ m.T).reshape(arr.shape)
    return tensor.rot90(out, q)


def rotate_planes_adjoint(g: np.ndarray, angle_deg: float) -> np.ndarray:
    """Adjoint of rotate_planes for gradient propagation."""
    k = g.shape[-1]
    q, rem = _split_angle(angle_deg)
    out = tensor.rot90(g, -q)
    if rem:
        m = _residual_matrix(k, rem).astype(g.dtype)
        out = (out.reshape(-1, k * k) @ m).reshape(g.shape)
    return out


def rotate_kernel(kern: np.ndarray, angle_deg: float) -> np.ndarray:
    """Spatially rotate one (or a stack of) square kernel(s) clockwise."""
    return rotate_planes(kern, angle_deg)


# ---------------------------------------------------------------------------
# Kernel expansion: one learnable base kernel -> N rotated copies


def expand_lift(base: np.ndarray, group: CyclicGroup) -> np.ndarray:
    """(F, C_in, k, k) -> (F*N, C_in, k, k); row f*N+o is base[f] rotated by
    o*360/N. Input channels are plain (no orientation structure)."""
    n = group.n
    f, cin, k, _ = base.shape
    out = np.empty((f * n, cin, k, k), dtype=base.dtype)
    for o in range(n):
        out[o::n] = rotate_planes(base, group.angle_deg(o))
    return out


def expand_group(base: np.ndarray, group: CyclicGroup) -> np.ndarray:
    """(F, F_in*N, k, k) -> (F*N, F_in*N, k, k).

    Orientation-o copy = spatial rotation by o*360/N composed with a roll of
    the input orientation sub-axis by +o.
    """
    n = group.n
    f, cin, k, _ = base.shape
    if cin % n:
        raise ValueError(f"input channels {cin} not divisible by group order {n}")
    fin = cin // n
    view = base.reshape(f, fin, n, k, k)
    out = np.empty((f * n, cin, k, k), dtype=base.dtype)
    for o in range(n):
        rolled = np.roll(view, o, axis=2).reshape(f, cin, k, k)
        out[o::n] = rotate_planes(rolled, group.angle_deg(o))
    return out


def expand_lift_node(base: Node, group: CyclicGroup) -> Node:
    value = expand_lift(base.value, group)
    n = group.n

    def bwd(g):
        db = np.zeros_like(base.value)
        for o in range(n):
            db += rotate_planes_adjoint(g[o::n], group.angle_deg(o))
        _accum(base, db)

    return _make(value, (base,), bwd)


def rotate_planes_node(base: Node, angle_deg: float) -> Node:
    """Differentiable rotate_planes; gradient maps back through the adjoint."""
    value = rotate_planes(base.value, angle_deg)

    def bwd(g):
        _accum(base, rotate_planes_adjoint(g, angle_deg))

    return _make(value, (base,), bwd)


def expand_group_node(base: Node, group: CyclicGroup) -> Node:
    value = expand_group(base.value, group)
    n = group.n
    f, cin, k, _ = base.value.shape
    fin = cin // n

    def bwd(g):
        db = np.zeros_like(base.value)
        for o in range(n):
            t = rotate_planes_adjoint(g[o::n], group.angle_deg(o))
            db += np.roll(t.reshape(f, fin, n, k, k), -o, axis=2).reshape(base.value.shape)
        _accum(base, db)

    return _make(value, (base,), bwd)


# ---------------------------------------------------------------------------
# Group action on features


def regular_act(x: np.ndarray, g: int, group: CyclicGroup) -> np.ndarray:
    """Apply group element g to a regular-representation feature map.

    x: (..., C, H, W) with C divisible by N. Spatial clockwise rotation by
    g*4/N quarter turns plus an orientation roll by +g. Exact permutation.
    """
    n = group.n
    q = group.quarter_turns(g)
    c = x.shape[-3]
    if c % n:
        raise ValueError(f"channel count {c} not divisible by group order {n}")
    view = x.reshape(*x.shape[:-3], c // n, n, *x.shape[-2:])
    rolled = np.roll(view, g % n, axis=-3).reshape(x.shape)
    return tensor.rot90(rolled, q)
