"""Dense-array primitives everything else reduces to.

Tensors are plain numpy ndarrays (row-major, NCHW for feature maps,
float32 by default and float64 inside gradient oracles). This module owns
the handful of geometric primitives whose exactness the equivariance
guarantees rest on: quarter-turn rotation and axis roll are bit-exact
permutations, convolution output sizes follow one closed form, and the
reductions that must be invariant under those permutations sum their
operands in sorted order.

Randomness: all of it flows through numpy's PCG64 seeded via SeedSequence,
a fixed, documented generator whose streams are identical on every platform
and independent of thread count.
"""

from __future__ import annotations

import numpy as np

from . import _backend

DTYPE = np.float32


# ---------------------------------------------------------------------------
# RNG


def make_rng(seed: int, *path: int) -> np.random.Generator:
    """Deterministic PCG64 stream for (seed, path).

    Distinct paths (e.g. per-sample or per-epoch indices) give independent
    streams without any draw-order coupling between consumers.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=path)))


def randn(rng: np.random.Generator, shape, std=1.0, dtype=DTYPE):
    out = rng.standard_normal(shape, dtype=np.float64) * std
    return out.astype(dtype)


def zeros(shape, dtype=DTYPE):
    return np.zeros(shape, dtype=dtype)


# ---------------------------------------------------------------------------
# Exact permutations


def rot90(t: np.ndarray, quarter_turns: int, axes=(-2, -1)) -> np.ndarray:
    """Rotate clockwise by ``quarter_turns`` 90-degree steps in the given plane.

    Exact pixel permutation, no interpolation: out[i, j] = in[n-1-j, i] for a
    single clockwise turn. Odd turn counts need the two extents equal.
    """
    q = quarter_turns % 4
    if q % 2 == 1 and t.shape[axes[0]] != t.shape[axes[1]]:
        raise ValueError(
            f"odd quarter turns need square extents, got "
            f"{t.shape[axes[0]]}x{t.shape[axes[1]]}"
        )
    # numpy's rot90 is counter-clockwise for axes (0, 1); negate for clockwise.
    return np.rot90(t, k=-q, axes=axes)


def roll(t: np.ndarray, shift: int, axis: int) -> np.ndarray:
    """Cyclic shift along one axis (exact permutation)."""
    return np.roll(t, shift, axis=axis)


def pad2d(x: np.ndarray, p: int) -> np.ndarray:
    """Zero-pad the two trailing (spatial) axes by p on each side."""
    if p == 0:
        return np.ascontiguousarray(x)
    width = [(0, 0)] * (x.ndim - 2) + [(p, p), (p, p)]
    return np.pad(x, width, mode="constant")


# ---------------------------------------------------------------------------
# Convolution


def conv_out_size(s_in: int, k: int, p: int, s: int, d: int = 1) -> int:
    """Spatial output extent of a convolution: floor((S+2p-d(k-1)-1)/s)+1."""
    out = (s_in + 2 * p - d * (k - 1) - 1) // s + 1
    if out <= 0:
        raise ValueError(
            f"non-positive output extent {out} for S_in={s_in}, k={k}, p={p}, s={s}"
        )
    return out


def conv2d(x: np.ndarray, w: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """NCHW convolution via patch gather + GEMM (dilation fixed at 1).

    x: (B, C, H, W); w: (O, C, k, k). Deterministic: each output element's
    reduction runs over a fixed (c, di, dj) order inside one dot product.
    """
    out, _ = _conv2d_with_cols(x, w, stride, padding)
    return out


def _conv2d_with_cols(x, w, stride, padding):
    B, C, H, W = x.shape
    O, Cw, k, _ = w.shape
    if C != Cw:
        raise ValueError(f"channel mismatch: input has {C}, kernel expects {Cw}")
    oh = conv_out_size(H, k, padding, stride)
    ow = conv_out_size(W, k, padding, stride)
    xp = pad2d(x, padding)
    cols = _backend.im2col(xp, k, stride)           # (B*oh*ow, C*k*k)
    flat = cols @ w.reshape(O, -1).T                # (B*oh*ow, O)
    out = np.ascontiguousarray(flat.reshape(B, oh, ow, O).transpose(0, 3, 1, 2))
    return out, cols


def conv2d_backward(x, w, cols, dout, stride, padding):
    """Gradients of conv2d. Returns (dx, dw); cols from _conv2d_with_cols."""
    B, C, H, W = x.shape
    O, _, k, _ = w.shape
    dmat = dout.transpose(0, 2, 3, 1).reshape(-1, O)
    dmat = np.ascontiguousarray(dmat)
    dw = (dmat.T @ cols).reshape(w.shape)
    dcols = np.ascontiguousarray(dmat @ w.reshape(O, -1))
    dxp = _backend.col2im(dcols, B, C, H + 2 * padding, W + 2 * padding, k, stride)
    if padding:
        dxp = dxp[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(dxp), dw


def naive_conv2d(x: np.ndarray, w: np.ndarray, stride: int = 1, padding: int = 0):
    """Quadruple-loop reference used as the convolution oracle. Slow."""
    B, C, H, W = x.shape
    O, _, k, _ = w.shape
    oh = conv_out_size(H, k, padding, stride)
    ow = conv_out_size(W, k, padding, stride)
    xp = pad2d(x, padding)
    out = np.zeros((B, O, oh, ow), dtype=np.result_type(x, w))
    for b in range(B):
        for o in range(O):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[b, :, i * stride : i * stride + k, j * stride : j * stride + k]
                    out[b, o, i, j] = np.sum(patch * w[o])
    return out


# ---------------------------------------------------------------------------
# Elementwise / reductions


def relu(x):
    return np.maximum(x, 0)


def silu(x):
    return x / (1.0 + np.exp(-x))


def hard_sigmoid(x):
    """Piecewise-linear sigmoid: clip((x + 3) / 6, 0, 1)."""
    return np.clip((x + 3.0) / 6.0, 0.0, 1.0)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """Mean over the two trailing spatial axes: (B, C, H, W) -> (B, C)."""
    return x.mean(axis=(-2, -1))


def ordered_sum(x: np.ndarray, axis) -> np.ndarray:
    """Sum with operands sorted ascending over the reduced axes.

    The result depends only on the multiset of reduced values, so any
    permutation of those values (rot90, roll) leaves it bitwise unchanged.
    """
    axes = axis if isinstance(axis, tuple) else (axis,)
    axes = tuple(a % x.ndim for a in axes)
    keep = [a for a in range(x.ndim) if a not in axes]
    moved = x.transpose(keep + list(axes)).reshape(
        [x.shape[a] for a in keep] + [-1]
    )
    # The contiguous copy matters: numpy rounds strided reductions
    # differently from contiguous ones, and np.sort keeps the input's
    # layout, so without it two permutations of the same values could
    # sum to different floats.
    srt = np.ascontiguousarray(np.sort(moved, axis=-1))
    return srt.sum(axis=-1)


def assert_finite(x: np.ndarray, what: str):
    if not np.all(np.isfinite(x)):
        bad = np.size(x) - np.count_nonzero(np.isfinite(x))
        raise FloatingPointError(f"{what}: {bad} non-finite value(s)")


# ---------------------------------------------------------------------------
# Debug dumps


def dump_pgm(img: np.ndarray, path):
    """Write a 2D array as plain-text PGM (P2), rescaled to 0..255."""
    if img.ndim != 2:
        raise ValueError(f"PGM dump needs a 2D array, got shape {img.shape}")
    lo, hi = float(img.min()), float(img.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    pix = np.round((img - lo) * scale).astype(np.int64)
    lines = ["P2", f"{img.shape[1]} {img.shape[0]}", "255"]
    lines += [" ".join(str(v) for v in row) for row in pix]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def dump_csv_matrix(mat: np.ndarray, path):
    """Write a 2D array as CSV with round-trip-exact float text."""
    if mat.ndim != 2:
        raise ValueError(f"CSV dump needs a 2D array, got shape {mat.shape}")
    with open(path, "w") as fh:
        for row in mat:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
