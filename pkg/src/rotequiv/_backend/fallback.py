"""Pure-numpy patch gather/scatter.

Both backends implement the same two primitives with the same accumulation
order, so their results are bitwise identical and the selection is purely a
speed decision:

- ``im2col``: gather k*k patches of a padded NCHW batch into a row matrix,
  one row per output position, ready for a single GEMM.
- ``col2im``: the adjoint scatter-add. Contributions to any input element
  are accumulated in ascending (di, dj) tap order; within one tap the
  destinations are disjoint, so that order fully determines the float result.
"""

import numpy as np


def im2col(xp, k, s):
    """(B, C, Hp, Wp) padded input -> (B*oh*ow, C*k*k) rows.

    Row index is ((b*oh + i)*ow + j); column index is (c*k + di)*k + dj.
    """
    B, C, Hp, Wp = xp.shape
    oh = (Hp - k) // s + 1
    ow = (Wp - k) // s + 1
    sb, sc, sh, sw = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(B, oh, ow, C, k, k),
        strides=(sb, sh * s, sw * s, sc, sh, sw),
        writeable=False,
    )
    return view.reshape(B * oh * ow, C * k * k)


def col2im(cols, B, C, Hp, Wp, k, s):
    """Adjoint of im2col: scatter-add rows back onto a zeroed (B, C, Hp, Wp)."""
    oh = (Hp - k) // s + 1
    ow = (Wp - k) // s + 1
    xp = np.zeros((B, C, Hp, Wp), dtype=cols.dtype)
    six = cols.reshape(B, oh, ow, C, k, k)
    for di in range(k):
        for dj in range(k):
            xp[:, :, di : di + oh * s : s, dj : dj + ow * s : s] += six[
                :, :, :, :, di, dj
            ].transpose(0, 3, 1, 2)
    return xp
