"""Rotation-robustness sweeps over a trained model.

Multiples of 90 degrees rotate by exact pixel permutation; everything else
uses bilinear resampling on the same-size canvas with zero fill, accepting
the boundary loss that any off-grid rotation implies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import tensor
from ..model import Model
from .dataset import Dataset
from .training import angular_error_deg


def rotate_image(img: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate trailing (H, W) axes clockwise by angle_deg about the center.

    Exact permutation at grid angles; bilinear with zero padding otherwise.
    """
    a = angle_deg % 360.0
    if a % 90.0 == 0.0:
        return tensor.rot90(np.ascontiguousarray(img), int(a // 90))
    size = img.shape[-1]
    if img.shape[-2] != size:
        raise ValueError(f"bilinear rotation needs square images, got {img.shape}")
    c = (size - 1) / 2.0
    r = math.radians(a)
    ca, sa = math.cos(r), math.sin(r)
    jj, ii = np.meshgrid(np.arange(size), np.arange(size))
    x = jj - c
    y = c - ii
    # source point: rotate the output point counter-clockwise by angle
    u = x * ca - y * sa
    v = x * sa + y * ca
    js = u + c
    is_ = c - v
    i0 = np.floor(is_).astype(np.int64)
    j0 = np.floor(js).astype(np.int64)
    fi = (is_ - i0).astype(img.dtype)
    fj = (js - j0).astype(img.dtype)

    flat = img.reshape(-1, size, size)
    out = np.zeros_like(flat)
    for di in (0, 1):
        for dj in (0, 1):
            ii_s = i0 + di
            jj_s = j0 + dj
            valid = (ii_s >= 0) & (ii_s < size) & (jj_s >= 0) & (jj_s < size)
            wi = fi if di else 1.0 - fi
            wj = fj if dj else 1.0 - fj
            w = np.where(valid, wi * wj, 0.0).astype(img.dtype)
            ic = np.clip(ii_s, 0, size - 1)
            jc = np.clip(jj_s, 0, size - 1)
            out += flat[:, ic, jc] * w[None]
    return out.reshape(img.shape)


@dataclass
class RobustnessCurve:
    rows: list = field(default_factory=list)  # (angle_deg, accuracy, mean_ang_err)

    def accuracy_at(self, angle_deg: float) -> float:
        for a, acc, _ in self.rows:
            if a == angle_deg % 360.0:
                return acc
        raise KeyError(f"no row for angle {angle_deg}")


def robustness_sweep(model: Model, data: Dataset, angles,
                     batch_size: int = 64) -> RobustnessCurve:
    """Accuracy and mean angular error after rotating the test images.

    The orientation ground truth shifts with the applied rotation (both are
    clockwise), so angular error stays comparable across angles.
    """
    curve = RobustnessCurve()
    for angle in angles:
        a = float(angle) % 360.0
        rotated = rotate_image(data.images, a)
        correct = 0
        errs = []
        for start in range(0, len(data), batch_size):
            sl = slice(start, min(start + batch_size, len(data)))
            pred, pred_rad = model.predict(rotated[sl])
            correct += int((pred == data.labels[sl]).sum())
            pred_deg = np.degrees(pred_rad) % 360.0
            true_deg = (data.thetas_deg[sl] + a) % 360.0
            errs.extend(angular_error_deg(pred_deg, true_deg))
        n = max(len(data), 1)
        curve.rows.append((a, correct / n, float(np.mean(errs)) if errs else 0.0))
    return curve
