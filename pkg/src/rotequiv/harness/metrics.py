"""Equivariance-error measurement.

The scalar compares the two paths around the equivariance square: feed a
rotated input through the map, versus rotate the map's output. Exact-zero
disagreement is not attainable in 32-bit arithmetic (rotation permutes the
operands of every convolution reduction), so the normalized variant divides
by the output's RMS and the tolerances live two decades apart: a strict
chain lands near 1e-8, a broken one near 1e-2.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .. import tensor
from ..group import CyclicGroup, regular_act

GRID_ANGLES = (90, 180, 270)


def quarter_turns_for(angle_deg) -> int:
    a = angle_deg % 360
    if a % 90 != 0:
        raise ValueError(
            f"angle {angle_deg} is not a multiple of 90 degrees; the metric is "
            f"defined only on grid rotations"
        )
    return int(a // 90) % 4


def feature_action(arr: np.ndarray, quarter_turns: int, group: CyclicGroup) -> np.ndarray:
    """Apply the output-side action for a grid rotation: spatial quarter turns
    plus the matching orientation roll."""
    if group.n % 4 == 0:
        return regular_act(arr, quarter_turns * (group.n // 4), group)
    if group.n == 1:
        return tensor.rot90(arr, quarter_turns)
    raise ValueError(
        f"group order {group.n} must be 1 or divisible by 4 to act with "
        f"90-degree rotations"
    )


def _eps_pair(f_tx: np.ndarray, t_fx: np.ndarray, fx: np.ndarray):
    """(verbatim epsilon, normalized epsilon) for one sample's feature maps.

    epsilon = sqrt(sum d^2) / (i*j*k) with (i,j,k) the feature dimensions;
    normalized = epsilon / RMS(f(x)) = ||d|| / (||f(x)|| * sqrt(i*j*k)).
    """
    if f_tx.shape != t_fx.shape:
        raise ValueError(f"branch shapes differ: {f_tx.shape} vs {t_fx.shape}")
    d = f_tx.astype(np.float64) - t_fx.astype(np.float64)
    size = d.size
    dn = float(np.sqrt(np.sum(d * d)))
    eps = dn / size
    fn = float(np.sqrt(np.sum(fx.astype(np.float64) ** 2)))
    if fn == 0.0:
        eps_norm = 0.0 if dn == 0.0 else float("inf")
    else:
        eps_norm = dn / (fn * np.sqrt(size))
    return eps, eps_norm


def equiv_error(f, x: np.ndarray, angle_deg, group: CyclicGroup,
                input_is_regular: bool = False):
    """Measure the map f at one grid rotation.

    f maps a batched array (B, C, H, W) to a batched feature array. x is a
    batch; the result is (epsilon, epsilon_normalized) averaged over it.
    input_is_regular selects the input-side action: plain images only rotate
    spatially, regular-representation features also roll their orientation
    sub-axis.
    """
    q = quarter_turns_for(angle_deg)
    if input_is_regular:
        tx = feature_action(x, q, group)
    else:
        tx = tensor.rot90(x, q)
    fx = np.asarray(f(x))
    f_tx = np.asarray(f(tx))
    t_fx = feature_action(fx, q, group)
    eps_vals = []
    norm_vals = []
    for b in range(fx.shape[0]):
        e, en = _eps_pair(f_tx[b], t_fx[b], fx[b])
        eps_vals.append(e)
        norm_vals.append(en)
    return float(np.mean(eps_vals)), float(np.mean(norm_vals))


@dataclass
class EquivErrorReport:
    """Stage-by-angle error table plus enough context to reproduce it."""

    rows: list = field(default_factory=list)  # (stage, angle_deg, eps, eps_norm)
    input_descriptor: str = ""
    model_fingerprint: str = ""

    def worst_normalized(self, stage=None) -> float:
        vals = [r[3] for r in self.rows if stage is None or r[0] == stage]
        return max(vals) if vals else 0.0

    def stages(self) -> list:
        seen = []
        for r in self.rows:
            if r[0] not in seen:
                seen.append(r[0])
        return seen

    def by_stage(self) -> dict:
        """stage -> mean normalized epsilon over its angles."""
        acc = {}
        for stage, _, _, en in self.rows:
            acc.setdefault(stage, []).append(en)
        return {k: float(np.mean(v)) for k, v in acc.items()}


def model_fingerprint(model) -> str:
    h = hashlib.sha256()
    for name, p in model.params().items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.value).tobytes())
    return h.hexdigest()[:16]


def stagewise_error(model, inputs: np.ndarray, angles=GRID_ANGLES) -> EquivErrorReport:
    """One (epsilon, normalized) row per (stage tap, angle), batch-averaged.

    Taps are the named stage outputs S0..Sk plus the head's aggregated
    feature; evaluation mode, so measuring never perturbs training state.
    """
    from .. import autodiff as ad

    group = model.group
    report = EquivErrorReport(
        input_descriptor=f"{inputs.shape} {inputs.dtype}",
        model_fingerprint=model_fingerprint(model),
    )
    with ad.no_grad():
        base = model.forward(inputs, training=False, want_taps=True)
        base_taps = {k: v.value for k, v in base.taps.items()}
        for angle in angles:
            q = quarter_turns_for(angle)
            rx = tensor.rot90(np.ascontiguousarray(inputs), q)
            rot = model.forward(rx, training=False, want_taps=True)
            for stage in model.tap_names:
                fx = base_taps[stage]
                f_tx = rot.taps[stage].value
                t_fx = feature_action(fx, q, group)
                eps_vals = []
                norm_vals = []
                for b in range(fx.shape[0]):
                    e, en = _eps_pair(f_tx[b], t_fx[b], fx[b])
                    eps_vals.append(e)
                    norm_vals.append(en)
                report.rows.append(
                    (stage, float(angle % 360), float(np.mean(eps_vals)),
                     float(np.mean(norm_vals)))
                )
    return report
