"""Training loop with per-epoch equivariance probes.

Everything that consumes randomness derives its generator from (seed,
stream, index), so the trajectory is a pure function of the seed: resuming
from a checkpoint at epoch k replays epochs k+1..E bitwise identically to
an uninterrupted run.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from .. import tensor
from ..model import Model, save_checkpoint
from .dataset import Dataset
from .metrics import GRID_ANGLES, stagewise_error

_STREAM_SHUFFLE = 100
_STREAM_AUGMENT = 101
CANONICAL_TAPS = ("S0", "S1", "S2", "S3", "S4")


@dataclass(frozen=True)
class TrainHyper:
    epochs: int = 20
    batch_size: int = 16
    lr: float = 2.5e-4
    weight_decay: float = 0.05
    seed: int = 0
    probe_batch: int = 2
    augment_rot90: bool = True

    def validate(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        return self


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    accuracy: float
    angular_error_deg: float
    eps: dict  # tap name -> normalized equivariance error


@dataclass
class TrainingHistory:
    records: list = field(default_factory=list)

    def eps_series(self, tap: str) -> list:
        return [r.eps.get(tap) for r in self.records]

    def final(self) -> EpochRecord:
        return self.records[-1]

    def initial(self) -> EpochRecord:
        return self.records[0]


def angular_error_deg(pred_deg: np.ndarray, true_deg: np.ndarray) -> np.ndarray:
    """Absolute angular difference wrapped to [0, 180]."""
    d = (np.asarray(pred_deg) - np.asarray(true_deg) + 180.0) % 360.0 - 180.0
    return np.abs(d)


def batch_loss(model: Model, images: np.ndarray, labels: np.ndarray,
               thetas_deg: np.ndarray, training: bool):
    res = model.forward(images, training=training)
    ce = ad.cross_entropy(res.class_logits, labels)
    ang = ad.angular_cosine_loss(res.orientation_angle, np.radians(thetas_deg))
    return ad.add(ce, ang), res


def evaluate(model: Model, data: Dataset, batch_size: int = 64):
    """(mean loss, accuracy, mean angular error in degrees) without updates."""
    n = len(data)
    losses = []
    correct = 0
    ang_errs = []
    with ad.no_grad():
        for start in range(0, n, batch_size):
            sl = slice(start, min(start + batch_size, n))
            loss, res = batch_loss(model, data.images[sl], data.labels[sl],
                                   data.thetas_deg[sl], training=False)
            losses.append(float(loss.value) * (sl.stop - sl.start))
            pred = res.class_logits.value.argmax(axis=1)
            correct += int((pred == data.labels[sl]).sum())
            pred_deg = np.degrees(res.orientation_angle.value) % 360.0
            ang_errs.extend(angular_error_deg(pred_deg, data.thetas_deg[sl]))
    return (sum(losses) / max(n, 1), correct / max(n, 1),
            float(np.mean(ang_errs)) if ang_errs else 0.0)


def _augment_quarter_turns(images, thetas_deg, quarters):
    """Rotate each sample by its own number of quarter turns and shift the
    orientation target to match; class labels are rotation-invariant."""
    out = images.copy()
    for q in (1, 2, 3):
        m = quarters == q
        if m.any():
            out[m] = tensor.rot90(images[m], q)
    return out, (thetas_deg + 90.0 * quarters) % 360.0


def _probe_eps(model: Model, probe_images: np.ndarray) -> dict:
    """Mean normalized epsilon per canonical tap, averaged over the grid
    angles; taps the model lacks are simply absent from the dict."""
    report = stagewise_error(model, probe_images, angles=GRID_ANGLES)
    by_stage = report.by_stage()
    return {tap: by_stage[tap] for tap in model.tap_names if tap in by_stage}


def train(model: Model, train_set: Dataset, test_set: Dataset,
          hyper: TrainHyper, out_dir=None, optimizer_state=None,
          start_epoch: int = 0, log=None) -> TrainingHistory:
    """Train with AdamW and a constant-then-cosine learning-rate schedule.

    By default every training image is rotated by a random number of
    quarter turns each time it is drawn (augment_rot90), with the
    orientation target shifted to match.

    Records one row per epoch plus a row for the initial state (epoch 0):
    epoch 0 carries the test-set loss, later rows the mean training loss;
    accuracy and angular error always come from the test set. A checkpoint
    is written after every epoch when out_dir is given (initial.ckpt,
    last.ckpt, final.ckpt).

    A non-finite loss aborts with the failing epoch and batch in the
    message rather than training onward on garbage.
    """
    hyper.validate()
    opt = ad.AdamW(model.params(), lr=hyper.lr, weight_decay=hyper.weight_decay)
    if optimizer_state is not None:
        opt.load_state_dict(optimizer_state)

    probe = test_set.images[:hyper.probe_batch] if len(test_set) else None
    history = TrainingHistory()

    def say(msg):
        if log is not None:
            log(msg)

    def record(epoch, loss):
        _, acc, ang = evaluate(model, test_set)
        eps = _probe_eps(model, probe) if probe is not None else {}
        history.records.append(EpochRecord(
            epoch=epoch, loss=loss, accuracy=acc,
            angular_error_deg=ang, eps=eps,
        ))
        eps_s1 = eps.get("S1")
        say(f"epoch {epoch:3d}  loss {loss:.4f}  acc {acc:.3f}  "
            f"ang {ang:6.2f} deg"
            + (f"  eps(S1) {eps_s1:.2e}" if eps_s1 is not None else ""))

    if start_epoch == 0:
        test_loss, _, _ = evaluate(model, test_set)
        record(0, test_loss)
        if out_dir is not None:
            save_checkpoint(f"{out_dir}/initial.ckpt", model, opt, epoch=0)

    n = len(train_set)
    t0 = time.time()
    for epoch in range(start_epoch + 1, hyper.epochs + 1):
        opt.lr = ad.cosine_lr(hyper.lr, epoch - 1, hyper.epochs)
        order = tensor.make_rng(hyper.seed, _STREAM_SHUFFLE, epoch).permutation(n)
        aug_rng = (tensor.make_rng(hyper.seed, _STREAM_AUGMENT, epoch)
                   if hyper.augment_rot90 else None)
        epoch_losses = []
        for bstart in range(0, n, hyper.batch_size):
            idx = order[bstart:bstart + hyper.batch_size]
            images = train_set.images[idx]
            thetas = train_set.thetas_deg[idx]
            if aug_rng is not None:
                quarters = aug_rng.integers(0, 4, size=len(idx))
                images, thetas = _augment_quarter_turns(images, thetas, quarters)
            loss, _ = batch_loss(model, images, train_set.labels[idx], thetas,
                                 training=True)
            lval = float(loss.value)
            if not np.isfinite(lval):
                raise FloatingPointError(
                    f"non-finite loss {lval} at epoch {epoch}, "
                    f"batch starting {bstart}; aborting"
                )
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            epoch_losses.append(lval * len(idx))
        record(epoch, sum(epoch_losses) / max(n, 1))
        if out_dir is not None:
            save_checkpoint(f"{out_dir}/last.ckpt", model, opt, epoch=epoch)
    say(f"trained {hyper.epochs - start_epoch} epochs in {time.time() - t0:.1f}s")
    if out_dir is not None and hyper.epochs > 0:
        save_checkpoint(f"{out_dir}/final.ckpt", model, opt, epoch=hyper.epochs)
    return history
