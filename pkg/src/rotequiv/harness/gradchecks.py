"""Named finite-difference gradient checks.

Each case builds a scalar-valued function of one or more float64 arrays and
hands it to the central-difference oracle. Inputs are generated with margins
around every kink and tie (relu at 0, hard-sigmoid at +-3, max/sort ties)
so the difference quotient is valid everywhere; the perturbation step is
1e-3 and the margins are two orders larger.

The registry is what `rotequiv gradcheck` runs and what the autodiff tests
iterate over.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from .. import group as grp
from .. import tensor

TOLERANCE = 1e-4

CASES = {}


def _case(name):
    def deco(fn):
        CASES[name] = fn
        return fn
    return deco


def _rng(tag: int, seed: int):
    return tensor.make_rng(90210, tag, seed)


def _uniform(rng, shape, lo, hi):
    return (rng.random(shape) * (hi - lo) + lo).astype(np.float64)


def _signed_away_from_zero(rng, shape, margin=0.1):
    mag = _uniform(rng, shape, margin, 1.0)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return mag * sign


def _gapped(rng, shape, gap=0.25):
    """Values whose pairwise differences all exceed ``gap``: a spread grid,
    lightly jittered, randomly permuted. Safe for max/sort cases."""
    n = int(np.prod(shape))
    base = np.arange(n, dtype=np.float64) * (2.0 * gap)
    base += _uniform(rng, (n,), -gap / 4, gap / 4)
    return rng.permutation(base).reshape(shape)


@_case("arithmetic")
def _arithmetic(seed=0):
    rng = _rng(1, seed)
    a = _uniform(rng, (3, 4), 0.5, 1.5)
    b = _uniform(rng, (3, 4), 0.6, 1.6)

    def f(an, bn):
        return ad.mean((an + bn) * an - an / bn - (an - bn))

    return f, [a, b]


@_case("exp_log_sqrt_cos")
def _transcendental(seed=0):
    rng = _rng(2, seed)
    x = _uniform(rng, (2, 5), 0.5, 2.0)

    def f(xn):
        # the log term is weighted so the combined derivative stays away
        # from zero on [0.5, 2]; a root would blow up the relative error
        return ad.sum_(ad.exp(ad.cos(xn)) + ad.log(xn) * 3.0 + ad.sqrt(xn))

    return f, [x]


@_case("atan2")
def _atan2(seed=0):
    rng = _rng(3, seed)
    y = _signed_away_from_zero(rng, (2, 4), margin=0.3)
    x = _uniform(rng, (2, 4), 0.4, 1.4)

    def f(yn, xn):
        c = _uniform(_rng(103, seed), (2, 4), 0.5, 1.5)
        return ad.sum_(ad.atan2(yn, xn) * c)

    return f, [y, x]


@_case("relu")
def _relu(seed=0):
    rng = _rng(4, seed)
    x = _signed_away_from_zero(rng, (3, 5))
    c = _uniform(rng, (3, 5), 0.5, 1.5)

    def f(xn):
        return ad.sum_(ad.relu(xn) * c)

    return f, [x]


@_case("silu")
def _silu(seed=0):
    # silu is smooth but its derivative has a root near x = -1.28; points
    # are drawn from bands on either side so the relative-error denominator
    # never collapses
    rng = _rng(5, seed)
    x = np.concatenate([
        _uniform(rng, (2, 5), -0.6, 2.2),
        _uniform(rng, (1, 5), -2.2, -1.9),
    ])

    def f(xn):
        return ad.sum_(ad.silu(xn))

    return f, [x]


@_case("hard_sigmoid")
def _hard_sigmoid(seed=0):
    # interior points plus both saturation plateaus; the jitter is small
    # enough to keep every point >= 0.2 from the kinks at -3 and +3
    rng = _rng(6, seed)
    x = np.array([[-3.6, -2.5, -1.0, 0.2], [0.9, 2.4, 3.5, -0.4]],
                 dtype=np.float64)
    x = x + _uniform(rng, x.shape, -0.1, 0.1)
    c = _uniform(rng, (2, 4), 0.5, 1.5)

    def f(xn):
        return ad.sum_(ad.hard_sigmoid(xn) * c)

    return f, [x]


@_case("softmax")
def _softmax(seed=0):
    rng = _rng(7, seed)
    x = _uniform(rng, (3, 4), -1.5, 1.5)
    c = _uniform(rng, (3, 4), 0.5, 1.5)

    def f(xn):
        return ad.sum_(ad.softmax(xn, axis=-1) * c)

    return f, [x]


@_case("cross_entropy")
def _cross_entropy(seed=0):
    rng = _rng(8, seed)
    logits = _uniform(rng, (4, 5), -1.0, 1.0)
    labels = np.array([0, 3, 2, 4], dtype=np.int64)

    def f(ln):
        return ad.cross_entropy(ln, labels)

    return f, [logits]


@_case("angular_loss")
def _angular_loss(seed=0):
    rng = _rng(9, seed)
    theta_hat = _uniform(rng, (6,), -3.0, 3.0)
    theta_true = _uniform(rng, (6,), 0.0, 2 * np.pi)

    def f(tn):
        return ad.angular_cosine_loss(tn, theta_true)

    return f, [theta_hat]


@_case("sum_mean")
def _sum_mean(seed=0):
    rng = _rng(10, seed)
    x = _uniform(rng, (2, 3, 4), -1.0, 1.0)
    c = _uniform(rng, (2, 1, 4), 0.5, 1.5)

    def f(xn):
        return ad.sum_(ad.mean(xn, axis=1, keepdims=True) * c) \
            + ad.sum_(ad.sum_(xn, axis=(0, 2)))

    return f, [x]


@_case("ordered_sum")
def _ordered_sum(seed=0):
    rng = _rng(11, seed)
    x = _gapped(rng, (3, 6))

    def f(xn):
        return ad.sum_(ad.ordered_sum(xn * xn, axis=1))

    return f, [x]


@_case("reduce_max")
def _reduce_max(seed=0):
    rng = _rng(12, seed)
    x = _gapped(rng, (3, 5))

    def f(xn):
        return ad.sum_(ad.reduce_max(xn, axis=1))

    return f, [x]


@_case("sort_last")
def _sort_last(seed=0):
    rng = _rng(13, seed)
    x = _gapped(rng, (2, 6))
    c = _uniform(rng, (2, 6), 0.5, 1.5)

    def f(xn):
        return ad.sum_(ad.sort_last(xn) * c)

    return f, [x]


@_case("reshape_transpose")
def _reshape_transpose(seed=0):
    rng = _rng(14, seed)
    x = _uniform(rng, (2, 3, 4), -1.0, 1.0)
    c = _uniform(rng, (4, 6), 0.5, 1.5)

    def f(xn):
        return ad.sum_(ad.reshape(ad.transpose(xn, (2, 0, 1)), (4, 6)) * c)

    return f, [x]


@_case("orientation_split_merge")
def _orientation_split_merge(seed=0):
    rng = _rng(15, seed)
    n = 4
    x = _uniform(rng, (2, 8, 3, 3), -1.0, 1.0)
    c = _uniform(rng, (2, 8, 3, 3), 0.5, 1.5)

    def f(xn):
        parts = [ad.take_stride(xn, 1, o, n) for o in range(n)]
        return ad.sum_(ad.stack_orientations(parts) * c)

    return f, [x]


@_case("repeat_fields")
def _repeat_fields(seed=0):
    rng = _rng(16, seed)
    x = _uniform(rng, (3, 2), -1.0, 1.0)
    c = _uniform(rng, (3, 6), 0.5, 1.5)

    def f(xn):
        return ad.sum_(ad.repeat_fields(xn, 3) * c)

    return f, [x]


@_case("matmul")
def _matmul(seed=0):
    rng = _rng(17, seed)
    a = _uniform(rng, (3, 4), -1.0, 1.0)
    b = _uniform(rng, (4, 2), -1.0, 1.0)
    c = _uniform(rng, (3, 2), 0.5, 1.5)

    def f(an, bn):
        return ad.sum_(ad.matmul(an, bn) * c)

    return f, [a, b]


@_case("conv2d_stride1")
def _conv2d_stride1(seed=0):
    rng = _rng(18, seed)
    x = _uniform(rng, (2, 3, 6, 6), -1.0, 1.0)
    w = _uniform(rng, (4, 3, 3, 3), -0.5, 0.5)

    def f(xn, wn):
        return ad.mean(ad.conv2d(xn, wn, stride=1, padding=1))

    return f, [x, w]


@_case("conv2d_stride2")
def _conv2d_stride2(seed=0):
    rng = _rng(19, seed)
    x = _uniform(rng, (1, 2, 7, 7), -1.0, 1.0)
    w = _uniform(rng, (3, 2, 3, 3), -0.5, 0.5)
    c = _uniform(rng, (1, 3, 4, 4), 0.5, 1.5)

    def f(xn, wn):
        return ad.sum_(ad.conv2d(xn, wn, stride=2, padding=1) * c)

    return f, [x, w]


@_case("lift_kernel_expansion")
def _lift_kernel_expansion(seed=0):
    rng = _rng(20, seed)
    g = grp.CyclicGroup(8)
    w = _uniform(rng, (2, 1, 3, 3), -0.5, 0.5)
    x = _uniform(rng, (1, 1, 6, 6), -1.0, 1.0)

    def f(wn):
        return ad.mean(ad.conv2d(x, grp.expand_lift_node(wn, g),
                                 stride=1, padding=1))

    return f, [w]


@_case("group_kernel_expansion")
def _group_kernel_expansion(seed=0):
    rng = _rng(21, seed)
    g = grp.CyclicGroup(4)
    w = _uniform(rng, (2, 8, 3, 3), -0.5, 0.5)
    x = _uniform(rng, (1, 8, 5, 5), -1.0, 1.0)

    def f(wn):
        return ad.mean(ad.conv2d(x, grp.expand_group_node(wn, g),
                                 stride=1, padding=1))

    return f, [w]


@_case("plane_rotation")
def _plane_rotation(seed=0):
    rng = _rng(22, seed)
    w = _uniform(rng, (2, 3, 5, 5), -1.0, 1.0)
    c = _uniform(rng, (2, 3, 5, 5), 0.5, 1.5)

    def f(wn):
        return ad.sum_(grp.rotate_planes_node(wn, 30.0) * c)

    return f, [w]


def available() -> list:
    return sorted(CASES)


def run_case(name: str, seed: int = 0) -> float:
    """Worst relative error between analytic and central-difference grads.

    The seed picks the random point the case is evaluated at.
    """
    if name not in CASES:
        raise KeyError(f"unknown gradcheck case {name!r}; "
                       f"known: {', '.join(available())}")
    f, inputs = CASES[name](seed)
    return ad.finite_diff_check(f, inputs)


def run_many(names=None, seeds=(0,)) -> dict:
    """name -> worst relative error across the given seeds."""
    chosen = available() if names is None else list(names)
    return {name: max(run_case(name, s) for s in seeds) for name in chosen}
