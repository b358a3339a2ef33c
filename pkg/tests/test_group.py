"""Group actions: kernel rotation, expansion, and the regular representation."""

import numpy as np
import pytest

from rotequiv import CyclicGroup, tensor
from rotequiv.autodiff import Node
from rotequiv.group import (
    expand_group,
    expand_group_node,
    expand_lift,
    expand_lift_node,
    regular_act,
    rotate_kernel,
    rotate_planes,
    rotate_planes_adjoint,
)


def test_group_element_angles():
    g = CyclicGroup(8)
    assert g.angle_deg(0) == 0.0
    assert g.angle_deg(1) == 45.0
    assert g.angle_deg(9) == 45.0  # mod n
    assert CyclicGroup(4).angle_deg(3) == 270.0


def test_quarter_turns_grid_elements():
    g = CyclicGroup(8)
    assert [g.quarter_turns(e) for e in (0, 2, 4, 6)] == [0, 1, 2, 3]
    with pytest.raises(ValueError):
        g.quarter_turns(1)
    g1 = CyclicGroup(1)
    assert g1.quarter_turns(0) == 0


def test_group_order_must_be_positive():
    with pytest.raises(ValueError):
        CyclicGroup(0)


def test_rotate_planes_quarter_turns_are_rot90():
    r = tensor.make_rng(10)
    k = tensor.randn(r, (2, 3, 5, 5))
    for q in range(4):
        assert np.array_equal(rotate_planes(k, 90.0 * q), tensor.rot90(k, q))


def test_rotate_planes_zero_and_full_turn_are_identity():
    r = tensor.make_rng(11)
    k = tensor.randn(r, (4, 4))
    assert rotate_planes(k, 0.0) is not k
    assert np.array_equal(rotate_planes(k, 0.0), k)
    assert np.array_equal(rotate_planes(k, 360.0), k)


def test_rotate_planes_quarter_factor_splits_exactly():
    """rotate(k, a + 90q) == rot90(rotate(k, a), q) bitwise for any angle:
    the residual-then-quarter-turn decomposition is what every grid
    guarantee in the package reduces to."""
    r = tensor.make_rng(12)
    k = tensor.randn(r, (3, 5, 5))
    for a in (15.7, 30.0, 45.0, 77.3):
        base = rotate_planes(k, a)
        for q in (1, 2, 3):
            assert np.array_equal(rotate_planes(k, a + 90.0 * q),
                                  tensor.rot90(base, q))


def test_rotate_planes_rejects_rectangles():
    with pytest.raises(ValueError):
        rotate_planes(np.zeros((3, 4)), 30.0)


def test_rotate_kernel_is_plane_rotation():
    r = tensor.make_rng(13)
    k = tensor.randn(r, (2, 1, 3, 3))
    assert np.array_equal(rotate_kernel(k, 123.0), rotate_planes(k, 123.0))


def test_residual_rotation_preserves_center_pixel():
    # the center of an odd kernel is a fixed point of every rotation
    k = np.zeros((5, 5), dtype=np.float32)
    k[2, 2] = 1.0
    for a in (10.0, 33.3, 60.0, 89.9):
        out = rotate_planes(k, a)
        assert out[2, 2] == pytest.approx(1.0, abs=1e-6)


def test_rotate_planes_adjoint_is_true_adjoint():
    """<R x, y> == <x, R* y> in float64, over several angles."""
    r = tensor.make_rng(14)
    x = tensor.randn(r, (2, 5, 5), dtype=np.float64)
    y = tensor.randn(r, (2, 5, 5), dtype=np.float64)
    for a in (0.0, 45.0, 90.0, 31.4, 200.0):
        lhs = float((rotate_planes(x, a) * y).sum())
        rhs = float((x * rotate_planes_adjoint(y, a)).sum())
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_expand_lift_rows():
    g = CyclicGroup(4)
    r = tensor.make_rng(15)
    base = tensor.randn(r, (3, 2, 3, 3))
    out = expand_lift(base, g)
    assert out.shape == (12, 2, 3, 3)
    for o in range(4):
        assert np.array_equal(out[o::4], rotate_planes(base, g.angle_deg(o)))
    assert np.array_equal(out[0::4], base)


def test_expand_group_shape_and_identity_row():
    g = CyclicGroup(4)
    r = tensor.make_rng(16)
    base = tensor.randn(r, (2, 8, 3, 3))
    out = expand_group(base, g)
    assert out.shape == (8, 8, 3, 3)
    assert np.array_equal(out[0::4], base)
    with pytest.raises(ValueError):
        expand_group(tensor.randn(r, (2, 7, 3, 3)), g)


def test_expand_group_quarter_rolls():
    """For 4 | N the orientation-o copy is an exact permutation of the base:
    spatial rot90 power times an input-orientation roll."""
    g = CyclicGroup(4)
    r = tensor.make_rng(17)
    base = tensor.randn(r, (1, 4, 3, 3))
    out = expand_group(base, g)
    for o in range(4):
        rolled = np.roll(base.reshape(1, 1, 4, 3, 3), o, axis=2).reshape(1, 4, 3, 3)
        assert np.array_equal(out[o::4], tensor.rot90(rolled, o))


def test_regular_act_is_permutation_and_group_law():
    g = CyclicGroup(4)
    r = tensor.make_rng(18)
    x = tensor.randn(r, (2, 8, 6, 6))
    for a in range(4):
        ya = regular_act(x, a, g)
        assert np.sort(ya.ravel()).tobytes() == np.sort(x.ravel()).tobytes()
        for b in range(4):
            assert np.array_equal(regular_act(ya, b, g),
                                  regular_act(x, a + b, g))
    assert np.array_equal(regular_act(x, 0, g), x)


def test_regular_act_rejects_bad_channel_count():
    g = CyclicGroup(4)
    with pytest.raises(ValueError):
        regular_act(np.zeros((1, 6, 4, 4)), 1, g)


def test_regular_act_non_grid_element_errors():
    g = CyclicGroup(8)
    x = np.zeros((1, 8, 4, 4), dtype=np.float32)
    with pytest.raises(ValueError):
        regular_act(x, 1, g)  # 45 degrees is not a grid rotation


def _leaf(arr):
    return Node(np.ascontiguousarray(arr))


def test_expand_lift_node_matches_expand_lift():
    g = CyclicGroup(8)
    r = tensor.make_rng(19)
    base = _leaf(tensor.randn(r, (2, 1, 3, 3)))
    assert np.array_equal(expand_lift_node(base, g).value,
                          expand_lift(base.value, g))


def test_expand_group_node_matches_expand_group():
    g = CyclicGroup(4)
    r = tensor.make_rng(20)
    base = _leaf(tensor.randn(r, (2, 8, 3, 3)))
    assert np.array_equal(expand_group_node(base, g).value,
                          expand_group(base.value, g))
