"""Tensor primitive tests: exact permutations, conv against the quadruple-
loop reference, reduction-order guarantees, and the debug dumps."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rotequiv import tensor


# ---------------------------------------------------------------------------
# rng plumbing


def test_make_rng_deterministic():
    a = tensor.make_rng(3, 1, 2).random(8)
    b = tensor.make_rng(3, 1, 2).random(8)
    assert np.array_equal(a, b)


def test_make_rng_paths_independent():
    a = tensor.make_rng(3, 1, 2).random(8)
    b = tensor.make_rng(3, 1, 3).random(8)
    c = tensor.make_rng(4, 1, 2).random(8)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_randn_dtype_and_scale():
    x = tensor.randn(tensor.make_rng(0), (20000,), std=0.5)
    assert x.dtype == np.float32
    assert abs(float(x.std()) - 0.5) < 0.02


# ---------------------------------------------------------------------------
# rot90 / roll


def test_rot90_single_turn_example():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = tensor.rot90(x, 1)
    assert np.array_equal(out, np.array([[3.0, 1.0], [4.0, 2.0]]))


def test_rot90_matches_numpy_counterclockwise_inverse():
    x = np.arange(5 * 5, dtype=np.float32).reshape(5, 5)
    for q in range(8):
        assert np.array_equal(tensor.rot90(x, q), np.rot90(x, k=-q))


def test_rot90_element_rule():
    n = 6
    x = np.arange(n * n, dtype=np.float64).reshape(n, n)
    out = tensor.rot90(x, 1)
    for i in range(n):
        for j in range(n):
            assert out[i, j] == x[n - 1 - j, i]


def test_rot90_four_turns_identity_bitwise():
    x = tensor.randn(tensor.make_rng(1), (2, 3, 7, 7))
    assert np.array_equal(tensor.rot90(x, 4), x)
    y = tensor.rot90(tensor.rot90(x, 1), 3)
    assert np.array_equal(y, x)


def test_rot90_rejects_odd_turns_on_rectangles():
    x = np.zeros((3, 4))
    with pytest.raises(ValueError):
        tensor.rot90(x, 1)
    # even turn counts are fine on rectangles
    assert tensor.rot90(x, 2).shape == (3, 4)


def test_rot90_custom_axes():
    x = np.arange(2 * 4 * 4, dtype=np.float32).reshape(4, 2, 4)
    out = tensor.rot90(x, 1, axes=(0, 2))
    ref = np.rot90(x, k=-1, axes=(0, 2))
    assert np.array_equal(out, ref)


def test_roll_matches_numpy():
    x = np.arange(24).reshape(2, 3, 4)
    assert np.array_equal(tensor.roll(x, 2, axis=1), np.roll(x, 2, axis=1))
    assert np.array_equal(tensor.roll(x, -1, axis=2), np.roll(x, -1, axis=2))


# ---------------------------------------------------------------------------
# padding and output-size arithmetic


def test_pad2d_shape_and_content():
    x = tensor.randn(tensor.make_rng(2), (2, 3, 4, 5))
    out = tensor.pad2d(x, 2)
    assert out.shape == (2, 3, 8, 9)
    assert np.array_equal(out[:, :, 2:-2, 2:-2], x)
    assert out[:, :, :2, :].sum() == 0.0
    assert out[:, :, :, -2:].sum() == 0.0


def test_pad2d_zero_is_noop_copy():
    x = tensor.randn(tensor.make_rng(3), (1, 1, 4, 4))
    out = tensor.pad2d(x, 0)
    assert np.array_equal(out, x)


@given(s=st.integers(1, 40), k=st.integers(1, 7), p=st.integers(0, 3),
       stride=st.integers(1, 4))
def test_conv_out_size_counts_positions(s, k, p, stride):
    padded = s + 2 * p
    expected = len(range(0, padded - k + 1, stride)) if padded >= k else 0
    if expected <= 0:
        with pytest.raises(ValueError):
            tensor.conv_out_size(s, k, p, stride)
    else:
        assert tensor.conv_out_size(s, k, p, stride) == expected


# ---------------------------------------------------------------------------
# convolution against the reference loop


@settings(max_examples=25, deadline=None)
@given(
    b=st.integers(1, 3), cin=st.integers(1, 4), cout=st.integers(1, 4),
    s=st.integers(3, 10), k=st.integers(1, 4), p=st.integers(0, 2),
    stride=st.integers(1, 3), seed=st.integers(0, 10_000),
)
def test_conv2d_matches_naive(b, cin, cout, s, k, p, stride, seed):
    if s + 2 * p < k:
        return
    rng = tensor.make_rng(seed)
    x = tensor.randn(rng, (b, cin, s, s))
    w = tensor.randn(rng, (cout, cin, k, k))
    fast = tensor.conv2d(x, w, stride=stride, padding=p)
    slow = tensor.naive_conv2d(x, w, stride=stride, padding=p)
    assert fast.shape == slow.shape
    np.testing.assert_allclose(fast, slow, rtol=1e-4, atol=1e-5)


def test_conv2d_channel_mismatch_raises():
    x = np.zeros((1, 3, 5, 5), dtype=np.float32)
    w = np.zeros((2, 4, 3, 3), dtype=np.float32)
    with pytest.raises(ValueError):
        tensor.conv2d(x, w)


def test_conv2d_backward_matches_finite_differences():
    rng = tensor.make_rng(11)
    x = rng.standard_normal((2, 2, 6, 6))
    w = rng.standard_normal((3, 2, 3, 3))
    stride, padding = 2, 1

    out, cols = tensor._conv2d_with_cols(x, w, stride, padding)
    dout = rng.standard_normal(out.shape)
    dx, dw = tensor.conv2d_backward(x, w, cols, dout, stride, padding)

    eps = 1e-6
    for arr, grad in ((x, dx), (w, dw)):
        flat = arr.reshape(-1)
        idx = rng.choice(flat.size, size=25, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = float((tensor.conv2d(x, w, stride, padding) * dout).sum())
            flat[i] = orig - eps
            dn = float((tensor.conv2d(x, w, stride, padding) * dout).sum())
            flat[i] = orig
            numeric = (up - dn) / (2 * eps)
            analytic = float(grad.reshape(-1)[i])
            assert abs(numeric - analytic) < 1e-4 * max(1.0, abs(analytic))


# ---------------------------------------------------------------------------
# activations


def test_activation_closed_forms():
    x = np.linspace(-6, 6, 101).astype(np.float32)
    assert np.array_equal(tensor.relu(x), np.maximum(x, 0))
    np.testing.assert_allclose(tensor.silu(x), x / (1 + np.exp(-x)), rtol=1e-6)
    np.testing.assert_allclose(tensor.hard_sigmoid(x),
                               np.clip((x + 3) / 6, 0, 1), rtol=0, atol=0)


def test_hard_sigmoid_saturation_values():
    assert tensor.hard_sigmoid(np.float32(-3.0)) == 0.0
    assert tensor.hard_sigmoid(np.float32(3.0)) == 1.0
    assert tensor.hard_sigmoid(np.float32(0.0)) == 0.5


# ---------------------------------------------------------------------------
# reductions


def test_global_avg_pool_matches_mean():
    x = tensor.randn(tensor.make_rng(4), (2, 5, 6, 7))
    np.testing.assert_allclose(tensor.global_avg_pool(x),
                               x.mean(axis=(-2, -1)), rtol=1e-6)


def test_ordered_sum_close_to_plain_sum():
    x = tensor.randn(tensor.make_rng(5), (3, 4, 5))
    np.testing.assert_allclose(tensor.ordered_sum(x, axis=1),
                               x.sum(axis=1), rtol=1e-5, atol=1e-6)


def test_ordered_sum_permutation_invariant_bitwise():
    rng = tensor.make_rng(6)
    x = tensor.randn(rng, (4, 257))
    ref = tensor.ordered_sum(x, axis=1)
    for _ in range(5):
        perm = rng.permutation(x.shape[1])
        assert np.array_equal(tensor.ordered_sum(x[:, perm], axis=1), ref)


def test_ordered_sum_tuple_axis_bitwise_under_rot90():
    x = tensor.randn(tensor.make_rng(7), (2, 3, 8, 8))
    ref = tensor.ordered_sum(x, axis=(-2, -1))
    for q in (1, 2, 3):
        rot = tensor.rot90(x, q)
        assert np.array_equal(tensor.ordered_sum(rot, axis=(-2, -1)), ref)


def test_assert_finite():
    tensor.assert_finite(np.ones(4), "fine")
    bad = np.array([1.0, np.nan, np.inf])
    with pytest.raises(FloatingPointError, match="2 non-finite"):
        tensor.assert_finite(bad, "bad")


# ---------------------------------------------------------------------------
# debug dumps


def test_dump_pgm_roundtrip(tmp_path):
    img = np.array([[0.0, 0.5], [0.25, 1.0]], dtype=np.float32)
    path = tmp_path / "img.pgm"
    tensor.dump_pgm(img, path)
    toks = path.read_text().split()
    assert toks[0] == "P2"
    w, h, maxval = int(toks[1]), int(toks[2]), int(toks[3])
    assert (w, h, maxval) == (2, 2, 255)
    vals = [int(t) for t in toks[4:]]
    assert len(vals) == 4
    assert vals[0] == 0 and vals[3] == 255
    assert vals[1] == round(0.5 * 255) and vals[2] == round(0.25 * 255)


def test_dump_pgm_rejects_non_2d(tmp_path):
    with pytest.raises(ValueError):
        tensor.dump_pgm(np.zeros((2, 2, 2)), tmp_path / "x.pgm")


def test_dump_csv_matrix_roundtrip(tmp_path):
    mat = tensor.randn(tensor.make_rng(8), (3, 4)).astype(np.float64)
    path = tmp_path / "m.csv"
    tensor.dump_csv_matrix(mat, path)
    back = np.array([[float(v) for v in line.split(",")]
                     for line in path.read_text().splitlines()])
    assert np.array_equal(back, mat)
