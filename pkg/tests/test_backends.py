"""The compiled patch kernels must match the numpy fallback bitwise."""

import subprocess
import sys

import numpy as np
import pytest

from rotequiv import tensor
from rotequiv._backend import BACKEND, fallback

native = pytest.importorskip(
    "rotequiv._backend.native",
    reason="compiled extension missing; build with `pip install -e .`",
)


def test_native_backend_is_active_by_default():
    # The package ships the extension; a silent fall back to numpy in a
    # normal install would hide a packaging regression.
    assert BACKEND == "native"


SHAPES = [
    # (B, C, Hp, Wp, k, s)
    (1, 1, 5, 5, 3, 1),
    (2, 3, 8, 8, 3, 2),
    (1, 4, 9, 9, 4, 1),
    (3, 2, 10, 7, 3, 1),
    (2, 1, 6, 6, 1, 2),
    (1, 2, 12, 12, 5, 3),
]


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("shape", SHAPES)
def test_im2col_matches_fallback_bitwise(shape, dtype):
    B, C, Hp, Wp, k, s = shape
    rng = tensor.make_rng(1234, B, C, Hp, Wp, k, s)
    xp = rng.standard_normal((B, C, Hp, Wp)).astype(dtype)
    got = native.im2col(xp, k, s)
    want = fallback.im2col(xp, k, s)
    assert got.dtype == want.dtype
    assert got.shape == want.shape
    assert np.array_equal(got, want)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("shape", SHAPES)
def test_col2im_matches_fallback_bitwise(shape, dtype):
    B, C, Hp, Wp, k, s = shape
    oh = (Hp - k) // s + 1
    ow = (Wp - k) // s + 1
    rng = tensor.make_rng(4321, B, C, Hp, Wp, k, s)
    cols = rng.standard_normal((B * oh * ow, C * k * k)).astype(dtype)
    got = native.col2im(cols, B, C, Hp, Wp, k, s)
    want = fallback.col2im(cols, B, C, Hp, Wp, k, s)
    assert got.dtype == want.dtype
    assert np.array_equal(got, want)


def test_col2im_overlap_accumulation_order():
    """Overlapping stride-1 windows force repeated adds into one cell; the
    native scatter must use the same (di, dj) ascending order so float
    rounding agrees exactly, not just approximately."""
    rng = tensor.make_rng(77)
    cols = rng.standard_normal((1 * 4 * 4, 2 * 3 * 3)).astype(np.float32)
    # scale wildly so any reassociation shows up in the low bits
    cols *= np.logspace(-3, 3, cols.shape[1], dtype=np.float32)
    got = native.col2im(cols, 1, 2, 6, 6, 3, 1)
    want = fallback.col2im(cols, 1, 2, 6, 6, 3, 1)
    assert np.array_equal(got, want)


def test_conv2d_agrees_across_backends_bitwise():
    code = (
        "import numpy as np\n"
        "from rotequiv import tensor\n"
        "from rotequiv._backend import BACKEND\n"
        "rng = tensor.make_rng(5)\n"
        "x = rng.standard_normal((2, 3, 11, 11)).astype(np.float32)\n"
        "w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)\n"
        "y = tensor.conv2d(x, w, stride=2, padding=1)\n"
        "print(BACKEND)\n"
        "print(y.astype('<f4').tobytes().hex())\n"
    )
    outs = {}
    for forced in ("numpy", "native"):
        proc = subprocess.run(
            [sys.executable, "-c", code],
            capture_output=True, text=True,
            env={"ROTEQUIV_BACKEND": forced, "PATH": "/usr/bin:/bin"},
        )
        assert proc.returncode == 0, proc.stderr
        backend, payload = proc.stdout.split()
        assert backend == forced
        outs[forced] = payload
    assert outs["numpy"] == outs["native"]


def test_forcing_numpy_disables_native():
    proc = subprocess.run(
        [sys.executable, "-c",
         "from rotequiv._backend import BACKEND, native; print(BACKEND, native)"],
        capture_output=True, text=True,
        env={"ROTEQUIV_BACKEND": "numpy", "PATH": "/usr/bin:/bin"},
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.split() == ["numpy", "None"]
