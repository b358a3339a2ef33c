"""Shared fixtures: a small C_4 network config and a matching dataset.

Everything here is sized for speed; the acceptance tests build their own
full-size models and data.
"""

import numpy as np
import pytest

from rotequiv import NetworkConfig, StageConfig, HeadConfig, build
from rotequiv import tensor
from rotequiv.harness import DatasetSpec, gen_dataset


def tiny_config(**kw):
    base = dict(
        orientations=4,
        input_size=32,
        num_classes=4,
        stem_channels=4,
        stages=(StageConfig(8), StageConfig(8)),
        head=HeadConfig(branch_modules=2, hidden_channels=4),
    )
    base.update(kw)
    return NetworkConfig(**base).validate()


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture
def tiny_model(tiny_cfg):
    return build(tiny_cfg, tensor.make_rng(0, 7))


@pytest.fixture(scope="session")
def tiny_data():
    """48/24 split at 32x32, orientation bias left at the default."""
    spec = DatasetSpec(n_train=48, n_test=24, image_size=32, seed=3)
    return gen_dataset(spec)


@pytest.fixture
def rng():
    return tensor.make_rng(1234)


def rel_diff(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.sqrt((a * a).sum()) + np.sqrt((b * b).sum()) + 1e-30
    return float(np.sqrt(((a - b) ** 2).sum()) / denom)


# The acceptance tests append (number, label, passed, seconds, detail)
# tuples here; the hook prints one line per criterion after the run so the
# verdicts are visible regardless of output capture.
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for no, label, ok, secs, detail in sorted(ACCEPTANCE_RESULTS):
        line = (f"criterion {no:>2}  {'PASS' if ok else 'FAIL'}  "
                f"{secs:7.1f}s  {label}")
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
