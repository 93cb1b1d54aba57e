import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cascadeformer.data import generate_synthetic  # noqa: E402
from cascadeformer.model import CascadeFormer, ModelConfig  # noqa: E402


def tiny_config(variant: str = "v1_0", **kw) -> ModelConfig:
    base = dict(variant=variant, coord_dims=2, joints=4, embed_dim=8, t1_layers=1, t2_layers=1, n_heads=2, n_classes=3)
    base.update(kw)
    return ModelConfig(**base)


def tiny_model(variant: str = "v1_0", seed: int = 0, dtype=np.float32, **kw) -> CascadeFormer:
    return CascadeFormer(tiny_config(variant, **kw), seed=seed, dtype=dtype)


@pytest.fixture
def small_dataset():
    # 4 classes x 8 clips, short and narrow so training tests stay fast
    return generate_synthetic(4, 8, 12, 5, 2, 0.05, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line per acceptance criterion; echoed in the terminal summary."""
    lines = request.config.stash.setdefault(_CRITERIA, [])

    def report(name: str, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'}  {name}: {detail}"
        lines.append(line)
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
