import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from magnet.data import build_samples  # noqa: E402
from magnet.graph import build_knn_graph  # noqa: E402
from magnet.model import MagNet, ModelConfig, ModelInputs  # noqa: E402
from magnet.synthetic import SynthConfig, generate_slide  # noqa: E402


def randomize(model: MagNet, rng: np.random.Generator, scale: float = 0.5) -> MagNet:
    """Replace every tensor (including zero biases and unit LN gains) with random values."""
    for name, t in model.params.items():
        model.set_array(name, rng.normal(0, scale, size=t.shape))
    return model


def tiny_problem(seed: int, n: int = 6, d: int = 8, heads: int = 2, head_dim: int = 4, rounds: int = 2,
                 genes: int = 3, in_dim: int = 5, tokens: int = 1, k: int = 3, **cfg):
    """A random small model, inputs, graph and targets."""
    rng = np.random.default_rng(seed)
    mcfg = ModelConfig(n_genes=genes, input_dims=(in_dim,) * 3, d=d, heads=heads, head_dim=head_dim,
                       rounds=rounds, **cfg)
    model = randomize(MagNet.initialize(mcfg, seed=seed), rng)
    inputs = ModelInputs(rng.normal(size=(n, in_dim)), rng.normal(size=(n, tokens, in_dim)),
                         rng.normal(size=(n, tokens, in_dim)))
    graph = build_knn_graph(rng.uniform(0, 100, size=(n, 2)), min(k, n - 1))
    targets = {lvl: rng.normal(size=(n, genes)) for lvl in ("bin", "spot", "region")}
    return model, inputs, graph, targets


@pytest.fixture(scope="session")
def default_slide():
    return generate_slide(SynthConfig())


@pytest.fixture(scope="session")
def default_samples(default_slide):
    return build_samples(default_slide)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record(criterion: str, passed: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"{criterion}: {'PASS' if passed else 'FAIL'} ({detail})")
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda s: int(s.split()[0][1:])):
        passed, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")
