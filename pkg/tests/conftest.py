import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from attnmatte.data import Manifest, compose_dataset  # noqa: E402
from attnmatte.toy import make_toy_set  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_data(tmp_path_factory):
    """Four 96x96 composites with their manifest."""
    root = tmp_path_factory.mktemp("toy")
    make_toy_set(root / "src", n_fg=4, n_bg=4, size=96, seed=0)
    compose_dataset(root / "src" / "fg", root / "src" / "alpha", root / "src" / "bg",
                    root / "data", per_fg=1, seed=0)
    return root / "data" / "manifest.jsonl"


@pytest.fixture(scope="session")
def toy_manifest(toy_data):
    return Manifest.load(toy_data)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
