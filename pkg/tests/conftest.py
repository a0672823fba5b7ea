import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

import synthasr  # noqa: E402

PACKAGE = Path(synthasr.__file__).parent
CONFIGS = PACKAGE / "configs"
TOY = PACKAGE / "data" / "toy"

torch.set_num_threads(1)


@pytest.fixture
def toy_dir():
    return TOY


@pytest.fixture
def toy_config():
    return CONFIGS / "toy.yaml"


def pytest_terminal_summary(terminalreporter):
    results = getattr(sys.modules.get("test_acceptance"), "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
