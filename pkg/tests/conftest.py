import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cavity_uq.chain import N_CELLS, ChainSurrogates, direct_cavity_outputs, direct_cell_outputs  # noqa: E402
from cavity_uq.cli import CELL_BOX, DEV_BOX  # noqa: E402
from cavity_uq.eigenmodel import ModelConfig  # noqa: E402
from cavity_uq.surrogate import build_adaptive  # noqa: E402


@pytest.fixture(scope="session")
def cell_surrogate():
    cfg = ModelConfig()
    return build_adaptive(lambda x: direct_cell_outputs(x, cfg), CELL_BOX, 50, output_names=["f_cell_Hz"])


@pytest.fixture(scope="session")
def cavity_surrogate():
    cfg = ModelConfig()
    names = [f"f{m}_Hz" for m in range(N_CELLS)] + ["k_cc"]
    return build_adaptive(lambda y: direct_cavity_outputs(y, cfg), [DEV_BOX] * 19, 500,
                          weights=[1.0] * N_CELLS + [0.0], output_names=names)


@pytest.fixture(scope="session")
def chain_surrogates(cell_surrogate, cavity_surrogate):
    return ChainSurrogates(cell=cell_surrogate, cavity=cavity_surrogate)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[number])
