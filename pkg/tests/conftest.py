from __future__ import annotations

import numpy as np
import pytest

from nvarray.materials import LayerStack, builtin_material


@pytest.fixture(scope="session")
def diamond():
    return builtin_material("diamond")


@pytest.fixture(scope="session")
def pmma():
    return builtin_material("pmma")


@pytest.fixture(scope="session")
def bare_diamond(diamond):
    return LayerStack((), diamond)


@pytest.fixture(scope="session")
def masked_stack(diamond, pmma):
    return LayerStack(((pmma, 200.0),), diamond)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import report_lines

    lines = report_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
