import functools
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from anisominkowski import NormModel, build_mesh  # noqa: E402

# acceptance lines collected during the run, printed in the terminal summary
ACCEPTANCE_LINES = []


def norm_by_name(name, dim=2):
    if name == "euclidean":
        return NormModel.euclidean(dim)
    if name == "quadratic":
        A = np.array([[2.0, 0.5], [0.5, 1.0]]) if dim == 2 else np.array(
            [[2.0, 0.3, 0.0], [0.3, 1.0, 0.2], [0.0, 0.2, 1.5]]
        )
        return NormModel.quadratic(A)
    return NormModel.quartic(0.2, dim)


NORMS = ("euclidean", "quadratic", "quartic")


@functools.lru_cache(maxsize=None)
def cached_mesh(name, n, resolution):
    return build_mesh(norm_by_name(name, n + 1), n, resolution)


@pytest.fixture(scope="session")
def mesh_factory():
    return cached_mesh


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
