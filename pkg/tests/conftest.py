import numpy as np
import pytest

from mdplab.models import (LinearConfig, Nse2dConfig, SabraConfig, build_linear, build_nse2d,
                           build_sabra)
from mdplab.noise import JumpCoefficient, MarkSpace


@pytest.fixture(scope="session")
def scalar():
    """Scalar linear model du = -u dt + eps dN with one unit mark."""
    model = build_linear(LinearConfig((1.0,)))
    space = MarkSpace(np.array([1.0]))
    g = JumpCoefficient.affine(space, np.array([[1.0]]))
    return model, space, g


@pytest.fixture(scope="session")
def nse_small():
    return build_nse2d(Nse2dConfig(K=2, visc=0.05))


@pytest.fixture(scope="session")
def sabra_small():
    return build_sabra(SabraConfig(n_shells=8))


def per_coordinate(model, weight=1.0, amplitude=1.0):
    space = MarkSpace(np.full(model.dim, weight))
    return space, JumpCoefficient.affine(space, amplitude * np.eye(model.dim))


@pytest.fixture(scope="session")
def per_coord():
    return per_coordinate


# --------------------------------------------------------------------------
# acceptance verdict lines, printed once at the end of the session


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def verdict(request):
    lines = request.config._acceptance_lines

    def record(number, name, passed, detail=""):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {name}: {detail}"
        lines.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
