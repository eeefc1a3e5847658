import os
import tempfile
from functools import lru_cache

import pytest

# assemblies are cached per session; an explicit LINBOLTZ_CACHE is honoured
if not os.environ.get("LINBOLTZ_CACHE"):
    os.environ["LINBOLTZ_CACHE"] = tempfile.mkdtemp(prefix="linboltz-cache-")

from linboltz.collision_kernels import AngularKernel, Rate, assemble_generator  # noqa: E402
from linboltz.velocity_domain import GridSpec, build_grid  # noqa: E402

ACCEPTANCE = {}
N_CRITERIA = 15


@lru_cache(maxsize=None)
def grid(d, N, R):
    return build_grid(GridSpec(d, N, float(R)))


@lru_cache(maxsize=None)
def assembly(N, R, gamma, variant="constant", nu=0.0, d=2, rate_kind="power", a=0.0, q=2.0):
    g = grid(d, N, R)
    rate = Rate("power", gamma=gamma) if rate_kind == "power" else Rate("exp", a=a, q=q)
    return assemble_generator(g, rate, AngularKernel(variant, d, nu=nu))


@pytest.fixture(scope="session")
def get_grid():
    return grid


@pytest.fixture(scope="session")
def get_assembly():
    return assembly


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in range(1, N_CRITERIA + 1):
        if k in ACCEPTANCE:
            ok, detail = ACCEPTANCE[k]
            tr.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            tr.write_line(f"criterion {k:2d}: FAIL  not run or did not complete")
