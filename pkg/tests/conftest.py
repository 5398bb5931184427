import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import tissue as T
from tissue.micro import MicroSystem


@pytest.fixture(scope="session")
def cell8():
    return T.build_cell_geometry(0.25, 8)


@pytest.fixture(scope="session")
def cell4():
    return T.build_cell_geometry(0.25, 4)


@pytest.fixture(scope="session")
def small_domain(cell4):
    # 8x8 grid, 16 facets: fast enough for dense-oracle loops
    return T.tile_domain(cell4, 0.5)


@pytest.fixture(scope="session")
def default_domain(cell8):
    return T.tile_domain(cell8, 0.25)


@pytest.fixture(scope="session")
def domain_1d():
    cell = T.build_cell_geometry(0.25, 4, dim=1)
    return T.tile_domain(cell, 0.5)


def make_micro(domain, cond=(1.0, 1.0), law=("sin",), drive=("affine", "sin", 1.0),
               dt=1e-2, alpha=1.0, **law_kw):
    conductivity = T.make_conductivity(domain.cell, *cond)
    nl = T.make_nonlinearity(law[0], **law_kw)
    bd = T.make_boundary_data(*drive)
    params = T.SolverParams(alpha=alpha, dt=dt)
    return MicroSystem(domain, conductivity, nl, bd, params)


@pytest.fixture(scope="session")
def micro_sin_small(small_domain):
    return make_micro(small_domain)
