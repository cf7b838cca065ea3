"""Shared fixtures: canonical domains used across the test modules."""

import numpy as np
import pytest

from perfsolve.geometry import PerforatedDomain, Perforation, Rect, lattice_perforations

UNIT_SQUARE = Rect((-0.5, -0.5), (0.5, 0.5))


@pytest.fixture
def unit_square() -> Rect:
    return UNIT_SQUARE


@pytest.fixture
def single_disk_domain() -> PerforatedDomain:
    """Unit square with one centered disk of radius 0.4."""
    return PerforatedDomain(UNIT_SQUARE, [Perforation((0.0, 0.0), 0.4)])


@pytest.fixture
def empty_domain() -> PerforatedDomain:
    return PerforatedDomain(UNIT_SQUARE, [])


@pytest.fixture
def lattice_domain() -> PerforatedDomain:
    """Unit square with 400 disks of radius 1/70 on a 20x20 lattice."""
    perfs = lattice_perforations(UNIT_SQUARE, 20, 20, 1.0 / 70.0)
    return PerforatedDomain(UNIT_SQUARE, perfs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def paper_cell_tensors():
    """Effective tensors of the centered disk (radius 2/7) at 128/256/512.

    Session-scoped: the n=512 solve takes about a minute and is shared by the
    convergence test and the acceptance criterion.
    """
    from perfsolve.homog import CellGeometry, effective_tensor

    cell = CellGeometry(Perforation((0.0, 0.0), 2.0 / 7.0))
    return {n: effective_tensor(cell, n) for n in (128, 256, 512)}
