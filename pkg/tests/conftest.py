from __future__ import annotations

import pytest

from modecoupling import crystal, presets


@pytest.fixture(scope="session")
def bmb_solution() -> crystal.CrystalSolution:
    """Canonical Be-Mg-Be solution, shared across tests (statics are pure)."""
    return presets.bmb_solution()


@pytest.fixture(scope="session")
def bmb_drive(bmb_solution) -> object:
    return presets.bmb_drive(bmb_solution)
