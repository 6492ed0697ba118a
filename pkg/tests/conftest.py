import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from latentdrive.util import substream

settings.register_profile(
    "workbench",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("workbench")


@pytest.fixture
def rng():
    """Fresh deterministic generator per test."""
    return substream(1234, "test")


@pytest.fixture(scope="session")
def layouts():
    """One built layout per scenario, shared across the session."""
    from latentdrive.geometry import GeometryParams, ScenarioKind, build_scenario

    return {kind: build_scenario(kind, GeometryParams()) for kind in ScenarioKind}


def assert_close(a, b, tol, msg=""):
    err = float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
    assert err <= tol, f"{msg} max abs error {err:.3e} > {tol:.1e}"
