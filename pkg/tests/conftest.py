"""Shared fixtures.  Profiles are the expensive objects (one transfer
operator solve per slow node), so they are built once per session."""

import pytest

from scalebridge import InitialLaw, build_profile, make_preset


@pytest.fixture(scope="session")
def single_sink_profile():
    return build_profile(make_preset("single-sink", 0.01))


@pytest.fixture(scope="session")
def double_sink_profile():
    return build_profile(make_preset("double-sink", 0.05))


@pytest.fixture(scope="session")
def doubling_profile():
    return build_profile(make_preset("doubling-pure", 1e-4))


@pytest.fixture(scope="session")
def uniform_law():
    return InitialLaw.uniform()
