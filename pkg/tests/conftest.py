"""Shared fixtures: classical profiles and ground states are expensive to
shoot, so they are built once per session."""

import numpy as np
import pytest

from kirchhofflab.ground_state import (
    KirchhoffParams,
    build_ground_state,
    solve_classical,
)


@pytest.fixture(scope="session")
def profiles():
    return {p: solve_classical(p) for p in (1.5, 2.0, 3.0, 4.0)}


@pytest.fixture(scope="session")
def profile_p2(profiles):
    return profiles[2.0]


@pytest.fixture(scope="session")
def profile_p3(profiles):
    return profiles[3.0]


@pytest.fixture(scope="session")
def gs_classical(profile_p3):
    """b = 0 anchor: the classical limit, c = a."""
    return build_ground_state(KirchhoffParams(1.0, 0.0, 3.0), profile=profile_p3)


@pytest.fixture(scope="session")
def gs_kirchhoff(profile_p3):
    """Strongly nonlocal p = 3 state (c ~ 3216)."""
    return build_ground_state(KirchhoffParams(1.0, 1.0, 3.0), profile=profile_p3)


@pytest.fixture(scope="session")
def gs_p2(profile_p2):
    return build_ground_state(KirchhoffParams(1.0, 1.0, 2.0), profile=profile_p2)


@pytest.fixture(scope="session")
def gs_box(profile_p3):
    """Default configuration for 3D solves: c ~ 3.7 keeps the profile
    resolvable on the default box while staying strongly nonlocal
    ((c - a)/c ~ 73% of the diffusion comes from the gradient term)."""
    return build_ground_state(KirchhoffParams(1.0, 0.025, 3.0), profile=profile_p3)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260808)
