"""Shared fixtures: random estimation states and canonical-truth generators."""

import numpy as np
import pytest

from mcsmooth import (
    EstimationState,
    HyperConfig,
    KickSeries,
    ModelNoise,
    ObservationSeries,
    ParamPriors,
    ParamTrajectory,
    build_tables,
    effective_gaps,
)

TRUE_B, TRUE_A, TRUE_PERIOD = 140.0, 30.0, 140.0
TRUE_OMEGA = 2.0 * np.pi / TRUE_PERIOD


def make_cycle_series(n=200, spacing=5.0, noise=0.1 * TRUE_A, seed=42):
    """Canonical-model truth: the relaxed oscillation observed with iid noise."""
    rng = np.random.default_rng(seed)
    times = spacing * np.arange(n)
    y = TRUE_B + TRUE_A * np.cos(TRUE_OMEGA * times) + rng.normal(0.0, noise, n)
    return ObservationSeries(times, y)


def make_random_fixture(seed, n=16, with_kicks=None):
    """A well-conditioned random estimation state over an irregular grid.

    Latents are bounded away from zero so the polar radius never degenerates,
    and value scales match the model noise so finite-difference checks stay
    well conditioned.
    """
    rng = np.random.default_rng(seed)
    t = np.cumsum(rng.uniform(30.0, 90.0, n))
    t -= t[0]
    y = TRUE_B + TRUE_A * np.sin(TRUE_OMEGA * t) + rng.normal(0.0, 3.0, n)
    obs = ObservationSeries(t, y)
    if with_kicks is None:
        with_kicks = bool(seed % 2)
    if with_kicks:
        kicks = KickSeries(
            np.sort(rng.uniform(t[0] + 1.0, t[-1] - 1.0, 3)),
            rng.uniform(0.5, 2.0, 3),
            typical_intensity=1.2,
            alpha_kick=50.0,
        )
    else:
        kicks = KickSeries.empty()
    tables = build_tables(obs, kicks, T_s=TRUE_PERIOD, T_l=4.0 * TRUE_PERIOD)
    gaps = effective_gaps(obs, kicks)
    state = EstimationState(
        x=y + rng.normal(0.0, 5.0, n),
        z=rng.uniform(15.0, 45.0, n) * rng.choice([-1.0, 1.0], n),
        params=ParamTrajectory(
            TRUE_B + rng.normal(0.0, 8.0, n),
            rng.uniform(15.0, 45.0, n),
            TRUE_OMEGA * rng.uniform(0.7, 1.4, n),
        ),
        priors=ParamPriors(TRUE_B, TRUE_A, TRUE_OMEGA, 5.0, 5.0, 0.02),
        noise=ModelNoise(30.0),
    )
    return state, obs, tables, gaps


@pytest.fixture
def cycle_series():
    return make_cycle_series()


@pytest.fixture
def quick_config():
    """Reduced iteration caps for unit tests that only need a short descent."""
    return HyperConfig(max_iter_stage1a=30, max_iter_stage1b=30, max_iter_stage2=80)
