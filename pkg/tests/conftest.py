import numpy as np
import pytest

from uavfl.scenario import Scenario, load_scenario


def make_scenario(devices, **overrides) -> Scenario:
    devices = np.atleast_2d(np.asarray(devices, dtype=float))
    params = dict(
        devices=devices,
        weights=np.full(len(devices), 1.0 / len(devices)),
        gain=1e-6,
        noise_power=1e-12,
        p0=0.32,
        altitude=50.0,
        v_max=50.0,
        slot_duration=1.0,
        n_slots=12,
        start=np.array([0.0, 0.0]),
        d_thr=158.0,
        epsilon=1e-4,
        max_outer_iters=10,
    )
    params.update(overrides)
    return Scenario(**params)


@pytest.fixture(scope="session")
def default_scenario():
    return load_scenario("paper_default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
