import math

import numpy as np
import pytest
import yaml

from uavfl.scenario import (
    ScenarioError,
    barycenter,
    circular_trajectory,
    generate_clustered_devices,
    load_raw_config,
    load_scenario,
    scenario_from_dict,
)

from conftest import make_scenario


def write_config(tmp_path, raw, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw))
    return path


def test_paper_default_values(default_scenario):
    sc = default_scenario
    assert sc.n_devices == 20
    assert sc.altitude == 50.0
    assert sc.gain == pytest.approx(1e-6, rel=1e-12)
    assert sc.noise_power == pytest.approx(1e-12, rel=1e-12)
    assert sc.p0 == 0.32
    assert sc.v_max == 50.0 and sc.slot_duration == 1.0
    assert sc.d_thr == 158.0
    assert sc.epsilon == 1e-4
    np.testing.assert_array_equal(sc.start, [885.0, -10.0])
    assert sc.weights.sum() == pytest.approx(1.0, abs=1e-15)


def test_zero_d_thr_names_field(tmp_path):
    raw = load_raw_config("paper_default")
    raw["uav"]["d_thr"] = 0
    with pytest.raises(ScenarioError, match="d_thr"):
        load_scenario(write_config(tmp_path, raw))


def test_weights_within_tolerance_are_renormalized(tmp_path):
    raw = load_raw_config("paper_default")
    raw["devices"] = {"positions": [[0, 0], [10, 0]], "weights": [0.5, 0.5000001]}
    sc = load_scenario(write_config(tmp_path, raw))
    assert math.isclose(sc.weights.sum(), 1.0, abs_tol=1e-15)
    assert sc.weights[1] > sc.weights[0]


def test_weights_far_from_one_rejected():
    with pytest.raises(ScenarioError, match="weights"):
        make_scenario([[0, 0], [1, 1]], weights=np.array([0.5, 0.6]))


@pytest.mark.parametrize("field,value", [("altitude", 0.0), ("v_max", -1.0), ("gain", 0.0), ("n_slots", 0), ("epsilon", 0.0)])
def test_invariant_violations_name_the_field(field, value):
    with pytest.raises(ScenarioError, match=field):
        make_scenario([[0, 0]], **{field: value})


def test_negative_noise_rejected():
    with pytest.raises(ScenarioError, match="noise_power"):
        make_scenario([[0, 0]], noise_power=-1.0)


def test_db_suffixes_converted():
    raw = {
        "devices": {"positions": [[0, 0]]},
        "channel": {"gain_db": -60, "noise_power_dbm": -90, "p0": 0.32},
        "uav": {"altitude": 50, "v_max": 50, "slot_duration": 1, "n_slots": 4, "start": [0, 0], "d_thr": 158},
    }
    sc = scenario_from_dict(raw)
    assert sc.gain == pytest.approx(1e-6, rel=1e-12)
    assert sc.noise_power == pytest.approx(1e-12, rel=1e-12)


def test_missing_file_and_bad_yaml(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_scenario(tmp_path / "absent.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("uav: [unclosed")
    with pytest.raises(ScenarioError):
        load_scenario(bad)


def test_digest_stable_and_sensitive(default_scenario):
    assert default_scenario.digest() == load_scenario("paper_default").digest()
    assert default_scenario.digest() != default_scenario.replace(d_thr=150.0).digest()


def test_clustered_devices_default_layout():
    pts = generate_clustered_devices(4, 5, 1000.0, 80.0, seed=7)
    assert pts.shape == (20, 2)
    assert np.all(np.abs(pts) <= 1000.0)
    for group in pts.reshape(4, 5, 2):
        diffs = group[:, None, :] - group[None, :, :]
        assert np.linalg.norm(diffs, axis=-1).max() <= 160.0


def test_clustered_devices_single_and_deterministic():
    one = generate_clustered_devices(1, 1, 1000.0, 80.0, seed=0)
    assert one.shape == (1, 2) and np.all(np.abs(one) <= 1000.0)
    a = generate_clustered_devices(3, 4, 500.0, 50.0, seed=11)
    b = generate_clustered_devices(3, 4, 500.0, 50.0, seed=11)
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("args", [(0, 5, 1000.0, 80.0), (4, 0, 1000.0, 80.0), (4, 5, 100.0, 100.0)])
def test_clustered_devices_errors(args):
    with pytest.raises(ValueError):
        generate_clustered_devices(*args, seed=0)


def test_barycenter_examples():
    np.testing.assert_array_equal(barycenter([[0, 0], [2, 0]], [0.5, 0.5]), [1.0, 0.0])
    np.testing.assert_array_equal(barycenter([[0, 0], [2, 0]], [0.75, 0.25]), [0.5, 0.0])
    np.testing.assert_array_equal(barycenter([[3, 4]], [1.0]), [3.0, 4.0])
    with pytest.raises(ValueError):
        barycenter([[0, 0], [1, 1]], [1.0])


def test_circle_radius_zero_hovers():
    sc = make_scenario([[0, 0]], n_slots=120)
    traj = circular_trajectory([5.0, -3.0], 0.0, sc)
    assert np.all(traj.points == np.array([5.0, -3.0]))


def test_circle_radius_800_feasible():
    sc = make_scenario([[0, 0]], n_slots=120)
    traj = circular_trajectory([0.0, 0.0], 800.0, sc)
    assert traj.n_slots == 120
    chord = 2 * 800 * math.sin(math.pi / 120)  # 41.88 m
    np.testing.assert_allclose(traj.step_lengths(), chord, rtol=1e-9)
    assert traj.is_feasible(sc.step_limit)
    assert np.array_equal(traj.points[0], traj.points[-1])


def test_circle_radius_2000_infeasible():
    sc = make_scenario([[0, 0]], n_slots=120)
    with pytest.raises(ValueError, match="per slot"):
        circular_trajectory([0.0, 0.0], 2000.0, sc)


def test_circle_starts_at_start_when_on_it():
    sc = make_scenario([[0, 0]], n_slots=120, start=np.array([300.0, 400.0]))
    traj = circular_trajectory([0.0, 0.0], 500.0, sc)
    np.testing.assert_array_equal(traj.points[0], [300.0, 400.0])
    np.testing.assert_array_equal(traj.points[-1], [300.0, 400.0])
    off = circular_trajectory([1000.0, 0.0], 200.0, sc)
    np.testing.assert_allclose(off.points[0], [1200.0, 0.0])
