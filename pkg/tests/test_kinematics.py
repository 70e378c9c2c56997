import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from teachnet.kinematics import (
    JOINT_NAMES,
    ModelError,
    RigidTransform,
    clamp_to_limits,
    fk_arrays,
    forward_kinematics,
    keypoint_indices,
    keypoint_positions,
    link_directions,
    load_model,
    model_from_dict,
    names_from_theta,
    rotation_about_axis,
    sample_uniform,
    theta_from_names,
    within_limits,
)


def test_fk_matches_homogeneous_oracle(model, raw_cfg, rng):
    for theta in sample_uniform(model, rng, 200):
        fk = forward_kinematics(model, theta)
        ref = oracles.homogeneous_fk(raw_cfg, theta)
        for name, T in fk.items():
            assert np.abs(T.as_matrix() - ref[name]).max() < 1e-12


def test_keypoints_match_oracle(model, raw_cfg, rng):
    for theta in sample_uniform(model, rng, 50):
        np.testing.assert_allclose(keypoint_positions(model, theta),
                                   oracles.keypoints_oracle(raw_cfg, theta), atol=1e-12)


def test_wrist_sits_below_common_origin(model):
    fk = forward_kinematics(model, model.mid_range)
    np.testing.assert_allclose(fk["wrist"].translation, [0, 0, -0.034], atol=0)


def test_zero_pose_is_straight_fingers(model):
    """All flexion zero: each finger's keypoints share the finger's x and y."""
    theta = np.zeros(17)
    theta = clamp_to_limits(model, theta)
    kp = keypoint_positions(model, theta)
    for f in range(4):
        rows = kp[3 * f:3 * f + 3]
        assert np.ptp(rows[:, 0]) < 1e-12 and np.ptp(rows[:, 1]) < 1e-12


def test_locality(model, rng):
    """Moving one finger's joint leaves the other fingers' keypoints fixed."""
    theta = sample_uniform(model, rng)
    base = keypoint_positions(model, theta)
    moved = theta.copy()
    moved[JOINT_NAMES.index("MFJ3")] += 0.1
    kp = keypoint_positions(model, moved)
    mf = [i for i, k in enumerate(model.keypoints) if k.finger == "MF"]
    other = [i for i in range(15) if i not in mf]
    assert np.array_equal(kp[other], base[other])
    assert not np.allclose(kp[mf[:2]], base[mf[:2]])


def test_fk_is_pure(model, rng):
    theta = sample_uniform(model, rng)
    copy = theta.copy()
    a = fk_arrays(model, theta)
    b = fk_arrays(model, theta)
    assert np.array_equal(theta, copy)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_directions_are_unit(model, rng):
    for theta in sample_uniform(model, rng, 20):
        np.testing.assert_allclose(np.linalg.norm(link_directions(model, theta), axis=1), 1.0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=17, max_size=17))
def test_clamp_lands_within_limits(values):
    model = load_model()
    theta = clamp_to_limits(model, np.array(values))
    assert within_limits(model, theta)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 1e-3),
       st.floats(-np.pi, np.pi))
def test_rotation_is_orthonormal(axis, angle):
    R = rotation_about_axis(np.array(axis) / np.linalg.norm(axis), angle)
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(R) - 1) < 1e-12


def test_rigid_transform_rejects_reflection():
    with pytest.raises(ValueError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_rigid_transform_inverse_roundtrip(rng):
    axis = rng.normal(size=3)
    T = RigidTransform(rotation_about_axis(axis / np.linalg.norm(axis), 0.7), rng.normal(size=3))
    p = rng.normal(size=(5, 3))
    np.testing.assert_allclose(T.inverse().apply(T.apply(p)), p, atol=1e-12)
    np.testing.assert_allclose(T.compose(T.inverse()).as_matrix(), np.eye(4), atol=1e-12)


def test_keypoint_indices(model):
    tips = keypoint_indices(model, "TIP")
    assert len(tips) == 5 and all(model.keypoints[i].kind == "TIP" for i in tips)


def test_name_roundtrip(rng, model):
    theta = sample_uniform(model, rng)
    np.testing.assert_array_equal(theta_from_names(names_from_theta(theta)), theta)


def test_wrong_theta_length(model):
    with pytest.raises(ValueError):
        keypoint_positions(model, np.zeros(16))


@pytest.mark.parametrize("mutate, message", [
    (lambda c: c["limits"].__setitem__("FFJ3", [1.0, 0.5]), "FFJ3"),
    (lambda c: c["joint_order"].pop(), "17"),
    (lambda c: c["capsules"]["palm"].__setitem__("radius", -0.01), "radius"),
    (lambda c: c["collision_pairs"][0].__setitem__("r_col", 0.0), "r_col"),
    (lambda c: c["links"].reverse(), "parent"),
])
def test_invalid_configs(raw_cfg, mutate, message):
    cfg = json.loads(json.dumps(raw_cfg))
    mutate(cfg)
    with pytest.raises(ModelError, match=message):
        model_from_dict(cfg)


def test_unreadable_model_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ModelError):
        load_model(p)
