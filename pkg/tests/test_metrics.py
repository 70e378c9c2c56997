import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from teachnet.kinematics import keypoint_positions, sample_uniform
from teachnet.metrics import (
    TABLE_THRESHOLDS,
    angle_grid,
    compute_report,
    emit_report,
    fraction_below,
    frame_angle_errors,
    joint_distance_errors,
    per_joint_mean_error,
    read_curve,
)


def test_worked_example():
    assert fraction_below([0.05, 0.2, 0.12], [0.15])[0] == pytest.approx(2 / 3)


def test_boundary_counts_as_below():
    assert fraction_below([0.1, 0.2], [0.1])[0] == 0.5


def test_grid_holds_table_thresholds():
    g = angle_grid()
    assert len(g) == 51 and g[0] == 0.0 and g[-1] == 1.0
    # 0.15 is off the 0.02 grid; the summary table evaluates it directly
    assert 0.1 in g and 0.2 in g
    assert TABLE_THRESHOLDS == (0.1, 0.15, 0.2)


def test_frame_errors_bruteforce(rng):
    pred, gt = rng.uniform(-1, 1, (2, 50, 17))
    e = frame_angle_errors(pred, gt)
    for i in range(50):
        diffs = [abs(pred[i, k] - gt[i, k]) for k in range(17)]
        assert e.max[i] == max(diffs)
        assert e.mean[i] == pytest.approx(sum(diffs) / 17, abs=1e-15)
    np.testing.assert_allclose(per_joint_mean_error(pred, gt), np.abs(pred - gt).mean(axis=0))


def test_fraction_against_counting(rng):
    err = rng.uniform(0, 1, 1000)
    t = angle_grid()
    f = fraction_below(err, t)
    for ti, fi in zip(t, f):
        assert fi == oracles.count_below(err, ti)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 2), min_size=1, max_size=60), st.integers(0, 2**32 - 1))
def test_curve_monotone_and_permutation_invariant(errs, seed):
    t = angle_grid()
    f = fraction_below(errs, t)
    assert np.all(np.diff(f) >= 0) and 0 <= f[0] and f[-1] <= 1
    perm = np.random.default_rng(seed).permutation(len(errs))
    np.testing.assert_array_equal(fraction_below(np.asarray(errs)[perm], t), f)


def test_distance_errors_oracle(model, raw_cfg, rng):
    pred = sample_uniform(model, rng, 5)
    gt = sample_uniform(model, rng, 5)
    d = joint_distance_errors(model, pred, gt)
    for i in range(5):
        dist = np.linalg.norm(oracles.keypoints_oracle(raw_cfg, pred[i]) - oracles.keypoints_oracle(raw_cfg, gt[i]),
                              axis=1)
        assert d.max[i] == pytest.approx(dist.max(), abs=1e-12)
        assert d.mean[i] == pytest.approx(dist.mean(), abs=1e-12)
    assert len(keypoint_positions(model, pred[0])) == 15


def test_emitted_files_reparse_exactly(tmp_path, model, rng):
    pred, gt = rng.uniform(-1, 1, (2, 40, 17)) * 0.3
    rep = emit_report(pred, gt, tmp_path, model=model)
    for name, (t, f) in rep["curves"].items():
        back = read_curve(tmp_path / f"curve_{name}.csv")
        np.testing.assert_array_equal(back[:, 0], t)
        np.testing.assert_array_equal(back[:, 1], f)
    with open(tmp_path / "summary.csv") as fh:
        rows = list(csv.reader(fh))[1:]
    for row, (t, (a, b)) in zip(rows, rep["summary"].items()):
        assert float(row[0]) == t and float(row[1]) == a and float(row[2]) == b
    with open(tmp_path / "per_joint.csv") as fh:
        vals = [float(r[1]) for r in list(csv.reader(fh))[1:]]
    assert vals == list(rep["per_joint"])


def test_report_without_model_skips_distances(rng):
    pred, gt = rng.uniform(-1, 1, (2, 10, 17))
    rep = compute_report(pred, gt)
    assert set(rep["curves"]) == {"angle_max", "angle_mean"} and rep["n_frames"] == 10


def test_empty_predictions_write_nothing(tmp_path):
    with pytest.raises(ValueError):
        emit_report(np.zeros((0, 17)), np.zeros((0, 17)), tmp_path / "out")
    assert not (tmp_path / "out").exists()
    with pytest.raises(ValueError):
        fraction_below([], [0.1])
    with pytest.raises(ValueError):
        frame_angle_errors(np.zeros((3, 17)), np.zeros((4, 17)))
