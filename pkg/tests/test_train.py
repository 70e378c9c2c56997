import csv

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from teachnet.dataset import Manifest
from teachnet.train import (
    LOG_FIELDS,
    VARIANTS,
    TeachNet,
    TeachNetRegressor,
    TrainConfig,
    evaluate,
    fit_arrays,
    read_predictions,
    train,
)

SMALL = dict(input_size=16, channels=(2, 4, 4), n_residual=1, latent_dim=8, hidden_dim=16,
             batch_size=8, epochs=2)


def _data(n=24, seed=0):
    rng = np.random.default_rng(seed)
    human = rng.uniform(-1, 1, (n, 16, 16)).astype(np.float32)
    robot = rng.uniform(-1, 1, (n, 3, 16, 16)).astype(np.float32)
    theta = rng.uniform(0, 1, (n, 17))
    return human, robot, theta


def _cfg(variant, **kw):
    return TrainConfig(variant=variant, **{**SMALL, **kw})


@pytest.mark.parametrize("variant", VARIANTS)
def test_every_variant_trains(variant, tmp_path):
    human, robot, theta = _data()
    net = fit_arrays(_cfg(variant), human, robot, theta, log_path=tmp_path / "log.csv")
    pred = net.predict(human if net.eval_branch == "human" else robot[:, 0])
    assert pred.shape == (24, 17) and np.all(np.isfinite(pred))
    with open(tmp_path / "log.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == list(LOG_FIELDS)
    assert {r["branch"] for r in rows} == set(net.parts())


def test_descent_on_fixed_batch():
    human, robot, theta = _data(16)
    net = TeachNet(_cfg("teach_hard_late", learning_rate=1e-2))
    view = robot[:, 0]
    before = net.batch_losses(human, view, theta)
    for _ in range(30):
        net.step(human, view, theta)
    after = net.batch_losses(human, view, theta)
    assert after["robot"]["total"] < before["robot"]["total"]
    assert after["human"]["total"] < before["human"]["total"]


def test_same_seed_identical_checkpoints(tmp_path):
    human, robot, theta = _data()
    for name in ("a", "b"):
        fit_arrays(_cfg("teach_soft_early"), human, robot, theta).save(tmp_path / name)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    fit_arrays(_cfg("teach_soft_early", seed=1), human, robot, theta).save(tmp_path / "c")
    assert (tmp_path / "c").read_bytes() != (tmp_path / "a").read_bytes()


def test_teacher_ignores_human_images():
    human, robot, theta = _data(16)
    a = TeachNet(_cfg("teach_hard_late"))
    b = TeachNet(_cfg("teach_hard_late"))
    for _ in range(3):
        a.step(human, robot[:, 0], theta)
        b.step(-human, robot[:, 0], theta)
    for k, v in a.robot.state().items():
        np.testing.assert_array_equal(v, b.robot.state()[k])
    assert not np.array_equal(a.human.parameters()["regression.0.W"], b.human.parameters()["regression.0.W"])


def test_logged_loss_matches_recomputation(tmp_path):
    human, robot, theta = _data(16)
    net = TeachNet(_cfg("teach_hard_early"))
    net.step(human, robot[:, 0], theta)
    net.save(tmp_path / "ck")
    expected = net.batch_losses(human, robot[:, 0], theta)
    row = net.step(human, robot[:, 0], theta)
    again = TeachNet.load(tmp_path / "ck").batch_losses(human, robot[:, 0], theta)
    for branch in ("robot", "human"):
        for k in ("L_ang", "L_cons", "L_phy", "total"):
            assert row[branch][k] == pytest.approx(expected[branch][k], rel=1e-6, abs=1e-9)
            assert again[branch][k] == pytest.approx(expected[branch][k], rel=1e-6, abs=1e-9)
    total = row["human"]
    assert total["total"] == pytest.approx(total["L_ang"] + total["L_cons"] + total["L_phy"])


def test_batch_losses_leave_state_untouched():
    human, robot, theta = _data(16)
    net = TeachNet(_cfg("teach_hard_late"))
    before = {k: v.copy() for k, v in net.state().items()}
    net.batch_losses(human, robot[:, 0], theta)
    for k, v in net.state().items():
        np.testing.assert_array_equal(v, before[k])


def test_checkpoint_load_reproduces_predictions(tmp_path):
    human, robot, theta = _data()
    net = fit_arrays(_cfg("single_human"), human, robot, theta)
    net.save(tmp_path / "ck")
    back = TeachNet.load(tmp_path / "ck")
    np.testing.assert_array_equal(back.predict(human), net.predict(human))
    back.save(tmp_path / "ck2")
    assert (tmp_path / "ck").read_bytes() == (tmp_path / "ck2").read_bytes()


def test_load_rejects_mismatched_tensors(tmp_path):
    from teachnet.net.checkpoint import load_checkpoint, save_checkpoint

    net = TeachNet(_cfg("single_human"))
    net.save(tmp_path / "ck")
    header, tensors = load_checkpoint(tmp_path / "ck")
    header["train"]["variant"] = "single_robot"
    save_checkpoint(tmp_path / "bad", header, tensors)
    with pytest.raises(ValueError):
        TeachNet.load(tmp_path / "bad")


def test_train_config_roundtrip_and_schedule():
    cfg = _cfg("teach_soft_late", lr_halve_every=10, learning_rate=1e-3)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.lr_at(0) == 1e-3 and cfg.lr_at(10) == 5e-4 and cfg.lr_at(25) == 2.5e-4
    with pytest.raises((TypeError, ValueError)):
        TrainConfig.from_dict({**cfg.to_dict(), "bogus": 1})
    with pytest.raises(ValueError):
        TrainConfig(variant="teach_maybe")


def test_pretrain_freezes_student(tmp_path):
    human, robot, theta = _data(16)
    net = fit_arrays(_cfg("teach_hard_late", epochs=0, teacher_pretrain_epochs=2), human, robot, theta)
    fresh = TeachNet(_cfg("teach_hard_late"))
    for k, v in net.human.parameters().items():
        np.testing.assert_array_equal(v, fresh.human.parameters()[k])
    assert not np.array_equal(net.robot.parameters()["regression.0.W"],
                              fresh.robot.parameters()["regression.0.W"])


def test_train_and_evaluate_on_dataset(tiny_dataset, tmp_path):
    out, manifest = tiny_dataset
    res = train(manifest, "teach_hard_late", {**SMALL, "input_size": 32}, seed=0, out_dir=tmp_path)
    assert res.checkpoint.exists() and res.log.exists()
    pred, gt = evaluate(res.checkpoint, manifest, tmp_path / "p.csv")
    p2, g2, frames = read_predictions(tmp_path / "p.csv")
    np.testing.assert_array_equal(p2, pred)
    np.testing.assert_array_equal(g2, gt)
    assert [f[1] for f in frames] == [-1] * len(manifest)
    rp, rg = evaluate(res.checkpoint, manifest, tmp_path / "r.csv", branch="robot")
    assert len(rp) == 9 * len(manifest)
    with pytest.raises(ValueError):
        train(Manifest(out, {**manifest.data, "records": []}), "single_human", out_dir=tmp_path)


def test_regressor_api():
    human, robot, theta = _data()
    params = {k: v for k, v in SMALL.items() if k != "input_size"}
    est = TeachNetRegressor(variant="teach_hard_late", **params)
    with pytest.raises(NotFittedError):
        est.predict(human)
    with pytest.raises(ValueError):
        clone(est).fit(human, theta)
    est.fit(human, theta, robot_images=robot)
    assert est.predict(human).shape == (24, 17)
    assert np.isfinite(est.score(human, theta))
    single = TeachNetRegressor(variant="single_robot", **params).fit(robot, theta)
    assert single.predict(robot[:, 0]).shape == (24, 17)
    with pytest.raises(ValueError):
        clone(est).fit(human, theta[:5], robot_images=robot)


def test_trained_teacher_beats_untrained(tiny_dataset, tmp_path):
    _, manifest = tiny_dataset
    hp = {**SMALL, "input_size": 32, "epochs": 40, "learning_rate": 1e-2}
    res = train(manifest, "single_robot", hp, seed=0, out_dir=tmp_path / "t")
    TeachNet(TrainConfig.from_dict({**hp, "variant": "single_robot"})).save(tmp_path / "untrained")
    p1, g = evaluate(res.checkpoint, manifest, tmp_path / "a.csv")
    p0, _ = evaluate(tmp_path / "untrained", manifest, tmp_path / "b.csv")
    assert np.abs(p1 - g).mean() < np.abs(p0 - g).mean()
