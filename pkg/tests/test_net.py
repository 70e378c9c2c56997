import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from teachnet.net.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from teachnet.net.gradcheck import run_all
from teachnet.net.layers import BatchNorm1d, Conv2D, Linear
from teachnet.net.losses import (
    CLAMP_EPS,
    clamp_prob,
    loss_ang,
    loss_cons_hard,
    loss_cons_soft,
    loss_phy,
    loss_stud,
    loss_teach,
    soft_consistency_from_prob,
)
from teachnet.net.model import Branch, Discriminator, NetworkConfig, SGDMomentum

CFG = NetworkConfig(input_size=16, channels=(2, 3, 4), n_residual=1, latent_dim=6, hidden_dim=8)
LO, HI = -np.ones(17), np.ones(17)


def _branch(alignment="late", seed=0):
    return Branch(NetworkConfig(**{**CFG.to_dict(), "channels": (2, 3, 4), "alignment": alignment}),
                  np.random.default_rng(seed))


def _naive_conv(x, W, b, stride, pad):
    # direct nested-loop correlation
    n, c, h, w = x.shape
    co, _, k, _ = W.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    out = np.zeros((n, co, ho, ho))
    for i in range(ho):
        for j in range(ho):
            patch = xp[:, :, i * stride:i * stride + k, j * stride:j * stride + k]
            out[:, :, i, j] = np.einsum("nckl,ockl->no", patch, W) + b
    return out


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_matches_naive(stride, rng):
    conv = Conv2D(2, 3, rng, stride=stride)
    x = rng.standard_normal((2, 2, 7, 7)).astype(np.float32)
    out, _ = conv.forward(x)
    ref = _naive_conv(x.astype(float), conv.params["W"].astype(float), conv.params["b"].astype(float), stride, 1)
    np.testing.assert_allclose(out, ref, atol=1e-5)


def test_linear_without_bias(rng):
    lin = Linear(4, 3, rng, bias=False)
    assert set(lin.params) == {"W"}
    x = rng.standard_normal((5, 4)).astype(np.float32)
    np.testing.assert_allclose(lin.forward(x)[0], x @ lin.params["W"], rtol=1e-6)


def test_batchnorm_train_statistics(rng):
    bn = BatchNorm1d(3)
    x = rng.normal(4.0, 3.0, (64, 3)).astype(np.float32)
    y, _ = bn.forward(x, train=True)
    np.testing.assert_allclose(y.mean(axis=0), 0, atol=1e-5)
    np.testing.assert_allclose(y.std(axis=0), 1, atol=1e-3)


@pytest.mark.parametrize("alignment", ["early", "late"])
def test_branch_shapes_and_determinism(alignment, rng):
    x = rng.uniform(-1, 1, (3, 16, 16)).astype(np.float32)
    a, b = _branch(alignment), _branch(alignment)
    z, theta, _ = a.forward(x, train=False)
    z2, theta2, _ = b.forward(x, train=False)
    assert z.shape == (3, 6) and theta.shape == (3, 17)
    np.testing.assert_array_equal(theta, theta2)
    np.testing.assert_array_equal(z, z2)
    with pytest.raises(ValueError):
        a.forward(np.zeros((3, 15, 15)))


def test_zero_upstream_gives_zero_grads(rng):
    br = _branch()
    _, _, cache = br.forward(rng.uniform(-1, 1, (4, 16, 16)).astype(np.float32))
    grads = br.backward(cache, np.zeros((4, 17), np.float32))
    assert set(grads) == set(br.parameters())
    assert all(not np.any(g) for g in grads.values())


def test_output_bias_sets_initial_prediction():
    br = Branch(CFG, np.random.default_rng(0), output_bias=np.full(17, 0.3))
    np.testing.assert_array_equal(br.regression.layers[-1].params["b"], np.float32(0.3))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_discriminator_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    d = Discriminator(CFG, rng)
    p, _ = d.forward(rng.standard_normal((5, 6)) * 10)
    assert np.all((p >= 0) & (p <= 1))


def test_loss_identities(rng):
    j = rng.uniform(-1, 1, (4, 17))
    assert loss_ang(j, j) == 0.0
    v, g = loss_ang(j, j, grad=True)
    assert not np.any(g)
    t = j + 0.5
    assert loss_ang(t, j) == pytest.approx(17 * 0.25)
    assert loss_phy(j, LO, HI) == 0.0
    over = np.zeros(17)
    over[2] = 1.5
    assert loss_phy(over, LO, HI) == pytest.approx(0.5)
    np.testing.assert_array_equal(loss_phy(over, LO, HI, grad=True)[1], np.eye(17)[2])
    z = rng.standard_normal((3, 6))
    assert loss_cons_hard(z, z) == 0.0
    assert not np.any(loss_cons_hard(z, z, grad=True)[1])
    assert loss_cons_hard(np.full(6, 1.0), np.zeros(6)) == pytest.approx(np.sqrt(6))
    assert loss_cons_hard(np.full(6, 1.0), np.zeros(6), squared=True) == pytest.approx(6)


def test_soft_consistency_values():
    assert soft_consistency_from_prob(0.5) == pytest.approx(np.log(0.5))
    assert soft_consistency_from_prob(1.0) == pytest.approx(np.log(CLAMP_EPS), rel=1e-6)
    assert np.isfinite(soft_consistency_from_prob(1.0))
    assert clamp_prob(np.array([0.0]))[0] == CLAMP_EPS
    _, g = soft_consistency_from_prob(np.array([1.0, 0.5]), grad=True)
    assert g[0] == 0.0 and g[1] == pytest.approx(-1.0)


def test_loss_soft_matches_discriminator(rng):
    d = Discriminator(CFG, rng)
    z = rng.standard_normal((4, 6))
    p, _ = d.forward(z)
    assert loss_cons_soft(d, z) == pytest.approx(float(np.mean(np.log1p(-clamp_prob(p.astype(float))))))


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 5.0), st.integers(0, 2**32 - 1))
def test_composite_losses(cons, seed):
    rng = np.random.default_rng(seed)
    t, j = rng.uniform(-2, 2, (2, 17))
    assert loss_teach(t, j, LO, HI) == loss_ang(t, j) + loss_phy(t, LO, HI)
    for alpha in (1.0, 0.1):
        assert loss_stud(t, j, LO, HI, cons, alpha) == loss_ang(t, j) + alpha * cons + loss_phy(t, LO, HI)


def test_sgd_momentum_update():
    p = {"w": np.ones(2, np.float32)}
    opt = SGDMomentum(lr=0.1, momentum=0.5)
    opt.step(p, {"w": np.ones(2)})
    np.testing.assert_allclose(p["w"], 0.9)
    opt.step(p, {"w": np.ones(2)})
    np.testing.assert_allclose(p["w"], 0.9 - 0.1 * 1.5, rtol=1e-6)


def test_checkpoint_roundtrip(tmp_path, rng):
    t = {"a": rng.standard_normal((2, 3)).astype(np.float32), "b": np.arange(4, dtype=np.float32)}
    save_checkpoint(tmp_path / "c", {"x": 1}, t)
    head, back = load_checkpoint(tmp_path / "c")
    assert head["x"] == 1 and list(back) == ["a", "b"]
    for k in t:
        np.testing.assert_array_equal(back[k], t[k])
    raw = (tmp_path / "c").read_bytes()
    (tmp_path / "d").write_bytes(raw[:-4])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "d")
    (tmp_path / "e").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "e")


def test_network_config_validation():
    with pytest.raises(ValueError):
        NetworkConfig(alignment="middle")
    with pytest.raises(ValueError):
        NetworkConfig(consistency="maybe")
    assert NetworkConfig(consistency="soft").alpha == 0.1
    assert NetworkConfig.from_dict(CFG.to_dict()) == CFG


def test_gradient_checks_pass_other_seed():
    results = run_all(seed=3, n_probes=30)
    bad = [(r.name, r.max_rel_error) for r in results if not r.passed]
    assert not bad
