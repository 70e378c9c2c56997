"""Training losses. Inputs are single vectors or ``(N, D)`` batches; a batch
loss is the mean of the per-sample losses and gradients are taken with
respect to that mean."""

import numpy as np

CLAMP_EPS = 1e-7


def _batch(x):
    x = np.asarray(x)
    return (x[None], True) if x.ndim == 1 else (x, False)


def _per_sample_mean(v):
    return float(np.mean(v, dtype=np.float64))


def loss_ang(theta_hat, j, grad=False):
    """``||theta_hat - j||^2`` (sum over joints)."""
    t, single = _batch(theta_hat)
    d = t - np.asarray(j, dtype=t.dtype).reshape(t.shape)
    value = _per_sample_mean(np.sum(d * d, axis=1, dtype=np.float64))
    if not grad:
        return value
    g = 2.0 * d / len(t)
    return value, (g[0] if single else g)


def loss_phy(theta_hat, theta_min, theta_max, grad=False):
    """Hinge on limit violations: ``sum max(0, t - max) + max(0, min - t)``."""
    t, single = _batch(theta_hat)
    lo = np.asarray(theta_min, dtype=t.dtype)
    hi = np.asarray(theta_max, dtype=t.dtype)
    over = np.maximum(0, t - hi)
    under = np.maximum(0, lo - t)
    value = _per_sample_mean(np.sum(over, axis=1, dtype=np.float64) + np.sum(under, axis=1, dtype=np.float64))
    if not grad:
        return value
    g = ((t > hi).astype(t.dtype) - (t < lo).astype(t.dtype)) / len(t)
    return value, (g[0] if single else g)


def loss_cons_hard(z_h, z_r, grad=False, squared=False):
    """``||z_h - z_r||_2`` per sample (``squared`` gives the squared norm).

    The gradient at ``z_h == z_r`` is taken as zero. ``z_r`` is treated as a
    constant, so only the gradient on ``z_h`` is returned.
    """
    zh, single = _batch(z_h)
    d = zh - np.asarray(z_r, dtype=zh.dtype).reshape(zh.shape)
    sq = np.sum(d.astype(np.float64) ** 2, axis=1)
    if squared:
        value = _per_sample_mean(sq)
        g = 2.0 * d / len(zh)
    else:
        norm = np.sqrt(sq)
        value = _per_sample_mean(norm)
        safe = np.where(norm > 0, norm, 1.0)
        g = np.where(norm[:, None] > 0, d / safe[:, None], 0.0).astype(zh.dtype) / len(zh)
    if not grad:
        return value
    return value, (g[0] if single else g)


def clamp_prob(p):
    return np.clip(p, CLAMP_EPS, 1.0 - CLAMP_EPS)


def soft_consistency_from_prob(p, grad=False):
    """``log(1 - clamp(p))`` averaged over the batch; gradient w.r.t. ``p``."""
    p = np.atleast_1d(np.asarray(p, dtype=np.float64))
    pc = clamp_prob(p)
    value = float(np.mean(np.log1p(-pc)))
    if not grad:
        return value
    inside = (p > CLAMP_EPS) & (p < 1.0 - CLAMP_EPS)
    return value, np.where(inside, -1.0 / (1.0 - pc), 0.0) / len(p)


def loss_cons_soft(disc, z_h, grad=False):
    """Realism-score loss ``log(1 - D(z_h))``; gradient flows to ``z_h``."""
    zh, single = _batch(z_h)
    p, cache = disc.forward(zh)
    if not grad:
        return soft_consistency_from_prob(p)
    value, dp = soft_consistency_from_prob(p, grad=True)
    dz, _ = disc.backward(cache, dp.astype(p.dtype))
    return value, (dz[0] if single else dz)


def discriminator_loss(disc, z_r, z_h):
    """``-(log D(z_r) + log(1 - D(z_h)))`` batch mean, and D's parameter grads.

    Minimizing it is the discriminator's maximization of the realism objective.
    """
    p_r, c_r = disc.forward(z_r)
    p_h, c_h = disc.forward(z_h)
    pr, ph = clamp_prob(p_r.astype(np.float64)), clamp_prob(p_h.astype(np.float64))
    n = len(p_r)
    value = float(-np.mean(np.log(pr)) - np.mean(np.log1p(-ph)))
    in_r = (p_r > CLAMP_EPS) & (p_r < 1 - CLAMP_EPS)
    in_h = (p_h > CLAMP_EPS) & (p_h < 1 - CLAMP_EPS)
    dpr = np.where(in_r, -1.0 / pr, 0.0) / n
    dph = np.where(in_h, 1.0 / (1.0 - ph), 0.0) / n
    _, g_r = disc.backward(c_r, dpr.astype(np.float32))
    _, g_h = disc.backward(c_h, dph.astype(np.float32))
    return value, {k: g_r[k] + g_h[k] for k in g_r}


def loss_teach(theta_hat, j, theta_min, theta_max):
    return loss_ang(theta_hat, j) + loss_phy(theta_hat, theta_min, theta_max)


def loss_stud(theta_hat, j, theta_min, theta_max, cons, alpha):
    return loss_ang(theta_hat, j) + alpha * cons + loss_phy(theta_hat, theta_min, theta_max)
