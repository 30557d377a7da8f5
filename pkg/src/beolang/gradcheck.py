"""Finite-difference checks for every trained architecture and loss.

The regressor keeps its real hidden widths but reads a small image so the
check stays fast; the joint model is checked at full size through the
combined objective and also head by head.
"""

from __future__ import annotations

import numpy as np

from . import langground as lg
from . import nnet
from .nnet import NetworkSpec


def _sub_check(params, loss_fn, grads, max_params, seed):
    return nnet.check_gradients(params, loss_fn, grads, max_params=max_params, seed=seed)


def check_regressor(seed=0, image=12, k=8, hidden=(512, 256), batch=4, max_params=3000):
    rng = np.random.default_rng([seed, 1])
    layers = tuple((h, "relu") for h in hidden) + ((k, "linear"),)
    net = nnet.init_network(NetworkSpec(image * image, layers, seed))
    x = rng.random((batch, image * image))
    y = rng.normal(size=(batch, k))
    return nnet.gradient_check(net, x, "mse", y, max_params=max_params, seed=seed)


def _joint_batch(seed, k, d, a, n):
    rng = np.random.default_rng([seed, 2])
    shapes = rng.normal(size=(n, k))
    sents = rng.normal(size=(n, d))
    attrs = (rng.random((n, a)) > 0.5).astype(np.float64)
    labels = np.where(np.arange(n) % 2 == 0, 1, -1)
    return shapes, sents, attrs, labels


def check_joint(seed=0, k=12, d=16, a=4, n=8, lambda_attr=1.0, max_params=6000):
    """Whole objective (cosine-embedding + both BCE heads) w.r.t. every
    parameter of all four networks."""
    model = lg.init_joint_model(k, d, a, seed=seed)
    batch = _joint_batch(seed, k, d, a, n)
    _, grads = lg.joint_objective(model, *batch, lambda_attr=lambda_attr)
    return _sub_check(model.params(), lambda: lg.joint_objective(model, *batch, lambda_attr)[0],
                      grads, max_params, seed)


def _split_check(model, batch, which, max_params, seed, lambda_attr=1.0):
    nets = model.networks()
    offsets = np.cumsum([0] + [len(n.params()) for n in nets])
    _, grads = lg.joint_objective(model, *batch, lambda_attr=lambda_attr)
    lo, hi = offsets[which], offsets[which + 1]
    return _sub_check(nets[which].params(),
                      lambda: lg.joint_objective(model, *batch, lambda_attr)[0],
                      grads[lo:hi], max_params, seed)


def check_cosine_loss(seed=0, n=6, dim=5, margin=0.1):
    rng = np.random.default_rng([seed, 3])
    x = rng.normal(size=(n, dim))
    y = rng.normal(size=(n, dim))
    labels = np.where(np.arange(n) % 2 == 0, 1, -1)
    _, gx, gy, _ = nnet.cosine_embedding_batch(x, y, labels, margin)
    return nnet.check_gradients([x, y], lambda: nnet.cosine_embedding_batch(x, y, labels, margin)[0],
                                [gx, gy])


def check_bce_loss(seed=0, n=5, a=4):
    rng = np.random.default_rng([seed, 4])
    p = rng.uniform(0.05, 0.95, size=(n, a))
    t = (rng.random((n, a)) > 0.5).astype(np.float64)
    return nnet.check_gradients([p], lambda: nnet.bce_loss(p, t), [nnet.bce_grad(p, t)])


def check_mse_loss(seed=0, n=5, k=6):
    rng = np.random.default_rng([seed, 5])
    p = rng.normal(size=(n, k))
    t = rng.normal(size=(n, k))
    return nnet.check_gradients([p], lambda: nnet.mse_loss(p, t), [nnet.mse_grad(p, t)])


def run_all(seed=0, k=12, word_dim=16, n_attributes=4):
    """``[(name, max relative error), ...]`` for each architecture and loss."""
    model = lg.init_joint_model(k, word_dim, n_attributes, seed=seed)
    batch = _joint_batch(seed, k, word_dim, n_attributes, 8)
    return [
        ("regressor", check_regressor(seed)),
        ("joint_shape_branch", _split_check(model, batch, 0, 4000, seed)),
        ("joint_language_branch", _split_check(model, batch, 1, 4000, seed)),
        ("shape_attribute_head", _split_check(model, batch, 2, 4000, seed)),
        ("language_attribute_head", _split_check(model, batch, 3, 4000, seed)),
        ("loss_mse", check_mse_loss(seed)),
        ("loss_bce", check_bce_loss(seed)),
        ("loss_cosine_embedding", check_cosine_loss(seed)),
    ]
