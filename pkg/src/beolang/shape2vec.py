"""Regress subspace coordinates from a single depth image.

A dense network (flattened depth pixels -> 512 relu -> 256 relu -> k
linear) is trained with MSE against the embedding ``W^T o`` of the object
each image was rendered from.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import nnet, render, subspace
from .meshvox import flatten
from .nnet import NetworkSpec

REGRESSOR_MAGIC = b"S2VC"


@dataclass(frozen=True)
class RenderPair:
    image: render.DepthImage
    target: np.ndarray
    object_id: str = ""
    camera: render.Camera | None = None


@dataclass
class RegressorModel:
    network: nnet.Network
    height: int
    width: int
    history: list = field(default_factory=list)

    @property
    def k(self):
        return self.network.output_dim


@dataclass
class RegressorConfig:
    hidden: tuple = (512, 256)
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 40
    seed: int = 0


def _view_seed(seed, obj_index, view_index):
    return [int(seed), 1, int(obj_index), int(view_index)]


def make_training_set(objects, model, renders_per_object, regime, seed=0, height=64, width=64):
    """Render every object from ``renders_per_object`` sampled viewpoints and
    pair each image with the object's subspace embedding.

    ``objects`` is a sequence of ``(object_id, VoxelGrid)``.
    """
    if renders_per_object < 1:
        raise ValueError("renders_per_object must be >= 1")
    pairs = []
    for i, (oid, grid) in enumerate(objects):
        target = subspace.project(model, flatten(grid))
        for r in range(renders_per_object):
            cam = render.sample_viewpoint(regime, _view_seed(seed, i, r), height, width)
            pairs.append(RenderPair(render.render_depth(grid, cam), target, oid, cam))
    return pairs


def _images(imgs):
    return np.stack([(im.values if isinstance(im, render.DepthImage) else np.asarray(im)).reshape(-1)
                     for im in imgs])


def train_regressor(pairs, config=None, on_epoch=None):
    """Minibatch Adam on mean squared error.

    Targets are centered per dimension and divided by one global scale
    while training; the inverse map is folded into the output layer, so the
    saved network predicts raw embeddings directly.
    """
    config = config or RegressorConfig()
    if not pairs:
        raise ValueError("no training pairs")
    h, w = pairs[0].image.height, pairs[0].image.width
    if any(p.image.values.shape != (h, w) for p in pairs):
        raise ValueError("training images differ in size")
    x = _images([p.image for p in pairs])
    y = np.stack([p.target for p in pairs])
    shift = y.mean(axis=0)
    scale = float(np.sqrt(np.mean((y - shift) ** 2)))
    if scale == 0.0:
        scale = 1.0
    yn = (y - shift) / scale

    layers = tuple((d, "relu") for d in config.hidden) + ((y.shape[1], "linear"),)
    net = nnet.init_network(NetworkSpec(h * w, layers, config.seed))
    opt = nnet.AdamState(lr=config.lr)
    rng = np.random.default_rng(config.seed)
    history = []
    n = len(pairs)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            acts = nnet.forward(net, x[idx])
            loss = nnet.mse_loss(acts[-1], yn[idx])
            if not np.isfinite(loss):
                raise FloatingPointError("regressor training diverged to a non-finite loss")
            grads, _ = nnet.backward(net, acts, nnet.mse_grad(acts[-1], yn[idx]))
            nnet.adam_step(net, grads, opt)
            total += loss * len(idx)
        record = {"epoch": epoch, "loss": total / n * scale ** 2}
        history.append(record)
        if on_epoch:
            on_epoch(record)
    return RegressorModel(nnet.fold_output_affine(net, shift, scale), h, w, history)


def embed_depth(model, img):
    """Predicted subspace coordinates for one depth image (or a batch)."""
    if isinstance(img, (list, tuple)):
        x = _images(img)
    else:
        values = img.values if isinstance(img, render.DepthImage) else np.asarray(img, dtype=np.float64)
        if values.shape[-2:] != (model.height, model.width):
            raise ValueError(f"depth image is {values.shape[-2:]}, model expects "
                             f"{(model.height, model.width)}")
        x = values.reshape(-1) if values.ndim == 2 else values.reshape(len(values), -1)
    if x.shape[-1] != model.height * model.width:
        raise ValueError("depth image size does not match the model")
    return nnet.predict(model.network, x)


def regression_error(model, pairs):
    x = _images([p.image for p in pairs])
    y = np.stack([p.target for p in pairs])
    return nnet.mse_loss(nnet.predict(model.network, x), y)


def save_regressor(model, path):
    with open(path, "wb") as fh:
        fh.write(REGRESSOR_MAGIC)
        fh.write(struct.pack("<III", model.height, model.width, model.k))
        nnet.write_network(model.network, fh)


def load_regressor(path):
    with open(path, "rb") as fh:
        if fh.read(4) != REGRESSOR_MAGIC:
            raise ValueError(f"{path}: not a regressor file")
        h, w, k = struct.unpack("<III", fh.read(12))
        net = nnet.read_network(fh)
    if net.input_dim != h * w or net.output_dim != k:
        raise ValueError(f"{path}: header does not match weight block")
    return RegressorModel(net, h, w)
