"""End-to-end orchestration: corpus -> subspace -> regressor -> joint models
-> evaluation, with every artifact under one work directory.

Layout::

    <workdir>/corpus/manifest.jsonl, corpus/meshes/*.obj
    <workdir>/voxels/<id>.vox
    <workdir>/models/subspace.beos, regressor.s2vc, joint_<condition>.jntm,
                     words.txt, provenance.json
    <workdir>/logs/train.jsonl
    <workdir>/results/results.json, results.csv, *.png

The training stages only ever read the train and dev splits; the split
lists and artifact checksums are recorded in ``models/provenance.json``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import evalhar, langground as lg, meshvox, render, shape2vec, subspace, synthgen

logger = logging.getLogger(__name__)

PATH_FIELDS = ("workdir", "corpus", "word_vectors")


class MissingArtifactError(FileNotFoundError):
    """A stage's prerequisite file does not exist."""


@dataclass
class PipelineConfig:
    workdir: str = "work"
    corpus: str | None = None  # manifest path; default <workdir>/corpus/manifest.jsonl
    word_vectors: str | None = None  # GloVe-format file; default hashed table
    seed: int = 0
    shape_class: str = "boxform"
    n_objects: int = 50
    descriptions_per_object: int = 10
    mid_prob: float = 0.05
    split_ratios: tuple = (0.70, 0.15, 0.15)
    resolution: int = 32
    k_max: int = 0  # 0 = n_train - 1
    vbpca_iters: int = 200
    image_size: int = 64
    renders_per_object: int = 30
    regressor_regime: str = "varied"
    regressor_hidden: tuple = (512, 256)
    regressor_epochs: int = 20
    regressor_lr: float = 1e-3
    regressor_batch: int = 32
    joint_renders_per_object: int = 10
    images_per_description: int = 3
    word_dim: int = 16
    joint_lr: float = 1e-4
    joint_batch: int = 64
    lambda_attr: float = 1.0
    patience: int = 20
    max_epochs: int = 300
    images_per_object: int = 10
    shuffle_images_per_object: int = 20
    conditions: tuple = ("full_view", "partial_view", "view_transfer")

    def __post_init__(self):
        for name in ("split_ratios", "regressor_hidden", "conditions"):
            setattr(self, name, tuple(getattr(self, name)))
        checks = [
            (self.n_objects >= 10, "n_objects must be >= 10"),
            (self.descriptions_per_object >= 1, "descriptions_per_object must be >= 1"),
            (2 <= self.resolution <= 256, "resolution must lie in [2, 256]"),
            (self.k_max >= 0, "k_max must be >= 0"),
            (self.image_size >= 8, "image_size must be >= 8"),
            (self.renders_per_object >= 1, "renders_per_object must be >= 1"),
            (self.joint_renders_per_object >= 1, "joint_renders_per_object must be >= 1"),
            (1 <= self.images_per_description <= self.joint_renders_per_object,
             "images_per_description must lie in [1, joint_renders_per_object]"),
            (self.word_dim >= 2, "word_dim must be >= 2"),
            (self.joint_lr > 0 and self.regressor_lr > 0, "learning rates must be positive"),
            (self.lambda_attr >= 0, "lambda_attr must be >= 0"),
            (self.patience >= 1, "patience must be >= 1"),
            (self.images_per_object >= 1, "images_per_object must be >= 1"),
            (0.0 <= self.mid_prob <= 1.0, "mid_prob must lie in [0, 1]"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)
        if len(self.split_ratios) != 3 or abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ValueError("split_ratios must be three numbers summing to 1")
        n_train = int(round(self.split_ratios[0] * self.n_objects))
        n_dev = int(round(self.split_ratios[1] * self.n_objects))
        if min(n_dev, self.n_objects - n_train - n_dev) < evalhar.N_CANDIDATES:
            raise ValueError(f"n_objects={self.n_objects} leaves fewer than {evalhar.N_CANDIDATES} "
                             "dev or test objects")
        synthgen.class_info(self.shape_class)
        render.get_regime(self.regressor_regime)
        for c in self.conditions:
            evalhar.get_condition(c)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    def config_hash(self):
        """Hash of the hyperparameters (paths excluded), for provenance."""
        d = {k: v for k, v in self.to_dict().items() if k not in PATH_FIELDS}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    # paths
    def path(self, *parts):
        return os.path.join(self.workdir, *parts)

    @property
    def manifest_path(self):
        return self.corpus or self.path("corpus", "manifest.jsonl")

    def model_path(self, name):
        return self.path("models", name)

    def joint_path(self, condition):
        return self.model_path(f"joint_{condition}.jntm")


def sub_seed(config, *stream):
    """Deterministic integer seed for one stochastic stage."""
    return int(np.random.SeedSequence([config.seed, *stream]).generate_state(1)[0])


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class TrainLog:
    """Append-only JSON-lines log."""

    def __init__(self, path):
        self.path = path
        if path:
            os.makedirs(os.path.dirname(path) or ".", exist_ok=True)

    def write(self, record):
        if self.path:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# corpus and workspace


def generate_corpus(config):
    out_dir = os.path.dirname(config.manifest_path) or "."
    return synthgen.build_corpus(out_dir, config.n_objects, config.shape_class,
                                 config.descriptions_per_object, seed=config.seed,
                                 mid_prob=config.mid_prob)


@dataclass
class Workspace:
    config: PipelineConfig
    manifest: synthgen.Manifest
    splits: evalhar.Splits
    _grids: dict = field(default_factory=dict)

    def grid(self, object_id):
        if object_id not in self._grids:
            self._grids[object_id] = _cached_grid(self.config, self.manifest.by_id()[object_id])
        return self._grids[object_id]

    def objects(self, split):
        lookup = self.manifest.by_id()
        return [evalhar.EvalObject(i, self.grid(i), lookup[i].scores, lookup[i].descriptions)
                for i in getattr(self.splits, split)]


def _cached_grid(config, obj):
    path = config.path("voxels", f"{obj.object_id}.vox")
    if os.path.exists(path):
        grid = meshvox.load_grid(path)
        if grid.resolution == config.resolution:
            return grid
    grid = meshvox.voxelize(obj.load_mesh(), config.resolution)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    meshvox.save_grid(grid, path)
    return grid


def open_workspace(config):
    if not os.path.exists(config.manifest_path):
        raise MissingArtifactError(f"corpus manifest not found: {config.manifest_path}")
    manifest = synthgen.load_manifest(config.manifest_path)
    splits = evalhar.split_dataset(manifest.ids, config.split_ratios, seed=sub_seed(config, 1))
    return Workspace(config, manifest, splits)


def _require(path, what):
    if not os.path.exists(path):
        raise MissingArtifactError(f"{what} not found: {path} (run the earlier training stage first)")
    return path


def _provenance_path(config):
    return config.model_path("provenance.json")


def read_provenance(config):
    path = _provenance_path(config)
    if not os.path.exists(path):
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _record_artifact(config, ws, name, path, extra=None):
    prov = read_provenance(config)
    prov["config_hash"] = config.config_hash()
    prov["splits"] = ws.splits.as_dict()
    prov.setdefault("artifacts", {})[name] = {"file": os.path.basename(path),
                                              "sha256": sha256_file(path), **(extra or {})}
    with open(_provenance_path(config), "w", encoding="utf-8") as fh:
        json.dump(prov, fh, indent=2, sort_keys=True)
        fh.write("\n")


def check_provenance(config, ws):
    """Refuse to evaluate models trained on a different split."""
    prov = read_provenance(config)
    if prov and prov.get("splits") != ws.splits.as_dict():
        raise ValueError("models were trained on a different split; retrain before evaluating")
    if prov:
        used = set(prov["splits"]["train"]) | set(prov["splits"]["dev"])
        if used & set(ws.splits.test):
            raise ValueError("test objects were used in training")


# ---------------------------------------------------------------------------
# stages


def train_subspace_stage(config, ws, log=None):
    log = log or TrainLog(None)
    data = np.stack([meshvox.flatten(ws.grid(i)) for i in ws.splits.train])
    k_max = config.k_max or len(ws.splits.train) - 1
    k_max = min(k_max, len(ws.splits.train), data.shape[1])
    model = subspace.fit_vbpca(data, k_max, max_iters=config.vbpca_iters, resolution=config.resolution)
    info = model.fit_info
    log.write({"stage": "subspace", "k": model.k, "effective_dim": int(info["effective_dim"]),
               "variance_captured": model.variance_captured, "iterations": int(info["n_iter"]),
               "converged": bool(info["converged"])})
    os.makedirs(config.path("models"), exist_ok=True)
    path = config.model_path("subspace.beos")
    subspace.save_model(model, path)
    _record_artifact(config, ws, "subspace", path)
    return model


def load_subspace(config):
    return subspace.load_model(_require(config.model_path("subspace.beos"), "subspace model"))


def train_regressor_stage(config, ws, sub=None, log=None):
    log = log or TrainLog(None)
    sub = sub or load_subspace(config)
    objects = [(i, ws.grid(i)) for i in ws.splits.train]
    pairs = shape2vec.make_training_set(objects, sub, config.renders_per_object,
                                        config.regressor_regime, seed=sub_seed(config, 2),
                                        height=config.image_size, width=config.image_size)
    cfg = shape2vec.RegressorConfig(config.regressor_hidden, config.regressor_lr,
                                    config.regressor_batch, config.regressor_epochs,
                                    sub_seed(config, 3))
    reg = shape2vec.train_regressor(
        pairs, cfg, on_epoch=lambda r: log.write({"stage": "regressor", **r}))
    path = config.model_path("regressor.s2vc")
    shape2vec.save_regressor(reg, path)
    _record_artifact(config, ws, "regressor", path, {"final_loss": reg.history[-1]["loss"]})
    return reg


def load_regressor(config):
    return shape2vec.load_regressor(_require(config.model_path("regressor.s2vc"), "regressor model"))


def word_table(config, ws=None):
    """Word vectors for the run: a supplied GloVe-format file, else the
    hashed table saved at training time (built from train/dev text)."""
    if config.word_vectors:
        return lg.load_word_vectors(_require(config.word_vectors, "word vector file"))
    path = config.model_path("words.txt")
    if ws is None:
        return lg.load_word_vectors(_require(path, "word table"))
    lookup = ws.manifest.by_id()
    texts = [d for i in ws.splits.train + ws.splits.dev for d in lookup[i].descriptions]
    table = lg.hashed_word_table(lg.vocabulary(texts), config.word_dim, seed=config.seed)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    lg.save_word_vectors(table, path)
    return lg.load_word_vectors(path)  # round trip so training sees the stored values


def _examples(config, table, objects, embeddings, per_description):
    out = []
    for obj in objects:
        attrs = evalhar.binarize_attributes(obj.scores)
        emb = embeddings[obj.object_id]
        for j, text in enumerate(obj.descriptions):
            sent = lg.embed_sentence(table, text).values
            for t in range(per_description):
                shape = emb[(j * per_description + t) % len(emb)]
                out.append(lg.GroundingExample(shape, sent, attrs, 1, obj.object_id,
                                               f"{obj.object_id}:{j}", text))
    return out


def train_joint_stage(config, ws, condition, sub=None, reg=None, table=None, log=None):
    log = log or TrainLog(None)
    cond = evalhar.get_condition(condition)
    sub = sub or load_subspace(config)
    if cond.source == "regressor":
        reg = reg or load_regressor(config)
    table = table or word_table(config)
    models = evalhar.Models(sub, None, table, reg)
    train_objs, dev_objs = ws.objects("train"), ws.objects("dev")
    if cond.source == "eq1_projection":
        per = 1
        tr_emb = evalhar.embed_objects(models, cond, train_objs, 1, 0)
        dev_emb = evalhar.embed_objects(models, cond, dev_objs, 1, 0)
    else:
        per = config.images_per_description
        n = config.joint_renders_per_object
        seed = sub_seed(config, 4)
        tr_emb = evalhar.embed_objects(models, cond, train_objs, n, seed, cond.train_regime, stream=3)
        dev_emb = evalhar.embed_objects(models, cond, dev_objs, n, seed, cond.train_regime, stream=4)
    positives = _examples(config, table, train_objs, tr_emb, per)
    dev = _examples(config, table, dev_objs, dev_emb, 1)
    pairs = lg.make_pairs(positives, 1.0, seed=sub_seed(config, 5))
    jcfg = lg.JointConfig(lr=config.joint_lr, batch_size=config.joint_batch,
                          lambda_attr=config.lambda_attr, patience=config.patience,
                          max_epochs=config.max_epochs, seed=sub_seed(config, 6))
    result = lg.train_joint(pairs, dev, jcfg,
                            on_epoch=lambda r: log.write({"stage": f"joint:{cond.name}", **r}))
    path = config.joint_path(cond.name)
    lg.save_joint_model(result.model, path)
    _record_artifact(config, ws, f"joint:{cond.name}", path,
                     {"best_epoch": result.best_epoch, "best_dev_top1": result.best_dev})
    return result


def load_models(config, condition):
    cond = evalhar.get_condition(condition)
    sub = load_subspace(config)
    reg = load_regressor(config) if cond.source == "regressor" else None
    joint = lg.load_joint_model(_require(config.joint_path(cond.name), f"{cond.name} joint model"))
    return evalhar.Models(sub, joint, word_table(config), reg)


def train_all(config, ws=None, log=None, stages=("subspace", "regressor", "joint")):
    ws = ws or open_workspace(config)
    log = log or TrainLog(config.path("logs", "train.jsonl"))
    sub = reg = None
    if "subspace" in stages:
        sub = train_subspace_stage(config, ws, log)
    if "regressor" in stages:
        reg = train_regressor_stage(config, ws, sub, log)
    if "joint" in stages:
        sub = sub or load_subspace(config)
        table = word_table(config, ws)
        needs_reg = any(evalhar.get_condition(c).source == "regressor" for c in config.conditions)
        if needs_reg:
            reg = reg or load_regressor(config)
        for c in config.conditions:
            train_joint_stage(config, ws, c, sub, reg, table, log)
    return ws


# ---------------------------------------------------------------------------
# evaluation


def evaluate(config, ws=None, conditions=None):
    """Score each condition on the test split; returns result records with
    the shuffled-description baseline attached."""
    ws = ws or open_workspace(config)
    check_provenance(config, ws)
    test = ws.objects("test")
    seed = sub_seed(config, 7)
    records = []
    for name in conditions or config.conditions:
        cond = evalhar.get_condition(name)
        models = load_models(config, cond)
        n_img = max(config.images_per_object, config.shuffle_images_per_object)
        emb = evalhar.embed_objects(models, cond, test, n_img, seed)
        main = {k: v[:config.images_per_object] for k, v in emb.items()}
        retrieval = evalhar.eval_retrieval(models, cond, test, config.images_per_object, seed,
                                           embeddings=main)
        n_shuf = config.shuffle_images_per_object
        shuffled = evalhar.eval_retrieval(models, cond, test, n_shuf, seed, shuffle_labels=True,
                                          embeddings={k: v[:n_shuf] for k, v in emb.items()})
        attrs = evalhar.eval_attributes(models, cond, test, ws.manifest.attributes,
                                        config.images_per_object, seed, embeddings=main)
        records.append(evalhar.results_record(retrieval, attrs, ws.manifest.shape_class,
                                              config.seed, config.config_hash(), shuffled))
    return records
