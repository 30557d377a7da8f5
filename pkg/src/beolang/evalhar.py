"""Splits, retrieval trials and the three evaluation conditions.

A retrieval trial shows the joint model three candidate objects (each
observed through an embedding) and one description; the model ranks the
candidates by similarity. Trials depend only on the test objects and the
seed, so every condition is scored on the same trials.
"""

from __future__ import annotations

import csv
import json
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import langground as lg
from . import render, shape2vec, subspace
from .meshvox import flatten

MIDPOINT = 3.0
N_CANDIDATES = 3


@dataclass(frozen=True)
class Splits:
    train: tuple
    dev: tuple
    test: tuple

    def __post_init__(self):
        parts = [set(self.train), set(self.dev), set(self.test)]
        if sum(map(len, parts)) != len(set().union(*parts)):
            raise ValueError("splits overlap")

    def as_dict(self):
        return {"train": list(self.train), "dev": list(self.dev), "test": list(self.test)}


def split_dataset(ids, ratios=(0.70, 0.15, 0.15), seed=0):
    """Object-level random split with counts rounded to the nearest object."""
    ids = list(getattr(ids, "ids", ids))
    if len(ids) < 10:
        raise ValueError("need at least 10 objects to split")
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must be three non-negative numbers summing to 1")
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate object ids")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_train = int(round(ratios[0] * len(ids)))
    n_dev = int(round(ratios[1] * len(ids)))
    return Splits(tuple(shuffled[:n_train]), tuple(shuffled[n_train:n_train + n_dev]),
                  tuple(shuffled[n_train + n_dev:]))


def binarize_attributes(scores):
    s = np.asarray(scores, dtype=np.float64)
    if np.any((s < 1.0) | (s > 5.0)) or not np.all(np.isfinite(s)):
        raise ValueError("attribute scores must lie in [1, 5]")
    return (s > MIDPOINT).astype(np.int64)


# ---------------------------------------------------------------------------
# conditions


@dataclass(frozen=True)
class Condition:
    name: str
    train_regime: str | None
    eval_regime: str | None
    source: str  # "eq1_projection" or "regressor"

    def __post_init__(self):
        if self.source not in ("eq1_projection", "regressor"):
            raise ValueError(f"unknown embedding source {self.source!r}")
        if self.source == "regressor" and (self.train_regime is None or self.eval_regime is None):
            raise ValueError("regressor conditions need train and eval regimes")


CONDITIONS = {
    "full_view": Condition("full_view", None, None, "eq1_projection"),
    "partial_view": Condition("partial_view", "varied", "varied", "regressor"),
    "view_transfer": Condition("view_transfer", "frontal", "side_rear", "regressor"),
}


def get_condition(name):
    if isinstance(name, Condition):
        return name
    try:
        return CONDITIONS[name]
    except KeyError:
        raise ValueError(f"unknown condition {name!r}; expected one of {sorted(CONDITIONS)}") from None


@dataclass(frozen=True)
class EvalObject:
    object_id: str
    grid: object
    scores: tuple
    descriptions: tuple


@dataclass
class Models:
    subspace: subspace.SubspaceModel
    joint: lg.JointModel
    table: lg.WordTable
    regressor: shape2vec.RegressorModel | None = None


def object_seed(seed, object_id, stream):
    """Seed material for one object's renders, independent of list order."""
    return [int(seed), int(stream), zlib.crc32(object_id.encode("utf-8"))]


def render_views(grid, regime, n, seed, object_id, stream, height=64, width=64):
    base = object_seed(seed, object_id, stream)
    return [render.render_depth(grid, render.sample_viewpoint(regime, base + [i], height, width))
            for i in range(n)]


def embed_objects(models, condition, objects, images_per_object, seed, regime=None, stream=2):
    """``{object_id: (images_per_object, k)}`` shape embeddings as the
    condition observes them: subspace projections of the true grids for
    full view (repeated per image slot), regressor outputs on fresh renders
    otherwise."""
    condition = get_condition(condition)
    out = {}
    for obj in objects:
        if condition.source == "eq1_projection":
            e = subspace.project(models.subspace, flatten(obj.grid))
            out[obj.object_id] = np.repeat(e[None, :], images_per_object, axis=0)
        else:
            if models.regressor is None:
                raise ValueError(f"condition {condition.name} needs a regressor model")
            reg = models.regressor
            imgs = render_views(obj.grid, regime or condition.eval_regime, images_per_object, seed,
                                obj.object_id, stream, reg.height, reg.width)
            out[obj.object_id] = np.atleast_2d(shape2vec.embed_depth(reg, imgs))
    return out


# ---------------------------------------------------------------------------
# trials


@dataclass(frozen=True)
class RetrievalTrial:
    candidates: tuple  # shape embeddings
    description: str
    true_index: int
    candidate_ids: tuple = ()

    def __post_init__(self):
        if not 0 <= self.true_index < len(self.candidates):
            raise ValueError("true index outside the candidate list")
        if self.candidate_ids and len(set(self.candidate_ids)) != len(self.candidate_ids):
            raise ValueError("candidates must come from distinct objects")


@dataclass(frozen=True)
class TrialPlan:
    """Condition-independent trial layout: which object/image fills each
    candidate slot and which description is shown."""

    query_object: int
    description: tuple  # (object index, description index) the text comes from
    slots: tuple  # ((object index, image index), ...)
    true_index: int


def rank_candidates(similarities):
    """Indices by descending similarity; ties go to the lower index."""
    s = np.asarray(similarities, dtype=np.float64)
    return [int(i) for i in np.lexsort((np.arange(len(s)), -s))]


def run_trial(model, trial, table):
    sentence = lg.embed_sentence(table, trial.description)
    sims = [lg.joint_similarity(model, c, sentence) for c in trial.candidates]
    return rank_candidates(sims)


def plan_trials(objects, images_per_object, seed, n_candidates=N_CANDIDATES, shuffle_labels=False):
    """One trial per (test object, description, image index).

    Distractors are drawn uniformly without replacement from the other test
    objects, each showing a random one of its images; the true object's
    slot is shuffled. With ``shuffle_labels`` every trial instead shows a
    description drawn uniformly from the whole test pool, independently per
    trial, which breaks the text/shape correspondence.
    """
    if len(objects) < n_candidates:
        raise ValueError(f"need at least {n_candidates} test objects")
    rng = np.random.default_rng([int(seed), 7])
    shuffle_rng = np.random.default_rng([int(seed), 11])
    pool = [(o, d) for o, obj in enumerate(objects) for d in range(len(obj.descriptions))]
    plans = []
    n = len(objects)
    for o, obj in enumerate(objects):
        others = [j for j in range(n) if j != o]
        for d in range(len(obj.descriptions)):
            for img in range(images_per_object):
                picks = rng.choice(len(others), n_candidates - 1, replace=False)
                members = [(o, img)] + [(others[p], int(rng.integers(images_per_object))) for p in picks]
                order = rng.permutation(n_candidates)
                slots = tuple(members[k] for k in order)
                true_index = int(np.flatnonzero(order == 0)[0])
                text = pool[shuffle_rng.integers(len(pool))] if shuffle_labels else (o, d)
                plans.append(TrialPlan(o, text, slots, true_index))
    return plans


@dataclass
class RetrievalResult:
    condition: str
    top1: float
    top2: float
    n_trials: int
    shuffled: bool = False
    per_object: dict = field(default_factory=dict)

    def accuracy(self, k):
        return {1: self.top1, 2: self.top2}[k]


def eval_retrieval(models, condition, objects, images_per_object=10, seed=0, shuffle_labels=False,
                   embeddings=None):
    """Top-1/top-2 retrieval accuracy over planned trials."""
    condition = get_condition(condition)
    plans = plan_trials(objects, images_per_object, seed, shuffle_labels=shuffle_labels)
    if embeddings is None:
        embeddings = embed_objects(models, condition, objects, images_per_object, seed)
    shape_vecs = np.concatenate([embeddings[o.object_id] for o in objects])
    shape_out = lg._unit_rows(lg.embed_shapes(models.joint, shape_vecs))
    texts = [[lg.embed_sentence(models.table, t).values for t in o.descriptions] for o in objects]
    sent_rows = np.stack([v for row in texts for v in row])
    sent_out = lg._unit_rows(lg.embed_sentences(models.joint, sent_rows))
    text_offset = np.cumsum([0] + [len(t) for t in texts])

    hits1 = hits2 = 0
    per_object = {o.object_id: [0, 0, 0] for o in objects}
    for plan in plans:
        s = sent_out[text_offset[plan.description[0]] + plan.description[1]]
        sims = [float(shape_out[oi * images_per_object + im] @ s) for oi, im in plan.slots]
        rank = rank_candidates(sims)
        h1 = rank[0] == plan.true_index
        h2 = plan.true_index in rank[:2]
        hits1 += h1
        hits2 += h2
        rec = per_object[objects[plan.query_object].object_id]
        rec[0] += h1
        rec[1] += h2
        rec[2] += 1
    n = len(plans)
    return RetrievalResult(condition.name, hits1 / n, hits2 / n, n, shuffle_labels,
                           {k: tuple(v) for k, v in per_object.items()})


# ---------------------------------------------------------------------------
# attributes


def f1_scores(pred, truth):
    """Per-column F1 = 2TP / (2TP + FP + FN); a column with no positives in
    either predictions or truth scores 1.0."""
    p = np.asarray(pred).astype(bool)
    t = np.asarray(truth).astype(bool)
    if p.shape != t.shape:
        raise ValueError("prediction and truth shapes differ")
    p, t = np.atleast_2d(p), np.atleast_2d(t)
    tp = np.sum(p & t, axis=0)
    fp = np.sum(p & ~t, axis=0)
    fn = np.sum(~p & t, axis=0)
    denom = 2 * tp + fp + fn
    return np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 1.0)


@dataclass
class AttributeResult:
    condition: str
    names: tuple
    f1: tuple
    n_images: int

    @property
    def macro_f1(self):
        return float(np.mean(self.f1))


def eval_attributes(models, condition, objects, attribute_names=None, images_per_object=10, seed=0,
                    embeddings=None):
    """Shape-side attribute predictions (threshold 0.5) on every embedded
    test image, scored per attribute against binarized scores."""
    condition = get_condition(condition)
    a = models.joint.n_attributes
    names = tuple(attribute_names) if attribute_names else tuple(f"attr{i}" for i in range(a))
    if len(names) != a or any(len(o.scores) != a for o in objects):
        raise ValueError(f"attribute count mismatch: model predicts {a}")
    if embeddings is None:
        embeddings = embed_objects(models, condition, objects, images_per_object, seed)
    vecs = np.concatenate([embeddings[o.object_id] for o in objects])
    truth = np.concatenate([np.repeat(binarize_attributes(o.scores)[None, :],
                                      len(embeddings[o.object_id]), axis=0) for o in objects])
    pred = lg.predict_attributes_from_shape(models.joint, vecs) > 0.5
    f1 = f1_scores(pred, truth)
    return AttributeResult(condition.name, names, tuple(float(x) for x in f1), len(vecs))


# ---------------------------------------------------------------------------
# reports


def results_record(retrieval, attributes, shape_class, seed, config_hash, shuffled=None):
    rec = {
        "condition": retrieval.condition,
        "class": shape_class,
        "top1": retrieval.top1,
        "top2": retrieval.top2,
        "n_trials": retrieval.n_trials,
        "per_object": {k: list(v) for k, v in retrieval.per_object.items()},
        "attribute_f1": dict(zip(attributes.names, attributes.f1)),
        "macro_f1": attributes.macro_f1,
        "seed": seed,
        "config_hash": config_hash,
    }
    if shuffled is not None:
        rec["shuffled_top1"] = shuffled.top1
        rec["shuffled_top2"] = shuffled.top2
        rec["shuffled_n_trials"] = shuffled.n_trials
    return rec


def write_results(records, json_path, csv_path=None):
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump({"results": records}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if csv_path is None:
        return
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["condition", "class", "metric", "value"])
        for r in records:
            for metric in ("top1", "top2", "shuffled_top1", "shuffled_top2", "macro_f1"):
                if metric in r:
                    w.writerow([r["condition"], r["class"], metric, f"{r[metric]:.6f}"])
            for name, v in r["attribute_f1"].items():
                w.writerow([r["condition"], r["class"], f"f1_{name}", f"{v:.6f}"])
