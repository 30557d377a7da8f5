"""Synthetic labelled shape corpus.

Three parametric classes stand in for couches, cars and airplanes. Each
has four attributes driven by controls in [0, 1]; an attribute's 1-5 score
is ``1 + 4 * control``, so scores are an exact function of the parameters.
Descriptions come from per-class templates and mention only attributes
whose score is extreme (<= 2 or >= 4).

Manifest format (JSON lines, UTF-8)::

    {"format": "beolang-manifest/1", "class": ..., "attributes": [...]}
    {"id": ..., "mesh": <path relative to manifest>, "scores": [...], "descriptions": [...]}
    ...
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .meshvox import TriMesh, load_mesh, save_obj

MANIFEST_FORMAT = "beolang-manifest/1"
LOW_EXTREME = 2.0
HIGH_EXTREME = 4.0


@dataclass(frozen=True)
class ClassInfo:
    noun: tuple
    attributes: tuple
    # per attribute: (phrase when low, phrase when high, kind) with kind
    # "adj" (goes before the noun) or "suffix" (after it)
    lexicon: tuple
    templates: tuple


CLASSES = {
    "boxform": ClassInfo(
        noun=("couch", "sofa"),
        attributes=("bent", "arms", "long", "plush"),
        lexicon=(("straight", "bent", "adj"),
                 ("with no arms", "with arms", "suffix"),
                 ("short", "long", "adj"),
                 ("thin", "plush", "adj")),
        templates=("a {adj} {noun} {suffix}", "the {adj} {noun} {suffix}",
                   "pick up the {adj} {noun} {suffix}", "{adj} {noun} {suffix}",
                   "i want the {adj} {noun} {suffix}"),
    ),
    "slabform": ClassInfo(
        noun=("car", "vehicle"),
        attributes=("long", "curvy", "low", "spoiler"),
        lexicon=(("short", "long", "adj"),
                 ("boxy", "curvy", "adj"),
                 ("tall", "low", "adj"),
                 ("with no spoiler", "with a spoiler", "suffix")),
        templates=("a {adj} {noun} {suffix}", "the {adj} {noun} {suffix}",
                   "find the {adj} {noun} {suffix}", "{adj} {noun} {suffix}"),
    ),
    "wingform": ClassInfo(
        noun=("plane", "airplane"),
        attributes=("propeller", "swept", "engines", "long"),
        lexicon=(("jet", "propeller", "adj"),
                 ("straight winged", "swept", "adj"),
                 ("with no engine pods", "with engine pods", "suffix"),
                 ("stubby", "long", "adj")),
        templates=("a {adj} {noun} {suffix}", "the {adj} {noun} {suffix}",
                   "show me the {adj} {noun} {suffix}", "{adj} {noun} {suffix}"),
    ),
}


def class_info(shape_class):
    try:
        return CLASSES[shape_class]
    except KeyError:
        raise ValueError(f"unknown shape class {shape_class!r}; expected one of {sorted(CLASSES)}") from None


@dataclass(frozen=True)
class ShapeParams:
    shape_class: str
    controls: tuple  # one value in [0, 1] per attribute
    nuisance: tuple = (0.5, 0.5, 0.5)  # attribute-free shape variation in [0, 1]
    seed: int = 0

    def __post_init__(self):
        info = class_info(self.shape_class)
        controls = tuple(float(c) for c in self.controls)
        nuisance = tuple(float(c) for c in self.nuisance)
        if len(controls) != len(info.attributes):
            raise ValueError(f"{self.shape_class} needs {len(info.attributes)} controls")
        if len(nuisance) != 3:
            raise ValueError("need 3 nuisance values")
        for c in controls + nuisance:
            if not 0.0 <= c <= 1.0:
                raise ValueError(f"control {c} outside [0, 1]")
        object.__setattr__(self, "controls", controls)
        object.__setattr__(self, "nuisance", nuisance)

    @classmethod
    def sample(cls, shape_class, seed, mid_prob=0.1, sides=None):
        """Random parameters; each control is mid-scale with probability
        ``mid_prob`` and otherwise drawn from the low or high quarter.

        ``sides`` optionally fixes, per attribute, whether a non-mid control
        lands in the high (True) or low (False) quarter.
        """
        info = class_info(shape_class)
        rng = np.random.default_rng(seed)
        if sides is not None and len(sides) != len(info.attributes):
            raise ValueError("need one side per attribute")
        controls = []
        for a in range(len(info.attributes)):
            u = rng.random()
            high = u >= mid_prob + (1 - mid_prob) / 2 if sides is None else bool(sides[a])
            if u < mid_prob:
                controls.append(rng.uniform(0.25, 0.75))
            elif high:
                controls.append(rng.uniform(0.75, 1.0))
            else:
                controls.append(rng.uniform(0.0, 0.25))
        nuisance = tuple(rng.random(3))
        return cls(shape_class, tuple(round(c, 6) for c in controls),
                   tuple(round(c, 6) for c in nuisance), int(seed))


# ---------------------------------------------------------------------------
# geometry helpers

_HEX_FACES = np.array([[0, 2, 1], [1, 2, 3], [4, 5, 6], [5, 7, 6],
                       [0, 1, 4], [1, 5, 4], [2, 6, 3], [3, 6, 7],
                       [0, 4, 2], [2, 4, 6], [1, 3, 5], [3, 7, 5]])


def _box(lo, hi):
    """Corners of an axis-aligned box; corner i has bit0=x, bit1=y, bit2=z."""
    return np.array([[hi[0] if i & 1 else lo[0],
                      hi[1] if i & 2 else lo[1],
                      hi[2] if i & 4 else lo[2]] for i in range(8)], dtype=np.float64)


def _taper(corners, front_drop=0.0, back_drop=0.0, front_inset=0.0, back_inset=0.0):
    """Slope the top face of a box: lower the top front (+x) / back edge and
    pull those edges inward along x."""
    c = corners.copy()
    for i in (5, 7):  # top, +x
        c[i, 2] -= front_drop
        c[i, 0] -= front_inset
    for i in (4, 6):  # top, -x
        c[i, 2] -= back_drop
        c[i, 0] += back_inset
    return c


def _assemble(parts):
    verts = []
    faces = []
    for i, corners in enumerate(parts):
        verts.append(corners)
        faces.append(_HEX_FACES + 8 * i)
    return TriMesh(np.concatenate(verts), np.concatenate(faces))


def _lerp(a, b, t):
    return a + (b - a) * t


def _above(c, start=0.5):
    """Strength of a feature that only exists above ``start``, in [0, 1]."""
    return max(0.0, (c - start) / (1.0 - start))


def _boxform(c, u):
    bent, arms, long_, plush = c
    length = _lerp(1.4, 2.6, long_)
    depth = _lerp(0.8, 1.0, u[0])
    back_h = _lerp(0.9, 1.1, u[1])
    seat_top = 0.2 + _lerp(0.1, 0.5, plush)
    back_t = _lerp(0.2, 0.45, plush)
    half = length / 2
    parts = [
        _box((0.0, -half, 0.0), (depth, half, seat_top)),
        _box((0.0, -half, 0.0), (back_t, half, back_h)),
    ]
    if arms > 0.5:
        arm_h = seat_top + 0.25 + _above(arms) * max(back_h + 0.05 - seat_top - 0.25, 0.0)
        w = _lerp(0.3, 0.4, u[2])
        parts.append(_box((0.0, -half, 0.0), (depth, -half + w, arm_h)))
        parts.append(_box((0.0, half - w, 0.0), (depth, half, arm_h)))
    if bent > 0.5:
        ext = 0.1 + _above(bent) * 1.1
        parts.append(_box((depth - 0.05, half - 0.8, 0.0), (depth + ext, half, seat_top)))
    return parts


def _slabform(c, u):
    long_, curvy, low, spoiler = c
    length = _lerp(3.0, 5.0, long_)
    width = _lerp(1.6, 1.9, u[0])
    body_h = _lerp(0.8, 0.45, low)
    cabin_h = _lerp(0.75, 0.4, low)
    clear = 0.25
    half_w = width / 2
    body = _box((0.0, -half_w, clear), (length, half_w, clear + body_h))
    body = _taper(body, front_drop=curvy * body_h * 0.5, front_inset=curvy * 0.3)
    c0 = length * _lerp(0.25, 0.35, u[1])
    c1 = length * _lerp(0.65, 0.75, u[2])
    cabin = _box((c0, -half_w * 0.9, clear + body_h), (c1, half_w * 0.9, clear + body_h + cabin_h))
    slope = _lerp(0.05, 0.45, curvy) * (c1 - c0)
    cabin = _taper(cabin, front_inset=slope, back_inset=slope * 0.6)
    parts = [body, cabin]
    wheel = 0.35
    for x in (length * 0.18, length * 0.82):
        for y0, y1 in ((-half_w, -half_w + 0.3), (half_w - 0.3, half_w)):
            parts.append(_box((x - wheel, y0, 0.0), (x + wheel, y1, clear + 0.1)))
    if spoiler > 0.5:
        h = 0.15 + _above(spoiler) * 0.45
        top = clear + body_h
        parts.append(_box((0.05, -0.1 - half_w * 0.6, top), (0.25, -half_w * 0.6 + 0.1, top + h)))
        parts.append(_box((0.05, half_w * 0.6 - 0.1, top), (0.25, half_w * 0.6 + 0.1, top + h)))
        parts.append(_box((0.0, -half_w, top + h), (0.4, half_w, top + h + 0.08)))
    return parts


def _wingform(c, u):
    prop, swept, engines, long_ = c
    length = _lerp(3.0, 6.0, long_)
    span = _lerp(4.0, 4.6, u[0])
    fus = _lerp(0.45, 0.6, u[1])
    parts = [_box((0.0, -fus / 2, 0.0), (length, fus / 2, fus))]
    wx = length * _lerp(0.45, 0.55, u[2])
    chord = 0.9
    sweep = swept * 1.4
    z0, z1 = fus * 0.3, fus * 0.45
    for side in (1.0, -1.0):
        wing = np.empty((8, 3))
        for i in range(8):
            tip = bool(i & 2)
            lead = bool(i & 1)
            x = wx - (sweep if tip else 0.0)
            if not lead:
                x -= chord * (0.6 if tip else 1.0)
            wing[i] = (x, side * span / 2 if tip else 0.0, z1 if i & 4 else z0)
        parts.append(wing)
    # tail
    parts.append(_box((0.0, -0.05, fus), (0.6, 0.05, fus + 0.8)))
    parts.append(_box((0.0, -1.0, fus * 0.6), (0.5, 1.0, fus * 0.7)))
    if engines > 0.5:
        size = 0.2 + _above(engines) * 0.25
        for y in (span * 0.2, -span * 0.2):
            x = wx - chord * 0.2 - sweep * 0.2 + 0.4
            parts.append(_box((x - 0.9, y - size / 2, fus * 0.3 - size), (x, y + size / 2, fus * 0.3)))
    if prop > 0.5:
        r = 0.3 + _above(prop) * 0.6
        parts.append(_box((length, -0.08, fus / 2 - 0.08), (length + 0.25, 0.08, fus / 2 + 0.08)))
        parts.append(_box((length + 0.15, -r, fus / 2 - 0.06), (length + 0.25, r, fus / 2 + 0.06)))
        parts.append(_box((length + 0.15, -0.06, fus / 2 - r), (length + 0.25, 0.06, fus / 2 + r)))
    return parts


_BUILDERS = {"boxform": _boxform, "slabform": _slabform, "wingform": _wingform}


def attribute_scores(params):
    return tuple(1.0 + 4.0 * c for c in params.controls)


def generate_shape(params):
    """Mesh and 1-5 attribute scores for the given parameters."""
    parts = _BUILDERS[params.shape_class](params.controls, params.nuisance)
    return _assemble(parts), attribute_scores(params)


# ---------------------------------------------------------------------------
# descriptions


def attribute_phrases(shape_class, scores):
    """(adjectives, suffixes) mentioned for the given scores."""
    info = class_info(shape_class)
    if len(scores) != len(info.attributes):
        raise ValueError("score count does not match the class attributes")
    adjs, suffixes = [], []
    for score, (low, high, kind) in zip(scores, info.lexicon):
        if not 1.0 <= score <= 5.0:
            raise ValueError(f"score {score} outside [1, 5]")
        if score <= LOW_EXTREME:
            phrase = low
        elif score >= HIGH_EXTREME:
            phrase = high
        else:
            continue
        (adjs if kind == "adj" else suffixes).append(phrase)
    return adjs, suffixes


def generate_description(scores, shape_class="boxform", seed=0):
    info = class_info(shape_class)
    adjs, suffixes = attribute_phrases(shape_class, scores)
    rng = np.random.default_rng(seed)
    template = info.templates[rng.integers(len(info.templates))]
    noun = info.noun[rng.integers(len(info.noun))]
    adjs = [adjs[i] for i in rng.permutation(len(adjs))]
    suffix = " and ".join(suffixes[i] for i in rng.permutation(len(suffixes)))
    text = template.format(adj=" ".join(adjs), noun=noun, suffix=suffix)
    return " ".join(text.split())


# ---------------------------------------------------------------------------
# corpus and manifest


@dataclass(frozen=True)
class AnnotatedObject:
    object_id: str
    mesh_path: str
    scores: tuple
    descriptions: tuple

    def load_mesh(self):
        return load_mesh(self.mesh_path)


@dataclass(frozen=True)
class Manifest:
    shape_class: str
    attributes: tuple
    objects: tuple
    path: str | None = None

    @property
    def ids(self):
        return [o.object_id for o in self.objects]

    def by_id(self):
        return {o.object_id: o for o in self.objects}

    def subset(self, ids):
        lookup = self.by_id()
        return Manifest(self.shape_class, self.attributes, tuple(lookup[i] for i in ids), self.path)


def build_corpus(out_dir, n_objects, shape_class="boxform", descriptions_per_object=10,
                 seed=0, mid_prob=0.1):
    """Generate meshes and a manifest under ``out_dir``; returns the Manifest.

    Attribute sides are balanced: for every attribute, half the objects
    (rounded) sit at the high end, in a seeded random order.
    """
    if n_objects < 2:
        raise ValueError("need at least 2 objects")
    info = class_info(shape_class)
    side_rng = np.random.default_rng([seed, 1 << 20])
    sides = np.stack([side_rng.permutation(np.arange(n_objects) % 2) for _ in info.attributes], axis=1)
    mesh_dir = os.path.join(out_dir, "meshes")
    os.makedirs(mesh_dir, exist_ok=True)
    header = {"format": MANIFEST_FORMAT, "class": shape_class, "attributes": list(info.attributes)}
    lines = [json.dumps(header, sort_keys=True)]
    objects = []
    for i in range(n_objects):
        obj_seed = int(np.random.default_rng([seed, i]).integers(2 ** 31))
        params = ShapeParams.sample(shape_class, obj_seed, mid_prob, sides[i])
        mesh, scores = generate_shape(params)
        object_id = f"{shape_class}_{i:04d}"
        rel = f"meshes/{object_id}.obj"
        save_obj(mesh, os.path.join(out_dir, rel))
        scores = tuple(round(s, 4) for s in scores)
        descs = tuple(generate_description(scores, shape_class, [obj_seed, j])
                      for j in range(descriptions_per_object))
        lines.append(json.dumps({"id": object_id, "mesh": rel, "scores": list(scores),
                                 "descriptions": list(descs)}, sort_keys=True))
        objects.append(AnnotatedObject(object_id, os.path.join(out_dir, rel), scores, descs))
    path = os.path.join(out_dir, "manifest.jsonl")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return Manifest(shape_class, info.attributes, tuple(objects), path)


class ManifestError(ValueError):
    pass


def load_manifest(path):
    root = os.path.dirname(os.path.abspath(path))
    with open(path, encoding="utf-8") as fh:
        rows = [line for line in fh.read().splitlines() if line.strip()]
    if not rows:
        raise ManifestError(f"{path}: empty manifest")
    try:
        header = json.loads(rows[0])
        attributes = tuple(header["attributes"])
        shape_class = header.get("class", "")
    except (ValueError, KeyError, TypeError):
        raise ManifestError(f"{path}:1: bad header line") from None
    objects = []
    seen = set()
    for lineno, row in enumerate(rows[1:], start=2):
        try:
            rec = json.loads(row)
            object_id = str(rec["id"])
            mesh = rec["mesh"]
            scores = tuple(float(s) for s in rec["scores"])
            descs = tuple(str(d) for d in rec["descriptions"])
        except (ValueError, KeyError, TypeError):
            raise ManifestError(f"{path}:{lineno}: malformed record") from None
        if object_id in seen:
            raise ManifestError(f"{path}:{lineno}: duplicate id {object_id!r}")
        seen.add(object_id)
        if len(scores) != len(attributes):
            raise ManifestError(f"{path}:{lineno}: expected {len(attributes)} scores")
        for s in scores:
            if not 1.0 <= s <= 5.0:
                raise ManifestError(f"{path}:{lineno}: score {s} outside [1, 5]")
        if not descs:
            raise ManifestError(f"{path}:{lineno}: no descriptions")
        mesh_path = mesh if os.path.isabs(mesh) else os.path.join(root, mesh)
        if not os.path.exists(mesh_path):
            raise ManifestError(f"{path}:{lineno}: missing mesh file {mesh}")
        objects.append(AnnotatedObject(object_id, mesh_path, scores, descs))
    return Manifest(shape_class, attributes, tuple(objects), os.path.abspath(path))
