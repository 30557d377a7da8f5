import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from beolang import synthgen
from beolang.synthgen import ManifestError, ShapeParams


def mentions(text, phrase):
    return f" {phrase} " in f" {text} "


def test_armless_boxform():
    params = ShapeParams("boxform", (0.0, 0.1, 0.5, 0.5))
    mesh, scores = synthgen.generate_shape(params)
    assert scores[1] <= 2.0
    armed, _ = synthgen.generate_shape(ShapeParams("boxform", (0.0, 0.9, 0.5, 0.5)))
    assert len(armed.faces) == len(mesh.faces) + 2 * 12


def test_maximum_length_scores_five():
    mesh, scores = synthgen.generate_shape(ShapeParams("boxform", (0.0, 0.0, 1.0, 0.5)))
    assert scores[2] == 5.0
    extent = mesh.vertices.max(axis=0) - mesh.vertices.min(axis=0)
    assert extent[1] == pytest.approx(2.6)
    short, _ = synthgen.generate_shape(ShapeParams("boxform", (0.0, 0.0, 0.0, 0.5)))
    assert np.ptp(short.vertices[:, 1]) < extent[1]


@pytest.mark.parametrize("shape_class", sorted(synthgen.CLASSES))
def test_generation_deterministic(shape_class):
    a = ShapeParams.sample(shape_class, 11)
    b = ShapeParams.sample(shape_class, 11)
    assert a == b
    ma, sa = synthgen.generate_shape(a)
    mb, sb = synthgen.generate_shape(b)
    assert np.array_equal(ma.vertices, mb.vertices) and np.array_equal(ma.faces, mb.faces)
    assert sa == sb == synthgen.attribute_scores(a)
    assert all(1.0 <= s <= 5.0 for s in sa)


def test_params_validation():
    with pytest.raises(ValueError):
        ShapeParams("boxform", (0.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        ShapeParams("boxform", (0.0, 0.0, 0.0, 1.5))
    with pytest.raises(ValueError):
        ShapeParams("teapot", (0.0,))
    with pytest.raises(ValueError):
        ShapeParams.sample("boxform", 0, sides=(True,))


def test_sample_sides_and_mid_prob():
    for seed in range(30):
        p = ShapeParams.sample("boxform", seed, mid_prob=0.0, sides=(True, False, True, False))
        assert p.controls[0] >= 0.75 and p.controls[1] <= 0.25
        assert p.controls[2] >= 0.75 and p.controls[3] <= 0.25
        mid = ShapeParams.sample("boxform", seed, mid_prob=1.0)
        assert all(0.25 <= c <= 0.75 for c in mid.controls)


def test_description_phrases():
    text = synthgen.generate_description((5.0, 1.0, 3.0, 3.0), "boxform", seed=0)
    assert mentions(text, "bent") and mentions(text, "with no arms")
    assert synthgen.generate_description((5.0, 1.0, 3.0, 3.0), seed=0) == text


def test_all_middle_scores_give_generic_text():
    for seed in range(10):
        text = synthgen.generate_description((3.0, 3.0, 3.0, 3.0), "boxform", seed)
        words = set(text.split())
        assert words & {"couch", "sofa"}
        for low, high, _ in synthgen.CLASSES["boxform"].lexicon:
            assert not mentions(text, low) and not mentions(text, high)


def test_description_errors():
    with pytest.raises(ValueError):
        synthgen.generate_description((3.0, 3.0, 3.0))
    with pytest.raises(ValueError):
        synthgen.generate_description((3.0, 3.0, 3.0, 6.0))


score = st.sampled_from([1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0])


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(sorted(synthgen.CLASSES)), st.tuples(score, score, score, score),
       st.integers(0, 10_000))
def test_phrases_only_for_extreme_scores(shape_class, scores, seed):
    text = synthgen.generate_description(scores, shape_class, seed)
    for s, (low, high, _) in zip(scores, synthgen.CLASSES[shape_class].lexicon):
        assert mentions(text, low) == (s <= synthgen.LOW_EXTREME)
        assert mentions(text, high) == (s >= synthgen.HIGH_EXTREME)


# -- corpus --------------------------------------------------------------------


@pytest.fixture(scope="module")
def corpus50(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    return out, synthgen.build_corpus(out, 50, "boxform", 10, seed=3)


def test_corpus_counts(corpus50):
    _, manifest = corpus50
    assert len(manifest.objects) == 50
    assert sum(len(o.descriptions) for o in manifest.objects) == 500
    assert len(set(manifest.ids)) == 50


def test_corpus_attribute_sides_balanced(tmp_path):
    # with no mid-scale draws every attribute is split exactly in half
    manifest = synthgen.build_corpus(tmp_path, 10, "boxform", 1, seed=5, mid_prob=0.0)
    scores = np.array([o.scores for o in manifest.objects])
    assert np.all(np.sum(scores > 3.0, axis=0) == 5)


def test_corpus_byte_identical(tmp_path, corpus50):
    out, _ = corpus50
    synthgen.build_corpus(tmp_path, 50, "boxform", 10, seed=3)
    assert (tmp_path / "manifest.jsonl").read_bytes() == (out / "manifest.jsonl").read_bytes()
    for name in ("boxform_0000.obj", "boxform_0049.obj"):
        assert (tmp_path / "meshes" / name).read_bytes() == (out / "meshes" / name).read_bytes()


def test_manifest_roundtrip(corpus50):
    out, manifest = corpus50
    back = synthgen.load_manifest(out / "manifest.jsonl")
    assert back.shape_class == "boxform"
    assert back.attributes == manifest.attributes
    assert back.objects == manifest.objects
    sub = back.subset(back.ids[:3])
    assert sub.ids == back.ids[:3]


def test_corpus_meshes_load(corpus50):
    _, manifest = corpus50
    obj = manifest.objects[0]
    mesh = obj.load_mesh()
    assert len(mesh.faces) > 0
    assert all(1.0 <= s <= 5.0 for s in obj.scores)


def _write_manifest(tmp_path, records):
    (tmp_path / "m.obj").write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    header = {"format": 1, "class": "boxform", "attributes": ["bent", "arms", "long", "plush"]}
    lines = [json.dumps(header)] + [json.dumps(r) for r in records]
    (tmp_path / "manifest.jsonl").write_text("\n".join(lines) + "\n")
    return tmp_path / "manifest.jsonl"


def record(object_id="a", scores=(1, 2, 3, 4), mesh="m.obj"):
    return {"id": object_id, "mesh": mesh, "scores": list(scores), "descriptions": ["a couch"]}


def test_manifest_validation_errors(tmp_path):
    assert len(synthgen.load_manifest(_write_manifest(tmp_path, [record()])).objects) == 1
    with pytest.raises(ManifestError, match="outside"):
        synthgen.load_manifest(_write_manifest(tmp_path, [record(scores=(1, 2, 3, 6))]))
    with pytest.raises(ManifestError, match="duplicate"):
        synthgen.load_manifest(_write_manifest(tmp_path, [record(), record()]))
    with pytest.raises(ManifestError, match="missing mesh"):
        synthgen.load_manifest(_write_manifest(tmp_path, [record(mesh="nope.obj")]))
    with pytest.raises(ManifestError):
        synthgen.load_manifest(_write_manifest(tmp_path, [record(scores=(1, 2))]))
    (tmp_path / "empty.jsonl").write_text("")
    with pytest.raises(ManifestError):
        synthgen.load_manifest(tmp_path / "empty.jsonl")
