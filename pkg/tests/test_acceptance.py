"""Acceptance criteria 1-10, each reported as one PASS/FAIL line.

Criteria 5-10 share the desk-scale run built by the ``desk_run`` fixture
(the default configuration: 50 objects, 4 attributes, 10 descriptions and
30 renders per object). Thresholds here are the acceptance thresholds;
they are not tuned to the observed results.
"""

import json
import time

import numpy as np
import pytest

from beolang import cli, evalhar, gradcheck, pipeline, render, subspace
from beolang.meshvox import VoxelGrid
from beolang.subspace import SubspaceModel

from conftest import full_run, record_acceptance
from oracles import naive_backproject, naive_project, render_oracle, svd_subspace


def check(number, name, ok, detail, elapsed, budget=None):
    if budget is not None:
        detail = f"{detail}; {elapsed:.1f}s of {budget:.0f}s"
        ok = ok and elapsed < budget
    record_acceptance(number, name, ok, detail, elapsed)
    assert ok, detail


def results_by_condition(run):
    with open(run.config.path("results", "results.json"), encoding="utf-8") as fh:
        return {r["condition"]: r for r in json.load(fh)["results"]}


# -- 1-4: numerical building blocks -------------------------------------------


def test_criterion_01_subspace_math():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    worst_ortho = worst_idem = 0.0
    for seed in range(5):
        x = np.random.default_rng(seed).normal(size=(30, 200))
        for model in (subspace.fit_pca(x, 10), subspace.fit_vbpca(x, 10)):
            worst_ortho = max(worst_ortho, np.abs(model.basis.T @ model.basis - np.eye(model.k)).max())
            o = rng.normal(size=200)
            once = subspace.backproject(model, subspace.project(model, o))
            twice = subspace.backproject(model, subspace.project(model, once))
            worst_idem = max(worst_idem, np.abs(once - twice).max())

    x = rng.normal(size=(20, 64))
    full = subspace.fit_pca(x, 19)
    recon = np.abs(subspace.backproject(full, subspace.project(full, x)) - x).max()

    basis = np.linalg.qr(rng.normal(size=(100, 2)))[0]
    noisy = rng.normal(size=(40, 2)) * [3.0, 1.5] @ basis.T + rng.normal(size=100)
    noisy += 1e-3 * rng.normal(size=noisy.shape)
    vb = subspace.fit_vbpca(noisy, 10)
    dim = vb.fit_info["effective_dim"]
    gap = subspace.projector_distance(vb.fit_info["components"],
                                      svd_subspace((noisy - noisy.mean(axis=0)).T, 2))
    elapsed = time.perf_counter() - start
    ok = worst_ortho < 1e-6 and worst_idem < 1e-9 and recon < 1e-6 and dim == 2 and gap < 1e-2
    check(1, "subspace math", ok,
          f"ortho {worst_ortho:.1e}, idempotence {worst_idem:.1e}, full-rank recon {recon:.1e}, "
          f"VBPCA dim {dim}, projector distance {gap:.1e}", elapsed, 10)


def test_criterion_02_projection_matches_naive_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for v, k in ((32 ** 3, 36), (4096, 16), (100, 7)):
        model = SubspaceModel(np.linalg.qr(rng.normal(size=(v, k)))[0])
        o = (rng.random(v) < 0.3).astype(float)
        e = rng.normal(size=k)
        worst = max(worst, np.abs(subspace.project(model, o) - naive_project(model.basis, o)).max(),
                    np.abs(subspace.backproject(model, e) - naive_backproject(model.basis, e)).max())
    elapsed = time.perf_counter() - start
    check(2, "projection vs naive oracle", worst < 1e-12, f"max abs diff {worst:.1e}", elapsed, 5)


def test_criterion_03_gradient_checks():
    start = time.perf_counter()
    results = gradcheck.run_all(seed=0)
    elapsed = time.perf_counter() - start
    name, worst = max(results, key=lambda r: r[1])
    check(3, "gradient checks", all(err < 1e-4 for _, err in results),
          f"{len(results)} checks, worst {name} {worst:.1e}", elapsed, 60)


def test_criterion_04_renderer_bitwise_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    mismatches = 0
    for i in range(20):
        occ = rng.random((32, 32, 32)) < rng.uniform(0.002, 0.05)
        grid = VoxelGrid(occ)
        cam = render.sample_viewpoint("varied", [4, i], 64, 64)
        mismatches += int(np.sum(render.render_depth(grid, cam).values != render_oracle(grid, cam)))
    elapsed = time.perf_counter() - start
    check(4, "renderer bitwise vs oracle", mismatches == 0,
          f"{mismatches} mismatching pixels over 20 grids", elapsed, 30)


# -- 5-10: desk-scale run ------------------------------------------------------


def test_criterion_05_shuffled_labels_at_chance(desk_run, desk_workspace):
    config = desk_run.config
    test = desk_workspace.objects("test")
    start = time.perf_counter()
    details, ok = [], True
    for name in config.conditions:
        models = pipeline.load_models(config, name)
        res = evalhar.eval_retrieval(models, name, test, config.shuffle_images_per_object,
                                     pipeline.sub_seed(config, 7), shuffle_labels=True)
        ok &= res.n_trials >= 1000 and 0.28 <= res.top1 <= 0.39 and 0.61 <= res.top2 <= 0.72
        details.append(f"{name} {res.top1:.3f}/{res.top2:.3f} ({res.n_trials} trials)")
    elapsed = time.perf_counter() - start
    check(5, "shuffled-label chance", ok, "; ".join(details), elapsed, 120)


def test_criterion_06_end_to_end_desk_scale(desk_run):
    r = results_by_condition(desk_run)
    full, part = r["full_view"], r["partial_view"]
    elapsed = sum(desk_run.timings.values())
    ok = (full["top1"] >= 0.85 and part["top1"] >= 0.75
          and full["top1"] - full["shuffled_top1"] >= 0.40
          and part["top1"] - part["shuffled_top1"] >= 0.40)
    check(6, "end-to-end desk scale", ok,
          f"full top-1 {full['top1']:.3f} (shuffled {full['shuffled_top1']:.3f}), "
          f"partial top-1 {part['top1']:.3f} (shuffled {part['shuffled_top1']:.3f})", elapsed, 900)


def test_criterion_07_view_transfer(desk_run):
    r = results_by_condition(desk_run)
    gap = abs(r["view_transfer"]["top1"] - r["partial_view"]["top1"])
    check(7, "view transfer", gap <= 0.10,
          f"transfer {r['view_transfer']['top1']:.3f} vs partial {r['partial_view']['top1']:.3f} "
          f"(gap {gap:.3f})", 0.0)


def test_criterion_08_attribute_f1(desk_run, desk_workspace):
    config = desk_run.config
    start = time.perf_counter()
    models = pipeline.load_models(config, "partial_view")
    res = evalhar.eval_attributes(models, "partial_view", desk_workspace.objects("test"),
                                  desk_workspace.manifest.attributes, config.images_per_object,
                                  pipeline.sub_seed(config, 7))
    elapsed = time.perf_counter() - start
    per = ", ".join(f"{n} {f:.2f}" for n, f in zip(res.names, res.f1))
    check(8, "attribute macro-F1 (shape head, partial view)", res.macro_f1 >= 0.85,
          f"macro-F1 {res.macro_f1:.3f} ({per})", elapsed, 60)


def test_criterion_09_query_latency(desk_run, desk_workspace):
    config = desk_run.config
    models = pipeline.load_models(config, "partial_view")
    obj = desk_workspace.objects("test")[0]
    img = render.render_depth(obj.grid, render.sample_viewpoint("varied", 9, config.image_size,
                                                                config.image_size))
    cli.query(models, [img], obj.descriptions[0])  # warm-up
    times = []
    for i in range(20):
        start = time.perf_counter()
        cli.query(models, [img], obj.descriptions[i % len(obj.descriptions)])
        times.append(time.perf_counter() - start)
    worst = max(times) * 1000
    check(9, "query latency", worst < 100.0,
          f"worst {worst:.2f} ms, median {np.median(times) * 1000:.2f} ms over 20 queries",
          sum(times))


def test_criterion_10_determinism(desk_run, tmp_path_factory):
    start = time.perf_counter()
    rerun = full_run(tmp_path_factory.mktemp("desk_rerun"), desk_run.flags)
    elapsed = time.perf_counter() - start
    a, b = pipeline.read_provenance(desk_run.config), pipeline.read_provenance(rerun.config)
    sums_a = {k: v["sha256"] for k, v in a["artifacts"].items()}
    sums_b = {k: v["sha256"] for k, v in b["artifacts"].items()}
    same_models = sums_a == sums_b
    same_metrics = results_by_condition(desk_run) == results_by_condition(rerun)
    check(10, "determinism", same_models and same_metrics,
          f"{len(sums_a)} model checksums {'identical' if same_models else 'DIFFER'}, "
          f"metrics {'identical' if same_metrics else 'DIFFER'}", elapsed)


@pytest.mark.parametrize("name", ["retrieval.png", "attributes.png", "training.png", "results.csv"])
def test_desk_eval_artifacts(desk_run, name):
    path = desk_run.config.path("results", name)
    with open(path, "rb") as fh:
        assert len(fh.read()) > 0
