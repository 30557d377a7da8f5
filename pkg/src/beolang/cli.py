"""Command-line interface.

Exit codes: 0 success, 1 I/O failure, 2 missing prerequisite artifact,
3 numerical failure (NaN/divergence, degenerate model), 64 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time

import numpy as np

from . import evalhar, langground as lg, meshvox, pipeline, plotting, render, shape2vec, subspace
from . import gradcheck as gc
from .pipeline import MissingArtifactError, PipelineConfig

EXIT_OK, EXIT_IO, EXIT_MISSING, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2, 3, 64
STAGES = ("subspace", "regressor", "joint", "all")

logger = logging.getLogger("beolang")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _flag(name):
    return "--" + name.replace("_", "-")


def _add_config_flags(parser):
    """One ``--field`` option per PipelineConfig field (tuples as comma lists)."""
    group = parser.add_argument_group("pipeline configuration (overrides --config)")
    for f in dataclasses.fields(PipelineConfig):
        default = f.default
        if isinstance(default, tuple):
            kind = str if default and isinstance(default[0], str) else float
            if f.name == "regressor_hidden":
                kind = int
            group.add_argument(_flag(f.name), dest=f.name, default=None, metavar="A,B,...",
                               type=lambda s, kind=kind: tuple(kind(v) for v in s.split(",") if v))
        elif isinstance(default, bool):
            group.add_argument(_flag(f.name), dest=f.name, default=None, type=lambda s: s == "1")
        elif isinstance(default, int):
            group.add_argument(_flag(f.name), dest=f.name, default=None, type=int)
        elif isinstance(default, float):
            group.add_argument(_flag(f.name), dest=f.name, default=None, type=float)
        else:
            group.add_argument(_flag(f.name), dest=f.name, default=None, type=str)


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    _add_config_flags(common)

    parser = _Parser(prog="beolang", description="Language-grounded 3D shape retrieval pipeline.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-corpus", parents=[common], help="generate the synthetic corpus")
    p.add_argument("--objects", type=int, dest="objects_alias", help="alias of --n-objects")
    p.add_argument("--descriptions", type=int, dest="descriptions_alias",
                   help="alias of --descriptions-per-object")
    p.add_argument("--out", help="corpus directory (default <workdir>/corpus)")

    p = sub.add_parser("train", parents=[common], help="train model stages")
    p.add_argument("stage", choices=STAGES)
    p.add_argument("--condition", action="append", choices=sorted(evalhar.CONDITIONS),
                   help="joint model(s) to train (default: all configured conditions)")

    p = sub.add_parser("eval", parents=[common], help="evaluate trained models on the test split")
    p.add_argument("--condition", action="append", choices=sorted(evalhar.CONDITIONS) + ["all"])
    p.add_argument("--out", help="results directory (default <workdir>/results)")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("query", parents=[common], help="rank depth images against a description")
    p.add_argument("images", nargs="+", help="candidate depth images (PGM or raw)")
    p.add_argument("--description", "-d", required=True)
    p.add_argument("--condition", default="partial_view", choices=["partial_view", "view_transfer"])

    p = sub.add_parser("complete", parents=[common], help="predict a voxel grid from one depth image")
    p.add_argument("image")
    p.add_argument("output", help="output voxel grid (.vox)")
    p.add_argument("--mesh", help="also write the occupied cells as an OBJ mesh")
    p.add_argument("--threshold", type=float, default=0.5)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    p.add_argument("--tol", type=float, default=1e-4)
    return parser


def config_from_args(args):
    base = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            base = json.load(fh)
    for f in dataclasses.fields(PipelineConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            base[f.name] = v
    if getattr(args, "objects_alias", None) is not None:
        base["n_objects"] = args.objects_alias
    if getattr(args, "descriptions_alias", None) is not None:
        base["descriptions_per_object"] = args.descriptions_alias
    if getattr(args, "out", None) and args.command == "gen-corpus":
        base["corpus"] = os.path.join(args.out, "manifest.jsonl")
    try:
        return PipelineConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _emit(*fields):
    print("\t".join(str(f) for f in fields))


# ---------------------------------------------------------------------------
# commands


def cmd_gen_corpus(config, args):
    manifest = pipeline.generate_corpus(config)
    n_desc = sum(len(o.descriptions) for o in manifest.objects)
    _emit("manifest", manifest.path)
    _emit("objects", len(manifest.objects))
    _emit("descriptions", n_desc)
    return EXIT_OK


def cmd_train(config, args):
    if args.condition:
        config = dataclasses.replace(config, conditions=tuple(args.condition))
    ws = pipeline.open_workspace(config)
    log = pipeline.TrainLog(config.path("logs", "train.jsonl"))
    if args.stage == "all":
        stages = ("subspace", "regressor", "joint")
    else:
        stages = (args.stage,)
    # check prerequisites before spending time on anything
    if "subspace" not in stages:
        pipeline._require(config.model_path("subspace.beos"), "subspace model")
    if stages == ("joint",):
        if any(evalhar.get_condition(c).source == "regressor" for c in config.conditions):
            pipeline._require(config.model_path("regressor.s2vc"), "regressor model")
    pipeline.train_all(config, ws, log, stages)
    prov = pipeline.read_provenance(config)
    for name, info in sorted(prov.get("artifacts", {}).items()):
        _emit(name, config.model_path(info["file"]), info["sha256"])
    return EXIT_OK


def cmd_eval(config, args):
    conds = args.condition or ["all"]
    if "all" in conds:
        conds = list(config.conditions)
    records = pipeline.evaluate(config, conditions=conds)
    out = args.out or config.path("results")
    os.makedirs(out, exist_ok=True)
    evalhar.write_results(records, os.path.join(out, "results.json"), os.path.join(out, "results.csv"))
    _emit("condition", "top1", "top2", "shuffled_top1", "shuffled_top2", "n_trials", "macro_f1")
    for r in records:
        _emit(r["condition"], f"{r['top1']:.4f}", f"{r['top2']:.4f}", f"{r['shuffled_top1']:.4f}",
              f"{r['shuffled_top2']:.4f}", r["n_trials"], f"{r['macro_f1']:.4f}")
    attrs = list(records[0]["attribute_f1"])
    _emit("condition", *[f"f1_{a}" for a in attrs])
    for r in records:
        _emit(r["condition"], *[f"{r['attribute_f1'][a]:.4f}" for a in attrs])
    if not args.no_figures:
        for p in plotting.write_figures(records, out, config.path("logs", "train.jsonl")):
            _emit("figure", p)
    _emit("results", os.path.join(out, "results.json"))
    return EXIT_OK


def cmd_query(config, args):
    if len(args.images) < 2:
        raise UsageError("query needs at least 2 candidate images")
    models = pipeline.load_models(config, args.condition)
    images = [render.load_depth(p) for p in args.images]
    start = time.perf_counter()
    ranking, sims = query(models, images, args.description)
    elapsed = (time.perf_counter() - start) * 1000.0
    _emit("rank", "similarity", "image")
    for r, i in enumerate(ranking, start=1):
        _emit(r, f"{sims[i]:.6f}", args.images[i])
    _emit("inference_ms", f"{elapsed:.3f}")
    return EXIT_OK


def query(models, images, description):
    """Embed each image and the description; rank images by similarity."""
    sentence = lg.embed_sentence(models.table, description)
    shapes = shape2vec.embed_depth(models.regressor, list(images))
    sims = lg.similarity_matrix(models.joint, np.atleast_2d(shapes), sentence.values[None, :])[:, 0]
    return evalhar.rank_candidates(sims), sims


def cmd_complete(config, args):
    sub = pipeline.load_subspace(config)
    reg = pipeline.load_regressor(config)
    img = render.load_depth(args.image)
    grid = complete(sub, reg, img, args.threshold)
    os.makedirs(os.path.dirname(os.path.abspath(args.output)), exist_ok=True)
    meshvox.save_grid(grid, args.output)
    _emit("grid", args.output, grid.count())
    if args.mesh:
        meshvox.save_obj(meshvox.grid_to_mesh(grid), args.mesh)
        _emit("mesh", args.mesh)
    return EXIT_OK


def complete(sub, reg, img, threshold=0.5):
    """Depth image -> predicted embedding -> back-projected occupancy grid."""
    e = shape2vec.embed_depth(reg, img)
    vec = subspace.backproject(sub, e)
    if not np.all(np.isfinite(vec)):
        raise FloatingPointError("back-projection produced non-finite values")
    res = sub.resolution or subspace._infer_resolution(sub.dim)
    return meshvox.unflatten(vec, res, threshold)


def cmd_gradcheck(config, args):
    results = gc.run_all(seed=config.seed)
    _emit("check", "max_rel_error", "status")
    ok = True
    for name, err in results:
        passed = err < args.tol
        ok &= passed
        _emit(name, f"{err:.3e}", "PASS" if passed else "FAIL")
    return EXIT_OK if ok else EXIT_NUMERIC


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "train": cmd_train,
    "eval": cmd_eval,
    "query": cmd_query,
    "complete": cmd_complete,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = config_from_args(args)
        return COMMANDS[args.command](config, args)
    except UsageError as exc:
        print(f"beolang: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MissingArtifactError as exc:
        print(f"beolang: missing prerequisite: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (FloatingPointError, lg.DegenerateModelError) as exc:
        print(f"beolang: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"beolang: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
