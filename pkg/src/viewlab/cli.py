"""Command-line surface.

Subcommands: ``attack`` (fit an adversarial viewpoint distribution against
a classifier), ``train`` (run a training configuration from JSON),
``landscape`` (dense loss sweep over two viewpoint axes, CSV out),
``bench`` (canned comparison suites), ``emit-dataset`` (render an
adversarial-viewpoint image set with a manifest).

Every subcommand takes a single ``--seed`` that controls all of its
randomness. Errors exit nonzero with a one-line message on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .classifier import LossOracle, load_classifier, save_classifier
from .errors import ViewLabError
from .evalbench import (
    DESK_ATTACK,
    DESK_INTRINSICS,
    DESK_TRAIN,
    attack_comparison_suite,
    emit_dataset,
    loss_landscape_grid,
    make_object_library_cached,
    training_comparison_suite,
    _pretrained_classifier,
)
from .geometry import default_bounds
from .gmvfool import (
    AttackConfig,
    gmvfool_attack,
    init_mixture,
    save_mixture,
    save_trace,
)
from .renderer import load_scene, make_object_library, save_scene
from .viat import TrainConfig, save_manifest, save_metrics, viat_train


def _demo_setup(scene_path, classifier_path, seed):
    """Resolve --scene/--classifier, generating seeded defaults for whichever
    is missing so every subcommand runs out of the box."""
    if scene_path:
        scene = load_scene(scene_path)
    else:
        scene = make_object_library_cached(3, 2, seed)[0]
    if classifier_path:
        params = load_classifier(classifier_path)
    else:
        n_cls = max(3, scene.class_label + 1)
        library = make_object_library_cached(n_cls, 2, seed)
        if scene_path:
            library = library + [scene]
        params = _pretrained_classifier(library, seed, DESK_INTRINSICS)
    return scene, params


def _cmd_attack(args) -> int:
    scene, params = _demo_setup(args.scene, args.classifier, args.seed)
    bounds = default_bounds()
    cfg = AttackConfig(
        K=args.K, T=args.T, q=args.q, lam=args.lam, eta=args.eta, seed=args.seed
    )
    oracle = LossOracle(params, scene, intr=DESK_INTRINSICS)

    def success(v):
        return oracle.predict(v) != scene.class_label

    mixture0 = init_mixture(cfg.K, bounds, cfg.seed)
    result = gmvfool_attack(oracle, mixture0, cfg, bounds, success_fn=success)

    os.makedirs(args.out, exist_ok=True)
    save_mixture(
        result.mixture, os.path.join(args.out, "mixture.json"), bounds, cfg.seed, cfg.T
    )
    save_trace(result, os.path.join(args.out, "trace.csv"))
    summary = {
        "seed": cfg.seed,
        "K": cfg.K,
        "T": cfg.T,
        "q": cfg.q,
        "lambda": cfg.lam,
        "queries": result.query_count,
        "best_loss": result.best_loss,
        "best_viewpoint": list(result.best_viewpoint.as_array()),
        "entropy": result.entropy.value,
        "entropy_stderr": result.entropy.stderr,
        "success_rate": result.success_rate,
    }
    with open(os.path.join(args.out, "result.json"), "w") as f:
        json.dump(summary, f, indent=2)
    print(
        f"attack done: queries={result.query_count} best_loss={result.best_loss:.4f} "
        f"success_rate={result.success_rate:.3f} entropy={result.entropy.value:.3f}"
    )
    return 0


def _cmd_train(args) -> int:
    with open(args.config) as f:
        cfg_json = json.load(f)
    seed = args.seed if args.seed is not None else cfg_json.get("seed", 0)
    out_dir = cfg_json.get("out_dir", "train_out")

    attack_cfg = replace(
        DESK_ATTACK,
        **{k: cfg_json[k] for k in ("K", "q", "lam") if k in cfg_json},
        n_eval=0,
    )
    train_fields = (
        "epochs",
        "lr",
        "batch_size",
        "batches_per_epoch",
        "pi",
        "T_full",
        "T_inc",
        "mode",
        "clean_pool_per_object",
        "eval_views_per_object",
    )
    cfg = replace(
        DESK_TRAIN,
        **{k: cfg_json[k] for k in train_fields if k in cfg_json},
        attack=attack_cfg,
        seed=seed,
    )
    library = make_object_library(
        cfg_json.get("num_classes", 3), cfg_json.get("objects_per_class", 2), seed
    )
    params0 = _pretrained_classifier(library, seed, DESK_INTRINSICS)
    state = viat_train(library, params0, cfg, intr=DESK_INTRINSICS)

    os.makedirs(out_dir, exist_ok=True)
    save_classifier(state.params, os.path.join(out_dir, "classifier.json"))
    save_metrics(state, os.path.join(out_dir, "metrics.csv"))
    save_manifest(state, os.path.join(out_dir, "manifest.json"))
    last = state.metrics[-1] if state.metrics else {}
    print(f"train done: mode={cfg.mode} epochs={state.epoch} final={last}")
    return 0


def _cmd_landscape(args) -> int:
    scene, params = _demo_setup(args.scene, args.classifier, args.seed)
    axes = tuple(args.axes.split(","))
    if len(axes) != 2:
        raise ValueError("--axes needs two comma-separated names, e.g. psi,phi")
    r1, r2 = (int(x) for x in args.res.lower().split("x"))
    oracle = LossOracle(params, scene, intr=DESK_INTRINSICS)
    grid = loss_landscape_grid(
        oracle, axes=axes, resolution=(r1, r2), csv_path=args.out
    )
    i, j = grid.argmax_cell
    print(
        f"landscape done: {r1}x{r2} cells, argmax at "
        f"{axes[0]}={grid.grid1[i]:.2f} {axes[1]}={grid.grid2[j]:.2f} "
        f"loss={grid.values[i, j]:.4f} -> {args.out}"
    )
    return 0


def _cmd_bench(args) -> int:
    if args.suite == "table4":
        if args.quick:
            report = attack_comparison_suite(
                seed=args.seed,
                num_classes=2,
                objects_per_class=2,
                attack_cfg=replace(DESK_ATTACK, T=10, q=10),
                n_eval=16,
            )
        else:
            report = attack_comparison_suite(seed=args.seed)
    else:
        if args.quick:
            quick_attack = replace(DESK_ATTACK, T=10, q=10, entropy_samples=500)
            quick_train = replace(
                DESK_TRAIN,
                epochs=3,
                batches_per_epoch=5,
                T_full=10,
                T_inc=5,
                attack=quick_attack,
                clean_pool_per_object=8,
                eval_views_per_object=8,
            )
            report = training_comparison_suite(
                seed=args.seed,
                num_classes=2,
                objects_per_class=2,
                train_cfg=quick_train,
                eval_attack=quick_attack,
                n_eval=8,
            )
        else:
            report = training_comparison_suite(seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"{args.suite}_report.json")
    report.save(path)
    for row in report.rows:
        print("  " + "  ".join(f"{k}={v}" for k, v in row.items()))
    print(f"bench done -> {path}")
    return 0


def _cmd_emit_dataset(args) -> int:
    library = make_object_library_cached(3, 2, args.seed)
    params = _pretrained_classifier(library, args.seed, DESK_INTRINSICS)
    bounds = default_bounds()
    base = replace(DESK_ATTACK, T=10, q=10) if args.quick else DESK_ATTACK
    mixtures = {}
    for i, scene in enumerate(library):
        cfg = replace(base, seed=args.seed * 100 + i)
        oracle = LossOracle(params, scene, intr=DESK_INTRINSICS)
        mixtures[i] = gmvfool_attack(
            oracle, init_mixture(cfg.K, bounds, cfg.seed), cfg, bounds
        ).mixture
    manifest = emit_dataset(library, mixtures, args.n, args.out, args.seed)
    print(f"emit-dataset done: {len(manifest['rows'])} images -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viewlab",
        description="Adversarial camera-viewpoint laboratory: attacks, training, benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attack", help="fit an adversarial viewpoint distribution")
    p.add_argument("--scene", default=None, help="scene JSON (default: demo object)")
    p.add_argument("--classifier", default=None, help="classifier checkpoint JSON")
    p.add_argument("--K", type=int, default=DESK_ATTACK.K)
    p.add_argument("--T", type=int, default=DESK_ATTACK.T)
    p.add_argument("--q", type=int, default=DESK_ATTACK.q)
    p.add_argument("--lambda", dest="lam", type=float, default=DESK_ATTACK.lam)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="attack_out", help="output directory")
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("train", help="run a training configuration")
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--seed", type=int, default=None, help="overrides config seed")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("landscape", help="dense loss sweep over two viewpoint axes")
    p.add_argument("--axes", default="psi,phi")
    p.add_argument("--res", default="72x28", help="grid resolution, RxC")
    p.add_argument("--scene", default=None)
    p.add_argument("--classifier", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="landscape.csv")
    p.set_defaults(func=_cmd_landscape)

    p = sub.add_parser("bench", help="canned comparison suites")
    p.add_argument("--suite", choices=("table4", "table2"), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="bench_out")
    p.add_argument("--quick", action="store_true", help="tiny budgets, smoke-scale")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("emit-dataset", help="render adversarial views to disk")
    p.add_argument("--n", type=int, default=10, help="samples per object")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="dataset_out")
    p.add_argument("--quick", action="store_true", help="tiny attack budgets")
    p.set_defaults(func=_cmd_emit_dataset)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ViewLabError, OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
