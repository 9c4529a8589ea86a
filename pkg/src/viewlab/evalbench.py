"""Evaluation metrics, loss-landscape sweeps, baselines, and benchmark suites.

Success accounting is top-1: a render counts as correctly classified only
when the true class's logit strictly exceeds every other logit, so argmax
ties always count against the classifier. Predictions elsewhere use the
lowest class index at ties, making every reported rate deterministic.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .classifier import (
    Architecture,
    ClassifierParams,
    LossOracle,
    accuracy,
    forward_batch,
    init_classifier,
)
from .geometry import (
    VIEW_DIM_NAMES,
    CameraIntrinsics,
    Viewpoint,
    ViewpointBounds,
    default_bounds,
)
from .gmvfool import (
    AttackConfig,
    AttackResult,
    MixtureParams,
    draw_batch,
    gmvfool_attack,
    init_mixture,
)
from .renderer import SceneField, make_object_library, render_viewpoint, save_png
from .viat import (
    TrainConfig,
    pretrain_classifier,
    sample_natural_viewpoint,
    sample_random_viewpoint,
    viat_train,
)

# Shared desk-scale rendering settings: small images keep a full benchmark
# run in minutes while leaving enough signal to classify the object library.
DESK_INTRINSICS = CameraIntrinsics(width=16, height=16, samples_per_ray=32)

DEFAULT_SWEEP_AXES = ("psi", "phi")
DEFAULT_SWEEP_RESOLUTION = (72, 28)


@dataclass(frozen=True)
class LandscapeGrid:
    """Dense loss evaluation over two swept viewpoint axes.

    ``values[i, j]`` is the loss at (axis1 = grid1[i], axis2 = grid2[j]);
    the argmax cell is the first maximal cell in row-major scan order.
    """

    axes: tuple[str, str]
    fixed: dict
    grid1: np.ndarray
    grid2: np.ndarray
    values: np.ndarray
    argmax_cell: tuple[int, int]

    def __post_init__(self):
        for arr in (self.grid1, self.grid2, self.values):
            arr.setflags(write=False)
        if self.values.shape != (len(self.grid1), len(self.grid2)):
            raise ValueError("values matrix does not match the grid resolution")

    @property
    def resolution(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def argmax_viewpoint(self) -> Viewpoint:
        i, j = self.argmax_cell
        coords = dict(self.fixed)
        coords[self.axes[0]] = float(self.grid1[i])
        coords[self.axes[1]] = float(self.grid2[j])
        return Viewpoint(**{name: coords.get(name, 0.0) for name in VIEW_DIM_NAMES})


def loss_landscape_grid(
    oracle,
    axes: tuple[str, str] = DEFAULT_SWEEP_AXES,
    resolution: tuple[int, int] = DEFAULT_SWEEP_RESOLUTION,
    bounds: ViewpointBounds | None = None,
    fixed: dict | None = None,
    csv_path=None,
) -> LandscapeGrid:
    """Evaluate the oracle on a dense grid over two viewpoint axes, the
    other four held fixed (default 0). Exactly r1 * r2 oracle queries.
    """
    bounds = bounds if bounds is not None else default_bounds()
    if axes[0] == axes[1]:
        raise ValueError("swept axes must differ")
    for ax in axes:
        if ax not in VIEW_DIM_NAMES:
            raise ValueError(f"unknown viewpoint axis {ax!r}")
    r1, r2 = resolution
    if r1 < 2 or r2 < 2:
        raise ValueError("resolution must be at least 2 per axis")

    fixed = dict(fixed) if fixed else {}
    for name in VIEW_DIM_NAMES:
        if name not in axes:
            fixed.setdefault(name, 0.0)

    i1, i2 = VIEW_DIM_NAMES.index(axes[0]), VIEW_DIM_NAMES.index(axes[1])
    grid1 = np.linspace(bounds.v_min[i1], bounds.v_max[i1], r1)
    grid2 = np.linspace(bounds.v_min[i2], bounds.v_max[i2], r2)

    values = np.zeros((r1, r2))
    base = {name: float(fixed[name]) for name in VIEW_DIM_NAMES if name not in axes}
    for i, x1 in enumerate(grid1):
        for j, x2 in enumerate(grid2):
            coords = dict(base)
            coords[axes[0]] = float(x1)
            coords[axes[1]] = float(x2)
            values[i, j] = float(
                oracle(Viewpoint(**{n: coords.get(n, 0.0) for n in VIEW_DIM_NAMES}))
            )

    flat = int(np.argmax(values))  # first maximal cell in row-major order
    grid = LandscapeGrid(
        axes=tuple(axes),
        fixed=base,
        grid1=grid1,
        grid2=grid2,
        values=values,
        argmax_cell=(flat // r2, flat % r2),
    )
    if csv_path is not None:
        save_landscape_csv(grid, csv_path)
    return grid


def save_landscape_csv(grid: LandscapeGrid, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([grid.axes[0], grid.axes[1], "loss"])
        for i, x1 in enumerate(grid.grid1):
            for j, x2 in enumerate(grid.grid2):
                writer.writerow([repr(float(x1)), repr(float(x2)), repr(float(grid.values[i, j]))])


def load_landscape_csv(path) -> list:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        return [(float(a), float(b), float(c)) for a, b, c in reader]


def landscape_similarity(ga: LandscapeGrid, gb: LandscapeGrid) -> float:
    """Normalized cross-correlation of two loss grids, in [-1, 1]."""
    a = ga.values - ga.values.mean()
    b = gb.values - gb.values.mean()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 1.0 if na == nb else 0.0
    return float(np.sum(a * b) / (na * nb))


def random_search_attack(
    oracle,
    budget: int,
    bounds: ViewpointBounds,
    rng: np.random.Generator,
) -> tuple[Viewpoint, float]:
    """Uniform search over the viewpoint box; returns the max-loss sample.

    Draws one sample per query so runs with the same generator state share
    a common prefix: the best loss is non-decreasing in budget.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    best_v, best_loss = None, -np.inf
    for _ in range(budget):
        v = Viewpoint.from_array(rng.uniform(bounds.v_min, bounds.v_max))
        loss = float(oracle(v))
        if loss > best_loss:
            best_v, best_loss = v, loss
    return best_v, best_loss


def _predictions(
    params: ClassifierParams, scene: SceneField, views, intr: CameraIntrinsics
) -> np.ndarray:
    images = np.array([render_viewpoint(scene, v, intr).pixels for v in views])
    logits = forward_batch(params, images)
    return np.argmax(logits, axis=1)  # lowest index wins ties


def attack_success_rate(
    params: ClassifierParams,
    mixtures: dict,
    objects: list,
    n: int,
    rng: np.random.Generator,
    bounds: ViewpointBounds | None = None,
    intr: CameraIntrinsics | None = None,
) -> tuple[float, dict]:
    """Fraction of renders from each object's learned distribution that are
    misclassified; argmax ties count as misclassification. Returns the
    pooled rate and the per-object rates."""
    if n < 1:
        raise ValueError("need n >= 1 samples")
    bounds = bounds if bounds is not None else default_bounds()
    intr = intr if intr is not None else DESK_INTRINSICS
    per_object = {}
    hits_total = 0
    for i, scene in enumerate(objects):
        _, _, _, V = draw_batch(mixtures[i], n, bounds, rng)
        images = np.array(
            [render_viewpoint(scene, Viewpoint.from_array(v), intr).pixels for v in V]
        )
        labels = np.full(n, scene.class_label)
        correct = accuracy(params, images, labels)  # strict top-1
        per_object[i] = 1.0 - correct
        hits_total += (1.0 - correct) * n
    return hits_total / (n * len(objects)), per_object


def consistency_eval(
    params: ClassifierParams,
    scene: SceneField,
    pairs: list,
    intr: CameraIntrinsics | None = None,
) -> float:
    """Fraction of viewpoint pairs on which the predicted label agrees."""
    if not pairs:
        raise ValueError("need at least one viewpoint pair")
    intr = intr if intr is not None else DESK_INTRINSICS
    firsts = _predictions(params, scene, [p[0] for p in pairs], intr)
    seconds = _predictions(params, scene, [p[1] for p in pairs], intr)
    return float(np.mean(firsts == seconds))


def emit_dataset(
    objects: list,
    mixtures: dict,
    samples_per_object: int,
    out_dir,
    seed: int,
    bounds: ViewpointBounds | None = None,
    intr: CameraIntrinsics | None = None,
) -> dict:
    """Render adversarial-viewpoint samples to PNGs plus a JSON manifest.

    Fully determined by ``seed``: rerunning produces an identical manifest.
    """
    bounds = bounds if bounds is not None else default_bounds()
    intr = intr if intr is not None else DESK_INTRINSICS
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for i, scene in enumerate(objects):
        _, _, _, V = draw_batch(mixtures[i], samples_per_object, bounds, rng)
        for j, v in enumerate(V):
            name = f"obj{i:03d}_view{j:04d}.png"
            img = render_viewpoint(scene, Viewpoint.from_array(v), intr)
            save_png(img, os.path.join(out_dir, name))
            rows.append(
                {
                    "object_id": i,
                    "class_label": scene.class_label,
                    "viewpoint": [float(x) for x in v],
                    "file": name,
                }
            )
    manifest = {"seed": seed, "samples_per_object": samples_per_object, "rows": rows}
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)
    return manifest


@dataclass
class BenchReport:
    suite: str
    seed: int
    rows: list  # one dict per method / protocol

    def __post_init__(self):
        for row in self.rows:
            for key, val in row.items():
                if key.endswith(("rate", "acc")) and val is not None:
                    if not (0.0 <= val <= 1.0):
                        raise ValueError(f"{key}={val} outside [0, 1]")

    def to_dict(self) -> dict:
        return {"suite": self.suite, "seed": self.seed, "rows": self.rows}

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)


def fresh_attack_accuracy(
    params: ClassifierParams,
    library: list,
    attack_cfg: AttackConfig,
    seed: int,
    n_eval: int = 32,
    bounds: ViewpointBounds | None = None,
    intr: CameraIntrinsics | None = None,
) -> tuple[float, dict]:
    """Attack every object from scratch against ``params`` and measure
    accuracy on renders drawn from the learned distributions. This is the
    evaluation protocol for comparing trained models: the attack never
    reuses mixtures from training."""
    bounds = bounds if bounds is not None else default_bounds()
    intr = intr if intr is not None else DESK_INTRINSICS
    mixtures = {}
    for i, scene in enumerate(library):
        cfg = replace(attack_cfg, seed=seed * 1000 + i)
        oracle = LossOracle(params, scene, intr=intr)
        mixture0 = init_mixture(cfg.K, bounds, cfg.seed)
        mixtures[i] = gmvfool_attack(oracle, mixture0, cfg, bounds).mixture
    rate, per_object = attack_success_rate(
        params,
        mixtures,
        library,
        n_eval,
        np.random.default_rng(seed + 7),
        bounds,
        intr,
    )
    return 1.0 - rate, {i: 1.0 - r for i, r in per_object.items()}


def natural_accuracy(
    params: ClassifierParams,
    library: list,
    n_per_object: int,
    rng: np.random.Generator,
    intr: CameraIntrinsics | None = None,
) -> float:
    intr = intr if intr is not None else DESK_INTRINSICS
    images, labels = [], []
    for scene in library:
        for _ in range(n_per_object):
            v = sample_natural_viewpoint(rng)
            images.append(render_viewpoint(scene, v, intr).pixels)
            labels.append(scene.class_label)
    return accuracy(params, np.array(images), np.array(labels))


def random_view_accuracy(
    params: ClassifierParams,
    library: list,
    n_per_object: int,
    rng: np.random.Generator,
    bounds: ViewpointBounds | None = None,
    intr: CameraIntrinsics | None = None,
) -> float:
    bounds = bounds if bounds is not None else default_bounds()
    intr = intr if intr is not None else DESK_INTRINSICS
    images, labels = [], []
    for scene in library:
        for _ in range(n_per_object):
            v = sample_random_viewpoint(rng, bounds)
            images.append(render_viewpoint(scene, v, intr).pixels)
            labels.append(scene.class_label)
    return accuracy(params, np.array(images), np.array(labels))


# -- benchmark suites ----------------------------------------------------------
# Desk-scale knobs: small enough for minutes-long runs, large enough that
# the qualitative orderings between methods are stable across seeds.

DESK_ATTACK = AttackConfig(
    K=3, T=100, q=20, lam=0.01, eta=0.03, optimizer="adam", n_eval=0,
    entropy_samples=2000,
)

DESK_TRAIN = TrainConfig(
    epochs=15,
    lr=3e-3,
    batch_size=33,
    batches_per_epoch=25,
    T_full=50,
    T_inc=10,
    attack=DESK_ATTACK,
)


def _pretrained_classifier(library, seed: int, intr: CameraIntrinsics):
    # hidden (32, 32): enough capacity for perfect natural-view accuracy,
    # small enough that blanket augmentation cannot patch every viewpoint
    # hole, which keeps the method ordering informative
    num_classes = max(s.class_label for s in library) + 1
    arch = Architecture(
        input_hw=(intr.height, intr.width), hidden=(32, 32), num_classes=num_classes
    )
    params = init_classifier(arch, seed)
    return pretrain_classifier(
        library, params, steps=300, batch_size=32, lr=3e-3, seed=seed, intr=intr
    )


def attack_comparison_suite(
    seed: int = 0,
    num_classes: int = 3,
    objects_per_class: int = 2,
    attack_cfg: AttackConfig | None = None,
    n_eval: int = 64,
    intr: CameraIntrinsics | None = None,
) -> BenchReport:
    """Attack-method comparison on a pretrained toy classifier: uniform
    random search vs the mixture attack with one and with several
    components, under equal query budgets. Reports success rate, learned
    distribution entropy, and query counts."""
    intr = intr if intr is not None else DESK_INTRINSICS
    bounds = default_bounds()
    base = attack_cfg if attack_cfg is not None else DESK_ATTACK
    library = make_object_library_cached(num_classes, objects_per_class, seed)
    params = _pretrained_classifier(library, seed, intr)
    budget = base.T * base.q

    methods = [
        ("random_search", None),
        ("mixture_K1", replace(base, K=1)),
        (f"mixture_K{base.K}", base),
    ]
    rows = []
    for name, cfg in methods:
        successes, entropies, queries = [], [], []
        for i, scene in enumerate(library):
            oracle = LossOracle(params, scene, intr=intr)
            if cfg is None:
                rng = np.random.default_rng([seed, i])
                best_v, _ = random_search_attack(oracle, budget, bounds, rng)
                pred = oracle.predict(best_v)
                successes.append(float(pred != scene.class_label))
                entropies.append(None)
            else:
                run_cfg = replace(cfg, seed=seed * 100 + i)
                mixture0 = init_mixture(run_cfg.K, bounds, run_cfg.seed)
                result = gmvfool_attack(oracle, mixture0, run_cfg, bounds)
                rate, _ = attack_success_rate(
                    params,
                    {0: result.mixture},
                    [scene],
                    n_eval,
                    np.random.default_rng([seed, i, 2]),
                    bounds,
                    intr,
                )
                successes.append(rate)
                entropies.append(result.entropy.value)
            queries.append(oracle.query_count)
        ent = [e for e in entropies if e is not None]
        rows.append(
            {
                "method": name,
                "success_rate": float(np.mean(successes)),
                "mean_entropy": float(np.mean(ent)) if ent else None,
                "queries_per_object": int(np.mean(queries)),
            }
        )
    return BenchReport(suite="table4", seed=seed, rows=rows)


def training_comparison_suite(
    seed: int = 0,
    num_classes: int = 3,
    objects_per_class: int = 4,
    train_cfg: TrainConfig | None = None,
    eval_attack: AttackConfig | None = None,
    n_eval: int = 24,
    intr: CameraIntrinsics | None = None,
) -> BenchReport:
    """Training-method comparison: standard benign-view training vs the two
    augmentation baselines vs the alternating adversarial trainer, all
    evaluated with fresh attacks against the final models."""
    intr = intr if intr is not None else DESK_INTRINSICS
    base = train_cfg if train_cfg is not None else DESK_TRAIN
    eval_cfg = eval_attack if eval_attack is not None else replace(
        DESK_ATTACK, n_eval=0, entropy_samples=2000
    )
    library = make_object_library_cached(num_classes, objects_per_class, seed)
    standard = _pretrained_classifier(library, seed, intr)

    rows = []
    eval_rng_seed = seed + 31

    def evaluate(name, params):
        clean = natural_accuracy(
            params, library, n_eval, np.random.default_rng(eval_rng_seed), intr
        )
        adv, _ = fresh_attack_accuracy(
            params, library, eval_cfg, seed=seed + 53, n_eval=n_eval, intr=intr
        )
        rows.append({"method": name, "clean_acc": clean, "adv_acc": adv})

    evaluate("standard", standard)
    for mode in ("natural_aug", "random_aug", "viat"):
        cfg = replace(base, mode=mode, seed=seed)
        state = viat_train(library, standard, cfg, intr=intr)
        evaluate(mode, state.params)
    return BenchReport(suite="table2", seed=seed, rows=rows)


_LIBRARY_CACHE = {}


def make_object_library_cached(num_classes: int, objects_per_class: int, seed: int):
    """Library construction is cheap but used everywhere; cache by arguments
    so repeated suite calls share objects."""
    key = (num_classes, objects_per_class, seed)
    if key not in _LIBRARY_CACHE:
        _LIBRARY_CACHE[key] = make_object_library(num_classes, objects_per_class, seed)
    return _LIBRARY_CACHE[key]
