"""Viewpoint-robust classifier training.

Alternates two phases per epoch:

  1. Inner maximization: keep one attack mixture per object describing its
     current worst-case viewpoint distribution. The first epoch fits every
     object's mixture from scratch with a full-length attack; later epochs
     resample just one object per class and continue its stored mixture for
     a few iterations, so the attack cost is amortized across training.
  2. Outer minimization: standard minibatch training where a small
     adversarial slice of each batch (1:32 against clean by default) is
     rendered from viewpoints drawn from the stored mixtures. With
     probability pi an adversarial draw uses the mixture of a different
     object of the same class, which spreads each object's hard views
     across its class.

Two drop-in baselines reuse the same loop with the adversarial slots
filled differently: "natural_aug" draws extra benign views, "random_aug"
draws viewpoints uniformly over the full bounds.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .classifier import (
    ClassifierParams,
    LossOracle,
    TrainBatch,
    accuracy,
    train_step,
)
from .geometry import CameraIntrinsics, Viewpoint, ViewpointBounds, default_bounds
from .gmvfool import (
    AttackConfig,
    MixtureParams,
    draw_batch,
    gmvfool_attack,
    init_mixture,
    log_density_v,
    mixture_from_dict,
    mixture_to_dict,
)
from .optim import adam_init
from .renderer import SceneField, render_viewpoint

TRAIN_MODES = ("viat", "natural_aug", "random_aug")

# Benign viewing habits: any azimuth, small tilt, moderate side elevation,
# slight framing offsets. Deliberately far from the extremes of the attack
# bounds so robustness to odd viewpoints has to be trained, not inherited.
NATURAL_RANGES = {
    "psi": (-180.0, 180.0),
    "theta": (-10.0, 10.0),
    "phi": (30.0, 70.0),
    "dx": (-0.1, 0.1),
    "dy": (-0.1, 0.1),
    "dz": (-0.1, 0.1),
}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    lr: float = 3e-3
    batch_size: int = 33
    batches_per_epoch: int = 30
    adv_clean_ratio: tuple[int, int] = (1, 32)
    pi: float = 0.5  # probability an adversarial draw borrows a classmate's mixture
    T_full: int = 50  # attack iterations per object, first epoch
    T_inc: int = 10  # continuation iterations, later epochs
    attack: AttackConfig = field(default_factory=AttackConfig)
    mode: str = "viat"
    seed: int = 0
    clean_pool_per_object: int = 32
    eval_views_per_object: int = 16
    # Every n-th epoch, measure accuracy under a from-scratch attack on the
    # current weights. 0 disables it: a fresh attack costs T_full * q oracle
    # queries per object, which dwarfs the rest of an epoch.
    fresh_eval_every: int = 0

    def __post_init__(self):
        if self.mode not in TRAIN_MODES:
            raise ValueError(f"mode must be one of {TRAIN_MODES}")
        if not (0.0 <= self.pi <= 1.0):
            raise ValueError("pi must be a probability")
        a, c = self.adv_clean_ratio
        if a < 1 or c < 0:
            raise ValueError("adversarial:clean ratio needs a >= 1, c >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class TrainState:
    config: TrainConfig
    library: list
    bounds: ViewpointBounds
    intr: CameraIntrinsics
    params: ClassifierParams
    mixtures: dict  # object index -> MixtureParams (viat mode only)
    epoch: int  # epochs completed
    metrics: list  # one dict per epoch
    clean_images: np.ndarray  # (n_obj, pool, H, W, 3)
    clean_labels: np.ndarray  # (n_obj,)
    opt_state: object
    epoch_rng: np.random.Generator
    object_seeds: list  # one integer stream seed per object

    @property
    def classes(self) -> dict:
        """class label -> list of object indices"""
        out = {}
        for i, scene in enumerate(self.library):
            out.setdefault(scene.class_label, []).append(i)
        return out


def sample_natural_viewpoint(rng: np.random.Generator) -> Viewpoint:
    """A benign view: the kind of framing a person photographing the object
    would choose."""
    lo = [NATURAL_RANGES[k][0] for k in ("psi", "theta", "phi", "dx", "dy", "dz")]
    hi = [NATURAL_RANGES[k][1] for k in ("psi", "theta", "phi", "dx", "dy", "dz")]
    return Viewpoint.from_array(rng.uniform(lo, hi))


def sample_random_viewpoint(rng: np.random.Generator, bounds: ViewpointBounds) -> Viewpoint:
    """Uniform over the full viewpoint box."""
    return Viewpoint.from_array(rng.uniform(bounds.v_min, bounds.v_max))


def _render_pool(
    library, intr: CameraIntrinsics, per_object: int, rng: np.random.Generator
):
    images = np.zeros((len(library), per_object, intr.height, intr.width, 3))
    labels = np.zeros(len(library), dtype=int)
    for i, scene in enumerate(library):
        labels[i] = scene.class_label
        for j in range(per_object):
            v = sample_natural_viewpoint(rng)
            images[i, j] = render_viewpoint(scene, v, intr).pixels
    return images, labels


def init_train_state(
    library: list,
    params: ClassifierParams,
    config: TrainConfig,
    bounds: ViewpointBounds | None = None,
    intr: CameraIntrinsics | None = None,
) -> TrainState:
    if not library:
        raise ValueError("object library is empty")
    bounds = bounds if bounds is not None else default_bounds()
    intr = intr if intr is not None else CameraIntrinsics()
    ss = np.random.SeedSequence(config.seed)
    pool_ss, epoch_ss, *obj_ss = ss.spawn(2 + len(library))
    pool_rng = np.random.default_rng(pool_ss)
    clean_images, clean_labels = _render_pool(
        library, intr, config.clean_pool_per_object, pool_rng
    )
    return TrainState(
        config=config,
        library=library,
        bounds=bounds,
        intr=intr,
        params=params,
        mixtures={},
        epoch=0,
        metrics=[],
        clean_images=clean_images,
        clean_labels=clean_labels,
        opt_state=adam_init(params.flat_arrays()),
        epoch_rng=np.random.default_rng(epoch_ss),
        object_seeds=[int(s.generate_state(1)[0]) for s in obj_ss],
    )


def _attack_object(state: TrainState, obj: int, iters: int, warm: bool) -> None:
    """Fit or continue the stored mixture for one object against the current
    classifier. Continuations restart optimizer moments; only the mixture
    itself carries over."""
    cfg = state.config.attack
    scene = state.library[obj]
    # one fresh seed per (object, occasion), reproducible across runs
    occasion_rng = np.random.default_rng([state.object_seeds[obj], state.epoch])
    seed = int(occasion_rng.integers(2**31))
    run_cfg = replace(cfg, T=iters, seed=seed)
    if warm and obj in state.mixtures:
        mixture0 = state.mixtures[obj]
    else:
        mixture0 = init_mixture(cfg.K, state.bounds, seed)
    oracle = LossOracle(state.params, scene, intr=state.intr)
    result = gmvfool_attack(oracle, mixture0, run_cfg, state.bounds)
    state.mixtures[obj] = result.mixture


def stochastic_inner_update(state: TrainState) -> list:
    """Refresh attack mixtures for the upcoming epoch; returns the objects
    attacked. First epoch: every object, full length. Afterwards: one
    uniformly chosen object per class, continued briefly."""
    first = state.epoch == 0
    if first:
        attacked = list(range(len(state.library)))
        for obj in attacked:
            _attack_object(state, obj, state.config.T_full, warm=False)
    else:
        attacked = [
            int(objs[state.epoch_rng.integers(len(objs))])
            for _, objs in sorted(state.classes.items())
        ]
        for obj in attacked:
            _attack_object(state, obj, state.config.T_inc, warm=True)
    return attacked


def share_distribution(
    state: TrainState, obj: int, rng: np.random.Generator
) -> MixtureParams:
    """The mixture an adversarial draw for ``obj`` should use: with
    probability pi, a uniformly chosen classmate's; otherwise its own.
    Objects alone in their class always use their own."""
    mates = [i for i in state.classes[state.library[obj].class_label] if i != obj]
    if mates and rng.uniform() < state.config.pi:
        return state.mixtures[int(mates[rng.integers(len(mates))])]
    return state.mixtures[obj]


def _adversarial_viewpoint(state: TrainState, obj: int, rng) -> Viewpoint:
    mode = state.config.mode
    if mode == "viat":
        mixture = share_distribution(state, obj, rng)
        _, _, _, V = draw_batch(mixture, 1, state.bounds, rng)
        return Viewpoint.from_array(V[0])
    if mode == "random_aug":
        return sample_random_viewpoint(rng, state.bounds)
    return sample_natural_viewpoint(rng)


def make_training_batch(state: TrainState, rng: np.random.Generator) -> TrainBatch:
    """One mixed minibatch. The adversarial share is ceil(batch * a/(a+c))
    for ratio a:c; remaining rows are drawn from the pre-rendered clean
    pool."""
    cfg = state.config
    a, c = cfg.adv_clean_ratio
    n_adv = math.ceil(cfg.batch_size * a / (a + c))
    n_clean = cfg.batch_size - n_adv

    h, w = state.intr.height, state.intr.width
    images = np.zeros((cfg.batch_size, h, w, 3))
    labels = np.zeros(cfg.batch_size, dtype=int)
    tags = []

    for i in range(n_adv):
        obj = int(rng.integers(len(state.library)))
        v = _adversarial_viewpoint(state, obj, rng)
        images[i] = render_viewpoint(state.library[obj], v, state.intr).pixels
        labels[i] = state.library[obj].class_label
        tags.append("adversarial")

    pool = cfg.clean_pool_per_object
    for i in range(n_adv, cfg.batch_size):
        obj = int(rng.integers(len(state.library)))
        j = int(rng.integers(pool))
        images[i] = state.clean_images[obj, j]
        labels[i] = state.clean_labels[obj]
        tags.append("clean")

    return TrainBatch(images=images, labels=labels, tags=tuple(tags))


def _eval_clean(state: TrainState, rng: np.random.Generator) -> float:
    per = state.config.eval_views_per_object
    images, labels = [], []
    for scene in state.library:
        for _ in range(per):
            v = sample_natural_viewpoint(rng)
            images.append(render_viewpoint(scene, v, state.intr).pixels)
            labels.append(scene.class_label)
    return accuracy(state.params, np.array(images), np.array(labels))


def _eval_adversarial(state: TrainState, rng: np.random.Generator) -> float:
    """Accuracy on viewpoints drawn from each object's stored mixture."""
    per = state.config.eval_views_per_object
    images, labels = [], []
    for i, scene in enumerate(state.library):
        _, _, _, V = draw_batch(state.mixtures[i], per, state.bounds, rng)
        for v in V:
            images.append(render_viewpoint(scene, Viewpoint.from_array(v), state.intr).pixels)
            labels.append(scene.class_label)
    return accuracy(state.params, np.array(images), np.array(labels))


def _eval_fresh_attack(state: TrainState, rng: np.random.Generator) -> float:
    """Accuracy under mixtures re-fitted from scratch against the current
    weights; the stored training mixtures are left untouched."""
    cfg = state.config
    per = cfg.eval_views_per_object
    images, labels = [], []
    for scene in state.library:
        seed = int(rng.integers(2**31))
        run_cfg = replace(cfg.attack, T=cfg.T_full, seed=seed)
        oracle = LossOracle(state.params, scene, intr=state.intr)
        mixture = gmvfool_attack(
            oracle, init_mixture(run_cfg.K, state.bounds, seed), run_cfg, state.bounds
        ).mixture
        _, _, _, V = draw_batch(mixture, per, state.bounds, rng)
        for v in V:
            images.append(render_viewpoint(scene, Viewpoint.from_array(v), state.intr).pixels)
            labels.append(scene.class_label)
    return accuracy(state.params, np.array(images), np.array(labels))


def _mean_entropy(state: TrainState, rng: np.random.Generator, n: int = 512) -> float:
    vals = []
    for mixture in state.mixtures.values():
        _, _, U, _ = draw_batch(mixture, n, state.bounds, rng)
        vals.append(-np.mean(log_density_v(mixture, U, state.bounds)))
    return float(np.mean(vals))


def run_epoch(state: TrainState) -> dict:
    """One alternation: refresh mixtures (viat mode), then minibatch steps."""
    if state.config.mode == "viat":
        attacked = stochastic_inner_update(state)
    else:
        attacked = []

    for _ in range(state.config.batches_per_epoch):
        batch = make_training_batch(state, state.epoch_rng)
        state.params, _ = train_step(
            state.params, batch, state.config.lr, state.opt_state, optimizer="adam"
        )

    state.epoch += 1
    eval_rng = np.random.default_rng([state.config.seed, 10_000 + state.epoch])
    every = state.config.fresh_eval_every
    fresh = None
    if every > 0 and state.epoch % every == 0:
        fresh = _eval_fresh_attack(state, eval_rng)
    row = {
        "epoch": state.epoch,
        "clean_acc": _eval_clean(state, eval_rng),
        "adv_acc_own_attack": _eval_adversarial(state, eval_rng) if state.mixtures else None,
        "adv_acc_fresh_attack": fresh,
        "mean_entropy": _mean_entropy(state, eval_rng) if state.mixtures else None,
        "objects_attacked": len(attacked),
    }
    state.metrics.append(row)
    return row


def viat_train(
    library: list,
    params: ClassifierParams,
    config: TrainConfig,
    bounds: ViewpointBounds | None = None,
    intr: CameraIntrinsics | None = None,
) -> TrainState:
    """Full training run. With epochs=0 the classifier passes through
    untouched (useful as the undefended reference point)."""
    state = init_train_state(library, params, config, bounds, intr)
    for _ in range(config.epochs):
        run_epoch(state)
    return state


def pretrain_classifier(
    library: list,
    params: ClassifierParams,
    steps: int,
    batch_size: int,
    lr: float,
    seed: int,
    intr: CameraIntrinsics | None = None,
) -> ClassifierParams:
    """Standard training on benign views only; the undefended baseline."""
    intr = intr if intr is not None else CameraIntrinsics()
    rng = np.random.default_rng(seed)
    pool_images, pool_labels = _render_pool(library, intr, 32, rng)
    n_obj, pool = pool_images.shape[:2]
    opt = adam_init(params.flat_arrays())
    for _ in range(steps):
        objs = rng.integers(n_obj, size=batch_size)
        js = rng.integers(pool, size=batch_size)
        batch = TrainBatch(
            images=pool_images[objs, js],
            labels=pool_labels[objs],
            tags=("clean",) * batch_size,
        )
        params, _ = train_step(params, batch, lr, opt, optimizer="adam")
    return params


# -- persistence ---------------------------------------------------------------

def save_metrics(state: TrainState, path) -> None:
    cols = [
        "epoch",
        "clean_acc",
        "adv_acc_own_attack",
        "adv_acc_fresh_attack",
        "mean_entropy",
    ]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(cols)
        for row in state.metrics:
            writer.writerow(["" if row[c] is None else row[c] for c in cols])


def run_manifest(state: TrainState) -> dict:
    cfg = state.config
    return {
        "mode": cfg.mode,
        "seed": cfg.seed,
        "epochs_completed": state.epoch,
        "num_objects": len(state.library),
        "num_classes": len(state.classes),
        "config": {
            "epochs": cfg.epochs,
            "lr": cfg.lr,
            "batch_size": cfg.batch_size,
            "batches_per_epoch": cfg.batches_per_epoch,
            "adv_clean_ratio": list(cfg.adv_clean_ratio),
            "pi": cfg.pi,
            "T_full": cfg.T_full,
            "T_inc": cfg.T_inc,
            "attack": {
                "K": cfg.attack.K,
                "q": cfg.attack.q,
                "lam": cfg.attack.lam,
                "optimizer": cfg.attack.optimizer,
            },
        },
        "bounds": state.bounds.to_dict(),
        "mixtures": {str(i): mixture_to_dict(m) for i, m in state.mixtures.items()},
        "metrics": state.metrics,
    }


def save_manifest(state: TrainState, path) -> None:
    with open(path, "w") as f:
        json.dump(run_manifest(state), f, indent=2)
