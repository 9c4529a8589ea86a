"""A small fully-connected image classifier with manual backprop.

Images come in as (H, W, 3) float arrays in [0, 1] and are flattened into
a single feature vector; hidden layers use tanh. Everything is plain
numpy so gradients stay inspectable and the parameter count stays small
enough to train on a desk in seconds.

Also home to the black-box loss oracle used by the viewpoint attack: it
binds a classifier, a scene, and a label, renders the requested viewpoint,
and returns only the scalar cross-entropy, counting its queries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import LabelOutOfRange, ShapeMismatch
from .geometry import CameraIntrinsics, Viewpoint, camera_pose
from .optim import AdamState, adam_init, adam_step, sgd_step
from .renderer import SceneField, render_image

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Architecture:
    input_hw: tuple[int, int] = (32, 32)
    channels: int = 3
    hidden: tuple[int, ...] = (64, 64)
    num_classes: int = 4

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be >= 1")

    @property
    def input_dim(self) -> int:
        return self.input_hw[0] * self.input_hw[1] * self.channels

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim,) + self.hidden + (self.num_classes,)


@dataclass
class ClassifierParams:
    arch: Architecture
    weights: list  # weights[i]: (layer_dims[i], layer_dims[i+1])
    biases: list  # biases[i]: (layer_dims[i+1],)

    def flat_arrays(self) -> list:
        return list(self.weights) + list(self.biases)

    def replace_flat(self, arrays: list) -> "ClassifierParams":
        n = len(self.weights)
        return ClassifierParams(arch=self.arch, weights=arrays[:n], biases=arrays[n:])


def init_classifier(arch: Architecture, seed: int) -> ClassifierParams:
    """Gaussian init scaled by 1/sqrt(fan_in); biases start at zero."""
    rng = np.random.default_rng(seed)
    dims = arch.layer_dims
    weights = [
        rng.normal(0.0, 1.0 / np.sqrt(dims[i]), size=(dims[i], dims[i + 1]))
        for i in range(len(dims) - 1)
    ]
    biases = [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)]
    return ClassifierParams(arch=arch, weights=weights, biases=biases)


def _flatten_images(params: ClassifierParams, images: np.ndarray) -> np.ndarray:
    images = np.asarray(images, dtype=float)
    h, w = params.arch.input_hw
    c = params.arch.channels
    if images.shape[-3:] != (h, w, c):
        raise ShapeMismatch(
            f"expected images of shape (..., {h}, {w}, {c}), got {images.shape}"
        )
    batched = images.reshape(-1, params.arch.input_dim)
    return batched


def forward_batch(params: ClassifierParams, images: np.ndarray) -> np.ndarray:
    """Logits for a batch of images; shape (N, num_classes)."""
    x = _flatten_images(params, images)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        x = x @ w + b
        if i < len(params.weights) - 1:
            x = np.tanh(x)
    return x


def forward(params: ClassifierParams, image: np.ndarray) -> np.ndarray:
    """Logits for a single (H, W, 3) image; shape (num_classes,)."""
    return forward_batch(params, np.asarray(image)[None, ...])[0]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def _check_labels(labels: np.ndarray, num_classes: int) -> None:
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise LabelOutOfRange(
            f"labels must lie in [0, {num_classes - 1}], got {labels.tolist()}"
        )


def cross_entropy(logits: np.ndarray, label: int, num_classes: int | None = None) -> float:
    """Negative log-likelihood of ``label`` under the logits."""
    logits = np.asarray(logits, dtype=float)
    n = logits.shape[-1] if num_classes is None else num_classes
    _check_labels(np.asarray([label]), n)
    return float(-log_softmax(logits)[..., label])


@dataclass(frozen=True)
class TrainBatch:
    """A labeled image batch; ``tags`` marks each row "adversarial" or "clean"."""

    images: np.ndarray  # (N, H, W, 3)
    labels: np.ndarray  # (N,) int
    tags: tuple[str, ...]

    def __post_init__(self):
        if len(self.images) != len(self.labels) or len(self.labels) != len(self.tags):
            raise ValueError("images, labels, tags must have equal length")


def batch_loss_and_grads(
    params: ClassifierParams, images: np.ndarray, labels: np.ndarray
) -> tuple[float, list]:
    """Mean cross-entropy and its gradient w.r.t. every weight and bias.

    Manual backprop through the tanh MLP; returns grads in flat_arrays()
    order (weights then biases).
    """
    labels = np.asarray(labels, dtype=int)
    _check_labels(labels, params.arch.num_classes)
    x = _flatten_images(params, images)
    n = x.shape[0]
    if labels.shape != (n,):
        raise ShapeMismatch(f"expected {n} labels, got shape {labels.shape}")

    # forward, keeping activations
    acts = [x]
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = acts[-1] @ w + b
        acts.append(np.tanh(z) if i < len(params.weights) - 1 else z)
    logits = acts[-1]

    logp = log_softmax(logits)
    loss = float(-np.mean(logp[np.arange(n), labels]))

    # backward: d(loss)/d(logits) = (softmax - onehot) / n
    delta = np.exp(logp)
    delta[np.arange(n), labels] -= 1.0
    delta /= n

    w_grads = [None] * len(params.weights)
    b_grads = [None] * len(params.biases)
    for i in range(len(params.weights) - 1, -1, -1):
        w_grads[i] = acts[i].T @ delta
        b_grads[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * (1.0 - acts[i] ** 2)
    return loss, w_grads + b_grads


def train_step(
    params: ClassifierParams,
    batch: TrainBatch,
    lr: float,
    opt_state: AdamState | None = None,
    optimizer: str = "adam",
) -> tuple[ClassifierParams, float]:
    """One minimization step on the batch; returns updated params and loss."""
    loss, grads = batch_loss_and_grads(params, batch.images, batch.labels)
    arrays = params.flat_arrays()
    if optimizer == "adam":
        if opt_state is None:
            raise ValueError("adam needs an opt_state (use adam_init)")
        new = adam_step(arrays, grads, opt_state, lr)
    elif optimizer == "sgd":
        new = sgd_step(arrays, grads, lr)
    else:
        raise ValueError(f"unknown optimizer {optimizer!r}")
    return params.replace_flat(new), loss


def accuracy(params: ClassifierParams, images: np.ndarray, labels: np.ndarray) -> float:
    """Fraction classified correctly; argmax ties count as errors."""
    logits = forward_batch(params, images)
    labels = np.asarray(labels, dtype=int)
    target = logits[np.arange(len(labels)), labels]
    others = logits.copy()
    others[np.arange(len(labels)), labels] = -np.inf
    correct = target > np.max(others, axis=1)
    return float(np.mean(correct))


def loss_for_viewpoint(
    params: ClassifierParams,
    scene: SceneField,
    v: Viewpoint,
    label: int,
    intr: CameraIntrinsics,
) -> float:
    """Render the scene from ``v`` and return the classifier's cross-entropy."""
    img = render_image(scene, camera_pose(v), intr)
    return cross_entropy(forward(params, img.pixels), label, params.arch.num_classes)


class LossOracle:
    """Black-box scalar loss of a fixed (classifier, scene, label) triple.

    Callers see only ``oracle(viewpoint) -> float``; internally each call
    renders one image deterministically. ``query_count`` tallies calls.
    """

    def __init__(
        self,
        params: ClassifierParams,
        scene: SceneField,
        label: int | None = None,
        intr: CameraIntrinsics | None = None,
    ):
        self.params = params
        self.scene = scene
        self.label = scene.class_label if label is None else label
        self.intr = intr if intr is not None else CameraIntrinsics()
        _check_labels(np.asarray([self.label]), params.arch.num_classes)
        self.query_count = 0

    def __call__(self, v: Viewpoint) -> float:
        self.query_count += 1
        return loss_for_viewpoint(self.params, self.scene, v, self.label, self.intr)

    def predict(self, v: Viewpoint) -> int:
        """Predicted class at a viewpoint (lowest index wins argmax ties).
        Does not count against query_count; evaluation only."""
        img = render_image(self.scene, camera_pose(v), self.intr)
        return int(np.argmax(forward(self.params, img.pixels)))


# -- checkpoints --------------------------------------------------------------

def save_classifier(params: ClassifierParams, path) -> None:
    blob = {
        "version": CHECKPOINT_VERSION,
        "arch": {
            "input_hw": list(params.arch.input_hw),
            "channels": params.arch.channels,
            "hidden": list(params.arch.hidden),
            "num_classes": params.arch.num_classes,
        },
        # float().hex() round-trips exactly through JSON
        "weights": [[x.hex() for x in w.ravel()] for w in params.weights],
        "biases": [[x.hex() for x in b] for b in params.biases],
    }
    with open(path, "w") as f:
        json.dump(blob, f)


def load_classifier(path) -> ClassifierParams:
    with open(path) as f:
        blob = json.load(f)
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')!r}")
    arch = Architecture(
        input_hw=tuple(blob["arch"]["input_hw"]),
        channels=blob["arch"]["channels"],
        hidden=tuple(blob["arch"]["hidden"]),
        num_classes=blob["arch"]["num_classes"],
    )
    dims = arch.layer_dims
    weights = [
        np.array([float.fromhex(x) for x in blob["weights"][i]]).reshape(
            dims[i], dims[i + 1]
        )
        for i in range(len(dims) - 1)
    ]
    biases = [
        np.array([float.fromhex(x) for x in blob["biases"][i]]) for i in range(len(dims) - 1)
    ]
    return ClassifierParams(arch=arch, weights=weights, biases=biases)
