"""Radial distance correction: extend occluded radial distances of a bubble.

A small feedforward regressor maps the 64 visible radial distances of a
segment (in mm) to the 64 distances of the full bubble outline. The network,
its backpropagation and the Adam optimizer are implemented here directly so
training is deterministic and the gradients are testable against finite
differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DegenerateSegment, NonFiniteLoss
from .geometry import (DEFAULT_RAY_COUNT, LabelMap, PixelScale, StarPolygon,
                       _cast_rays, RAY_STEP_PX)
from .synthgen import Scene

MODEL_VERSION = "bubblekit-rdc/1"
HIDDEN_LAYERS = 3


@dataclass
class RdcSample:
    """One training pair: visible radial distances -> full-outline distances.

    Both vectors are in mm, measured from the centroid of the visible
    segment. `occluded[i]` marks directions whose visible ray ended on a
    pixel of another instance."""

    input: np.ndarray
    target: np.ndarray
    occluded: np.ndarray


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 200
    batch_size: int = 256
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    val_fraction: float = 0.0667
    seed: int = 0

    @classmethod
    def reference(cls) -> "TrainConfig":
        """Full-scale settings: 2000 epochs, batch 1400, 6.67 % validation."""
        return cls(epochs=2000, batch_size=1400)


@dataclass
class RdcModel:
    """Feedforward regressor; hidden activations are rectifiers, the output
    layer is linear. `weights[i]` has shape (fan_in, fan_out) and the forward
    pass is `h @ W + b`."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    k: int = DEFAULT_RAY_COUNT
    unit: str = "mm"
    version: str = MODEL_VERSION
    train_meta: dict = field(default_factory=dict)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]


def init_model(sizes: list[int] | None = None, rng: np.random.Generator | None = None,
               seed: int = 0) -> RdcModel:
    """Symmetric uniform fan-in initialization, zero biases.

    `sizes` defaults to the standard 64-64-64-64-64 configuration."""
    if sizes is None:
        sizes = [DEFAULT_RAY_COUNT] * (HIDDEN_LAYERS + 2)
    if rng is None:
        rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return RdcModel(weights=weights, biases=biases, k=sizes[0])


def _forward(model: RdcModel, x: np.ndarray) -> tuple[np.ndarray, list, list]:
    """Returns (output, pre-activations, activations) for backprop."""
    h = x
    zs, hs = [], [h]
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        zs.append(z)
        h = z if i == last else np.maximum(z, 0.0)
        hs.append(h)
    return h, zs, hs


def predict(model: RdcModel, x: np.ndarray) -> np.ndarray:
    """Forward pass clamped at zero; accepts a single vector or a batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    out, _, _ = _forward(model, x[None, :] if single else x)
    out = np.maximum(out, 0.0)
    return out[0] if single else out


def mse_loss(model: RdcModel, x: np.ndarray, y: np.ndarray) -> float:
    out, _, _ = _forward(model, x)
    return float(np.mean((out - y) ** 2))


def loss_and_grads(model: RdcModel, x: np.ndarray, y: np.ndarray
                   ) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """MSE over all outputs and its gradients w.r.t. every weight and bias."""
    out, zs, hs = _forward(model, x)
    n = out.size
    loss = float(np.sum((out - y) ** 2) / n)
    delta = 2.0 * (out - y) / n
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    for i in range(len(model.weights) - 1, -1, -1):
        grads_w[i] = hs[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (zs[i - 1] > 0.0)
    return loss, grads_w, grads_b


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


def adam_step(params: list[np.ndarray], grads: list[np.ndarray],
              state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One in-place Adam update:
    m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2;
    p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


@dataclass
class LossHistory:
    train: list[float]
    validation: list[float]


def train(samples: list[RdcSample] | tuple[np.ndarray, np.ndarray],
          config: TrainConfig | None = None,
          sizes: list[int] | None = None) -> tuple[RdcModel, LossHistory]:
    """Mini-batch Adam on the MSE over all outputs.

    Deterministic for a fixed (sample order, seed): the validation split and
    the per-epoch shuffles all come from one seeded generator. The recorded
    train loss of an epoch is the mean of its batch losses before each
    update; the validation loss is evaluated after the epoch."""
    config = config or TrainConfig()
    if isinstance(samples, tuple):
        x_all, y_all = samples
    else:
        x_all = np.stack([s.input for s in samples])
        y_all = np.stack([s.target for s in samples])
    n = x_all.shape[0]
    if n < 2:
        raise ValueError("training needs at least 2 samples")

    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(n)
    n_val = max(1, int(round(config.val_fraction * n)))
    if n_val >= n:
        n_val = n - 1
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    x_tr, y_tr = x_all[train_idx], y_all[train_idx]
    x_va, y_va = x_all[val_idx], y_all[val_idx]

    model = init_model(sizes, rng=rng)
    params = model.weights + model.biases
    state = AdamState.for_params(params)
    batch = min(config.batch_size, len(x_tr))

    history = LossHistory(train=[], validation=[])
    for epoch in range(config.epochs):
        order = rng.permutation(len(x_tr))
        losses = []
        for start in range(0, len(order), batch):
            idx = order[start:start + batch]
            loss, gw, gb = loss_and_grads(model, x_tr[idx], y_tr[idx])
            if not np.isfinite(loss):
                raise NonFiniteLoss("training loss is not finite", epoch)
            losses.append(loss)
            adam_step(params, gw + gb, state, config.learning_rate,
                      config.beta1, config.beta2, config.eps)
        history.train.append(float(np.mean(losses)))
        history.validation.append(mse_loss(model, x_va, y_va))

    model.train_meta = {"lr": config.learning_rate, "epochs": config.epochs,
                        "batch": batch, "seed": config.seed,
                        "n_train": len(x_tr), "n_val": len(x_va)}
    return model, history


def _segment_center(labels: LabelMap, instance_id: int) -> tuple[float, float]:
    """Centroid of the instance's pixels, snapped to the nearest instance
    pixel when the centroid itself falls outside (crescent segments)."""
    pts = np.argwhere(labels.ids == instance_id)
    if pts.size == 0:
        raise DegenerateSegment(f"instance {instance_id} has no visible pixels")
    center = pts.mean(axis=0)
    r0, c0 = int(np.rint(center[0])), int(np.rint(center[1]))
    if labels.ids[r0, c0] == instance_id:
        return float(center[0]), float(center[1])
    d2 = ((pts - center) ** 2).sum(axis=1)
    snap = pts[int(np.argmin(d2))]
    return float(snap[0]), float(snap[1])


def _visible_rays(labels: LabelMap, instance_id: int, k: int
                  ) -> tuple[tuple[float, float], np.ndarray, np.ndarray]:
    center = _segment_center(labels, instance_id)
    radii_px, stop = _cast_rays(labels.ids, center, instance_id, k)
    occluded = (stop > 0) & (stop != instance_id)
    return center, radii_px, occluded


def extract_samples(scene: Scene, k: int = DEFAULT_RAY_COUNT
                    ) -> tuple[list[RdcSample], int]:
    """Training samples for every bubble of a scene, occluded or not.

    Inputs are visible radial distances from the visible-segment centroid;
    targets are distances from the same centroid to the bubble's full
    ground-truth outline, both scaled to mm. Returns (samples, n_skipped)
    where skipped counts bubbles without any visible pixel."""
    mm = scene.pixel_scale.mm_per_px
    samples = []
    skipped = 0
    for bubble in scene.bubbles:
        try:
            center, radii_px, occluded = _visible_rays(scene.labels, bubble.id, k)
        except DegenerateSegment:
            skipped += 1
            continue
        full_ids = LabelMap(bubble.full_mask.astype(np.int32))
        target_px, _ = _cast_rays(full_ids.ids, center, 1, k)
        samples.append(RdcSample(input=radii_px * mm, target=target_px * mm,
                                 occluded=occluded))
    return samples, skipped


def correct_polygon(model: RdcModel, labels: LabelMap, instance_id: int,
                    pixel_scale: PixelScale, substitute_all: bool = False
                    ) -> StarPolygon:
    """Predict full-outline radii and substitute them on occluded directions.

    Directions whose visible ray ended on another instance get
    `max(predicted, visible)`; all other directions keep the exactly-known
    visible radius. `substitute_all=True` applies the clamped prediction to
    every direction instead."""
    center, radii_px, occluded = _visible_rays(labels, instance_id, model.k)
    visible_mm = radii_px * pixel_scale.mm_per_px
    predicted = predict(model, visible_mm)
    corrected = visible_mm.copy()
    sel = np.ones(model.k, dtype=bool) if substitute_all else occluded
    corrected[sel] = np.maximum(predicted[sel], visible_mm[sel])
    return StarPolygon(center=center, radii=corrected, unit="mm")


def ray_step_mm(pixel_scale: PixelScale) -> float:
    """One ray-march step in mm; the slack term in input <= target + eps."""
    return RAY_STEP_PX * pixel_scale.mm_per_px


def save_model(path, model: RdcModel) -> None:
    doc = {
        "version": model.version,
        "k": model.k,
        "unit": model.unit,
        "activation": "relu",
        "layers": [{
            "rows": int(w.shape[0]),
            "cols": int(w.shape[1]),
            "weights": [float(v) for v in w.ravel(order="C")],
            "bias": [float(v) for v in b],
        } for w, b in zip(model.weights, model.biases)],
        "train_meta": model.train_meta,
    }
    Path(path).write_text(json.dumps(doc) + "\n")


def load_model(path) -> RdcModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {doc.get('version')!r}")
    if doc.get("activation") != "relu":
        raise ValueError(f"{path}: unsupported activation {doc.get('activation')!r}")
    weights, biases = [], []
    for layer in doc["layers"]:
        w = np.asarray(layer["weights"], dtype=np.float64)
        weights.append(w.reshape(layer["rows"], layer["cols"]))
        biases.append(np.asarray(layer["bias"], dtype=np.float64))
    return RdcModel(weights=weights, biases=biases, k=doc["k"], unit=doc["unit"],
                    train_meta=doc.get("train_meta", {}))
