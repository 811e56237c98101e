"""Fixture production: train a tiny CNN, export model + datasets + manifest."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import synthetic
from .export import export_model
from .formats import ExportError, write_archive, write_dataset
from .models import TinyResNet

REFERENCE_INPUTS = 16


@dataclass
class FixtureSpec:
    seed: int = 0
    image_size: int = 24
    train_samples: int = 2048
    test_samples: int = 128
    ood_samples: int = 128
    epochs: int = 12
    batch_size: int = 64
    lr: float = 2e-3
    weight_decay: float = 5e-4
    noise_augment: float = 0.35  # max sigma of additive train-time noise
    label_smoothing: float = 0.1
    mixup_alpha: float = 1.0  # confidence calibration off the data manifold
    min_accuracy: float = 0.90


def train_fixture_model(spec: FixtureSpec):
    """Deterministically train the toy CNN; returns (model, stats, history)."""
    torch.manual_seed(spec.seed)
    torch.use_deterministic_algorithms(True)
    rng = np.random.default_rng(spec.seed)

    train_x, train_y = synthetic.make_id_samples(rng, spec.train_samples, spec.image_size)
    mean, std = synthetic.normalization_stats(train_x)
    train_x = synthetic.normalize(train_x, mean, std)

    model = TinyResNet(num_classes=synthetic.NUM_CLASSES)
    opt = torch.optim.Adam(model.parameters(), lr=spec.lr, weight_decay=spec.weight_decay)
    loss_fn = nn.CrossEntropyLoss(label_smoothing=spec.label_smoothing)
    xs = torch.from_numpy(train_x)
    ys = torch.from_numpy(train_y.astype(np.int64))

    history = []
    model.train()
    order_rng = np.random.default_rng(spec.seed + 1)
    for epoch in range(spec.epochs):
        order = order_rng.permutation(spec.train_samples)
        total = 0.0
        for start in range(0, spec.train_samples, spec.batch_size):
            idx = order[start : start + spec.batch_size]
            batch = xs[idx]
            target = ys[idx]
            if spec.noise_augment > 0:
                sigma = spec.noise_augment * torch.rand(len(idx), 1, 1, 1)
                batch = batch + sigma * torch.randn_like(batch)
            opt.zero_grad()
            if spec.mixup_alpha > 0:
                lam = float(np.random.default_rng(spec.seed * 100003 + epoch * 1009 + start).beta(
                    spec.mixup_alpha, spec.mixup_alpha))
                perm = torch.randperm(len(idx))
                mixed = lam * batch + (1 - lam) * batch[perm]
                logits = model(mixed)
                loss = lam * loss_fn(logits, target) + (1 - lam) * loss_fn(logits, target[perm])
            else:
                loss = loss_fn(model(batch), target)
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
        history.append(total / spec.train_samples)
    if not np.isfinite(history[-1]):
        raise ExportError(f"training diverged; loss trace: {history}")
    model.eval()
    return model, (mean, std), history


def _accuracy(model, images: np.ndarray, labels: np.ndarray) -> float:
    with torch.no_grad():
        logits = model(torch.from_numpy(images))
    return float((logits.argmax(dim=1).numpy() == labels).mean())


def make_fixtures(out_dir, spec: FixtureSpec | None = None) -> dict:
    """Train, export, and write the full fixture set; returns the manifest."""
    spec = spec or FixtureSpec()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    model, (mean, std), history = train_fixture_model(spec)

    data_rng = np.random.default_rng(spec.seed + 2)
    test_x, test_y = synthetic.make_id_samples(data_rng, spec.test_samples, spec.image_size)
    test_x = synthetic.normalize(test_x, mean, std)
    acc = _accuracy(model, test_x, test_y)
    if acc < spec.min_accuracy:
        raise ExportError(
            f"fixture model reached only {acc:.3f} test accuracy "
            f"(need >= {spec.min_accuracy}); loss trace: {history}"
        )

    noise = synthetic.normalize(
        synthetic.make_uniform_noise(data_rng, spec.ood_samples, spec.image_size), mean, std)
    texture = synthetic.normalize(
        synthetic.make_texture_shift(data_rng, spec.ood_samples, spec.image_size), mean, std)

    input_shape = (3, spec.image_size, spec.image_size)
    export = export_model(model, input_shape)

    graph_path = out_dir / "toycnn.graph"
    weights_path = out_dir / "toycnn.gwta"
    Path(graph_path).write_text(export.graph_text, encoding="utf-8")
    write_archive(weights_path, export.weights)
    write_dataset(out_dir / "id_test.gwta", test_x, test_y)
    write_dataset(out_dir / "ood_noise.gwta", noise)
    write_dataset(out_dir / "ood_texture.gwta", texture)

    ref_inputs = test_x[:REFERENCE_INPUTS]
    with torch.no_grad():
        ref_logits = model(torch.from_numpy(ref_inputs)).numpy().astype(np.float32)
    write_archive(out_dir / "reference.gwta", {"inputs": ref_inputs, "logits": ref_logits})

    manifest = {
        "model_name": "toycnn",
        "input_shape": list(input_shape),
        "num_classes": synthetic.NUM_CLASSES,
        "class_names": list(synthetic.CLASS_NAMES),
        "normalization": {"mean": [float(v) for v in mean], "std": [float(v) for v in std]},
        "graph_file": "toycnn.graph",
        "weights_file": "toycnn.gwta",
        "datasets": {
            "id_test": "id_test.gwta",
            "ood_noise": "ood_noise.gwta",
            "ood_texture": "ood_texture.gwta",
        },
        "layer_map": export.layer_map,
        "taps": export.taps,
        "split_layer": export.split_layer,
        "reference": {
            "archive": "reference.gwta",
            "count": REFERENCE_INPUTS,
            "inputs_sha256": hashlib.sha256(ref_inputs.tobytes()).hexdigest(),
            "logits_tolerance": 1e-4,
        },
        "seed": spec.seed,
        "train": {
            "samples": spec.train_samples,
            "epochs": spec.epochs,
            "final_loss": history[-1],
            "test_accuracy": acc,
        },
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")
    return manifest


def export_dataset(path, images: np.ndarray, labels: np.ndarray | None = None,
                   input_shape=None) -> None:
    """Write an already-normalized image set as a dataset archive."""
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 4:
        raise ExportError(f"images must be NCHW, got shape {images.shape}")
    if input_shape is not None and tuple(images.shape[1:]) != tuple(input_shape):
        raise ExportError(
            f"images shape {tuple(images.shape[1:])} does not match model input {tuple(input_shape)}"
        )
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (images.shape[0],):
            raise ExportError(f"labels shape {labels.shape} does not match {images.shape[0]} images")
        if labels.min() < 0 or labels.max() >= synthetic.NUM_CLASSES:
            raise ExportError(f"labels outside [0, {synthetic.NUM_CLASSES})")
    write_dataset(path, images, labels)
