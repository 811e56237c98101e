"""Benchmark sweeps over methods, tap subsets, and norm orders.

One cell per (method, ood_dataset, block subset, p). Cells fail
independently: a scorer error is recorded in the cell and the sweep
continues. The report is a deterministic JSON tree, so identical inputs
produce byte-identical reports.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .archive import SampleBatch, WeightArchive
from .baselines import score_energy, score_msp
from .errors import ConfigurationError, GaiaError
from .graph import ModelGraph, plain_forward
from .metrics import ScoreSet, evaluate_scores
from .scoring import ScorerConfig, score_batch
from .tensor import Tensor

METHOD_NAMES = ("gaia-z", "gaia-a", "msp", "energy")


def _method_config(method: str, blocks, p: float, fusion: str, tau: float) -> ScorerConfig | None:
    if method == "gaia-z":
        return ScorerConfig(method="gaia_z", taps=tuple(blocks), tau=tau, p=p)
    if method == "gaia-a":
        return ScorerConfig(method="gaia_a", taps=tuple(blocks), p=p, fusion=fusion)
    if method in ("msp", "energy"):
        return None
    raise ConfigurationError(f"unknown method {method!r}; valid: {METHOD_NAMES}")


def _score(graph, weights, batch, method: str, cfg: ScorerConfig | None,
           chunk: int = 64) -> np.ndarray:
    images = batch.images if isinstance(batch, SampleBatch) else batch
    out = []
    for start in range(0, images.shape[0], chunk):
        part = Tensor(images.data[start : start + chunk].copy())
        if cfg is None:
            logits = plain_forward(graph, weights, part).data
            out.append(score_msp(logits) if method == "msp" else score_energy(logits))
        else:
            out.append(score_batch(graph, weights, part, cfg).scores)
    return np.concatenate(out)


def run_benchmark(graph: ModelGraph, weights: WeightArchive, id_batch: SampleBatch,
                  ood_batches: dict[str, SampleBatch], methods, block_subsets=None,
                  ps=(2.0,), fusion: str = "two_stage", tau: float = 0.0,
                  scores_dir=None, id_name: str = "id") -> dict:
    """Sweep the grid and return the report tree (also see write_report)."""
    if not methods:
        raise ConfigurationError("methods must be non-empty")
    if not ood_batches:
        raise ConfigurationError("at least one OOD dataset is required")
    if block_subsets is None:
        block_subsets = [("block3", "block4")]

    cells = []
    score_sets: dict[str, ScoreSet] = {}
    for method in methods:
        grid = [(tuple(b), float(p)) for b in block_subsets for p in ps] \
            if method in ("gaia-z", "gaia-a") else [((), 0.0)]
        for blocks, p in grid:
            label = "+".join(blocks) if blocks else "-"
            key = f"{method}|{label}|{p if blocks else '-'}"
            try:
                cfg = _method_config(method, blocks, p, fusion, tau)
                id_scores = _score(graph, weights, id_batch, method, cfg)
                sset = ScoreSet()
                sset.add_batch(id_scores, "ID", id_name, method)
                for ood_name, ood_batch in ood_batches.items():
                    ood_scores = _score(graph, weights, ood_batch, method, cfg)
                    sset.add_batch(ood_scores, "OOD", ood_name, method)
                    m = evaluate_scores(id_scores, ood_scores)
                    cells.append({
                        "method": method,
                        "dataset": ood_name,
                        "blocks": label,
                        "p": p if blocks else None,
                        "fpr95": m.fpr95,
                        "auroc": m.auroc,
                        "threshold": m.threshold,
                        "n_id": m.n_id,
                        "n_ood": m.n_ood,
                    })
                score_sets[key] = sset
            except GaiaError as e:
                cells.append({
                    "method": method,
                    "dataset": "*",
                    "blocks": label,
                    "p": p if blocks else None,
                    "error": str(e),
                })

    report = {
        "config": {
            "methods": list(methods),
            "block_subsets": ["+".join(b) for b in block_subsets],
            "ps": [float(p) for p in ps],
            "fusion": fusion,
            "tau": tau,
            "id_dataset": id_name,
            "ood_datasets": sorted(ood_batches),
        },
        "cells": cells,
    }

    if scores_dir is not None:
        scores_dir = Path(scores_dir)
        scores_dir.mkdir(parents=True, exist_ok=True)
        for key, sset in score_sets.items():
            fname = "scores_" + key.replace("|", "_").replace("+", "-") + ".csv"
            sset.to_csv(scores_dir / fname)
    return report


def format_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def write_report(report: dict, path) -> None:
    Path(path).write_text(format_report(report), encoding="utf-8")
