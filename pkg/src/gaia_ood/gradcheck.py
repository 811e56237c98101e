"""Finite-difference self check of the backward pass on random graphs.

For every trial a random small CNN is built, a handful of tap elements are
perturbed by +-h in a float64 shadow evaluation, and the central difference
is compared against the reverse-mode gradient. Elements whose perturbation
crosses a ReLU sign change or a max-pool argmax change are skipped: there
the function is non-smooth and a central difference does not estimate the
one-sided derivative the engine deliberately returns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .archive import WeightArchive
from .autodiff import backward
from .errors import ConfigurationError
from .graph import Layer, ModelGraph, build_graph, forward, run_raw, weights_as
from .ops import k_max_pool_argmax
from .tensor import Tensor, as_tensor

REL_TOL = 1e-3
ABS_TOL = 1e-5
SMALL_ANALYTIC = 1e-6
STEP = 1e-3


@dataclass(frozen=True)
class GradCheckFailure:
    trial: int
    tap_id: str
    op_kind: str
    element: tuple[int, ...]
    analytic: float
    finite_diff: float
    error: float


@dataclass
class GradCheckReport:
    trials: int
    checks: int = 0
    skipped: int = 0
    max_error: float = 0.0
    failures: list[GradCheckFailure] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def _random_graph(rng: np.random.Generator):
    """Random conv/bn/relu/pool/residual/linear mix with 1-2 taps."""
    c_in = int(rng.integers(1, 4))
    hw = int(rng.choice([6, 8]))
    layers: list[Layer] = []
    weights: dict[str, np.ndarray] = {}
    idx = 0

    def name() -> str:
        nonlocal idx
        idx += 1
        return f"L{idx}"

    def conv(c, h, w, out, stride=1):
        n = name()
        fan = c * 9
        weights[f"{n}.w"] = (rng.standard_normal((out, c, 3, 3)) / np.sqrt(fan)).astype(np.float32)
        weights[f"{n}.b"] = (0.1 * rng.standard_normal(out)).astype(np.float32)
        layers.append(Layer(n, "conv", {
            "out": out, "kernel": (3, 3), "stride": (stride, stride), "pad": (1, 1),
            "w": f"{n}.w", "b": f"{n}.b",
        }))
        return out, (h + 1) // stride if stride > 1 else h, (w + 1) // stride if stride > 1 else w

    def batchnorm(c):
        n = name()
        weights[f"{n}.g"] = (1 + 0.2 * rng.standard_normal(c)).astype(np.float32)
        weights[f"{n}.b"] = (0.1 * rng.standard_normal(c)).astype(np.float32)
        weights[f"{n}.m"] = (0.1 * rng.standard_normal(c)).astype(np.float32)
        weights[f"{n}.v"] = (0.5 + rng.random(c)).astype(np.float32)
        layers.append(Layer(n, "batchnorm", {
            "gamma": f"{n}.g", "beta": f"{n}.b", "mean": f"{n}.m", "var": f"{n}.v", "eps": 1e-5,
        }))

    def scale(c):
        n = name()
        weights[f"{n}.s"] = (0.5 + rng.random(c)).astype(np.float32)
        layers.append(Layer(n, "channel_scale", {"scale": f"{n}.s"}))

    c, h, w = conv(c_in, hw, hw, int(rng.integers(3, 6)))
    layers.append(Layer(name(), "relu", {}))
    for _ in range(int(rng.integers(1, 4))):
        kind = rng.choice(["plain", "residual", "maxpool", "avgpool", "scale"])
        if kind == "plain":
            c, h, w = conv(c, h, w, int(rng.integers(3, 6)))
            if rng.random() < 0.5:
                batchnorm(c)
            layers.append(Layer(name(), "relu", {}))
        elif kind == "residual":
            skip_from = layers[-1].name
            c, h, w = conv(c, h, w, c)
            layers.append(Layer(name(), "relu", {}))
            c, h, w = conv(c, h, w, c)
            layers.append(Layer(name(), "residual_add", {"source": skip_from}))
            layers.append(Layer(name(), "relu", {}))
        elif kind in ("maxpool", "avgpool") and h >= 4 and w >= 4:
            layers.append(Layer(name(), kind, {"kernel": (2, 2), "stride": (2, 2), "pad": (0, 0)}))
            h, w = h // 2, w // 2
        elif kind == "scale":
            scale(c)

    candidates = [l.name for l in layers]
    classes = int(rng.integers(3, 6))
    if rng.random() < 0.5:
        reduce = Layer(name(), "global_avg_pool", {})
        feat = c
    else:
        reduce = Layer(name(), "flatten", {})
        feat = c * h * w
    layers.append(reduce)
    split = reduce.name
    n = name()
    weights[f"{n}.w"] = (rng.standard_normal((classes, feat)) / np.sqrt(feat)).astype(np.float32)
    weights[f"{n}.b"] = (0.1 * rng.standard_normal(classes)).astype(np.float32)
    layers.append(Layer(n, "linear", {"out": classes, "w": f"{n}.w", "b": f"{n}.b"}))
    if rng.random() < 0.3:
        layers.append(Layer(name(), rng.choice(["softmax", "log_softmax"]), {}))

    n_taps = min(len(candidates), int(rng.integers(1, 3)))
    tap_layers = rng.choice(candidates, size=n_taps, replace=False)
    taps = [(f"t{i}", ln, f"block{i + 1}") for i, ln in enumerate(tap_layers)]
    graph = build_graph((c_in, hw, hw), classes, layers, taps, split)
    x = as_tensor(rng.standard_normal((1, c_in, hw, hw)).astype(np.float32))
    return graph, WeightArchive(weights), x


def _kink_signature(graph: ModelGraph, acts: dict[str, np.ndarray]):
    """Per-layer ReLU sign patterns and max-pool argmax patterns."""
    sig = []
    prev = None
    for layer in graph.layers:
        if layer.kind == "relu":
            sig.append(acts[layer.name] > 0)
        elif layer.kind == "maxpool" and prev is not None:
            p = layer.params
            sig.append(k_max_pool_argmax(acts[prev], p["kernel"], p["stride"], p["pad"]))
        prev = layer.name
    return sig


def _same_signature(a, b) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def check_graph(graph: ModelGraph, weights: WeightArchive, x: Tensor,
                rng: np.random.Generator, trial: int = 0, elements_per_tap: int = 20,
                h: float = STEP, report: GradCheckReport | None = None) -> GradCheckReport:
    """Compare tap gradients against central differences on one graph."""
    if report is None:
        report = GradCheckReport(trials=1)
    tap_ids = graph.tap_ids()
    if not tap_ids:
        raise ConfigurationError("graph declares no taps to check")
    logits, tape = forward(graph, weights, x, taps=tap_ids)
    seed = rng.standard_normal(logits.shape).astype(np.float32)
    grads = backward(tape, as_tensor(seed))

    w64 = weights_as(graph, weights, np.float64)
    x64 = x.data.astype(np.float64)
    s64 = seed.astype(np.float64)
    _, base_acts = run_raw(graph, w64, x64, capture=True)
    base_sig = _kink_signature(graph, base_acts)

    for tap_id in tap_ids:
        point = graph.tap(tap_id)
        op_kind = graph.layers[point.layer_index].kind
        ga = grads[tap_id].data
        shape = ga.shape
        done = 0
        attempts = 0
        while done < elements_per_tap and attempts < elements_per_tap * 10:
            attempts += 1
            element = tuple(int(rng.integers(0, s)) for s in shape)
            delta = np.zeros(shape)
            delta[element] = h
            up, up_acts = run_raw(graph, w64, x64, inject=(point.layer_name, delta), capture=True)
            dn, dn_acts = run_raw(graph, w64, x64, inject=(point.layer_name, -delta), capture=True)
            if not (_same_signature(base_sig, _kink_signature(graph, up_acts))
                    and _same_signature(base_sig, _kink_signature(graph, dn_acts))):
                report.skipped += 1
                continue
            fd = float(((up - dn) * s64).sum()) / (2 * h)
            analytic = float(ga[element])
            if abs(analytic) < SMALL_ANALYTIC:
                err = abs(fd - analytic)
                ok = err < ABS_TOL
            else:
                err = abs(fd - analytic) / abs(analytic)
                ok = err < REL_TOL
            report.checks += 1
            report.max_error = max(report.max_error, err)
            if not ok:
                report.failures.append(
                    GradCheckFailure(trial, tap_id, op_kind, element, analytic, fd, err)
                )
            done += 1
    return report


def run_gradcheck(trials: int = 20, seed: int = 0, elements_per_tap: int = 20) -> GradCheckReport:
    """Run the full randomized gradient check."""
    rng = np.random.default_rng(seed)
    report = GradCheckReport(trials=trials)
    for trial in range(trials):
        graph, weights, x = _random_graph(rng)
        check_graph(graph, weights, x, rng, trial=trial,
                    elements_per_tap=elements_per_tap, report=report)
    return report
