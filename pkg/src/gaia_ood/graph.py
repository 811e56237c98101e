"""Declarative model graphs: parsing, static shape checking, and execution.

A graph document is line oriented::

    input 3 16 16
    classes 4
    conv1: conv out=8 kernel=3 stride=1 pad=1 w=conv1.w b=conv1.b
    bn1: batchnorm gamma=bn1.g beta=bn1.b mean=bn1.m var=bn1.v eps=1e-5
    act1: relu
    gap: global_avg_pool
    fc: linear out=4 w=fc.w b=fc.b
    tap block1 act1 block1
    split gap

``split`` names the first classifier layer: everything before it is the
feature extractor and the tensor entering it is the last feature map.

Layers consume the previous line's output by default; an optional
``from=<layer>`` key re-roots a layer's input to any earlier layer, which
is how branches (e.g. projection shortcuts) are written down.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .archive import SampleBatch, WeightArchive
from .autodiff import Tape, record_forward
from .errors import ConfigurationError, DataError
from .tensor import Tensor, as_tensor

LAYER_KINDS = (
    "conv",
    "batchnorm",
    "relu",
    "maxpool",
    "avgpool",
    "global_avg_pool",
    "residual_add",
    "linear",
    "channel_scale",
    "softmax",
    "log_softmax",
    "flatten",
)


@dataclass(frozen=True)
class Layer:
    name: str
    kind: str
    params: dict = field(default_factory=dict)

    def weight_names(self) -> tuple[str, ...]:
        keys = ("w", "b", "gamma", "beta", "mean", "var", "scale")
        return tuple(self.params[k] for k in keys if k in self.params)


@dataclass(frozen=True)
class TapPoint:
    tap_id: str
    layer_name: str
    layer_index: int
    block_label: str


@dataclass(frozen=True)
class ModelGraph:
    """Ordered layers with tap points and a feature/classifier split."""

    input_shape: tuple[int, int, int]
    num_classes: int
    layers: tuple[Layer, ...]
    taps: tuple[TapPoint, ...]
    split_index: int
    activation_shapes: tuple[tuple[int, ...], ...]
    weight_shapes: dict[str, tuple[int, ...]]

    def layer_index(self, name: str) -> int:
        for i, layer in enumerate(self.layers):
            if layer.name == name:
                return i
        raise ConfigurationError(f"unknown layer {name!r}")

    def tap(self, tap_id: str) -> TapPoint:
        for t in self.taps:
            if t.tap_id == tap_id:
                return t
        raise ConfigurationError(f"unknown tap id {tap_id!r}")

    def tap_ids(self) -> tuple[str, ...]:
        return tuple(t.tap_id for t in self.taps)

    @property
    def last_feature_shape(self) -> tuple[int, ...]:
        return self.activation_shapes[self.split_index - 1]


# ---------------------------------------------------------------------------
# construction and static checking
# ---------------------------------------------------------------------------


def _check_layer_shape(layer: Layer, shape: tuple[int, ...], shapes_by_name: dict[str, tuple[int, ...]],
                       weight_shapes: dict[str, tuple[int, ...]]) -> tuple[int, ...]:
    k, p = layer.kind, layer.params

    def fail(msg: str):
        raise ConfigurationError(f"layer {layer.name!r}: {msg}")

    def want_rank(rank: int):
        if len(shape) != rank:
            fail(f"{k} expects rank-{rank} input, got per-sample shape {shape}")

    def window_hw(h, w):
        try:
            return ops.conv2d_output_hw(h, w, p["kernel"], p["stride"], p["pad"])
        except ConfigurationError as e:
            fail(str(e))

    if k == "conv":
        want_rank(3)
        c, h, w = shape
        oh, ow = window_hw(h, w)
        weight_shapes[p["w"]] = (p["out"], c, *p["kernel"])
        weight_shapes[p["b"]] = (p["out"],)
        return (p["out"], oh, ow)
    if k == "batchnorm":
        want_rank(3)
        for key in ("gamma", "beta", "mean", "var"):
            weight_shapes[p[key]] = (shape[0],)
        return shape
    if k == "channel_scale":
        want_rank(3)
        weight_shapes[p["scale"]] = (shape[0],)
        return shape
    if k == "relu":
        return shape
    if k in ("maxpool", "avgpool"):
        want_rank(3)
        if p["pad"][0] >= p["kernel"][0] or p["pad"][1] >= p["kernel"][1]:
            fail(f"pool padding {p['pad']} must be smaller than kernel {p['kernel']}")
        oh, ow = window_hw(shape[1], shape[2])
        return (shape[0], oh, ow)
    if k == "global_avg_pool":
        want_rank(3)
        return (shape[0],)
    if k == "flatten":
        return (int(np.prod(shape)),)
    if k == "residual_add":
        src = p["source"]
        if src not in shapes_by_name:
            fail(f"residual source {src!r} is not an earlier layer")
        if shapes_by_name[src] != shape:
            fail(f"residual source shape {shapes_by_name[src]} != input shape {shape}")
        return shape
    if k == "linear":
        want_rank(1)
        weight_shapes[p["w"]] = (p["out"], shape[0])
        weight_shapes[p["b"]] = (p["out"],)
        return (p["out"],)
    if k in ("softmax", "log_softmax"):
        want_rank(1)
        return shape
    fail(f"unknown op kind {k!r}")


def build_graph(input_shape, num_classes, layers, taps, split_layer: str) -> ModelGraph:
    """Statically shape-check a layer chain and assemble a ModelGraph.

    ``taps`` is a sequence of (tap_id, layer_name, block_label).
    """
    input_shape = tuple(int(v) for v in input_shape)
    if len(input_shape) != 3 or min(input_shape) < 1:
        raise ConfigurationError(f"input shape must be C H W positive, got {input_shape}")
    if num_classes < 1:
        raise ConfigurationError(f"classes must be >= 1, got {num_classes}")
    names = [layer.name for layer in layers]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ConfigurationError(f"duplicate layer names: {dupes}")

    shapes: list[tuple[int, ...]] = []
    shapes_by_name: dict[str, tuple[int, ...]] = {}
    weight_shapes: dict[str, tuple[int, ...]] = {}
    cur = input_shape
    for layer in layers:
        src = layer.params.get("from")
        if src is not None:
            if src not in shapes_by_name:
                raise ConfigurationError(
                    f"layer {layer.name!r}: from={src!r} is not an earlier layer"
                )
            cur = shapes_by_name[src]
        cur = _check_layer_shape(layer, cur, shapes_by_name, weight_shapes)
        shapes.append(cur)
        shapes_by_name[layer.name] = cur
    if cur != (num_classes,):
        raise ConfigurationError(
            f"final layer {names[-1]!r} produces per-sample shape {cur}, "
            f"expected ({num_classes},) logits"
        )

    tap_points = []
    seen = set()
    for tap_id, layer_name, block in taps:
        if tap_id in seen:
            raise ConfigurationError(f"duplicate tap id {tap_id!r}")
        seen.add(tap_id)
        if layer_name not in shapes_by_name:
            raise ConfigurationError(f"tap {tap_id!r} references unknown layer {layer_name!r}")
        tap_points.append(TapPoint(tap_id, layer_name, names.index(layer_name), block))

    if split_layer not in names:
        raise ConfigurationError(f"split references unknown layer {split_layer!r}")
    split_index = names.index(split_layer)
    if split_index == 0:
        raise ConfigurationError("split leaves an empty feature extractor")

    return ModelGraph(
        input_shape=input_shape,
        num_classes=int(num_classes),
        layers=tuple(layers),
        taps=tuple(tap_points),
        split_index=split_index,
        activation_shapes=tuple(shapes),
        weight_shapes=weight_shapes,
    )


def _parse_int_pair(value: str, key: str, where: str) -> tuple[int, int]:
    try:
        if "x" in value:
            a, b = value.split("x", 1)
            return int(a), int(b)
        return int(value), int(value)
    except ValueError:
        raise ConfigurationError(f"{where}: bad {key}={value!r}") from None


_REQUIRED_KEYS = {
    "conv": {"out", "kernel", "w", "b"},
    "batchnorm": {"gamma", "beta", "mean", "var"},
    "relu": set(),
    "maxpool": {"kernel"},
    "avgpool": {"kernel"},
    "global_avg_pool": set(),
    "residual_add": {"source"},
    "linear": {"out", "w", "b"},
    "channel_scale": {"scale"},
    "softmax": set(),
    "log_softmax": set(),
    "flatten": set(),
}
_OPTIONAL_KEYS = {
    "conv": {"stride", "pad"},
    "batchnorm": {"eps"},
    "maxpool": {"stride", "pad"},
    "avgpool": {"stride", "pad"},
}


def _build_layer(name: str, kind: str, kv: dict[str, str], where: str) -> Layer:
    if kind not in LAYER_KINDS:
        raise ConfigurationError(f"{where}: unknown op kind {kind!r}")
    required = _REQUIRED_KEYS[kind]
    allowed = required | _OPTIONAL_KEYS.get(kind, set()) | {"from"}
    missing = required - kv.keys()
    if missing:
        raise ConfigurationError(f"{where}: missing {sorted(missing)} for {kind}")
    extra = kv.keys() - allowed
    if extra:
        raise ConfigurationError(f"{where}: unknown keys {sorted(extra)} for {kind}")

    params: dict = {}
    if "from" in kv:
        params["from"] = kv["from"]
    if kind in ("conv", "linear"):
        try:
            params["out"] = int(kv["out"])
        except ValueError:
            raise ConfigurationError(f"{where}: bad out={kv['out']!r}") from None
        params["w"], params["b"] = kv["w"], kv["b"]
    if kind in ("conv", "maxpool", "avgpool"):
        params["kernel"] = _parse_int_pair(kv["kernel"], "kernel", where)
        default_stride = "1" if kind == "conv" else kv["kernel"]
        params["stride"] = _parse_int_pair(kv.get("stride", default_stride), "stride", where)
        params["pad"] = _parse_int_pair(kv.get("pad", "0"), "pad", where)
    if kind == "batchnorm":
        for key in ("gamma", "beta", "mean", "var"):
            params[key] = kv[key]
        try:
            params["eps"] = float(kv.get("eps", "1e-5"))
        except ValueError:
            raise ConfigurationError(f"{where}: bad eps={kv['eps']!r}") from None
    if kind == "residual_add":
        params["source"] = kv["source"]
    if kind == "channel_scale":
        params["scale"] = kv["scale"]
    return Layer(name, kind, params)


def parse_graph(text: str, origin: str = "<graph>") -> ModelGraph:
    input_shape = None
    num_classes = None
    split_layer = None
    layers: list[Layer] = []
    taps: list[tuple[str, str, str]] = []

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{origin}:{line_no}"
        head = line.split()
        if head[0] == "input":
            if len(head) != 4:
                raise ConfigurationError(f"{where}: input needs C H W")
            if input_shape is not None:
                raise ConfigurationError(f"{where}: duplicate input directive")
            try:
                input_shape = tuple(int(v) for v in head[1:])
            except ValueError:
                raise ConfigurationError(f"{where}: bad input extents {head[1:]}") from None
            continue
        if head[0] == "classes":
            if len(head) != 2:
                raise ConfigurationError(f"{where}: classes needs a count")
            if num_classes is not None:
                raise ConfigurationError(f"{where}: duplicate classes directive")
            num_classes = int(head[1])
            continue
        if head[0] == "tap":
            if len(head) != 4:
                raise ConfigurationError(f"{where}: tap needs <tap_id> <layer> <block_label>")
            taps.append((head[1], head[2], head[3]))
            continue
        if head[0] == "split":
            if len(head) != 2:
                raise ConfigurationError(f"{where}: split needs a layer name")
            if split_layer is not None:
                raise ConfigurationError(f"{where}: duplicate split directive")
            split_layer = head[1]
            continue
        if ":" not in line:
            raise ConfigurationError(f"{where}: expected '<name>: <op> ...', got {line!r}")
        name, rest = line.split(":", 1)
        name = name.strip()
        parts = rest.split()
        if not parts:
            raise ConfigurationError(f"{where}: layer {name!r} missing op kind")
        kv = {}
        for item in parts[1:]:
            if "=" not in item:
                raise ConfigurationError(f"{where}: expected key=value, got {item!r}")
            key, value = item.split("=", 1)
            kv[key] = value
        layers.append(_build_layer(name, parts[0], kv, f"{where} (layer {name!r})"))

    if input_shape is None:
        raise ConfigurationError(f"{origin}: missing input directive")
    if num_classes is None:
        raise ConfigurationError(f"{origin}: missing classes directive")
    if split_layer is None:
        raise ConfigurationError(f"{origin}: missing split directive")
    if not layers:
        raise ConfigurationError(f"{origin}: graph has no layers")
    return build_graph(input_shape, num_classes, layers, taps, split_layer)


def load_graph(path) -> ModelGraph:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise DataError(f"cannot read graph {path}: {e}") from e
    except UnicodeDecodeError as e:
        raise DataError(f"graph {path} is not a text document: {e}") from e
    return parse_graph(text, origin=str(path))


def validate_weights(graph: ModelGraph, weights: WeightArchive) -> None:
    """Every referenced weight must exist with the statically derived shape."""
    missing = [name for name in graph.weight_shapes if name not in weights]
    if missing:
        raise ConfigurationError(f"weight archive missing tensors: {sorted(missing)}")
    for name, shape in graph.weight_shapes.items():
        actual = tuple(weights[name].shape)
        if actual != shape:
            raise ConfigurationError(
                f"weight {name!r} has shape {actual}, graph expects {shape}"
            )


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------


def _batch_images(batch, graph: ModelGraph | None = None) -> Tensor:
    if isinstance(batch, SampleBatch):
        if graph is not None and batch.labels is not None and np.any(batch.labels >= graph.num_classes):
            raise DataError(
                f"batch labels exceed the graph's {graph.num_classes} classes"
            )
        return batch.images
    return as_tensor(batch, "batch")


def _check_batch(graph: ModelGraph, images: Tensor) -> None:
    if images.ndim != 4 or images.shape[1:] != graph.input_shape:
        raise ConfigurationError(
            f"batch shape {images.shape} does not match graph input {graph.input_shape}"
        )


def _apply_layer(layer: Layer, x: Tensor, acts: dict[str, Tensor], weights: WeightArchive, tape: Tape | None) -> Tensor:
    k, p = layer.kind, layer.params
    if k == "conv":
        return ops.conv2d(x, weights[p["w"]], weights[p["b"]], p["stride"], p["pad"], tape=tape)
    if k == "batchnorm":
        return ops.batchnorm_inference(
            x, weights[p["gamma"]], weights[p["beta"]], weights[p["mean"]], weights[p["var"]],
            eps=p["eps"], tape=tape,
        )
    if k == "relu":
        return ops.relu(x, tape=tape)
    if k == "maxpool":
        return ops.max_pool2d(x, p["kernel"], p["stride"], p["pad"], tape=tape)
    if k == "avgpool":
        return ops.avg_pool2d(x, p["kernel"], p["stride"], p["pad"], tape=tape)
    if k == "global_avg_pool":
        return ops.global_avg_pool(x, tape=tape)
    if k == "residual_add":
        return ops.residual_add(x, acts[p["source"]], tape=tape)
    if k == "linear":
        return ops.linear(x, weights[p["w"]], weights[p["b"]], tape=tape)
    if k == "channel_scale":
        return ops.channel_scale(x, weights[p["scale"]], tape=tape)
    if k == "softmax":
        return ops.softmax(x, tape=tape)
    if k == "log_softmax":
        return ops.log_softmax(x, tape=tape)
    if k == "flatten":
        return ops.flatten(x, tape=tape)
    raise ConfigurationError(f"unknown op kind {k!r}")  # unreachable after build_graph


def _execute(graph: ModelGraph, weights: WeightArchive, x: Tensor, tape: Tape | None,
             start: int, stop: int) -> Tensor:
    tap_by_index: dict[int, list[str]] = {}
    if tape is not None:
        for t in graph.taps:
            if t.tap_id in tape.tap_ids and start <= t.layer_index < stop:
                tap_by_index.setdefault(t.layer_index, []).append(t.tap_id)
    acts: dict[str, Tensor] = {}
    for idx in range(start, stop):
        layer = graph.layers[idx]
        src = layer.params.get("from")
        x_in = acts[src] if src is not None else x
        x = _apply_layer(layer, x_in, acts, weights, tape)
        acts[layer.name] = x
        if tape is not None:
            for tap_id in tap_by_index.get(idx, ()):
                tape.tap(tap_id, x)
    return x


def _resolve_taps(graph: ModelGraph, taps, lo: int, hi: int, what: str) -> tuple[str, ...]:
    resolved = []
    for tap_id in taps:
        t = graph.tap(tap_id)
        if not (lo <= t.layer_index < hi):
            raise ConfigurationError(
                f"tap {tap_id!r} (layer {t.layer_name!r}) lies outside the {what}"
            )
        resolved.append(tap_id)
    return tuple(resolved)


def plain_forward(graph: ModelGraph, weights: WeightArchive, batch) -> Tensor:
    """Untaped forward pass returning pre-softmax logits (N x classes)."""
    images = _batch_images(batch, graph)
    _check_batch(graph, images)
    validate_weights(graph, weights)
    return _execute(graph, weights, images, None, 0, len(graph.layers))


def plain_features(graph: ModelGraph, weights: WeightArchive, batch) -> Tensor:
    """Untaped run of the feature extractor, returning the last feature map."""
    images = _batch_images(batch, graph)
    _check_batch(graph, images)
    validate_weights(graph, weights)
    return _execute(graph, weights, images, None, 0, graph.split_index)


def forward(graph: ModelGraph, weights: WeightArchive, batch, taps=()) -> tuple[Tensor, Tape]:
    """Recorded forward pass; the tape can be consumed once by backward."""
    images = _batch_images(batch, graph)
    _check_batch(graph, images)
    validate_weights(graph, weights)
    tap_ids = _resolve_taps(graph, taps, 0, len(graph.layers), "graph")
    return record_forward(
        lambda tape: _execute(graph, weights, images, tape, 0, len(graph.layers)),
        tap_ids,
    )


def forward_features(graph: ModelGraph, weights: WeightArchive, batch, taps=()) -> tuple[Tensor, Tape]:
    """Recorded run of the feature extractor only; output is the last feature map."""
    images = _batch_images(batch, graph)
    _check_batch(graph, images)
    validate_weights(graph, weights)
    tap_ids = _resolve_taps(graph, taps, 0, graph.split_index, "feature extractor")
    return record_forward(
        lambda tape: _execute(graph, weights, images, tape, 0, graph.split_index),
        tap_ids,
    )


def forward_classifier(graph: ModelGraph, weights: WeightArchive, last_feature: Tensor,
                       tap_id: str = "__last_feature__") -> tuple[Tensor, Tape]:
    """Recorded run of the classifier with its input registered as a tapped leaf."""
    validate_weights(graph, weights)
    expected = graph.last_feature_shape
    if last_feature.shape[1:] != expected:
        raise ConfigurationError(
            f"last-feature shape {last_feature.shape[1:]} != expected {expected}"
        )

    def run(tape: Tape) -> Tensor:
        tape.leaf(last_feature)
        tape.tap(tap_id, last_feature)
        return _execute(graph, weights, last_feature, tape, graph.split_index, len(graph.layers))

    return record_forward(run, (tap_id,))


# ---------------------------------------------------------------------------
# raw (dtype-generic) execution for finite-difference shadow oracles
# ---------------------------------------------------------------------------


def weights_as(graph: ModelGraph, weights: WeightArchive, dtype) -> dict[str, np.ndarray]:
    return {name: np.asarray(weights[name], dtype=dtype) for name in graph.weight_shapes}


def run_raw(graph: ModelGraph, warr: dict[str, np.ndarray], x: np.ndarray,
            inject: tuple[str, np.ndarray] | None = None, capture: bool = False):
    """Forward over plain ndarrays in their native dtype, no validation.

    ``inject`` adds a delta to the named layer's output before the next layer
    consumes it (how the finite-difference oracle perturbs a tap). With
    ``capture`` the per-layer outputs are returned as well.
    """
    acts: dict[str, np.ndarray] = {}
    inj_name = inject[0] if inject is not None else None
    for layer in graph.layers:
        k, p = layer.kind, layer.params
        src = p.get("from")
        if src is not None:
            x = acts[src]
        if k == "conv":
            x = ops.k_conv2d(x, warr[p["w"]], warr[p["b"]], p["stride"], p["pad"])
        elif k == "batchnorm":
            x = ops.k_batchnorm(
                x, warr[p["gamma"]], warr[p["beta"]], warr[p["mean"]], warr[p["var"]],
                x.dtype.type(p["eps"]),
            )
        elif k == "relu":
            x = ops.k_relu(x)
        elif k == "maxpool":
            x = ops.k_max_pool2d(x, p["kernel"], p["stride"], p["pad"])
        elif k == "avgpool":
            x = ops.k_avg_pool2d(x, p["kernel"], p["stride"], p["pad"])
        elif k == "global_avg_pool":
            x = ops.k_global_avg_pool(x)
        elif k == "residual_add":
            x = ops.k_residual_add(x, acts[p["source"]])
        elif k == "linear":
            x = ops.k_linear(x, warr[p["w"]], warr[p["b"]])
        elif k == "channel_scale":
            x = ops.k_channel_scale(x, warr[p["scale"]])
        elif k == "softmax":
            x = ops.k_softmax(x)
        elif k == "log_softmax":
            x = ops.k_log_softmax(x)
        elif k == "flatten":
            x = ops.k_flatten(x)
        if layer.name == inj_name:
            x = x + inject[1]
        acts[layer.name] = x
    return (x, acts) if capture else x
