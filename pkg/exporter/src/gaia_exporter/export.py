"""Torch checkpoint -> graph document + weight tensors + layer map."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .formats import ExportError, GraphWriter
from .models import ResidualUnit, TinyResNet


@dataclass
class ExportResult:
    graph_text: str
    weights: dict[str, np.ndarray]
    layer_map: list[dict] = field(default_factory=list)
    taps: list[dict] = field(default_factory=list)
    split_layer: str = ""


def _np(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().astype(np.float32)


class _Walker:
    """Emits graph lines with fresh names and keeps the module -> layer map."""

    def __init__(self, writer: GraphWriter, result: ExportResult):
        self.writer = writer
        self.result = result
        self.count = 0
        self.last_layer = ""

    def _emit(self, module_path: str, prefix: str, kind: str, **params) -> str:
        self.count += 1
        name = f"{prefix}{self.count}"
        self.writer.layer(name, kind, **params)
        self.result.layer_map.append({"module": module_path, "graph_layer": name})
        self.last_layer = name
        return name

    def conv(self, path: str, m: nn.Conv2d, from_layer: str | None = None) -> str:
        if m.groups != 1 or m.dilation != (1, 1):
            raise ExportError(f"unsupported conv configuration at {path} (groups/dilation)")
        if m.bias is None:
            raise ExportError(f"conv without bias at {path} is not supported")
        self.count += 1
        name = f"conv{self.count}"
        params = dict(out=m.out_channels,
                      kernel=f"{m.kernel_size[0]}x{m.kernel_size[1]}",
                      stride=f"{m.stride[0]}x{m.stride[1]}",
                      pad=f"{m.padding[0]}x{m.padding[1]}",
                      w=f"{name}.w", b=f"{name}.b")
        if from_layer is not None:
            params["from"] = from_layer
        self.writer.layer(name, "conv", **params)
        self.result.weights[f"{name}.w"] = _np(m.weight)
        self.result.weights[f"{name}.b"] = _np(m.bias)
        self.result.layer_map.append({"module": path, "graph_layer": name})
        self.last_layer = name
        return name

    def batchnorm(self, path: str, m: nn.BatchNorm2d) -> str:
        self.count += 1
        name = f"bn{self.count}"
        self.writer.layer(name, "batchnorm", gamma=f"{name}.g", beta=f"{name}.b",
                          mean=f"{name}.m", var=f"{name}.v", eps=repr(m.eps))
        self.result.weights[f"{name}.g"] = _np(m.weight)
        self.result.weights[f"{name}.b"] = _np(m.bias)
        self.result.weights[f"{name}.m"] = _np(m.running_mean)
        self.result.weights[f"{name}.v"] = _np(m.running_var)
        self.result.layer_map.append({"module": path, "graph_layer": name})
        self.last_layer = name
        return name

    def linear(self, path: str, m: nn.Linear) -> str:
        if m.bias is None:
            raise ExportError(f"linear without bias at {path} is not supported")
        self.count += 1
        name = f"fc{self.count}"
        self.writer.layer(name, "linear", out=m.out_features, w=f"{name}.w", b=f"{name}.b")
        self.result.weights[f"{name}.w"] = _np(m.weight)
        self.result.weights[f"{name}.b"] = _np(m.bias)
        self.result.layer_map.append({"module": path, "graph_layer": name})
        self.last_layer = name
        return name

    def simple(self, path: str, kind: str, **params) -> str:
        return self._emit(path, kind.replace("_", ""), kind, **params)

    def residual_unit(self, path: str, unit: ResidualUnit) -> tuple[str, str]:
        """Returns (pre-activation add layer, post-relu output layer)."""
        entry = self.last_layer
        self.conv(f"{path}.conv1", unit.conv1)
        self.batchnorm(f"{path}.bn1", unit.bn1)
        self.simple(f"{path}.relu1", "relu")
        self.conv(f"{path}.conv2", unit.conv2)
        main_out = self.batchnorm(f"{path}.bn2", unit.bn2)
        if unit.proj is not None:
            self.conv(f"{path}.proj", unit.proj, from_layer=entry)
            self.batchnorm(f"{path}.proj_bn", unit.proj_bn)
            pre = self.simple(f"{path}.add", "residual_add", source=main_out)
        else:
            pre = self.simple(f"{path}.add", "residual_add", source=entry)
        return pre, self.simple(f"{path}.relu2", "relu")


def _pool_params(m) -> dict:
    k = m.kernel_size if isinstance(m.kernel_size, tuple) else (m.kernel_size,) * 2
    s = m.stride if isinstance(m.stride, tuple) else (m.stride,) * 2
    p = m.padding if isinstance(m.padding, tuple) else (m.padding,) * 2
    return dict(kernel=f"{k[0]}x{k[1]}", stride=f"{s[0]}x{s[1]}", pad=f"{p[0]}x{p[1]}")


def export_sequential(model: nn.Sequential, input_shape, num_classes: int) -> ExportResult:
    """Export a plain chain of supported torch modules."""
    writer = GraphWriter(tuple(input_shape), num_classes)
    result = ExportResult("", {})
    w = _Walker(writer, result)
    boundary = None
    for idx, m in enumerate(model):
        path = f"seq.{idx}"
        if isinstance(m, nn.Conv2d):
            w.conv(path, m)
        elif isinstance(m, nn.BatchNorm2d):
            w.batchnorm(path, m)
        elif isinstance(m, nn.ReLU):
            w.simple(path, "relu")
        elif isinstance(m, nn.MaxPool2d):
            w.simple(path, "maxpool", **_pool_params(m))
        elif isinstance(m, nn.AvgPool2d):
            w.simple(path, "avgpool", **_pool_params(m))
        elif isinstance(m, nn.AdaptiveAvgPool2d):
            if m.output_size not in (1, (1, 1)):
                raise ExportError(f"unsupported AdaptiveAvgPool2d output size at {path}")
            boundary = w.simple(path, "global_avg_pool")
        elif isinstance(m, nn.Flatten):
            if boundary == w.last_layer:
                continue  # gap already returns (N, C)
            boundary = w.simple(path, "flatten")
        elif isinstance(m, nn.Linear):
            w.linear(path, m)
        elif isinstance(m, nn.Softmax):
            w.simple(path, "softmax")
        elif isinstance(m, nn.LogSoftmax):
            w.simple(path, "log_softmax")
        elif isinstance(m, ResidualUnit):
            w.residual_unit(path, m)
        else:
            raise ExportError(f"unsupported layer type {type(m).__name__} at {path}")
    if boundary is None:
        raise ExportError("model has no pooling/flatten boundary to split at")
    writer.split(boundary)
    result.split_layer = boundary
    result.graph_text = writer.text()
    return result


def export_tiny_resnet(model: TinyResNet, input_shape) -> ExportResult:
    """Export the fixture family, tapping every residual-unit output."""
    writer = GraphWriter(tuple(input_shape), model.fc.out_features)
    result = ExportResult("", {})
    w = _Walker(writer, result)

    w.conv("stem_conv", model.stem_conv)
    w.batchnorm("stem_bn", model.stem_bn)
    w.simple("stem_relu", "relu")

    for b, block in enumerate(model.blocks, start=1):
        for u, unit in enumerate(block, start=1):
            # taps sit on the pre-activation (post-add) tensor: the unit's own
            # ReLU mask then shapes the tapped gradient, which is what the
            # zero-deflation statistic measures
            pre_name, _ = w.residual_unit(f"blocks.{b - 1}.{u - 1}", unit)
            tap_id = f"b{b}u{u}"
            writer.tap(tap_id, pre_name, f"block{b}")
            result.taps.append({"tap_id": tap_id, "layer": pre_name, "block": f"block{b}"})

    gap_name = w.simple("gap", "global_avg_pool")
    w.linear("fc", model.fc)
    writer.split(gap_name)
    result.split_layer = gap_name
    result.graph_text = writer.text()
    return result


def export_model(model: nn.Module, input_shape) -> ExportResult:
    """Dispatch over the supported architecture families."""
    if isinstance(model, TinyResNet):
        return export_tiny_resnet(model, input_shape)
    if isinstance(model, nn.Sequential):
        with torch.no_grad():
            probe = model(torch.zeros(1, *input_shape))
        return export_sequential(model, input_shape, probe.shape[-1])
    raise ExportError(f"unsupported model family {type(model).__name__}")
