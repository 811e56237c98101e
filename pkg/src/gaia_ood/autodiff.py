"""Reverse-mode differentiation tape with named gradient taps.

A :class:`Tape` records one forward execution op by op. ``backward`` replays
the record in reverse and returns the gradient of ``seed . output`` at every
registered tap. Backward rules are dispatched through the module-level
``BACKWARD_RULES`` registry (populated by :mod:`gaia_ood.ops`), which keeps
them swappable for mutation-style self checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

import numpy as np

from .errors import ConfigurationError, UsageError
from .tensor import Tensor

# op kind -> fn(grad_out: ndarray, ctx: tuple) -> tuple[ndarray | None, ...]
# One gradient per recorded input, positionally; None for inputs that do not
# receive gradient (constants handled by the walk itself).
BACKWARD_RULES: dict[str, Callable[[np.ndarray, tuple], tuple]] = {}


@dataclass(frozen=True)
class _Record:
    kind: str
    in_nodes: tuple  # node id per input Tensor, None for constants (weights)
    out_node: int
    ctx: tuple


class Tape:
    """Ordered op record for a single forward pass.

    Tap ids must be registered at construction; each must be bound to exactly
    one recorded tensor before backward. A tape can be consumed by backward
    at most once.
    """

    def __init__(self, taps: Iterable[str] = ()):
        tap_list = list(taps)
        if len(set(tap_list)) != len(tap_list):
            raise ConfigurationError(f"duplicate tap ids in {tap_list}")
        self._tap_ids: tuple[str, ...] = tuple(tap_list)
        self._records: list[_Record] = []
        self._node_by_obj: dict[int, int] = {}
        self._tensors: list[Tensor] = []  # keeps id() keys alive
        self._tap_nodes: dict[str, int] = {}
        self._tap_values: dict[str, Tensor] = {}
        self._output_node: int | None = None
        self._output_shape: tuple[int, ...] | None = None
        self.consumed = False

    # -- recording ---------------------------------------------------------

    def _register(self, t: Tensor) -> int:
        node = len(self._tensors)
        self._tensors.append(t)
        self._node_by_obj[id(t)] = node
        return node

    def node_of(self, t: Tensor) -> int | None:
        return self._node_by_obj.get(id(t))

    def leaf(self, t: Tensor) -> Tensor:
        """Register an input tensor as a differentiable leaf."""
        if self.node_of(t) is None:
            self._register(t)
        return t

    def add(self, kind: str, inputs: tuple[Tensor, ...], output: Tensor, ctx: tuple) -> None:
        in_nodes = tuple(self.node_of(t) for t in inputs)
        out_node = self._register(output)
        self._records.append(_Record(kind, in_nodes, out_node, ctx))

    def tap(self, tap_id: str, t: Tensor) -> None:
        """Bind a registered tap id to a recorded tensor."""
        if tap_id not in self._tap_ids:
            raise ConfigurationError(f"unknown tap id {tap_id!r}")
        if tap_id in self._tap_nodes:
            raise ConfigurationError(f"tap {tap_id!r} bound twice")
        node = self.node_of(t)
        if node is None:
            raise ConfigurationError(f"tap {tap_id!r} target is not a recorded tensor")
        self._tap_nodes[tap_id] = node
        self._tap_values[tap_id] = t

    def set_output(self, t: Tensor) -> None:
        node = self.node_of(t)
        if node is None:
            raise ConfigurationError("forward output is not a recorded tensor")
        self._output_node = node
        self._output_shape = t.shape

    def finalize(self, output: Tensor) -> None:
        self.set_output(output)
        missing = [tid for tid in self._tap_ids if tid not in self._tap_nodes]
        if missing:
            raise ConfigurationError(f"taps never bound during forward: {missing}")

    # -- introspection -----------------------------------------------------

    @property
    def tap_ids(self) -> tuple[str, ...]:
        return self._tap_ids

    def tapped_value(self, tap_id: str) -> Tensor:
        if tap_id not in self._tap_values:
            raise ConfigurationError(f"unknown or unbound tap id {tap_id!r}")
        return self._tap_values[tap_id]

    def __len__(self) -> int:
        return len(self._records)


@dataclass(frozen=True)
class TapGradients:
    """Gradient tensor per registered tap, shapes equal to the tapped activations."""

    grads: dict[str, Tensor]

    def __getitem__(self, tap_id: str) -> Tensor:
        return self.grads[tap_id]

    def __iter__(self) -> Iterator[str]:
        return iter(self.grads)

    def __len__(self) -> int:
        return len(self.grads)

    def keys(self):
        return self.grads.keys()

    def items(self):
        return self.grads.items()


def record_forward(fn: Callable[[Tape], Tensor], taps: Iterable[str] = ()) -> tuple[Tensor, Tape]:
    """Run ``fn`` under a fresh tape and return (output, tape).

    ``fn`` receives the tape, executes ops with ``tape=``, and binds taps via
    ``tape.tap``. Outputs are bit-identical to an untaped run: recording only
    adds bookkeeping around the same kernels.
    """
    tape = Tape(taps)
    out = fn(tape)
    if not isinstance(out, Tensor):
        raise ConfigurationError("recorded forward must return a Tensor")
    tape.finalize(out)
    return out, tape


def backward(tape: Tape, seed: Tensor) -> TapGradients:
    """Gradient of ``sum(seed * output)`` at every registered tap.

    Exact reverse-mode chain rule over the recorded ops; a tape may be
    consumed only once. Taps never reached by the backward sweep get an
    exactly-zero gradient of the tapped activation's shape.
    """
    if tape.consumed:
        raise UsageError("tape already consumed by a previous backward")
    if tape._output_node is None:
        raise UsageError("tape was not finalized with an output")
    if not isinstance(seed, Tensor):
        raise ConfigurationError("seed must be a Tensor")
    if seed.shape != tape._output_shape:
        raise ConfigurationError(
            f"seed shape {seed.shape} != output shape {tape._output_shape}"
        )
    tape.consumed = True

    grads: dict[int, np.ndarray] = {tape._output_node: seed.data}
    for rec in reversed(tape._records):
        g_out = grads.get(rec.out_node)
        if g_out is None:
            continue  # node has no influence on the seeded output
        rule = BACKWARD_RULES[rec.kind]
        g_ins = rule(g_out, rec.ctx)
        for node, g in zip(rec.in_nodes, g_ins):
            if node is None or g is None:
                continue
            prev = grads.get(node)
            grads[node] = g if prev is None else prev + g

    out: dict[str, Tensor] = {}
    for tap_id in tape.tap_ids:
        node = tape._tap_nodes[tap_id]
        g = grads.get(node)
        if g is None:
            g = np.zeros(tape._tap_values[tap_id].shape, dtype=np.float32)
        out[tap_id] = Tensor(np.ascontiguousarray(g))
    return TapGradients(out)
