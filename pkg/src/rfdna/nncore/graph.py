"""Layer specs and a small DAG network built on torch modules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

KINDS = ("conv2d", "deconv2d", "dense", "embedding", "maxpool2d", "activation",
         "reshape", "concat", "flatten", "dropout")
ACTIVATIONS = ("linear", "relu", "leaky_relu", "sigmoid", "tanh", "softmax")
LEAKY_SLOPE = 0.2


class GraphShapeError(ValueError):
    """A layer could not consume the shape produced upstream."""


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    inputs: tuple[str, ...]
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        object.__setattr__(self, "inputs", tuple(self.inputs))

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "inputs": list(self.inputs),
                "params": _jsonable(self.params)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "LayerSpec":
        return cls(d["name"], d["kind"], tuple(d["inputs"]), dict(d.get("params", {})))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _pair(v) -> tuple[int, int]:
    if isinstance(v, int):
        return (v, v)
    return (int(v[0]), int(v[1]))


class _Activation(nn.Module):
    def __init__(self, fn: str, slope: float = LEAKY_SLOPE):
        super().__init__()
        if fn not in ACTIVATIONS:
            raise ValueError(f"unknown activation {fn!r}")
        self.fn = fn
        self.slope = slope

    def forward(self, x):
        if self.fn == "relu":
            return F.relu(x)
        if self.fn == "leaky_relu":
            return F.leaky_relu(x, self.slope)
        if self.fn == "sigmoid":
            return torch.sigmoid(x)
        if self.fn == "tanh":
            return torch.tanh(x)
        if self.fn == "softmax":
            return torch.softmax(x, dim=1)
        return x


class _Reshape(nn.Module):
    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(int(s) for s in shape)

    def forward(self, x):
        return x.reshape(x.shape[0], *self.shape)


class _Concat(nn.Module):
    def __init__(self, axis: int = 0):
        super().__init__()
        self.axis = axis

    def forward(self, *xs):
        return torch.cat(xs, dim=self.axis + 1)


def deconv_padding(kernel: int, stride: int) -> tuple[int, int]:
    """(padding, output_padding) making a transposed conv scale length by ``stride``."""
    op = (kernel - stride) % 2
    return (kernel - stride + op) // 2, op


def _make_module(spec: LayerSpec, in_shapes: list[tuple[int, ...]]) -> nn.Module:
    p = spec.params
    k = spec.kind
    if k in ("conv2d", "deconv2d", "maxpool2d") and len(in_shapes[0]) != 3:
        raise GraphShapeError(f"layer '{spec.name}' ({k}) expects (C, H, W) input, got {in_shapes[0]}")
    if k == "conv2d":
        kernel, stride = _pair(p["kernel"]), _pair(p.get("stride", 1))
        padding = p.get("padding", "same")
        if padding == "same" and stride != (1, 1):
            raise GraphShapeError(f"layer '{spec.name}': 'same' padding needs stride 1")
        return nn.Conv2d(in_shapes[0][0], int(p["filters"]), kernel, stride, padding=padding)
    if k == "deconv2d":
        kernel, stride = _pair(p["kernel"]), _pair(p.get("stride", 1))
        pads = [deconv_padding(kk, ss) for kk, ss in zip(kernel, stride)]
        return nn.ConvTranspose2d(in_shapes[0][0], int(p["filters"]), kernel, stride,
                                  padding=tuple(a for a, _ in pads),
                                  output_padding=tuple(b for _, b in pads))
    if k == "dense":
        if len(in_shapes[0]) != 1:
            raise GraphShapeError(f"layer '{spec.name}' (dense) expects a flat input, got {in_shapes[0]}")
        return nn.Linear(in_shapes[0][0], int(p["units"]))
    if k == "embedding":
        return nn.Embedding(int(p["num"]), int(p["dim"]))
    if k == "maxpool2d":
        return nn.MaxPool2d(_pair(p["pool"]))
    if k == "activation":
        return _Activation(p["fn"], float(p.get("slope", LEAKY_SLOPE)))
    if k == "reshape":
        return _Reshape(p["shape"])
    if k == "concat":
        return _Concat(int(p.get("axis", 0)))
    if k == "flatten":
        return nn.Flatten()
    if k == "dropout":
        return nn.Dropout(float(p.get("rate", 0.5)))
    raise AssertionError(k)


class Graph(nn.Module):
    """A directed acyclic network of :class:`LayerSpec` nodes.

    ``inputs`` maps input names to ``{"shape": [...], "dtype": "float"|"int"}``
    (per-sample shape, batch axis excluded). Nodes must be listed in
    topological order. Parameters are initialised from ``seed``.
    """

    def __init__(self, inputs: Mapping[str, Mapping], specs: Sequence[LayerSpec],
                 outputs: Sequence[str], seed: int = 0):
        super().__init__()
        self.input_specs = {n: {"shape": [int(s) for s in v["shape"]], "dtype": v.get("dtype", "float")}
                            for n, v in inputs.items()}
        self.specs = [s if isinstance(s, LayerSpec) else LayerSpec.from_dict(s) for s in specs]
        self.output_names = list(outputs)
        self.seed = int(seed)
        self.meta: dict[str, Any] = {}
        self.layers = nn.ModuleDict()
        self.shapes: dict[str, tuple[int, ...]] = {}
        self._build()
        self._init_params()

    # -- construction ----------------------------------------------------
    def _dummy(self, name):
        spec = self.input_specs[name]
        if spec["dtype"] == "int":
            return torch.zeros((2, *spec["shape"]), dtype=torch.long)
        return torch.zeros((2, *spec["shape"]))

    def _build(self):
        values = {n: self._dummy(n) for n in self.input_specs}
        self.shapes = {n: tuple(v.shape[1:]) for n, v in values.items()}
        for spec in self.specs:
            if spec.name in values:
                raise GraphShapeError(f"duplicate node name '{spec.name}'")
            missing = [i for i in spec.inputs if i not in values]
            if missing:
                raise GraphShapeError(f"layer '{spec.name}' consumes unknown node(s) {missing}")
            in_shapes = [self.shapes[i] for i in spec.inputs]
            module = _make_module(spec, in_shapes)
            try:
                with torch.no_grad():
                    out = module(*[values[i] for i in spec.inputs])
            except (RuntimeError, ValueError) as exc:
                raise GraphShapeError(
                    f"layer '{spec.name}' ({spec.kind}) cannot take input shapes {in_shapes}: {exc}"
                ) from None
            self.layers[spec.name] = module
            values[spec.name] = out
            self.shapes[spec.name] = tuple(out.shape[1:])
        for o in self.output_names:
            if o not in values:
                raise GraphShapeError(f"unknown output node '{o}'")

    def _consumers(self, name):
        return [s for s in self.specs if name in s.inputs]

    def _init_params(self):
        gen = torch.Generator().manual_seed(self.seed)
        for spec in self.specs:
            m = self.layers[spec.name]
            if isinstance(m, nn.Embedding):
                with torch.no_grad():
                    m.weight.uniform_(-math.sqrt(3), math.sqrt(3), generator=gen)
                continue
            if not isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
                continue
            w = m.weight
            if isinstance(m, nn.ConvTranspose2d):
                fan_in = w.shape[0] * w[0, 0].numel() / max(1, np.prod(m.stride))
                fan_out = w.shape[1] * w[0, 0].numel()
            else:
                fan_in = w[0].numel()
                fan_out = w.shape[0] * (w[0, 0].numel() if w.dim() > 2 else 1)
            acts = [self.layers[c.name] for c in self._consumers(spec.name) if c.kind == "activation"]
            fn = acts[0].fn if acts else "linear"
            if fn == "relu":
                bound = math.sqrt(6.0 / fan_in)
            elif fn == "leaky_relu":
                bound = math.sqrt(6.0 / ((1 + acts[0].slope ** 2) * fan_in))
            else:
                bound = math.sqrt(6.0 / (fan_in + fan_out))
            with torch.no_grad():
                w.uniform_(-bound, bound, generator=gen)
                m.bias.zero_()

    # -- evaluation ------------------------------------------------------
    def forward(self, inputs, outputs: Sequence[str] | str | None = None, logits: bool = False):
        """Evaluate the graph.

        ``inputs`` is a tensor (single-input graphs) or a name->tensor mapping.
        ``outputs`` selects nodes (default: the graph outputs). With
        ``logits=True`` a softmax output node yields its pre-softmax input.
        """
        if not isinstance(inputs, Mapping):
            if len(self.input_specs) != 1:
                raise GraphShapeError(f"graph has inputs {list(self.input_specs)}; pass a mapping")
            inputs = {next(iter(self.input_specs)): inputs}
        single = isinstance(outputs, str)
        wanted = [outputs] if single else list(outputs or self.output_names)
        if logits:
            wanted = [self._pre_softmax(w) for w in wanted]
        values = {}
        needed = self._needed(wanted)
        for name, spec in self.input_specs.items():
            if name not in needed:
                continue
            if name not in inputs:
                raise GraphShapeError(f"missing graph input '{name}'")
            v = inputs[name]
            if tuple(v.shape[1:]) != tuple(spec["shape"]):
                raise GraphShapeError(
                    f"input '{name}' has per-sample shape {tuple(v.shape[1:])}, expected {tuple(spec['shape'])}"
                )
            values[name] = v
        for spec in self.specs:
            if spec.name not in needed:
                continue
            try:
                values[spec.name] = self.layers[spec.name](*[values[i] for i in spec.inputs])
            except RuntimeError as exc:
                shapes = [tuple(values[i].shape) for i in spec.inputs]
                raise GraphShapeError(f"layer '{spec.name}' ({spec.kind}) failed on {shapes}: {exc}") from None
        if single or (outputs is None and len(self.output_names) == 1):
            return values[wanted[0]]
        return tuple(values[w] for w in wanted)

    def _pre_softmax(self, name):
        spec = next((s for s in self.specs if s.name == name), None)
        if spec is not None and spec.kind == "activation" and spec.params.get("fn") == "softmax":
            return spec.inputs[0]
        return name

    def _needed(self, wanted) -> set[str]:
        by_name = {s.name: s for s in self.specs}
        need, stack = set(), list(wanted)
        while stack:
            n = stack.pop()
            if n in need:
                continue
            need.add(n)
            if n in by_name:
                stack.extend(by_name[n].inputs)
        return need

    @property
    def dtype(self):
        return next(self.parameters()).dtype

    def predict(self, inputs, outputs=None, batch_size: int = 256, logits: bool = False):
        """Inference on numpy arrays: eval mode, no gradients, numpy out."""
        if not isinstance(inputs, Mapping):
            inputs = {next(iter(self.input_specs)): inputs}
        n = len(next(iter(inputs.values())))
        was_training = self.training
        self.eval()
        chunks = []
        with torch.no_grad():
            for i in range(0, n, batch_size):
                batch = {k: self._to_tensor(k, v[i:i + batch_size]) for k, v in inputs.items()}
                out = self(batch, outputs, logits=logits)
                chunks.append([o.cpu().numpy() for o in out] if isinstance(out, tuple) else out.cpu().numpy())
        self.train(was_training)
        if isinstance(chunks[0], list):
            return tuple(np.concatenate([c[j] for c in chunks]) for j in range(len(chunks[0])))
        return np.concatenate(chunks)

    def _to_tensor(self, name, v):
        if isinstance(v, torch.Tensor):
            return v
        if self.input_specs[name]["dtype"] == "int":
            return torch.as_tensor(np.asarray(v), dtype=torch.long)
        return torch.as_tensor(np.asarray(v), dtype=self.dtype)


def forward(graph: Graph, inputs, outputs=None):
    """Deterministic inference (dropout off) on numpy inputs."""
    return graph.predict(inputs, outputs)


class GraphBuilder:
    """Incremental construction helper::

        b = GraphBuilder()
        x = b.input("x", (1, 4, 320))
        h = b.add("conv2d", x, filters=16, kernel=(3, 7))
        g = b.build([h], seed=0)
    """

    def __init__(self):
        self.inputs: dict[str, dict] = {}
        self.specs: list[LayerSpec] = []
        self._counts: dict[str, int] = {}

    def input(self, name: str, shape, dtype: str = "float") -> str:
        self.inputs[name] = {"shape": list(shape), "dtype": dtype}
        return name

    def add(self, kind: str, src, name: str | None = None, **params) -> str:
        if name is None:
            i = self._counts.get(kind, 0)
            self._counts[kind] = i + 1
            name = f"{kind}_{i}"
        srcs = (src,) if isinstance(src, str) else tuple(src)
        self.specs.append(LayerSpec(name, kind, srcs, params))
        return name

    def conv(self, src, filters, kernel, act="relu", name=None, **kw) -> str:
        h = self.add("conv2d", src, name=name, filters=filters, kernel=kernel, **kw)
        return self.add("activation", h, fn=act) if act != "linear" else h

    def dense(self, src, units, act="relu", name=None) -> str:
        h = self.add("dense", src, name=name, units=units)
        return self.add("activation", h, fn=act) if act != "linear" else h

    def build(self, outputs: Sequence[str], seed: int = 0) -> Graph:
        return Graph(self.inputs, self.specs, outputs, seed)
