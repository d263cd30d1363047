"""RFNN model files.

Layout: ``b"RFNN0001"``, a little-endian u32 byte count, that many bytes of
UTF-8 JSON (inputs, layer specs, outputs, parameter manifest, training
config, free-form metadata), then every parameter as little-endian float32
in declaration order.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np
import torch

from .graph import Graph

MAGIC_PREFIX = b"RFNN"
FORMAT_VERSION = "0001"


class ModelFormatError(ValueError):
    """The file is not a readable RFNN model."""


class ModelVersionError(ModelFormatError):
    def __init__(self, found: str, expected: str = FORMAT_VERSION):
        super().__init__(f"model file version {found} is not supported (expected {expected})")
        self.found = found
        self.expected = expected


def _params_blob(graph: Graph) -> bytes:
    parts = [p.detach().cpu().numpy().astype("<f4").ravel() for _, p in graph.named_parameters()]
    return np.concatenate(parts).tobytes() if parts else b""


def model_bytes(graph: Graph, train_config=None, metadata: dict | None = None) -> bytes:
    blob = _params_blob(graph)
    header = {
        "inputs": graph.input_specs,
        "nodes": [s.to_dict() for s in graph.specs],
        "outputs": graph.output_names,
        "seed": graph.seed,
        "params": [[n, list(p.shape)] for n, p in graph.named_parameters()],
        "param_crc32": zlib.crc32(blob),
        "train_config": train_config.to_dict() if hasattr(train_config, "to_dict") else train_config,
        "metadata": {**graph.meta, **(metadata or {})},
    }
    text = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC_PREFIX + FORMAT_VERSION.encode() + struct.pack("<I", len(text)) + text + blob


def save_model(graph: Graph, path, train_config=None, metadata: dict | None = None) -> None:
    Path(path).write_bytes(model_bytes(graph, train_config, metadata))


def parse_model(raw: bytes) -> tuple[Graph, dict]:
    if len(raw) < 12 or raw[:4] != MAGIC_PREFIX:
        raise ModelFormatError("not an RFNN model file (bad magic)")
    version = raw[4:8].decode("ascii", errors="replace")
    if version != FORMAT_VERSION:
        raise ModelVersionError(version)
    (n,) = struct.unpack_from("<I", raw, 8)
    if 12 + n > len(raw):
        raise ModelFormatError(f"layer-spec section truncated: need {n} bytes")
    try:
        header = json.loads(raw[12:12 + n].decode("utf-8"))
        graph = Graph(header["inputs"], header["nodes"], header["outputs"], header["seed"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ModelFormatError(f"corrupted layer-spec section: {exc}") from None
    blob = raw[12 + n:]
    expected = [[name, list(p.shape)] for name, p in graph.named_parameters()]
    if expected != header["params"]:
        raise ModelFormatError("parameter manifest does not match the layer specs")
    count = sum(int(np.prod(s)) for _, s in expected)
    if len(blob) != 4 * count:
        raise ModelFormatError(f"parameter payload is {len(blob)} bytes, expected {4 * count}")
    if zlib.crc32(blob) != header["param_crc32"]:
        raise ModelFormatError("parameter payload checksum mismatch")
    values = np.frombuffer(blob, dtype="<f4")
    off = 0
    with torch.no_grad():
        for _, p in graph.named_parameters():
            k = p.numel()
            p.copy_(torch.from_numpy(values[off:off + k].reshape(p.shape).astype(np.float32)))
            off += k
    graph.eval()
    graph.meta = dict(header.get("metadata", {}))
    return graph, {"train_config": header.get("train_config"), "metadata": header.get("metadata", {})}


def load_model(path) -> Graph:
    return parse_model(Path(path).read_bytes())[0]


def load_model_with_info(path) -> tuple[Graph, dict]:
    return parse_model(Path(path).read_bytes())
