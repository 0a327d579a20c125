"""Trained-model artifact: config, task, schema fingerprint and parameters in one file.

Layout: 8-byte magic, u64 LE header length, canonical JSON header, raw LE
parameter blocks, then the u64 LE FNV-1a checksum of everything before it.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from typing import Mapping

import numpy as np

from hetgnn.core.rng import fnv1a64
from hetgnn.core.tape import Parameters
from hetgnn.graph_schema import GraphSchema

MAGIC = b"HGNNMDL1"
FORMAT = "hetgnn-model/1"


class ArtifactError(ValueError):
    pass


@dataclasses.dataclass
class ModelArtifact:
    schema_fingerprint: int
    model_config: dict
    task_config: dict
    params: Parameters
    metadata: dict = dataclasses.field(default_factory=dict)

    def check_schema(self, schema: GraphSchema) -> None:
        if schema.fingerprint() != self.schema_fingerprint:
            raise ArtifactError(f"schema fingerprint {schema.fingerprint():016x} does not match the model's "
                                f"{self.schema_fingerprint:016x}")


def dump_artifact(artifact: ModelArtifact) -> bytes:
    params = artifact.params
    entries, blocks, offset = [], [], 0
    for name in sorted(params):
        value = np.ascontiguousarray(params[name], dtype=params[name].dtype.newbyteorder("<"))
        raw = value.tobytes()
        entries.append({"name": name, "dtype": value.dtype.name, "shape": list(value.shape), "offset": offset,
                        "nbytes": len(raw), "decay": name not in params.no_decay})
        blocks.append(raw)
        offset += len(raw)
    header = {"format": FORMAT, "schema_fingerprint": f"{artifact.schema_fingerprint:016x}",
              "model": artifact.model_config, "task": artifact.task_config, "metadata": artifact.metadata,
              "param_seed": params.seed, "dtype": params.dtype.name, "parameters": entries}
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + struct.pack("<Q", len(head)) + head + b"".join(blocks)
    return body + struct.pack("<Q", fnv1a64(body))


def parse_artifact(data: bytes) -> ModelArtifact:
    if len(data) < len(MAGIC) + 16 or data[:len(MAGIC)] != MAGIC:
        raise ArtifactError("not a model artifact (bad magic)")
    body, (checksum,) = data[:-8], struct.unpack("<Q", data[-8:])
    if fnv1a64(body) != checksum:
        raise ArtifactError("model artifact checksum mismatch (file is corrupt)")
    (head_len,) = struct.unpack_from("<Q", body, len(MAGIC))
    start = len(MAGIC) + 8
    if start + head_len > len(body):
        raise ArtifactError("model artifact header overruns the file")
    try:
        header = json.loads(body[start:start + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ArtifactError(f"unreadable model header: {e}") from None
    if header.get("format") != FORMAT:
        raise ArtifactError(f"unsupported model format {header.get('format')!r}")
    blob = memoryview(body)[start + head_len:]
    params = Parameters(int(header["param_seed"]), header["dtype"])
    for entry in header["parameters"]:
        dtype = np.dtype(entry["dtype"]).newbyteorder("<")
        shape = tuple(entry["shape"])
        lo, hi = entry["offset"], entry["offset"] + entry["nbytes"]
        if hi > len(blob) or entry["nbytes"] != dtype.itemsize * int(np.prod(shape, dtype=np.int64)):
            raise ArtifactError(f"parameter {entry['name']!r}: block size does not match shape {list(shape)}")
        params[entry["name"]] = np.frombuffer(blob[lo:hi], dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
        if not entry["decay"]:
            params.no_decay.add(entry["name"])
    return ModelArtifact(int(header["schema_fingerprint"], 16), header["model"], header["task"], params,
                         header.get("metadata", {}))


def export_model(artifact: ModelArtifact, path: str) -> None:
    with open(path, "wb") as f:
        f.write(dump_artifact(artifact))


def load_model(path: str, schema: GraphSchema | None = None) -> ModelArtifact:
    """Reads an artifact; with `schema`, also checks its fingerprint."""
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise ArtifactError(f"cannot read model {path}: {e}") from None
    artifact = parse_artifact(data)
    if schema is not None:
        artifact.check_schema(schema)
    return artifact


def params_equal(a: Mapping, b: Mapping) -> bool:
    return set(a) == set(b) and all(
        a[k].dtype == b[k].dtype and a[k].shape == b[k].shape and a[k].tobytes() == b[k].tobytes() for k in a)
