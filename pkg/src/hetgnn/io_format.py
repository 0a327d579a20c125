"""Graph record files (.gtr) and batched dataset reading.

A record file is a sequence of records, each an 8-byte little-endian payload
length followed by the payload. A payload encodes one single-component graph:

    8 bytes   schema fingerprint (FNV-1a 64, little-endian)
    8 bytes   header length H (little-endian)
    H bytes   header: canonical JSON (sorted keys, compact) with a manifest
    rest      raw little-endian numeric arrays at the manifest offsets

String features are stored inside the header. Sets and features are visited
in sorted name order, so equal graphs always encode to equal bytes.
"""

from __future__ import annotations

import glob
import json
import logging
import os
import re
import struct
from typing import Iterable, Iterator, Optional

import numpy as np

from hetgnn.graph_schema import GraphSchema, schema_fingerprint, validate_graph
from hetgnn.graph_tensor import (Adjacency, Context, EdgeSet, GraphTensor, NodeSet, RaggedFeature,
                                 build_graph_tensor, merge_batch)

log = logging.getLogger(__name__)

FORMAT = "hetgnn-graph/1"
_U64 = struct.Struct("<Q")


class RecordError(ValueError):
    pass


class CorruptRecordError(RecordError):
    pass


class FingerprintError(RecordError):
    pass


# Payload encoding ---------------------------------------------------------

class _Blob:
    def __init__(self):
        self.parts: list[bytes] = []
        self.size = 0

    def add(self, array: np.ndarray) -> dict:
        if array.dtype == object or array.dtype.kind in "US":
            values = [str(x) for x in array.reshape(-1).tolist()]
            return {"kind": "string", "shape": list(array.shape), "values": values}
        little = array.astype(array.dtype.newbyteorder("<"), copy=False)
        data = np.ascontiguousarray(little).tobytes()
        entry = {"kind": "dense", "dtype": little.dtype.str, "shape": list(array.shape),
                 "offset": self.size, "nbytes": len(data)}
        self.parts.append(data)
        self.size += len(data)
        return entry


def _encode_feature(blob: _Blob, value) -> dict:
    if isinstance(value, RaggedFeature):
        return {"kind": "ragged", "row_lengths": blob.add(np.asarray(value.row_lengths, dtype=np.int64)),
                "flat": blob.add(np.asarray(value.flat))}
    return blob.add(np.asarray(value))


def _encode_features(blob, features) -> dict:
    return {name: _encode_feature(blob, features[name]) for name in sorted(features)}


def encode_graph(graph: GraphTensor, schema: GraphSchema, root_set: Optional[str] = None) -> bytes:
    """Serializes a single-component graph to deterministic bytes.

    `root_set` declares a rooted sample: the header records that the root is
    item 0 of that node set (the sampler's seed-first numbering).
    """
    if graph.num_components != 1:
        raise RecordError(f"only single-component graphs can be encoded, got {graph.num_components}")
    blob = _Blob()
    header = {"format": FORMAT, "context": _encode_features(blob, graph.context.features),
              "node_sets": {}, "edge_sets": {}}
    if root_set is not None:
        if root_set not in graph.node_sets or graph.node_sets[root_set].total_size == 0:
            raise RecordError(f"root node set {root_set!r} is missing or empty")
        header["root"] = {"node_set": root_set, "index": 0}
    for name in sorted(graph.node_sets):
        ns = graph.node_sets[name]
        header["node_sets"][name] = {"size": ns.total_size, "features": _encode_features(blob, ns.features)}
    for name in sorted(graph.edge_sets):
        es = graph.edge_sets[name]
        adj = es.adjacency
        header["edge_sets"][name] = {
            "size": es.total_size,
            "source_set": adj.source_set, "source": blob.add(adj.source),
            "target_set": adj.target_set, "target": blob.add(adj.target),
            "features": _encode_features(blob, es.features),
        }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _U64.pack(schema_fingerprint(schema)) + _U64.pack(len(head)) + head + b"".join(blob.parts)


def _decode_array(entry: dict, data: memoryview) -> np.ndarray:
    kind = entry.get("kind")
    shape = tuple(entry["shape"])
    if kind == "string":
        values = entry["values"]
        out = np.empty(len(values), dtype=object)
        out[:] = values
        if int(np.prod(shape)) != len(values):
            raise CorruptRecordError("string feature shape does not match its values")
        return out.reshape(shape)
    if kind != "dense":
        raise CorruptRecordError(f"unknown array kind {kind!r}")
    start, nbytes = int(entry["offset"]), int(entry["nbytes"])
    if start < 0 or start + nbytes > len(data):
        raise CorruptRecordError(f"array at offset {start} (+{nbytes} bytes) runs past the payload end")
    dtype = np.dtype(entry["dtype"])
    if int(np.prod(shape)) * dtype.itemsize != nbytes:
        raise CorruptRecordError("array byte count does not match its shape")
    arr = np.frombuffer(data[start:start + nbytes], dtype=dtype).reshape(shape)
    return arr.astype(dtype.newbyteorder("="), copy=True)


def _decode_feature(entry: dict, data):
    if entry.get("kind") == "ragged":
        return RaggedFeature(_decode_array(entry["row_lengths"], data), _decode_array(entry["flat"], data))
    return _decode_array(entry, data)


def _ordered(names, schema_order):
    known = [n for n in schema_order if n in names]
    return known + sorted(n for n in names if n not in schema_order)


def read_header(payload: bytes) -> tuple[int, dict]:
    """(fingerprint, header manifest) of a payload, without needing its schema."""
    if len(payload) < 16:
        raise CorruptRecordError(f"payload of {len(payload)} bytes is shorter than its fixed header")
    fingerprint = _U64.unpack_from(payload, 0)[0]
    header, _ = _split(payload)
    return fingerprint, header


def _split(payload: bytes) -> tuple[dict, memoryview]:
    head_len = _U64.unpack_from(payload, 8)[0]
    if 16 + head_len > len(payload):
        raise CorruptRecordError(f"header length {head_len} exceeds payload size {len(payload)}")
    try:
        header = json.loads(bytes(payload[16:16 + head_len]).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptRecordError(f"unreadable header: {e}") from None
    if not isinstance(header, dict) or header.get("format") != FORMAT:
        raise CorruptRecordError(f"unsupported format {header.get('format') if isinstance(header, dict) else None!r}")
    return header, memoryview(payload)[16 + head_len:]


def decode_graph(payload: bytes, schema: GraphSchema) -> GraphTensor:
    """Parses one payload and checks it against `schema`."""
    if len(payload) < 16:
        raise CorruptRecordError(f"payload of {len(payload)} bytes is shorter than its fixed header")
    fingerprint = _U64.unpack_from(payload, 0)[0]
    expected = schema_fingerprint(schema)
    if fingerprint != expected:
        raise FingerprintError(f"schema fingerprint mismatch: record {fingerprint:016x}, schema {expected:016x}")
    header, data = _split(payload)
    try:
        context = Context.from_fields({k: _decode_feature(v, data) for k, v in header["context"].items()})
        node_sets = {}
        for name in _ordered(header["node_sets"], list(schema.node_sets)):
            entry = header["node_sets"][name]
            feats = {k: _decode_feature(entry["features"][k], data)
                     for k in _ordered(entry["features"], list(schema.node_sets.get(name).features)
                                       if name in schema.node_sets else [])}
            node_sets[name] = NodeSet.from_fields([entry["size"]], feats)
        edge_sets = {}
        for name in _ordered(header["edge_sets"], list(schema.edge_sets)):
            entry = header["edge_sets"][name]
            adj = Adjacency(entry["source_set"], _decode_array(entry["source"], data),
                            entry["target_set"], _decode_array(entry["target"], data))
            feats = {k: _decode_feature(entry["features"][k], data) for k in sorted(entry["features"])}
            edge_sets[name] = EdgeSet.from_fields([entry["size"]], adj, feats)
        graph = build_graph_tensor(context, node_sets, edge_sets)
    except (KeyError, TypeError) as e:
        raise CorruptRecordError(f"malformed header: {e!r}") from None
    except ValueError as e:
        if isinstance(e, RecordError):
            raise
        raise CorruptRecordError(f"inconsistent record: {e}") from None
    violations = validate_graph(schema, graph)
    if violations:
        raise RecordError("record does not conform to schema: " + "; ".join(violations))
    return graph


# Record files -------------------------------------------------------------

_SHARDS = re.compile(r"^(?P<base>.+)@(?P<count>\d+)$")


def expand_pattern(pattern: str) -> list[str]:
    """Expands "name@K" into K shard names, globs into sorted matches, commas into lists."""
    paths: list[str] = []
    for part in str(pattern).split(","):
        part = part.strip()
        if not part:
            continue
        m = _SHARDS.match(part)
        if m:
            k = int(m.group("count"))
            paths.extend(f"{m.group('base')}-{i:05d}-of-{k:05d}" for i in range(k))
        elif any(c in part for c in "*?["):
            paths.extend(sorted(glob.glob(part)))
        else:
            paths.append(part)
    return paths


def write_records(path: str, payloads: Iterable[bytes]) -> int:
    count = 0
    with open(path, "wb") as f:
        for payload in payloads:
            f.write(_U64.pack(len(payload)))
            f.write(payload)
            count += 1
    return count


def write_sharded(pattern: str, payloads: Iterable[bytes]) -> int:
    """Writes records round-robin over the files `pattern` expands to."""
    paths = expand_pattern(pattern)
    if not paths:
        raise RecordError(f"pattern {pattern!r} names no files")
    files = [open(p, "wb") for p in paths]
    count = 0
    try:
        for payload in payloads:
            f = files[count % len(files)]
            f.write(_U64.pack(len(payload)))
            f.write(payload)
            count += 1
    finally:
        for f in files:
            f.close()
    return count


def iter_records(path: str) -> Iterator[tuple[int, bytes]]:
    """Yields (offset, payload) for each record of one file."""
    try:
        f = open(path, "rb")
    except OSError as e:
        raise RecordError(f"cannot read shard {path}: {e}") from None
    with f:
        offset = 0
        while True:
            prefix = f.read(8)
            if not prefix:
                return
            if len(prefix) < 8:
                raise CorruptRecordError(f"{path}@{offset}: truncated length prefix")
            (length,) = _U64.unpack(prefix)
            payload = f.read(length)
            if len(payload) < length:
                raise CorruptRecordError(
                    f"{path}@{offset}: truncated record ({len(payload)} of {length} bytes)")
            yield offset, payload
            offset += 8 + length


def read_records(pattern: str) -> Iterator[tuple[str, int, bytes]]:
    paths = expand_pattern(pattern)
    for path in paths:
        if not os.path.exists(path):
            raise RecordError(f"cannot read shard {path}: no such file")
    for path in paths:
        for offset, payload in iter_records(path):
            yield path, offset, payload


def read_graphs(pattern: str, schema: GraphSchema) -> Iterator[GraphTensor]:
    for path, offset, payload in read_records(pattern):
        try:
            yield decode_graph(payload, schema)
        except RecordError as e:
            raise type(e)(f"{path}@{offset}: {e}") from None


class DatasetReader:
    """Streams merged batches of decoded graphs.

    With a shuffle seed, records pass through a bounded shuffle buffer of
    `buffer_size` (default 10 * batch_size); `max_buffered` reports the most
    records ever held at once.
    """

    def __init__(self, pattern: str, schema: GraphSchema, batch_size: int,
                 shuffle_seed: Optional[int] = None, buffer_size: Optional[int] = None):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.pattern = pattern
        self.schema = schema
        self.batch_size = batch_size
        self.shuffle_seed = shuffle_seed
        self.buffer_size = buffer_size or 10 * batch_size
        self.max_buffered = 0

    def _shuffled(self, items: Iterator):
        from hetgnn.core.rng import stream
        gen = stream(self.shuffle_seed, "shuffle")
        buffer = []
        for item in items:
            if len(buffer) < self.buffer_size:
                buffer.append(item)
                self.max_buffered = max(self.max_buffered, len(buffer))
                continue
            j = int(gen.integers(len(buffer)))
            yield buffer[j]
            buffer[j] = item
        while buffer:
            j = int(gen.integers(len(buffer)))
            yield buffer.pop(j)

    def graphs(self) -> Iterator[GraphTensor]:
        items = read_graphs(self.pattern, self.schema)
        if self.shuffle_seed is not None:
            items = self._shuffled(items)
        return items

    def __iter__(self) -> Iterator[GraphTensor]:
        batch = []
        for graph in self.graphs():
            batch.append(graph)
            if len(batch) == self.batch_size:
                yield merge_batch(batch)
                batch = []
        if batch:
            yield merge_batch(batch)


def read_dataset(pattern: str, schema: GraphSchema, batch_size: int,
                 shuffle_seed: Optional[int] = None) -> Iterator[GraphTensor]:
    return iter(DatasetReader(pattern, schema, batch_size, shuffle_seed))
