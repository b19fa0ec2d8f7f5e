"""Graph data model, validation and the canonical JSONL format."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

BASE = 0
BALANCED = "balanced"
GRAPH_CLS = "graph"
NODE_CLS = "node"

SPLITS = ("train", "val", "test")


class DecodeError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected node-attributed graph.

    ``roles`` holds 0 for base (confounding) nodes and k >= 1 for nodes of
    motif instance k. Edges are stored once each with ``u < v``.
    """

    id: int
    num_nodes: int
    edges: np.ndarray
    x: np.ndarray
    roles: np.ndarray
    junction: np.ndarray
    y: int
    y_node: Optional[np.ndarray] = None
    marker: Optional[np.ndarray] = None

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "edges", _frozen(edges))
        x = np.asarray(self.x, dtype=np.float32)
        if x.ndim == 1:
            x = x.reshape(len(x), -1) if len(x) else x.reshape(0, 0)
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "roles", _frozen(np.asarray(self.roles, dtype=np.int64)))
        object.__setattr__(self, "junction", _frozen(np.asarray(self.junction, dtype=bool)))
        object.__setattr__(self, "y", int(self.y))
        object.__setattr__(self, "num_nodes", int(self.num_nodes))
        object.__setattr__(self, "id", int(self.id))
        if self.y_node is not None:
            object.__setattr__(self, "y_node", _frozen(np.asarray(self.y_node, dtype=np.int64)))
        if self.marker is not None:
            object.__setattr__(self, "marker", _frozen(np.asarray(self.marker, dtype=np.int64)))

    @property
    def feature_dim(self) -> int:
        return self.x.shape[1]

    def junction_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.junction)

    def replace(self, **changes) -> "Graph":
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw.update(changes)
        return Graph(**kw)

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        if (self.id, self.num_nodes, self.y) != (other.id, other.num_nodes, other.y):
            return False
        for name in ("edges", "x", "roles", "junction"):
            a, b = getattr(self, name), getattr(other, name)
            if a.shape != b.shape or not np.array_equal(a, b):
                return False
        for name in ("y_node", "marker"):
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None):
                return False
            if a is not None and not np.array_equal(a, b):
                return False
        return True

    __hash__ = None


@dataclass(frozen=True, eq=True)
class Dataset:
    name: str
    graphs: tuple
    splits: dict
    bias: Union[float, str]
    task: str
    feature_dim: int

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))
        object.__setattr__(
            self, "splits", {k: [int(i) for i in self.splits.get(k, [])] for k in SPLITS}
        )

    def split(self, name: str) -> list:
        return [self.graphs[i] for i in self.splits[name]]

    @property
    def num_classes(self) -> int:
        if not self.graphs:
            return 0
        return int(max(g.y for g in self.graphs)) + 1

    @property
    def num_node_classes(self) -> int:
        labels = [int(g.y_node.max()) for g in self.graphs if g.y_node is not None and g.num_nodes]
        return max(labels) + 1 if labels else 0


def boundary_edges(g: Graph) -> np.ndarray:
    """Edges whose endpoints carry different roles."""
    if len(g.edges) == 0:
        return g.edges
    u, v = g.edges[:, 0], g.edges[:, 1]
    return g.edges[g.roles[u] != g.roles[v]]


def validate_graph(g: Graph) -> list[str]:
    """Return a list of violated invariants; empty when the graph is well formed."""
    report = []
    n = g.num_nodes
    e = g.edges
    if len(e):
        if e.min() < 0 or e.max() >= n:
            report.append("endpoint out of range")
        if np.any(e[:, 0] == e[:, 1]):
            report.append("self-loop")
        lo, hi = np.minimum(e[:, 0], e[:, 1]), np.maximum(e[:, 0], e[:, 1])
        if len(set(zip(lo.tolist(), hi.tolist()))) != len(e):
            report.append("duplicate edge")
    if g.x.shape[0] != n:
        report.append("feature row count != num_nodes")
    if len(g.roles) != n:
        report.append("roles length != num_nodes")
    if len(g.junction) != n:
        report.append("junction mask length != num_nodes")
    if g.y_node is not None and len(g.y_node) != n:
        report.append("node_labels length != num_nodes")
    if g.marker is not None and len(g.marker) and (g.marker.min() < 0 or g.marker.max() >= n):
        report.append("marker index out of range")
    if not report:
        expected = np.zeros(n, dtype=bool)
        b = boundary_edges(g)
        expected[b.ravel()] = True
        if not np.array_equal(expected, g.junction):
            report.append("junction mask inconsistent")
    return report


# --------------------------------------------------------------------- JSONL


def _fmt(v: float) -> str:
    return format(float(v), ".9g")


def _ints(a) -> str:
    return "[" + ",".join(str(int(i)) for i in a) + "]"


def encode_graph(g: Graph) -> str:
    edges = "[" + ",".join(f"[{int(u)},{int(v)}]" for u, v in g.edges) + "]"
    x = "[" + ",".join("[" + ",".join(_fmt(v) for v in row) + "]" for row in g.x) + "]"
    y_node = "null" if g.y_node is None else _ints(g.y_node)
    marker = "null" if g.marker is None else _ints(g.marker)
    return (
        f'{{"id":{g.id},"n":{g.num_nodes},"edges":{edges},"x":{x},'
        f'"roles":{_ints(g.roles)},"junction":{_ints(g.junction.astype(int))},'
        f'"y":{g.y},"y_node":{y_node},"marker":{marker}}}'
    )


def encode_header(ds: Dataset) -> str:
    bias = BALANCED if ds.bias == BALANCED else float(ds.bias)
    header = {
        "name": ds.name,
        "bias": bias,
        "task": ds.task,
        "d": int(ds.feature_dim),
        "splits": {k: ds.splits[k] for k in SPLITS},
    }
    return json.dumps(header, separators=(",", ":"))


def encode_jsonl(ds: Dataset, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(encode_header(ds) + "\n")
        for g in ds.graphs:
            fh.write(encode_graph(g) + "\n")


_GRAPH_FIELDS = ("id", "n", "edges", "x", "roles", "junction", "y", "y_node", "marker")
_HEADER_FIELDS = ("name", "bias", "task", "d", "splits")


def _require(obj: dict, fields: Sequence[str], lineno: int) -> None:
    for f in fields:
        if f not in obj:
            raise DecodeError(f"line {lineno}: missing required field '{f}'")


def decode_graph(obj: dict, d: int, lineno: int = 0) -> Graph:
    _require(obj, _GRAPH_FIELDS, lineno)
    n = int(obj["n"])
    x = np.asarray(obj["x"], dtype=np.float32).reshape(n, d) if n else np.zeros((0, d), np.float32)
    return Graph(
        id=obj["id"],
        num_nodes=n,
        edges=np.asarray(obj["edges"], dtype=np.int64).reshape(-1, 2),
        x=x,
        roles=obj["roles"],
        junction=np.asarray(obj["junction"], dtype=bool),
        y=obj["y"],
        y_node=obj["y_node"],
        marker=obj["marker"],
    )


def decode_jsonl(path: Union[str, Path]) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DecodeError("line 1: missing header")
    objs = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DecodeError(f"line {lineno}: malformed JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise DecodeError(f"line {lineno}: expected a JSON object")
        objs.append((lineno, obj))
    (hline, header), rest = objs[0], objs[1:]
    _require(header, _HEADER_FIELDS, hline)
    d = int(header["d"])
    graphs = []
    for lineno, obj in rest:
        try:
            graphs.append(decode_graph(obj, d, lineno))
        except DecodeError:
            raise
        except (TypeError, ValueError) as exc:
            raise DecodeError(f"line {lineno}: {exc}") from None
    splits = header["splits"]
    _require(splits, SPLITS, hline)
    return Dataset(
        name=header["name"],
        graphs=graphs,
        splits=splits,
        bias=header["bias"],
        task=header["task"],
        feature_dim=d,
    )


def validate_dataset(ds: Dataset) -> list[str]:
    report = []
    seen: set = set()
    for k in SPLITS:
        idx = ds.splits[k]
        if any(i < 0 or i >= len(ds.graphs) for i in idx):
            report.append(f"split {k} has out-of-range index")
        if seen.intersection(idx):
            report.append(f"split {k} overlaps another split")
        seen.update(idx)
    for g in ds.graphs:
        if g.num_nodes and g.feature_dim != ds.feature_dim:
            report.append(f"graph {g.id}: feature dim {g.feature_dim} != {ds.feature_dim}")
        report.extend(f"graph {g.id}: {msg}" for msg in validate_graph(g))
    return report
