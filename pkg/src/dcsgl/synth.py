"""Synthetic biased motif datasets, marker-path datasets and the junction annotator.

A motif graph is one base graph (the confounder) joined by a single edge to
one motif (which decides the label). In the training split the base class
agrees with the motif class with probability ``bias``; validation and test
splits are always balanced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np

from .graph import BALANCED, GRAPH_CLS, NODE_CLS, SPLITS, Dataset, Graph

SPURIOUS_MOTIF = "spurious_motif"
MOTIF_VARIANT = "motif_variant"
MARKER = "marker"
FAMILIES = (SPURIOUS_MOTIF, MOTIF_VARIANT, MARKER)

NUM_MOTIF_CLASSES = 3


# ------------------------------------------------------------------ shapes
# Each builder returns (num_nodes, edge list) with local node ids.


def tree(n):
    return n, [((i - 1) // 2, i) for i in range(1, n)]


def ladder(n):
    k = max(2, n // 2)
    edges = [(i, i + 1) for i in range(k - 1)]
    edges += [(k + i, k + i + 1) for i in range(k - 1)]
    edges += [(i, k + i) for i in range(k)]
    return 2 * k, edges


def wheel(n):
    n = max(n, 4)
    rim = n - 1
    edges = [(0, i) for i in range(1, n)]
    edges += [(1 + i, 1 + (i + 1) % rim) for i in range(rim)]
    return n, edges


def grid(n):
    r = max(2, int(round(math.sqrt(n))))
    c = max(2, n // r)
    edges = []
    for i in range(r):
        for j in range(c):
            v = i * c + j
            if j + 1 < c:
                edges.append((v, v + 1))
            if i + 1 < r:
                edges.append((v, v + c))
    return r * c, edges


def barbell(n):
    k = 4
    bridge = max(0, n - 2 * k)
    edges = [(i, j) for i in range(k) for j in range(i + 1, k)]
    edges += [(k + bridge + i, k + bridge + j) for i in range(k) for j in range(i + 1, k)]
    chain = [k - 1] + [k + i for i in range(bridge)] + [k + bridge]
    edges += list(zip(chain[:-1], chain[1:]))
    return 2 * k + bridge, edges


def star(n):
    return n, [(0, i) for i in range(1, n)]


def cycle(_=None):
    return 6, [(i, (i + 1) % 6) for i in range(6)]


def house(_=None):
    return 5, [(0, 1), (1, 2), (2, 3), (3, 0), (0, 4), (1, 4)]


def crane(_=None):
    return 6, [(0, 1), (1, 2), (2, 3), (3, 0), (1, 3), (0, 4), (4, 5)]


def diamond(_=None):
    return 4, [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]


def pentagon_chord(_=None):
    return 5, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2)]


def triangle_tail(_=None):
    return 5, [(0, 1), (1, 2), (2, 0), (2, 3), (3, 4)]


BASES = {
    SPURIOUS_MOTIF: (tree, ladder, wheel),
    MOTIF_VARIANT: (grid, barbell, star),
}
MOTIFS = {
    SPURIOUS_MOTIF: (cycle, house, crane),
    MOTIF_VARIANT: (diamond, pentagon_chord, triangle_tail),
}


@dataclass(frozen=True)
class GenSpec:
    family: str = MOTIF_VARIANT
    count: int = 3000
    bias: Union[float, str] = BALANCED
    task: str = GRAPH_CLS
    base_sizes: tuple = (8, 20)
    feature_dim: int = 4
    seed: int = 0
    split_fractions: tuple = (2 / 3, 1 / 6, 1 / 6)

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.count <= 0:
            raise ValueError("count must be > 0")
        if self.bias != BALANCED:
            b = float(self.bias)
            if not (1 / 3 - 1e-9 <= b <= 1.0):
                raise ValueError("bias must be in [1/3,1]")
        if self.task not in (GRAPH_CLS, NODE_CLS):
            raise ValueError(f"task must be 'graph' or 'node', got {self.task!r}")
        lo, hi = self.base_sizes
        if not (4 <= lo <= hi):
            raise ValueError("base_sizes must satisfy 4 <= lo <= hi")
        if self.feature_dim < (3 if self.family == MARKER else 1):
            raise ValueError("feature_dim too small for this family")
        if len(self.split_fractions) != 3 or abs(sum(self.split_fractions) - 1) > 1e-9:
            raise ValueError("split_fractions must be three values summing to 1")

    def split_sizes(self) -> tuple:
        n_train = int(round(self.count * self.split_fractions[0]))
        n_val = int(round(self.count * self.split_fractions[1]))
        return n_train, n_val, self.count - n_train - n_val


def graph_rng(seed: int, graph_id: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, int(graph_id)])


def annotate_junctions(g: Graph) -> np.ndarray:
    """True on every node incident to an edge joining two different roles."""
    mask = np.zeros(g.num_nodes, dtype=bool)
    if len(g.edges):
        u, v = g.edges[:, 0], g.edges[:, 1]
        cross = g.roles[u] != g.roles[v]
        mask[u[cross]] = True
        mask[v[cross]] = True
    return mask


def draw_base_class(rng: np.random.Generator, motif: int, bias) -> int:
    if bias == BALANCED:
        return int(rng.integers(NUM_MOTIF_CLASSES))
    if rng.random() < float(bias):
        return motif
    others = [c for c in range(NUM_MOTIF_CLASSES) if c != motif]
    return others[int(rng.integers(len(others)))]


def _canonical(edges) -> np.ndarray:
    e = np.array(sorted({(min(u, v), max(u, v)) for u, v in edges}), dtype=np.int64)
    return e.reshape(-1, 2)


def motif_graph(spec: GenSpec, graph_id: int, bias) -> tuple:
    """Build one motif graph; returns ``(graph, base_class)``."""
    rng = graph_rng(spec.seed, graph_id)
    motif_cls = int(rng.integers(NUM_MOTIF_CLASSES))
    base_cls = draw_base_class(rng, motif_cls, bias)
    lo, hi = spec.base_sizes
    nb, base_edges = BASES[spec.family][base_cls](int(rng.integers(lo, hi + 1)))
    nm, motif_edges = MOTIFS[spec.family][motif_cls]()
    n = nb + nm
    u = int(rng.integers(nb))
    v = nb + int(rng.integers(nm))
    edges = list(base_edges) + [(a + nb, b + nb) for a, b in motif_edges] + [(u, v)]
    roles = np.array([0] * nb + [1] * nm, dtype=np.int64)
    x = rng.random((n, spec.feature_dim), dtype=np.float32)
    y_node = None
    if spec.task == NODE_CLS:
        y_node = np.where(roles == 0, 0, motif_cls + 1)
    g = Graph(graph_id, n, _canonical(edges), x, roles, np.zeros(n, bool), motif_cls, y_node)
    return g.replace(junction=annotate_junctions(g)), base_cls


def _dataset_name(spec: GenSpec) -> str:
    bias = "balanced" if spec.bias == BALANCED else f"b{float(spec.bias):g}"
    suffix = "-n" if spec.task == NODE_CLS else ""
    return f"{spec.family}{suffix}-{bias}-s{spec.seed}"


def _normalise_bias(bias):
    if bias == BALANCED:
        return BALANCED
    return float(bias)


def gen_motif_dataset(spec: GenSpec, return_base_classes: bool = False):
    """Generate a Spurious-Motif or Motif-Variant style dataset.

    With ``return_base_classes`` also returns the base class drawn per graph.
    """
    spec.validate()
    if spec.family == MARKER:
        raise ValueError("use gen_marker_dataset for the marker family")
    bias = _normalise_bias(spec.bias)
    n_train, n_val, n_test = spec.split_sizes()
    graphs, bases = [], []
    for gid in range(spec.count):
        g, b = motif_graph(spec, gid, bias if gid < n_train else BALANCED)
        graphs.append(g)
        bases.append(b)
    ids = list(range(spec.count))
    splits = {
        "train": ids[:n_train],
        "val": ids[n_train : n_train + n_val],
        "test": ids[n_train + n_val :],
    }
    ds = Dataset(_dataset_name(spec), graphs, splits, bias, spec.task, spec.feature_dim)
    return (ds, bases) if return_base_classes else ds


def gen_mixed_node_dataset(spec_a: GenSpec, spec_b: Optional[GenSpec] = None) -> Dataset:
    """Union of two node-classification datasets with disjoint motif labels.

    Graphs of the second family get node labels shifted past the first
    family's motif labels (and graph labels shifted by the number of motif
    classes). Split membership is kept per graph; ids are renumbered and each
    split is re-shuffled with ``spec_a.seed``.
    """
    ds_a = gen_motif_dataset(spec_a)
    if spec_b is None or spec_b.count == 0:
        return ds_a
    if spec_a.task != NODE_CLS or spec_b.task != NODE_CLS:
        raise ValueError("mixed datasets need two node-classification specs")
    if spec_a.feature_dim != spec_b.feature_dim:
        raise ValueError(
            f"feature_dim mismatch: {spec_a.feature_dim} vs {spec_b.feature_dim}"
        )
    ds_b = gen_motif_dataset(spec_b)
    graphs = list(ds_a.graphs)
    shift = NUM_MOTIF_CLASSES
    for g in ds_b.graphs:
        y_node = np.where(g.y_node == 0, 0, g.y_node + shift)
        graphs.append(g.replace(id=len(graphs), y=g.y + shift, y_node=y_node))
    rng = np.random.default_rng([spec_a.seed, 0x5EED])
    splits = {}
    for k in SPLITS:
        idx = list(ds_a.splits[k]) + [i + len(ds_a.graphs) for i in ds_b.splits[k]]
        splits[k] = [int(i) for i in rng.permutation(idx)]
    name = f"mixed-n-{ds_a.name}+{ds_b.name}"
    return Dataset(name, graphs, splits, ds_a.bias, NODE_CLS, spec_a.feature_dim)


POS, NEG, FLAG = 0, 1, 2


def marker_graph(spec: GenSpec, graph_id: int) -> Graph:
    """A token path whose label is the polarity of its final segment.

    Half of the paths contain a marker node that splits them into two segments
    of opposite polarity; ``marker`` lists the marker and every later token.
    """
    rng = graph_rng(spec.seed, graph_id)
    lo, hi = spec.base_sizes
    n = int(rng.integers(lo, hi + 1))
    label = int(rng.integers(2))
    has_marker = rng.random() < 0.5
    x = np.zeros((n, spec.feature_dim), dtype=np.float32)
    x[:, 3:] = rng.random((n, spec.feature_dim - 3), dtype=np.float32)
    polarity = np.full(n, label)
    roles = np.zeros(n, dtype=np.int64)
    marker = None
    if has_marker:
        pos = int(rng.integers(2, n - 1))
        polarity[:pos] = 1 - label
        roles[pos:] = 1
        marker = np.arange(pos, n)
    cue = rng.random(n) < 0.6
    for i in range(n):
        if marker is not None and i == marker[0]:
            x[i, FLAG] = 1.0
        elif cue[i]:
            x[i, POS if polarity[i] == 1 else NEG] = 1.0
    edges = np.array([(i, i + 1) for i in range(n - 1)], dtype=np.int64)
    g = Graph(graph_id, n, edges, x, roles, np.zeros(n, bool), label, None, marker)
    return g.replace(junction=annotate_junctions(g))


def gen_marker_dataset(spec: GenSpec) -> Dataset:
    spec = replace(spec, family=MARKER)
    spec.validate()
    if spec.task != GRAPH_CLS:
        raise ValueError("marker datasets are graph-classification only")
    graphs = [marker_graph(spec, gid) for gid in range(spec.count)]
    n_train, n_val, _ = spec.split_sizes()
    ids = list(range(spec.count))
    splits = {
        "train": ids[:n_train],
        "val": ids[n_train : n_train + n_val],
        "test": ids[n_train + n_val :],
    }
    return Dataset(f"marker-s{spec.seed}", graphs, splits, BALANCED, GRAPH_CLS, spec.feature_dim)


def generate(spec: GenSpec) -> Dataset:
    if spec.family == MARKER:
        return gen_marker_dataset(spec)
    return gen_motif_dataset(spec)
