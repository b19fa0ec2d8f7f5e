"""Message-passing backbones, the classification head and the causal head."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Tensor
from .graph import GRAPH_CLS, Graph

LOCAL_EXTREMUM = "local_extremum"
MEAN_GCN = "mean_gcn"
BACKBONES = (LOCAL_EXTREMUM, MEAN_GCN)

NUM_COUNT_BUCKETS = 4


@dataclass(frozen=True)
class GnnConfig:
    feature_dim: int
    num_classes: int
    backbone: str = LOCAL_EXTREMUM
    num_layers: int = 4
    hidden_dim: int = 32
    head_hidden: int = 32
    task: str = GRAPH_CLS

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone!r}; expected one of {BACKBONES}")
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if min(self.hidden_dim, self.head_hidden, self.feature_dim, self.num_classes) < 1:
            raise ValueError("dimensions must be positive")


@dataclass
class ModelOutput:
    layer_outputs: list
    graph_embedding: Optional[Tensor] = None
    graph_logits: Optional[Tensor] = None
    node_logits: Optional[Tensor] = None

    @property
    def logits(self) -> Tensor:
        return self.node_logits if self.node_logits is not None else self.graph_logits


def _local_csr(g: Graph):
    """Symmetric neighbour structure of one graph (cached on the graph)."""
    cached = g.__dict__.get("_csr")
    if cached is None:
        e = g.edges
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        indptr = np.zeros(g.num_nodes + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        cached = (np.cumsum(indptr), cols)
        object.__setattr__(g, "_csr", cached)
    return cached


class GraphBatch:
    """Disjoint union of graphs with the constant operators message passing needs."""

    def __init__(self, graphs: Sequence[Graph]):
        self.graphs = list(graphs)
        sizes = np.array([g.num_nodes for g in self.graphs], dtype=np.int64)
        self.sizes = sizes
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        n = int(self.offsets[-1])
        self.num_nodes = n
        d = self.graphs[0].feature_dim if self.graphs else 0
        self.x = np.vstack([g.x for g in self.graphs]).astype(np.float64) if n else np.zeros((0, d))
        ptrs, idxs, nnz = [np.zeros(1, dtype=np.int64)], [], 0
        for g, off in zip(self.graphs, self.offsets[:-1]):
            indptr, indices = _local_csr(g)
            ptrs.append(indptr[1:] + nnz)
            idxs.append(indices + off)
            nnz += len(indices)
        indptr = np.concatenate(ptrs)
        indices = np.concatenate(idxs) if idxs else np.zeros(0, dtype=np.int64)
        self.adj = sp.csr_matrix((np.ones(nnz), indices, indptr), shape=(n, n))
        self.deg = np.diff(indptr).astype(np.float64)
        ar = np.arange(n)
        self.deg_diag = sp.csr_matrix((self.deg, ar, np.arange(n + 1)), shape=(n, n))
        owner = np.repeat(np.arange(len(sizes)), sizes)
        self.owner = owner
        self.pool = sp.csr_matrix((1.0 / sizes[owner], (owner, ar)), shape=(len(sizes), n))
        self.pool_t = self.pool.T.tocsr()
        self.y = np.array([g.y for g in self.graphs], dtype=np.int64)
        self._mean_op = None

    @property
    def mean_op(self):
        """Row-normalised adjacency with self loops (mean over N(i) and i)."""
        if self._mean_op is None:
            with_self = self.adj + sp.identity(self.num_nodes, format="csr")
            inv = 1.0 / (self.deg + 1.0)
            m = (sp.diags(inv) @ with_self).tocsr()
            self._mean_op = (m, m.T.tocsr())
        return self._mean_op[0]

    @property
    def mean_op_t(self):
        self.mean_op
        return self._mean_op[1]

    def __len__(self):
        return len(self.graphs)

    def node_labels(self) -> np.ndarray:
        if any(g.y_node is None for g in self.graphs):
            raise ValueError("node labels missing")
        return np.concatenate([g.y_node for g in self.graphs]).astype(np.int64)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def init_params(config: GnnConfig, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    params = {}
    d_in = config.feature_dim
    h = config.hidden_dim
    for l in range(1, config.num_layers + 1):
        if config.backbone == LOCAL_EXTREMUM:
            params[f"layer{l}.w_self"] = _glorot(rng, d_in, h)
            params[f"layer{l}.w_center"] = _glorot(rng, d_in, h)
            params[f"layer{l}.w_neigh"] = _glorot(rng, d_in, h)
        else:
            params[f"layer{l}.weight"] = _glorot(rng, d_in, h)
        params[f"layer{l}.bias"] = np.zeros((1, h))
        d_in = h
    params["cls.weight"] = _glorot(rng, h, config.num_classes)
    params["cls.bias"] = np.zeros((1, config.num_classes))
    params["causal.w1"] = _glorot(rng, h, config.head_hidden)
    params["causal.b1"] = np.zeros((1, config.head_hidden))
    params["causal.w2"] = _glorot(rng, config.head_hidden, 2)
    params["causal.b2"] = np.zeros((1, 2))
    # auxiliary heads used only by the DCS-only ablations
    params["aux_junction.weight"] = _glorot(rng, h, 2)
    params["aux_junction.bias"] = np.zeros((1, 2))
    params["aux_count.weight"] = _glorot(rng, h, NUM_COUNT_BUCKETS)
    params["aux_count.bias"] = np.zeros((1, NUM_COUNT_BUCKETS))
    return params


def layer_param_names(config: GnnConfig, layer: int) -> list:
    if config.backbone == LOCAL_EXTREMUM:
        names = ("w_self", "w_center", "w_neigh", "bias")
    else:
        names = ("weight", "bias")
    return [f"layer{layer}.{n}" for n in names]


def layer_forward(backbone: str, p: dict, layer: int, batch: GraphBatch, h: Tensor) -> Tensor:
    """One message-passing layer.

    local extremum: relu(h_i W_self + sum_{j in N(i)} (h_i W_center - h_j W_neigh) + b)
    mean gcn:       relu(mean_{j in N(i) + i} h_j W + b)
    """
    if h.rows != batch.num_nodes:
        raise ad.ShapeError(f"layer_forward: {h.rows} feature rows for {batch.num_nodes} nodes")
    pre = f"layer{layer}."
    if backbone == LOCAL_EXTREMUM:
        # [h | deg*h | A h] @ [W_self; W_center; -W_neigh] in one product
        neigh = ad.spmm(batch.adj, h, batch.adj)
        center = ad.spmm(batch.deg_diag, h, batch.deg_diag)
        w = ad.concat_rows([p[pre + "w_self"], p[pre + "w_center"], ad.scale(p[pre + "w_neigh"], -1.0)])
        z = ad.matmul(ad.concat_cols([h, center, neigh]), w)
    else:
        z = ad.matmul(ad.spmm(batch.mean_op, h, batch.mean_op_t), p[pre + "weight"])
    return ad.relu(ad.add(z, p[pre + "bias"]))


def linear(p: dict, prefix: str, h: Tensor) -> Tensor:
    return ad.add(ad.matmul(h, p[prefix + ".weight"]), p[prefix + ".bias"])


class GNN:
    """Parameters plus the forward passes over a :class:`GraphBatch`.

    Parameters live as float64 arrays in ``params``; every forward wraps them
    in fresh leaf tensors (``leaves``) so a gradient step only touches the
    arrays the caller asks gradients for.
    """

    def __init__(self, config: GnnConfig, params: Optional[dict] = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)

    def copy(self) -> "GNN":
        return GNN(self.config, {k: v.copy() for k, v in self.params.items()})

    def leaves(self, trainable: Optional[Sequence[str]] = None) -> dict:
        trainable = set(self.params) if trainable is None else set(trainable)
        return {k: Tensor(v, requires_grad=k in trainable, name=k) for k, v in self.params.items()}

    def forward_layers(self, batch: GraphBatch, upto: Optional[int] = None, leaves=None) -> list:
        p = leaves if leaves is not None else self.leaves(())
        upto = self.config.num_layers if upto is None else upto
        h = Tensor(batch.x)
        outs = []
        for l in range(1, upto + 1):
            h = layer_forward(self.config.backbone, p, l, batch, h)
            outs.append(h)
        return outs

    def forward_full(self, batch: GraphBatch, leaves=None) -> ModelOutput:
        p = leaves if leaves is not None else self.leaves(())
        outs = self.forward_layers(batch, leaves=p)
        last = outs[-1]
        if self.config.task == GRAPH_CLS:
            emb = ad.spmm(batch.pool, last, batch.pool_t)
            return ModelOutput(outs, emb, linear(p, "cls", emb))
        emb = ad.spmm(batch.pool, last, batch.pool_t)
        return ModelOutput(outs, emb, None, linear(p, "cls", last))

    def causal_head(self, rows: Tensor, pool=None, pool_t=None, leaves=None) -> Tensor:
        """POOL then a two-layer MLP, giving logits over {present, absent}.

        ``pool`` is an optional constant (groups x rows) averaging operator;
        without it all rows form a single group.
        """
        p = leaves if leaves is not None else self.leaves(())
        if rows.rows == 0:
            raise ValueError("empty pool")
        pooled = ad.mean_rows(rows) if pool is None else ad.spmm(pool, rows, pool_t)
        hidden = ad.relu(ad.add(ad.matmul(pooled, p["causal.w1"]), p["causal.b1"]))
        return ad.add(ad.matmul(hidden, p["causal.w2"]), p["causal.b2"])

    def predict(self, graphs: Sequence[Graph], batch_size: int = 256) -> np.ndarray:
        """Argmax predictions (graph- or node-level); ties go to the lowest index."""
        preds = []
        for i in range(0, len(graphs), batch_size):
            out = self.forward_full(GraphBatch(graphs[i : i + batch_size]))
            preds.append(np.argmax(out.logits.data, axis=1))
        return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)

    # ---------------------------------------------------------- checkpoints

    def save(self, path, extra: Optional[dict] = None) -> None:
        doc = {
            "config": asdict(self.config),
            "extra": extra or {},
            "params": {
                k: {"shape": list(v.shape), "data": [float(x) for x in v.ravel()]}
                for k, v in sorted(self.params.items())
            },
        }
        Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "GNN":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        config = GnnConfig(**doc["config"])
        params = {
            k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"])
            for k, v in doc["params"].items()
        }
        return cls(config, params)
