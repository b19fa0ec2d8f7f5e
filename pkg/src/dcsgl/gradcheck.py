"""Central finite-difference checks for every primitive and for the full L_a.

The error for one input tensor is ``max|a - n| / max(max|a|, max|n|, FLOOR)``
where ``a`` is the autodiff gradient and ``n`` the numerical one. The floor
keeps gradients that are exactly zero from dividing rounding noise by zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Tensor
from .graph import Graph
from .models import GNN, GnnConfig, GraphBatch, layer_param_names
from .oracle import CausalOracle, SelectionPlan

FLOOR = 1e-7


@dataclass
class GradcheckReport:
    entries: list = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max((e for _, e in self.entries), default=0.0)

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_error < tol

    def table(self) -> str:
        width = max((len(n) for n, _ in self.entries), default=4)
        lines = [f"{n:<{width}}  {e:.3e}" for n, e in self.entries]
        lines.append(f"{'max':<{width}}  {self.max_error:.3e}")
        return "\n".join(lines)


def numeric_grad(f: Callable[[], float], x: np.ndarray, eps: float) -> np.ndarray:
    """Central differences of ``f`` with respect to ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f()
        flat[i] = orig - eps
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return g


def relative_error(a: np.ndarray, n: np.ndarray) -> float:
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), FLOOR)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def check_function(build: Callable[..., Tensor], inputs: Sequence[np.ndarray], eps: float = 1e-5) -> float:
    """Max error over all inputs of the scalar ``build(*tensors)``."""
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = build(*leaves)
    ad.backward(out)
    worst = 0.0
    for leaf, arr in zip(leaves, arrays):

        def f():
            return build(*[Tensor(a) for a in arrays]).item()

        num = numeric_grad(f, arr, eps)
        got = leaf.grad if leaf.grad is not None else np.zeros_like(arr)
        worst = max(worst, relative_error(got, num))
    return worst


def _weighted(w: np.ndarray) -> Callable[[Tensor], Tensor]:
    """Scalarize a tensor output as sum(out * w) with fixed random weights."""
    return lambda out: ad.total(ad.mul(out, Tensor(w)))


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.uniform(margin, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def primitive_cases(rng: np.random.Generator) -> list:
    """(name, build, inputs) for every primitive."""
    r, c, k = int(rng.integers(2, 5)), int(rng.integers(2, 5)), int(rng.integers(2, 5))
    A, B = rng.normal(size=(r, c)), rng.normal(size=(r, c))
    W = rng.normal(size=(c, k))
    w_rc, w_rk = rng.normal(size=(r, c)), rng.normal(size=(r, k))
    S = sp.random(r, r, density=0.6, random_state=int(rng.integers(1 << 31)), format="csr")
    idx = rng.integers(0, r, size=r + 2)
    labels = rng.integers(0, c, size=r)
    p = rng.dirichlet(np.ones(c), size=r)
    p[0, 0] = 0.0
    p[0] /= p[0].sum()
    w_cat_r = rng.normal(size=(2 * r, c))
    w_cat_c = rng.normal(size=(r, 2 * c))
    w_gather = rng.normal(size=(len(idx), c))
    w_row = rng.normal(size=(1, c))
    return [
        ("matmul", lambda a, b: _weighted(w_rk)(ad.matmul(a, b)), [A, W]),
        ("add", lambda a, b: _weighted(w_rc)(ad.add(a, b)), [A, B]),
        ("add_bias", lambda a, b: _weighted(w_rc)(ad.add(a, b)), [A, rng.normal(size=(1, c))]),
        ("sub", lambda a, b: _weighted(w_rc)(ad.sub(a, b)), [A, B]),
        ("mul", lambda a, b: _weighted(w_rc)(ad.mul(a, b)), [A, B]),
        ("scale", lambda a: _weighted(w_rc)(ad.scale(a, -1.7)), [A]),
        ("relu", lambda a: _weighted(w_rc)(ad.relu(a)), [_away_from_zero(rng, (r, c))]),
        ("total", lambda a: ad.total(a), [A]),
        ("softmax_rows", lambda a: _weighted(w_rc)(ad.softmax_rows(a)), [A]),
        ("log_rows", lambda a: _weighted(w_rc)(ad.log_rows(a)), [rng.uniform(0.2, 2.0, size=(r, c))]),
        ("mean_rows", lambda a: _weighted(w_row)(ad.mean_rows(a)), [A]),
        ("gather_rows", lambda a: _weighted(w_gather)(ad.gather_rows(a, idx)), [A]),
        ("concat_rows", lambda a, b: _weighted(w_cat_r)(ad.concat_rows([a, b])), [A, B]),
        ("concat_cols", lambda a, b: _weighted(w_cat_c)(ad.concat_cols([a, b])), [A, B]),
        ("spmm", lambda a: _weighted(w_rc)(ad.spmm(S, a)), [A]),
        ("kl_categorical", lambda q: ad.kl_categorical(p, q), [rng.normal(size=(r, c))]),
        ("cross_entropy", lambda z: ad.cross_entropy(z, labels), [rng.normal(size=(r, c))]),
    ]


def five_node_graph(seed: int = 0) -> Graph:
    """Triangle base joined to a two-node motif by the edge (2, 3)."""
    rng = np.random.default_rng(seed)
    edges = np.array([[0, 1], [0, 2], [1, 2], [2, 3], [3, 4]], dtype=np.int64)
    roles = np.array([0, 0, 0, 1, 1], dtype=np.int64)
    junction = np.array([False, False, True, True, False])
    x = rng.random((5, 4), dtype=np.float32)
    return Graph(0, 5, edges, x, roles, junction, 0)


def check_alignment_loss(seed: int = 0, eps: float = 1e-5, m: int = 2, lam: float = 1.0) -> list:
    """Per-parameter errors of L_a = L_c + lam * L_d on a 5-node graph.

    The intervention plan and its substituted rows are computed once and
    frozen, so the loss is a fixed smooth function of the parameters.
    """
    from .training import causal_terms, combine_La

    g = five_node_graph(seed)
    config = GnnConfig(feature_dim=4, num_classes=2)
    model = GNN(config, seed=seed)
    batch = GraphBatch([g])
    oracle = CausalOracle(K=3, rng_seed=seed)
    plan = oracle.plan(g, 0)
    tapped0 = model.forward_layers(batch, upto=m)[m - 1].data
    frozen = SelectionPlan(plan.base, [r.frozen(tapped0) for r in plan.interventions])
    names = [k for l in range(1, m + 1) for k in layer_param_names(config, l)]
    names += ["causal.w1", "causal.b1", "causal.w2", "causal.b2"]

    def loss(leaves):
        t = causal_terms(model, batch, oracle, m, leaves=leaves, plans=[frozen])
        return combine_La(t.loss_c, t.loss_d, lam)

    leaves = model.leaves(names)
    ad.backward(loss(leaves))
    out = []
    for k in names:
        num = numeric_grad(lambda: loss(model.leaves(())).item(), model.params[k], eps)
        out.append((f"L_a:{k}", relative_error(leaves[k].grad, num)))
    return out


def run_gradcheck(seed: int = 0, eps: float = 1e-5, repeats: int = 3) -> GradcheckReport:
    """Every primitive over ``repeats`` random shapes, then the full L_a."""
    rng = np.random.default_rng(seed)
    worst: dict = {}
    for _ in range(repeats):
        for name, build, inputs in primitive_cases(rng):
            worst[name] = max(worst.get(name, 0.0), check_function(build, inputs, eps))
    report = GradcheckReport(sorted(worst.items()))
    report.entries.extend(check_alignment_loss(seed, eps))
    return report
