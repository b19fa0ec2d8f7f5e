"""Hand-built causal oracle, node selectors and interchange interventions.

The oracle predicts a two-way distribution over {present, absent} for the
structural factor of a graph: motif junctions (``junction`` domain) or a
contrast marker (``marker`` domain). A selection recipe says which rows of
the tapped layer-m node features feed the causal head, which of those rows
are overwritten by rows taken from other nodes, and what the oracle outputs
for the result.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Tensor
from .graph import Graph

log = logging.getLogger(__name__)

JUNCTION = "junction"
MARKER = "marker"
INTERCHANGE = "interchange"
RANDOM_NEGATIVE = "random_negative"

PRESENT = np.array([1.0, 0.0])
ABSENT = np.array([0.0, 1.0])

MARKER_FRACTIONS_K3 = (1.0, 0.66, 0.33)


def presence_target(perturbed: int, total: int) -> np.ndarray:
    """[1 - f, f] with f the exact perturbed fraction of the selection."""
    f = perturbed / total
    return np.array([1.0 - f, f])


@dataclass(frozen=True)
class Recipe:
    """Rows to gather from the tapped features plus substitutions.

    ``substitute_pos`` indexes into ``indices``; the row at that position is
    replaced by the (gradient-free) tapped row of node ``substitute_src``.
    ``substitute_values`` pins those rows to fixed values instead.
    """

    indices: np.ndarray
    target: np.ndarray
    substitute_pos: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    substitute_src: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    substitute_values: Optional[np.ndarray] = None
    note: str = ""

    @property
    def perturbed_fraction(self) -> float:
        return float(self.target[1])

    def frozen(self, tapped_values: np.ndarray) -> "Recipe":
        vals = np.asarray(tapped_values, dtype=np.float64)[self.substitute_src]
        return Recipe(
            self.indices, self.target, self.substitute_pos, self.substitute_src, vals, self.note
        )

    def constants(self, tapped_values: np.ndarray) -> np.ndarray:
        if self.substitute_values is not None:
            return self.substitute_values
        return np.asarray(tapped_values)[self.substitute_src]


@dataclass
class SelectionPlan:
    base: Optional[Recipe]
    interventions: list

    @property
    def skipped(self) -> bool:
        return self.base is None


class CausalOracle:
    """The high-level model, its selector and the K intervened variants.

    ``oracle_base`` is the unintervened model; ``oracle_interventions``
    produces K recipes drawn one after another from a random stream keyed
    by ``(seed, graph id, round)`` where ``round`` is typically the epoch.
    """

    def __init__(
        self,
        domain: str = JUNCTION,
        K: int = 3,
        intervention_mode: str = INTERCHANGE,
        rng_seed: int = 0,
        rho: float = 0.5,
        marker_fractions: Optional[Sequence[float]] = None,
    ):
        if domain not in (JUNCTION, MARKER):
            raise ValueError(f"unknown oracle domain {domain!r}")
        if intervention_mode not in (INTERCHANGE, RANDOM_NEGATIVE):
            raise ValueError(f"unknown intervention mode {intervention_mode!r}")
        if K < 0:
            raise ValueError("K must be >= 0")
        self.domain = domain
        self.K = K
        self.intervention_mode = intervention_mode
        self.rng_seed = rng_seed
        self.rho = rho
        if marker_fractions is None:
            marker_fractions = (
                MARKER_FRACTIONS_K3 if K == 3 else tuple((K - i) / K for i in range(K))
            )
        self.marker_fractions = tuple(marker_fractions)
        self.skipped_ids: set = set()

    @property
    def skipped(self) -> int:
        """Number of distinct graphs skipped so far."""
        return len(self.skipped_ids)

    def rng(self, graph_id: int, round_: int) -> np.random.Generator:
        return np.random.default_rng([self.rng_seed, graph_id, round_])

    def oracle_base(self, g: Graph) -> Optional[tuple]:
        """``(selected node indices, target)`` or None when the graph is skipped."""
        if self.domain == JUNCTION:
            idx = g.junction_nodes()
            if len(idx) == 0:
                self.skipped_ids.add(g.id)
                log.debug("graph %d has no junction nodes; skipped", g.id)
                return None
            return idx, PRESENT.copy()
        if g.marker is None or len(g.marker) == 0:
            self.skipped_ids.add(g.id)
            return None
        # the whole statement containing the marker is the selection
        return np.arange(g.num_nodes), PRESENT.copy()

    def oracle_interventions(self, g: Graph, round_: int = 0) -> list:
        base = self.oracle_base(g)
        if base is None:
            return []
        sel = base[0]
        out = []
        rng = self.rng(g.id, round_) if self.K else None
        for gamma in range(self.K):
            if self.intervention_mode == RANDOM_NEGATIVE:
                r = self._random_negative(g, sel, rng)
            elif self.domain == JUNCTION:
                r = self._interchange(g, sel, rng)
            else:
                r = self._delete_suffix(g, gamma)
            if r is not None:
                out.append(r)
        return out

    def plan(self, g: Graph, round_: int = 0) -> SelectionPlan:
        base = self.oracle_base(g)
        if base is None:
            return SelectionPlan(None, [])
        return SelectionPlan(Recipe(base[0], base[1], note="base"), self.oracle_interventions(g, round_))

    def _interchange(self, g: Graph, sel: np.ndarray, rng) -> Optional[Recipe]:
        pool = g.__dict__.get("_unselected")
        if pool is None:
            keep = np.ones(g.num_nodes, dtype=bool)
            keep[sel] = False
            pool = np.flatnonzero(keep)
            object.__setattr__(g, "_unselected", pool)
        if len(pool) == 0:
            return None
        n = len(sel)
        count = math.ceil(self.rho * n - 1e-12)
        u = rng.random(n + count)
        # positions: a uniform random subset of size count; sources: with replacement
        pos = np.sort(np.argsort(u[:n], kind="stable")[:count])
        src = pool[(u[n:] * len(pool)).astype(np.int64)]
        return Recipe(sel, presence_target(count, len(sel)), pos, src, note="interchange")

    def _random_negative(self, g: Graph, sel: np.ndarray, rng) -> Recipe:
        src = rng.integers(0, g.num_nodes, size=len(sel))
        return Recipe(sel, ABSENT.copy(), np.arange(len(sel)), src, note="random_negative")

    def _delete_suffix(self, g: Graph, gamma: int) -> Optional[Recipe]:
        span = g.marker
        frac = self.marker_fractions[gamma % len(self.marker_fractions)]
        count = min(len(span), math.ceil(frac * len(span) - 1e-9))
        deleted = set(span[len(span) - count :].tolist())
        keep = np.array([i for i in range(g.num_nodes) if i not in deleted], dtype=np.int64)
        if len(keep) == 0:
            return None
        return Recipe(keep, presence_target(count, len(span)), note=f"delete {count}/{len(span)}")


def apply_selection(tapped: Tensor, recipe: Recipe) -> Tensor:
    """Rows for the causal head: gathered rows with substitutions applied.

    Substituted rows are constants, so no gradient reaches the rows they
    replace or the rows they were copied from.
    """
    rows = ad.gather_rows(tapped, recipe.indices)
    if len(recipe.substitute_pos) == 0:
        return rows
    mask = np.ones(rows.shape)
    mask[recipe.substitute_pos] = 0.0
    const = np.zeros(rows.shape)
    const[recipe.substitute_pos] = recipe.constants(tapped.data)
    return ad.add(ad.mul(rows, Tensor(mask)), Tensor(const))


def apply_selections(tapped: Tensor, items: Sequence[tuple]) -> tuple:
    """Batched :func:`apply_selection`.

    ``items`` holds ``(recipe, node_offset)`` pairs for graphs laid out in
    ``tapped`` by a batch. Returns the stacked rows, the (groups x rows)
    averaging operator with its transpose, and the stacked targets.
    """
    idx, sub_rows, src_rows, pinned, group, sizes, targets = [], [], [], [], [], [], []
    start = 0
    for k, (recipe, offset) in enumerate(items):
        n = len(recipe.indices)
        if n == 0:
            raise ValueError("empty pool")
        idx.append(recipe.indices + offset)
        if len(recipe.substitute_pos):
            sub_rows.append(recipe.substitute_pos + start)
            if recipe.substitute_values is not None:
                pinned.append((len(src_rows), recipe.substitute_values))
                src_rows.append(np.zeros(len(recipe.substitute_pos), dtype=np.int64))
            else:
                src_rows.append(recipe.substitute_src + offset)
        group.append(np.full(n, k))
        sizes.append(n)
        targets.append(recipe.target)
        start += n
    idx = np.concatenate(idx)
    rows = ad.gather_rows(tapped, idx)
    if sub_rows:
        where = np.concatenate(sub_rows)
        parts = [tapped.data[s] for s in src_rows]
        for j, vals in pinned:
            parts[j] = vals
        mask = np.ones(rows.shape)
        mask[where] = 0.0
        const = np.zeros(rows.shape)
        const[where] = np.vstack(parts)
        rows = ad.add(ad.mul(rows, Tensor(mask)), Tensor(const))
    group = np.concatenate(group)
    sizes = np.asarray(sizes)
    weights = 1.0 / sizes[group].astype(np.float64)
    cols = np.arange(start)
    indptr = np.concatenate([[0], np.cumsum(sizes)])
    pool = sp.csr_matrix((weights, cols, indptr), shape=(len(items), start))
    pool_t = sp.csr_matrix((weights, group, np.arange(start + 1)), shape=(start, len(items)))
    return rows, pool, pool_t, np.vstack(targets)
