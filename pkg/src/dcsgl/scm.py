"""Finite-alphabet structural causal models and exact information checks.

The model has eight variables with edges

    (S~, S*) -> X,   (X, C) -> G,   G -> R,   G -> T~,   R -> T

where S~ is the diminutive causal structure, S* the remaining causal
factors, X the causal part of the graph, C the confounding part, G the
graph, R its representation, T~ the label read from G, and T the label
predicted from R. S~ and S* may be dependent; C is independent of both.
All quantities are computed by exact enumeration of the joint table.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

VARS = ("s", "sstar", "x", "c", "g", "r", "tt", "t")
AXIS = {v: i for i, v in enumerate(VARS)}
MAX_ALPHABET = 6
ROW_TOL = 1e-12

# (name, parents) in the order tables are stored; "s,sstar" is one joint factor
FACTORS = (
    ("s_sstar", ("s", "sstar")),
    ("x", ("s", "sstar")),
    ("c", ()),
    ("g", ("x", "c")),
    ("r", ("g",)),
    ("tt", ("g",)),
    ("t", ("r",)),
)


class SCMError(ValueError):
    pass


@dataclass(frozen=True)
class DiscreteSCM:
    """Factor tables; ``tables[v]`` has shape parents + (|v|,), rows summing to 1.

    ``tables["s_sstar"]`` is the joint P(S~, S*) of shape (|S~|, |S*|).
    """

    tables: dict

    def __post_init__(self):
        t = self.tables
        missing = {name for name, _ in FACTORS} - set(t)
        if missing:
            raise SCMError(f"missing tables: {sorted(missing)}")
        sizes = self.alphabets
        for v, k in sizes.items():
            if not 1 <= k <= MAX_ALPHABET:
                raise SCMError(f"alphabet of {v} is {k}; must be in [1, {MAX_ALPHABET}]")
        for name, parents in FACTORS:
            arr = np.asarray(t[name], dtype=np.float64)
            if name == "s_sstar":
                expect = (sizes["s"], sizes["sstar"])
                sums = np.array([arr.sum()])
            else:
                expect = tuple(sizes[p] for p in parents) + (sizes[name],)
                sums = arr.sum(axis=-1)
            if arr.shape != expect:
                raise SCMError(f"table {name} has shape {arr.shape}, expected {expect}")
            if np.any(arr < 0):
                raise SCMError(f"table {name} has negative entries")
            if np.any(np.abs(sums - 1.0) > ROW_TOL):
                raise SCMError(f"table {name} is not normalized (max error {np.abs(sums - 1).max():.3g})")

    @property
    def alphabets(self) -> dict:
        t = self.tables
        s, sstar = np.shape(t["s_sstar"])
        return {
            "s": s,
            "sstar": sstar,
            "x": np.shape(t["x"])[-1],
            "c": np.shape(t["c"])[-1],
            "g": np.shape(t["g"])[-1],
            "r": np.shape(t["r"])[-1],
            "tt": np.shape(t["tt"])[-1],
            "t": np.shape(t["t"])[-1],
        }

    def with_table(self, name: str, table) -> "DiscreteSCM":
        tables = dict(self.tables)
        tables[name] = np.asarray(table, dtype=np.float64)
        return DiscreteSCM(tables)


@dataclass(frozen=True)
class JointTable:
    """Dense joint distribution with one axis per variable in ``VARS`` order."""

    p: np.ndarray

    def __post_init__(self):
        if abs(self.p.sum() - 1.0) > 1e-10:
            raise SCMError(f"joint sums to {self.p.sum()!r}")

    def marginal(self, names: Sequence[str]) -> np.ndarray:
        """Marginal over ``names``, axes in the order given."""
        keep = [AXIS[n] for n in names]
        drop = tuple(i for i in range(len(VARS)) if i not in keep)
        m = self.p.sum(axis=drop)
        # remaining axes are in VARS order; permute to the requested order
        order = sorted(keep)
        return np.transpose(m, [order.index(k) for k in keep])


def joint_distribution(scm: DiscreteSCM) -> JointTable:
    t = scm.tables
    p = np.einsum(
        "ab,abx,c,xcg,gr,gu,rt->abxcgrut",
        t["s_sstar"], t["x"], t["c"], t["g"], t["r"], t["tt"], t["t"],
        optimize=True,
    )
    return JointTable(p)


def _flat(m: np.ndarray, na: int) -> np.ndarray:
    """Reshape a marginal with ``na`` leading A axes into a 2-D (A, B) table."""
    a = int(np.prod(m.shape[:na])) if na else 1
    return m.reshape(a, -1)


def entropy(joint: JointTable, names: Sequence[str]) -> float:
    p = joint.marginal(names).ravel()
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def mi_from_table(pab: np.ndarray) -> float:
    """I(A;B) in nats from a 2-D joint table, with 0 log 0 = 0."""
    pa = pab.sum(axis=1, keepdims=True)
    pb = pab.sum(axis=0, keepdims=True)
    live = pab > 0
    ratio = np.where(live, pab, 1.0) / np.where(live, pa * pb, 1.0)
    return float((pab[live] * np.log(ratio[live])).sum())


def _check_sets(*sets) -> list:
    out = []
    for s in sets:
        s = (s,) if isinstance(s, str) else tuple(s)
        for v in s:
            if v not in AXIS:
                raise SCMError(f"unknown variable {v!r}")
        out.append(s)
    seen = [v for s in out for v in s]
    if len(seen) != len(set(seen)):
        raise SCMError("variable sets overlap")
    return out


def mutual_info(joint: JointTable, a, b) -> float:
    """I(A;B) in nats for disjoint variable sets (names or tuples of names)."""
    a, b = _check_sets(a, b)
    return mi_from_table(_flat(joint.marginal(a + b), len(a)))


def conditional_mutual_info(joint: JointTable, a, b, given) -> float:
    """I(A;B | Z) = sum_z p(z) I(A;B | Z=z)."""
    a, b, z = _check_sets(a, b, given)
    if not z:
        return mutual_info(joint, a, b)
    m = joint.marginal(z + a + b)
    nz = int(np.prod(m.shape[: len(z)]))
    m = m.reshape(nz, int(np.prod(m.shape[len(z) : len(z) + len(a)])), -1)
    total = 0.0
    for slab in m:
        pz = slab.sum()
        if pz > 0:
            total += pz * mi_from_table(slab / pz)
    return total


# ---------------------------------------------------------------- theorem 1


@dataclass
class Theorem1Report:
    values: dict
    slacks: dict
    normalized: Optional[dict]
    b_equality_gap: float

    @property
    def min_slack(self) -> float:
        return min(self.slacks.values())

    def ok(self, tol: float = 1e-9) -> bool:
        return self.min_slack >= -tol


def check_theorem1(scm: DiscreteSCM, joint: Optional[JointTable] = None) -> Theorem1Report:
    """Slacks of the chain I(R;C) <= I(G;C) <= I(X,C;G) - I(X;G) <= I(X,C;G) - I(S~;R).

    Step (b) is checked in its one-sided form: with X independent of C,
    I(X,C;G) - I(X;G) = I(C;G|X) >= I(C;G). The equality used as a shortcut
    in the usual derivation does not hold in general (G = X xor C is a
    counterexample); its gap is returned as ``b_equality_gap``.
    """
    j = joint or joint_distribution(scm)
    v = {
        "I(R;C)": mutual_info(j, "r", "c"),
        "I(G;C)": mutual_info(j, "g", "c"),
        "I(X,C;G)": mutual_info(j, ("x", "c"), "g"),
        "I(X;G)": mutual_info(j, "x", "g"),
        "I(S;R)": mutual_info(j, "s", "r"),
        "I(S;G)": mutual_info(j, "s", "g"),
    }
    upper = v["I(X,C;G)"]
    slacks = {
        "a": v["I(G;C)"] - v["I(R;C)"],
        "b": upper - v["I(X;G)"] - v["I(G;C)"],
        "c1": v["I(S;G)"] - v["I(S;R)"],
        "c2": v["I(X;G)"] - v["I(S;G)"],
        "d": upper - v["I(S;R)"] - v["I(R;C)"],
    }
    normalized = None
    if upper > 0:
        normalized = {
            "I(R;C)": v["I(R;C)"] / upper,
            "1-I(S;R)": 1.0 - v["I(S;R)"] / upper,
            "slack": slacks["d"] / upper,
        }
    return Theorem1Report(v, slacks, normalized, slacks["b"])


# ---------------------------------------------------------------- theorem 2


@dataclass
class Theorem2Report:
    premise_gap: float
    premise_met: bool
    q_matches_p: bool = False
    equality_gap: Optional[float] = None
    bound: Optional[float] = None
    alternatives: list = field(default_factory=list)
    status: str = "ok"

    @property
    def max_excess(self) -> Optional[float]:
        if not self.alternatives:
            return None
        return max(a - self.bound for a in self.alternatives)

    def ok(self, tol: float = 1e-10) -> bool:
        if not self.premise_met:
            return False
        excess = self.max_excess
        return self.equality_gap < tol and (excess is None or excess <= tol)


def check_theorem2(
    scm: DiscreteSCM,
    rng: Optional[np.random.Generator] = None,
    n_alternatives: int = 100,
    premise_tol: float = 1e-9,
) -> Theorem2Report:
    """Equality I(S~;T) = I(S~;T~) when q(t|s~) = p(t|s~), and maximality over q'.

    ``q`` is induced by the SCM's own P(T|R); alternatives replace that
    table with random conditionals over the same alphabet.
    """
    j = joint_distribution(scm)
    i_g = mutual_info(j, "s", "g")
    i_tt = mutual_info(j, "s", "tt")
    gap = abs(i_tt - i_g)
    if gap > premise_tol:
        return Theorem2Report(gap, False, status="premise unmet")
    p_st = j.marginal(("s", "t"))
    p_stt = j.marginal(("s", "tt"))
    ps = p_st.sum(axis=1, keepdims=True)
    live = ps[:, 0] > 0
    q_matches = p_st.shape == p_stt.shape and bool(
        np.all(np.abs(p_st[live] / ps[live] - p_stt[live] / ps[live]) <= 1e-10)
    )
    report = Theorem2Report(gap, True, q_matches)
    report.bound = i_tt
    report.equality_gap = abs(mi_from_table(p_st) - i_tt)
    if not q_matches:
        report.status = "q != p"
    p_sr = j.marginal(("s", "r"))
    rng = rng if rng is not None else np.random.default_rng(0)
    k_r, k_t = scm.alphabets["r"], scm.alphabets["t"]
    for _ in range(n_alternatives):
        q_alt = random_conditional(rng, (k_r,), k_t)
        report.alternatives.append(mi_from_table(p_sr @ q_alt))
    return report


# ----------------------------------------------------------- random models


def random_conditional(rng: np.random.Generator, parent_shape: tuple, k: int) -> np.ndarray:
    """Rows drawn from Dirichlet(alpha); some rows are made deterministic."""
    alpha = rng.choice([0.2, 1.0, 5.0])
    rows = rng.dirichlet(np.full(k, alpha), size=parent_shape if parent_shape else None)
    rows = np.asarray(rows, dtype=np.float64).reshape(parent_shape + (k,))
    flat = rows.reshape(-1, k)
    det = rng.random(len(flat)) < 0.2
    if det.any():
        flat[det] = np.eye(k)[rng.integers(0, k, size=det.sum())]
    return _renormalize(flat.reshape(parent_shape + (k,)))


def _renormalize(a: np.ndarray) -> np.ndarray:
    return a / a.sum(axis=-1, keepdims=True)


def _alphabets(rng, max_alphabet: int, names=VARS) -> dict:
    return {v: int(rng.integers(1, max_alphabet + 1)) for v in names}


def random_scm(rng: np.random.Generator, max_alphabet: int = 4) -> DiscreteSCM:
    """SCM with random alphabets in [1, max_alphabet] and random tables."""
    k = _alphabets(rng, max_alphabet)
    joint_ss = random_conditional(rng, (), k["s"] * k["sstar"]).reshape(k["s"], k["sstar"])
    tables = {
        "s_sstar": joint_ss / joint_ss.sum(),
        "x": random_conditional(rng, (k["s"], k["sstar"]), k["x"]),
        "c": random_conditional(rng, (), k["c"]),
        "g": random_conditional(rng, (k["x"], k["c"]), k["g"]),
        "r": random_conditional(rng, (k["g"],), k["r"]),
        "tt": random_conditional(rng, (k["g"],), k["tt"]),
        "t": random_conditional(rng, (k["r"],), k["t"]),
    }
    return DiscreteSCM(tables)


def group_by_posterior(p_sg: np.ndarray, decimals: int = 12) -> np.ndarray:
    """Label each g with the id of its posterior P(S~|g); unreachable g join group 0.

    Mapping g to its group is a sufficient statistic of G for S~.
    """
    pg = p_sg.sum(axis=0)
    groups = np.zeros(p_sg.shape[1], dtype=np.int64)
    seen: dict = {}
    for g in range(p_sg.shape[1]):
        if pg[g] <= 0:
            continue
        key = tuple(np.round(p_sg[:, g] / pg[g], decimals))
        groups[g] = seen.setdefault(key, len(seen))
    return groups


def premise_scm(rng: np.random.Generator, max_alphabet: int = 4) -> DiscreteSCM:
    """Random SCM meeting I(T~;S~) = I(G;S~) with P(T|R) inducing q = p.

    Half the time G is the pair (X, C), so several g share a posterior and
    the grouping is a genuine compression; otherwise G is a random function
    of (X, C). R is an injective relabelling of G, and P(T|R) copies P(T~|G).
    """
    k = _alphabets(rng, max_alphabet, ("s", "sstar", "x", "c"))
    k["s"] = max(k["s"], 2)
    if rng.random() < 0.5 and k["x"] * k["c"] <= MAX_ALPHABET:
        kg = k["x"] * k["c"]
        g_table = np.zeros((k["x"], k["c"], kg))
        for x in range(k["x"]):
            for c in range(k["c"]):
                g_table[x, c, x * k["c"] + c] = 1.0
    else:
        kg = int(rng.integers(1, max_alphabet + 1))
        g_table = random_conditional(rng, (k["x"], k["c"]), kg)
    joint_ss = random_conditional(rng, (), k["s"] * k["sstar"]).reshape(k["s"], k["sstar"])
    tables = {
        "s_sstar": joint_ss / joint_ss.sum(),
        "x": random_conditional(rng, (k["s"], k["sstar"]), k["x"]),
        "c": random_conditional(rng, (), k["c"]),
        "g": g_table,
    }
    # P(S~, G) from the first four factors
    p_sg = np.einsum("ab,abx,c,xcg->ag", tables["s_sstar"], tables["x"], tables["c"], g_table)
    groups = group_by_posterior(p_sg)
    k_tt = int(groups.max()) + 1
    tt = np.eye(k_tt)[groups]
    perm = rng.permutation(kg)
    r = np.eye(kg)[perm]
    tables.update({"r": r, "tt": tt, "t": tt[np.argsort(perm)]})
    return DiscreteSCM(tables)


def fuzz_theorem1(seeds: Sequence[int], max_alphabet: int = 4) -> list:
    return [check_theorem1(random_scm(np.random.default_rng(s), max_alphabet)) for s in seeds]


def fuzz_theorem2(seeds: Sequence[int], max_alphabet: int = 4, n_alternatives: int = 100) -> list:
    out = []
    for s in seeds:
        rng = np.random.default_rng(s)
        out.append(check_theorem2(premise_scm(rng, max_alphabet), rng, n_alternatives))
    return out
