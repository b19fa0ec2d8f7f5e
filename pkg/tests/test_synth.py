import numpy as np
import pytest
from hypothesis import given, strategies as st

from dcsgl.graph import encode_jsonl, validate_graph
from dcsgl.synth import (
    BALANCED,
    MARKER,
    MOTIF_VARIANT,
    SPURIOUS_MOTIF,
    GenSpec,
    annotate_junctions,
    gen_marker_dataset,
    gen_mixed_node_dataset,
    gen_motif_dataset,
    generate,
)

from conftest import make_graph


def base_class(g, family):
    """Identify the base shape from the role-0 subgraph alone."""
    base = np.flatnonzero(g.roles == 0)
    keep = set(base.tolist())
    edges = [(u, v) for u, v in g.edges if u in keep and v in keep]
    adj = {u: set() for u in keep}
    for u, v in edges:
        adj[u].add(v)
        adj[v].add(u)
    triangles = sum(len(adj[u] & adj[v]) for u, v in edges) // 3
    tree_like = len(edges) == len(base) - 1
    if family == MOTIF_VARIANT:
        return 1 if triangles else (2 if tree_like else 0)  # barbell, star, grid
    return 2 if triangles else (0 if tree_like else 1)  # wheel, tree, ladder


def brute_junctions(g):
    mask = np.zeros(g.num_nodes, bool)
    for u in range(g.num_nodes):
        for v in range(g.num_nodes):
            linked = any((a == u and b == v) or (a == v and b == u) for a, b in g.edges)
            if linked and g.roles[u] != g.roles[v]:
                mask[u] = True
    return mask


def test_structural_oracle_agrees_with_generator():
    for family in (MOTIF_VARIANT, SPURIOUS_MOTIF):
        ds, bases = gen_motif_dataset(GenSpec(family=family, count=300, seed=2), return_base_classes=True)
        assert [base_class(g, family) for g in ds.graphs] == bases


@pytest.mark.parametrize("bias", [1 / 3, 0.5, 0.7, 0.9])
def test_bias_calibration_at_10k(bias):
    spec = GenSpec(count=10_000, bias=bias, seed=5, split_fractions=(1.0, 0.0, 0.0))
    ds = gen_motif_dataset(spec)
    paired = np.mean([base_class(g, MOTIF_VARIANT) == g.y for g in ds.graphs])
    assert abs(paired - bias) <= 0.02


def test_val_and_test_are_balanced():
    ds, bases = gen_motif_dataset(GenSpec(count=3000, bias=0.9, seed=1), return_base_classes=True)
    for split in ("val", "test"):
        idx = ds.splits[split]
        paired = np.mean([bases[i] == ds.graphs[i].y for i in idx])
        assert abs(paired - 1 / 3) < 0.08


@pytest.mark.parametrize("family", [SPURIOUS_MOTIF, MOTIF_VARIANT])
def test_generated_graphs_are_valid_with_one_attachment(family):
    ds = generate(GenSpec(family=family, count=200, bias=0.7, seed=4))
    for g in ds.graphs:
        assert validate_graph(g) == []
        boundary = [(u, v) for u, v in g.edges if g.roles[u] != g.roles[v]]
        assert len(boundary) == 1
        assert g.junction.sum() == 2
        motif = set(np.flatnonzero(g.roles == 1).tolist())
        # motif subgraph is connected
        seen, stack = set(), [min(motif)]
        while stack:
            u = stack.pop()
            if u in seen:
                continue
            seen.add(u)
            stack += [b if a == u else a for a, b in g.edges if u in (a, b) and {a, b} <= motif]
        assert seen == motif


def test_annotate_junctions_against_brute_force():
    ds = generate(GenSpec(count=300, seed=8))
    for g in ds.graphs:
        assert np.array_equal(annotate_junctions(g), brute_junctions(g))


def test_annotate_same_role_all_false():
    g = make_graph(4, [(0, 1), (1, 2), (2, 3)])
    assert not annotate_junctions(g).any()


def test_house_on_tree_marks_attachment_only():
    tree = [(0, 1), (0, 2), (1, 3), (1, 4)]
    house = [(5, 6), (6, 7), (7, 8), (8, 5), (5, 9), (6, 9)]
    g = make_graph(10, tree + house + [(3, 7)], roles=[0] * 5 + [1] * 5)
    assert np.flatnonzero(annotate_junctions(g)).tolist() == [3, 7]


def test_two_motifs_sharing_an_edge():
    g = make_graph(6, [(0, 1), (1, 2), (3, 4), (4, 5), (2, 3)], roles=[1, 1, 1, 2, 2, 2])
    assert np.flatnonzero(annotate_junctions(g)).tolist() == [2, 3]


@given(st.integers(0, 2**32))
def test_annotate_random_graphs(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 10))
    edges = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < 0.3]
    g = make_graph(n, edges or np.zeros((0, 2)), roles=rng.integers(0, 3, n))
    assert np.array_equal(annotate_junctions(g), brute_junctions(g))


def test_same_seed_same_bytes(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    encode_jsonl(generate(GenSpec(count=150, bias=0.9, seed=7)), a)
    encode_jsonl(generate(GenSpec(count=150, bias=0.9, seed=7)), b)
    assert a.read_bytes() == b.read_bytes()


def test_generation_order_independent():
    # each graph has its own stream, so a prefix of a larger run is identical
    small = generate(GenSpec(count=60, bias=0.9, seed=3, split_fractions=(1.0, 0.0, 0.0)))
    big = generate(GenSpec(count=90, bias=0.9, seed=3, split_fractions=(1.0, 0.0, 0.0)))
    assert all(x == y for x, y in zip(small.graphs, big.graphs[:60]))


def test_node_labels():
    ds = generate(GenSpec(count=30, task="node", seed=2))
    for g in ds.graphs:
        assert np.all(g.y_node[g.roles == 0] == 0)
        assert np.all(g.y_node[g.roles == 1] == g.y + 1)


def test_invalid_specs():
    with pytest.raises(ValueError, match=r"bias must be in \[1/3,1\]"):
        generate(GenSpec(bias=1.2))
    with pytest.raises(ValueError):
        generate(GenSpec(count=0))
    with pytest.raises(ValueError):
        generate(GenSpec(family="nope"))


def test_mixed_dataset():
    a = GenSpec(family=SPURIOUS_MOTIF, count=60, task="node", seed=1)
    b = GenSpec(family=MOTIF_VARIANT, count=45, task="node", seed=2)
    ds_a, ds_b = generate(a), generate(b)
    mixed = gen_mixed_node_dataset(a, b)
    labels = np.concatenate([g.y_node for g in mixed.graphs])
    assert set(labels.tolist()) <= set(range(7)) and labels.max() == 6
    hist = np.bincount(labels, minlength=7)
    ha = np.bincount(np.concatenate([g.y_node for g in ds_a.graphs]), minlength=4)
    hb = np.bincount(np.concatenate([g.y_node for g in ds_b.graphs]), minlength=4)
    expect = np.concatenate([[ha[0] + hb[0]], ha[1:], hb[1:]])
    assert hist.tolist() == expect.tolist()
    assert sorted(i for k in mixed.splits for i in mixed.splits[k]) == list(range(105))


def test_mixed_with_empty_second_source():
    a = GenSpec(count=30, task="node", seed=1)
    assert gen_mixed_node_dataset(a, None) == generate(a)
    empty = GenSpec(count=1, task="node")
    object.__setattr__(empty, "count", 0)
    assert gen_mixed_node_dataset(a, empty) == generate(a)


def test_mixed_dimension_mismatch():
    with pytest.raises(ValueError, match="feature_dim"):
        gen_mixed_node_dataset(GenSpec(count=5, task="node"), GenSpec(count=5, task="node", feature_dim=6))


def test_marker_dataset_rules():
    ds = gen_marker_dataset(GenSpec(family=MARKER, count=10_000, seed=4))
    has = np.array([g.marker is not None for g in ds.graphs])
    assert abs(has.mean() - 0.5) <= 0.02
    for g in ds.graphs[:300]:
        assert validate_graph(g) == []
        if g.marker is None:
            assert g.x[:, 2].sum() == 0
        else:
            start = g.marker[0]
            assert g.x[start, 2] == 1.0
            assert g.marker.tolist() == list(range(start, g.num_nodes))
            # cues after the marker agree with the label, cues before it disagree
            pos_after = g.x[start + 1 :, 0].sum()
            neg_after = g.x[start + 1 :, 1].sum()
            assert (pos_after if g.y == 1 else neg_after) == g.x[start + 1 :, :2].sum()
    assert ds.bias == BALANCED
