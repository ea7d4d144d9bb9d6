import json
import math
from pathlib import Path

import numpy as np
import pydot
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from darts_forge import autograd as ag
from darts_forge.autograd import Tensor
from darts_forge.autograd.gradcheck import grad_check
from darts_forge.cell import (AlphaTable, CellConfig, DerivedArchitecture, SupernetCell, alpha_entropy,
                              cell_forward, derive_architecture, edge_index, edge_list, edge_weights,
                              export_architecture, init_alphas, prune_top_k)
from darts_forge.nn import ALL_KINDS, TransformationKind
from oracles import derive_oracle, prune_oracle

GOLDEN = Path(__file__).parent / "golden"
NAMES = [k.name for k in ALL_KINDS]


def random_table(rng, k=5, prune_some=False):
    vals = rng.normal(size=(k * (k + 1) // 2, 7))
    mask = None
    if prune_some:
        mask = rng.random(vals.shape) < 0.7
        mask[np.arange(len(vals)), rng.integers(0, 7, len(vals))] = True
    return AlphaTable(k, 7, vals, mask)


# -- alpha table ---------------------------------------------------------------

def test_init_alphas_full_size_shape_and_uniform_weights():
    a = init_alphas(CellConfig(k=5))
    assert a.values.shape == (15, 7) and not a.values.any() and a.mask.all()
    for edge in edge_list(5):
        assert np.max(np.abs(edge_weights(a, edge) - 1 / 7)) <= 1e-15


def test_single_node_has_single_edge():
    assert edge_list(1) == [(1, 0)]
    assert init_alphas(CellConfig(k=1)).values.shape == (1, 7)


def test_edge_index_is_dense_and_unknown_edge_rejected():
    assert [edge_index(i, j) for i, j in edge_list(4)] == list(range(10))
    a = init_alphas(CellConfig(k=3))
    with pytest.raises(KeyError):
        a.index((2, 2))
    with pytest.raises(KeyError):
        edge_weights(a, (4, 0))


def test_mask_must_leave_a_survivor():
    with pytest.raises(ValueError):
        AlphaTable(1, 7, mask=np.zeros((1, 7), dtype=bool))


def test_masked_edge_weights_renormalize():
    mask = np.zeros((1, 7), dtype=bool)
    mask[0, [1, 4, 6]] = True
    w = edge_weights(AlphaTable(1, 7, mask=mask), (1, 0))
    assert np.allclose(w, [0, 1 / 3, 0, 0, 1 / 3, 0, 1 / 3], atol=1e-15)
    assert w[0] == 0.0


def test_edge_weights_direct_evaluation():
    vals = np.arange(1.0, 8.0)[None, :]
    w = edge_weights(AlphaTable(1, 7, vals), (1, 0))
    assert np.allclose(w, np.exp(vals[0]) / np.exp(vals[0]).sum(), rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-20, 20), st.integers(0, 14))
def test_per_edge_shift_invariance(seed, c, e):
    rng = np.random.default_rng(seed)
    a = random_table(rng, prune_some=True)
    b = a.copy()
    b.values[e] += c
    for edge in a.edges:
        assert np.max(np.abs(edge_weights(a, edge) - edge_weights(b, edge))) <= 1e-12
    cfg = CellConfig(k=5)
    assert derive_architecture(a, cfg).selection() == derive_architecture(b, cfg).selection()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 5), st.integers(0, 6))
def test_raising_one_alpha_never_lowers_its_weight(seed, delta, f):
    a = random_table(np.random.default_rng(seed))
    b = a.copy()
    b.values[3, f] += delta
    edge = a.edges[3]
    assert edge_weights(b, edge)[f] >= edge_weights(a, edge)[f]


def test_entropy_uniform_onehot_and_direct():
    a = init_alphas(CellConfig(k=2))
    assert np.allclose(alpha_entropy(a), math.log(7), atol=1e-15)
    hot = a.copy()
    hot.values[:, 2] = 60.0
    assert np.all(alpha_entropy(hot) < 1e-20)
    rng = np.random.default_rng(0)
    r = random_table(rng, k=2)
    for e, edge in enumerate(r.edges):
        w = edge_weights(r, edge)
        assert alpha_entropy(r)[e] == pytest.approx(-(w * np.log(w)).sum(), abs=1e-12)


# -- pruning ----------------------------------------------------------------------

def test_prune_zero_alphas_keeps_first_three():
    p = prune_top_k(init_alphas(CellConfig(k=2)), 3)
    assert p.mask.tolist() == [[True] * 3 + [False] * 4] * 3


def test_prune_descending_alphas():
    p = prune_top_k(AlphaTable(1, 7, np.array([[7.0, 6, 5, 4, 3, 2, 1]])), 3)
    assert np.flatnonzero(p.mask[0]).tolist() == [0, 1, 2]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 7), st.booleans())
def test_prune_matches_sort_oracle(seed, k, pre_pruned):
    rng = np.random.default_rng(seed)
    a = random_table(rng, k=3, prune_some=pre_pruned)
    p = prune_top_k(a, k)
    assert np.array_equal(p.mask, prune_oracle(a.values, a.mask, k))
    assert np.array_equal(p.values, a.values)
    assert (p.mask.sum(axis=1) == np.minimum(k, a.mask.sum(axis=1))).all()
    for edge in p.edges:
        assert abs(edge_weights(p, edge).sum() - 1) <= 1e-12


def test_prune_does_not_touch_the_input():
    a = random_table(np.random.default_rng(1))
    before = a.mask.copy()
    prune_top_k(a, 3)
    assert np.array_equal(a.mask, before)
    with pytest.raises(ValueError):
        prune_top_k(a, 0)


# -- derivation -------------------------------------------------------------------

def test_derive_zero_alphas_picks_input_and_first_kind():
    arch = derive_architecture(init_alphas(CellConfig(k=5)), CellConfig(k=5))
    assert arch.dominant == [{"node": i, "source": 0, "kind": "Conv3x3"} for i in range(1, 6)]


def test_derive_unique_maximum():
    a = init_alphas(CellConfig(k=5))
    a.values[a.index((3, 1)), TransformationKind.MaxPool3x3] = 1.0
    for score in ("weight", "alpha"):
        arch = derive_architecture(a, CellConfig(k=5), score=score)
        assert arch.dominant[2] == {"node": 3, "source": 1, "kind": "MaxPool3x3"}


@pytest.mark.parametrize("score", ["weight", "alpha"])
def test_derive_matches_exhaustive_oracle(score):
    rng = np.random.default_rng(2024)
    for n in range(150):
        a = random_table(rng, prune_some=n % 2 == 1)
        arch = derive_architecture(a, CellConfig(k=5), score=score)
        got = [(d["node"], d["source"], d["kind"]) for d in arch.dominant]
        assert got == derive_oracle(a.values, a.mask, 5, score)
        assert all(d["source"] < d["node"] for d in arch.dominant)
        for e in arch.edges:
            assert set(e["kept"]) <= set(NAMES)


def test_derive_under_pruning_keeps_dominant_selection_with_alpha_score():
    rng = np.random.default_rng(5)
    cfg = CellConfig(k=5)
    for _ in range(100):
        a = random_table(rng)
        before = derive_architecture(a, cfg, score="alpha").dominant
        assert derive_architecture(prune_top_k(a, 3), cfg, score="alpha").dominant == before


def test_pruning_keeps_per_edge_winners_with_weight_score():
    rng = np.random.default_rng(6)
    cfg = CellConfig(k=4)
    for _ in range(50):
        a = random_table(rng, k=4)
        full = derive_architecture(a, cfg).edges
        pruned = derive_architecture(prune_top_k(a, 3), cfg).edges
        assert [e["ranking"][0] for e in full] == [e["ranking"][0] for e in pruned]


def test_derive_rejects_unknown_score():
    with pytest.raises(ValueError):
        derive_architecture(init_alphas(CellConfig(k=1)), CellConfig(k=1), score="entropy")


# -- export ----------------------------------------------------------------------

def golden_arch():
    cfg = CellConfig(k=3, channels=8)
    vals = np.round(np.random.default_rng(12345).normal(size=(6, 7)), 6)
    return derive_architecture(prune_top_k(AlphaTable(3, 7, vals), 3), cfg)


def test_export_json_roundtrip_is_byte_identical():
    blob = export_architecture(golden_arch(), "json")
    again = export_architecture(DerivedArchitecture.from_json(blob), "json")
    assert blob == again
    doc = json.loads(blob)
    assert set(doc) >= {"k", "channels", "candidates", "alphas", "mask", "dominant"}
    assert len(doc["alphas"]) == 6 and all(len(r) == 7 for r in doc["alphas"])


@pytest.mark.parametrize("fmt", ["json", "dot"])
def test_export_matches_golden_file(fmt):
    assert export_architecture(golden_arch(), fmt) == (GOLDEN / f"arch_k3.{fmt}").read_bytes()


def test_dot_parses_and_has_k_dominant_edges():
    arch = golden_arch()
    graphs = pydot.graph_from_dot_data(export_architecture(arch, "dot").decode())
    assert len(graphs) == 1
    g = graphs[0]
    edges = g.get_edges()
    assert len(edges) == arch.k
    got = sorted((e.get_source(), e.get_destination(), e.get_label().strip('"')) for e in edges)
    expected = sorted((f"n{d['source']}", f"n{d['node']}", d["kind"]) for d in arch.dominant)
    assert got == expected
    assert {n.get_name() for n in g.get_nodes()} >= {f"n{i}" for i in range(arch.k + 1)}


def test_json_to_dot_to_json_keeps_dominant_edges():
    arch = golden_arch()
    g = pydot.graph_from_dot_data(export_architecture(arch, "dot").decode())[0]
    rebuilt = sorted(({"node": int(e.get_destination()[1:]), "source": int(e.get_source()[1:]),
                       "kind": e.get_label().strip('"')} for e in g.get_edges()), key=lambda d: d["node"])
    assert rebuilt == DerivedArchitecture.from_json(export_architecture(arch, "json")).dominant


def test_unknown_export_format():
    with pytest.raises(ValueError):
        export_architecture(golden_arch(), "svg")


# -- supernet forward --------------------------------------------------------------------

def test_single_node_saturated_skip_is_identity():
    cfg = CellConfig(k=1, channels=3)
    cell = SupernetCell(cfg, np.random.default_rng(0))
    cell.alphas.values[0, TransformationKind.SkipConnect] = 40.0
    x = Tensor(np.random.default_rng(1).normal(size=(2, 3, 4, 5)))
    out = cell_forward(cell, x, "eval").data
    assert np.max(np.abs(out - x.data)) < 1e-12


def test_two_node_zero_alphas_against_direct_sum():
    cfg = CellConfig(k=2, channels=2)
    cell = SupernetCell(cfg, np.random.default_rng(3))
    x = Tensor(np.random.default_rng(4).normal(size=(2, 2, 5, 4)))
    out = cell_forward(cell, x, "eval").data

    def mean_of(edge, inp):
        ops = cell.edges[edge_index(*edge)]
        return sum(op(Tensor(inp)).data for op in ops) / 7

    h1 = mean_of((1, 0), x.data)
    h2 = mean_of((2, 0), x.data) + mean_of((2, 1), h1)
    assert np.allclose(out, np.concatenate([h1, h2], axis=1), rtol=0, atol=1e-12)


def test_pruned_candidates_are_skipped_entirely():
    cfg = CellConfig(k=1, channels=2)
    cell = SupernetCell(cfg, np.random.default_rng(5))
    mask = np.zeros((1, 7), dtype=bool)
    mask[0, TransformationKind.SkipConnect] = True
    cell.alphas = AlphaTable(1, 7, mask=mask)
    x = Tensor(np.random.default_rng(6).normal(size=(1, 2, 3, 3)))
    assert np.array_equal(cell_forward(cell, x, "eval").data, x.data)


def test_full_size_config_channel_count():
    cfg = CellConfig()
    assert (cfg.k, cfg.channels, cfg.n_edges) == (5, 32, 15)
    cell = SupernetCell(cfg, np.random.default_rng(0))
    assert sum(len(ops) for ops in cell.edges) == 15 * 7
    out = cell_forward(cell, Tensor(np.zeros((1, 32, 3, 2))), "eval")
    assert out.shape == (1, 160, 3, 2)


def test_cell_rejects_wrong_channels():
    cell = SupernetCell(CellConfig(k=1, channels=2), np.random.default_rng(0))
    with pytest.raises(ag.ShapeError):
        cell(Tensor(np.zeros((1, 3, 2, 2))))
    with pytest.raises(ValueError):
        cell_forward(cell, Tensor(np.zeros((1, 2, 2, 2))), "test")


def test_alpha_gradient_through_cell():
    cfg = CellConfig(k=2, channels=2)
    cell = SupernetCell(cfg, np.random.default_rng(7))
    x = Tensor(np.random.default_rng(8).normal(size=(2, 2, 4, 3)))
    w = Tensor(np.random.default_rng(9).normal(size=(2, 4, 4, 3)))
    cell.alphas.values[:] = np.random.default_rng(10).normal(size=(3, 7))
    rep = grad_check(lambda a: ag.sum_(cell(x) * w), [cell.alphas.alpha])
    assert rep.max_error < 1e-4


def test_cell_config_roundtrip_and_validation():
    cfg = CellConfig(k=3, channels=4, candidates=("SkipConnect", "Conv3x3"))
    assert CellConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        CellConfig(k=0)
    with pytest.raises(ValueError):
        CellConfig(candidates=())
