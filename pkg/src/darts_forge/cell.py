"""Softmax-relaxed DAG cell, architecture derivation, pruning and export."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .nn import ALL_KINDS, Module, ModuleList, TransformationKind, make_transformation
from .nn.module import Parameter


@dataclass(frozen=True)
class CellConfig:
    k: int = 5
    channels: int = 32
    candidates: tuple = ALL_KINDS
    conv_order: str = "conv-relu-bn"

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(TransformationKind(c) if not isinstance(c, str)
                                                     else TransformationKind.parse(c)
                                                     for c in self.candidates))
        if self.k < 1:
            raise ValueError(f"cell needs k >= 1 nodes, got {self.k}")
        if self.channels < 1:
            raise ValueError(f"cell needs channels >= 1, got {self.channels}")
        if not self.candidates:
            raise ValueError("candidate list must not be empty")

    @property
    def n_edges(self) -> int:
        return self.k * (self.k + 1) // 2

    @property
    def candidate_names(self) -> list:
        return [c.name for c in self.candidates]

    def to_dict(self) -> dict:
        return {"k": self.k, "channels": self.channels, "candidates": self.candidate_names,
                "conv_order": self.conv_order}

    @classmethod
    def from_dict(cls, d: dict) -> "CellConfig":
        return cls(k=d["k"], channels=d["channels"], candidates=tuple(d["candidates"]),
                   conv_order=d.get("conv_order", "conv-relu-bn"))


def edge_list(k: int) -> list:
    return [(i, j) for i in range(1, k + 1) for j in range(i)]


def edge_index(i: int, j: int) -> int:
    return i * (i - 1) // 2 + j


class AlphaTable:
    """Architecture parameters: one row per edge ``(i, j)``, one column per candidate.

    ``mask[e, f]`` is False for transformations removed by pruning.
    """

    def __init__(self, k: int, n_candidates: int, values: Optional[np.ndarray] = None,
                 mask: Optional[np.ndarray] = None):
        self.k = k
        self.edges = edge_list(k)
        shape = (len(self.edges), n_candidates)
        self.alpha = Parameter(np.zeros(shape) if values is None else np.array(values, dtype=np.float64))
        self.mask = np.ones(shape, dtype=bool) if mask is None else np.array(mask, dtype=bool)
        if self.alpha.shape != shape or self.mask.shape != shape:
            raise ValueError(f"alpha table for k={k} must be {shape}")
        if not self.mask.any(axis=1).all():
            raise ValueError("mask removes every transformation on some edge")

    @property
    def values(self) -> np.ndarray:
        return self.alpha.data

    def index(self, edge: tuple) -> int:
        i, j = edge
        if not (1 <= i <= self.k and 0 <= j < i):
            raise KeyError(f"no edge {edge} in a cell with k={self.k}")
        return edge_index(i, j)

    def copy(self) -> "AlphaTable":
        return AlphaTable(self.k, self.alpha.shape[1], self.alpha.data.copy(), self.mask.copy())

    def weights(self) -> Tensor:
        """Differentiable per-edge softmax over surviving transformations."""
        return ag.softmax(self.alpha, mask=self.mask)


def init_alphas(config: CellConfig) -> AlphaTable:
    return AlphaTable(config.k, len(config.candidates))


def edge_weights(alphas: AlphaTable, edge: tuple) -> np.ndarray:
    e = alphas.index(edge)
    z = np.where(alphas.mask[e], alphas.values[e], -np.inf)
    z = z - z.max()
    w = np.exp(z)
    return w / w.sum()


def alpha_entropy(alphas: AlphaTable) -> np.ndarray:
    out = np.zeros(len(alphas.edges))
    for e, edge in enumerate(alphas.edges):
        w = edge_weights(alphas, edge)
        nz = w[w > 0]
        out[e] = float(-(nz * np.log(nz)).sum())
    return out


def prune_top_k(alphas: AlphaTable, k: int = 3) -> AlphaTable:
    """Keep the ``k`` highest-alpha surviving transformations on every edge.

    Ties go to the lower candidate index.  Alpha values are untouched.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    out = alphas.copy()
    for e in range(len(out.edges)):
        alive = np.flatnonzero(out.mask[e])
        # stable sort on -alpha keeps index order among ties
        order = alive[np.argsort(-out.values[e, alive], kind="stable")]
        keep = np.zeros_like(out.mask[e])
        keep[order[:k]] = True
        out.mask[e] = keep
    return out


@dataclass
class DerivedArchitecture:
    k: int
    channels: int
    candidates: list
    alphas: list
    mask: list
    dominant: list
    edges: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"k": self.k, "channels": self.channels, "candidates": list(self.candidates),
                "alphas": self.alphas, "mask": self.mask, "dominant": self.dominant,
                "edges": self.edges}

    def selection(self) -> tuple:
        """The discrete choices only (dominant edges plus per-edge kept sets and rankings)."""
        return json.dumps(self.dominant, sort_keys=True), json.dumps(self.edges, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "DerivedArchitecture":
        return cls(k=d["k"], channels=d["channels"], candidates=list(d["candidates"]),
                   alphas=d["alphas"], mask=d["mask"], dominant=d["dominant"], edges=d.get("edges", []))

    @classmethod
    def from_json(cls, data) -> "DerivedArchitecture":
        return cls.from_dict(json.loads(data))


def derive_architecture(alphas: AlphaTable, config: CellConfig, score: str = "weight") -> DerivedArchitecture:
    """Two-level argmax: best kind per edge, then the best edge per node.

    The per-edge winner is the surviving kind with the largest alpha.  Edges
    entering a node are then compared by the mixture weight their winner
    receives (``score="weight"``, invariant to per-edge alpha shifts) or by
    the winner's raw alpha (``score="alpha"``).  Ties resolve to the lowest
    candidate index, then the lowest source node.
    """
    if score not in ("weight", "alpha"):
        raise ValueError(f"score must be 'weight' or 'alpha', got {score!r}")
    names = config.candidate_names
    vals, mask = alphas.values, alphas.mask
    dominant, edges = [], []
    for i in range(1, config.k + 1):
        best = None
        for j in range(i):
            e = edge_index(i, j)
            masked = np.where(mask[e], vals[e], -np.inf)
            f = int(np.argmax(masked))
            s = edge_weights(alphas, (i, j))[f] if score == "weight" else masked[f]
            if best is None or s > best[0]:
                best = (s, j, f)
            alive = np.flatnonzero(mask[e])
            ranking = alive[np.argsort(-vals[e, alive], kind="stable")]
            edges.append({"node": i, "source": j, "kept": [names[r] for r in alive],
                          "ranking": [names[r] for r in ranking]})
        dominant.append({"node": i, "source": best[1], "kind": names[best[2]]})
    return DerivedArchitecture(
        k=config.k, channels=config.channels, candidates=names,
        alphas=[[float(v) for v in row] for row in vals],
        mask=[[bool(m) for m in row] for row in mask],
        dominant=dominant, edges=edges,
    )


def export_architecture(arch: DerivedArchitecture, fmt: str = "json") -> bytes:
    if fmt == "json":
        return (json.dumps(arch.to_dict(), indent=2) + "\n").encode("utf-8")
    if fmt == "dot":
        lines = ["digraph cell {", "  rankdir=LR;", '  n0 [label="n0 (input)"];']
        for i in range(1, arch.k + 1):
            lines.append(f'  n{i} [label="n{i}"];')
        for d in arch.dominant:
            lines.append(f'  n{d["source"]} -> n{d["node"]} [label="{d["kind"]}"];')
        lines.append("}")
        return ("\n".join(lines) + "\n").encode("utf-8")
    raise ValueError(f"unknown export format {fmt!r}; expected 'json' or 'dot'")


class SupernetCell(Module):
    """The searchable DAG with an independent candidate set on every edge."""

    def __init__(self, config: CellConfig, rng: np.random.Generator, alphas: Optional[AlphaTable] = None):
        super().__init__()
        self.config = config
        self.alphas = alphas if alphas is not None else init_alphas(config)
        self.edges = ModuleList()
        for _ in edge_list(config.k):
            self.edges.append(ModuleList(
                make_transformation(kind, config.channels, rng, config.conv_order)
                for kind in config.candidates
            ))

    def arch_parameters(self) -> list:
        return [self.alphas.alpha]

    def forward(self, x: Tensor, valid: Optional[np.ndarray] = None) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.config.channels:
            raise ag.ShapeError(f"cell expects [N,{self.config.channels},H,W] input, got {x.shape}")
        vmask = None if valid is None else np.asarray(valid) > 0
        w = self.alphas.weights()
        mask = self.alphas.mask
        states = [x]
        for i in range(1, self.config.k + 1):
            h = None
            for j in range(i):
                e = edge_index(i, j)
                keep = np.flatnonzero(mask[e])
                ops = self.edges[e]
                ys = [ops[f](states[j], vmask) for f in keep]
                term = ag.mix(ys, w[e], keep)
                h = term if h is None else h + term
            if valid is not None:
                h = h * valid
            states.append(h)
        return ag.concat(states[1:], axis=1)


def cell_forward(cell: SupernetCell, x: Tensor, mode: str = "train",
                 valid: Optional[np.ndarray] = None) -> Tensor:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    cell.train(mode == "train")
    return cell(x, valid)
