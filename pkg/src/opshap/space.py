"""Search-space description (cell DAG, candidate ops) and genotype derivation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .game import OperationId, flatten, unflatten


class SpaceError(Exception):
    pass


class SpaceParseError(SpaceError):
    """Malformed space document; message carries the offending path."""


class SpaceValidationError(SpaceError):
    pass


class GenotypeDerivationError(SpaceError):
    pass


NASBENCH201_OPS = ["none", "skip_connect", "nor_conv_1x1", "nor_conv_3x3", "avg_pool_3x3"]
DARTS_OPS = [
    "none",
    "max_pool_3x3",
    "avg_pool_3x3",
    "skip_connect",
    "sep_conv_3x3",
    "sep_conv_5x5",
    "dil_conv_3x3",
    "dil_conv_5x5",
]


@dataclass
class SearchSpace:
    """Cell DAG with candidate operations per edge.  Immutable after load."""

    name: str
    nodes: int
    edges: list[tuple[int, int]]
    ops_per_edge: list[list[str]]
    null_ops: frozenset[str] = frozenset()
    selection_rule: str = "all"  # "all" | "topk"
    top_k: int = 2
    exclude_null_default: bool = False
    _offsets: list[int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._validate()
        offsets = [0]
        for ops in self.ops_per_edge:
            offsets.append(offsets[-1] + len(ops))
        self._offsets = offsets

    def _validate(self) -> None:
        if self.nodes < 2:
            raise SpaceValidationError("a space needs at least two nodes")
        if len(self.edges) != len(self.ops_per_edge):
            raise SpaceValidationError("edges and ops_per_edge lengths differ")
        if not self.edges:
            raise SpaceValidationError("a space needs at least one edge")
        for k, (u, v) in enumerate(self.edges):
            if not (0 <= u < self.nodes and 0 <= v < self.nodes):
                raise SpaceValidationError(f"edge {k} ({u}->{v}) references a missing node")
            if u >= v:
                raise SpaceValidationError(f"edge {k} ({u}->{v}) violates from < to (DAG order)")
        for k, ops in enumerate(self.ops_per_edge):
            if not ops:
                raise SpaceValidationError(f"edge {k} has no candidate operations")
            if len(set(ops)) != len(ops):
                raise SpaceValidationError(f"edge {k} has duplicate operation names")
        if self.selection_rule not in ("all", "topk"):
            raise SpaceValidationError(f"unknown selection rule {self.selection_rule!r}")
        if self.selection_rule == "topk":
            if self.top_k < 1:
                raise SpaceValidationError("top_k must be >= 1")
            indeg: dict[int, int] = {}
            for _, v in self.edges:
                indeg[v] = indeg.get(v, 0) + 1
            for v, d in indeg.items():
                if d < self.top_k:
                    raise SpaceValidationError(
                        f"node {v} has {d} incoming edges, fewer than top_k={self.top_k}"
                    )

    @property
    def n_players(self) -> int:
        return self._offsets[-1]

    def player_offset(self, edge_index: int) -> int:
        return self._offsets[edge_index]

    def flatten(self, edge_index: int, op_index: int) -> OperationId:
        return flatten(edge_index, op_index, self)

    def unflatten(self, player_index: int) -> OperationId:
        return unflatten(player_index, self)

    def edge_players(self, edge_index: int) -> range:
        start = self._offsets[edge_index]
        return range(start, start + len(self.ops_per_edge[edge_index]))

    def edge_slices(self) -> list[slice]:
        return [
            slice(self._offsets[k], self._offsets[k + 1]) for k in range(len(self.edges))
        ]

    def op_name(self, player_index: int) -> str:
        oid = self.unflatten(player_index)
        return self.ops_per_edge[oid.edge_index][oid.op_index]

    def to_document(self) -> dict:
        return {
            "name": self.name,
            "nodes": self.nodes,
            "edges": [
                {"from": u, "to": v, "ops": list(ops)}
                for (u, v), ops in zip(self.edges, self.ops_per_edge)
            ],
            "null_ops": sorted(self.null_ops),
            "selection": (
                {"rule": "topk", "k": self.top_k}
                if self.selection_rule == "topk"
                else {"rule": "all"}
            ),
            "exclude_null": self.exclude_null_default,
        }


@dataclass(frozen=True)
class GenotypeEdge:
    edge_index: int
    from_node: int
    to_node: int
    op: str


@dataclass(frozen=True)
class Genotype:
    """Discrete architecture: one chosen operation per retained edge."""

    chosen: tuple[GenotypeEdge, ...]
    discarded_edges: tuple[int, ...] = ()

    def to_document(self) -> dict:
        return {
            "edges": [
                {"from": e.from_node, "to": e.to_node, "op": e.op} for e in self.chosen
            ]
        }

    def canonical(self) -> str:
        """Single-line form for diffing, ordered by edge index."""
        return ";".join(f"{e.from_node}->{e.to_node}={e.op}" for e in self.chosen)


def _require(doc: dict, key: str, kind, path: str):
    if key not in doc:
        raise SpaceParseError(f"missing key at {path}.{key}")
    value = doc[key]
    if not isinstance(value, kind):
        raise SpaceParseError(
            f"bad type at {path}.{key}: expected {kind.__name__}, got {type(value).__name__}"
        )
    return value


def load_space(document: dict | str) -> SearchSpace:
    """Build a validated SearchSpace from a document (dict or JSON text)."""
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as err:
            raise SpaceParseError(f"invalid JSON: {err}") from err
    if not isinstance(document, dict):
        raise SpaceParseError("space document must be a JSON object")
    name = _require(document, "name", str, "$")
    nodes = _require(document, "nodes", int, "$")
    raw_edges = _require(document, "edges", list, "$")
    edges: list[tuple[int, int]] = []
    ops_per_edge: list[list[str]] = []
    for k, entry in enumerate(raw_edges):
        path = f"$.edges[{k}]"
        if not isinstance(entry, dict):
            raise SpaceParseError(f"bad type at {path}: expected object")
        u = _require(entry, "from", int, path)
        v = _require(entry, "to", int, path)
        ops = _require(entry, "ops", list, path)
        for i, op in enumerate(ops):
            if not isinstance(op, str):
                raise SpaceParseError(f"bad type at {path}.ops[{i}]: expected string")
        edges.append((u, v))
        ops_per_edge.append(list(ops))
    null_ops = document.get("null_ops", [])
    if not isinstance(null_ops, list) or not all(isinstance(o, str) for o in null_ops):
        raise SpaceParseError("bad type at $.null_ops: expected list of strings")
    selection = document.get("selection", {"rule": "all"})
    if not isinstance(selection, dict):
        raise SpaceParseError("bad type at $.selection: expected object")
    rule = selection.get("rule", "all")
    if rule not in ("all", "topk"):
        raise SpaceParseError(f"bad value at $.selection.rule: {rule!r}")
    top_k = selection.get("k", 2)
    if not isinstance(top_k, int):
        raise SpaceParseError("bad type at $.selection.k: expected int")
    exclude_null = document.get("exclude_null", False)
    if not isinstance(exclude_null, bool):
        raise SpaceParseError("bad type at $.exclude_null: expected bool")
    return SearchSpace(
        name=name,
        nodes=nodes,
        edges=edges,
        ops_per_edge=ops_per_edge,
        null_ops=frozenset(null_ops),
        selection_rule=rule,
        top_k=top_k,
        exclude_null_default=exclude_null,
    )


def load_space_file(path: str | Path) -> SearchSpace:
    return load_space(Path(path).read_text(encoding="utf-8"))


def _nasbench201_cell() -> SearchSpace:
    nodes = 4
    edges = [(i, j) for j in range(1, nodes) for i in range(j)]
    return SearchSpace(
        name="nasbench201-cell",
        nodes=nodes,
        edges=edges,
        ops_per_edge=[list(NASBENCH201_OPS) for _ in edges],
        null_ops=frozenset({"none"}),
        selection_rule="all",
        exclude_null_default=False,
    )


def _darts_cell() -> SearchSpace:
    # Two input nodes (0, 1) plus four intermediate nodes; every intermediate
    # node connects to all earlier nodes and keeps its top two input edges at
    # discretization.
    nodes = 6
    edges = [(i, j) for j in range(2, nodes) for i in range(j)]
    return SearchSpace(
        name="darts-cell",
        nodes=nodes,
        edges=edges,
        ops_per_edge=[list(DARTS_OPS) for _ in edges],
        null_ops=frozenset({"none"}),
        selection_rule="topk",
        top_k=2,
        exclude_null_default=True,
    )


SPACE_PRESETS = {
    "nasbench201-cell": _nasbench201_cell,
    "darts-cell": _darts_cell,
}


def preset_space(name: str) -> SearchSpace:
    try:
        return SPACE_PRESETS[name]()
    except KeyError:
        raise SpaceValidationError(
            f"unknown space preset {name!r}; available: {sorted(SPACE_PRESETS)}"
        ) from None


def derive_genotype(
    space: SearchSpace,
    alpha,
    exclude_null: bool | None = None,
) -> Genotype:
    """Pick the strongest operation per edge (ties: lowest op index), then
    under top-k selection keep the k best-scoring input edges per node
    (ties: lowest edge index)."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (space.n_players,):
        raise SpaceValidationError(
            f"alpha has shape {alpha.shape}, expected ({space.n_players},)"
        )
    if exclude_null is None:
        exclude_null = space.exclude_null_default

    best_op: list[tuple[int, str, float]] = []
    for k, ops in enumerate(space.ops_per_edge):
        start = space.player_offset(k)
        candidates = [
            (i, name) for i, name in enumerate(ops)
            if not (exclude_null and name in space.null_ops)
        ]
        if not candidates:
            raise GenotypeDerivationError(
                f"edge {k}: every candidate operation is excluded"
            )
        pick_i, pick_name = candidates[0]
        for i, name in candidates[1:]:
            if alpha[start + i] > alpha[start + pick_i]:
                pick_i, pick_name = i, name
        best_op.append((pick_i, pick_name, float(alpha[start + pick_i])))

    if space.selection_rule == "topk":
        by_node: dict[int, list[int]] = {}
        for k, (_, v) in enumerate(space.edges):
            by_node.setdefault(v, []).append(k)
        kept: set[int] = set()
        for v, edge_ids in by_node.items():
            ranked = sorted(edge_ids, key=lambda k: (-best_op[k][2], k))
            kept.update(ranked[: space.top_k])
        retained = sorted(kept)
    else:
        retained = list(range(len(space.edges)))

    chosen = tuple(
        GenotypeEdge(k, space.edges[k][0], space.edges[k][1], best_op[k][1])
        for k in retained
    )
    discarded = tuple(k for k in range(len(space.edges)) if k not in set(retained))
    return Genotype(chosen=chosen, discarded_edges=discarded)
