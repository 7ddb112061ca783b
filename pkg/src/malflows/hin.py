"""Typed multigraph per view, with context-aware refinement.

A view graph holds apps plus the entities of that view. Refinement splits
each shared anchor entity (the one adjacent to App along the view's
action-oriented meta-path) into per-app clones: the clone keeps the parent
token, records its app as context, and keeps an action edge to a successor
only when the clone's app is connected to that successor by the view's
content relation. This stops walks from pairing an app with entities it
never actually reaches in that app's own flows.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

from . import schema
from .corpus import AppFlowRecord, EntityTable, RelationSet
from .metapaths import MetaPath, MetaPathGroup
from .schema import FWD, REV


class HinError(Exception):
    pass


@dataclass(frozen=True)
class Node:
    id: int
    kind: str
    token: str
    context: str | None = None  # owning app id for per-app clones

    def key(self) -> tuple[str, str, str]:
        return (self.kind, self.token, self.context or "")


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    rel: str


class Hin:
    """Immutable typed graph. Nodes are stored in canonical (kind, token,
    context) order so equal graphs serialize identically."""

    def __init__(self, nodes: list[Node], edges: list[Edge], view: str,
                 entities: EntityTable | None = None):
        self.nodes = nodes
        self.edges = edges
        self.view = view
        self.entities = entities  # side data used by refinement
        self._out: dict[str, dict[int, list[int]]] = {}
        self._in: dict[str, dict[int, list[int]]] = {}
        for e in edges:
            self._out.setdefault(e.rel, {}).setdefault(e.src, []).append(e.dst)
            self._in.setdefault(e.rel, {}).setdefault(e.dst, []).append(e.src)
        for index in (self._out, self._in):
            for adj in index.values():
                for lst in adj.values():
                    lst.sort()

    def node(self, node_id: int) -> Node:
        return self.nodes[node_id]

    def neighbors(self, node_id: int, rel: str, direction: str) -> list[int]:
        index = self._out if direction == FWD else self._in
        return index.get(rel, {}).get(node_id, [])

    def nodes_of_kind(self, kind: str) -> list[Node]:
        return [n for n in self.nodes if n.kind == kind]

    def app_nodes(self) -> list[Node]:
        return self.nodes_of_kind(schema.APP)

    def node_count(self) -> int:
        return len(self.nodes)

    def edge_count(self) -> int:
        return len(self.edges)

    def canonical_nodes(self) -> list[tuple[str, str, str]]:
        return [n.key() for n in self.nodes]

    def canonical_edges(self) -> list[tuple[tuple, str, tuple]]:
        keyed = [(self.nodes[e.src].key(), e.rel, self.nodes[e.dst].key()) for e in self.edges]
        return sorted(keyed)

    def same_structure(self, other: "Hin") -> bool:
        """Token-and-context isomorphism (keys are unique per graph)."""
        return (sorted(self.canonical_nodes()) == sorted(other.canonical_nodes())
                and self.canonical_edges() == other.canonical_edges())


def _freeze(node_keys: set[tuple[str, str, str | None]],
            edge_keys: set[tuple[tuple, str, tuple]],
            view: str, entities: EntityTable | None) -> Hin:
    """Build a Hin with canonical node ordering from key-level sets."""
    ordered = sorted((k, t, c or "") for k, t, c in node_keys)
    ids = {key: i for i, key in enumerate(ordered)}
    nodes = [Node(id=i, kind=k, token=t, context=c or None)
             for i, (k, t, c) in enumerate(ordered)]
    edges = [Edge(src=ids[(sk, st, sc or "")], dst=ids[(dk, dt, dc or "")], rel=rel)
             for (sk, st, sc), rel, (dk, dt, dc) in sorted(edge_keys, key=_edge_sort_key)]
    return Hin(nodes=nodes, edges=edges, view=view, entities=entities)


def _edge_sort_key(item):
    (sk, st, sc), rel, (dk, dt, dc) = item
    return (rel, sk, st, sc or "", dk, dt, dc or "")


def build_view_hin(relations: RelationSet, entities: EntityTable, view: str) -> Hin:
    """Unrefined graph of one view: nodes incident to the view's relations."""
    if view not in schema.VIEWS:
        raise HinError(f"unknown view {view!r}")
    node_keys: set[tuple[str, str, str | None]] = set()
    edge_keys: set[tuple[tuple, str, tuple]] = set()
    for rel in schema.VIEW_RELATIONS[view]:
        src_kind, dst_kind = schema.RELATION_SIGNATURES[rel]
        for a, b in relations.pairs(rel):
            src = (src_kind, entities.token_of(src_kind, a), None)
            dst = (dst_kind, entities.token_of(dst_kind, b), None)
            node_keys.add(src)
            node_keys.add(dst)
            edge_keys.add((src, rel, dst))
    return _freeze(node_keys, edge_keys, view, entities)


@dataclass(frozen=True)
class RefinementConfig:
    """Which entity kind gets per-app clones and under which constraint.

    anchor_kind is the kind at position 2 of the group's action-oriented
    meta-path; constraint_relation connects App to the kind at position 3.
    """

    mp_l: MetaPath
    anchor_kind: str
    constraint_relation: str

    @classmethod
    def from_group(cls, group: MetaPathGroup) -> "RefinementConfig":
        mp_l = group.action
        if len(mp_l.node_kinds) < 3:
            raise HinError(f"{mp_l.name} is too short to define an anchor")
        anchor_kind = mp_l.node_kinds[1]
        target_kind = mp_l.node_kinds[2]
        for rel, (src, dst) in schema.RELATION_SIGNATURES.items():
            if src == schema.APP and dst == target_kind:
                return cls(mp_l=mp_l, anchor_kind=anchor_kind, constraint_relation=rel)
        raise HinError(f"no App->{target_kind} relation for {mp_l.name}")

    @property
    def first_relation(self) -> str:
        return self.mp_l.relations[0][0]

    @property
    def action_relation(self) -> str:
        return self.mp_l.relations[1][0]


def refine_hin(h: Hin, cfg: RefinementConfig, relations: RelationSet) -> Hin:
    """Split anchors into per-app clones, constraining action edges.

    For each anchor n with app predecessors P and action successors S:
    one clone per p in P, always reachable from p by the content edge; the
    clone keeps an action edge towards s in S only if (p, s) is in the
    constraint relation. When the successor is itself of the anchor kind
    (data-flow view), the edge targets p's clone of s, which exists exactly
    when the constraint holds. Originals are removed; everything else is
    copied untouched.
    """
    views_of_mp = {rel for rel, _ in cfg.mp_l.relations}
    if not views_of_mp.issubset(schema.VIEW_RELATIONS[h.view]):
        raise HinError(f"{cfg.mp_l.name} does not match view {h.view!r}")
    entities = h.entities
    if entities is None:
        raise HinError("refinement needs the entity table carried by build_view_hin")

    first_rel = cfg.first_relation
    action_rel = cfg.action_relation
    constraint: set[tuple[str, str]] = set()
    src_kind, dst_kind = schema.RELATION_SIGNATURES[cfg.constraint_relation]
    for a, b in relations.pairs(cfg.constraint_relation):
        constraint.add((entities.token_of(src_kind, a), entities.token_of(dst_kind, b)))

    anchors = [n for n in h.nodes if n.kind == cfg.anchor_kind]
    anchor_ids = {n.id for n in anchors}

    node_keys: set[tuple[str, str, str | None]] = set()
    edge_keys: set[tuple[tuple, str, tuple]] = set()

    # non-anchor nodes and the edges not incident to anchors survive as-is
    for n in h.nodes:
        if n.id not in anchor_ids:
            node_keys.add((n.kind, n.token, n.context))
    for e in h.edges:
        if e.src not in anchor_ids and e.dst not in anchor_ids:
            s, d = h.nodes[e.src], h.nodes[e.dst]
            edge_keys.add(((s.kind, s.token, s.context), e.rel, (d.kind, d.token, d.context)))

    for n in anchors:
        preds = [h.nodes[p] for p in h.neighbors(n.id, first_rel, REV)]
        succs = [h.nodes[s] for s in h.neighbors(n.id, action_rel, FWD)]
        for p in preds:
            clone = (n.kind, n.token, p.token)
            node_keys.add(clone)
            edge_keys.add(((p.kind, p.token, p.context), first_rel, clone))
            for s in succs:
                if (p.token, s.token) not in constraint:
                    continue
                if s.kind == cfg.anchor_kind:
                    target = (s.kind, s.token, p.token)
                else:
                    target = (s.kind, s.token, s.context)
                edge_keys.add((clone, action_rel, target))

    return _freeze(node_keys, edge_keys, h.view, entities)


def oracle_refined_hin(corpus: list[AppFlowRecord], entities: EntityTable, view: str) -> Hin:
    """Refined graph built directly from the records, bypassing refine_hin.

    Per-app anchor instances are keyed (app, anchor token); action edges
    come only from the app's own records; non-anchor entities stay shared.
    """
    if view not in schema.VIEWS:
        raise HinError(f"unknown view {view!r}")
    node_keys: set[tuple[str, str, str | None]] = set()
    edge_keys: set[tuple[tuple, str, tuple]] = set()

    def app_key(rec: AppFlowRecord):
        return (schema.APP, rec.app_id, None)

    if view == schema.CF_VIEW:
        for rec in corpus:
            for cond in rec.conditions:
                inst = (schema.CONDITION, cond.semantic, rec.app_id)
                node_keys.add(app_key(rec))
                node_keys.add(inst)
                edge_keys.add((app_key(rec), schema.INCLUDE, inst))
                for api in cond.guarded_apis:
                    shared = (schema.API, api, None)
                    node_keys.add(shared)
                    edge_keys.add((inst, schema.TRIGGER, shared))
    elif view == schema.DF_VIEW:
        for rec in corpus:
            used: set[str] = set()
            for cond in rec.conditions:
                used.update(cond.guarded_apis)
            for df in rec.dataflows:
                used.add(df.source)
                used.add(df.sink)
            if used:
                node_keys.add(app_key(rec))
            for api in used:
                inst = (schema.API, api, rec.app_id)
                node_keys.add(inst)
                edge_keys.add((app_key(rec), schema.USE, inst))
            for df in rec.dataflows:
                edge_keys.add(((schema.API, df.source, rec.app_id), schema.FLOW,
                               (schema.API, df.sink, rec.app_id)))
    else:
        for rec in corpus:
            actions = set(rec.extra_actions)
            for entry in rec.icc:
                actions.update(entry.actions)
            if rec.icc or actions:
                node_keys.add(app_key(rec))
            for entry in rec.icc:
                inst = (schema.COMPONENT, entry.component, rec.app_id)
                node_keys.add(inst)
                edge_keys.add((app_key(rec), schema.DECLARE, inst))
                for act in entry.actions:
                    shared = (schema.ACTION, act, None)
                    node_keys.add(shared)
                    edge_keys.add((inst, schema.INITIATE, shared))
            for act in actions:
                shared = (schema.ACTION, act, None)
                node_keys.add(shared)
                edge_keys.add((app_key(rec), schema.SET, shared))

    return _freeze(node_keys, edge_keys, view, None)


def validate_schema(h: Hin) -> list[str]:
    """Schema and clone-invariant violations; empty for a well-formed graph."""
    violations = []
    for e in h.edges:
        if e.rel not in schema.RELATION_SIGNATURES:
            violations.append(f"edge {e.src}->{e.dst} has unknown relation {e.rel!r}")
            continue
        want = schema.RELATION_SIGNATURES[e.rel]
        got = (h.nodes[e.src].kind, h.nodes[e.dst].kind)
        if want != got:
            violations.append(
                f"edge {e.src}->{e.dst} ({e.rel}) connects {got[0]}->{got[1]}, "
                f"schema requires {want[0]}->{want[1]}"
            )
    app_tokens = {n.token for n in h.nodes if n.kind == schema.APP}
    seen_clone_keys: set[tuple[str, str, str]] = set()
    for n in h.nodes:
        if n.kind == schema.APP and n.context is not None:
            violations.append(f"app node {n.token!r} must not carry a context")
        if n.context is not None:
            if n.context not in app_tokens:
                violations.append(f"clone {n.token!r} has context {n.context!r} with no app node")
            key = (n.kind, n.token, n.context)
            if key in seen_clone_keys:
                violations.append(f"duplicate clone of {n.token!r} for app {n.context!r}")
            seen_clone_keys.add(key)
    return violations


def save_graph(h: Hin, path) -> None:
    """graph.json: nodes sorted by (kind, token, context), edges by (rel, src, dst)."""
    nodes = []
    for n in h.nodes:
        obj: dict = {"id": n.id, "kind": n.kind, "token": n.token}
        if n.context is not None:
            obj["context"] = n.context
        nodes.append(obj)
    edges = sorted(h.edges, key=lambda e: (e.rel, e.src, e.dst))
    doc = {
        "nodes": nodes,
        "edges": [{"src": e.src, "dst": e.dst, "rel": e.rel} for e in edges],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_graph(path) -> Hin:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    raw_nodes = doc["nodes"]
    nodes = []
    for i, obj in enumerate(raw_nodes):
        if obj["id"] != i:
            raise HinError(f"graph file node ids must be dense and ordered, got {obj['id']} at {i}")
        if obj["kind"] not in schema.ENTITY_KINDS:
            raise HinError(f"unknown node kind {obj['kind']!r}")
        nodes.append(Node(id=i, kind=obj["kind"], token=obj["token"], context=obj.get("context")))
    edges = [Edge(src=e["src"], dst=e["dst"], rel=e["rel"]) for e in doc["edges"]]
    for e in edges:
        if not (0 <= e.src < len(nodes) and 0 <= e.dst < len(nodes)):
            raise HinError(f"edge {e} references a missing node")
    rels = {e.rel for e in edges}
    view = schema.CF_VIEW
    for candidate, allowed in schema.VIEW_RELATIONS.items():
        if rels.issubset(allowed):
            view = candidate
            break
    else:
        raise HinError(f"edge relations {sorted(rels)} fit no single view")
    h = Hin(nodes=nodes, edges=edges, view=view)
    bad = validate_schema(h)
    if bad:
        raise HinError("invalid graph file: " + "; ".join(bad[:5]))
    return h
