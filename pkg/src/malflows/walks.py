"""Meta-path-group-guided random walks over a refined view graph.

A walker starting at an app draws one of the group's meta-paths and follows
it edge-kind by edge-kind; whenever it lands on an app node it redraws the
meta-path. At app nodes the target-kind probability mass is mu/|group| for
the mu meta-paths whose first step reaches that kind, split uniformly over
the neighbors of the kind; when every group member shares its first step
this collapses to a uniform choice among first-kind neighbors. A state with
no admissible successor ends the walk.
"""
from __future__ import annotations

import os
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import schema
from .hin import Hin
from .metapaths import MetaPathGroup


class WalkError(Exception):
    pass


@dataclass(frozen=True)
class WalkParams:
    walks_per_app: int = 10
    walk_length: int = 80  # node count
    seed: int = 0

    def __post_init__(self):
        if self.walks_per_app < 1:
            raise WalkError("walks_per_app must be >= 1")
        if self.walk_length < 2:
            raise WalkError("walk_length must be >= 2")


@dataclass(frozen=True)
class WalkState:
    node: int
    metapath_index: int  # index into group.members
    position: int        # index into the meta-path's node kinds

    def __post_init__(self):
        if self.position < 0:
            raise WalkError("position must be >= 0")


def _check_state(h: Hin, g: MetaPathGroup, s: WalkState) -> None:
    mp = g.members[s.metapath_index]
    if s.position >= len(mp.node_kinds):
        raise WalkError(f"position {s.position} outside {mp.name}")
    kind = h.node(s.node).kind
    if kind != mp.node_kinds[s.position]:
        raise WalkError(f"node kind {kind} does not match {mp.name}[{s.position}]")


def transition_distribution(h: Hin, g: MetaPathGroup, s: WalkState) -> list[tuple[int, float]]:
    """Next-node probabilities for a walk state; empty means termination.

    At an app node the meta-path is redrawn, so the distribution mixes over
    group members; mass of first-step kinds with no neighbors is
    renormalized over the available ones. Mid-path the choice is uniform
    over neighbors reachable by the meta-path's next step.
    """
    _check_state(h, g, s)
    node = h.node(s.node)
    if node.kind == schema.APP:
        # by-kind weights: mu/|group| per distinct first-step target kind
        kind_weight: dict[tuple[str, str], float] = {}
        for mp in g.members:
            step = mp.relations[0]
            kind_weight[step] = kind_weight.get(step, 0.0) + 1.0 / len(g.members)
        probs: dict[int, float] = {}
        total = 0.0
        for (rel, direction), w in sorted(kind_weight.items()):
            nbrs = h.neighbors(s.node, rel, direction)
            if not nbrs:
                continue
            total += w
            for v in nbrs:
                probs[v] = probs.get(v, 0.0) + w / len(nbrs)
        if not probs:
            return []
        return [(v, p / total) for v, p in sorted(probs.items())]

    mp = g.members[s.metapath_index]
    if s.position >= len(mp.relations):
        return []
    rel, direction = mp.relations[s.position]
    nbrs = h.neighbors(s.node, rel, direction)
    if not nbrs:
        return []
    p = 1.0 / len(nbrs)
    return [(v, p) for v in nbrs]


def _walk_stream_seed(master_seed: int, app_index: int, walk_index: int) -> int:
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(app_index, walk_index))
    state = ss.generate_state(2)
    return int(state[0]) << 32 | int(state[1])


def _sample_one(h: Hin, g: MetaPathGroup, start: int, length: int,
                rng: random.Random) -> tuple[list[int], list[int]]:
    """One walk as (node ids, meta-path index drawn at each app visit)."""
    walk = [start]
    trace: list[int] = []
    mp_idx = 0
    pos = 0
    while len(walk) < length:
        node = h.node(walk[-1])
        if node.kind == schema.APP:
            # redraw among members whose first step has a neighbor here
            available = []
            for i, mp in enumerate(g.members):
                rel, direction = mp.relations[0]
                if h.neighbors(walk[-1], rel, direction):
                    available.append(i)
            if not available:
                break
            mp_idx = available[rng.randrange(len(available))]
            pos = 0
            trace.append(mp_idx)
        mp = g.members[mp_idx]
        rel, direction = mp.relations[pos]
        nbrs = h.neighbors(walk[-1], rel, direction)
        if not nbrs:
            break
        walk.append(nbrs[rng.randrange(len(nbrs))])
        pos += 1
        if pos == len(mp.relations):
            pos = 0  # landed on an app; next loop iteration redraws
    return walk, trace


def _sample_app_range(h: Hin, g: MetaPathGroup, p: WalkParams,
                      app_ids: list[int], offset: int) -> list[tuple[list[int], list[int]]]:
    out = []
    for i, app in enumerate(app_ids):
        app_index = offset + i
        for w in range(p.walks_per_app):
            rng = random.Random(_walk_stream_seed(p.seed, app_index, w))
            out.append(_sample_one(h, g, app, p.walk_length, rng))
    return out


def effective_threads(requested: int | None = None) -> int:
    cap = os.environ.get("MALFLOWS_THREADS")
    n = requested if requested is not None else 1
    if cap is not None:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise WalkError(f"MALFLOWS_THREADS must be an integer, got {cap!r}")
    return max(1, n)


def sample_walks_nodes(h: Hin, g: MetaPathGroup, p: WalkParams,
                       threads: int | None = None) -> list[tuple[list[int], list[int]]]:
    """All walks as node-id sequences with their meta-path traces.

    walks_per_app walks start at every app node; a walk stops at
    walk_length nodes or at a state with no successor. Output order is
    (app position, walk index) and is identical for any thread count: each
    (app, walk) pair has its own RNG stream derived from the master seed.
    """
    if g.view != h.view:
        raise WalkError(f"group {g.name} is for view {g.view!r}, graph is {h.view!r}")
    apps = [n.id for n in h.app_nodes()]
    threads = effective_threads(threads)
    if threads <= 1 or len(apps) < 2 * threads:
        return _sample_app_range(h, g, p, apps, 0)
    chunk = (len(apps) + threads - 1) // threads
    ranges = [(apps[i:i + chunk], i) for i in range(0, len(apps), chunk)]
    results: list[list[tuple[list[int], list[int]]]] = []
    with ProcessPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(_sample_app_range, h, g, p, ids, off) for ids, off in ranges]
        for fut in futures:
            results.append(fut.result())
    return [walk for part in results for walk in part]


def sample_walks(h: Hin, g: MetaPathGroup, p: WalkParams,
                 threads: int | None = None) -> list[list[str]]:
    """Token walks for skip-gram; clones emit their parent token."""
    out = []
    for nodes, _trace in sample_walks_nodes(h, g, p, threads=threads):
        if len(nodes) >= 2:
            out.append([h.node(i).token for i in nodes])
    return out


def walk_conforms(walk: list[int], g: MetaPathGroup, h: Hin) -> tuple[bool, int | None]:
    """True iff the walk factors into consecutive group meta-path segments.

    The final segment may be truncated. Returns (ok, first_violation_index);
    the index is the furthest node position any valid factorization reaches.
    """
    if not walk:
        return False, 0
    if h.node(walk[0]).kind != schema.APP:
        return False, 0

    n = len(walk)
    best_fail = 0

    def match_from(i: int) -> bool:
        # walk[i] is an app node starting a fresh segment
        nonlocal best_fail
        if i == n - 1:
            return True
        ok = False
        for mp in g.members:
            j = i
            good = True
            for rel, direction in mp.relations:
                if j + 1 >= n:
                    break  # truncated tail is fine
                nxt = walk[j + 1]
                want_kind = mp.node_kinds[j - i + 1]
                if h.node(nxt).kind != want_kind or nxt not in h.neighbors(walk[j], rel, direction):
                    good = False
                    best_fail = max(best_fail, j + 1)
                    break
                j += 1
            if not good:
                continue
            if j == n - 1:
                ok = True
                break
            if match_from(j):
                ok = True
                break
        return ok

    if match_from(0):
        return True, None
    return False, best_fail


def escape_token(token: str) -> str:
    """Percent-escape the characters that would break the walk file format."""
    return (token.replace("%", "%25").replace(" ", "%20")
            .replace("\t", "%09").replace("\n", "%0A").replace("\r", "%0D"))


def unescape_token(token: str) -> str:
    return (token.replace("%0D", "\r").replace("%0A", "\n").replace("%09", "\t")
            .replace("%20", " ").replace("%25", "%"))


def save_walks(walks: list[list[str]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for walk in walks:
            fh.write(" ".join(escape_token(t) for t in walk) + "\n")


def load_walks(path) -> list[list[str]]:
    walks = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line:
                walks.append([unescape_token(t) for t in line.split(" ")])
    return walks
