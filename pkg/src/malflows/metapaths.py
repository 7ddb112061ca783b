"""Meta-path and meta-path-group definitions over the flow graph schema.

Six built-in meta-paths come in three groups, one group per view. Each group
pairs a short content-oriented path (apps sharing an entity) with a longer
action-oriented path (apps linked through what the shared entity does).
Relation steps are written "include" for forward and "include^-1" for the
reverse traversal.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from . import schema
from .schema import FWD, REV


class MetaPathError(Exception):
    pass


def parse_step(text: str) -> tuple[str, str]:
    if text.endswith("^-1"):
        return text[:-3], REV
    return text, FWD


def format_step(step: tuple[str, str]) -> str:
    rel, direction = step
    return rel + ("^-1" if direction == REV else "")


@dataclass(frozen=True)
class MetaPath:
    name: str
    node_kinds: tuple[str, ...]
    relations: tuple[tuple[str, str], ...]  # (relation, direction) steps
    orientation: str  # "content" or "action"

    def __len__(self) -> int:
        return len(self.relations)


@dataclass(frozen=True)
class MetaPathGroup:
    name: str
    content: MetaPath
    action: MetaPath
    view: str

    @property
    def members(self) -> tuple[MetaPath, ...]:
        return (self.content, self.action)


def validate_metapath(mp: MetaPath) -> list[str]:
    """Empty list iff the path is well-formed against the fixed schema."""
    violations = []
    if len(mp.relations) != len(mp.node_kinds) - 1:
        violations.append(
            f"{mp.name}: {len(mp.relations)} steps do not fit {len(mp.node_kinds)} kinds"
        )
        return violations
    if len(mp.node_kinds) < 2:
        violations.append(f"{mp.name}: needs at least two kinds")
        return violations
    if mp.node_kinds[0] != schema.APP:
        violations.append(f"{mp.name}: must start at {schema.APP}, starts at {mp.node_kinds[0]}")
    if mp.node_kinds[-1] != schema.APP:
        violations.append(f"{mp.name}: must end at {schema.APP}, ends at {mp.node_kinds[-1]}")
    for i, step in enumerate(mp.relations):
        rel, direction = step
        if rel not in schema.RELATION_SIGNATURES:
            violations.append(f"{mp.name}: step {i} has unknown relation {rel!r}")
            continue
        want = (mp.node_kinds[i], mp.node_kinds[i + 1])
        got = schema.step_signature(rel, direction)
        if want != got:
            violations.append(
                f"{mp.name}: step {i} ({format_step(step)}) connects {got[0]}->{got[1]}, "
                f"path has {want[0]}->{want[1]}"
            )
    if mp.orientation not in ("content", "action"):
        violations.append(f"{mp.name}: orientation must be content or action")
    return violations


def _mp(name: str, kinds: list[str], steps: list[str], orientation: str) -> MetaPath:
    mp = MetaPath(
        name=name,
        node_kinds=tuple(kinds),
        relations=tuple(parse_step(s) for s in steps),
        orientation=orientation,
    )
    bad = validate_metapath(mp)
    if bad:
        raise MetaPathError("; ".join(bad))
    return mp


MP1 = _mp("MP1", [schema.APP, schema.CONDITION, schema.APP],
          ["include", "include^-1"], "content")
MP2 = _mp("MP2", [schema.APP, schema.CONDITION, schema.API, schema.CONDITION, schema.APP],
          ["include", "trigger", "trigger^-1", "include^-1"], "action")
MP3 = _mp("MP3", [schema.APP, schema.API, schema.APP],
          ["use", "use^-1"], "content")
MP4 = _mp("MP4", [schema.APP, schema.API, schema.API, schema.APP],
          ["use", "flow", "use^-1"], "action")
MP5 = _mp("MP5", [schema.APP, schema.ACTION, schema.APP],
          ["set", "set^-1"], "content")
MP6 = _mp("MP6", [schema.APP, schema.COMPONENT, schema.ACTION, schema.COMPONENT, schema.APP],
          ["declare", "initiate", "initiate^-1", "declare^-1"], "action")

BUILTIN_METAPATHS = {mp.name: mp for mp in (MP1, MP2, MP3, MP4, MP5, MP6)}


def builtin_groups() -> list[MetaPathGroup]:
    return [
        MetaPathGroup("MPG1", content=MP1, action=MP2, view=schema.CF_VIEW),
        MetaPathGroup("MPG2", content=MP3, action=MP4, view=schema.DF_VIEW),
        MetaPathGroup("MPG3", content=MP5, action=MP6, view=schema.ICC_VIEW),
    ]


BUILTIN_GROUPS = {g.name: g for g in builtin_groups()}


def view_of_metapath(mp: MetaPath) -> str:
    """View whose walkable relations cover every step of the path."""
    rels = {rel for rel, _ in mp.relations}
    for view, allowed in schema.VIEW_RELATIONS.items():
        if rels.issubset(allowed):
            return view
    raise MetaPathError(f"{mp.name}: steps {sorted(rels)} fit no single view")


def single_path_group(mp: MetaPath) -> MetaPathGroup:
    """Wrap one meta-path as a one-member group (ablation runs).

    Content and action slots both point at the same path; walk code treats
    the member list as a set of size one.
    """
    return MetaPathGroup(f"{mp.name}-only", content=mp, action=mp, view=view_of_metapath(mp))


def load_metapath_config(path) -> list[MetaPathGroup]:
    """Optional config: list of {name, kinds, relations, orientation, group}.

    Each named group must contribute exactly one content and one action path.
    """
    with open(path, encoding="utf-8") as fh:
        entries = json.load(fh)
    if not isinstance(entries, list):
        raise MetaPathError("meta-path config must be a JSON list")
    by_group: dict[str, dict[str, MetaPath]] = {}
    for i, e in enumerate(entries):
        for key in ("name", "kinds", "relations", "orientation", "group"):
            if key not in e:
                raise MetaPathError(f"config entry {i} missing {key!r}")
        mp = MetaPath(
            name=str(e["name"]),
            node_kinds=tuple(e["kinds"]),
            relations=tuple(parse_step(s) for s in e["relations"]),
            orientation=str(e["orientation"]),
        )
        bad = validate_metapath(mp)
        if bad:
            raise MetaPathError("; ".join(bad))
        slot = by_group.setdefault(str(e["group"]), {})
        if mp.orientation in slot:
            raise MetaPathError(f"group {e['group']} has two {mp.orientation} paths")
        slot[mp.orientation] = mp
    groups = []
    for gname in sorted(by_group):
        slot = by_group[gname]
        if set(slot) != {"content", "action"}:
            raise MetaPathError(f"group {gname} needs one content and one action path")
        view = view_of_metapath(slot["action"])
        if view_of_metapath(slot["content"]) != view:
            raise MetaPathError(f"group {gname} mixes views")
        groups.append(MetaPathGroup(gname, content=slot["content"], action=slot["action"], view=view))
    return groups


def resolve_group(name: str) -> MetaPathGroup:
    """Accept a builtin group name (MPG1) or a single meta-path name (MP2)."""
    if name in BUILTIN_GROUPS:
        return BUILTIN_GROUPS[name]
    if name in BUILTIN_METAPATHS:
        return single_path_group(BUILTIN_METAPATHS[name])
    raise MetaPathError(f"unknown meta-path or group {name!r}")


def enumerate_instances(h, mp: MetaPath, cap: int) -> tuple[list[list[int]], bool]:
    """All node-id instances of mp in h, deterministic order, truncated at cap.

    Nodes may repeat across positions (a length-2 content path instance may
    return to its start app). Returns (paths, truncated).
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    paths: list[list[int]] = []
    truncated = False
    starts = [n.id for n in h.nodes if n.kind == mp.node_kinds[0]]

    def extend(prefix: list[int], pos: int) -> bool:
        nonlocal truncated
        if pos == len(mp.relations):
            if len(paths) >= cap:
                truncated = True
                return False
            paths.append(list(prefix))
            return True
        rel, direction = mp.relations[pos]
        for nxt in h.neighbors(prefix[-1], rel, direction):
            prefix.append(nxt)
            ok = extend(prefix, pos + 1)
            prefix.pop()
            if not ok:
                return False
        return True

    for start in starts:
        if not extend([start], 0):
            break
    return paths, truncated
