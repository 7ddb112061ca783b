"""Entity kinds and relation signatures of the typed flow graph.

The graph has five entity kinds and seven relations. Each relation is stored
once in its forward direction; traversal may follow either direction.
"""
from __future__ import annotations

APP = "App"
CONDITION = "Condition"
API = "API"
ACTION = "Action"
COMPONENT = "Component"

ENTITY_KINDS = (APP, CONDITION, API, ACTION, COMPONENT)

INCLUDE = "include"
TRIGGER = "trigger"
USE = "use"
FLOW = "flow"
SET = "set"
DECLARE = "declare"
INITIATE = "initiate"

# relation -> (source kind, target kind)
RELATION_SIGNATURES: dict[str, tuple[str, str]] = {
    INCLUDE: (APP, CONDITION),
    TRIGGER: (CONDITION, API),
    USE: (APP, API),
    FLOW: (API, API),
    SET: (APP, ACTION),
    DECLARE: (APP, COMPONENT),
    INITIATE: (COMPONENT, ACTION),
}

RELATIONS = tuple(RELATION_SIGNATURES)

FWD = "fwd"
REV = "rev"

CF_VIEW = "cf"
DF_VIEW = "df"
ICC_VIEW = "icc"
VIEWS = (CF_VIEW, DF_VIEW, ICC_VIEW)

# walkable relations per view
VIEW_RELATIONS: dict[str, tuple[str, ...]] = {
    CF_VIEW: (INCLUDE, TRIGGER),
    DF_VIEW: (USE, FLOW),
    ICC_VIEW: (SET, DECLARE, INITIATE),
}

COMPONENT_KINDS = ("activity", "service", "receiver", "provider")


def step_signature(relation: str, direction: str) -> tuple[str, str]:
    """(from kind, to kind) of one traversal step."""
    src, dst = RELATION_SIGNATURES[relation]
    if direction == FWD:
        return src, dst
    if direction == REV:
        return dst, src
    raise ValueError(f"unknown direction {direction!r}")
