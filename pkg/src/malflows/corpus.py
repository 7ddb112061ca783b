"""Flow-record ingestion: parse, validate, intern, and derive the seven relations.

Input is one JSON object per line (records.jsonl). Each record carries an
app's extracted flow features in three views: guarded trigger conditions
(control flow), source->sink API pairs (data flow), and declared components
with their Intent actions (ICC).
"""
from __future__ import annotations

import csv
import json
import re
import warnings
from dataclasses import dataclass, field

from . import schema


class CorpusError(Exception):
    """Base error for record ingestion."""


class ParseError(CorpusError):
    """Line is not valid JSON."""

    def __init__(self, msg: str, line_no: int | None = None, offset: int | None = None):
        loc = ""
        if line_no is not None:
            loc += f" at line {line_no}"
        if offset is not None:
            loc += f" (offset {offset})"
        super().__init__(msg + loc)
        self.line_no = line_no
        self.offset = offset


class SchemaError(CorpusError):
    """Record violates the field schema."""

    def __init__(self, msg: str, line_no: int | None = None):
        super().__init__(msg if line_no is None else f"{msg} at line {line_no}")
        self.line_no = line_no


_PERIOD_RE = re.compile(r"^\d{4}-\d{2}$")

_RECORD_FIELDS = {"app_id", "label", "period", "conditions", "dataflows", "icc", "extra_actions"}
_CONDITION_FIELDS = {"semantic", "guarded_apis"}
_DATAFLOW_FIELDS = {"source", "sink"}
_ICC_FIELDS = {"component", "kind", "actions"}


@dataclass
class Condition:
    semantic: str
    guarded_apis: list[str] = field(default_factory=list)


@dataclass
class DataFlow:
    source: str
    sink: str


@dataclass
class IccEntry:
    component: str
    kind: str
    actions: list[str] = field(default_factory=list)


@dataclass
class AppFlowRecord:
    """One app's flow features plus optional label and time period."""

    app_id: str
    label: int | None = None
    period: str | None = None
    conditions: list[Condition] = field(default_factory=list)
    dataflows: list[DataFlow] = field(default_factory=list)
    icc: list[IccEntry] = field(default_factory=list)
    extra_actions: list[str] = field(default_factory=list)

    def to_json_obj(self) -> dict:
        obj: dict = {"app_id": self.app_id}
        if self.label is not None:
            obj["label"] = self.label
        if self.period is not None:
            obj["period"] = self.period
        obj["conditions"] = [
            {"semantic": c.semantic, "guarded_apis": list(c.guarded_apis)} for c in self.conditions
        ]
        obj["dataflows"] = [{"source": f.source, "sink": f.sink} for f in self.dataflows]
        obj["icc"] = [
            {"component": e.component, "kind": e.kind, "actions": list(e.actions)} for e in self.icc
        ]
        obj["extra_actions"] = list(self.extra_actions)
        return obj


def _dedup(items: list[str]) -> list[str]:
    # keep first occurrence order
    seen: set[str] = set()
    out = []
    for x in items:
        if x not in seen:
            seen.add(x)
            out.append(x)
    return out


def _want_str(value, what: str) -> str:
    if not isinstance(value, str):
        raise SchemaError(f"{what} must be a string, got {type(value).__name__}")
    return value.strip()


def _want_list(value, what: str) -> list:
    if not isinstance(value, list):
        raise SchemaError(f"{what} must be a list, got {type(value).__name__}")
    return value


def _check_unknown(obj: dict, allowed: set[str], where: str, strict: bool) -> None:
    unknown = set(obj) - allowed
    if unknown and strict:
        raise SchemaError(f"unknown field(s) {sorted(unknown)} in {where}")


def parse_record_obj(obj: dict, strict: bool = False) -> AppFlowRecord:
    if not isinstance(obj, dict):
        raise SchemaError("record must be an object")
    _check_unknown(obj, _RECORD_FIELDS, "record", strict)

    if "app_id" not in obj:
        raise SchemaError("missing required field app_id")
    app_id = _want_str(obj["app_id"], "app_id")
    if not app_id:
        raise SchemaError("app_id must be nonempty")

    label = obj.get("label")
    if label is not None:
        if label not in (0, 1) or isinstance(label, bool):
            raise SchemaError(f"label must be 0 or 1, got {label!r}")
        label = int(label)

    period = obj.get("period")
    if period is not None:
        period = _want_str(period, "period")
        if period == "":
            period = None
        elif not _PERIOD_RE.match(period):
            raise SchemaError(f"period must be YYYY-MM, got {period!r}")

    conditions = []
    for i, c in enumerate(_want_list(obj.get("conditions", []), "conditions")):
        if not isinstance(c, dict):
            raise SchemaError(f"conditions[{i}] must be an object")
        _check_unknown(c, _CONDITION_FIELDS, f"conditions[{i}]", strict)
        semantic = _want_str(c.get("semantic", ""), f"conditions[{i}].semantic")
        if not semantic:
            raise SchemaError(f"conditions[{i}] has empty semantic")
        apis = [_want_str(a, f"conditions[{i}].guarded_apis entry")
                for a in _want_list(c.get("guarded_apis", []), f"conditions[{i}].guarded_apis")]
        if any(not a for a in apis):
            raise SchemaError(f"conditions[{i}] has an empty guarded API signature")
        conditions.append(Condition(semantic=semantic, guarded_apis=_dedup(apis)))

    dataflows = []
    seen_pairs: set[tuple[str, str]] = set()
    for i, f in enumerate(_want_list(obj.get("dataflows", []), "dataflows")):
        if not isinstance(f, dict):
            raise SchemaError(f"dataflows[{i}] must be an object")
        _check_unknown(f, _DATAFLOW_FIELDS, f"dataflows[{i}]", strict)
        source = _want_str(f.get("source", ""), f"dataflows[{i}].source")
        sink = _want_str(f.get("sink", ""), f"dataflows[{i}].sink")
        if not source or not sink:
            raise SchemaError(f"dataflows[{i}] needs nonempty source and sink")
        if (source, sink) not in seen_pairs:
            seen_pairs.add((source, sink))
            dataflows.append(DataFlow(source=source, sink=sink))

    icc = []
    for i, e in enumerate(_want_list(obj.get("icc", []), "icc")):
        if not isinstance(e, dict):
            raise SchemaError(f"icc[{i}] must be an object")
        _check_unknown(e, _ICC_FIELDS, f"icc[{i}]", strict)
        component = _want_str(e.get("component", ""), f"icc[{i}].component")
        if not component:
            raise SchemaError(f"icc[{i}] has empty component name")
        kind = _want_str(e.get("kind", ""), f"icc[{i}].kind")
        if kind not in schema.COMPONENT_KINDS:
            raise SchemaError(f"icc[{i}] has unknown component kind {kind!r}")
        actions = [_want_str(a, f"icc[{i}].actions entry")
                   for a in _want_list(e.get("actions", []), f"icc[{i}].actions")]
        if any(not a for a in actions):
            raise SchemaError(f"icc[{i}] has an empty action string")
        icc.append(IccEntry(component=component, kind=kind, actions=_dedup(actions)))

    extra = [_want_str(a, "extra_actions entry")
             for a in _want_list(obj.get("extra_actions", []), "extra_actions")]
    if any(not a for a in extra):
        raise SchemaError("extra_actions has an empty action string")

    return AppFlowRecord(
        app_id=app_id,
        label=label,
        period=period,
        conditions=conditions,
        dataflows=dataflows,
        icc=icc,
        extra_actions=_dedup(extra),
    )


def parse_record_line(line: str, strict: bool = False) -> AppFlowRecord:
    """Parse one records.jsonl line into a validated, canonicalized record."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ParseError(f"malformed record: {e.msg}", offset=e.pos) from e
    return parse_record_obj(obj, strict=strict)


def load_corpus(path, strict: bool = False) -> list[AppFlowRecord]:
    """Load records.jsonl; duplicate app_ids are an error naming both lines."""
    records: list[AppFlowRecord] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = parse_record_line(line, strict=strict)
            except ParseError as e:
                raise ParseError(str(e), line_no=line_no) from e
            except SchemaError as e:
                raise SchemaError(str(e), line_no=line_no) from e
            if rec.app_id in seen:
                raise SchemaError(
                    f"duplicate app_id {rec.app_id!r} on lines {seen[rec.app_id]} and {line_no}"
                )
            seen[rec.app_id] = line_no
            records.append(rec)
    return records


def save_corpus(records: list[AppFlowRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json_obj(), sort_keys=True) + "\n")


def load_labels(path) -> dict[str, tuple[int, str | None]]:
    """labels.csv -> {app_id: (label, period)}. Header: app_id,label,period."""
    out: dict[str, tuple[int, str | None]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"app_id", "label", "period"}
        if reader.fieldnames is None or not need.issubset(reader.fieldnames):
            raise SchemaError(f"labels file must have header app_id,label,period, got {reader.fieldnames}")
        for row_no, row in enumerate(reader, start=2):
            app_id = row["app_id"].strip()
            if not app_id:
                raise SchemaError(f"empty app_id in labels row {row_no}")
            if app_id in out:
                raise SchemaError(f"duplicate app_id {app_id!r} in labels file")
            if row["label"] not in ("0", "1"):
                raise SchemaError(f"label must be 0 or 1, got {row['label']!r} in row {row_no}")
            period = row["period"].strip() or None
            if period is not None and not _PERIOD_RE.match(period):
                raise SchemaError(f"period must be YYYY-MM or empty, got {period!r} in row {row_no}")
            out[app_id] = (int(row["label"]), period)
    return out


def save_labels(labels: dict[str, tuple[int, str | None]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["app_id", "label", "period"])
        for app_id in sorted(labels):
            label, period = labels[app_id]
            writer.writerow([app_id, label, period or ""])


def apply_labels(records: list[AppFlowRecord], labels: dict[str, tuple[int, str | None]]) -> None:
    """Merge labels into records in place; inline values must not conflict."""
    for rec in records:
        if rec.app_id not in labels:
            continue
        label, period = labels[rec.app_id]
        if rec.label is not None and rec.label != label:
            raise SchemaError(f"conflicting labels for {rec.app_id!r}: {rec.label} vs {label}")
        rec.label = label
        if period is not None:
            if rec.period is not None and rec.period != period:
                raise SchemaError(f"conflicting periods for {rec.app_id!r}: {rec.period} vs {period}")
            rec.period = period


class EntityTable:
    """Per-kind bidirectional token<->id interning with dense ids."""

    def __init__(self):
        self._token_to_id: dict[str, dict[str, int]] = {k: {} for k in schema.ENTITY_KINDS}
        self._id_to_token: dict[str, list[str]] = {k: [] for k in schema.ENTITY_KINDS}

    def intern(self, kind: str, token: str) -> int:
        table = self._token_to_id[kind]
        idx = table.get(token)
        if idx is None:
            idx = len(table)
            table[token] = idx
            self._id_to_token[kind].append(token)
        return idx

    def id_of(self, kind: str, token: str) -> int:
        return self._token_to_id[kind][token]

    def token_of(self, kind: str, idx: int) -> str:
        return self._id_to_token[kind][idx]

    def has(self, kind: str, token: str) -> bool:
        return token in self._token_to_id[kind]

    def count(self, kind: str) -> int:
        return len(self._id_to_token[kind])

    def tokens(self, kind: str) -> list[str]:
        return list(self._id_to_token[kind])


@dataclass
class RelationSet:
    """The seven binary relations as sorted id-pair lists plus the context ledger.

    The ledger keeps which app generated each action pair, which is what the
    graph refinement oracle replays. All ids index into `entities`.
    """

    entities: EntityTable
    include: list[tuple[int, int]]   # (App, Condition)
    trigger: list[tuple[int, int]]   # (Condition, API)
    use: list[tuple[int, int]]       # (App, API)
    flow: list[tuple[int, int]]      # (API, API)
    set_: list[tuple[int, int]]      # (App, Action)
    declare: list[tuple[int, int]]   # (App, Component)
    initiate: list[tuple[int, int]]  # (Component, Action)
    trigger_ledger: list[tuple[int, int, int]]   # (App, Condition, API)
    flow_ledger: list[tuple[int, int, int]]      # (App, API, API)
    initiate_ledger: list[tuple[int, int, int]]  # (App, Component, Action)

    def pairs(self, relation: str) -> list[tuple[int, int]]:
        return {
            schema.INCLUDE: self.include,
            schema.TRIGGER: self.trigger,
            schema.USE: self.use,
            schema.FLOW: self.flow,
            schema.SET: self.set_,
            schema.DECLARE: self.declare,
            schema.INITIATE: self.initiate,
        }[relation]

    def ledger(self, relation: str) -> list[tuple[int, int, int]]:
        return {
            schema.TRIGGER: self.trigger_ledger,
            schema.FLOW: self.flow_ledger,
            schema.INITIATE: self.initiate_ledger,
        }[relation]


def build_relations(corpus: list[AppFlowRecord]) -> tuple[EntityTable, RelationSet]:
    """Populate the relation pair lists and the per-app context ledger.

    Guarded APIs are entered into the app-use-API relation as well: the
    refinement constraint connects apps to the APIs their conditions guard,
    and an invocation under a condition is a use.
    """
    ent = EntityTable()
    include: set[tuple[int, int]] = set()
    trigger: set[tuple[int, int]] = set()
    use: set[tuple[int, int]] = set()
    flow: set[tuple[int, int]] = set()
    set_rel: set[tuple[int, int]] = set()
    declare: set[tuple[int, int]] = set()
    initiate: set[tuple[int, int]] = set()
    trigger_ledger: set[tuple[int, int, int]] = set()
    flow_ledger: set[tuple[int, int, int]] = set()
    initiate_ledger: set[tuple[int, int, int]] = set()

    for rec in corpus:
        app = ent.intern(schema.APP, rec.app_id)
        for cond in rec.conditions:
            c = ent.intern(schema.CONDITION, cond.semantic)
            include.add((app, c))
            for api_tok in cond.guarded_apis:
                a = ent.intern(schema.API, api_tok)
                trigger.add((c, a))
                trigger_ledger.add((app, c, a))
                use.add((app, a))
        for df in rec.dataflows:
            s = ent.intern(schema.API, df.source)
            k = ent.intern(schema.API, df.sink)
            use.add((app, s))
            use.add((app, k))
            flow.add((s, k))
            flow_ledger.add((app, s, k))
        for entry in rec.icc:
            comp = ent.intern(schema.COMPONENT, entry.component)
            declare.add((app, comp))
            for act_tok in entry.actions:
                act = ent.intern(schema.ACTION, act_tok)
                initiate.add((comp, act))
                initiate_ledger.add((app, comp, act))
                set_rel.add((app, act))
        for act_tok in rec.extra_actions:
            act = ent.intern(schema.ACTION, act_tok)
            set_rel.add((app, act))

    rel = RelationSet(
        entities=ent,
        include=sorted(include),
        trigger=sorted(trigger),
        use=sorted(use),
        flow=sorted(flow),
        set_=sorted(set_rel),
        declare=sorted(declare),
        initiate=sorted(initiate),
        trigger_ledger=sorted(trigger_ledger),
        flow_ledger=sorted(flow_ledger),
        initiate_ledger=sorted(initiate_ledger),
    )
    return ent, rel


STAT_CLASSES = ("conditions", "guarded_apis", "sources", "sinks", "component_kinds", "actions")


def corpus_stats(corpus: list[AppFlowRecord], k: int) -> dict[str, list[dict]]:
    """Top-k occurrence tables per element class with per-label counts.

    Counts are occurrences over records (a semantic appearing in two
    conditions of one app counts twice). Entries are ranked by total count
    descending, then token ascending; unlabeled records are skipped.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    counts: dict[str, dict[str, list[int]]] = {cls: {} for cls in STAT_CLASSES}

    def bump(cls: str, token: str, label: int, n: int = 1) -> None:
        entry = counts[cls].setdefault(token, [0, 0])
        entry[label] += n

    skipped = 0
    for rec in corpus:
        if rec.label is None:
            skipped += 1
            continue
        lab = rec.label
        for cond in rec.conditions:
            bump("conditions", cond.semantic, lab)
            for api in cond.guarded_apis:
                bump("guarded_apis", api, lab)
        for df in rec.dataflows:
            bump("sources", df.source, lab)
            bump("sinks", df.sink, lab)
        for entry in rec.icc:
            bump("component_kinds", entry.kind, lab)
            for act in entry.actions:
                bump("actions", act, lab)
        for act in rec.extra_actions:
            bump("actions", act, lab)
    if skipped:
        warnings.warn(f"corpus_stats skipped {skipped} unlabeled record(s)")

    out: dict[str, list[dict]] = {}
    for cls, table in counts.items():
        ranked = sorted(table.items(), key=lambda kv: (-(kv[1][0] + kv[1][1]), kv[0]))
        out[cls] = [
            {"token": tok, "benign_count": ben, "malware_count": mal}
            for tok, (ben, mal) in ranked[:k]
        ]
    return out
