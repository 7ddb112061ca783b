"""Labeled synthetic flow corpora with class-conditional motif pools.

Every element family (condition semantics, guarded APIs, dataflow sources
and sinks, components, actions) has three token pools: shared, benign-only,
and malware-only. Each draw picks the class pool with probability `sep` and
the shared pool otherwise, so sep=0 gives identical class distributions and
sep=1 gives disjoint vocabularies. Within a pool, ranks are skewed so top
tokens dominate, echoing how a handful of categories and APIs dominate real
app corpora.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import AppFlowRecord, Condition, DataFlow, IccEntry


class SynthError(Exception):
    pass


# (shared, benign-only, malware-only) seed tokens per family. A token used by
# several families keeps one pool across all of them, so sep=1 corpora stay
# class-disjoint.
CONDITION_POOLS = (
    ["NO_CATEGORY", "FILE_INFORMATION", "NFC"],
    ["DATABASE_INFORMATION", "LOCATION_INFORMATION", "BLUETOOTH_INFORMATION",
     "CALENDAR_INFORMATION"],
    ["NETWORK_INFORMATION", "UNIQUE_IDENTIFIER", "ACCOUNT_INFORMATION"],
)
GUARDED_POOLS = (
    ["res.AssetManager.open", "res.Resources.getAssets", "HashMap.put",
     "String.startsWith", "Class.getName"],
    ["Activity.getIntent", "File.getPath", "File.getAbsolutePath", "File.getParentFile"],
    ["FileOutputStream.write", "File.getCanonicalPath", "URLConnection.setRequestProperty",
     "URLConnection.getInputStream", "HttpURLConnection.setRequestMethod",
     "Camera.setFlashMode"],
)
SOURCE_POOLS = (
    ["Class.getName", "HashMap.get", "reflect.Field.get", "ArrayList.get",
     "System.getProperty"],
    ["Hashtable.get", "Class.getSimpleName", "Array.newInstance", "ThreadLocal.get",
     "Class.getMethod"],
    ["Class.getDeclaredMethod", "GregorianCalendar.get", "SQLiteDatabase.query",
     "reflect.Array.get"],
)
SINK_POOLS = (
    ["HashMap.put", "String.substring", "String.startsWith"],
    ["reflect.Field.set", "Log.d", "Log.v", "StringBuffer.setLength", "ThreadLocal.set"],
    ["JSONObject.put", "URL.openConnection", "Camera.setPreviewSize",
     "FileOutputStream.write", "Log.w"],
)
COMPONENT_POOLS = (
    [("com.core.app.MainActivity", "activity"), ("com.core.app.SyncService", "service"),
     ("com.core.app.MediaProvider", "provider")],
    [("com.google.firebase.MessagingService", "service"),
     ("androidx.profile.SettingsActivity", "activity"),
     ("com.android.vending.ReferrerReceiver", "receiver")],
    [("com.push.sdk.CmdReceiver", "receiver"), ("com.push.sdk.DaemonService", "service"),
     ("com.adsdk.popup.OverlayActivity", "activity")],
)
ACTION_POOLS = (
    ["android.intent.action.VIEW", "android.intent.action.MAIN",
     "android.intent.action.BOOT_COMPLETED"],
    ["com.google.firebase.MESSAGING_EVENT", "com.google.android.c2dm.intent.RECEIVE",
     "android.intent.action.CHOOSER", "com.google.firebase.INSTANCE_ID_EVENT",
     "com.google.android.c2dm.intent.REGISTER", "com.android.vending.INSTALL_REFERRER"],
    ["android.net.conn.CONNECTIVITY_CHANGE", "android.intent.action.USER_PRESENT",
     "android.intent.action.PACKAGE_REMOVED", "android.intent.action.PACKAGE_ADDED",
     "android.intent.action.ACTION_POWER_CONNECTED", "com.taobao.accs.intent.action.RECEIVE"],
)

_COMPONENT_KIND_CYCLE = ("activity", "service", "receiver", "provider")


@dataclass(frozen=True)
class SynthSpec:
    n_apps: int
    malware_fraction: float = 0.5
    sep: float = 0.8
    seed: int = 0
    conditions_per_app: tuple[int, int] = (1, 4)
    apis_per_condition: tuple[int, int] = (1, 3)
    flows_per_app: tuple[int, int] = (2, 6)
    components_per_app: tuple[int, int] = (1, 3)
    actions_per_component: tuple[int, int] = (1, 3)
    extra_actions_per_app: tuple[int, int] = (0, 2)
    vocab_sizes: dict | None = None  # per family, padded/truncated around the seeds
    period_start: str = "2018-01"
    n_periods: int = 6

    def __post_init__(self):
        if self.n_apps < 1:
            raise SynthError("n_apps must be >= 1")
        if not 0.0 <= self.malware_fraction <= 1.0:
            raise SynthError("malware_fraction must be in [0, 1]")
        if not 0.0 <= self.sep <= 1.0:
            raise SynthError("sep must be in [0, 1]")
        for name in ("conditions_per_app", "apis_per_condition", "flows_per_app",
                     "components_per_app", "actions_per_component", "extra_actions_per_app"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise SynthError(f"bad range {name}={getattr(self, name)}")
        if self.n_periods < 1:
            raise SynthError("n_periods must be >= 1")
        if self.vocab_sizes is not None:
            for fam, size in self.vocab_sizes.items():
                if size < 2:
                    raise SynthError(f"vocab size for {fam} must be >= 2, got {size}")


class _Pool:
    """Shared/benign/malware token lists with rank-skewed sampling."""

    def __init__(self, pools: tuple[list, list, list], size: int | None, pad_prefix: str):
        shared, benign, malware = [list(p) for p in pools]
        if size is not None:
            current = len(shared) + len(benign) + len(malware)
            idx = 0
            targets = (shared, benign, malware)
            names = ("s", "b", "m")
            while current < size:
                slot = idx % 3
                token = f"{pad_prefix}.{names[slot]}{idx:03d}"
                if pad_prefix == "component":
                    targets[slot].append((token, _COMPONENT_KIND_CYCLE[idx % 4]))
                else:
                    targets[slot].append(token)
                idx += 1
                current += 1
            while current > size:
                # trim the longest list, never below one token
                longest = max(targets, key=len)
                if len(longest) <= 1:
                    break
                longest.pop()
                current -= 1
        self.shared = shared
        self.by_class = {0: benign, 1: malware}

    @staticmethod
    def _draw(items: list, rng: np.random.Generator):
        # rank skew: weight of item i proportional to 1/(i+1)
        weights = 1.0 / (np.arange(len(items)) + 1.0)
        cum = np.cumsum(weights / weights.sum())
        return items[int(np.searchsorted(cum, rng.random(), side="right").clip(0, len(items) - 1))]

    def draw(self, label: int, sep: float, rng: np.random.Generator):
        class_pool = self.by_class[label]
        if class_pool and rng.random() < sep:
            return self._draw(class_pool, rng)
        if self.shared:
            return self._draw(self.shared, rng)
        return self._draw(class_pool, rng)


def _months(start: str, n: int) -> list[str]:
    year, month = int(start[:4]), int(start[5:7])
    out = []
    for _ in range(n):
        out.append(f"{year:04d}-{month:02d}")
        month += 1
        if month > 12:
            month = 1
            year += 1
    return out


def generate_corpus(spec: SynthSpec) -> tuple[list[AppFlowRecord], dict[str, tuple[int, str | None]]]:
    """Deterministic corpus plus {app_id: (label, period)} truth labels."""
    sizes = spec.vocab_sizes or {}
    pools = {
        "conditions": _Pool(CONDITION_POOLS, sizes.get("conditions"), "cond"),
        "guarded_apis": _Pool(GUARDED_POOLS, sizes.get("guarded_apis"), "api.guard"),
        "sources": _Pool(SOURCE_POOLS, sizes.get("sources"), "api.src"),
        "sinks": _Pool(SINK_POOLS, sizes.get("sinks"), "api.sink"),
        "components": _Pool(COMPONENT_POOLS, sizes.get("components"), "component"),
        "actions": _Pool(ACTION_POOLS, sizes.get("actions"), "action"),
    }
    periods = _months(spec.period_start, spec.n_periods)

    n_mal = int(round(spec.n_apps * spec.malware_fraction))
    label_rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(entropy=spec.seed, spawn_key=(1,))))
    order = label_rng.permutation(spec.n_apps)
    labels_by_index = np.zeros(spec.n_apps, dtype=np.int64)
    labels_by_index[order[:n_mal]] = 1

    def rint(rng, lohi: tuple[int, int]) -> int:
        lo, hi = lohi
        return int(rng.integers(lo, hi + 1))

    records = []
    labels: dict[str, tuple[int, str | None]] = {}
    for i in range(spec.n_apps):
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(entropy=spec.seed, spawn_key=(2, i))))
        app_id = f"app{i:05d}"
        label = int(labels_by_index[i])
        period = periods[int(rng.integers(0, len(periods)))]

        conditions = []
        for _ in range(rint(rng, spec.conditions_per_app)):
            semantic = pools["conditions"].draw(label, spec.sep, rng)
            apis = [pools["guarded_apis"].draw(label, spec.sep, rng)
                    for _ in range(rint(rng, spec.apis_per_condition))]
            seen = set()
            apis = [a for a in apis if not (a in seen or seen.add(a))]
            conditions.append(Condition(semantic=semantic, guarded_apis=apis))

        flows = []
        seen_pairs = set()
        for _ in range(rint(rng, spec.flows_per_app)):
            pair = (pools["sources"].draw(label, spec.sep, rng),
                    pools["sinks"].draw(label, spec.sep, rng))
            if pair not in seen_pairs:
                seen_pairs.add(pair)
                flows.append(DataFlow(source=pair[0], sink=pair[1]))

        icc = []
        for _ in range(rint(rng, spec.components_per_app)):
            comp, kind = pools["components"].draw(label, spec.sep, rng)
            acts = [pools["actions"].draw(label, spec.sep, rng)
                    for _ in range(rint(rng, spec.actions_per_component))]
            seen = set()
            acts = [a for a in acts if not (a in seen or seen.add(a))]
            icc.append(IccEntry(component=comp, kind=kind, actions=acts))

        extra = [pools["actions"].draw(label, spec.sep, rng)
                 for _ in range(rint(rng, spec.extra_actions_per_app))]
        seen = set()
        extra = [a for a in extra if not (a in seen or seen.add(a))]

        if not conditions and not flows and not icc and not extra:
            # every app must show up in at least one view
            semantic = pools["conditions"].draw(label, spec.sep, rng)
            api = pools["guarded_apis"].draw(label, spec.sep, rng)
            conditions.append(Condition(semantic=semantic, guarded_apis=[api]))

        records.append(AppFlowRecord(
            app_id=app_id, label=label, period=period, conditions=conditions,
            dataflows=flows, icc=icc, extra_actions=extra,
        ))
        labels[app_id] = (label, period)
    return records, labels
