"""Pipeline CLI: stats, build, walk, embed, train, predict, eval, synth.

Stages communicate only through files. Every stage writes a `<output>.meta.json`
sidecar echoing its effective parameters, and reruns with identical inputs
and seed reproduce byte-identical outputs. MALFLOWS_THREADS caps walk
parallelism; --strict makes seeds mandatory and rejects unknown record fields.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import figures, fusion, hin, metapaths, metrics, schema, sgns, synth, walks

VIEW_ORDER = (schema.CF_VIEW, schema.DF_VIEW, schema.ICC_VIEW)


class CliError(Exception):
    pass


def _write_meta(out_path: Path, stage: str, params: dict) -> None:
    meta = {"stage": stage, "params": params}
    meta_path = out_path.with_name(out_path.name + ".meta.json")
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _resolve_seed(args) -> int:
    if args.seed is None:
        if args.strict:
            raise CliError("--seed is required in --strict mode")
        return 0
    return args.seed


def _load_records(args):
    records = corpus_mod.load_corpus(args.records, strict=args.strict)
    if getattr(args, "labels", None):
        labels = corpus_mod.load_labels(args.labels)
        corpus_mod.apply_labels(records, labels)
    return records


def cmd_synth(args) -> int:
    seed = _resolve_seed(args)
    spec = synth.SynthSpec(
        n_apps=args.n_apps,
        malware_fraction=args.malware_fraction,
        sep=args.sep,
        seed=seed,
        n_periods=args.n_periods,
    )
    records, labels = synth.generate_corpus(spec)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records_path = out_dir / "records.jsonl"
    labels_path = out_dir / "labels.csv"
    corpus_mod.save_corpus(records, records_path)
    corpus_mod.save_labels(labels, labels_path)
    params = {"n_apps": args.n_apps, "malware_fraction": args.malware_fraction,
              "sep": args.sep, "seed": seed, "n_periods": args.n_periods}
    _write_meta(records_path, "synth", params)
    _write_meta(labels_path, "synth", params)
    print(f"wrote {records_path} and {labels_path} ({len(records)} apps)")
    return 0


def cmd_stats(args) -> int:
    records = _load_records(args)
    stats = corpus_mod.corpus_stats(records, args.top)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=1, sort_keys=True)
        fh.write("\n")
    _write_meta(out_path, "stats", {"records": str(args.records), "top": args.top})
    if args.figures:
        fig_path = out_path.with_suffix(".png")
        figures.plot_stats(stats, fig_path, top=min(args.top, 10))
        print(f"wrote {out_path} and {fig_path}")
    else:
        print(f"wrote {out_path}")
    return 0


def cmd_build(args) -> int:
    records = _load_records(args)
    _, relations = corpus_mod.build_relations(records)
    views = VIEW_ORDER if args.view == "all" else (args.view,)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    group_by_view = {g.view: g for g in metapaths.builtin_groups()}
    built = {}
    for view in views:
        h = hin.build_view_hin(relations, relations.entities, view)
        if not args.no_refine:
            cfg = hin.RefinementConfig.from_group(group_by_view[view])
            h = hin.refine_hin(h, cfg, relations)
        bad = hin.validate_schema(h)
        if bad:
            raise CliError(f"{view} graph failed validation: " + "; ".join(bad[:5]))
        graph_path = out_dir / f"{view}.graph.json"
        hin.save_graph(h, graph_path)
        _write_meta(graph_path, "build", {
            "records": str(args.records), "view": view, "refine": not args.no_refine,
        })
        built[view] = h
        print(f"wrote {graph_path} ({h.node_count()} nodes, {h.edge_count()} edges)")
    if args.enumerate:
        mp = metapaths.BUILTIN_METAPATHS.get(args.enumerate)
        if mp is None:
            raise CliError(f"unknown meta-path {args.enumerate!r}")
        view = metapaths.view_of_metapath(mp)
        if view not in built:
            raise CliError(f"--enumerate {mp.name} needs view {view}, built {sorted(built)}")
        h = built[view]
        paths, truncated = metapaths.enumerate_instances(h, mp, args.enumerate_cap)
        for path in paths:
            parts = []
            for node_id in path:
                n = h.node(node_id)
                parts.append(f"{n.token}[{n.context}]" if n.context else n.token)
            print(f"{mp.name}: " + " -> ".join(parts))
        if truncated:
            print(f"{mp.name}: ... truncated at {args.enumerate_cap}")
        print(f"{mp.name}: {len(paths)} instance(s)")
    return 0


def cmd_walk(args) -> int:
    seed = _resolve_seed(args)
    h = hin.load_graph(args.graph)
    if args.metapaths:
        groups = metapaths.load_metapath_config(args.metapaths)
        matching = [g for g in groups if g.view == h.view]
        if args.group:
            matching = [g for g in matching if g.name == args.group]
        if not matching:
            raise CliError(f"no configured group for view {h.view!r} (group={args.group!r})")
        group = matching[0]
    elif args.group:
        group = metapaths.resolve_group(args.group)
        if group.view != h.view:
            raise CliError(f"group {args.group} is for view {group.view!r}, graph is {h.view!r}")
    else:
        group = {g.view: g for g in metapaths.builtin_groups()}[h.view]
    params = walks.WalkParams(walks_per_app=args.walks_per_app,
                              walk_length=args.walk_length, seed=seed)
    token_walks = walks.sample_walks(h, group, params, threads=args.threads)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    walks.save_walks(token_walks, out_path)
    _write_meta(out_path, "walk", {
        "graph": str(args.graph), "group": group.name, "view": h.view,
        "walks_per_app": args.walks_per_app, "walk_length": args.walk_length,
        "seed": seed, "threads": walks.effective_threads(args.threads),
    })
    print(f"wrote {out_path} ({len(token_walks)} walks)")
    return 0


def cmd_embed(args) -> int:
    seed = _resolve_seed(args)
    token_walks = walks.load_walks(args.walks)
    if not token_walks:
        raise CliError(f"no walks in {args.walks}")
    # walks start at app nodes, so walk heads are the app tokens to protect
    app_tokens = frozenset(w[0] for w in token_walks)
    params = sgns.SgnsParams(dim=args.dim, window=args.window, negatives=args.negatives,
                             epochs=args.epochs, lr=args.lr, min_count=args.min_count,
                             seed=seed)
    vocab = sgns.build_vocab(token_walks, min_count=params.min_count, keep=app_tokens)
    tables, losses = sgns.train_skipgram(token_walks, vocab, params)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    sgns.save_embeddings(tables, out_path)
    _write_meta(out_path, "embed", {
        "walks": str(args.walks), "dim": args.dim, "window": args.window,
        "negatives": args.negatives, "epochs": args.epochs, "lr": args.lr,
        "min_count": args.min_count, "seed": seed,
        "epoch_loss": [round(x, 6) for x in losses],
    })
    print(f"wrote {out_path} ({len(vocab)} tokens, d={args.dim})")
    return 0


def _parse_emb_args(pairs: list[str]) -> dict[str, dict[str, np.ndarray]]:
    views: dict[str, dict[str, np.ndarray]] = {}
    for pair in pairs:
        if "=" not in pair:
            raise CliError(f"--emb expects view=path, got {pair!r}")
        view, path = pair.split("=", 1)
        if view not in VIEW_ORDER:
            raise CliError(f"--emb view must be one of {VIEW_ORDER}, got {view!r}")
        if view in views:
            raise CliError(f"--emb view {view!r} given twice")
        views[view] = sgns.load_embeddings(path)
    if not views:
        raise CliError("at least one --emb view=path is required")
    return views


def _emb_dim(views: dict[str, dict[str, np.ndarray]]) -> int:
    dims = set()
    for table in views.values():
        for vec in table.values():
            dims.add(len(vec))
            break
    if len(dims) != 1:
        raise CliError(f"embedding dimensions differ across views: {sorted(dims)}")
    return dims.pop()


def _channel_inputs(app_ids: list[str], views: dict[str, dict[str, np.ndarray]],
                    d: int) -> list[fusion.ChannelInput]:
    inputs = []
    for app_id in app_ids:
        vecs = [views.get(view, {}).get(app_id) for view in VIEW_ORDER]
        if all(v is None for v in vecs):
            raise CliError(f"app {app_id!r} has no vector in any provided view")
        inputs.append(fusion.ChannelInput.from_views(vecs, d))
    return inputs


def cmd_train(args) -> int:
    seed = _resolve_seed(args)
    views = _parse_emb_args(args.emb)
    d = _emb_dim(views)
    labels = corpus_mod.load_labels(args.labels)
    app_ids = sorted(labels)
    if not app_ids:
        raise CliError("labels file is empty")
    inputs = _channel_inputs(app_ids, views, d)
    dataset = [(x, labels[a][0]) for x, a in zip(inputs, app_ids)]
    hp = fusion.TrainParams(epochs=args.epochs, batch_size=args.batch, lr=args.lr,
                            dropout=args.dropout, fusion=args.fusion)
    model, curve = fusion.train_classifier(dataset, hp, seed=seed)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fusion.save_model(model, out_path)
    _write_meta(out_path, "train", {
        "emb": list(args.emb), "labels": str(args.labels), "epochs": args.epochs,
        "batch": args.batch, "lr": args.lr, "dropout": args.dropout,
        "fusion": args.fusion, "seed": seed, "d": d, "n_apps": len(app_ids),
        "final_loss": round(curve[-1], 6) if curve else None,
    })
    outputs = [str(out_path)]
    if args.figures and curve:
        fig_path = out_path.with_suffix(".loss.png")
        figures.plot_loss_curve(curve, fig_path)
        outputs.append(str(fig_path))
    print("wrote " + " and ".join(outputs))
    return 0


def cmd_predict(args) -> int:
    model = fusion.load_model(args.model)
    views = _parse_emb_args(args.emb)
    d = _emb_dim(views)
    if d != model.d:
        raise CliError(f"model expects d={model.d}, embeddings have d={d}")
    if args.records:
        records = corpus_mod.load_corpus(args.records, strict=args.strict)
        app_ids = sorted(r.app_id for r in records)
    elif args.labels:
        app_ids = sorted(corpus_mod.load_labels(args.labels))
    else:
        raise CliError("predict needs --records or --labels to list the apps")
    inputs = _channel_inputs(app_ids, views, d)
    scores = fusion.predict_scores(model, inputs)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["app_id", "score", "label_pred"])
        for app_id, score in zip(app_ids, scores):
            writer.writerow([app_id, f"{score:.9g}", int(score >= args.threshold)])
    _write_meta(out_path, "predict", {
        "model": str(args.model), "emb": list(args.emb),
        "threshold": args.threshold, "n_apps": len(app_ids),
    })
    print(f"wrote {out_path} ({len(app_ids)} apps)")
    return 0


def _load_preds(path) -> dict[str, float]:
    out: dict[str, float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"app_id", "score"}
        if reader.fieldnames is None or not need.issubset(reader.fieldnames):
            raise CliError(f"predictions file must have columns app_id,score, got {reader.fieldnames}")
        for row in reader:
            out[row["app_id"]] = float(row["score"])
    return out


def cmd_eval(args) -> int:
    preds = _load_preds(args.preds)
    labels = corpus_mod.load_labels(args.labels)
    app_ids = sorted(labels)
    missing = [a for a in app_ids if a not in preds]
    if missing:
        raise CliError(f"{len(missing)} labeled app(s) missing from predictions, e.g. {missing[:3]}")
    y = np.array([labels[a][0] for a in app_ids], dtype=np.int64)
    scores = np.array([preds[a] for a in app_ids], dtype=np.float64)
    if args.aut_by is None:
        report = metrics.binary_metrics(y, scores, args.threshold)
    elif args.aut_by == "period":
        periods = [labels[a][1] or "" for a in app_ids]
        report = metrics.metrics_by_period(y, scores, periods, args.threshold)
    else:
        raise CliError(f"--aut-by supports only 'period', got {args.aut_by!r}")
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json_obj(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    _write_meta(out_path, "eval", {
        "preds": str(args.preds), "labels": str(args.labels),
        "threshold": args.threshold, "aut_by": args.aut_by,
    })
    outputs = [str(out_path)]
    if args.figures:
        if report.roc_auc is not None:
            roc_path = out_path.with_suffix(".roc.png")
            figures.plot_roc(y, scores, roc_path)
            outputs.append(str(roc_path))
        hist_path = out_path.with_suffix(".scores.png")
        figures.plot_score_hist(y, scores, hist_path)
        outputs.append(str(hist_path))
        if report.periods is not None:
            series_path = out_path.with_suffix(".periods.png")
            figures.plot_metric_series(report, series_path)
            outputs.append(str(series_path))
    for note in report.notes:
        print(f"warning: {note}", file=sys.stderr)
    print("wrote " + ", ".join(outputs))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="malflows",
                                     description="Flow-feature graph embedding and malware classification pipeline")
    parser.add_argument("--strict", action="store_true",
                        help="require explicit seeds and reject unknown record fields")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic corpus")
    p.add_argument("--n-apps", type=int, default=200)
    p.add_argument("--malware-fraction", type=float, default=0.5)
    p.add_argument("--sep", type=float, default=0.8)
    p.add_argument("--n-periods", type=int, default=6)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="top-k element frequency tables split by label")
    p.add_argument("--records", required=True)
    p.add_argument("--labels", default=None)
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("build", help="build (and refine) per-view graphs")
    p.add_argument("--records", required=True)
    p.add_argument("--labels", default=None)
    p.add_argument("--view", choices=list(VIEW_ORDER) + ["all"], default="all")
    p.add_argument("--no-refine", action="store_true",
                   help="skip context refinement (ablation)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--enumerate", default=None, metavar="MP",
                   help="debug: print instances of a builtin meta-path after build")
    p.add_argument("--enumerate-cap", type=int, default=1000)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("walk", help="sample meta-path-group-guided walks")
    p.add_argument("--graph", required=True)
    p.add_argument("--group", default=None,
                   help="builtin group (MPG1) or single meta-path (MP2); default: the view's group")
    p.add_argument("--metapaths", default=None, help="optional meta-path config JSON")
    p.add_argument("--walks-per-app", type=int, default=10)
    p.add_argument("--walk-length", type=int, default=80)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_walk)

    p = sub.add_parser("embed", help="train skip-gram embeddings from walks")
    p.add_argument("--walks", required=True)
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.025)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", help="train the fusion classifier")
    p.add_argument("--emb", action="append", default=[], metavar="VIEW=PATH",
                   help="per-view embedding file, repeatable (cf=..., df=..., icc=...)")
    p.add_argument("--labels", required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--fusion", choices=["attn", "add"], default="attn")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score apps with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--emb", action="append", default=[], metavar="VIEW=PATH")
    p.add_argument("--records", default=None)
    p.add_argument("--labels", default=None)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="metrics from predictions and labels")
    p.add_argument("--preds", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--aut-by", default=None,
                   help="'period': per-period series plus time-decay areas")
    p.add_argument("--out", required=True)
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, corpus_mod.CorpusError, hin.HinError, metapaths.MetaPathError,
            walks.WalkError, sgns.EmbedError, fusion.FusionError, metrics.MetricsError,
            synth.SynthError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
