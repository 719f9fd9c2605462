"""Command-line front end.

Subcommands mirror the pipeline stages (partition, repair, train,
evaluate, unlearn, pipeline) plus synth (fixture generation), bench
(timing report with figures), and repartition (manual maintenance).

Exit codes: 0 success, 1 request error, 2 validation/usage error,
3 numerical error. All side effects stay inside the state directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np

from . import engine, repair
from .engine import EngineConfig, EnsembleState, UnlearnRequest
from .errors import NumericalError, RequestError, ValidationError
from .graphs import DegreeRecord, build_degree_record, generate_sbm, load_graph, save_graph
from .partition import (
    format_scores,
    load_partition,
    partition_scores,
    save_partition,
)

STATE_ENV = "GRAPHSHARD_STATE"

_CONFIG_FIELDS = {f.name: f.type for f in dataclasses.fields(EngineConfig)}
_BOOL_FIELDS = {"strict_neighbor_retrain", "use_repaired_similarity"}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"expected a boolean, got {text!r}")


def _coerce(name: str, text: str):
    if name in _BOOL_FIELDS:
        return _parse_bool(text)
    for f in dataclasses.fields(EngineConfig):
        if f.name == name:
            base = type(f.default)
            return base(text) if base is not bool else _parse_bool(text)
    raise ValidationError(f"unknown config key {name!r}")


def read_config_file(path) -> dict:
    """key=value lines; '#' starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in _CONFIG_FIELDS:
                raise ValidationError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = _coerce(key, value.strip())
    return out


def build_config(args) -> EngineConfig:
    """Defaults, overridden by the config file, overridden by flags."""
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for name in _CONFIG_FIELDS:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    return EngineConfig(**values)


def add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file (flags override it)")
    p.add_argument("--v", type=int, dest="v")
    p.add_argument("--partitioner", choices=["fast", "sr", "random"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--strategy", choices=["zero", "mirror", "mixup", "none"])
    p.add_argument("--tau", type=float)
    p.add_argument("--model", choices=["sgc", "meangnn"])
    p.add_argument("--d-emb", type=int, dest="d_emb")
    p.add_argument("--levels", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--k-steps", type=int, dest="k_steps")
    p.add_argument("--hidden-dim", type=int, dest="hidden_dim")
    p.add_argument(
        "--strict-neighbors", type=_parse_bool, dest="strict_neighbor_retrain",
        metavar="BOOL",
    )
    p.add_argument(
        "--repaired-similarity", type=_parse_bool, dest="use_repaired_similarity",
        metavar="BOOL",
    )
    p.add_argument("--n-jobs", type=int, dest="n_jobs")


def add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--state", help=f"state directory (or ${STATE_ENV})")
    p.add_argument("--format", choices=["text", "json-lines"], default="text")


def add_graph_flags(p: argparse.ArgumentParser, prefix: str = "") -> None:
    lead = f"--{prefix}-" if prefix else "--"
    dest = prefix.replace("-", "_") + "_" if prefix else ""
    p.add_argument(f"{lead}edges", dest=f"{dest}edges")
    p.add_argument(f"{lead}features", dest=f"{dest}features")
    p.add_argument(f"{lead}labels", dest=f"{dest}labels")


def state_dir(args) -> str:
    d = args.state or os.environ.get(STATE_ENV)
    if not d:
        raise ValidationError(f"no state directory (use --state or ${STATE_ENV})")
    return d


def emit(args, command: str, payload: dict) -> None:
    if args.format == "json-lines":
        print(json.dumps({"command": command, **payload}, sort_keys=True))
    else:
        parts = []
        for key, value in payload.items():
            if isinstance(value, float):
                parts.append(f"{key}={value:.6f}")
            else:
                parts.append(f"{key}={value}")
        print(f"{command}: " + " ".join(parts))


def _load_graph_args(args, prefix: str = ""):
    dest = prefix.replace("-", "_") + "_" if prefix else ""
    edges = getattr(args, f"{dest}edges")
    features = getattr(args, f"{dest}features")
    labels = getattr(args, f"{dest}labels")
    if not (edges and features and labels):
        which = prefix or "graph"
        raise ValidationError(f"missing {which} input files (edges/features/labels)")
    return load_graph(edges, features, labels)


def _graph_dir_paths(state):
    gd = os.path.join(state, "graph")
    return (
        os.path.join(gd, "edges.txt"),
        os.path.join(gd, "features.csv"),
        os.path.join(gd, "labels.txt"),
    )


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    g = generate_sbm(
        n=args.n,
        v_blocks=args.blocks,
        h=args.classes,
        p_in=args.p_in,
        p_out=args.p_out,
        feature_dim=args.feature_dim,
        homophily=args.homophily,
        seed=args.seed if args.seed is not None else 0,
        mean_scale=args.mean_scale,
    )
    os.makedirs(os.path.dirname(os.path.abspath(args.out_edges)) or ".", exist_ok=True)
    save_graph(g, args.out_edges, args.out_features, args.out_labels)
    emit(args, "synth", {"n": g.n, "edges": int(g.adjacency.nnz // 2), "classes": g.h})
    return 0


def cmd_partition(args) -> int:
    state = state_dir(args)
    config = build_config(args)
    g = _load_graph_args(args)
    part = engine.run_partitioner(g, config)
    os.makedirs(os.path.join(state, "graph"), exist_ok=True)
    save_graph(g, *_graph_dir_paths(state))
    save_partition(os.path.join(state, "partition.txt"), part)
    scores = partition_scores(part, g)
    with open(os.path.join(state, "scores.txt"), "w", encoding="utf-8") as fh:
        fh.write(format_scores(scores) + "\n")
    emit(
        args,
        "partition",
        {
            "partitioner": config.partitioner,
            "v": config.v,
            "balance": scores.balance,
            "fairness": scores.fairness,
            "ratio_cut": scores.ratio_cut,
        },
    )
    return 0


def cmd_repair(args) -> int:
    state = state_dir(args)
    config = build_config(args)
    g = load_graph(*_graph_dir_paths(state))
    part = load_partition(os.path.join(state, "partition.txt"))
    rec = build_degree_record(g)
    with open(os.path.join(state, "degree_record.txt"), "w", encoding="utf-8") as fh:
        for d in rec.original_degree.tolist():
            fh.write(f"{d}\n")
    total_syn = 0
    for j in range(part.v):
        rs = engine.build_shard_subgraph(part.shard(j), g, rec, j, config)
        repair.save_subgraph(rs, os.path.join(state, "shards", f"{j:03d}"))
        total_syn += rs.syn_owner.size
    emit(
        args,
        "repair",
        {"strategy": config.strategy, "shards": part.v, "synthetic_nodes": total_syn},
    )
    return 0


def cmd_train(args) -> int:
    state = state_dir(args)
    config = build_config(args)
    g = load_graph(*_graph_dir_paths(state))
    part = load_partition(os.path.join(state, "partition.txt"))
    with open(os.path.join(state, "degree_record.txt"), encoding="utf-8") as fh:
        rec_values = [int(line) for line in fh if line.strip()]
    rec = DegreeRecord(np.array(rec_values, dtype=np.int64))
    shards = []
    for j in range(part.v):
        rs = repair.load_subgraph(os.path.join(state, "shards", f"{j:03d}"))
        seed = engine.train_seed_for(config, j)
        params = engine.train_one_shard(rs, g, config, seed)
        shards.append(
            engine.ShardState(subgraph=rs, params=params, train_seed=seed)
        )
    st = EnsembleState(
        graph=g, partition=part, degree_record=rec, shards=shards, config=config
    )
    engine.save_state(st, state)
    emit(
        args,
        "train",
        {
            "model": config.model,
            "shards": part.v,
            "mean_final_loss": float(np.mean([s.params.final_loss for s in shards])),
        },
    )
    return 0


def cmd_pipeline(args) -> int:
    state = state_dir(args)
    config = build_config(args)
    g = _load_graph_args(args)
    st = engine.train_all(g, config)
    payload = {
        "partitioner": config.partitioner,
        "v": config.v,
        "strategy": config.strategy,
        "model": config.model,
    }
    scores = partition_scores(st.partition, g)
    payload["balance"] = scores.balance
    payload["fairness"] = scores.fairness
    if args.test_edges:
        test_graph = _load_graph_args(args, "test")
        metrics = engine.evaluate(st, test_graph)
        payload["accuracy"] = metrics["accuracy"]
        payload["macro_f1"] = metrics["macro_f1"]
    engine.save_state(st, state)
    emit(args, "pipeline", payload)
    return 0


def cmd_evaluate(args) -> int:
    state = state_dir(args)
    st = engine.load_state(state)
    test_graph = _load_graph_args(args, "test")
    metrics = engine.evaluate(st, test_graph)
    engine.save_state(st, state)  # persist the similarity cache
    emit(
        args,
        "evaluate",
        {
            "accuracy": metrics["accuracy"],
            "macro_f1": metrics["macro_f1"],
            "weights": ",".join(f"{w:.8f}" for w in metrics["weights"]),
        },
    )
    return 0


def _requests_from_args(args) -> list[UnlearnRequest]:
    reqs = []
    for u in args.node or []:
        reqs.append(UnlearnRequest(kind=engine.NODE, node=u))
    for u, v in args.edge or []:
        reqs.append(UnlearnRequest(kind=engine.EDGE, edge=(u, v)))
    for u in args.feature or []:
        reqs.append(UnlearnRequest(kind=engine.FEATURE, node=u))
    if not reqs:
        raise ValidationError("nothing to unlearn (use --node / --edge / --feature)")
    return reqs


def cmd_unlearn(args) -> int:
    state = state_dir(args)
    st = engine.load_state(state)
    reqs = _requests_from_args(args)
    if len(reqs) == 1:
        new_state = engine.unlearn(st, reqs[0])
    else:
        new_state = engine.batch_unlearn(st, reqs)
    engine.save_state(new_state, state)
    report = new_state.last_report
    emit(
        args,
        "unlearn",
        {
            "revision": report.revision,
            "kind": report.kind,
            "retrained": ",".join(str(i) for i in report.retrained),
            "wall_time": report.wall_time,
        },
    )
    return 0


def cmd_repartition(args) -> int:
    state = state_dir(args)
    st = engine.load_state(state)
    new_state = engine.repartition(st)
    engine.save_state(new_state, state)
    emit(args, "repartition", {"revision": new_state.revision, "v": new_state.config.v})
    return 0


def cmd_bench(args) -> int:
    """Timing report: partitioner wall times and batch-unlearning wall time
    versus batch size, as CSV plus rendered figures."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    state = state_dir(args)
    os.makedirs(state, exist_ok=True)
    config = build_config(args)
    g = _load_graph_args(args)

    part_rows = []
    for method in ("fast", "sr", "random"):
        cfg = dataclasses.replace(config, partitioner=method)
        t0 = time.perf_counter()
        part = engine.run_partitioner(g, cfg)
        wall = time.perf_counter() - t0
        scores = partition_scores(part, g)
        part_rows.append((method, wall, scores.balance, scores.fairness, scores.ratio_cut))
    with open(os.path.join(state, "bench_partition.csv"), "w", encoding="utf-8") as fh:
        fh.write("method,seconds,balance,fairness,ratio_cut\n")
        for row in part_rows:
            fh.write(f"{row[0]},{row[1]:.6f},{row[2]:.6f},{row[3]:.6f},{row[4]:.6f}\n")

    st = engine.train_all(g, config)
    sizes = [int(s) for s in args.batch_sizes.split(",")]
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(g.n)
    unlearn_rows = []
    for size in sizes:
        reqs = [UnlearnRequest(kind=engine.NODE, node=int(u)) for u in order[:size]]
        t0 = time.perf_counter()
        after = engine.batch_unlearn(st, reqs)
        wall = time.perf_counter() - t0
        unlearn_rows.append((size, len(after.last_report.retrained), wall))
    with open(os.path.join(state, "bench_unlearn.csv"), "w", encoding="utf-8") as fh:
        fh.write("batch_size,retrained_shards,seconds\n")
        for size, shards, wall in unlearn_rows:
            fh.write(f"{size},{shards},{wall:.6f}\n")

    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar([r[0] for r in part_rows], [r[1] for r in part_rows], color="#4878d0")
    ax.set_ylabel("partition time (s)")
    fig.tight_layout()
    fig.savefig(os.path.join(state, "bench_partition.png"), dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot([r[0] for r in unlearn_rows], [r[2] for r in unlearn_rows], marker="o")
    ax.set_xlabel("unlearning batch size")
    ax.set_ylabel("batch unlearning time (s)")
    fig.tight_layout()
    fig.savefig(os.path.join(state, "bench_unlearn.png"), dpi=120)
    plt.close(fig)

    emit(
        args,
        "bench",
        {
            "partition_csv": "bench_partition.csv",
            "unlearn_csv": "bench_unlearn.csv",
            "figures": "bench_partition.png,bench_unlearn.png",
        },
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphshard",
        description="Sharded graph training with guided partitioning, subgraph "
        "repair, similarity-weighted ensembling, and deterministic unlearning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic planted-partition fixture")
    add_common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--blocks", type=int, default=4)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--p-in", type=float, default=0.1, dest="p_in")
    p.add_argument("--p-out", type=float, default=0.01, dest="p_out")
    p.add_argument("--feature-dim", type=int, default=16, dest="feature_dim")
    p.add_argument("--homophily", type=float, default=0.9)
    p.add_argument("--mean-scale", type=float, default=1.0, dest="mean_scale")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-edges", required=True, dest="out_edges")
    p.add_argument("--out-features", required=True, dest="out_features")
    p.add_argument("--out-labels", required=True, dest="out_labels")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("partition", help="ingest a graph and write its partition")
    add_common(p)
    add_graph_flags(p)
    add_config_flags(p)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("repair", help="build repaired shard subgraphs")
    add_common(p)
    add_config_flags(p)
    p.set_defaults(func=cmd_repair)

    p = sub.add_parser("train", help="train every shard model")
    add_common(p)
    add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("pipeline", help="partition + repair + train (+ evaluate)")
    add_common(p)
    add_graph_flags(p)
    add_graph_flags(p, "test")
    add_config_flags(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("evaluate", help="ensemble metrics on a test graph")
    add_common(p)
    add_graph_flags(p, "test")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("unlearn", help="service unlearning requests")
    add_common(p)
    p.add_argument("--node", type=int, action="append")
    p.add_argument("--edge", type=int, nargs=2, action="append", metavar=("U", "V"))
    p.add_argument("--feature", type=int, action="append")
    p.set_defaults(func=cmd_unlearn)

    p = sub.add_parser("repartition", help="re-run the pipeline on the current graph")
    add_common(p)
    p.set_defaults(func=cmd_repartition)

    p = sub.add_parser("bench", help="timing report with figures")
    add_common(p)
    add_graph_flags(p)
    add_config_flags(p)
    p.add_argument("--batch-sizes", default="1,2,5,10,20", dest="batch_sizes")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RequestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
