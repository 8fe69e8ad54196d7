"""Command-line entry point: ``alignsim <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data or contract error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import autodiff as ad
from .dataio import (
    DatasetFormatError,
    ensure_ids,
    fmt_real,
    gen_synthetic,
    load_dataset,
    load_ground_truth,
    load_split,
    lookup,
    save_split,
)
from .ged import GedBudgetExceeded, GedSizeError, ged
from .graph import ConfigurationError, UnknownLabelError
from .metrics import Scorer, evaluate, export_embeddings, export_heatmap, write_embeddings_csv, write_heatmap_csv
from .train import (
    MissingGroundTruthError,
    TrainingDivergedError,
    load_checkpoint,
    load_config,
    save_checkpoint,
    split_dataset,
    train,
)

DATA_ERRORS = (
    DatasetFormatError,
    ConfigurationError,
    UnknownLabelError,
    ad.CheckpointFormatError,
    ad.ShapeError,
    MissingGroundTruthError,
    TrainingDivergedError,
    GedSizeError,
    GedBudgetExceeded,
    KeyError,
    OSError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _model_and_data(args):
    ckpt = load_checkpoint(args.model)
    graphs, vocab = load_dataset(args.data)
    if vocab != ckpt.vocabulary:
        raise DatasetFormatError(
            f"dataset vocabulary {list(vocab.tokens)} does not match the checkpoint's {list(ckpt.vocabulary.tokens)}"
        )
    return ckpt.model(), graphs


# ----------------------------------------------------------------- commands


def cmd_gen_data(args) -> int:
    graphs, _ = gen_synthetic(
        args.n_graphs, args.n_min, args.n_max, args.edge_prob, args.n_labels, args.seed, args.algo,
        dataset_path=args.out_data, gt_path=args.out_gt,
    )
    if args.out_split:
        save_split(args.out_split, split_dataset(graphs, args.seed))
    print(f"wrote {len(graphs)} graphs to {args.out_data}", file=sys.stderr)
    return 0


def cmd_ged(args) -> int:
    graphs, _ = load_dataset(args.dataset)
    res = ged(lookup(graphs, args.g1), lookup(graphs, args.g2), args.algo)
    print(f"ged={res.ged} nged={fmt_real(res.nged)} sim={fmt_real(res.similarity)}")
    return 0


def cmd_train(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    graphs, vocab = load_dataset(args.data)
    truth = load_ground_truth(args.gt)
    split = load_split(args.split) if args.split else split_dataset(graphs, config.seed)
    ensure_ids(graphs, split.all_ids(), "split ids")
    result = train(graphs, truth, config, split, vocab, log_path=args.log)
    save_checkpoint(args.out, result.checkpoint)
    print(f"best epoch {result.best_epoch}; checkpoint written to {args.out}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    model, graphs = _model_and_data(args)
    truth = load_ground_truth(args.gt)
    split = load_split(args.split)
    report = evaluate(model, graphs, split, truth)
    text = report.to_json(include_timing=args.timing)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    agg = report.aggregates()
    print(" ".join(f"{k}={fmt_real(v)}" for k, v in agg.items()), file=sys.stderr)
    return 0


def cmd_query(args) -> int:
    model, graphs = _model_and_data(args)
    if args.topk < 1:
        raise ConfigurationError("--topk must be >= 1")
    ensure_ids(graphs, [args.graph], "query graph")
    if args.split:
        database = load_split(args.split).database
        ensure_ids(graphs, database, "split ids")
    else:
        database = sorted(g.id for g in graphs if g.id != args.graph)
    hits = Scorer(model, graphs).top(args.graph, database, args.topk)
    for gid, score in hits:
        print(f"{gid} {fmt_real(score)}")
    return 0


def cmd_export_heatmap(args) -> int:
    model, graphs = _model_and_data(args)
    matrix = export_heatmap(model, lookup(graphs, args.g1), lookup(graphs, args.g2))
    write_heatmap_csv(args.out, matrix)
    return 0


def cmd_export_embeddings(args) -> int:
    model, graphs = _model_and_data(args)
    ids, matrix = export_embeddings(model, graphs)
    write_embeddings_csv(args.out, ids, matrix)
    return 0


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="alignsim", description="Graph similarity learning with exact GED supervision.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="synthetic graphs with exact GED ground truth")
    g.add_argument("--n-graphs", type=int, default=150)
    g.add_argument("--n-min", type=int, default=5)
    g.add_argument("--n-max", type=int, default=8)
    g.add_argument("--edge-prob", type=float, default=0.2)
    g.add_argument("--n-labels", type=int, default=4)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--algo", choices=["brute", "astar"], default="brute")
    g.add_argument("--out-data", required=True)
    g.add_argument("--out-gt", required=True)
    g.add_argument("--out-split", help="also write a 60/20/20 split drawn with --seed")
    g.set_defaults(func=cmd_gen_data)

    g = sub.add_parser("ged", help="exact GED of two graphs in a dataset")
    g.add_argument("--dataset", required=True)
    g.add_argument("--g1", type=int, required=True)
    g.add_argument("--g2", type=int, required=True)
    g.add_argument("--algo", choices=["brute", "astar"], default="astar")
    g.set_defaults(func=cmd_ged)

    g = sub.add_parser("train", help="train a model and write the best-validation checkpoint")
    g.add_argument("--config", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--gt", required=True)
    g.add_argument("--split")
    g.add_argument("--out", required=True)
    g.add_argument("--log", help="per-epoch CSV log")
    g.add_argument("--seed", type=int, help="overrides the config seed")
    g.set_defaults(func=cmd_train)

    g = sub.add_parser("eval", help="query x database evaluation report (JSON)")
    g.add_argument("--model", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--gt", required=True)
    g.add_argument("--split", required=True)
    g.add_argument("--out")
    g.add_argument("--timing", action="store_true", help="include wall-clock inference seconds")
    g.set_defaults(func=cmd_eval)

    g = sub.add_parser("query", help="top-k most similar database graphs")
    g.add_argument("--model", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--graph", type=int, required=True)
    g.add_argument("--topk", type=int, default=10)
    g.add_argument("--split", help="restrict the database to train + val of this split")
    g.set_defaults(func=cmd_query)

    g = sub.add_parser("export-heatmap", help="node-embedding cosine matrix of two graphs (CSV)")
    g.add_argument("--model", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--g1", type=int, required=True)
    g.add_argument("--g2", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_export_heatmap)

    g = sub.add_parser("export-embeddings", help="graph embeddings, one row per graph (CSV)")
    g.add_argument("--model", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_export_embeddings)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except DATA_ERRORS as exc:
        print(f"alignsim {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
