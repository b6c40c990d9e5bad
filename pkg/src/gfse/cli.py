"""Command-line front end.

One executable, subcommand per pipeline. Every output file is written to a
temporary name and atomically renamed, so a failed run never leaves partial
files. Machine-readable reports go to stdout with --json; human tables are
the default.

Exit codes:
  0  success
  1  verification failed (gradcheck found a bad gradient)
  2  usage error caught by the argument parser (unknown flag, missing value)
  3  input file missing
  4  input format violation (graph6/JSON/checkpoint/CSV parse errors)
  5  invalid values (bad config, flag combination, shapes, ranges)
  6  runtime failure (training divergence, generator retries exhausted)
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import figures
from .autodiff import gradient_suite
from .corpus import (FAMILIES, CorpusSpec, corpus_from_obj, corpus_to_obj,
                     make_corpus)
from .graph import (GraphFormatError, graph_to_json_obj, read_graphs,
                    write_graph6)
from .labels import labels_json_obj
from .model import GFSEConfig
from .pretrain import (LOG_KEYS, CheckpointFormatError, TrainConfig,
                       TrainDivergence, Trainer, augment_features, export_pse,
                       load_checkpoint, matrix_csv, model_from_checkpoint)
from .segwl import (CLASSIC_WL, NEIGHBOR, SPD, GraphFamily, family_report,
                    is_strongly_regular, rw_scheme)
from .walks import node_encoding_csv_rows, node_rw_encoding

EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_MISSING_INPUT = 3
EXIT_BAD_FORMAT = 4
EXIT_BAD_VALUE = 5
EXIT_RUNTIME = 6

_EPILOG = __doc__[__doc__.index("Exit codes"):]


def _atomic_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _emit(args, obj: dict, human: list[str]) -> None:
    if args.json:
        print(json.dumps(obj, sort_keys=True))
    else:
        for line in human:
            print(line)


# ---------------------------------------------------------------------------
# subcommand handlers

def cmd_convert(args) -> int:
    graphs = read_graphs(args.input)
    if args.out.endswith((".g6", ".graph6")):
        text = "".join(write_graph6(g) + "\n" for g in graphs)
    elif args.out.endswith(".json"):
        text = json.dumps([graph_to_json_obj(g) for g in graphs],
                          indent=2, sort_keys=True) + "\n"
    else:
        raise GraphFormatError(
            f"cannot infer output format from path {args.out!r}")
    _atomic_text(args.out, text)
    print(f"wrote {len(graphs)} graphs to {args.out}")
    return 0


def cmd_enumerate(args) -> int:
    from .segwl import enumerate_graphs
    fam = enumerate_graphs(args.nodes, connected_only=args.connected)
    text = "".join(write_graph6(g) + "\n" for g in fam)
    _atomic_text(args.out, text)
    kind = "connected graphs" if args.connected else "graphs"
    print(f"wrote {len(fam)} {kind} on {args.nodes} nodes to {args.out}")
    return 0


_SCHEMES = {"wl": lambda d: CLASSIC_WL, "neighbor": lambda d: NEIGHBOR,
            "spd": lambda d: SPD, "rw": rw_scheme}


def cmd_wl_test(args) -> int:
    if args.scheme == "rw" and args.dim is None:
        raise ValueError("--scheme rw requires --dim")
    scheme = _SCHEMES[args.scheme](args.dim)
    graphs = read_graphs(args.input)
    if args.srg:
        n, k, lam, mu = args.srg
        for i, g in enumerate(graphs):
            if not is_strongly_regular(g, n, k, lam, mu):
                raise ValueError(
                    f"graph {i} is not strongly regular with parameters "
                    f"({n},{k},{lam},{mu})")
    fam = GraphFamily(graphs=graphs, tag=os.path.basename(args.input))
    report = family_report(fam, scheme, workers=args.workers)
    obj = report.to_json_obj()
    obj["dim"] = args.dim
    _emit(args, obj, [
        f"scheme          {report.scheme}",
        f"graphs          {report.n_graphs}",
        f"pairs           {report.n_pairs}",
        f"undistinguished {report.undistinguished_pairs}",
        f"seconds         {report.seconds:.3f}",
    ])
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        _atomic_text(os.path.join(args.out_dir, "report.json"),
                     json.dumps(obj, sort_keys=True, indent=2) + "\n")
        hist: dict[int, int] = {}
        for s in report.bucket_sizes:
            hist[s] = hist.get(s, 0) + 1
        rows = ["bucket_size,buckets"]
        rows += [f"{s},{hist[s]}" for s in sorted(hist)]
        _atomic_text(os.path.join(args.out_dir, "buckets.csv"),
                     "\n".join(rows) + "\n")
        figures.bucket_histogram(report.bucket_sizes,
                                 os.path.join(args.out_dir, "buckets.png"),
                                 title=report.scheme)
    return 0


def _labels_job(pair):
    g, seed = pair
    return labels_json_obj(g, seed=seed)


def cmd_labels(args) -> int:
    graphs = read_graphs(args.input)
    jobs = [(g, args.seed) for g in graphs]
    if args.workers > 1 and len(graphs) > 1:
        from multiprocessing import Pool
        with Pool(args.workers) as pool:
            objs = pool.map(_labels_job, jobs, chunksize=4)
    else:
        objs = [_labels_job(j) for j in jobs]
    text = "".join(json.dumps(o, sort_keys=True) + "\n" for o in objs)
    _atomic_text(args.out, text)
    print(f"wrote labels for {len(graphs)} graphs to {args.out}")
    return 0


def cmd_corpus(args) -> int:
    spec = CorpusSpec(families=tuple(args.families.split(",")),
                      graphs_per_family=args.per_family,
                      min_nodes=args.min_nodes, max_nodes=args.max_nodes,
                      seed=args.seed)
    corpus = make_corpus(spec, workers=args.workers)
    _atomic_text(args.out, json.dumps(corpus_to_obj(corpus), sort_keys=True)
                 + "\n")
    print(f"wrote {len(corpus.graphs)} tagged graphs to {args.out}")
    return 0


def _metrics_csv(history: list[dict]) -> str:
    lines = [",".join(LOG_KEYS)]
    for row in history:
        cells = []
        for k in LOG_KEYS:
            v = row[k]
            cells.append(str(v) if isinstance(v, int) else "%.12g" % v)
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def cmd_pretrain(args) -> int:
    with open(args.corpus, "r", encoding="utf-8") as fh:
        corpus = corpus_from_obj(json.load(fh))
    if args.resume:
        if args.config:
            raise ValueError("--resume carries its own config; drop --config")
        trainer = Trainer.resume(args.resume, corpus)
    else:
        if args.config:
            with open(args.config, "r", encoding="utf-8") as fh:
                cfg = TrainConfig.from_obj(json.load(fh))
        else:
            cfg = TrainConfig()
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.epochs is not None:
            overrides["max_epochs"] = args.epochs
        if args.batch_size is not None:
            overrides["batch_size"] = args.batch_size
        if args.lr is not None:
            overrides["lr"] = args.lr
        if args.patience is not None:
            overrides["patience"] = args.patience
        if overrides:
            cfg = TrainConfig.from_obj({**cfg.to_obj(), **overrides})
        trainer = Trainer(cfg, corpus)
    os.makedirs(args.out_dir, exist_ok=True)

    def on_epoch(row):
        if not args.json:
            print(f"epoch {row['epoch']:>3}  total {row['loss_total']:.4f}  "
                  f"acc_cd {row['acc_cd']:.3f}  acc_gcl {row['acc_gcl']:.3f}")

    history = trainer.run(on_epoch=on_epoch)
    ckpt = os.path.join(args.out_dir, "checkpoint.gfse")
    trainer.save(ckpt)
    _atomic_text(os.path.join(args.out_dir, "metrics.jsonl"),
                 "".join(json.dumps(r, sort_keys=True) + "\n"
                         for r in history))
    _atomic_text(os.path.join(args.out_dir, "metrics.csv"),
                 _metrics_csv(history))
    _atomic_text(os.path.join(args.out_dir, "train_config.json"),
                 json.dumps(trainer.cfg.to_obj(), sort_keys=True, indent=2)
                 + "\n")
    figures.training_figures(history, args.out_dir)
    last = history[-1]
    if args.json:
        print(json.dumps(last, sort_keys=True))
    else:
        print(f"finished at epoch {last['epoch']}; checkpoint and report "
              f"in {args.out_dir}")
    return 0


def cmd_encode(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ck)
    graphs = read_graphs(args.input)
    if not 0 <= args.index < len(graphs):
        raise ValueError(f"--index {args.index} out of range for "
                         f"{len(graphs)} graphs")
    pse = export_pse(model, graphs[args.index])
    _atomic_text(args.out, matrix_csv(pse))
    print(f"wrote {pse.shape[0]}x{pse.shape[1]} encoding to {args.out}")
    return 0


def cmd_walk(args) -> int:
    graphs = read_graphs(args.input)
    if not 0 <= args.index < len(graphs):
        raise ValueError(f"--index {args.index} out of range for "
                         f"{len(graphs)} graphs")
    enc = node_rw_encoding(graphs[args.index], args.dim, mode=args.mode)
    _atomic_text(args.out, "\n".join(node_encoding_csv_rows(enc)) + "\n")
    print(f"wrote {args.mode} walk encoding to {args.out}")
    return 0


def _load_csv_matrix(path: str) -> np.ndarray:
    try:
        mat = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as err:
        raise GraphFormatError(f"{path}: not a numeric CSV matrix ({err})")
    return mat


def cmd_augment(args) -> int:
    x0 = _load_csv_matrix(args.features)
    pse = _load_csv_matrix(args.pse)
    out = augment_features(x0, pse)
    _atomic_text(args.out, matrix_csv(out))
    print(f"wrote {out.shape[0]}x{out.shape[1]} feature matrix to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    try:
        results = gradient_suite(seed=args.seed)
    except AssertionError as err:
        print(f"gfse: gradient check failed: {err}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    if args.json:
        print(json.dumps(results, sort_keys=True))
    else:
        width = max(len(n) for n in results)
        for name in sorted(results):
            print(f"{name:<{width}}  ok  max_rel {results[name]:.2e}")
        print(f"{len(results)}/{len(results)} gradient checks passed")
    return 0


# ---------------------------------------------------------------------------
# parser

def _srg_params(text: str) -> tuple[int, int, int, int]:
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("expected n,k,lam,mu")
    return tuple(int(p) for p in parts)


def subcommand_parsers(parser) -> dict[str, argparse.ArgumentParser]:
    """Name -> subparser map, for documentation parity checks."""
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return dict(action.choices)
    return {}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gfse",
        description="Graph structural encoding toolkit",
        epilog=_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("convert", help="convert graphs between graph6 and "
                                       "JSON (format from file extension)")
    p.add_argument("--input", required=True, help="input graph file")
    p.add_argument("--out", required=True, help="output graph file")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("enumerate", help="enumerate small graphs up to "
                                         "isomorphism into a graph6 file")
    p.add_argument("--nodes", type=int, required=True,
                   help="node count (2..10)")
    p.add_argument("--connected", action="store_true",
                   help="keep connected graphs only")
    p.add_argument("--out", required=True, help="output .g6 file")
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("wl-test", help="bucket a graph family by structural "
                                       "refinement signatures")
    p.add_argument("--scheme", choices=sorted(_SCHEMES), required=True,
                   help="refinement scheme")
    p.add_argument("--dim", type=int, default=None,
                   help="walk length for --scheme rw")
    p.add_argument("--input", required=True, help="graph file (.g6 or .json)")
    p.add_argument("--srg", type=_srg_params, default=None, metavar="N,K,L,M",
                   help="validate every input graph as strongly regular "
                        "with these parameters first")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                   help="parallel signature workers")
    p.add_argument("--json", action="store_true",
                   help="print the report as JSON")
    p.add_argument("--out-dir", default=None,
                   help="also write report.json, buckets.csv, buckets.png")
    p.set_defaults(func=cmd_wl_test)

    p = sub.add_parser("labels", help="write task labels for each input "
                                      "graph as JSON lines")
    p.add_argument("--input", required=True, help="graph file (.g6 or .json)")
    p.add_argument("--out", required=True, help="output .jsonl file")
    p.add_argument("--seed", type=int, default=0,
                   help="community detection seed")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                   help="parallel labeling workers")
    p.set_defaults(func=cmd_labels)

    p = sub.add_parser("corpus", help="generate a labeled synthetic graph "
                                      "corpus as JSON")
    p.add_argument("--out", required=True, help="output .json file")
    p.add_argument("--families", default=",".join(FAMILIES),
                   help="comma-separated generator names")
    p.add_argument("--per-family", type=int, default=100,
                   help="graphs per family")
    p.add_argument("--min-nodes", type=int, default=8, help="smallest graph")
    p.add_argument("--max-nodes", type=int, default=32, help="largest graph")
    p.add_argument("--seed", type=int, default=0, help="corpus seed")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                   help="parallel generation workers")
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser("pretrain", help="train the encoder on a corpus and "
                                        "write checkpoint, metrics, figures")
    p.add_argument("--corpus", required=True, help="corpus JSON from "
                                                   "`gfse corpus`")
    p.add_argument("--out-dir", required=True, help="report directory")
    p.add_argument("--config", default=None,
                   help="training config JSON (defaults otherwise)")
    p.add_argument("--resume", default=None,
                   help="checkpoint to continue from")
    p.add_argument("--seed", type=int, default=None, help="override seed")
    p.add_argument("--epochs", type=int, default=None,
                   help="override max epochs")
    p.add_argument("--batch-size", type=int, default=None,
                   help="override batch size")
    p.add_argument("--lr", type=float, default=None,
                   help="override learning rate")
    p.add_argument("--patience", type=int, default=None,
                   help="override early-stop patience")
    p.add_argument("--json", action="store_true",
                   help="print the final metrics row as JSON")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("encode", help="export trained node encodings for "
                                      "one graph as CSV")
    p.add_argument("--checkpoint", required=True, help="trained checkpoint")
    p.add_argument("--input", required=True, help="graph file (.g6 or .json)")
    p.add_argument("--index", type=int, default=0,
                   help="which graph in the file")
    p.add_argument("--out", required=True, help="output .csv file")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("walk", help="export raw random-walk node encodings "
                                    "(no model) as CSV")
    p.add_argument("--input", required=True, help="graph file (.g6 or .json)")
    p.add_argument("--index", type=int, default=0,
                   help="which graph in the file")
    p.add_argument("--dim", type=int, default=8, help="walk length")
    p.add_argument("--mode", choices=("exact", "float"), default="float",
                   help="exact fractions or floating point")
    p.add_argument("--out", required=True, help="output .csv file")
    p.set_defaults(func=cmd_walk)

    p = sub.add_parser("augment", help="concatenate node features with "
                                       "encodings column-wise")
    p.add_argument("--features", required=True, help="initial features CSV")
    p.add_argument("--pse", required=True, help="encoding CSV")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient "
                                         "suite")
    p.add_argument("--seed", type=int, default=0, help="probe seed")
    p.add_argument("--json", action="store_true",
                   help="print results as JSON")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as err:
        print(f"gfse: error: missing input: {err}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (GraphFormatError, CheckpointFormatError,
            json.JSONDecodeError) as err:
        print(f"gfse: error: bad format: {err}", file=sys.stderr)
        return EXIT_BAD_FORMAT
    except (ValueError, TypeError) as err:
        print(f"gfse: error: invalid value: {err}", file=sys.stderr)
        return EXIT_BAD_VALUE
    except (TrainDivergence, RuntimeError) as err:
        print(f"gfse: error: runtime failure: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
