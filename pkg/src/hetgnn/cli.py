"""Command-line entry point: hetgnn <command> [flags].

Exit codes: 0 success, 1 usage error, 2 data error. Logs go to stderr;
data goes to files (or stdout for summaries and metrics).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

import numpy as np

from hetgnn.graph_schema import read_schema
from hetgnn.io_format import encode_graph, read_header, read_records, write_records, write_sharded
from hetgnn.runner import evaluate, export_model, infer, load_model, load_training_config, run_training
from hetgnn.sampler import load_graph_store, parse_table_args, read_spec, sample_subgraphs

log = logging.getLogger("hetgnn")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _dtype_name(entry: dict) -> str:
    return "string" if entry["kind"] == "string" else np.dtype(entry["dtype"]).name


def _describe_entry(entry: dict) -> str:
    if entry["kind"] == "ragged":
        flat = entry["flat"]
        return f"{_dtype_name(flat)}{[-1] + flat['shape'][1:]}"
    return f"{_dtype_name(entry)}{entry['shape'][1:]}"


def _summarize(header: dict) -> list[str]:
    lines = []
    if "root" in header:
        lines.append(f"  root: {header['root']['node_set']}[{header['root']['index']}]")
    for name in sorted(header["node_sets"]):
        entry = header["node_sets"][name]
        feats = ", ".join(f"{k}: {_describe_entry(v)}" for k, v in sorted(entry["features"].items()))
        lines.append(f"  node set {name}: {entry['size']} nodes; features [{feats}]")
    for name in sorted(header["edge_sets"]):
        entry = header["edge_sets"][name]
        feats = ", ".join(f"{k}: {_describe_entry(v)}" for k, v in sorted(entry["features"].items()))
        lines.append(f"  edge set {name} ({entry['source_set']} -> {entry['target_set']}): {entry['size']} edges; "
                     f"features [{feats}]")
    if header["context"]:
        feats = ", ".join(f"{k}: {_describe_entry(v)}" for k, v in sorted(header["context"].items()))
        lines.append(f"  context: features [{feats}]")
    return lines


def cmd_schema_validate(args) -> int:
    schema = read_schema(args.schema)
    n, e, c = len(schema.node_sets), len(schema.edge_sets), len(schema.context)
    print(f"{args.schema}: valid; {n} node set{'s' * (n != 1)}, {e} edge set{'s' * (e != 1)}, "
          f"{c} context feature{'s' * (c != 1)}; fingerprint {schema.fingerprint():016x}")
    return EXIT_OK


def cmd_records_inspect(args) -> int:
    shown = 0
    for index, (path, offset, payload) in enumerate(read_records(args.input)):
        if args.limit is not None and shown >= args.limit:
            break
        fingerprint, header = read_header(payload)
        print(f"record {index} ({path}@{offset}): fingerprint {fingerprint:016x}")
        print("\n".join(_summarize(header)))
        shown += 1
    if shown == 0:
        print("no records")
    return EXIT_OK


def _read_seeds(path: str) -> list[str]:
    with open(path, encoding="utf-8") as f:
        return [line.strip() for line in f if line.strip() and not line.startswith("#")]


def cmd_sample(args) -> int:
    schema = read_schema(args.schema)
    store = load_graph_store(schema, parse_table_args(args.nodes), parse_table_args(args.edges or []))
    spec = read_spec(args.spec)
    seeds = _read_seeds(args.seeds)
    graphs = sample_subgraphs(store, spec, seeds, global_seed=args.seed, num_shards=args.shards)
    payloads = (encode_graph(g, schema, root_set=spec.seed_op.node_set_name) for g in graphs)
    writer = write_sharded if "@" in args.out else write_records
    count = writer(args.out, payloads)
    log.info("wrote %d records to %s", count, args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    job = load_training_config(args.config)
    if args.seed is not None:
        job.trainer.seed = args.seed
    if args.epochs is not None:
        job.trainer.epochs = args.epochs

    def report(record):
        if args.log_every and record["step"] % args.log_every == 0:
            log.info("step %d lr %.3g loss %.4f accuracy %s", record["step"], record["lr"], record["loss"],
                     record["accuracy"])

    result = run_training(job.train_records, job.schema, job.model_config, job.task, job.trainer,
                          valid_data=job.valid_records, on_step=report)
    last = result.history[-1] if result.history else {}
    result.artifact.metadata.update({"final_loss": last.get("loss"), "final_accuracy": last.get("accuracy"),
                                     "validation": result.validation[-1] if result.validation else None})
    export_model(result.artifact, args.out)
    if args.history:
        with open(args.history, "w", encoding="utf-8") as f:
            for record in result.history:
                f.write(json.dumps(record, sort_keys=True) + "\n")
    summary = {"steps": len(result.history), "skipped_batches": result.skipped_batches,
               "final_loss": last.get("loss"), "final_accuracy": last.get("accuracy"),
               "validation": result.validation}
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    schema = read_schema(args.schema)
    artifact = load_model(args.model, schema)
    metrics = evaluate(artifact, args.records, schema, args.batch_size)
    if metrics["examples"] == 0:
        log.warning("0 examples; metrics absent")
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def cmd_infer(args) -> int:
    schema = read_schema(args.schema)
    artifact = load_model(args.model, schema)
    count = infer(artifact, args.input, schema, args.out, args.batch_size)
    log.info("wrote %d predictions to %s", count, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hetgnn", description="Heterogeneous graph neural network toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("schema-validate", help="parse and check a graph schema")
    p.add_argument("--schema", required=True)
    p.set_defaults(func=cmd_schema_validate)

    p = sub.add_parser("records-inspect", help="print set sizes and features of records")
    p.add_argument("--in", dest="input", required=True, help="record file or pattern (name@K, glob, a,b)")
    p.add_argument("--limit", type=int, default=None)
    p.set_defaults(func=cmd_records_inspect)

    p = sub.add_parser("sample", help="sample one rooted subgraph per seed into a record file")
    p.add_argument("--schema", required=True)
    p.add_argument("--nodes", nargs="+", required=True, metavar="SET=PATH")
    p.add_argument("--edges", nargs="*", default=[], metavar="SET=PATH")
    p.add_argument("--spec", required=True)
    p.add_argument("--seeds", required=True, help="file with one seed node id per line")
    p.add_argument("--out", required=True, help="output record file or name@K")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shards", type=int, default=1, help="number of sampling workers")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("train", help="train a model from a JSON training config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="model artifact path")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--epochs", type=int, default=None, help="overrides the config epochs")
    p.add_argument("--history", default=None, help="write per-step metrics as NDJSON")
    p.add_argument("--log-every", type=int, default=10)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="loss and accuracy of a model on records")
    p.add_argument("--model", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--batch-size", type=int, default=32)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("infer", help="write NDJSON predictions for records")
    p.add_argument("--model", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int, default=32)
    p.set_defaults(func=cmd_infer)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    logging.basicConfig(stream=sys.stderr, level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, RuntimeError) as e:
        print(f"hetgnn {args.command}: error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
