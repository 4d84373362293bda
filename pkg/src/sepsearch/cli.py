"""Command-line entry point: ``sepsearch <subcommand> [options]``.

Exit codes: 0 success, 1 domain error (``ErrorName: message`` on stderr),
2 usage error.  Every output file is written atomically.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__, head as head_mod, retrieval, store
from ._io import atomic_write
from .config import load_kv, parse_bool, parse_float_list, parse_int_list
from .errors import BadParams, IoFailure, SepSearchError, UsageError
from .metrics import evaluate_run
from .scenarios import ScenarioSpec, bottleneck_sweep, format_sweep, gen_synthetic, run_scenario
from .train import TrainConfig, train_head


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _version_text():
    return (
        f"sepsearch {__version__}\n"
        f"embeddings {store.MAGIC.decode()} v{store.FORMAT_VERSION}\n"
        f"head {head_mod.MAGIC.decode()} v{head_mod.FORMAT_VERSION}\n"
        f"index {retrieval.INDEX_MAGIC.decode()} v{retrieval.INDEX_FORMAT_VERSION}"
    )


def _need_file(*paths):
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise IoFailure(f"input file not found: {p}")


def _need_dir(*paths):
    for p in paths:
        if p is not None and not Path(p).is_dir():
            raise IoFailure(f"input directory not found: {p}")


def _need_out(*paths):
    for p in paths:
        if p is not None and not Path(p).resolve().parent.is_dir():
            raise IoFailure(f"output directory does not exist: {Path(p).parent}")


def _head_from_config(path, in_dim, out_dim):
    kv = load_kv(path) if path else {}
    unknown = set(kv) - {"kind", "hidden_dims", "seed", "bias", "activation"}
    if unknown:
        raise BadParams(f"unknown head config keys: {sorted(unknown)}")
    try:
        return head_mod.init_head(
            kv.get("kind", "linear").lower(),
            in_dim,
            out_dim,
            parse_int_list(kv.get("hidden_dims", "")),
            seed=int(kv.get("seed", 0)),
            bias=parse_bool(kv.get("bias", "true")),
            activation=kv.get("activation", "tanh"),
        )
    except ValueError as exc:
        raise BadParams(str(exc)) from exc


def cmd_gen_data(args):
    _need_file(args.spec)
    spec = ScenarioSpec.load(args.spec)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc}") from exc
    ds_a, ds_b = gen_synthetic(spec)
    store.save_dataset(ds_a, out / "A")
    store.save_dataset(ds_b, out / "B")
    atomic_write(out / "spec.cfg", spec.to_text(), text=True)
    print(f"wrote {out / 'A'} and {out / 'B'} ({spec.scenario}, {spec.n_queries} queries, {spec.n_items} items each)")


def cmd_train(args):
    _need_dir(args.dataset)
    _need_file(args.config, args.head_config)
    _need_out(args.out, args.log)
    ds = store.load_dataset(args.dataset)
    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    head = _head_from_config(args.head_config, ds.queries.dim, ds.items.dim)
    report = train_head(ds, head, cfg)
    head_mod.save_head(report.head, args.out)
    if args.log:
        atomic_write(args.log, "epoch\tmean_loss\n" + report.loss_log(), text=True)
    print(f"trained {report.head!r}: {report.steps} steps, final loss {report.epoch_losses[-1]:.6f}")


def cmd_fold(args):
    _need_file(args.head, args.queries)
    _need_out(args.out)
    folded = retrieval.fold_head(head_mod.load_head(args.head), store.load_embeddings(args.queries))
    store.save_embeddings(folded, args.out)


def cmd_index(args):
    _need_file(args.items)
    _need_out(args.out)
    ix = retrieval.build_ivf(store.load_embeddings(args.items), args.lists, args.iters, args.seed)
    retrieval.save_index(ix, args.out)
    sizes = [len(b) for b in ix.lists]
    print(f"index: {ix.n_lists} lists over {ix.n_items} items (min {min(sizes)}, max {max(sizes)})")


def cmd_search(args):
    _need_file(args.head, args.queries, args.items, args.index)
    _need_out(args.out)
    if args.nprobe is not None and args.index is None:
        raise UsageError("--nprobe requires --index")
    queries = store.load_embeddings(args.queries)
    items = store.load_embeddings(args.items)
    if args.head:
        # same precision as a fold written to disk, so both routes give identical runs
        queries = retrieval.fold_head(head_mod.load_head(args.head), queries).as_storage_precision()
    index = retrieval.load_index(args.index) if args.index else None
    runs = retrieval.search(queries, items, args.k, index=index, nprobe=args.nprobe, threads=args.threads)
    retrieval.save_run(runs, args.out, args.run_tag)


def cmd_eval(args):
    _need_file(args.run, args.qrels)
    _need_out(args.out)
    report = evaluate_run(retrieval.load_run(args.run), store.load_qrels(args.qrels), args.k)
    tsv = report.to_tsv(per_query=not args.no_per_query)
    if args.out:
        atomic_write(args.out, tsv, text=True)
    else:
        sys.stdout.write(tsv)
    print(report.summary_line())


def _train_cfg(path):
    _need_file(path)
    return TrainConfig.load(path) if path else TrainConfig()


def cmd_scenario(args):
    _need_file(args.spec)
    _need_out(args.out)
    report = run_scenario(ScenarioSpec.load(args.spec), _train_cfg(args.config))
    if args.out:
        atomic_write(args.out, report.to_tsv(), text=True)
    sys.stdout.write(report.summary())


def cmd_sweep(args):
    _need_file(args.spec, args.grid)
    _need_out(args.out)
    grid = load_kv(args.grid)
    unknown = set(grid) - {"head_sizes", "specificities"}
    if unknown:
        raise BadParams(f"unknown grid keys: {sorted(unknown)}")
    try:
        sizes = parse_int_list(grid.get("head_sizes", "0"))
        specs = parse_float_list(grid.get("specificities", "0,1"))
    except ValueError as exc:
        raise BadParams(str(exc)) from exc
    rows = bottleneck_sweep(ScenarioSpec.load(args.spec), sizes, specs, _train_cfg(args.config))
    text = format_sweep(rows)
    if args.out:
        atomic_write(args.out, text, text=True)
    sys.stdout.write(text)


def _ks(raw):
    try:
        ks = parse_int_list(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {raw!r}") from None
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("cut-offs must be positive")
    return ks


def build_parser():
    p = _Parser(
        prog="sepsearch",
        description="Searching heads over frozen embeddings.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--version", action="version", version=_version_text())
    p.add_argument("--threads", type=int, default=1, help="worker threads for search (default 1)")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("gen-data", help="generate synthetic datasets A and B")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", help="train a searching head on a dataset directory")
    s.add_argument("--dataset", required=True)
    s.add_argument("--config", help="train config (key=value)")
    s.add_argument("--head-config", help="head config (key=value: kind, hidden_dims, seed, bias, activation)")
    s.add_argument("--out", required=True, help="head checkpoint path")
    s.add_argument("--log", help="per-epoch loss TSV")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("fold", help="precompose a head into query embeddings")
    s.add_argument("--head", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fold)

    s = sub.add_parser("index", help="build an IVF index over item embeddings")
    s.add_argument("--items", required=True)
    s.add_argument("--lists", type=int, required=True, help="number of k-means buckets")
    s.add_argument("--iters", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_index)

    s = sub.add_parser("search", help="rank items for every query and write a TREC run")
    s.add_argument("--head")
    s.add_argument("--queries", required=True)
    s.add_argument("--items", required=True)
    s.add_argument("--index")
    s.add_argument("--nprobe", type=int)
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--run-tag", default="sepsearch")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_search)

    s = sub.add_parser("eval", help="score a run against qrels")
    s.add_argument("--run", required=True)
    s.add_argument("--qrels", required=True)
    s.add_argument("--k", type=_ks, default=[1, 10], help="comma-separated cut-offs")
    s.add_argument("--out", help="metrics TSV (default stdout)")
    s.add_argument("--no-per-query", action="store_true")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("scenario", help="run one thought-experiment scenario")
    s.add_argument("--spec", required=True)
    s.add_argument("--config", help="train config (key=value)")
    s.add_argument("--out", help="report TSV")
    s.set_defaults(func=cmd_scenario)

    s = sub.add_parser("sweep", help="specificity x head-size sweep")
    s.add_argument("--spec", required=True)
    s.add_argument("--grid", required=True, help="key=value: head_sizes, specificities")
    s.add_argument("--config", help="train config (key=value)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"UsageError: {exc}", file=sys.stderr)
        return 2
    except SepSearchError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def dispatch(argv):
    """Run the CLI and return its exit code (argparse exits are caught)."""
    try:
        return main(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
