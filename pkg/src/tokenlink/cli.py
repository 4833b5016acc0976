"""Command-line entry point: ``tokenlink <command> ...``.

Exit codes: 0 success, 1 invalid input or usage, 2 numeric failure, 3 failed check.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .exceptions import CheckFailed, ConvergenceError, NumericError

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _emit(obj, out=None, name=None):
    text = json.dumps(obj, indent=2, default=float)
    if out is not None and name is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / name).write_text(text + "\n", encoding="utf-8")
    print(text)


def _read_pairs(path):
    pairs = np.loadtxt(path, dtype=np.int64, ndmin=2, comments="#")
    if pairs.size and pairs.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns")
    return pairs.reshape(-1, 2)


def _load_data(data, need_split=True):
    from .graph import load_edge_list, load_id_map, read_split, split_edges

    if "graph" not in data:
        raise ValueError("config [data] needs a graph path")
    id_map = load_id_map(data["id_map"]) if data.get("id_map") else None
    g = load_edge_list(data["graph"], id_map=id_map)
    split = None
    if need_split:
        if data.get("split"):
            split = read_split(data["split"]).validate(g.num_nodes)
        else:
            fr = [float(x) for x in data.get("fractions", "0.85,0.05,0.10").split(",")]
            split = split_edges(g, fr, 0)
    return g, split


# --- subcommands --------------------------------------------------------------------------------


def cmd_prepare(args):
    from .evaluator import global_negatives, per_positive_negatives
    from .graph import load_edge_list, split_edges, write_edge_list, write_negatives, write_split

    g = load_edge_list(args.graph)
    fr = [float(x) for x in args.fractions.split(",")]
    split = split_edges(g, fr, args.seed)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_edge_list(g, out / "graph.txt")
    write_split(split, out / "split.txt")
    np.savetxt(out / "negatives_global.txt", global_negatives(g, args.global_negatives, args.seed), fmt="%d")
    write_negatives(per_positive_negatives(g, split.test, args.per_positive, args.seed), out / "negatives_heart.txt")
    _emit({"nodes": g.num_nodes, "edges": g.num_edges, "train": len(split.train), "valid": len(split.valid),
           "test": len(split.test), "out": str(out)})
    return EXIT_OK


def cmd_heuristics(args):
    from .graph import load_edge_list
    from .heuristics import HeuristicKind, HeuristicTargetScaler, max_component_diameter, pair_scores

    g = load_edge_list(args.graph)
    pairs = _read_pairs(args.pairs) if args.pairs else g.edges()
    lines = ["u,v,kind,raw,normalized"]
    for name in args.kind.split(","):
        kind = HeuristicKind.parse(name)
        raw = pair_scores(kind, g, pairs)
        d_max = max_component_diameter(g) if kind is HeuristicKind.SPD else None
        norm = HeuristicTargetScaler(kind, d_max=d_max).fit_transform(raw)
        lines += [f"{u},{v},{kind.value},{r!r},{n!r}" for (u, v), r, n in zip(pairs.tolist(), raw, norm)]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_train(args):
    from .config import load_config
    from .model import file_digest
    from .trainer import train

    if not args.config:
        raise ValueError("train needs --config")
    cfg, data = load_config(args.config, seed=args.seed)
    g, split = _load_data(data)
    out = Path(args.out or "run")
    report, _ = train(cfg, g, split, out_dir=out)
    _emit({"losses": report.losses, "checkpoint": report.checkpoint, "seed": report.seed,
           "config_digest": report.config_digest,
           "checkpoint_digest": file_digest(report.checkpoint) if report.checkpoint else None})
    return EXIT_OK


def _scorer_from_checkpoint(path, cfg, graph):
    from .estimator import HeuristicRegressor, LinkPredictor
    from .model import LinkEncoder, load_checkpoint

    enc_cfg, arrays = load_checkpoint(path)
    cls = LinkPredictor if cfg.task == "link_bce" else HeuristicRegressor
    est = cls.from_config(cfg)
    est.set_params(**{k: getattr(enc_cfg, k) for k in ("hidden", "intermediate", "layers", "heads", "n_max",
                                                       "normalize_adjacency", "dtype")})
    return est.attach(LinkEncoder(enc_cfg, arrays), graph)


def cmd_eval(args):
    from .config import load_config
    from .evaluator import evaluate, global_negatives
    from .graph import read_negatives

    if not args.config:
        raise ValueError("eval needs --config for the data paths")
    cfg, data = load_config(args.config, seed=args.seed)
    g, split = _load_data(data)
    observed = split.observed_graph(g.num_nodes, include_valid=True)
    if args.kind:
        scorer = args.kind
    elif args.checkpoint:
        scorer = _scorer_from_checkpoint(args.checkpoint, cfg, observed)
    else:
        raise ValueError("eval needs --checkpoint or --kind")
    positives = split.test
    if args.protocol == "heart":
        negs_path = args.negatives or data.get("negatives")
        if not negs_path:
            raise ValueError("the heart protocol needs --negatives")
        report = evaluate(scorer, observed, positives, read_negatives(negs_path), "per_positive", seed=cfg.seed)
    else:
        negs = _read_pairs(args.negatives) if args.negatives else global_negatives(g, 1000, cfg.seed)
        report = evaluate(scorer, observed, positives, negs, "global_negatives", seed=cfg.seed)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        report.write_ranks_csv(Path(args.out) / "ranks.csv", positives)
    summary = {k: v for k, v in report.to_dict().items() if k != "ranks"}
    _emit(summary, args.out, "eval.json")
    return EXIT_OK


def cmd_check(args):
    from . import theory

    if args.what == "coherence":
        if args.d < 1 or args.n < 2:
            raise ValueError("coherence needs --n >= 2 and --d >= 1")
        from ._rng import substream
        from .model import _orthogonal_rows

        rows = _orthogonal_rows(args.n, args.d, substream(args.seed, "check"))
        rep = theory.coherence_report(rows / np.linalg.norm(rows, axis=1, keepdims=True))
        _emit(rep.to_dict(), args.out, "coherence.json")
        return EXIT_OK if rep.passed else EXIT_CHECK
    if args.what == "estimator":
        from .graph import Graph

        graphs = _small_graphs(args.max_nodes)
        dev1 = theory.cn_estimator_check(max(args.max_nodes, 2), graphs, steps=1, seed=args.seed)
        dev2 = theory.cn_estimator_check(max(args.max_nodes, 2), graphs, steps=2, seed=args.seed)
        tri = Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)])
        mc = theory.cn_monte_carlo(tri, 0, 1, d=64, trials=args.trials, seed=args.seed)
        ok = dev1 <= 1e-10 and dev2 <= 1e-10 and mc.passed
        _emit({"graphs": len(graphs), "cn_max_deviation": dev1, "walk_max_deviation": dev2,
               "monte_carlo_mean": mc.mean, "monte_carlo_stderr": mc.stderr, "passed": ok}, args.out, "estimator.json")
        return EXIT_OK if ok else EXIT_CHECK
    if args.what == "invariance":
        from ._rng import substream
        from .graph import Graph
        from .model import EncoderConfig, LinkEncoder, init_params

        rng = substream(args.seed, "check", 1)
        cfg = EncoderConfig(hidden=16, intermediate=32, layers=2, heads=2, n_max=8)
        model = LinkEncoder(cfg, init_params(cfg, substream(args.seed, "init")))
        worst, mutant_caught, cases = 0.0, 0, 0
        while cases < args.cases:
            n = int(rng.integers(4, 8))
            g = Graph.from_dense(np.triu(rng.random((n, n)) < 0.5, 1))
            u, v = rng.choice(n, size=2, replace=False)
            perm = rng.permutation(n)
            try:
                rep = theory.invariance_test(model, g, int(u), int(v), perm, seed=args.seed)
            except Exception:
                continue
            cases += 1
            worst = max(worst, rep.max_multiset_discrepancy)
            mut = theory.invariance_test(model, g, int(u), int(v), perm, seed=args.seed, mutant="label_offset")
            mutant_caught += not mut.passed
        ok = worst <= 1e-9
        _emit({"cases": cases, "max_multiset_discrepancy": worst, "mutant_detected": mutant_caught,
               "passed": ok}, args.out, "invariance.json")
        return EXIT_OK if ok else EXIT_CHECK
    if args.what == "degeneration":
        from ._rng import substream
        from .graph import Graph
        from .tokenizer import collate, encode
        from .sampler import SamplerConfig, sample_subgraph

        rng = substream(args.seed, "check", 2)
        model = theory.configure_degenerate(n_max=12, hidden=12, layers=2, scale=0.5, seed=args.seed)
        g = Graph.from_dense(np.triu(rng.random((30, 30)) < 0.15, 1))
        scfg = SamplerConfig(depth=1, fanout=5, budget=12)
        pairs = [rng.choice(30, size=2, replace=False) for _ in range(args.cases)]
        batch = collate([encode(sample_subgraph(g, int(a), int(b), scfg, rng), 12) for a, b in pairs])
        import torch

        with torch.no_grad():
            _, trace = model.forward_batch(batch, mode="attention_off")
        ref = theory.sum_mpnn_reference(batch, model.input_projection.detach().numpy(),
                                        [b.propagation.detach().numpy() for b in model.blocks])
        dev = float(np.max(np.abs(trace.H[-1].numpy() - ref)))
        ok = dev <= 1e-9
        _emit({"samples": args.cases, "max_abs_deviation": dev, "passed": ok}, args.out, "degeneration.json")
        return EXIT_OK if ok else EXIT_CHECK
    raise ValueError(f"unknown check {args.what!r}")


def _small_graphs(max_nodes):
    """All graphs on 2..max_nodes nodes with at most one edge pattern per adjacency bitmask (n <= 4)
    plus seeded random ones above that."""
    from ._rng import substream
    from .graph import Graph

    rng = substream(0, "check", 3)
    out = []
    for n in range(2, max_nodes + 1):
        iu = np.triu_indices(n, 1)
        if n <= 4:
            for mask in range(1 << len(iu[0])):
                bits = [(mask >> i) & 1 for i in range(len(iu[0]))]
                out.append(Graph.from_edges(n, [(a, b) for a, b, t in zip(*iu, bits) if t]))
        else:
            for _ in range(20):
                out.append(Graph.from_dense(np.triu(rng.random((n, n)) < 0.5, 1)))
    return out


def cmd_bench(args):
    from .bench import COLLATION_FIELDS, FORWARD_FIELDS, bench_collation, bench_forward, write_csv

    sizes = tuple(int(x) for x in args.batch_sizes.split(","))
    if args.what == "collation":
        rows, fields = bench_collation(sizes, repeats=args.repeats, seed=args.seed), COLLATION_FIELDS
    else:
        layers = tuple(int(x) for x in args.layers.split(","))
        rows = bench_forward(layers, batch_size=args.batch_size, batches=args.batches, seed=args.seed)
        fields = FORWARD_FIELDS
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        write_csv(rows, args.out, fields)
    else:
        write_csv(rows, sys.stdout, fields)
    return EXIT_OK


def cmd_sweep(args):
    import dataclasses

    from .config import load_config
    from .evaluator import evaluate, global_negatives
    from .trainer import train

    if not args.config:
        raise ValueError("sweep needs --config")
    cfg, data = load_config(args.config, seed=args.seed)
    g, split = _load_data(data)
    if args.what == "depth":
        variants = [("layers", k, dataclasses.replace(cfg.encoder, layers=k))
                    for k in range(1, args.max_layers + 1)]
    else:
        variants = [("init_scheme", s, dataclasses.replace(cfg.encoder, init_scheme=s, freeze_input_projection=f))
                    for s in ("orthogonal", "mean_shifted_gaussian", "low_rank") for f in (True,)]
    negs = global_negatives(g, 500, cfg.seed)
    observed = split.observed_graph(g.num_nodes, include_valid=True)
    lines = ["parameter,value,final_loss,mrr,auc"]
    for name, value, enc in variants:
        c = dataclasses.replace(cfg, encoder=enc)
        report, est = train(c, g, split)
        if c.task == "link_bce":
            rep = evaluate(est, observed, split.test, negs, seed=c.seed)
            lines.append(f"{name},{value},{report.losses[-1] if report.losses else ''},{rep.mrr},{rep.auc}")
        else:
            lines.append(f"{name},{value},{report.losses[-1] if report.losses else ''},,")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def build_parser():
    top = _Parser(add_help=False)
    top.add_argument("--seed", type=int, default=0)
    top.add_argument("--config")
    top.add_argument("--out")
    # repeated on every subcommand; SUPPRESS keeps a value given before the subcommand
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--config", default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS)
    p = _Parser(prog="tokenlink", description=__doc__.splitlines()[0], parents=[top])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("prepare", parents=[common], help="split a graph and fix evaluation negatives")
    s.add_argument("--graph", required=True)
    s.add_argument("--fractions", default="0.85,0.05,0.10")
    s.add_argument("--global-negatives", type=int, default=1000)
    s.add_argument("--per-positive", type=int, default=50)
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("heuristics", parents=[common], help="dump raw and normalised pair heuristics as CSV")
    s.add_argument("--graph", required=True)
    s.add_argument("--pairs")
    s.add_argument("--kind", default="CN")
    s.set_defaults(func=cmd_heuristics)

    s = sub.add_parser("train", parents=[common], help="train from a config file")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="rank test positives against negatives")
    s.add_argument("--checkpoint")
    s.add_argument("--kind", help="score with a heuristic instead of a checkpoint")
    s.add_argument("--protocol", choices=("orig", "heart"), default="orig")
    s.add_argument("--negatives")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("check", parents=[common], help="run a structural check and print a JSON report")
    s.add_argument("what", choices=("invariance", "estimator", "coherence", "degeneration"))
    s.add_argument("--n", type=int, default=4)
    s.add_argument("--d", type=int, default=2)
    s.add_argument("--cases", type=int, default=20)
    s.add_argument("--max-nodes", type=int, default=5)
    s.add_argument("--trials", type=int, default=10_000)
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("bench", parents=[common], help="collation or forward-pass timing as CSV")
    s.add_argument("what", choices=("collation", "forward"))
    s.add_argument("--batch-sizes", default="64,256,1024,4096")
    s.add_argument("--repeats", type=int, default=30)
    s.add_argument("--batches", type=int, default=50)
    s.add_argument("--layers", default="3,8")
    s.add_argument("--batch-size", type=int, default=100)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("sweep", parents=[common], help="train over depths or input initialisations")
    s.add_argument("what", choices=("depth", "init"))
    s.add_argument("--max-layers", type=int, default=3)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (NumericError, ConvergenceError) as exc:
        extra = f" (last good checkpoint: {exc.checkpoint})" if getattr(exc, "checkpoint", None) else ""
        print(f"numeric failure: {exc}{extra}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
