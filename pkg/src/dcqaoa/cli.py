"""Command-line entry point (``dcqaoa <subcommand>``).

Relative default paths for datasets, checkpoints and reports live under the directory
named by ``DCQAOA_DATA_DIR`` (default ``./data``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import bench, gen
from .graph import BestKnownTable, WeightedGraph, estimate_optimum, parse_instance, qubo_to_maxcut, reference_optimum
from .solver import SimConfig, recursive_solve
from .validation import derive_seed

DATA_ENV = "DCQAOA_DATA_DIR"
log = logging.getLogger("dcqaoa")


def data_dir() -> Path:
    return Path(os.environ.get(DATA_ENV, "data"))


def _default(name: str) -> Path:
    return data_dir() / name


# --- shared argument groups -------------------------------------------------


def _add_qaoa_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("QAOA protocol")
    g.add_argument("--max-nodes", type=int, default=10, help="qubit budget per subgraph (default 10)")
    g.add_argument("--p", type=int, default=1, help="QAOA depth (default 1)")
    g.add_argument("--steps", type=int, default=20, help="angle-optimisation steps per subgraph (default 20)")
    g.add_argument("--lr", type=float, default=0.01, help="angle-optimisation learning rate (default 0.01)")
    g.add_argument("--shots", type=int, default=1000, help="measurement shots per subgraph (default 1000)")
    g.add_argument("--readout-p", type=float, default=0.0, help="readout bit-phase flip probability (default 0)")
    g.add_argument("--shot-noise", type=int, default=None, help="estimate gradients from this many shots (default exact)")
    g.add_argument("--exact-merge", action="store_true", help="solve the final merge graph by enumeration")
    g.add_argument("--seed", type=int, default=42, help="base seed (default 42)")


def _add_instance_flags(p: argparse.ArgumentParser, required=True):
    g = p.add_argument_group("instances")
    g.add_argument("instances", nargs="*", help="instance files or directories")
    g.add_argument("--format", choices=["edge-list", "qubo"], default="edge-list")
    g.add_argument("--best-known", type=Path, default=None, help="CSV of instance_name,opt_value")
    g.add_argument("--synthetic", type=int, default=0, help="use this many synthetic signed ER graphs instead")
    g.add_argument("--sizes", type=int, nargs=2, default=(20, 60), metavar=("MIN", "MAX"), help="synthetic size range")
    g.add_argument("--suite-seed", type=int, default=0, help="seed of the synthetic suite")
    g.add_argument("--split", choices=["all", "train", "test"], default="all", help="keep only one side of the suffix split")
    g.add_argument("--estimate-opt", action="store_true", help="use a simulated-annealing reference cut when no OPT is known (implied by --synthetic)")


def _add_gen_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("learned partitioner")
    g.add_argument("--evaluator", type=Path, default=None, help="evaluator checkpoint (default DATA/evaluator.npz)")
    g.add_argument("--generator", type=Path, default=None, help="generator checkpoint (default DATA/generator.npz)")
    g.add_argument("--tta-steps", type=int, default=gen.TTA_DEFAULT_STEPS, help="test-time adaptation steps (default 64, max 1000)")


def _load_graphs(args) -> list[WeightedGraph]:
    if args.synthetic:
        graphs = bench.synthetic_suite(args.synthetic, tuple(args.sizes), seed=args.suite_seed)
    elif args.instances:
        graphs = bench.load_instances(args.instances, args.format)
    else:
        raise SystemExit("no instances given (pass files/directories or --synthetic N)")
    if args.split != "all":
        train, test = bench.split_suite(graphs)
        graphs = train if args.split == "train" else test
    return graphs


def _table(args):
    return BestKnownTable.load(args.best_known) if args.best_known else None


def _optima(args, graphs) -> dict:
    """OPT per graph: table, enumeration, or (when allowed) the annealing reference."""
    table = _table(args)
    out = {}
    for g in graphs:
        try:
            out[g.name] = reference_optimum(g, table)
        except KeyError:
            if not (args.estimate_opt or args.synthetic):
                raise SystemExit(f"no OPT for {g.name}; pass --best-known or --estimate-opt") from None
            out[g.name] = estimate_optimum(g, table)
    return out


def _sim_config(args) -> SimConfig:
    return SimConfig(
        max_nodes=args.max_nodes,
        p=args.p,
        steps=args.steps,
        lr=args.lr,
        shots=args.shots,
        readout_p=args.readout_p,
        shot_noise=args.shot_noise,
        exact_merge=args.exact_merge,
    )


def _gen_strategy(args):
    ev = gen.load_model(args.evaluator or _default("evaluator.npz"))
    gn = gen.load_model(args.generator or _default("generator.npz"))
    return gen.GenStrategy(gn, ev, args.tta_steps)


def _run_config(args, graphs, methods) -> bench.RunConfig:
    return bench.RunConfig(
        graphs,
        optima=_optima(args, graphs),
        methods=tuple(methods),
        p=args.p,
        max_nodes=args.max_nodes,
        steps=args.steps,
        lr=args.lr,
        shots=args.shots,
        runs=args.runs,
        seed=args.seed,
        readout_p=args.readout_p,
        shot_noise=args.shot_noise,
        exact_merge=args.exact_merge,
        tta_steps=args.tta_steps,
    )


# --- subcommands ------------------------------------------------------------


def cmd_solve(args):
    path = Path(args.instance_opt or args.instance or "")
    if not path.name:
        raise SystemExit("solve needs an instance file")
    inst = parse_instance(path, args.format)
    offset = 0.0
    if args.format == "qubo":
        g, offset = qubo_to_maxcut(inst)
        g = WeightedGraph(g.num_nodes, g.u, g.v, g.w, name=inst.name)
    else:
        g = inst
    strategy = _gen_strategy(args) if args.partitioner == "gen" else args.partitioner
    try:
        opt = reference_optimum(g, _table(args))
    except KeyError:
        opt = None
    runs = []
    for r in range(args.runs):
        seed = args.seed if args.runs == 1 else derive_seed(args.seed, g.name, r)
        rep = recursive_solve(g, strategy, _sim_config(args), seed=seed, opt=opt)
        out = {"instance": g.name, "partitioner": args.partitioner, "run": r, "seed": seed, **rep.to_dict()}
        if args.format == "qubo":
            x = ((1 - rep.spins[1:] * rep.spins[0]) // 2).astype(int)
            out["qubo_assignment"] = x.tolist()
            out["qubo_objective"] = float(inst.objective(x))
            out["qubo_offset"] = offset
        runs.append(out)
    text = json.dumps(runs[0] if len(runs) == 1 else runs, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    if args.csv:
        new = not Path(args.csv).exists()
        with open(args.csv, "a", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if new:
                w.writerow(["instance", "partitioner", "run", "seed", "cut", "ratio", "total_calls", "depth"])
            for o in runs:
                w.writerow([o["instance"], o["partitioner"], o["run"], o["seed"], repr(o["cut"]), "" if o["ratio"] is None else repr(o["ratio"]), o["total_calls"], o["depth"]])


def cmd_evaluate(args):
    graphs = _load_graphs(args)
    methods = args.methods
    strategies = {"gen": _gen_strategy(args)} if "gen" in methods else {}
    table = bench.evaluate_suite(_run_config(args, graphs, methods), strategies, log=log.info)
    out = args.out or _default("results")
    for p in bench.report(table, out):
        log.info("wrote %s", p)
    print(json.dumps(table.summary(), indent=1, sort_keys=True))


def cmd_noise_eval(args):
    graphs = _load_graphs(args)
    strategies = {"gen": _gen_strategy(args)} if "gen" in args.methods else {}
    res = bench.noise_eval(_run_config(args, graphs, args.methods), args.noise_p, strategies)
    text = json.dumps(res, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text)
    print(text)


def cmd_gen_dataset(args):
    graphs = _load_graphs(args)
    optima = _optima(args, graphs)
    files = {} if args.synthetic else {Path(f).stem: str(f) for f in args.instances}
    samples = gen.build_offline_dataset(graphs, _sim_config(args), seed=args.seed, runs=args.runs_per_heuristic, optima=optima, graph_files=files)
    out = args.out or _default("dataset.jsonl")
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    gen.save_dataset(samples, out)
    print(f"{len(samples)} samples -> {out}")


def cmd_train_evaluator(args):
    graphs = _load_graphs(args)
    samples = gen.load_dataset(args.dataset or _default("dataset.jsonl"))
    net = gen.EvaluatorNet(p=args.p, unweighted=args.gnn_unweighted, seed=args.seed)
    cfg = gen.EvaluatorTrainConfig(args.batch_size, args.train_lr, args.weight_decay, args.epochs, args.factor, args.patience, seed=args.seed)
    hist = gen.train_evaluator(net, samples, graphs, cfg, log=log.info)
    out = args.out or _default("evaluator.npz")
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    gen.save_model(out, net, extra={"best_epoch": hist.best_epoch, "val_mse": hist.val_mse})
    print(f"best validation MSE {min(hist.val_mse):.6g} at epoch {hist.best_epoch + 1} -> {out}")


def cmd_train_generator(args):
    graphs = _load_graphs(args)
    ev = gen.load_model(args.evaluator or _default("evaluator.npz"))
    net = gen.GeneratorNet(p=args.p, max_nodes=args.max_nodes, unweighted=args.gnn_unweighted, seed=args.seed)
    cfg = gen.GeneratorTrainConfig(args.batch_size, args.train_lr, args.weight_decay, args.epochs, args.factor, args.patience, seed=args.seed)
    hist = gen.train_generator(net, ev, graphs, cfg, log=log.info)
    out = args.out or _default("generator.npz")
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    gen.save_model(out, net, extra={"history": hist})
    print(f"final mean predicted ratio {hist[-1]:.6f} -> {out}")


def cmd_adapt(args):
    g = bench.load_instances([args.instance], args.format)[0]
    strat = _gen_strategy(args)
    res = gen.tta_adapt(strat.generator, strat.evaluator, g, args.tta_steps, capacity=args.max_nodes)
    out = {
        "instance": g.name,
        "labels": res.partition.labels.tolist(),
        "angles": res.angles.tolist(),
        "rho_hat": res.rho_hat,
        "best_step": res.best_step,
        "trajectory": res.trajectory,
    }
    text = json.dumps(out, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    print(text)


def cmd_report(args):
    table = bench.ResultTable.from_json(Path(args.results).read_text())
    out = args.out or Path(args.results).parent
    bench.report(table, out)
    summary = table.summary()
    if args.reference:
        if args.reference not in table.methods:
            raise SystemExit(f"method {args.reference!r} not in the results")
        ref = table.means(args.reference)
        for m in table.methods:
            if m != args.reference and len(ref) >= 2:
                summary[m][f"p_value_{args.reference}_better"] = bench.paired_t_test(ref, table.means(m))
    print(json.dumps(summary, indent=1, sort_keys=True))


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcqaoa", description="Divide-and-conquer QAOA MaxCut with learned partitioning.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    partitioners = ["random", "modularity", "boundary", "kl", "gen"]

    p = sub.add_parser("solve", help="solve one instance")
    p.add_argument("instance", nargs="?", default=None)
    p.add_argument("--instance", dest="instance_opt", default=None, help="instance file (alternative to the positional)")
    p.add_argument("--runs", type=int, default=1, help="independent runs with derived seeds (default 1)")
    p.add_argument("--csv", type=Path, default=None, help="append one CSV row per run")
    p.add_argument("--format", choices=["edge-list", "qubo"], default="edge-list")
    p.add_argument("--partitioner", choices=partitioners, default="modularity")
    p.add_argument("--best-known", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None)
    _add_qaoa_flags(p)
    _add_gen_flags(p)
    p.set_defaults(func=cmd_solve)

    for name, func, helptext in (("evaluate", cmd_evaluate, "benchmark partitioners over a suite"), ("noise-eval", cmd_noise_eval, "compare noiseless and noisy readout")):
        p = sub.add_parser(name, help=helptext)
        _add_instance_flags(p)
        _add_qaoa_flags(p)
        _add_gen_flags(p)
        p.add_argument("--methods", nargs="+", choices=partitioners, default=list(bench.BASELINES))
        p.add_argument("--runs", type=int, default=bench.DEFAULT_RUNS, help="runs per instance and method (default 10)")
        p.add_argument("--out", type=Path, default=None)
        if name == "noise-eval":
            p.add_argument("--noise-p", type=float, default=0.05, help="readout flip probability (default 0.05)")
        p.set_defaults(func=func)

    p = sub.add_parser("gen-dataset", help="label heuristic partitions by simulation")
    _add_instance_flags(p)
    _add_qaoa_flags(p)
    p.add_argument("--runs-per-heuristic", type=int, default=70)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_gen_dataset)

    for name, func, defaults in (
        ("train-evaluator", cmd_train_evaluator, dict(batch_size=32, train_lr=1e-3, epochs=100, factor=0.5, patience=3)),
        ("train-generator", cmd_train_generator, dict(batch_size=16, train_lr=4e-3, epochs=1500, factor=0.8, patience=100)),
    ):
        p = sub.add_parser(name)
        _add_instance_flags(p)
        _add_qaoa_flags(p)
        if name == "train-evaluator":
            p.add_argument("--dataset", type=Path, default=None, help="JSON-lines dataset (default DATA/dataset.jsonl)")
        else:
            p.add_argument("--evaluator", type=Path, default=None)
        p.add_argument("--batch-size", type=int, default=defaults["batch_size"])
        p.add_argument("--train-lr", type=float, default=defaults["train_lr"])
        p.add_argument("--weight-decay", type=float, default=5e-4)
        p.add_argument("--epochs", type=int, default=defaults["epochs"])
        p.add_argument("--factor", type=float, default=defaults["factor"])
        p.add_argument("--patience", type=int, default=defaults["patience"])
        p.add_argument("--gnn-unweighted", action="store_true", help="ignore edge weights inside the graph layers")
        p.add_argument("--out", type=Path, default=None)
        p.set_defaults(func=func)

    p = sub.add_parser("adapt", help="test-time adaptation on one instance")
    p.add_argument("instance")
    p.add_argument("--format", choices=["edge-list", "qubo"], default="edge-list")
    p.add_argument("--max-nodes", type=int, default=10)
    p.add_argument("--out", type=Path, default=None)
    _add_gen_flags(p)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("report", help="re-emit reports from a results.json")
    p.add_argument("results", type=Path)
    p.add_argument("--reference", default=None, help="method tested against every other (one-sided paired t-test)")
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s", stream=sys.stderr)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
