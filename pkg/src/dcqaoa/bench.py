"""Benchmark orchestration: instance suites, repeated solves, rankings, significance tests, reports."""

from __future__ import annotations

import csv
import io
import json
import re
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .graph import BestKnownTable, WeightedGraph, parse_instance, qubo_to_maxcut, reference_optimum
from .solver import SimConfig, recursive_solve
from .validation import derive_seed

DEFAULT_RUNS = 10
DEFAULT_SEED = 42
BASELINES = ("random", "modularity", "boundary", "kl")


# --- instances --------------------------------------------------------------


def signed_er_graph(n: int, avg_degree: float = 4.0, seed=0, name: str = "", positive_fraction: float = 0.5, low: float = 0.1, high: float = 1.0) -> WeightedGraph:
    """Erdos-Renyi graph with weights of magnitude ``U(low, high)`` and random signs."""
    rng = np.random.default_rng(seed)
    p = min(1.0, avg_degree / max(n - 1, 1))
    iu, iv = np.triu_indices(n, 1)
    keep = rng.random(len(iu)) < p
    m = int(keep.sum())
    sign = np.where(rng.random(m) < positive_fraction, 1.0, -1.0)
    w = sign * rng.uniform(low, high, m)
    return WeightedGraph(n, iu[keep], iv[keep], w, name=name or f"er{n}")


def synthetic_suite(count: int = 30, n_range=(20, 60), seed=0, prefix: str = "er", avg_degree: float = 4.0, positive_fraction: float = 0.5) -> list[WeightedGraph]:
    """``count`` signed ER graphs with sizes spread evenly over ``n_range``; names end in ``.index``."""
    sizes = np.linspace(n_range[0], n_range[1], count).round().astype(int) if count > 1 else np.array([n_range[0]])
    return [
        signed_er_graph(int(n), avg_degree, derive_seed(seed, prefix, i), f"{prefix}{int(n)}.{i + 1}", positive_fraction)
        for i, n in enumerate(sizes)
    ]


def load_instances(paths, format: str = "edge-list") -> list[WeightedGraph]:
    """Parse instance files; directories are expanded to their sorted regular files."""
    files = []
    for p in map(Path, paths):
        files.extend(sorted(f for f in p.iterdir() if f.is_file()) if p.is_dir() else [p])
    graphs = []
    for f in files:
        inst = parse_instance(f, format)
        if format == "qubo":
            g, _ = qubo_to_maxcut(inst)
            inst = WeightedGraph(g.num_nodes, g.u, g.v, g.w, name=inst.name)
        graphs.append(inst)
    return graphs


_SUFFIX = re.compile(r"(\d+)$")


def is_test_instance(name: str) -> bool | None:
    m = _SUFFIX.search(name)
    if m is None:
        return None
    return m.group(1)[-1] in "12"


def split_suite(instances):
    """Names whose trailing number ends in 1 or 2 are test instances; the rest train.

    Names without a trailing number go to training with a warning.
    """
    train, test = [], []
    for inst in instances:
        name = inst if isinstance(inst, str) else inst.name
        flag = is_test_instance(name)
        if flag is None:
            warnings.warn(f"instance name {name!r} has no numeric suffix; assigned to train", stacklevel=2)
        (test if flag else train).append(inst)
    return train, test


# --- evaluation -------------------------------------------------------------


@dataclass
class RunConfig:
    instances: list
    methods: tuple = BASELINES
    p: int = 1
    max_nodes: int = 10
    steps: int = 20
    lr: float = 0.01
    shots: int = 1000
    runs: int = DEFAULT_RUNS
    seed: int = DEFAULT_SEED
    readout_p: float = 0.0
    shot_noise: int | None = None
    exact_merge: bool = False
    tta_steps: int = 64
    optima: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        if not self.methods:
            raise ValueError("at least one method is required")

    def sim_config(self) -> SimConfig:
        return SimConfig(
            max_nodes=self.max_nodes,
            p=self.p,
            steps=self.steps,
            lr=self.lr,
            shots=self.shots,
            readout_p=self.readout_p,
            shot_noise=self.shot_noise,
            exact_merge=self.exact_merge,
        )


@dataclass
class ResultRow:
    instance: str
    num_nodes: int
    method: str
    mean: float
    std: float
    rank: int
    win: bool
    ratios: list
    mean_time: float = 0.0


@dataclass
class ResultTable:
    rows: list

    @property
    def instances(self) -> list[str]:
        return list(dict.fromkeys(r.instance for r in self.rows))

    @property
    def methods(self) -> list[str]:
        return list(dict.fromkeys(r.method for r in self.rows))

    def row(self, instance: str, method: str) -> ResultRow:
        for r in self.rows:
            if r.instance == instance and r.method == method:
                return r
        raise KeyError((instance, method))

    def means(self, method: str) -> np.ndarray:
        """Per-instance mean ratios of ``method`` in instance order."""
        return np.array([self.row(i, method).mean for i in self.instances])

    def summary(self) -> dict:
        out = {}
        for m in self.methods:
            rows = [r for r in self.rows if r.method == m]
            out[m] = {
                "mean_ratio": float(np.mean([r.mean for r in rows])),
                "mean_rank": float(np.mean([r.rank for r in rows])),
                "wins": int(sum(r.win for r in rows)),
            }
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# ranks: ties share the minimum rank; win means rank 1\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["instance", "num_nodes", "method", "mean_ratio", "std_ratio", "rank", "win", "runs"])
        for r in self.rows:
            w.writerow([r.instance, r.num_nodes, r.method, repr(r.mean), repr(r.std), r.rank, int(r.win), len(r.ratios)])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"rows": [asdict(r) for r in self.rows], "summary": self.summary()}, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ResultTable":
        return cls([ResultRow(**r) for r in json.loads(text)["rows"]])

    def by_size(self) -> list[dict]:
        """Mean ratio per (method, N): the data behind a ratio-versus-size plot."""
        acc: dict = {}
        for r in self.rows:
            acc.setdefault((r.method, r.num_nodes), []).append(r.mean)
        return [{"method": m, "num_nodes": n, "mean_ratio": float(np.mean(v)), "instances": len(v)} for (m, n), v in sorted(acc.items())]


def assign_ranks(means: dict) -> dict:
    """Competition ranking, higher is better; exactly equal means share the smaller rank."""
    ranks = {}
    for m, v in means.items():
        ranks[m] = 1 + sum(1 for other in means.values() if other > v)
    return ranks


def _sample_std(x) -> float:
    return float(np.std(x, ddof=1)) if len(x) > 1 else 0.0


def build_table(results: dict, sizes: dict) -> ResultTable:
    """``results[(instance, method)]`` holds the per-run ratios."""
    instances = list(dict.fromkeys(i for i, _ in results))
    rows = []
    for inst in instances:
        methods = [m for i, m in results if i == inst]
        means = {m: float(np.mean(results[(inst, m)])) for m in methods}
        ranks = assign_ranks(means)
        for m in methods:
            ratios = [float(x) for x in results[(inst, m)]]
            rows.append(ResultRow(inst, sizes[inst], m, means[m], _sample_std(ratios), ranks[m], ranks[m] == 1, ratios))
    return ResultTable(rows)


def evaluate_suite(config: RunConfig, strategies: dict | None = None, table: BestKnownTable | None = None, log=None) -> ResultTable:
    """Solve every instance ``runs`` times per method and tabulate the performance ratios.

    OPT comes from ``config.optima``, then enumeration (N <= 20), then ``table``; a
    missing value raises ``KeyError``. ``strategies`` maps method names to strategy objects (for learned partitioners); the
    names in ``BASELINES`` need no entry. Run ``r`` on instance ``x`` uses the seed
    ``derive_seed(seed, x, r)`` for every method.
    """
    strategies = strategies or {}
    sim = config.sim_config()
    results, sizes, times = {}, {}, {}
    for g in config.instances:
        opt = config.optima.get(g.name)
        if opt is None:
            opt = reference_optimum(g, table)
        sizes[g.name] = g.num_nodes
        for method in config.methods:
            strategy = strategies.get(method, method)
            ratios, elapsed = [], 0.0
            for r in range(config.runs):
                t0 = time.perf_counter()
                rep = recursive_solve(g, strategy, sim, seed=derive_seed(config.seed, g.name, r), opt=opt)
                elapsed += time.perf_counter() - t0
                ratios.append(rep.ratio)
            results[(g.name, method)] = ratios
            times[(g.name, method)] = elapsed / config.runs
            if log:
                log(f"{g.name} {method}: mean ratio {np.mean(ratios):.4f}")
    out = build_table(results, sizes)
    for row in out.rows:
        row.mean_time = times[(row.instance, row.method)]
    return out


def paired_t_test(a, b) -> float:
    """One-sided paired t-test of ``mean(a - b) > 0``; returns the p-value.

    Identical inputs give 0.5; constant nonzero differences give 0 or 1.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("need two equal-length 1-D samples with at least two entries")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("non-finite input")
    d = a - b
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0.0:
        return 0.5 if mean == 0.0 else (0.0 if mean > 0 else 1.0)
    t = mean / (sd / np.sqrt(len(d)))
    return float(stats.t.sf(t, df=len(d) - 1))


def report(table: ResultTable, out_dir, formats=("csv", "json"), by_size: bool = True) -> list[Path]:
    """Write ``results.csv`` / ``results.json`` (and ``by_size.csv``) into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        path = out / "results.csv"
        path.write_text(table.to_csv())
        written.append(path)
    if "json" in formats:
        path = out / "results.json"
        path.write_text(table.to_json())
        written.append(path)
    if by_size:
        path = out / "by_size.csv"
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "num_nodes", "mean_ratio", "instances"])
        for row in table.by_size():
            w.writerow([row["method"], row["num_nodes"], repr(row["mean_ratio"]), row["instances"]])
        path.write_text(buf.getvalue())
        written.append(path)
    return written


def noise_eval(config: RunConfig, readout_p: float = 0.05, strategies: dict | None = None, table: BestKnownTable | None = None) -> dict:
    """Mean ratio per method without and with readout bit-phase noise."""
    clean = evaluate_suite(RunConfig(**{**asdict_shallow(config), "readout_p": 0.0}), strategies, table)
    noisy = evaluate_suite(RunConfig(**{**asdict_shallow(config), "readout_p": readout_p}), strategies, table)
    out = {}
    for m in config.methods:
        a, b = float(clean.means(m).mean()), float(noisy.means(m).mean())
        out[m] = {"noiseless": a, "noisy": b, "degradation": a - b}
    return out


def asdict_shallow(config: RunConfig) -> dict:
    return {f: getattr(config, f) for f in config.__dataclass_fields__}
