"""Simulation benchmark: AUC, FWER and timing over rho_max / SNR grids."""

from __future__ import annotations

import csv
import io
import itertools
import time
import traceback
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import beta as beta_dist

from .cluster import ward_cluster
from .conservation import ConservationConfig, conserve
from .core import RngStream
from .engine import DEFAULT_N_PERM, run_hcpi
from .inference import infer
from .learners import LearnerSpec
from .simgen import SimConfig, simulate

__all__ = [
    "BenchConfig",
    "BenchReport",
    "auc",
    "clopper_pearson",
    "fwer_trial",
    "group_false_discovery",
    "run_benchmark",
    "run_method",
]

METHODS = ("hcpi", "hcpi_ic", "cpi_flat")
ROW_FIELDS = (
    "method",
    "rho_max",
    "snr",
    "repetition",
    "auc",
    "any_false_discovery",
    "any_group_false_discovery",
    "n_selected",
    "wall_time_seconds",
    "n_evaluations",
    "error",
)


def auc(scores, truth):
    """Probability that a random positive outscores a random negative.

    Ties count one half (Mann-Whitney form), computed from midranks.
    """
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth, dtype=bool)
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative labels")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    u = ranks[truth].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def fwer_trial(selected_leaves, support):
    """True if any selected variable lies outside ``support``."""
    support = set(int(j) for j in support)
    return any(int(j) not in support for j in selected_leaves)


def group_false_discovery(selected_member_sets, support):
    """True if some selected group contains only null variables."""
    support = set(int(j) for j in support)
    return any(not (set(int(m) for m in members) & support) for members in selected_member_sets)


def clopper_pearson(k, n, level=0.95):
    """Exact binomial confidence interval for ``k`` successes in ``n`` trials."""
    a = 1.0 - level
    lo = 0.0 if k == 0 else float(beta_dist.ppf(a / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(beta_dist.ppf(1 - a / 2, k + 1, n - k))
    return lo, hi


@dataclass(frozen=True)
class BenchConfig:
    sim: SimConfig = field(default_factory=lambda: SimConfig(n=400))
    rho_grid: tuple = (0.3, 0.9)
    snr_grid: tuple = (2.0,)
    repetitions: int = 30
    methods: tuple = ("hcpi", "cpi_flat")
    alpha: float = 0.05
    K: int = 10
    n_perm: int = DEFAULT_N_PERM
    learner: LearnerSpec | None = None
    epsilon: float = ConservationConfig().epsilon
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "rho_grid", tuple(float(r) for r in self.rho_grid))
        object.__setattr__(self, "snr_grid", tuple(float(s) for s in self.snr_grid))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}; expected a subset of {METHODS}")
        for rho, snr in itertools.product(self.rho_grid, self.snr_grid):
            replace(self.sim, rho_max=rho, snr=snr)  # validates the grid point

    def learner_for(self, scenario):
        if self.learner is not None:
            return self.learner
        return LearnerSpec("mlp" if scenario == "nonlinear" else "ridge")

    def to_dict(self):
        d = asdict(self)
        d["sim"] = self.sim.to_dict()
        d["learner"] = None if self.learner is None else self.learner.to_dict()
        return d


def run_method(method, dataset, K=10, n_perm=DEFAULT_N_PERM, alpha=0.05, seed=0,
               learner=None, epsilon=None, tree=None):
    """Run one method end to end on ``dataset``.

    Returns
    -------
    inference : InferenceResult
    leaf_scores : ndarray
        ``1 - p`` per variable (hierarchically adjusted p for the tree
        methods, raw p for flat CPI).
    n_evaluations : int
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    tree = ward_cluster(dataset.X) if tree is None else tree
    nodes = np.arange(dataset.p) if method == "cpi_flat" else None
    table, _ = run_hcpi(dataset, tree, learner, None, K, n_perm, seed, nodes=nodes)
    corrected = method == "hcpi_ic"
    if corrected:
        cfg = ConservationConfig() if epsilon is None else ConservationConfig(epsilon)
        table = conserve(tree, table, cfg)
    result = infer(tree, table, alpha=alpha, corrected=corrected)
    scores = 1.0 - result.leaf_p(dataset.p, "p_h")
    return result, scores, table.config["n_evaluations"]


def _one_repetition(cfg, rho, snr, rep, g, seed_stream):
    sim = replace(cfg.sim, rho_max=rho, snr=snr, seed=cfg.seed)
    rows = []
    try:
        dataset = simulate(sim, seed_stream.derive(0))
    except Exception as exc:  # noqa: BLE001 - recorded as a diagnostic row
        return [_failed_row(m, rho, snr, rep, exc) for m in cfg.methods]
    support = dataset.support
    truth = np.zeros(dataset.p, dtype=bool)
    truth[support] = True
    learner = cfg.learner_for(sim.scenario)
    for m_idx, method in enumerate(cfg.methods):
        try:
            t0 = time.perf_counter()
            tree = ward_cluster(dataset.X)
            result, scores, n_eval = run_method(
                method, dataset, cfg.K, cfg.n_perm, cfg.alpha, _analysis_seed(seed_stream),
                learner, cfg.epsilon, tree,
            )
            elapsed = time.perf_counter() - t0
            sel_leaves = result.selected_leaves(dataset.p)
            sel_sets = [tree.members(n) for n in result.selected_nodes()]
            rows.append(
                {
                    "method": method,
                    "rho_max": rho,
                    "snr": snr,
                    "repetition": rep,
                    "auc": auc(scores, truth) if 0 < truth.sum() < truth.size else None,
                    "any_false_discovery": fwer_trial(sel_leaves, support),
                    "any_group_false_discovery": group_false_discovery(sel_sets, support),
                    "n_selected": len(sel_leaves),
                    "wall_time_seconds": elapsed,
                    "n_evaluations": n_eval,
                    "error": None,
                }
            )
        except Exception as exc:  # noqa: BLE001 - recorded as a diagnostic row
            rows.append(_failed_row(method, rho, snr, rep, exc))
    return rows


def _analysis_seed(stream):
    return int(stream.derive(1).generator().integers(2**31))


def _failed_row(method, rho, snr, rep, exc):
    msg = "".join(traceback.format_exception_only(type(exc), exc)).strip()
    return {
        "method": method, "rho_max": rho, "snr": snr, "repetition": rep, "auc": None,
        "any_false_discovery": None, "any_group_false_discovery": None, "n_selected": None,
        "wall_time_seconds": None, "n_evaluations": None, "error": msg,
    }


@dataclass
class BenchReport:
    rows: list
    summary: list
    config: dict

    def rows_csv(self):
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=ROW_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: "" if row[k] is None else row[k] for k in ROW_FIELDS})
        return buf.getvalue()

    def to_dict(self):
        return {"config": self.config, "summary": self.summary}

    def fwer(self, method, rho=None, snr=None, level="leaf"):
        key = "any_false_discovery" if level == "leaf" else "any_group_false_discovery"
        vals = [r[key] for r in self._ok(method, rho, snr)]
        return float(np.mean(vals))

    def mean_auc(self, method, rho=None, snr=None):
        vals = [r["auc"] for r in self._ok(method, rho, snr) if r["auc"] is not None]
        return float(np.mean(vals))

    def _ok(self, method, rho, snr):
        return [
            r for r in self.rows
            if r["error"] is None and r["method"] == method
            and (rho is None or r["rho_max"] == rho) and (snr is None or r["snr"] == snr)
        ]


def summarize(rows, methods, grid):
    summary = []
    for method, (rho, snr) in itertools.product(methods, grid):
        ok = [r for r in rows if r["method"] == method and r["rho_max"] == rho
              and r["snr"] == snr and r["error"] is None]
        failed = sum(1 for r in rows if r["method"] == method and r["rho_max"] == rho
                     and r["snr"] == snr and r["error"] is not None)
        entry = {"method": method, "rho_max": rho, "snr": snr, "n_ok": len(ok), "n_failed": failed}
        if ok:
            aucs = np.array([r["auc"] for r in ok if r["auc"] is not None], dtype=float)
            if aucs.size:
                half = 1.96 * aucs.std(ddof=1) / np.sqrt(aucs.size) if aucs.size > 1 else 0.0
                entry.update(auc_mean=float(aucs.mean()), auc_ci=[float(aucs.mean() - half), float(aucs.mean() + half)])
            else:
                entry.update(auc_mean=None, auc_ci=None)
            for level, key in (("fwer", "any_false_discovery"), ("group_fwer", "any_group_false_discovery")):
                k = sum(bool(r[key]) for r in ok)
                entry[level] = k / len(ok)
                entry[level + "_ci"] = list(clopper_pearson(k, len(ok)))
            entry["mean_time_seconds"] = float(np.mean([r["wall_time_seconds"] for r in ok]))
            entry["mean_selected"] = float(np.mean([r["n_selected"] for r in ok]))
        summary.append(entry)
    return summary


def run_benchmark(cfg, threads=1):
    """Run every method on fresh data for each grid point and repetition.

    Failed repetitions are kept as rows with an ``error`` message and left
    out of the summary. Rows are sorted by (method, grid point, repetition).
    """
    grid = list(itertools.product(cfg.rho_grid, cfg.snr_grid))
    root = RngStream(cfg.seed)
    jobs = [
        (rho, snr, rep, g, root.derive(g).derive(rep))
        for g, (rho, snr) in enumerate(grid)
        for rep in range(cfg.repetitions)
    ]
    if threads == 1:
        chunks = [_one_repetition(cfg, *job) for job in jobs]
    else:
        chunks = Parallel(n_jobs=threads)(delayed(_one_repetition)(cfg, *job) for job in jobs)
    rows = [row for chunk in chunks for row in chunk]
    method_rank = {m: i for i, m in enumerate(cfg.methods)}
    grid_rank = {pt: i for i, pt in enumerate(grid)}
    rows.sort(key=lambda r: (method_rank[r["method"]], grid_rank[(r["rho_max"], r["snr"])], r["repetition"]))
    return BenchReport(rows, summarize(rows, cfg.methods, grid), cfg.to_dict())
