"""Command-line front end: ``hcpi simulate | analyze | bench | export``.

Every command reads an optional flat JSON ``--config`` whose keys mirror
:class:`RunConfig`; command-line flags override file values. The
effective configuration is echoed into every output (``"config"`` key in
JSON files, a leading ``# config: {...}`` line in CSV files) so that a run
can be reproduced from any single artifact.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .bench import METHODS, BenchConfig, run_benchmark
from .cluster import DendrogramTree, ward_cluster
from .conservation import DEFAULT_EPSILON, ConservationConfig, conserve
from .core import dumps_json, meta_path, read_dataset, write_dataset
from .engine import DEFAULT_N_PERM, run_hcpi
from .inference import infer
from .learners import LOSSES, LearnerSpec
from .simgen import SimConfig, simulate

__all__ = ["RunConfig", "ValidationError", "main", "parse_echo"]

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2
TASKS = ("simulate", "analyze", "bench", "export")
CLI_LOSSES = ("rmse", "cross_entropy", "hinge")
ECHO_PREFIX = "# config: "


class ValidationError(ValueError):
    """Bad configuration or input content (exit code 1)."""


@dataclass(frozen=True)
class RunConfig:
    """Flat, JSON-serializable description of one command invocation.

    Runtime-only options (``--out-dir``, ``--threads``) are not part of it:
    they do not change results and are left out of the echoed config.
    """

    task: str = "analyze"
    input: str | None = None
    name: str | None = None
    seed: int = 0
    # analysis
    model: str | None = None
    loss: str | None = None
    folds: int = 10
    n_perm: int = DEFAULT_N_PERM
    alpha: float = 0.05
    conserve: bool = False
    epsilon: float = DEFAULT_EPSILON
    leaves_only: bool = False
    # simulation
    n: int = 400
    blocks: tuple = (4, 8, 16, 32, 64)
    rho: float = 0.9
    scenario: str = "linear"
    support_size: int = 10
    snr: float = 2.0
    # benchmark
    rho_grid: tuple = (0.3, 0.9)
    snr_grid: tuple = (2.0,)
    reps: int = 30
    methods: tuple = ("hcpi", "cpi_flat")

    def __post_init__(self):
        for key in ("blocks", "rho_grid", "snr_grid", "methods"):
            object.__setattr__(self, key, tuple(getattr(self, key)))

    def validate(self):
        if self.task not in TASKS:
            raise ValidationError(f"task must be one of {TASKS}, got {self.task!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.folds < 2:
            raise ValidationError(f"folds must be at least 2, got {self.folds}")
        if self.n_perm < 1:
            raise ValidationError(f"n_perm must be at least 1, got {self.n_perm}")
        if not self.epsilon > 0:
            raise ValidationError(f"epsilon must be positive, got {self.epsilon}")
        if self.model not in (None, "ridge", "logistic", "mlp"):
            raise ValidationError(f"unknown model {self.model!r}")
        if self.loss not in (None,) + LOSSES:
            raise ValidationError(f"unknown loss {self.loss!r}")
        if self.reps < 1:
            raise ValidationError("reps must be at least 1")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValidationError(f"unknown methods {sorted(unknown)}; expected a subset of {METHODS}")
        if self.task in ("analyze", "export"):
            if self.input is None:
                raise ValidationError(f"{self.task} needs an input file")
            if not Path(self.input).is_file():
                raise ValidationError(f"input file does not exist: {self.input}")
        return self

    def to_dict(self):
        d = asdict(self)
        for key in ("blocks", "rho_grid", "snr_grid", "methods"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def echo(self):
        return ECHO_PREFIX + json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def sim_config(self):
        return SimConfig(
            n=self.n,
            block_sizes=self.blocks,
            rho_max=self.rho,
            scenario=self.scenario,
            support_size=self.support_size,
            snr=self.snr,
            seed=self.seed,
        )

    def learner_spec(self):
        return None if self.model is None else LearnerSpec(self.model)


def parse_echo(line):
    """Inverse of :meth:`RunConfig.echo`."""
    if not line.startswith(ECHO_PREFIX):
        raise ValidationError("not a config echo line")
    return RunConfig.from_dict(json.loads(line[len(ECHO_PREFIX):]))


# -- argument parsing -------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _csv_list(cast):
    def parse(text):
        try:
            return tuple(cast(v) for v in text.split(",") if v.strip())
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc

    return parse


def _shared(p):
    p.add_argument("--config", help="flat JSON file of RunConfig keys; flags win")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", default=".", help="output directory (default: current)")
    p.add_argument("--threads", type=int, default=1, help="worker cap; does not change results")


def _analysis_flags(p):
    p.add_argument("--model", choices=("ridge", "logistic", "mlp"))
    p.add_argument("--loss", choices=CLI_LOSSES)
    p.add_argument("--folds", type=int, metavar="K")
    p.add_argument("--n-perm", type=int, metavar="N")
    p.add_argument("--alpha", type=float, metavar="A")
    p.add_argument("--epsilon", type=float, metavar="E")


def _sim_flags(p):
    p.add_argument("--n", type=int)
    p.add_argument("--blocks", type=_csv_list(int), help="comma-separated block sizes")
    p.add_argument("--scenario", choices=("linear", "nonlinear"))
    p.add_argument("--support-size", type=int)
    p.add_argument("--snr", type=float)


def build_parser():
    parser = _Parser(prog="hcpi", description="Hierarchical conditional permutation importance.")
    sub = parser.add_subparsers(dest="task", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a benchmark dataset")
    _shared(p)
    _sim_flags(p)
    p.add_argument("--rho", type=float, help="largest within-block correlation")
    p.add_argument("--name", help="output file stem (default: sim_<seed>)")

    p = sub.add_parser("analyze", help="importance and inference for every tree node")
    _shared(p)
    p.add_argument("input", nargs="?", help="dataset CSV with a 'target' column")
    _analysis_flags(p)
    p.add_argument("--conserve", action="store_const", const=True, help="add conserved (HCPI-IC) inference")
    p.add_argument("--leaves-only", action="store_const", const=True, help="flat CPI on the leaves")
    p.add_argument("--name", help="output file stem (default: input stem)")

    p = sub.add_parser("bench", help="simulation benchmark over rho/SNR grids")
    _shared(p)
    _sim_flags(p)
    _analysis_flags(p)
    p.add_argument("--rho-grid", type=_csv_list(float))
    p.add_argument("--snr-grid", type=_csv_list(float))
    p.add_argument("--reps", type=int)
    p.add_argument("--methods", type=_csv_list(str), help=f"comma-separated subset of {','.join(METHODS)}")

    p = sub.add_parser("export", help="dendrogram CSV and text tree from a results file")
    _shared(p)
    p.add_argument("input", nargs="?", help="results JSON written by 'analyze'")
    p.add_argument("--name", help="output file stem (default: input stem)")
    return parser


_RUNTIME = {"task", "config", "out_dir", "threads"}


def resolve_config(args):
    """Merge defaults, the JSON config file and explicit flags (in that order)."""
    values = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                values = json.load(fh)
        except OSError as exc:
            raise OSError(f"cannot read config {args.config}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{args.config}: invalid JSON ({exc})") from exc
        if not isinstance(values, dict):
            raise ValidationError(f"{args.config}: expected a JSON object")
        values.pop("task", None)
    for key, val in vars(args).items():
        if key not in _RUNTIME and val is not None:
            values[key] = val
    try:
        cfg = RunConfig.from_dict(dict(values, task=args.task))
    except TypeError as exc:
        raise ValidationError(str(exc)) from exc
    return cfg.validate()


# -- output helpers ---------------------------------------------------------


def _write_text(path, text):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc
    return Path(path)


def _csv_text(cfg, header, rows):
    buf = io.StringIO()
    buf.write(cfg.echo() + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None else _fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# -- commands ---------------------------------------------------------------


def cmd_simulate(cfg, out_dir, threads=1):
    try:
        sim = cfg.sim_config()
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    dataset = simulate(sim)
    name = cfg.name or f"sim_{cfg.seed}"
    path = Path(out_dir) / f"{name}.csv"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        write_dataset(dataset, path, header=cfg.echo())
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc
    snr = dataset.meta["snr_realized"]
    print(f"wrote {path} and {meta_path(path).name}: n={dataset.n} p={dataset.p} realized_snr={snr:.4g}")
    return [path, meta_path(path)]


def _check_dataset(dataset):
    if dataset.p < 2:
        raise ValidationError(f"need at least 2 variables, got p={dataset.p}")
    if np.unique(dataset.y).size < 2:
        raise ValidationError("degenerate target: the 'target' column is constant")


def analyze_dataset(dataset, cfg, threads=1):
    """Run the full pipeline on ``dataset``; returns the results dictionary."""
    _check_dataset(dataset)
    classification = dataset.is_classification
    if cfg.model == "mlp" and classification:
        raise ValidationError("the mlp learner supports regression targets only")
    if cfg.model in ("ridge", "mlp") and classification and cfg.loss in ("cross_entropy", "hinge"):
        raise ValidationError(f"loss {cfg.loss!r} needs a classifier; use --model logistic")
    if cfg.model == "logistic" and not classification:
        raise ValidationError("logistic model needs a target with exactly two distinct values")
    if cfg.loss in ("cross_entropy", "hinge") and not classification:
        raise ValidationError(f"loss {cfg.loss!r} needs a binary target")
    tree = ward_cluster(dataset.X)
    nodes = np.arange(dataset.p) if cfg.leaves_only else None
    try:
        table, models = run_hcpi(
            dataset, tree, cfg.learner_spec(), cfg.loss, cfg.folds, cfg.n_perm, cfg.seed,
            nodes=nodes, threads=threads,
        )
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    result = {
        "config": cfg.to_dict(),
        "task_type": "classification" if classification else "regression",
        "names": list(dataset.names),
        "tree": tree.to_dict(),
        "importance": table.to_dict(),
        "inference": infer(tree, table, cfg.alpha).to_dict(),
        "training_reports": [dict(m.report, kind=m.kind) for m in models],
    }
    if cfg.conserve:
        if cfg.leaves_only:
            raise ValidationError("--conserve needs the whole tree; drop --leaves-only")
        conserved = conserve(tree, table, ConservationConfig(cfg.epsilon))
        result["importance"] = conserved.to_dict()
        result["indicators"] = conserved.indicators.tolist()
        result["unchanged_alternative"] = [
            [None if np.isnan(v) else float(v) for v in row] for row in conserved.unchanged_alternative
        ]
        result["inference_conserved"] = infer(tree, conserved, cfg.alpha, corrected=True).to_dict()
    return result


def cmd_analyze(cfg, out_dir, threads=1):
    try:
        dataset = read_dataset(cfg.input)
    except OSError as exc:
        raise OSError(f"cannot read {cfg.input}: {exc.strerror}") from exc
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    result = analyze_dataset(dataset, cfg, threads)
    stem = cfg.name or Path(cfg.input).stem
    out = Path(out_dir)
    paths = [_write_text(out / f"{stem}_results.json", dumps_json(result))]
    psi_corr = result["importance"]["psi_corrected"]
    tidy = []
    for i, nid in enumerate(result["importance"]["node_ids"]):
        for k, val in enumerate(result["importance"]["psi"][i]):
            tidy.append((nid, k, val, None if psi_corr is None else psi_corr[i][k]))
    paths.append(_write_text(out / f"{stem}_importance.csv",
                             _csv_text(cfg, ("node_id", "fold", "psi", "psi_corrected"), tidy)))
    for key, suffix in (("inference", "nodes"), ("inference_conserved", "nodes_conserved")):
        if key in result:
            rows = [
                (r["id"], " ".join(map(str, r["members"])), r["psi_mean"], r["psi_sd"],
                 r["p_raw"], r["p_h"], r["p_tilde"], r["selected"], r["id"] in result[key]["frontier"])
                for r in result[key]["nodes"]
            ]
            header = ("node_id", "members", "psi_mean", "psi_sd", "p_raw", "p_h", "p_tilde", "selected", "frontier")
            paths.append(_write_text(out / f"{stem}_{suffix}.csv", _csv_text(cfg, header, rows)))
    inf = result.get("inference_conserved", result["inference"])
    print(f"analyzed {cfg.input}: n={dataset.n} p={dataset.p} nodes={len(inf['nodes'])} "
          f"selected={sum(r['selected'] for r in inf['nodes'])} frontier={inf['frontier']}")
    return paths


def cmd_bench(cfg, out_dir, threads=1):
    try:
        bcfg = BenchConfig(
            sim=cfg.sim_config(),
            rho_grid=cfg.rho_grid,
            snr_grid=cfg.snr_grid,
            repetitions=cfg.reps,
            methods=cfg.methods,
            alpha=cfg.alpha,
            K=cfg.folds,
            n_perm=cfg.n_perm,
            learner=cfg.learner_spec(),
            epsilon=cfg.epsilon,
            seed=cfg.seed,
        )
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    report = run_benchmark(bcfg, threads=threads)
    out = Path(out_dir)
    rows_text = cfg.echo() + "\n" + report.rows_csv()
    summary = dict(report.to_dict(), run_config=cfg.to_dict())
    paths = [
        _write_text(out / "bench_rows.csv", rows_text),
        _write_text(out / "bench_summary.json", dumps_json(summary)),
    ]
    for s in report.summary:
        auc = "n/a" if s.get("auc_mean") is None else f"{s['auc_mean']:.3f}"
        print(f"{s['method']:>9} rho={s['rho_max']:g} snr={s['snr']:g}: ok={s['n_ok']} failed={s['n_failed']} "
              f"auc={auc} fwer={s.get('fwer', float('nan')):.3f}")
    return paths


_RESULT_FIELDS = ("config", "tree", "inference")
_NODE_FIELDS = ("id", "p_tilde", "selected")


def load_results(path):
    """Read and check a results JSON written by ``analyze``."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    for key in _RESULT_FIELDS:
        if key not in data:
            raise ValidationError(f"{path}: missing field '{key}'")
    for key in ("p", "nodes"):
        if key not in data["tree"]:
            raise ValidationError(f"{path}: missing field 'tree.{key}'")
    for key in ("nodes", "frontier"):
        if key not in data["inference"]:
            raise ValidationError(f"{path}: missing field 'inference.{key}'")
    for rec in data["inference"]["nodes"]:
        for key in _NODE_FIELDS:
            if key not in rec:
                raise ValidationError(f"{path}: missing field 'inference.nodes[].{key}'")
    return data


def dendrogram_rows(tree, inference):
    """Plot-ready node table: x from the leaf order, y from the linkage height."""
    by_id = {r["id"]: r for r in inference["nodes"]}
    frontier = set(inference["frontier"])
    x = np.empty(tree.n_nodes)
    x[tree.leaf_order()] = np.arange(tree.p, dtype=float)
    height = np.zeros(tree.n_nodes)
    height[tree.p:] = tree.to_linkage()[:, 2]
    for nid in range(tree.p, tree.n_nodes):
        left, right = tree.children(nid)
        x[nid] = 0.5 * (x[left] + x[right])
    rows = []
    for nid in range(tree.n_nodes):
        rec = by_id.get(nid)
        children = tree.children(nid) or (None, None)
        rows.append((
            nid, children[0], children[1], float(x[nid]), float(height[nid]), len(tree.members(nid)),
            None if rec is None else rec["p_tilde"],
            bool(rec and rec["selected"]), nid in frontier,
        ))
    return rows


def text_tree(tree, inference, names=None):
    """Indented tree, ``*`` marking selected nodes and ``F`` the frontier."""
    by_id = {r["id"]: r for r in inference["nodes"]}
    frontier = set(inference["frontier"])
    lines = []
    stack = [(tree.root, 0)]
    while stack:
        nid, depth = stack.pop()
        rec = by_id.get(nid)
        mark = "*" if rec and rec["selected"] else " "
        mark += "F" if nid in frontier else " "
        label = (names[nid] if names else f"x{nid}") if nid < tree.p else f"node {nid} ({len(tree.members(nid))} vars)"
        p_txt = "" if rec is None else f"  p_tilde={rec['p_tilde']:.4g}"
        lines.append(f"{mark} {'  ' * depth}{label}{p_txt}")
        for child in reversed(tree.children(nid)):
            stack.append((child, depth + 1))
    return "\n".join(lines) + "\n"


def cmd_export(cfg, out_dir, threads=1):
    data = load_results(cfg.input)
    try:
        tree = DendrogramTree.from_dict(data["tree"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{cfg.input}: malformed tree ({exc})") from exc
    inference = data.get("inference_conserved", data["inference"])
    stem = cfg.name or Path(cfg.input).stem.removesuffix("_results")
    out = Path(out_dir)
    header = ("node_id", "left", "right", "x", "height", "n_members", "p_tilde", "selected", "frontier")
    rows = dendrogram_rows(tree, inference)
    paths = [
        _write_text(out / f"{stem}_dendrogram.csv", _csv_text(cfg, header, rows)),
        _write_text(out / f"{stem}_tree.txt", cfg.echo() + "\n" + text_tree(tree, inference, data.get("names"))),
    ]
    print(f"exported {len(rows)} nodes ({sum(r[7] for r in rows)} significant) from {cfg.input}")
    return paths


COMMANDS = {"simulate": cmd_simulate, "analyze": cmd_analyze, "bench": cmd_bench, "export": cmd_export}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if args.threads < 1:
            raise ValidationError("--threads must be at least 1")
        cfg = resolve_config(args)
        COMMANDS[cfg.task](cfg, args.out_dir, args.threads)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
