"""Regression fixtures with expected outputs from the reference implementations.

Two fixtures are written:

``fig1_p24``
    n=300, six AR(1) blocks of 4 variables at rho_max=0.95, outcome loading
    on the whole first block. Tree with 47 nodes.
``toy_p8``
    n=100, two blocks of 4 at rho_max=0.6, two active variables. Small
    enough to check by hand.

Each fixture has a dataset CSV with its ``.meta.json`` sidecar, the tree
JSON built by :func:`~hcpi.cluster.ward_cluster`, and an ``_expected.json``
holding the reference Ward merges, the reference importance table, node
ranks and the selected node sets with and without conservation. Run
``python3 -m hcpi.fixtures OUT_DIR`` to rebuild them.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .cluster import ward_cluster
from .conservation import DEFAULT_EPSILON
from .core import dumps_json, write_dataset
from .reference import reference_conserve, reference_cpi, reference_select, reference_ward
from .simgen import SimConfig, simulate, simulate_active_block

__all__ = ["FIXTURE_SETTINGS", "fixture_datasets", "regenerate_fixtures"]

FIXTURE_SETTINGS = {
    "K": 10,
    "n_perm": 50,
    "model_lambda": 1.0,
    "imputer_lambda": 1.0,
    "alpha": 0.05,
    "epsilon": DEFAULT_EPSILON,
}


def fixture_datasets(seed=0):
    """The two fixture datasets, keyed by name."""
    fig1 = simulate_active_block(SimConfig(n=300, block_sizes=(4,) * 6, rho_max=0.95, snr=2.0, seed=seed))
    toy = simulate(SimConfig(n=100, block_sizes=(4, 4), rho_max=0.6, support_size=2, snr=4.0, seed=seed))
    return {"fig1_p24": fig1, "toy_p8": toy}


def expected_outputs(dataset, tree, seed, settings=FIXTURE_SETTINGS):
    """Reference results for one fixture."""
    s = settings
    psi = reference_cpi(dataset, tree, s["K"], s["n_perm"], seed, s["model_lambda"], s["imputer_lambda"])
    selected, p_raw = reference_select(tree, psi, s["alpha"])
    corrected = reference_conserve(tree, psi, s["epsilon"])
    selected_c, _ = reference_select(tree, corrected, s["alpha"])
    flat, _ = reference_select(tree, psi[: tree.p], s["alpha"], hierarchical=False)
    means = psi.mean(axis=1)
    return {
        "seed": seed,
        "settings": dict(settings),
        "ward_merges": [[int(a), int(b), float(h)] for a, b, h in reference_ward(dataset.X)],
        "psi": psi.tolist(),
        "psi_corrected": corrected.tolist(),
        "p_raw": p_raw.tolist(),
        "node_rank": np.argsort(-means, kind="stable").tolist(),
        "selected": selected,
        "selected_conserved": selected_c,
        "selected_flat": flat,
    }


def regenerate_fixtures(out_dir, seed=0):
    """Rewrite every fixture file under ``out_dir``; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, dataset in fixture_datasets(seed).items():
        csv_path = write_dataset(dataset, out / f"{name}.csv")
        paths += [csv_path, csv_path.with_name(f"{name}.meta.json")]
        tree = ward_cluster(dataset.X)
        for suffix, obj in (("tree", tree.to_dict()), ("expected", expected_outputs(dataset, tree, seed))):
            path = out / f"{name}_{suffix}.json"
            path.write_text(dumps_json(obj), encoding="utf-8")
            paths.append(path)
    return paths


def main(argv=None):
    parser = argparse.ArgumentParser(description="Rebuild the regression fixtures.")
    parser.add_argument("out_dir")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    for path in regenerate_fixtures(args.out_dir, args.seed):
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
