"""Conditional sampling and per-node, per-fold importance estimation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .core import RngStream, kfold_split
from .learners import ImputerBank, LearnerSpec, MarginalImputer, fit_learner, loss

__all__ = [
    "ImportanceTable",
    "conditional_sample",
    "node_importance",
    "permutation_losses",
    "run_hcpi",
]

DEFAULT_N_PERM = 50

# labels under the analysis seed
_FOLDS, _LEARNER, _PERMS = 0, 1, 2


@dataclass
class ImportanceTable:
    """Importance estimates, one row per node and one column per fold."""

    node_ids: np.ndarray
    psi: np.ndarray
    psi_corrected: np.ndarray | None = None
    config: dict = field(default_factory=dict)

    @property
    def K(self):
        return self.psi.shape[1]

    def row(self, node_id):
        return int(np.flatnonzero(self.node_ids == node_id)[0])

    def values(self, corrected=False):
        if corrected:
            if self.psi_corrected is None:
                raise ValueError("table has no corrected importances")
            return self.psi_corrected
        return self.psi

    def to_dict(self):
        return {
            "node_ids": self.node_ids.tolist(),
            "psi": self.psi.tolist(),
            "psi_corrected": None if self.psi_corrected is None else self.psi_corrected.tolist(),
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d):
        pc = d.get("psi_corrected")
        return cls(
            np.asarray(d["node_ids"], dtype=int),
            np.asarray(d["psi"], dtype=float),
            None if pc is None else np.asarray(pc, dtype=float),
            dict(d.get("config", {})),
        )

    def tidy_rows(self):
        """Rows ``(node_id, fold, psi, psi_corrected)``."""
        for i, nid in enumerate(self.node_ids):
            for k in range(self.K):
                pc = None if self.psi_corrected is None else self.psi_corrected[i, k]
                yield int(nid), k, self.psi[i, k], pc


def _check_shapes(imputer, X_test, G):
    X_test = np.asarray(X_test, dtype=float)
    if X_test.ndim != 2 or X_test.shape[1] != imputer.means.size:
        raise ValueError(
            f"X_test must have {imputer.means.size} columns, got shape {X_test.shape}"
        )
    G = np.asarray(G, dtype=int)
    if not np.array_equal(np.sort(G), np.sort(imputer.group)):
        raise ValueError("imputer was trained for a different group")
    return X_test, G


def _substitute(X_test, G, pred, perms):
    """Stack of conditional samples, one per row of ``perms``."""
    XG = X_test[:, G]
    out = np.broadcast_to(X_test, (perms.shape[0],) + X_test.shape).copy()
    # pred + (X_G - pred)[perm], written so the identity permutation is exact
    out[:, :, G] = XG[perms] + (pred[None, :, :] - pred[perms])
    return out


def conditional_sample(imputer, X_test, G, rng):
    """Replace the ``G`` columns of ``X_test`` by a conditional draw.

    The draw is the imputer's prediction plus the test residuals
    ``X_G - pred`` with their rows permuted jointly across the group.
    ``rng`` is an :class:`~hcpi.core.RngStream`, a numpy ``Generator`` or an
    explicit permutation array.
    """
    X_test, G = _check_shapes(imputer, X_test, G)
    n = X_test.shape[0]
    if isinstance(rng, RngStream):
        perm = rng.generator().permutation(n)
    elif isinstance(rng, np.random.Generator):
        perm = rng.permutation(n)
    else:
        perm = np.asarray(rng, dtype=int)
        if perm.shape != (n,):
            raise ValueError("permutation has the wrong length")
    pred = imputer.predict(X_test)
    return _substitute(X_test, imputer.group, pred, perm[None, :])[0]


def permutation_losses(model, imputer, X_test, y_test, loss_kind, n_perm, rng, reference=None):
    """Loss differences for ``n_perm`` independent conditional samples."""
    if n_perm < 1:
        raise ValueError("n_perm must be at least 1")
    X_test, _ = _check_shapes(imputer, X_test, imputer.group)
    n = X_test.shape[0]
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    perms = gen.permuted(np.broadcast_to(np.arange(n), (n_perm, n)), axis=1)
    if reference is None:
        reference = float(loss(loss_kind, y_test, model.output(X_test, loss_kind)))
    pred = imputer.predict(X_test)
    Xt = _substitute(X_test, imputer.group, pred, perms)
    out = model.output(Xt.reshape(-1, X_test.shape[1]), loss_kind).reshape(n_perm, n)
    return loss(loss_kind, y_test[None, :], out) - reference


def node_importance(model, imputer, X_test, y_test, loss_kind, n_perm, rng, reference=None):
    """Mean loss increase over ``n_perm`` conditional samples."""
    diffs = permutation_losses(model, imputer, X_test, y_test, loss_kind, n_perm, rng, reference)
    return float(np.mean(diffs))


def default_loss(y):
    return "cross_entropy" if np.unique(y).size == 2 else "rmse"


def _run_fold(k, dataset, groups, learner_spec, loss_kind, n_perm, plan, root, node_ids, lambda_grid):
    tr, te = plan.train_indices(k), plan.test_indices(k)
    X, y = dataset.X, dataset.y
    try:
        model = fit_learner(learner_spec, X[tr], y[tr], root.derive(_LEARNER).derive(k))
    except ValueError as exc:
        raise ValueError(f"fold {k}: model fit failed on training data: {exc}") from exc
    X_te, y_te = X[te], y[te]
    reference = float(loss(loss_kind, y_te, model.output(X_te, loss_kind)))
    bank = ImputerBank(X[tr], lambda_grid)
    psi = np.empty(len(node_ids))
    p = X.shape[1]
    evaluations = 0
    for i, (nid, G) in enumerate(zip(node_ids, groups)):
        imputer = bank.marginal() if G.size == p else bank.imputer(G)
        stream = root.derive(_PERMS).derive(k).derive(int(nid))
        psi[i] = node_importance(model, imputer, X_te, y_te, loss_kind, n_perm, stream, reference)
        evaluations += 1
    return psi, model, evaluations


def run_hcpi(
    dataset,
    tree,
    learner_spec=None,
    loss_kind=None,
    K=10,
    n_perm=DEFAULT_N_PERM,
    seed=0,
    nodes=None,
    threads=1,
    lambda_grid=None,
):
    """Importance of every tree node on every cross-validation fold.

    For each fold the predictive model is fitted on the training split; for
    each node the conditional law of its variables given the rest is
    estimated on the training split and sampled on the test split.

    Parameters
    ----------
    dataset : Dataset
    tree : DendrogramTree
    learner_spec : LearnerSpec, optional
        Ridge for regression targets and logistic regression for binary
        targets by default.
    loss_kind : str, optional
        ``rmse`` for regression, ``cross_entropy`` for classification by
        default.
    K : int
        Number of outer folds, stratified for classification targets.
    n_perm : int
        Conditional draws averaged per node and fold.
    seed : int
    nodes : sequence of int, optional
        Restrict the evaluation to these node ids (e.g. leaves only).
    threads : int
        Worker threads across folds; results do not depend on it.

    Returns
    -------
    table : ImportanceTable
    models : list of FittedModel
        One per fold.
    """
    if K < 2:
        raise ValueError("K must be at least 2")
    if n_perm < 1:
        raise ValueError("n_perm must be at least 1")
    classification = dataset.is_classification
    if learner_spec is None:
        learner_spec = LearnerSpec("logistic" if classification else "ridge")
    if loss_kind is None:
        loss_kind = default_loss(dataset.y)
    if loss_kind in ("cross_entropy", "hinge", "zero_one") and learner_spec.kind != "logistic":
        raise ValueError(f"loss {loss_kind!r} needs a classifier output; {learner_spec.kind} has none")
    node_ids = np.arange(tree.n_nodes) if nodes is None else np.asarray(nodes, dtype=int)
    groups = [np.asarray(tree.members(nid), dtype=int) for nid in node_ids]
    root = RngStream(seed)
    plan = kfold_split(
        dataset.n,
        K,
        stratify_on=dataset.y if classification else None,
        rng=root.derive(_FOLDS),
    )
    args = (dataset, groups, learner_spec, loss_kind, n_perm, plan, root, node_ids, lambda_grid)
    if threads == 1:
        results = [_run_fold(k, *args) for k in range(K)]
    else:
        results = Parallel(n_jobs=threads, backend="threading")(
            delayed(_run_fold)(k, *args) for k in range(K)
        )
    psi = np.column_stack([r[0] for r in results])
    models = [r[1] for r in results]
    config = {
        "K": K,
        "n_perm": n_perm,
        "loss": loss_kind,
        "learner": learner_spec.to_dict(),
        "seed": seed,
        "n_evaluations": int(sum(r[2] for r in results)),
    }
    return ImportanceTable(node_ids, psi, None, config), models
