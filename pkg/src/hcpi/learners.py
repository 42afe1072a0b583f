"""Predictive models, conditional imputers and losses.

All fitting is done in numpy: closed-form ridge, Newton logistic
regression, a one-hidden-layer MLP trained with Adam, and multi-output
ridge imputers whose penalty is chosen by generalized cross-validation.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .core import RngStream, kfold_split, standardize

__all__ = [
    "LOSSES",
    "FittedModel",
    "Imputer",
    "ImputerBank",
    "LearnerSpec",
    "MarginalImputer",
    "TrainingDiverged",
    "default_grid",
    "fit_imputer",
    "fit_learner",
    "fit_logistic",
    "fit_mlp",
    "fit_ridge",
    "loss",
]

LOSSES = ("rmse", "mse", "cross_entropy", "hinge", "zero_one")
LAMBDA_FLOOR = 1e-8
PROB_CLIP = 1e-12


def default_grid():
    return np.logspace(-3, 3, 10)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch):
        super().__init__(f"training diverged: non-finite loss at epoch {epoch}")
        self.epoch = epoch


# -- losses -----------------------------------------------------------------


def loss(kind, y, pred):
    """Average loss of ``pred`` against ``y``.

    ``pred`` holds probabilities for ``cross_entropy``, real-valued margins
    for ``hinge`` and ``zero_one`` (sign of the margin), and predictions for
    ``rmse``. Labels for the classification losses are ``{0, 1}``.
    """
    y = np.asarray(y, dtype=float)
    pred = np.asarray(pred, dtype=float)
    if y.shape[-1] != pred.shape[-1]:
        raise ValueError(f"length mismatch: {y.shape[-1]} labels, {pred.shape[-1]} predictions")
    if kind == "rmse":
        return np.sqrt(np.mean((y - pred) ** 2, axis=-1))
    if kind == "mse":
        return np.mean((y - pred) ** 2, axis=-1)
    if kind == "cross_entropy":
        q = np.clip(pred, PROB_CLIP, 1.0 - PROB_CLIP)
        return -np.mean(y * np.log(q) + (1.0 - y) * np.log1p(-q), axis=-1)
    signed = 2.0 * y - 1.0
    if kind == "hinge":
        return np.mean(np.maximum(0.0, 1.0 - signed * pred), axis=-1)
    if kind == "zero_one":
        return np.mean(signed * pred <= 0.0, axis=-1)
    raise ValueError(f"unknown loss {kind!r}; expected one of {LOSSES}")


# -- learner specification --------------------------------------------------


@dataclass(frozen=True)
class LearnerSpec:
    kind: str = "ridge"
    grid: tuple = ()
    inner_cv_folds: int = 5
    width: int = 100
    max_epochs: int = 400
    patience: int = 10
    learning_rate: float = 1e-3

    def __post_init__(self):
        if self.kind not in ("ridge", "logistic", "mlp"):
            raise ValueError(f"unknown learner {self.kind!r}")
        grid = tuple(float(v) for v in self.grid) or tuple(default_grid())
        object.__setattr__(self, "grid", grid)
        if self.width < 1:
            raise ValueError("mlp width must be at least 1")
        if self.inner_cv_folds < 2:
            raise ValueError("inner_cv_folds must be at least 2")

    def to_dict(self):
        d = asdict(self)
        d["grid"] = list(self.grid)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# -- fitted models ----------------------------------------------------------


class FittedModel:
    """Base class: a model exposing an output head per loss."""

    kind = "model"

    def __init__(self, report=None):
        self.report = dict(report or {})

    def predict(self, X):
        raise NotImplementedError

    def output(self, X, loss_kind):
        """Model output that ``loss_kind`` consumes."""
        if loss_kind in ("rmse", "mse"):
            return self.predict(X)
        if loss_kind == "cross_entropy":
            return self.predict_proba(X)
        if loss_kind in ("hinge", "zero_one"):
            return self.decision_function(X)
        raise ValueError(f"unknown loss {loss_kind!r}")

    def predict_proba(self, X):
        raise ValueError(f"{self.kind} model has no probability output")

    def decision_function(self, X):
        raise ValueError(f"{self.kind} model has no margin output")


class RidgeModel(FittedModel):
    kind = "ridge"

    def __init__(self, means, sds, coef_std, intercept, report=None):
        super().__init__(report)
        self.means = means
        self.sds = sds
        self.coef_std = coef_std
        self.intercept = float(intercept)

    @property
    def coef(self):
        """Coefficients on the original feature scale."""
        return self.coef_std / self.sds

    def predict(self, X):
        w = self.coef
        return np.asarray(X) @ w + (self.intercept - self.means @ w)


class LogisticModel(FittedModel):
    kind = "logistic"

    def __init__(self, means, sds, coef_std, intercept, report=None):
        super().__init__(report)
        self.means = means
        self.sds = sds
        self.coef_std = coef_std
        self.intercept = float(intercept)

    def decision_function(self, X):
        w = self.coef_std / self.sds
        return np.asarray(X) @ w + (self.intercept - self.means @ w)

    def predict_proba(self, X):
        return expit(self.decision_function(X))

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(float)


class MLPModel(FittedModel):
    kind = "mlp"

    def __init__(self, x_means, x_sds, y_mean, y_sd, params, report=None):
        super().__init__(report)
        self.x_means = x_means
        self.x_sds = x_sds
        self.y_mean = y_mean
        self.y_sd = y_sd
        self.params = params

    def predict(self, X):
        Z = (np.asarray(X) - self.x_means) / self.x_sds
        return self.y_mean + self.y_sd * _mlp_forward(self.params, Z)[0]


# -- ridge ------------------------------------------------------------------


def _ridge_path(Z, yc, grid):
    """Standardized-space ridge coefficients for every penalty in ``grid``."""
    U, s, Vt = np.linalg.svd(Z, full_matrices=False)
    Uty = U.T @ yc
    shrink = s[None, :] / (s[None, :] ** 2 + np.asarray(grid)[:, None])
    return (shrink * Uty[None, :]) @ Vt  # (len(grid), p)


def _ridge_fit_fixed(X, y, lam):
    Z, means, sds, _ = standardize(X)
    ym = y.mean()
    coef = _ridge_path(Z, y - ym, [max(lam, LAMBDA_FLOOR)])[0]
    return means, sds, coef, ym


def fit_ridge(X, y, lambda_grid=None, inner_folds=5, rng=None):
    """Ridge regression with the penalty chosen by inner K-fold CV.

    Features are standardized with training moments and the intercept is the
    mean of ``y``; a grid of length one skips the inner CV.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    grid = np.maximum(np.asarray(default_grid() if lambda_grid is None else lambda_grid, dtype=float), LAMBDA_FLOOR)
    if grid.size == 0:
        raise ValueError("lambda grid is empty")
    n = X.shape[0]
    if grid.size == 1:
        lam = float(grid[0])
        curve = None
    else:
        if not n > inner_folds >= 2:
            raise ValueError(f"need n_train > inner_folds >= 2, got n={n}, folds={inner_folds}")
        plan = kfold_split(n, inner_folds, rng=rng if rng is not None else RngStream(0))
        mse = np.zeros(grid.size)
        for tr, va in plan.splits():
            Z, means, sds, _ = standardize(X[tr])
            ym = y[tr].mean()
            path = _ridge_path(Z, y[tr] - ym, grid)
            Zva = (X[va] - means) / sds
            pred = ym + Zva @ path.T
            mse += np.sum((y[va, None] - pred) ** 2, axis=0)
        mse /= n
        lam = float(grid[int(np.argmin(mse))])
        curve = mse.tolist()
    means, sds, coef, ym = _ridge_fit_fixed(X, y, lam)
    report = {"lambda": lam, "grid": grid.tolist(), "cv_mse": curve}
    return RidgeModel(means, sds, coef, ym, report)


# -- logistic ---------------------------------------------------------------


def _logistic_newton(Z, y, lam, max_iter=200, tol=1e-8):
    """Penalized Newton: minimise sum log-loss + lam/2 ||w||^2 (intercept free)."""
    n, p = Z.shape
    A = np.hstack([np.ones((n, 1)), Z])
    theta = np.zeros(p + 1)
    pen = np.full(p + 1, lam)
    pen[0] = 0.0

    def objective(t):
        eta = A @ t
        return np.sum(np.logaddexp(0.0, eta) - y * eta) + 0.5 * np.sum(pen * t**2)

    f = objective(theta)
    for it in range(max_iter):
        prob = expit(A @ theta)
        grad = A.T @ (prob - y) + pen * theta
        if np.max(np.abs(grad)) < tol:
            return theta, it, grad
        w = prob * (1.0 - prob)
        H = (A * w[:, None]).T @ A + np.diag(pen)
        H[0, 0] += 1e-12
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        while True:
            cand = theta - t * step
            fc = objective(cand)
            if fc <= f + 1e-12 * abs(f) or t < 1e-10:
                break
            t *= 0.5
        theta, f = cand, fc
    prob = expit(A @ theta)
    grad = A.T @ (prob - y) + pen * theta
    return theta, max_iter, grad


def fit_logistic(X, y, l2_grid=None, inner_folds=5, rng=None):
    """L2-penalized logistic regression, penalty chosen by inner CV log-loss."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    classes = np.unique(y)
    if classes.size != 2 or not np.array_equal(classes, [0.0, 1.0]):
        raise ValueError("logistic regression needs labels in {0, 1} with both classes present")
    grid = np.maximum(np.asarray(default_grid() if l2_grid is None else l2_grid, dtype=float), LAMBDA_FLOOR)
    n = X.shape[0]
    if grid.size == 1:
        lam, curve = float(grid[0]), None
    else:
        plan = kfold_split(n, inner_folds, stratify_on=y, rng=rng if rng is not None else RngStream(0))
        ll = np.zeros(grid.size)
        for tr, va in plan.splits():
            Z, means, sds, _ = standardize(X[tr])
            Zva = (X[va] - means) / sds
            for i, lam in enumerate(grid):
                theta, _, _ = _logistic_newton(Z, y[tr], lam)
                ll[i] += loss("cross_entropy", y[va], expit(theta[0] + Zva @ theta[1:])) * va.size
        ll /= n
        lam = float(grid[int(np.argmin(ll))])
        curve = ll.tolist()
    Z, means, sds, _ = standardize(X)
    theta, iters, grad = _logistic_newton(Z, y, lam)
    report = {
        "lambda": lam,
        "grid": grid.tolist(),
        "cv_log_loss": curve,
        "iterations": iters,
        "grad_inf_norm": float(np.max(np.abs(grad))),
    }
    return LogisticModel(means, sds, theta[1:], theta[0], report)


def logistic_penalized_gradient(model, X, y):
    """Gradient of the training objective at the model's parameters."""
    Z = (np.asarray(X) - model.means) / model.sds
    lam = model.report["lambda"]
    prob = expit(model.intercept + Z @ model.coef_std)
    g0 = np.sum(prob - y)
    gw = Z.T @ (prob - y) + lam * model.coef_std
    return np.concatenate([[g0], gw])


# -- multilayer perceptron --------------------------------------------------


def _mlp_init(p, width, gen):
    return {
        "W1": gen.standard_normal((p, width)) * np.sqrt(2.0 / p),
        "b1": np.zeros(width),
        "w2": gen.standard_normal(width) * np.sqrt(1.0 / width),
        "b2": np.zeros(1),
    }


def _mlp_forward(params, Z):
    pre = Z @ params["W1"] + params["b1"]
    hidden = np.maximum(pre, 0.0)
    out = hidden @ params["w2"] + params["b2"][0]
    return out, (pre, hidden)


def mlp_loss_and_grad(params, Z, y):
    """Mean squared error of the network and its gradient per parameter."""
    out, (pre, hidden) = _mlp_forward(params, Z)
    n = Z.shape[0]
    resid = out - y
    value = np.mean(resid**2)
    d_out = 2.0 * resid / n
    grads = {
        "w2": hidden.T @ d_out,
        "b2": np.array([d_out.sum()]),
    }
    d_hidden = np.outer(d_out, params["w2"]) * (pre > 0)
    grads["W1"] = Z.T @ d_hidden
    grads["b1"] = d_hidden.sum(axis=0)
    return value, grads


def fit_mlp(
    X,
    y,
    width=100,
    max_epochs=400,
    patience=10,
    rng=None,
    learning_rate=1e-3,
    batch_size=None,
    val_fraction=0.1,
):
    """One-hidden-layer ReLU regressor trained with Adam and early stopping.

    Inputs and target are standardized with training moments. A random
    ``val_fraction`` of the rows is held out; training stops after
    ``patience`` epochs without improvement of the validation MSE and the
    best-validation weights are restored. ``batch_size=None`` takes one
    full-batch step per epoch.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if n < 20:
        raise ValueError("fit_mlp needs at least 20 samples")
    gen = (rng if rng is not None else RngStream(0)).generator()
    order = gen.permutation(n)
    n_val = max(1, int(round(val_fraction * n)))
    va, tr = order[:n_val], order[n_val:]
    Z, xm, xs, _ = standardize(X[tr])
    ym = y[tr].mean()
    ys = y[tr].std() or 1.0
    t = (y[tr] - ym) / ys
    Zva = (X[va] - xm) / xs
    tva = (y[va] - ym) / ys

    params = _mlp_init(p, width, gen)
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(val) for k, val in params.items()}
    b1, b2, eps = 0.9, 0.999, 1e-8
    batch = tr.size if batch_size is None else min(batch_size, tr.size)
    best = (np.inf, None, 0)
    curve = []
    step = 0
    stall = 0
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        idx = gen.permutation(tr.size)
        for start in range(0, tr.size, batch):
            sel = idx[start : start + batch]
            value, grads = mlp_loss_and_grad(params, Z[sel], t[sel])
            if not np.isfinite(value):
                raise TrainingDiverged(epoch)
            step += 1
            for k in params:
                m[k] = b1 * m[k] + (1 - b1) * grads[k]
                v[k] = b2 * v[k] + (1 - b2) * grads[k] ** 2
                mhat = m[k] / (1 - b1**step)
                vhat = v[k] / (1 - b2**step)
                params[k] = params[k] - learning_rate * mhat / (np.sqrt(vhat) + eps)
        val_loss = float(np.mean((_mlp_forward(params, Zva)[0] - tva) ** 2))
        if not np.isfinite(val_loss):
            raise TrainingDiverged(epoch)
        curve.append(val_loss)
        if val_loss < best[0]:
            best = (val_loss, {k: val.copy() for k, val in params.items()}, epoch)
            stall = 0
        else:
            stall += 1
            if stall >= patience:
                break
    report = {
        "width": width,
        "activation": "relu",
        "optimizer": "adam",
        "learning_rate": learning_rate,
        "betas": [b1, b2],
        "batch_size": batch,
        "epochs_run": epoch,
        "best_epoch": best[2],
        "validation_curve": curve,
    }
    return MLPModel(xm, xs, ym, ys, best[1], report)


def fit_learner(spec, X, y, rng):
    """Dispatch on ``spec.kind``."""
    if spec.kind == "ridge":
        return fit_ridge(X, y, spec.grid, spec.inner_cv_folds, rng)
    if spec.kind == "logistic":
        return fit_logistic(X, y, spec.grid, spec.inner_cv_folds, rng)
    return fit_mlp(
        X,
        y,
        width=spec.width,
        max_epochs=spec.max_epochs,
        patience=spec.patience,
        rng=rng,
        learning_rate=spec.learning_rate,
    )


# -- conditional imputers ---------------------------------------------------


class Imputer:
    """Ridge estimate of ``E[X_G | X_-G]`` learned on a training split.

    Attributes
    ----------
    group, complement : ndarray of int
    coef : ndarray of shape (len(complement), len(group))
        Coefficients between standardized columns.
    lam : float
        Penalty chosen by generalized cross-validation.
    residuals : ndarray of shape (n_train, len(group))
    """

    def __init__(self, group, complement, means, sds, coef, lam, residuals):
        self.group = group
        self.complement = complement
        self.means = means
        self.sds = sds
        self.coef = coef
        self.lam = lam
        self.residuals = residuals

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.means.size:
            raise ValueError(f"expected {self.means.size} columns, got {X.shape[-1]}")
        C, G = self.complement, self.group
        Zc = (X[:, C] - self.means[C]) / self.sds[C]
        return (Zc @ self.coef) * self.sds[G] + self.means[G]


class MarginalImputer(Imputer):
    """Degenerate imputer for the group of all variables: training means."""

    def __init__(self, means, residuals):
        p = means.size
        super().__init__(np.arange(p), np.arange(0), means, np.ones(p), np.zeros((0, p)), None, residuals)

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.means.size:
            raise ValueError(f"expected {self.means.size} columns, got {X.shape[-1]}")
        return np.broadcast_to(self.means, X.shape).copy()


def _group_indices(G, p):
    G = np.unique(np.asarray(G, dtype=int))
    if G.size == 0:
        raise ValueError("group must contain at least one variable")
    if G[0] < 0 or G[-1] >= p:
        raise ValueError(f"group indices must lie in [0, {p})")
    if G.size >= p:
        raise ValueError("group covers every variable: no conditioning set")
    return G, np.setdiff1d(np.arange(p), G)


def fit_imputer(X_train, G, lambda_grid=None):
    """Multi-output ridge of ``X_G`` on ``X_-G`` with a shared GCV penalty."""
    X_train = np.asarray(X_train, dtype=float)
    n, p = X_train.shape
    G, C = _group_indices(G, p)
    grid = np.maximum(np.asarray(default_grid() if lambda_grid is None else lambda_grid, dtype=float), LAMBDA_FLOOR)
    Z, means, sds, _ = standardize(X_train)
    Zc, Zg = Z[:, C], Z[:, G]
    U, s, Vt = np.linalg.svd(Zc, full_matrices=False)
    UtZg = U.T @ Zg
    best = None
    for lam in grid:
        f = s / (s**2 + lam)
        coef = Vt.T @ (f[:, None] * UtZg)
        resid = Zg - Zc @ coef
        rss = np.sum(resid**2)
        df = np.sum(s**2 / (s**2 + lam))
        gcv = rss / (n * (1.0 - df / n) ** 2)
        if best is None or gcv < best[0]:
            best = (gcv, lam, coef, resid)
    _, lam, coef, resid = best
    return Imputer(G, C, means, sds, coef, float(lam), resid * sds[G])


class ImputerBank:
    """Fold-level cache that fits imputers for many groups cheaply.

    With ``S = Z'Z`` and ``T = (S + lam I)^-1`` precomputed per penalty,
    the ridge coefficients of ``Z_G`` on ``Z_C`` are ``-T_CG T_GG^-1`` and
    the GCV criterion follows from traces of the same blocks, so each group
    costs ``O(p |G|^2)`` instead of a fresh decomposition. Results match
    :func:`fit_imputer`.
    """

    def __init__(self, X_train, lambda_grid=None):
        X_train = np.asarray(X_train, dtype=float)
        self.n, self.p = X_train.shape
        self.grid = np.maximum(
            np.asarray(default_grid() if lambda_grid is None else lambda_grid, dtype=float), LAMBDA_FLOOR
        )
        Z, self.means, self.sds, _ = standardize(X_train)
        self.Z = Z
        self.S = Z.T @ Z
        eye = np.eye(self.p)
        self.T = np.stack([np.linalg.inv(self.S + lam * eye) for lam in self.grid])
        self.trace_T = np.trace(self.T, axis1=1, axis2=2)

    def marginal(self):
        return MarginalImputer(self.means, self.Z * self.sds)

    def imputer(self, G):
        G, C = _group_indices(G, self.p)
        n = self.n
        S_cg = self.S[np.ix_(C, G)]
        tr_sgg = np.trace(self.S[np.ix_(G, G)])
        T_g = self.T[:, :, G]
        T_gg = T_g[:, G, :]
        T_cg = T_g[:, C, :]
        T_gg_inv = np.linalg.inv(T_gg)
        coef = -T_cg @ T_gg_inv  # one (|C|, |G|) block per penalty
        lam = self.grid
        rss = tr_sgg - np.einsum("lcg,cg->l", coef, S_cg) - lam * np.einsum("lcg,lcg->l", coef, coef)
        # tr((S_CC + lam I)^-1) via the Schur complement of T
        tr_inv = self.trace_T - np.trace(T_gg, axis1=1, axis2=2) + np.einsum("lcg,lcg->l", coef, T_cg)
        df = C.size - lam * tr_inv
        gcv = np.maximum(rss, 0.0) / (n * (1.0 - df / n) ** 2)
        best = int(np.argmin(gcv))
        coef = coef[best]
        resid = self.Z[:, G] - self.Z[:, C] @ coef
        return Imputer(G, C, self.means, self.sds, coef, float(lam[best]), resid * self.sds[G])
