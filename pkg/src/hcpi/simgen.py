"""Simulated benchmark data: block AR(1) Gaussian designs and outcomes."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .core import Dataset, RngStream

__all__ = [
    "SimConfig",
    "calibrate_noise",
    "gen_ar1_block",
    "gen_design",
    "gen_linear_outcome",
    "gen_nonlinear_outcome",
    "simulate",
    "simulate_active_block",
]

DEFAULT_BLOCKS = (4, 8, 16, 32, 64)
COEF_VALUES = np.array([-2.0, -1.0, 1.0, 2.0])

# stream labels below the root stream of a simulation
_DESIGN, _OUTCOME = 0, 1


@dataclass(frozen=True)
class SimConfig:
    n: int = 400
    block_sizes: tuple = DEFAULT_BLOCKS
    rho_max: float = 0.9
    scenario: str = "linear"
    support_size: int = 10
    snr: float = 2.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "block_sizes", tuple(int(b) for b in self.block_sizes))
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if not self.block_sizes or min(self.block_sizes) < 1:
            raise ValueError("block sizes must be positive")
        if not 0.0 <= self.rho_max < 1.0:
            raise ValueError(f"rho_max must lie in [0, 1), got {self.rho_max}")
        if self.scenario not in ("linear", "nonlinear"):
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.scenario == "linear" and self.support_size > self.p:
            raise ValueError("support_size exceeds p")
        if self.scenario == "nonlinear" and self.p < 5:
            raise ValueError("nonlinear scenario needs p >= 5")
        if not self.snr > 0:
            raise ValueError("snr must be positive")

    @property
    def p(self):
        return sum(self.block_sizes)

    def to_dict(self):
        d = asdict(self)
        d["block_sizes"] = list(self.block_sizes)
        return d


def gen_ar1_block(m, rho, n, rng):
    """Draw ``n`` rows of a stationary AR(1) sequence of length ``m``.

    Each column has unit variance and ``corr(x_i, x_j) = rho ** |i - j|``.
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho must lie in [0, 1), got {rho}")
    if m < 1:
        raise ValueError("block size must be at least 1")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    xi = gen.standard_normal((n, m))
    out = np.empty((n, m))
    out[:, 0] = xi[:, 0]
    innov = np.sqrt(1.0 - rho**2)
    for j in range(1, m):
        out[:, j] = rho * out[:, j - 1] + innov * xi[:, j]
    return out


def gen_design(cfg, rng):
    """Concatenate independent AR(1) blocks with the shared ``rho_max``."""
    blocks = [
        gen_ar1_block(m, cfg.rho_max, cfg.n, rng.derive(b))
        for b, m in enumerate(cfg.block_sizes)
    ]
    return np.hstack(blocks)


def calibrate_noise(y_star, eps, snr):
    """Noise scale giving ``||y*||^2 / (sigma^2 ||eps||^2) == snr``."""
    ny = np.linalg.norm(y_star)
    ne = np.linalg.norm(eps)
    if ny == 0 or ne == 0:
        raise ValueError("y_star and eps must have nonzero norm")
    if not snr > 0:
        raise ValueError("snr must be positive")
    return ny / (np.sqrt(snr) * ne)


def realized_snr(y_star, eps, sigma):
    return float(np.sum(y_star**2) / (sigma**2 * np.sum(eps**2)))


def gen_linear_outcome(X, support_size, snr, rng):
    """Sparse linear outcome ``y = X beta + sigma * eps``.

    Returns
    -------
    y, beta, sigma, support
        With ``support_size == 0`` the outcome is pure standard-normal noise
        and ``sigma`` is 1.
    """
    n, p = X.shape
    if support_size > p or support_size < 0:
        raise ValueError(f"support_size must lie in [0, {p}]")
    gen = rng.generator()
    support = np.sort(gen.choice(p, size=support_size, replace=False))
    beta = np.zeros(p)
    beta[support] = gen.choice(COEF_VALUES, size=support_size)
    eps = gen.standard_normal(n)
    y_star = X @ beta
    sigma = 1.0 if support_size == 0 else calibrate_noise(y_star, eps, snr)
    return y_star + sigma * eps, beta, sigma, support


def nonlinear_signal(X, support):
    j1, j2, j3, j4, j5 = support
    return (
        X[:, j1]
        + 2.0 * np.log(1.0 + 2.0 * X[:, j2] ** 2 + (X[:, j3] + 1.0) ** 2)
        + X[:, j4] * X[:, j5]
    )


def gen_nonlinear_outcome(X, snr, rng):
    """Nonlinear outcome on five randomly placed variables.

    The noiseless signal is centered before the noise is calibrated.
    ``support`` keeps the sampled order ``(j1, ..., j5)``.
    """
    n, p = X.shape
    if p < 5:
        raise ValueError("nonlinear outcome needs at least 5 variables")
    gen = rng.generator()
    support = gen.choice(p, size=5, replace=False)
    eps = gen.standard_normal(n)
    y_star = nonlinear_signal(X, support)
    y_star = y_star - y_star.mean()
    sigma = calibrate_noise(y_star, eps, snr)
    return y_star + sigma * eps, support, sigma


def simulate(cfg, rng=None):
    """Generate a full :class:`~hcpi.core.Dataset` for ``cfg``."""
    rng = rng if rng is not None else RngStream(cfg.seed)
    X = gen_design(cfg, rng.derive(_DESIGN))
    if cfg.scenario == "linear":
        y, beta, sigma, support = gen_linear_outcome(
            X, cfg.support_size, cfg.snr, rng.derive(_OUTCOME)
        )
        meta = {"support": support.tolist(), "beta": beta.tolist()}
        y_star = X @ beta
    else:
        y, support, sigma = gen_nonlinear_outcome(X, cfg.snr, rng.derive(_OUTCOME))
        meta = {"support": [int(j) for j in support], "beta": None}
        y_star = nonlinear_signal(X, support)
        y_star = y_star - y_star.mean()
    noise = (y - y_star) / sigma
    meta.update(
        snr_realized=realized_snr(y_star, noise, sigma),
        sigma_noise=float(sigma),
        blocks=list(cfg.block_sizes),
        scenario=cfg.scenario,
        seed=cfg.seed,
        rho_max=cfg.rho_max,
        snr=cfg.snr,
    )
    names = tuple(f"x{j}" for j in range(cfg.p))
    return Dataset(X, y, names, meta)


def simulate_active_block(cfg, block=0, coef=1.0, rng=None):
    """Dataset whose outcome loads equally on every variable of one block.

    ``y = coef * sum(X_block) + sigma * eps`` with the noise calibrated to
    ``cfg.snr``; ``cfg.scenario`` and ``cfg.support_size`` are ignored. This
    is the strongly correlated single-group setting in which unconserved
    importance vanishes below the group node.
    """
    rng = rng if rng is not None else RngStream(cfg.seed)
    if not 0 <= block < len(cfg.block_sizes):
        raise ValueError(f"block must lie in [0, {len(cfg.block_sizes)})")
    X = gen_design(cfg, rng.derive(_DESIGN))
    start = int(sum(cfg.block_sizes[:block]))
    support = np.arange(start, start + cfg.block_sizes[block])
    beta = np.zeros(cfg.p)
    beta[support] = coef
    eps = rng.derive(_OUTCOME).generator().standard_normal(cfg.n)
    y_star = X @ beta
    sigma = calibrate_noise(y_star, eps, cfg.snr)
    meta = {
        "support": support.tolist(),
        "beta": beta.tolist(),
        "sigma_noise": float(sigma),
        "snr_realized": realized_snr(y_star, eps, sigma),
        "blocks": list(cfg.block_sizes),
        "scenario": "active_block",
        "seed": cfg.seed,
        "rho_max": cfg.rho_max,
        "snr": cfg.snr,
    }
    names = tuple(f"x{j}" for j in range(cfg.p))
    return Dataset(X, y_star + sigma * eps, names, meta)
