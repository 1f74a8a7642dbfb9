"""Synthetic finite populations with group-indexed random effects.

Units carry a response count ``y``, an inferential covariate ``x1``, and a
positive size variable ``x2``.  The response mean couples to ``x2`` through
both a fixed coefficient and a group-level random slope, and units are
allocated to groups by sorting on ``x2``, so any design whose inclusion
probabilities track ``x2`` is informative for both the fixed effects and the
random-effect hyperparameters.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ConfigError
from .rng import substream

__all__ = [
    "PopulationConfig",
    "Population",
    "generate_population",
    "marginal_truth",
    "marginal_truth_oracle",
    "fit_marginal_model_ml",
    "MARGINAL_SIGMA_U2",
]

# Normal approximation threshold for Poisson draws: above this mean the
# relative error is < 1e-7 and numpy's generator rejects the rate anyway.
_POISSON_NORMAL_CUTOFF = 1e15

#: Tabulated marginal-model random-intercept variance by population group
#: count for the bundled indirect-sampling study settings.
MARGINAL_SIGMA_U2 = {1250: 0.578, 500: 0.349, 200: 0.216, 100: 0.169, 50: 0.136}


@dataclass(frozen=True)
class PopulationConfig:
    """Generator settings for one synthetic population.

    ``m2`` is the mean of the Exponential size variable.  ``group_size_mode``
    is ``"fixed"`` (equal group sizes, requires ``G_U`` to divide ``N``) or
    ``"lognormal"`` (sizes drawn lognormal with natural-scale mean ``N/G_U``
    and log-variance ``log_variance``, integerized to sum exactly to ``N``).
    """

    N: int = 5000
    G_U: int = 1250
    beta: tuple[float, float] = (1.0, 0.5)
    sigma: tuple[float, float] = (1.0, 0.5)
    R: tuple[tuple[float, float], tuple[float, float]] = ((1.0, 0.0), (0.0, 1.0))
    m2: float = 3.5
    group_size_mode: str = "fixed"
    log_variance: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if self.N <= 0:
            raise ConfigError(f"N must be positive, got {self.N}")
        if self.G_U <= 0:
            raise ConfigError(f"G_U must be positive, got {self.G_U}")
        if self.G_U > self.N:
            raise ConfigError(f"G_U={self.G_U} exceeds N={self.N}")
        if any(s < 0 for s in self.sigma):
            raise ConfigError(f"sigma components must be >= 0, got {self.sigma}")
        if self.m2 <= 0:
            raise ConfigError(f"m2 must be positive, got {self.m2}")
        if self.group_size_mode not in ("fixed", "lognormal"):
            raise ConfigError(
                f"group_size_mode must be 'fixed' or 'lognormal', got {self.group_size_mode!r}"
            )
        if self.group_size_mode == "fixed" and self.N % self.G_U != 0:
            raise ConfigError(
                f"fixed group sizes require G_U to divide N, got N={self.N}, G_U={self.G_U}"
            )
        if self.group_size_mode == "lognormal" and self.log_variance <= 0:
            raise ConfigError(f"log_variance must be positive, got {self.log_variance}")
        R = np.asarray(self.R, dtype=float)
        if R.shape != (2, 2) or not np.allclose(R, R.T):
            raise ConfigError("R must be a symmetric 2x2 correlation matrix")

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "G_U": self.G_U,
            "beta": list(self.beta),
            "sigma": list(self.sigma),
            "R": [list(r) for r in self.R],
            "m2": self.m2,
            "group_size_mode": self.group_size_mode,
            "log_variance": self.log_variance,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PopulationConfig":
        d = dict(d)
        if "beta" in d:
            d["beta"] = tuple(d["beta"])
        if "sigma" in d:
            d["sigma"] = tuple(d["sigma"])
        if "R" in d:
            d["R"] = tuple(tuple(r) for r in d["R"])
        return cls(**d)


@dataclass(frozen=True)
class Population:
    """A generated finite population.

    Units are stored in ascending order of ``x2``; group labels ``h`` are
    1-based and occupy contiguous ranges of that ordering.  Immutable and
    safe to share across threads.
    """

    unit_id: np.ndarray
    y: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    h: np.ndarray
    group_sizes: np.ndarray
    config: PopulationConfig

    @property
    def N(self) -> int:
        return self.y.shape[0]

    @property
    def G_U(self) -> int:
        return self.group_sizes.shape[0]

    def group_slices(self) -> np.ndarray:
        """Start offsets of each group's contiguous unit block (len G_U + 1)."""
        return np.concatenate([[0], np.cumsum(self.group_sizes)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["unit_id", "y", "x1", "x2", "h"])
        for i in range(self.N):
            w.writerow(
                [int(self.unit_id[i]), repr(float(self.y[i])), repr(float(self.x1[i])),
                 repr(float(self.x2[i])), int(self.h[i])]
            )
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, config: PopulationConfig) -> "Population":
        rows = list(csv.DictReader(io.StringIO(text)))
        unit_id = np.array([int(r["unit_id"]) for r in rows])
        y = np.array([float(r["y"]) for r in rows])
        x1 = np.array([float(r["x1"]) for r in rows])
        x2 = np.array([float(r["x2"]) for r in rows])
        h = np.array([int(r["h"]) for r in rows])
        group_sizes = np.bincount(h - 1, minlength=config.G_U)
        return cls(unit_id, y, x1, x2, h, group_sizes, config)

    def to_json(self) -> str:
        return json.dumps(
            {
                "config": self.config.to_dict(),
                "unit_id": self.unit_id.tolist(),
                "y": self.y.tolist(),
                "x1": self.x1.tolist(),
                "x2": self.x2.tolist(),
                "h": self.h.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "Population":
        d = json.loads(text)
        config = PopulationConfig.from_dict(d["config"])
        h = np.array(d["h"], dtype=int)
        return cls(
            np.array(d["unit_id"], dtype=int),
            np.array(d["y"], dtype=float),
            np.array(d["x1"], dtype=float),
            np.array(d["x2"], dtype=float),
            h,
            np.bincount(h - 1, minlength=config.G_U),
            config,
        )


def _draw_poisson(rng, lam: np.ndarray) -> np.ndarray:
    y = np.empty(lam.shape, dtype=float)
    small = lam < _POISSON_NORMAL_CUTOFF
    y[small] = rng.poisson(lam[small])
    big = ~small
    if big.any():
        y[big] = np.round(lam[big] + np.sqrt(lam[big]) * rng.standard_normal(big.sum()))
    return y


def _lognormal_group_sizes(rng, G: int, mean_size: float, log_variance: float, N: int) -> np.ndarray:
    mu = np.log(mean_size) - log_variance / 2.0
    sizes = rng.lognormal(mean=mu, sigma=np.sqrt(log_variance), size=G)
    sizes = np.maximum(1, np.round(sizes).astype(np.int64))
    # Repair the sum to N, adjusting the largest groups first (ties broken by
    # index) so the repair is deterministic and small groups stay >= 1.
    diff = int(N - sizes.sum())
    order = np.lexsort((np.arange(G), -sizes))
    i = 0
    while diff != 0:
        k = order[i % G]
        if diff > 0:
            sizes[k] += 1
            diff -= 1
        elif sizes[k] > 1:
            sizes[k] -= 1
            diff += 1
        i += 1
    return sizes


def generate_population(config: PopulationConfig) -> Population:
    """Generate a population from ``config``; bit-identical given the seed.

    Draws x1 standard normal, x2 Exponential with mean ``m2``, group effects
    bivariate normal with covariance diag(sigma)·R·diag(sigma), and counts
    Poisson with log-mean x1·beta1 + x2·beta2 + [1, x2]·gamma_h.  Units are
    sorted ascending by x2 and split into contiguous groups; in lognormal
    mode the group sizes are assigned in descending order so groups of
    larger-sized units get fewer units.
    """
    config.validate()
    N, G = config.N, config.G_U
    rng_x = substream(config.seed, "population", "covariates")
    rng_g = substream(config.seed, "population", "effects")
    rng_s = substream(config.seed, "population", "sizes")
    rng_y = substream(config.seed, "population", "response")

    x1 = rng_x.standard_normal(N)
    x2 = rng_x.exponential(scale=config.m2, size=N)
    sig = np.asarray(config.sigma, dtype=float)
    cov = np.diag(sig) @ np.asarray(config.R, dtype=float) @ np.diag(sig)
    gamma = rng_g.multivariate_normal(np.zeros(2), cov, size=G, method="cholesky")

    if config.group_size_mode == "fixed":
        sizes = np.full(G, N // G, dtype=np.int64)
    else:
        sizes = _lognormal_group_sizes(rng_s, G, N / G, config.log_variance, N)
        sizes = np.sort(sizes)[::-1]

    order = np.argsort(x2, kind="stable")
    x1, x2 = x1[order], x2[order]
    h0 = np.repeat(np.arange(G), sizes)

    log_mu = x1 * config.beta[0] + x2 * config.beta[1] + gamma[h0, 0] + x2 * gamma[h0, 1]
    lam = np.exp(np.clip(log_mu, None, 700.0))
    y = _draw_poisson(rng_y, lam)

    return Population(
        unit_id=np.arange(1, N + 1),
        y=y,
        x1=x1,
        x2=x2,
        h=h0 + 1,
        group_sizes=sizes.copy(),
        config=config,
    )


def marginal_truth(G_U: int) -> float:
    """Tabulated marginal-model sigma_u^2 for the bundled indirect study.

    Only the studied group counts are tabulated; for other configurations
    use :func:`marginal_truth_oracle` to recompute a value directly.
    """
    try:
        return MARGINAL_SIGMA_U2[G_U]
    except KeyError:
        raise ConfigError(
            f"no tabulated marginal sigma_u^2 for G_U={G_U}; "
            "use marginal_truth_oracle() to compute one for this configuration"
        ) from None


# ---------------------------------------------------------------------------
# Large-population marginal-model fit (the truth oracle)
# ---------------------------------------------------------------------------


def _group_modes(sy: np.ndarray, log_se: np.ndarray, s2: float, iters: int = 80) -> np.ndarray:
    # Unique root in t = u + log_se of  sy - e^t - (t - log_se)/s2 ; bisection
    # is immune to the overflow that breaks Newton steps here.
    t_lo = np.full_like(log_se, -745.0)
    t_hi = np.maximum(np.log(sy + 1.0), log_se) + 5.0
    for _ in range(iters):
        t = 0.5 * (t_lo + t_hi)
        g = sy - np.exp(t) - (t - log_se) / s2
        pos = g > 0
        t_lo = np.where(pos, t, t_lo)
        t_hi = np.where(pos, t_hi, t)
    return 0.5 * (t_lo + t_hi)


def fit_marginal_model_ml(
    y: np.ndarray,
    x1: np.ndarray,
    group_index: np.ndarray,
    n_groups: int,
    quad_order: int = 21,
) -> tuple[float, float, float]:
    """Integrated-ML fit of the random-intercept model log mu = b0 + b1 x1 + u_h.

    Mode-centered (adaptive) Gauss-Hermite integration per group, deviance
    stabilized so the objective stays well conditioned for counts spanning
    many orders of magnitude.  Returns (b0, b1, sigma_u2).  This fitter is
    independent of the MCMC estimation path and exists to compute reference
    values on large populations.
    """
    from scipy.optimize import minimize

    y = np.asarray(y, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    g = np.asarray(group_index)
    G = int(n_groups)
    sy = np.bincount(g, weights=y, minlength=G)
    with np.errstate(divide="ignore", invalid="ignore"):
        sat = np.bincount(g, weights=np.where(y > 0, y * np.log(y) - y, 0.0), minlength=G)
    nodes, wts = np.polynomial.hermite.hermgauss(quad_order)
    log_wts = np.log(wts)

    def nll(params):
        b0, b1, log_s = params
        s2 = np.exp(2.0 * log_s)
        eta = b0 + b1 * x1
        m = np.full(G, -np.inf)
        np.maximum.at(m, g, eta)
        log_se = m + np.log(np.bincount(g, weights=np.exp(eta - m[g]), minlength=G))
        t = _group_modes(sy, log_se, s2)
        u_hat = t - log_se
        sd = 1.0 / np.sqrt(np.exp(t) + 1.0 / s2)
        u = u_hat[:, None] + np.sqrt(2.0) * sd[:, None] * nodes[None, :]
        expo = (
            np.bincount(g, weights=y * eta, minlength=G)[:, None]
            + sy[:, None] * u
            - np.exp(np.clip(log_se[:, None] + u, None, 700.0))
            - u**2 / (2.0 * s2)
            - sat[:, None]
        )
        ln_kernel = expo + nodes[None, :] ** 2 + log_wts[None, :]
        mx = ln_kernel.max(axis=1)
        li = mx + np.log(np.sum(np.exp(ln_kernel - mx[:, None]), axis=1))
        li += 0.5 * np.log(2.0) + np.log(sd) - 0.5 * np.log(np.pi)
        li -= log_s + 0.5 * np.log(2.0 * np.pi)
        return -float(np.sum(li))

    best = None
    for start in ([0.5, 1.0, -0.5], [0.0, 1.0, 0.5], [0.3, 1.0, -1.5]):
        res = minimize(
            nll, np.asarray(start), method="L-BFGS-B",
            bounds=[(-10.0, 10.0), (-5.0, 5.0), (-5.0, 3.0)],
        )
        if best is None or res.fun < best.fun:
            best = res
    b0, b1, log_s = best.x
    return float(b0), float(b1), float(np.exp(2.0 * log_s))


def marginal_truth_oracle(
    G_U: int,
    scale: int = 100,
    seed: int = 2024,
    config: PopulationConfig | None = None,
) -> tuple[float, float]:
    """Recompute (beta0, sigma_u^2) of the marginal model on one large population.

    The group structure is preserved under scaling: both N and G_U are
    multiplied by ``scale`` so the units-per-group profile is unchanged.
    Returns the fitted (b0, sigma_u2).
    """
    if config is None:
        config = PopulationConfig(G_U=G_U, m2=3.5, group_size_mode="lognormal")
    big = replace(config, N=config.N * scale, G_U=config.G_U * scale, seed=seed)
    pop = generate_population(big)
    b0, _b1, s2 = fit_marginal_model_ml(pop.y, pop.x1, pop.h - 1, big.G_U)
    return b0, s2
