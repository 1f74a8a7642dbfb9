"""Weighted log pseudo-posterior for the Poisson random-intercept model.

The estimation model is log mu_ij = x_ij' beta + u_g with u_g ~ N(0,
sigma_u^2).  Each unit's Poisson log-likelihood term is multiplied by its
normalized unit weight and each group's random-effect prior term by its
group weight; weakly-informative priors (normal on beta, half-Student-t on
sigma_u) and the log-scale Jacobian complete the joint density.  Poisson
terms include the log(y!) constant, so values are comparable across
implementations.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .exceptions import EvaluationError
from .sampling import SurveySample
from .weights import WeightSet

__all__ = [
    "ModelSpec",
    "ParamState",
    "PoissonMixedTarget",
    "design_matrix",
    "log_pseudo_posterior",
    "grad_log_pseudo_posterior",
]

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class ModelSpec:
    """Priors for the estimation model: beta ~ N(0, sd^2) iid, sigma_u ~ half-t."""

    beta_prior_sd: float = 10.0
    sigma_prior_df: float = 3.0
    sigma_prior_scale: float = 2.0

    def __post_init__(self):
        if self.beta_prior_sd <= 0 or self.sigma_prior_scale <= 0 or self.sigma_prior_df <= 0:
            raise EvaluationError("prior scales and df must be positive")


@dataclass
class ParamState:
    """Parameters: fixed effects, observed-group effects, unconstrained scale."""

    beta: np.ndarray
    u: np.ndarray
    log_sigma_u: float

    @property
    def sigma_u(self) -> float:
        return float(np.exp(self.log_sigma_u))

    @property
    def sigma_u2(self) -> float:
        return float(np.exp(2.0 * self.log_sigma_u))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.beta, self.u, [self.log_sigma_u]])

    @classmethod
    def from_vector(cls, v: np.ndarray, p: int, G: int) -> "ParamState":
        return cls(beta=v[:p].copy(), u=v[p:p + G].copy(), log_sigma_u=float(v[-1]))


def design_matrix(sample: SurveySample) -> np.ndarray:
    """Intercept plus x1, the marginal estimation model's fixed design."""
    return np.column_stack([np.ones(sample.n_total), sample.x1])


class PoissonMixedTarget:
    """Evaluation engine for the weighted model on one sample.

    Precomputes the group-sum structure so the likelihood restricted to the
    group effects costs O(G) once the linear predictor for beta is cached.
    Evaluation is pure: methods never mutate state, so one instance can be
    shared across threads evaluating different parameter values.
    """

    def __init__(
        self,
        X: np.ndarray,
        y: np.ndarray,
        group: np.ndarray,
        unit_w: np.ndarray,
        group_w: np.ndarray,
        spec: ModelSpec | None = None,
    ):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.group = np.asarray(group)
        self.unit_w = np.asarray(unit_w, dtype=float)
        self.group_w = np.asarray(group_w, dtype=float)
        self.spec = spec if spec is not None else ModelSpec()
        self.n, self.p = self.X.shape
        self.G = self.group_w.shape[0]
        self.wy = self.unit_w * self.y
        self.sy_w = np.bincount(self.group, weights=self.wy, minlength=self.G)
        self.wlgam = np.bincount(
            self.group, weights=self.unit_w * gammaln(self.y + 1.0), minlength=self.G
        )

    @classmethod
    def from_sample(
        cls, sample: SurveySample, weights: WeightSet, spec: ModelSpec | None = None
    ) -> "PoissonMixedTarget":
        if weights.unit_w.shape[0] != sample.n_total:
            raise EvaluationError("weight set is not aligned with the sample")
        return cls(
            design_matrix(sample), sample.y, sample.group,
            weights.unit_w, weights.group_w, spec,
        )

    # -- pieces ----------------------------------------------------------

    def linear_stats(self, beta: np.ndarray):
        """(per-group weighted y'eta sums, per-group sum of w e^eta)."""
        eta = self.X @ beta
        c = np.bincount(self.group, weights=self.wy * eta, minlength=self.G)
        t = np.bincount(
            self.group, weights=self.unit_w * np.exp(np.clip(eta, None, 700.0)), minlength=self.G
        )
        return c, t

    def group_data_loglik(self, c: np.ndarray, t: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Weighted Poisson log-likelihood summed within each group."""
        return c + self.sy_w * u - t * np.exp(np.clip(u, None, 700.0)) - self.wlgam

    def data_loglik(self, beta: np.ndarray, u: np.ndarray) -> float:
        c, t = self.linear_stats(beta)
        return float(np.sum(self.group_data_loglik(c, t, u)))

    def re_log_prior(self, u: np.ndarray, log_sigma_u: float) -> np.ndarray:
        """Per-group weighted N(u_g | 0, sigma_u^2) log-density terms."""
        s2 = np.exp(2.0 * log_sigma_u)
        return self.group_w * (-0.5 * _LOG_2PI - log_sigma_u - 0.5 * u**2 / s2)

    def beta_log_prior(self, beta: np.ndarray) -> float:
        sd = self.spec.beta_prior_sd
        return float(np.sum(-0.5 * _LOG_2PI - np.log(sd) - 0.5 * beta**2 / sd**2))

    def scale_log_prior(self, log_sigma_u: float) -> float:
        """Half-t log-density of sigma_u plus the log-scale Jacobian."""
        nu, A = self.spec.sigma_prior_df, self.spec.sigma_prior_scale
        sigma = np.exp(log_sigma_u)
        lp = (
            np.log(2.0)
            + gammaln((nu + 1.0) / 2.0)
            - gammaln(nu / 2.0)
            - 0.5 * np.log(nu * np.pi * A**2)
            - (nu + 1.0) / 2.0 * np.log1p(sigma**2 / (nu * A**2))
        )
        return float(lp + log_sigma_u)

    # -- full density and gradient ---------------------------------------

    def log_posterior(self, state: ParamState) -> float:
        parts = {
            "data_loglik": self.data_loglik(state.beta, state.u),
            "re_prior": float(np.sum(self.re_log_prior(state.u, state.log_sigma_u))),
            "beta_prior": self.beta_log_prior(state.beta),
            "scale_prior": self.scale_log_prior(state.log_sigma_u),
        }
        total = sum(parts.values())
        if not np.isfinite(total):
            bad = [k for k, v in parts.items() if not np.isfinite(v)]
            raise EvaluationError(f"non-finite log posterior; offending component(s): {bad}")
        return total

    def grad_log_posterior(self, state: ParamState) -> np.ndarray:
        """Analytic gradient over (beta, u, log_sigma_u), same layout as to_vector."""
        beta, u, ls = state.beta, state.u, state.log_sigma_u
        s2 = np.exp(2.0 * ls)
        eta = self.X @ beta + u[self.group]
        mu = np.exp(np.clip(eta, None, 700.0))
        r = self.unit_w * (self.y - mu)
        g_beta = self.X.T @ r - beta / self.spec.beta_prior_sd**2
        g_u = np.bincount(self.group, weights=r, minlength=self.G) - self.group_w * u / s2
        nu, A = self.spec.sigma_prior_df, self.spec.sigma_prior_scale
        sigma2 = np.exp(2.0 * ls)
        g_ls = float(
            np.sum(self.group_w * (u**2 / s2 - 1.0))
            - (nu + 1.0) * sigma2 / (nu * A**2 + sigma2)
            + 1.0
        )
        return np.concatenate([g_beta, g_u, [g_ls]])


def log_pseudo_posterior(
    state: ParamState,
    sample: SurveySample,
    weights: WeightSet,
    spec: ModelSpec | None = None,
) -> float:
    """Log pseudo-posterior density at ``state`` (see module docstring)."""
    return PoissonMixedTarget.from_sample(sample, weights, spec).log_posterior(state)


def grad_log_pseudo_posterior(
    state: ParamState,
    sample: SurveySample,
    weights: WeightSet,
    spec: ModelSpec | None = None,
) -> np.ndarray:
    """Exact gradient of :func:`log_pseudo_posterior` over (beta, u, log_sigma_u)."""
    return PoissonMixedTarget.from_sample(sample, weights, spec).grad_log_posterior(state)
