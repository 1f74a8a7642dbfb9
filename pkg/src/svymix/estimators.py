"""Scikit-learn style estimators wrapping the weighted mixed-model fitters.

These classes make the estimation surface compose with the wider ecosystem:
they follow the fit/get_params/set_params contract of
:class:`sklearn.base.BaseEstimator`, validate their inputs, and expose
fitted results through trailing-underscore attributes.  ``X`` excludes the
intercept column (``fit_intercept`` controls it), and survey structure is
passed as keyword arguments to ``fit``: group labels, marginal inclusion
probabilities, and (for direct designs) group-level and conditional
probabilities.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConfigError, SchemeMismatchError
from .mcmc import McmcConfig, PosteriorDraws, run_chain, summarize
from .model import ModelSpec, PoissonMixedTarget
from .pairwise import QuadratureRule, fit_mle
from .sampling import DesignSpec, SurveySample
from .weights import GroupWeightScheme, build_weight_set

__all__ = ["PseudoPosteriorPoissonRE", "IntegratedMLPoissonRE"]


def _as_survey_sample(X, y, groups, pi_marg, pi_group, pi_cond, group_sizes) -> tuple[SurveySample, np.ndarray]:
    """Assemble a SurveySample from array inputs; returns (sample, X columns)."""
    X = check_array(X, ensure_2d=True, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != X.shape[0]:
        raise ConfigError("X and y have different lengths")
    if np.any(y < 0):
        raise ConfigError("y must be nonnegative counts")
    groups = np.asarray(groups)
    if groups.shape[0] != y.shape[0]:
        raise ConfigError("groups must align with y")
    labels, group_idx = np.unique(groups, return_inverse=True)
    G = labels.shape[0]

    if pi_marg is None:
        pim = np.full(y.shape[0], 0.5)  # equal probabilities: weights normalize to 1
    else:
        pim = np.asarray(pi_marg, dtype=float).ravel()
        if pim.shape[0] != y.shape[0]:
            raise ConfigError("pi_marg must align with y")
        if np.any((pim <= 0) | (pim > 1)):
            raise ConfigError("pi_marg must lie in (0, 1]")

    pig = None
    if pi_group is not None:
        pig_units = np.asarray(pi_group, dtype=float).ravel()
        if pig_units.shape[0] != y.shape[0]:
            raise ConfigError("pi_group must align with y (group value repeated on unit rows)")
        pig = np.zeros(G)
        pig[group_idx] = pig_units
        if np.any((pig <= 0) | (pig > 1)):
            raise ConfigError("pi_group must lie in (0, 1]")

    if pi_cond is not None:
        pic = np.asarray(pi_cond, dtype=float).ravel()
    elif pig is not None:
        pic = pim / pig[group_idx]
    else:
        pic = np.full(y.shape[0], np.nan)

    Ng = None
    if group_sizes is not None:
        ng_units = np.asarray(group_sizes, dtype=float).ravel()
        Ng = np.zeros(G)
        Ng[group_idx] = ng_units

    x1 = X[:, 0] if X.shape[1] >= 1 else np.zeros(y.shape[0])
    sample = SurveySample(
        y=y, x1=x1, group=group_idx, pi_cond=pic, pi_marg=pim, w_marg=1.0 / pim,
        h=np.arange(1, G + 1), N_g=Ng, pi_g=pig,
        design=DesignSpec("pps_two_stage" if pig is not None else "pps_single",
                          n=y.shape[0], f=1.0),
    )
    return sample, X


def _parse_scheme(scheme: str) -> GroupWeightScheme:
    if scheme == "sum_weights_estimated":
        return GroupWeightScheme("sum_weights", "estimated")
    if scheme == "sum_weights":
        return GroupWeightScheme("sum_weights", "known")
    return GroupWeightScheme(scheme)


class _SurveyMixedBase(BaseEstimator):
    def _build(self, X, y, groups, pi_marg, pi_group, pi_cond, group_sizes):
        sample, Xv = _as_survey_sample(X, y, groups, pi_marg, pi_group, pi_cond, group_sizes)
        scheme = _parse_scheme(self.scheme)
        weights = build_weight_set(sample, scheme)
        if self.fit_intercept:
            Xd = np.column_stack([np.ones(Xv.shape[0]), Xv])
        else:
            Xd = Xv
        return sample, Xd, weights


class PseudoPosteriorPoissonRE(_SurveyMixedBase):
    """Bayesian Poisson random-intercept regression under survey weighting.

    Parameters mirror the sampler configuration; ``scheme`` picks the group
    weight construction ("single", "direct", "sum_probabilities",
    "product_complement", "sum_weights", "sum_weights_estimated").  After
    ``fit``: ``coef_``, ``intercept_``, ``sigma_u2_``, ``random_effects_``,
    ``summary_``, ``draws_``.
    """

    def __init__(
        self,
        scheme: str = "single",
        n_iter: int = 3000,
        burn_in: int = 1500,
        thin: int = 1,
        chains: int = 2,
        seed: int = 0,
        fit_intercept: bool = True,
        beta_prior_sd: float = 10.0,
        sigma_prior_df: float = 3.0,
        sigma_prior_scale: float = 2.0,
    ):
        self.scheme = scheme
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.thin = thin
        self.chains = chains
        self.seed = seed
        self.fit_intercept = fit_intercept
        self.beta_prior_sd = beta_prior_sd
        self.sigma_prior_df = sigma_prior_df
        self.sigma_prior_scale = sigma_prior_scale

    def _mcmc_config(self) -> McmcConfig:
        return McmcConfig(
            n_iter=self.n_iter, burn_in=self.burn_in, thin=self.thin,
            chains=self.chains, seed=self.seed,
        )

    def _model_spec(self) -> ModelSpec:
        return ModelSpec(
            beta_prior_sd=self.beta_prior_sd,
            sigma_prior_df=self.sigma_prior_df,
            sigma_prior_scale=self.sigma_prior_scale,
        )

    def fit(self, X, y, *, groups, pi_marg=None, pi_group=None, pi_cond=None,
            group_sizes=None):
        sample, Xd, weights = self._build(X, y, groups, pi_marg, pi_group, pi_cond,
                                          group_sizes)
        target = PoissonMixedTarget(Xd, sample.y, sample.group, weights.unit_w,
                                    weights.group_w, self._model_spec())
        return self._finish(target, weights)

    def fit_survey_sample(self, sample: SurveySample, design_X: np.ndarray | None = None):
        """Fit directly on a drawn sample (the in-process simulation path)."""
        scheme = _parse_scheme(self.scheme)
        weights = build_weight_set(sample, scheme)
        if design_X is None:
            design_X = np.column_stack([np.ones(sample.n_total), sample.x1])
        target = PoissonMixedTarget(design_X, sample.y, sample.group, weights.unit_w,
                                    weights.group_w, self._model_spec())
        return self._finish(target, weights)

    def _finish(self, target: PoissonMixedTarget, weights):
        draws = run_chain(target, self._mcmc_config())
        self.draws_: PosteriorDraws = draws
        self.summary_ = summarize(draws)
        means = self.summary_.set_index("parameter")["mean"]
        p = target.p
        beta_means = np.array([means[f"beta{j}"] for j in range(p)])
        if self.fit_intercept:
            self.intercept_ = float(beta_means[0])
            self.coef_ = beta_means[1:]
        else:
            self.intercept_ = 0.0
            self.coef_ = beta_means
        self.sigma_u2_ = float(means["sigma_u2"])
        self.random_effects_ = np.array(
            [means[f"u{g + 1}"] for g in range(target.G)]
        )
        self.weights_ = weights
        self.n_groups_ = target.G
        return self

    def predict(self, X, groups=None):
        """Posterior-mean count prediction; unseen groups get effect 0."""
        check_is_fitted(self, "sigma_u2_")
        X = check_array(X, ensure_2d=True, dtype=float)
        eta = X @ self.coef_ + self.intercept_
        if groups is not None:
            groups = np.asarray(groups)
            eff = np.zeros(X.shape[0])
            known = groups < self.random_effects_.shape[0]
            eff[known] = self.random_effects_[groups[known]]
            eta = eta + eff
        return np.exp(eta)


class IntegratedMLPoissonRE(_SurveyMixedBase):
    """Maximum pseudo-likelihood baselines with numerically integrated effects.

    ``objective="marginal"`` weights unit terms inside each group's
    random-effect integral; ``objective="pair"`` integrates each
    within-group pair separately.  Requires direct-design structure
    (``pi_group``/``pi_cond``).  After ``fit``: ``coef_``, ``intercept_``,
    ``sigma_u2_``, ``result_``.
    """

    def __init__(
        self,
        objective: str = "marginal",
        scheme: str = "direct",
        quad_order: int = 21,
        fit_intercept: bool = True,
    ):
        self.objective = objective
        self.scheme = scheme
        self.quad_order = quad_order
        self.fit_intercept = fit_intercept

    def fit(self, X, y, *, groups, pi_marg=None, pi_group=None, pi_cond=None,
            group_sizes=None):
        sample, Xd, weights = self._build(X, y, groups, pi_marg, pi_group, pi_cond,
                                          group_sizes)
        if not self.fit_intercept:
            raise ConfigError("integrated baselines always include an intercept")
        return self._finish(sample, weights)

    def fit_survey_sample(self, sample: SurveySample):
        weights = build_weight_set(sample, _parse_scheme(self.scheme))
        return self._finish(sample, weights)

    def _finish(self, sample: SurveySample, weights):
        rule = QuadratureRule.gauss_hermite(self.quad_order)
        result = fit_mle(self.objective, sample, weights, rule)
        self.result_ = result
        self.intercept_ = float(result.beta[0])
        self.coef_ = result.beta[1:]
        self.sigma_u2_ = float(result.sigma_u2)
        return self
