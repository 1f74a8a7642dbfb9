"""Frequentist baselines: integrated marginal and pair-integrated objectives.

The integrated marginal pseudo-likelihood weights unit log-likelihood terms
*inside* the random-effect integral of each group; the pair-integrated
composite likelihood instead integrates the random effect out of every
within-group response pair and weights pairs outside their integrals.  Both
integrate against the N(0, sigma_u^2) density with Gauss-Hermite quadrature
under the substitution u = sqrt(2) * sigma_u * t and are maximized
numerically over (beta, log sigma_u).

Both objectives require a direct-design sample: group weights and
within-group conditional unit weights normalized to the group sample size.
Joint within-group inclusion probabilities are not available under
systematic sampling, so pair weights default to the independence
approximation w_{j,k|g} proportional to 1/(pi_{j|g} pi_{k|g}), normalized
so the pair weights in each group sum to the number of pairs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from .exceptions import ConfigError, SchemeMismatchError
from .model import design_matrix
from .sampling import SurveySample
from .weights import WeightSet

__all__ = [
    "QuadratureRule",
    "MleResult",
    "mpml_objective",
    "pairwise_objective",
    "fit_mle",
    "PAIR_WEIGHT_NOTE",
]

PAIR_WEIGHT_NOTE = "pair weights: independence approximation 1/(pi_j|g * pi_k|g)"


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite nodes and weights for integrals against a normal kernel.

    ``probs`` are the weights divided by sqrt(pi); they sum to 1, so
    integrating the constant 1 against the normal density is exact.
    """

    order: int
    nodes: np.ndarray
    probs: np.ndarray

    @classmethod
    def gauss_hermite(cls, order: int = 21) -> "QuadratureRule":
        if order < 1:
            raise ConfigError("quadrature order must be >= 1")
        nodes, weights = np.polynomial.hermite.hermgauss(order)
        return cls(order=order, nodes=nodes, probs=weights / np.sqrt(np.pi))


@dataclass(frozen=True)
class MleResult:
    beta: np.ndarray
    sigma_u2: float
    converged: bool
    objective: float
    n_iter: int
    notes: str = ""

    @property
    def estimates(self) -> dict:
        out = {f"beta{j}": float(b) for j, b in enumerate(self.beta)}
        out["sigma_u2"] = float(self.sigma_u2)
        return out


def _require_direct(sample: SurveySample) -> None:
    if not sample.is_direct:
        raise SchemeMismatchError(
            "integrated objectives need group and conditional weights; "
            "draw the sample from a direct (two-stage) design"
        )


def _unit_log_poisson(y: np.ndarray, eta: np.ndarray, u: np.ndarray) -> np.ndarray:
    """log Poisson(y | exp(eta + u)) for unit rows against node columns."""
    lam_log = eta[:, None] + u[None, :]
    return y[:, None] * lam_log - np.exp(np.clip(lam_log, None, 700.0)) - gammaln(y + 1.0)[:, None]


def _split_params(params: np.ndarray):
    params = np.asarray(params, dtype=float)
    return params[:-1], float(params[-1])


def mpml_objective(
    params: np.ndarray,
    sample: SurveySample,
    weights: WeightSet,
    rule: QuadratureRule | None = None,
) -> float:
    """Weighted sum over groups of log integrated within-group likelihoods.

    params = (beta..., log_sigma_u).  Each group contributes
    w_g * log int exp(sum_j w_{j|g} logPois(y_j | u)) N(u | 0, sigma^2) du,
    evaluated in log-sum-exp form so extreme nodes cannot overflow.
    """
    _require_direct(sample)
    rule = rule if rule is not None else QuadratureRule.gauss_hermite()
    beta, log_s = _split_params(params)
    sigma = np.exp(log_s)
    X = design_matrix(sample)
    eta = X @ beta
    u = np.sqrt(2.0) * sigma * rule.nodes
    lp = _unit_log_poisson(sample.y, eta, u) * weights.unit_w[:, None]
    G = sample.n_groups
    inner = np.zeros((G, rule.order))
    np.add.at(inner, sample.group, lp)
    log_int = logsumexp(inner + np.log(rule.probs)[None, :], axis=1)
    return float(np.sum(weights.group_w * log_int))


def _pair_weights(sample: SurveySample, members: np.ndarray) -> np.ndarray:
    """Independence-approximation pair weights, normalized to the pair count."""
    pic = sample.pi_cond[members]
    inv = 1.0 / pic
    raw = np.outer(inv, inv)
    iu = np.triu_indices(len(members), k=1)
    w = raw[iu]
    n_pairs = len(w)
    return w * (n_pairs / w.sum())


def pairwise_objective(
    params: np.ndarray,
    sample: SurveySample,
    weights: WeightSet,
    rule: QuadratureRule | None = None,
) -> float:
    """Pair-integrated composite log-likelihood.

    Each within-group pair contributes its own integrated bivariate term
    weighted by the pair weight; groups with a single sampled unit
    contribute their integrated single-unit term so no data are discarded.
    """
    _require_direct(sample)
    rule = rule if rule is not None else QuadratureRule.gauss_hermite()
    beta, log_s = _split_params(params)
    sigma = np.exp(log_s)
    X = design_matrix(sample)
    eta = X @ beta
    u = np.sqrt(2.0) * sigma * rule.nodes
    lp = _unit_log_poisson(sample.y, eta, u)
    log_probs = np.log(rule.probs)

    total = 0.0
    order = np.argsort(sample.group, kind="stable")
    bounds = np.searchsorted(sample.group[order], np.arange(sample.n_groups + 1))
    for g in range(sample.n_groups):
        members = order[bounds[g]:bounds[g + 1]]
        w_g = weights.group_w[g]
        if len(members) == 1:
            term = logsumexp(weights.unit_w[members[0]] * lp[members[0]] + log_probs)
            total += w_g * term
            continue
        pair_w = _pair_weights(sample, members)
        lpm = lp[members]
        iu, ju = np.triu_indices(len(members), k=1)
        pair_nodes = lpm[iu] + lpm[ju]  # (n_pairs, order)
        terms = logsumexp(pair_nodes + log_probs[None, :], axis=1)
        total += w_g * float(np.dot(pair_w, terms))
    return float(total)


def fit_mle(
    objective: str,
    sample: SurveySample,
    weights: WeightSet,
    rule: QuadratureRule | None = None,
    starts: list[np.ndarray] | None = None,
) -> MleResult:
    """Maximize an integrated objective over (beta, log sigma_u).

    Derivative-free simplex search from each start, then a quasi-Newton
    polish with numerical gradients; the best final objective wins.
    ``objective`` selects "marginal" or "pair".
    """
    from scipy.optimize import minimize

    fn = {"marginal": mpml_objective, "pair": pairwise_objective}.get(objective)
    if fn is None:
        raise ConfigError(f"objective must be 'marginal' or 'pair', got {objective!r}")
    rule = rule if rule is not None else QuadratureRule.gauss_hermite()
    p = design_matrix(sample).shape[1]
    if starts is None:
        base = np.zeros(p + 1)
        base[0] = np.log(np.mean(sample.y) + 0.1)
        base[-1] = np.log(0.5)
        starts = [
            base,
            base + np.concatenate([np.full(p, 0.5), [1.0]]),
            base - np.concatenate([np.full(p, 0.5), [1.5]]),
        ]
    if not starts:
        raise ConfigError("need at least one start point")

    def neg(params):
        return -fn(params, sample, weights, rule)

    best = None
    best_success = False
    total_iter = 0
    for s0 in starts:
        r1 = minimize(neg, np.asarray(s0, dtype=float), method="Nelder-Mead",
                      options={"xatol": 1e-7, "fatol": 1e-9, "maxiter": 2000})
        r2 = minimize(neg, r1.x, method="L-BFGS-B")
        total_iter += int(r1.nit) + int(r2.nit)
        cand = r2 if r2.fun <= r1.fun else r1
        if best is None or cand.fun < best.fun:
            best = cand
            best_success = bool(cand.success and np.isfinite(cand.fun))
    converged = best_success
    beta = best.x[:-1]
    return MleResult(
        beta=beta,
        sigma_u2=float(np.exp(2.0 * best.x[-1])),
        converged=converged,
        objective=float(-best.fun),
        n_iter=total_iter,
        notes=PAIR_WEIGHT_NOTE if objective == "pair" else "",
    )
