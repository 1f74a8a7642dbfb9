"""Adaptive Markov chain Monte Carlo for the weighted mixed model.

Blocked Metropolis-within-Gibbs: the fixed effects move as one block under
a multivariate normal proposal whose covariance is learned from the chain
history; each group effect and the log random-effect scale move as scalar
blocks whose step sizes adapt in batches toward a target acceptance rate.
All group effects are conditionally independent given (beta, sigma_u), so
their scalar updates are performed simultaneously with vectorized
arithmetic.  Adaptation freezes at the end of burn-in, after which the
chain is a fixed Markov kernel.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .exceptions import ConfigError, McmcDivergenceError
from .model import ModelSpec, ParamState, PoissonMixedTarget
from .rng import substream

__all__ = ["McmcConfig", "PosteriorDraws", "run_chain", "summarize"]


@dataclass(frozen=True)
class McmcConfig:
    n_iter: int = 3000
    burn_in: int = 1500
    thin: int = 1
    chains: int = 2
    seed: int = 0
    target_accept_scalar: float = 0.44
    target_accept_beta: float = 0.234
    adapt_window: int = 50

    def validate(self) -> None:
        if not self.burn_in < self.n_iter:
            raise ConfigError(f"burn_in={self.burn_in} must be < n_iter={self.n_iter}")
        if self.chains < 1:
            raise ConfigError("chains must be >= 1")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")

    @property
    def kept_per_chain(self) -> int:
        return (self.n_iter - self.burn_in) // self.thin

    def to_dict(self) -> dict:
        return {
            "n_iter": self.n_iter, "burn_in": self.burn_in, "thin": self.thin,
            "chains": self.chains, "seed": self.seed,
            "target_accept_scalar": self.target_accept_scalar,
            "target_accept_beta": self.target_accept_beta,
            "adapt_window": self.adapt_window,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "McmcConfig":
        return cls(**d)


@dataclass
class PosteriorDraws:
    """Retained draws (rows) over the named parameters (columns).

    Column order is beta..., u..., sigma_u2.  ``chain_length`` is the number
    of retained draws per chain; rows are grouped by chain.
    """

    draws: np.ndarray
    names: list[str]
    chain_length: int
    acceptance: dict = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0] // self.chain_length

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.names.index(name)]

    def mean(self, name: str) -> float:
        return float(self.column(name).mean())

    def to_csv(self) -> str:
        df = pd.DataFrame(self.draws, columns=self.names)
        return df.to_csv(index=False, lineterminator="\n")


def _split_rhat(seqs: np.ndarray) -> float:
    """Potential scale reduction over split half-sequences (rows = sequences)."""
    m, n = seqs.shape
    if n < 2:
        return np.nan
    means = seqs.mean(axis=1)
    W = float(np.mean(seqs.var(axis=1, ddof=1)))
    if W <= 1e-300:
        return 1.0
    var_means = float(means.var(ddof=1)) if m > 1 else 0.0
    vhat = (n - 1) / n * W + var_means
    return float(np.sqrt(vhat / W))


def _ess(seqs: np.ndarray) -> float:
    """Effective sample size via initial-positive-sequence autocorrelations."""
    m, n = seqs.shape
    if n < 4:
        return float(m * n)
    rho_sum = 0.0
    # average autocorrelations over chains, truncate at first negative pair
    x = seqs - seqs.mean(axis=1, keepdims=True)
    var = np.mean(np.sum(x**2, axis=1) / n)
    if var <= 1e-300:
        return float(m * n)
    t = 1
    while t < n - 2:
        rho_t = np.mean(np.sum(x[:, t:] * x[:, :-t], axis=1) / n) / var
        rho_t1 = np.mean(np.sum(x[:, t + 1:] * x[:, :-(t + 1)], axis=1) / n) / var
        if rho_t + rho_t1 < 0:
            break
        rho_sum += rho_t + rho_t1
        t += 2
    return float(m * n / (1.0 + 2.0 * rho_sum))


def summarize(draws: PosteriorDraws) -> pd.DataFrame:
    """Mean, sd, quantiles, split R-hat, ESS, one row per parameter."""
    if draws.draws.shape[0] == 0:
        raise ConfigError("cannot summarize empty draws")
    qs = [2.5, 25.0, 50.0, 75.0, 97.5]
    rows = []
    L = draws.chain_length
    half = L // 2
    for j, name in enumerate(draws.names):
        col = draws.draws[:, j]
        per_chain = col.reshape(draws.n_chains, L)
        if half >= 1:
            seqs = np.concatenate([per_chain[:, :half], per_chain[:, half:2 * half]], axis=0)
        else:
            seqs = per_chain
        q = np.percentile(col, qs)
        rows.append(
            {
                "parameter": name,
                "mean": float(col.mean()),
                "sd": float(col.std(ddof=1)) if col.shape[0] > 1 else 0.0,
                "q2.5": q[0], "q25": q[1], "q50": q[2], "q75": q[3], "q97.5": q[4],
                "rhat": _split_rhat(seqs),
                "ess": _ess(per_chain),
            }
        )
    return pd.DataFrame(rows)


class _BatchScale:
    """Batch step-size adaptation toward a target acceptance rate."""

    def __init__(self, shape, target: float, window: int, init: float = 0.5):
        self.log_step = np.full(shape, np.log(init))
        self.target = target
        self.window = window
        self.accepts = np.zeros(shape)
        self.count = 0
        self.batches = 0
        self.frozen = False

    @property
    def step(self):
        return np.exp(self.log_step)

    def update(self, accepted):
        if self.frozen:
            return
        self.accepts += accepted
        self.count += 1
        if self.count >= self.window:
            self.batches += 1
            delta = min(0.1, self.batches**-0.5)
            rate = self.accepts / self.count
            self.log_step += np.where(rate > self.target, delta, -delta)
            self.accepts[...] = 0.0
            self.count = 0


def _initial_state(target, rng, jitter: float) -> ParamState:
    beta = np.zeros(target.p)
    if np.all(target.X[:, 0] == 1.0):
        wbar = float(np.sum(target.wy) / np.sum(target.unit_w))
        beta[0] = np.log(wbar + 0.1)
    beta += jitter * rng.standard_normal(target.p)
    u = np.zeros(target.G)
    return ParamState(beta=beta, u=u, log_sigma_u=float(jitter * rng.standard_normal()))


def _run_single_chain(target: PoissonMixedTarget, config: McmcConfig, chain: int):
    rng = substream(config.seed, "mcmc", "chain", chain)
    state = _initial_state(target, rng, jitter=0.2 if config.chains > 1 else 0.0)
    logp = target.log_posterior(state)  # raises if the start is non-finite

    p, G = target.p, target.G
    c, t = target.linear_stats(state.beta)

    # beta block: adaptive covariance with scale adaptation
    beta_scale = _BatchScale((), config.target_accept_beta, config.adapt_window,
                             init=2.38 / np.sqrt(p))
    cov = np.eye(p) * 0.01
    chol = np.linalg.cholesky(cov)
    s1 = np.zeros(p)
    s2 = np.zeros((p, p))
    n_hist = 0

    u_scale = _BatchScale(G, config.target_accept_scalar, config.adapt_window, init=0.5)
    ls_scale = _BatchScale((), config.target_accept_scalar, config.adapt_window, init=0.5)

    kept = np.empty((config.kept_per_chain, p + G + 1))
    k = 0
    acc = {"beta": 0, "u": 0.0, "log_sigma_u": 0}
    n_post = 0

    for it in range(config.n_iter):
        adapting = it < config.burn_in

        # ---- fixed-effects block --------------------------------------
        cur_data = float(np.sum(target.group_data_loglik(c, t, state.u)))
        prop = state.beta + beta_scale.step * (chol @ rng.standard_normal(p))
        c_p, t_p = target.linear_stats(prop)
        data_p = float(np.sum(target.group_data_loglik(c_p, t_p, state.u)))
        log_alpha = (data_p + target.beta_log_prior(prop)) - (
            cur_data + target.beta_log_prior(state.beta)
        )
        accepted = np.log(rng.uniform()) < log_alpha
        if accepted:
            state.beta, c, t = prop, c_p, t_p
        beta_scale.update(float(accepted))
        if adapting:
            s1 += state.beta
            s2 += np.outer(state.beta, state.beta)
            n_hist += 1
            if n_hist % config.adapt_window == 0 and n_hist >= 2 * p:
                m = s1 / n_hist
                emp = s2 / n_hist - np.outer(m, m)
                cov = emp * (2.38**2 / p) + 1e-9 * np.eye(p)
                chol = np.linalg.cholesky(cov)
        if not adapting:
            acc["beta"] += int(accepted)

        if G > 0:
            # ---- group-effect scalar blocks, all groups at once -------
            u_prop = state.u + u_scale.step * rng.standard_normal(G)
            s2_cur = np.exp(2.0 * state.log_sigma_u)
            d_data = (target.sy_w * (u_prop - state.u)
                      - t * (np.exp(np.clip(u_prop, None, 700.0))
                             - np.exp(np.clip(state.u, None, 700.0))))
            d_prior = target.group_w * (state.u**2 - u_prop**2) / (2.0 * s2_cur)
            acc_u = np.log(rng.uniform(size=G)) < d_data + d_prior
            state.u = np.where(acc_u, u_prop, state.u)
            u_scale.update(acc_u.astype(float))
            if not adapting:
                acc["u"] += float(acc_u.mean())

            # ---- log sigma_u scalar block ------------------------------
            ls_prop = state.log_sigma_u + float(ls_scale.step) * rng.standard_normal()
            cur = (float(np.sum(target.re_log_prior(state.u, state.log_sigma_u)))
                   + target.scale_log_prior(state.log_sigma_u))
            new = (float(np.sum(target.re_log_prior(state.u, ls_prop)))
                   + target.scale_log_prior(ls_prop))
            accepted_ls = np.log(rng.uniform()) < new - cur
            if accepted_ls:
                state.log_sigma_u = ls_prop
            ls_scale.update(float(accepted_ls))
            if not adapting:
                acc["log_sigma_u"] += int(accepted_ls)

        if it == config.burn_in - 1:
            for sc in (beta_scale, u_scale, ls_scale):
                sc.frozen = True

        if not adapting:
            n_post += 1
            if (it - config.burn_in) % config.thin == 0 and k < kept.shape[0]:
                kept[k, :p] = state.beta
                kept[k, p:p + G] = state.u
                kept[k, -1] = np.exp(2.0 * state.log_sigma_u)
                k += 1

    if not np.all(np.isfinite(kept[:k])):
        raise McmcDivergenceError(f"non-finite draws retained; last state: {state}")
    rates = {key: v / max(n_post, 1) for key, v in acc.items()}
    return kept[:k], rates


def run_chain(
    target: PoissonMixedTarget, config: McmcConfig | None = None
) -> PosteriorDraws:
    """Sample the weighted model posterior; deterministic given config.seed."""
    config = config if config is not None else McmcConfig()
    config.validate()
    p, G = target.p, target.G
    names = [f"beta{j}" for j in range(p)] + [f"u{g + 1}" for g in range(G)] + ["sigma_u2"]
    all_draws = []
    rates = []
    for chain in range(config.chains):
        kept, r = _run_single_chain(target, config, chain)
        all_draws.append(kept)
        rates.append(r)
    acceptance = {
        key: float(np.mean([r[key] for r in rates])) for key in rates[0]
    }
    return PosteriorDraws(
        draws=np.concatenate(all_draws, axis=0),
        names=names,
        chain_length=config.kept_per_chain,
        acceptance=acceptance,
    )
