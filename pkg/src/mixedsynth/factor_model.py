"""Gibbs sampler for a Gaussian copula factor model of mixed data.

Latent rows follow z_i = alpha + Lambda eta_i + eps_i with eps_i ~
N(0, diag(sigma2)).  Numeric columns constrain their latent column to
respect the observed ranks (cells with strictly smaller observed values keep
strictly smaller latents); each categorical column owns a block of k latent
columns constrained to its diagonal orthant: positive exactly at the observed
level, negative elsewhere.  Intercepts are free only on categorical block
columns; rank columns carry no location information.

Loadings get the multiplicative-gamma shrinkage prior: lambda_{jh} ~
N(0, 1/(phi_{jh} tau_h)), phi_{jh} ~ Ga(nu/2, nu/2), tau_h = prod_{l<=h}
delta_l with delta_1 ~ Ga(a1, 1), delta_h ~ Ga(a2, 1).

A full sweep updates, in order: loadings, idiosyncratic variances, factors,
local shrinkage, global shrinkage, intercepts, latent matrix.  The latent
update is column-major; within a rank column, cells are updated in ascending
observed-value groups (cells sharing an observed value are conditionally
independent, so each group is one exact Gibbs block).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky, solve_triangular
from scipy.special import ndtri

from .errors import NumericalOverflowError
from .schema import ExpandedLayout, Kind, MixedDataset, expand_layout
from .truncated import truncnorm_sample

__all__ = [
    "Hyperparams",
    "ChainConfig",
    "FactorModelPlan",
    "FactorState",
    "PosteriorDraws",
    "default_n_factors",
    "compute_bounds",
    "init_state",
    "gibbs_sweep",
    "update_rank_column",
    "run_chain",
]

logger = logging.getLogger(__name__)

MAX_FACTORS = 15


@dataclass(frozen=True)
class Hyperparams:
    """Prior settings; defaults follow common shrinkage-factor practice."""

    a_sigma: float = 1.0
    b_sigma: float = 1.0
    nu: float = 3.0
    a1: float = 2.0
    a2: float = 3.0


@dataclass(frozen=True)
class ChainConfig:
    iters: int = 15000
    burn_in: int = 9000
    thin: int = 10
    n_factors: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.burn_in >= self.iters:
            raise ValueError("burn_in must be smaller than iters")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")


def default_n_factors(p_star: int) -> int:
    return min(MAX_FACTORS, math.ceil(p_star / 2))


@dataclass
class _RankCol:
    latent: int
    order: np.ndarray  # cell indices sorted by observed value (stable)
    starts: np.ndarray  # group start offsets into order


@dataclass
class _CatCol:
    offset: int
    k: int
    codes: np.ndarray


@dataclass
class FactorModelPlan:
    """Preprocessed constraint structure for one dataset."""

    layout: ExpandedLayout
    n: int
    rank_cols: list
    cat_cols: list
    alpha_mask: np.ndarray

    @classmethod
    def from_dataset(cls, ds: MixedDataset) -> "FactorModelPlan":
        layout = expand_layout(ds)
        rank_cols, cat_cols = [], []
        for col, off in zip(layout.columns, layout.offsets):
            vals = ds.columns[col.name]
            if col.kind is Kind.CATEGORICAL:
                cat_cols.append(_CatCol(off, col.k, vals))
            else:
                order = np.argsort(vals, kind="stable")
                sorted_vals = vals[order]
                if order.size:
                    starts = np.flatnonzero(
                        np.concatenate(([True], sorted_vals[1:] != sorted_vals[:-1]))
                    )
                else:
                    starts = np.empty(0, dtype=np.int64)
                rank_cols.append(_RankCol(off, order, starts))
        return cls(layout, ds.n, rank_cols, cat_cols, layout.cat_latent_mask())


@dataclass
class FactorState:
    z: np.ndarray  # (n, p_star)
    lam: np.ndarray  # (p_star, k)
    eta: np.ndarray  # (n, k)
    sigma2: np.ndarray  # (p_star,)
    phi: np.ndarray  # (p_star, k)
    delta: np.ndarray  # (k,)
    alpha: np.ndarray  # (p_star,)
    rng: np.random.Generator

    @property
    def tau(self) -> np.ndarray:
        return np.cumprod(self.delta)

    def copy(self) -> "FactorState":
        return FactorState(
            self.z.copy(),
            self.lam.copy(),
            self.eta.copy(),
            self.sigma2.copy(),
            self.phi.copy(),
            self.delta.copy(),
            self.alpha.copy(),
            self.rng,
        )


@dataclass
class PosteriorDraws:
    """Retained draws on the correlation scale: C and rescaled intercepts."""

    corr: np.ndarray  # (n_draws, p_star, p_star)
    alpha: np.ndarray  # (n_draws, p_star)
    latent_names: tuple[str, ...]
    n_factors: int

    @property
    def n_draws(self) -> int:
        return self.corr.shape[0]

    @property
    def p_star(self) -> int:
        return self.corr.shape[1]


def compute_bounds(values: np.ndarray, z_col: np.ndarray):
    """Per-cell truncation interval for a rank column given current latents.

    lower_i = max{ z_l : values_l < values_i }, upper_i = min{ z_l :
    values_l > values_i }; infinities where no such cell exists.
    """
    values = np.asarray(values)
    z_col = np.asarray(z_col, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    sv = values[order]
    starts = np.flatnonzero(np.concatenate(([True], sv[1:] != sv[:-1])))
    gmax = np.maximum.reduceat(z_col[order], starts)
    gmin = np.minimum.reduceat(z_col[order], starts)
    prefix = np.concatenate(([-np.inf], np.maximum.accumulate(gmax)[:-1]))
    suffix = np.concatenate((np.minimum.accumulate(gmin[::-1])[::-1][1:], [np.inf]))
    n_groups = starts.size
    ends = np.append(starts[1:], order.size)
    group_of = np.empty(order.size, dtype=np.int64)
    for g in range(n_groups):
        group_of[order[starts[g] : ends[g]]] = g
    return prefix[group_of], suffix[group_of]


def init_state(
    plan: FactorModelPlan,
    n_factors: int,
    hyper: Hyperparams,
    rng: np.random.Generator,
) -> FactorState:
    """Draw parameters from their priors; start latents at a feasible point.

    Rank columns start at normal scores of rescaled mid-ranks (ties share a
    value, which is feasible because only strictly distinct observations are
    ordered); categorical blocks start at +0.5 on the observed level and -0.5
    elsewhere.
    """
    n, p_star, k = plan.n, plan.layout.p_star, n_factors
    z = np.zeros((n, p_star))
    for rc in plan.rank_cols:
        # mid-ranks from the stable sort order
        ends = np.append(rc.starts[1:], n)
        ranks = np.empty(n)
        for s, e in zip(rc.starts, ends):
            ranks[rc.order[s:e]] = 0.5 * (s + 1 + e)  # average of ranks s+1..e
        z[:, rc.latent] = ndtri(ranks / (n + 1.0))
    for cc in plan.cat_cols:
        blk = z[:, cc.offset : cc.offset + cc.k]
        blk.fill(-0.5)
        blk[np.arange(n), cc.codes] = 0.5
    delta = np.empty(k)
    delta[0] = rng.gamma(hyper.a1, 1.0)
    if k > 1:
        delta[1:] = rng.gamma(hyper.a2, 1.0, size=k - 1)
    tau = np.cumprod(delta)
    phi = rng.gamma(hyper.nu / 2.0, 2.0 / hyper.nu, size=(p_star, k))
    lam = rng.standard_normal((p_star, k)) / np.sqrt(phi * tau)
    sigma2 = 1.0 / rng.gamma(hyper.a_sigma, 1.0 / hyper.b_sigma, size=p_star)
    eta = rng.standard_normal((n, k))
    alpha = np.where(plan.alpha_mask, rng.standard_normal(p_star), 0.0)
    return FactorState(z, lam, eta, sigma2, phi, delta, alpha, rng)


def update_loadings(state: FactorState, hyper: Hyperparams) -> None:
    """lambda_j | - ~ N_k per row with MGP prior precision."""
    k = state.lam.shape[1]
    tau = state.tau
    ete = state.eta.T @ state.eta
    resid = state.z - state.alpha
    etr = state.eta.T @ resid  # (k, p_star)
    for j in range(state.lam.shape[0]):
        prec = np.diag(state.phi[j] * tau) + ete / state.sigma2[j]
        low = cholesky(prec, lower=True)
        mean = cho_solve((low, True), etr[:, j] / state.sigma2[j])
        state.lam[j] = mean + solve_triangular(
            low.T, state.rng.standard_normal(k), lower=False
        )


def update_idio_var(state: FactorState, hyper: Hyperparams) -> None:
    n = state.z.shape[0]
    resid = state.z - state.alpha - state.eta @ state.lam.T
    ss = np.einsum("ij,ij->j", resid, resid)
    shape = hyper.a_sigma + 0.5 * n
    state.sigma2 = 1.0 / state.rng.gamma(shape, 1.0 / (hyper.b_sigma + 0.5 * ss))


def update_factors(state: FactorState, hyper: Hyperparams) -> None:
    """eta_i | - ~ N_k((I + L'S^-1 L)^-1 L'S^-1 (z_i - alpha), (I + L'S^-1 L)^-1)."""
    k = state.lam.shape[1]
    m = state.lam / state.sigma2[:, None]  # Sigma^-1 Lambda
    prec = np.eye(k) + state.lam.T @ m
    cf = cho_factor(prec, lower=True)
    cov = cho_solve(cf, np.eye(k))
    cov = 0.5 * (cov + cov.T)
    means = (state.z - state.alpha) @ m @ cov.T
    root = cholesky(cov, lower=True)
    state.eta = means + state.rng.standard_normal(state.eta.shape) @ root.T


def update_local_shrink(state: FactorState, hyper: Hyperparams) -> None:
    rate = 0.5 * (hyper.nu + state.tau * state.lam**2)
    state.phi = state.rng.gamma(0.5 * (hyper.nu + 1.0), 1.0 / rate)


def update_global_shrink(state: FactorState, hyper: Hyperparams) -> None:
    """delta chain with leave-one-out products tau_l^(h) = prod_{t<=l, t!=h} delta_t."""
    p_star, k = state.lam.shape
    w = np.einsum("jl,jl->l", state.phi, state.lam**2)  # sum_j phi_jl lam_jl^2
    for h in range(k):
        masked = np.where(np.arange(k) == h, 1.0, state.delta)
        tau_loo = np.cumprod(masked)
        shape = (hyper.a1 if h == 0 else hyper.a2) + 0.5 * p_star * (k - h)
        rate = 1.0 + 0.5 * np.sum(tau_loo[h:] * w[h:])
        state.delta[h] = state.rng.gamma(shape, 1.0 / rate)


def update_intercepts(state: FactorState, plan: FactorModelPlan) -> None:
    """alpha_j | - for categorical block columns only; N(0,1) prior."""
    if not plan.cat_cols:
        return
    n = state.z.shape[0]
    fit = state.z - state.eta @ state.lam.T
    prec = n / state.sigma2 + 1.0
    mean = fit.sum(axis=0) / state.sigma2 / prec
    draw = mean + state.rng.standard_normal(state.alpha.size) / np.sqrt(prec)
    state.alpha = np.where(plan.alpha_mask, draw, 0.0)


def update_rank_column(
    rng: np.random.Generator,
    z_col: np.ndarray,
    mu: np.ndarray,
    sd: float,
    order: np.ndarray,
    starts: np.ndarray,
) -> None:
    """Odd/even blocked truncated-normal refresh of one rank column, in place.

    Groups of equal observed values are mutually unconstrained and, in a
    feasible state, bounded only by the extremes of the two adjacent groups.
    Alternating over group parity therefore gives two conditionally
    independent blocks, each drawn in a single vectorized pass.
    """
    n_groups = starts.size
    if not n_groups:
        return
    sizes = np.diff(np.append(starts, order.size))
    gid = np.empty(order.size, dtype=np.int64)
    gid[order] = np.repeat(np.arange(n_groups), sizes)
    for side in (0, 1):
        zo = z_col[order]
        gmax = np.maximum.reduceat(zo, starts)
        gmin = np.minimum.reduceat(zo, starts)
        lo = np.concatenate(([-np.inf], gmax[:-1]))
        hi = np.concatenate((gmin[1:], [np.inf]))
        m = (gid & 1) == side
        g = gid[m]
        z_col[m] = truncnorm_sample(rng, mu[m], sd, lo[g], hi[g])


def update_latent(state: FactorState, plan: FactorModelPlan) -> None:
    """Truncated-normal refresh of Z, column-major: rank columns via the
    parity-blocked group scheme, categorical blocks via their sign intervals."""
    fit = state.alpha + state.eta @ state.lam.T  # (n, p_star)
    sd = np.sqrt(state.sigma2)
    rng = state.rng
    for rc in plan.rank_cols:
        c = rc.latent
        update_rank_column(rng, state.z[:, c], fit[:, c], sd[c], rc.order, rc.starts)
    for cc in plan.cat_cols:
        for lvl in range(cc.k):
            c = cc.offset + lvl
            pos = cc.codes == lvl
            lo = np.where(pos, 0.0, -np.inf)
            hi = np.where(pos, np.inf, 0.0)
            state.z[:, c] = truncnorm_sample(rng, fit[:, c], sd[c], lo, hi)


def gibbs_sweep(state: FactorState, plan: FactorModelPlan, hyper: Hyperparams) -> None:
    update_loadings(state, hyper)
    update_idio_var(state, hyper)
    update_factors(state, hyper)
    update_local_shrink(state, hyper)
    update_global_shrink(state, hyper)
    update_intercepts(state, plan)
    update_latent(state, plan)


def rescale_draw(state: FactorState):
    """Map (Lambda, sigma2, alpha) to the correlation scale used for synthesis."""
    omega = state.lam @ state.lam.T + np.diag(state.sigma2)
    s = np.sqrt(np.diag(omega))
    corr = omega / np.outer(s, s)
    np.fill_diagonal(corr, 1.0)
    return corr, state.alpha / s


def check_feasible(state: FactorState, plan: FactorModelPlan) -> bool:
    """True iff Z satisfies every rank ordering and orthant sign pattern."""
    for rc in plan.rank_cols:
        zc = state.z[:, rc.latent]
        gmax = np.maximum.reduceat(zc[rc.order], rc.starts)
        gmin = np.minimum.reduceat(zc[rc.order], rc.starts)
        if gmax.size > 1 and np.any(gmax[:-1] >= gmin[1:]):
            return False
    for cc in plan.cat_cols:
        blk = state.z[:, cc.offset : cc.offset + cc.k]
        pos = blk[np.arange(plan.n), cc.codes]
        if np.any(pos <= 0):
            return False
        neg = blk.copy()
        neg[np.arange(plan.n), cc.codes] = -1.0
        if np.any(neg >= 0):
            return False
    return True


def run_chain(
    ds: MixedDataset,
    config: ChainConfig,
    hyper: Hyperparams = Hyperparams(),
    rng: np.random.Generator | None = None,
) -> PosteriorDraws:
    """Run the full chain and retain thinned post-burn-in correlation draws."""
    plan = FactorModelPlan.from_dataset(ds)
    k = config.n_factors or default_n_factors(plan.layout.p_star)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    state = init_state(plan, k, hyper, rng)
    corrs, alphas = [], []
    report_every = max(1, config.iters // 10)
    for it in range(config.iters):
        gibbs_sweep(state, plan, hyper)
        if not np.all(np.isfinite(state.z)):
            raise NumericalOverflowError(f"latent matrix non-finite at iteration {it}")
        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            corr, alpha_t = rescale_draw(state)
            corrs.append(corr)
            alphas.append(alpha_t)
        if (it + 1) % report_every == 0 and logger.isEnabledFor(logging.INFO):
            corr, _ = rescale_draw(state)
            off = np.abs(corr[~np.eye(corr.shape[0], dtype=bool)])
            logger.info(
                "iteration %d/%d  mean|offdiag C| = %.4f",
                it + 1,
                config.iters,
                float(off.mean()) if off.size else 0.0,
            )
    return PosteriorDraws(
        np.asarray(corrs),
        np.asarray(alphas),
        tuple(plan.layout.latent_names()),
        k,
    )
