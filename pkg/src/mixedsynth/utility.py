"""Utility metrics comparing confidential data against synthetic releases.

The analysis-specific pieces (regression spec, horseshoe fits, combining
rules) feed the interval-overlap and coefficient-MSE metrics; the global
pMSE discriminator and the aggregated score U are analysis-free.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import expit

from .errors import (
    DegenerateResponseError,
    MismatchedCoefficientSetsError,
    NonNumericResponseError,
    RankDeficientError,
    SchemaMismatchError,
    SeparationWarning,
    UnknownColumnError,
    ZeroPosteriorSDError,
    ZeroWidthIntervalError,
)
from .schema import Kind, MixedDataset

__all__ = [
    "RegressionSpec",
    "CoefficientSummary",
    "HorseshoeConfig",
    "UtilityReport",
    "design_matrix",
    "fit_bayes_lm",
    "pool_synthetic",
    "cio",
    "coef_mse",
    "pmse",
    "aggregated_utility",
    "evaluate_utility",
    "release_utility",
]


@dataclass(frozen=True)
class RegressionSpec:
    """Which regression the utility comparison is based on."""

    response: str
    predictors: tuple
    interactions: tuple = ()
    standardize: bool = True

    def __post_init__(self):
        object.__setattr__(self, "predictors", tuple(self.predictors))
        object.__setattr__(
            self, "interactions", tuple(tuple(pair) for pair in self.interactions)
        )
        for a, b in self.interactions:
            if a not in self.predictors or b not in self.predictors:
                raise ValueError(
                    f"interaction ({a},{b}) references undeclared predictors"
                )


@dataclass(frozen=True)
class CoefficientSummary:
    name: str
    point: float
    sd: float
    lower: float
    upper: float


@dataclass(frozen=True)
class HorseshoeConfig:
    iters: int = 10000
    burn_in: int = 5000
    seed: int = 0
    # fixing the global scale large turns shrinkage off (flat-prior check)
    fix_global_scale: float | None = None

    def __post_init__(self):
        if not 0 <= self.burn_in < self.iters:
            raise ValueError("need 0 <= burn_in < iters")


def _encoded_columns(ds: MixedDataset, name: str, standardize: bool):
    """Design columns and names for one predictor."""
    cs = ds.col_schema(name)
    vals = ds.columns[name]
    if cs.kind is Kind.CATEGORICAL:
        cols = [
            (vals == code).astype(np.float64) for code in range(1, len(cs.levels))
        ]
        names = [f"{name}={lvl}" for lvl in cs.levels[1:]]
        return cols, names
    x = vals.astype(np.float64)
    if cs.kind is not Kind.BINARY and standardize:
        sd = x.std(ddof=1) if len(x) > 1 else 0.0
        x = (x - x.mean()) / sd if sd > 0 else x - x.mean()
    return [x], [name]


def design_matrix(ds: MixedDataset, spec: RegressionSpec):
    """Intercept + main effects + declared pairwise interactions.

    Categorical predictors enter as indicator sets with the first level
    dropped; numeric predictors are standardized when the spec asks for it.
    Returns (X, coefficient names, response vector).
    """
    for name in (spec.response,) + spec.predictors:
        if name not in ds.columns:
            raise UnknownColumnError(f"column '{name}' not in dataset")
    rs = ds.col_schema(spec.response)
    if rs.kind is Kind.CATEGORICAL:
        raise NonNumericResponseError(
            f"response '{spec.response}' must be numeric, got categorical"
        )
    y = ds.columns[spec.response].astype(np.float64)
    if np.ptp(y) == 0:
        raise DegenerateResponseError(f"response '{spec.response}' is constant")

    cols = [np.ones(ds.n)]
    names = ["(intercept)"]
    encoded = {}
    for name in spec.predictors:
        c, nm = _encoded_columns(ds, name, spec.standardize)
        encoded[name] = (c, nm)
        cols += c
        names += nm
    for a, b in spec.interactions:
        for ca, na in zip(*encoded[a]):
            for cb, nb in zip(*encoded[b]):
                cols.append(ca * cb)
                names.append(f"{na}:{nb}")
    return np.column_stack(cols), names, y


def _beta_draw(rng, xtx, xty, prior_prec, sigma2):
    a = xtx / sigma2 + np.diag(prior_prec)
    try:
        low = cho_factor(a, lower=True)
    except np.linalg.LinAlgError:
        try:
            low = cho_factor(a + 1e-8 * np.eye(a.shape[0]), lower=True)
        except np.linalg.LinAlgError:
            raise RankDeficientError(
                "design matrix rank deficient even after ridge jitter"
            ) from None
    mean = cho_solve(low, xty / sigma2)
    z = rng.standard_normal(a.shape[0])
    # solving L' u = z gives a draw with covariance A^{-1}
    u = solve_triangular(low[0], z, lower=True, trans="T")
    return mean + u


def fit_bayes_lm(
    ds: MixedDataset, spec: RegressionSpec, config: HorseshoeConfig = HorseshoeConfig()
) -> list[CoefficientSummary]:
    """Gaussian linear model with horseshoe shrinkage on the slopes.

    Uses the inverse-gamma auxiliary representation of the half-Cauchy
    scales, so every conditional is conjugate.  The intercept is left
    unshrunk.  Summaries use posterior means, sds, and equal-tailed 95%
    intervals over the retained draws.
    """
    x, names, y = design_matrix(ds, spec)
    n, p = x.shape
    rng = np.random.default_rng(config.seed)
    xtx = x.T @ x
    xty = x.T @ y

    shrunk = np.arange(1, p)  # everything but the intercept
    lam2 = np.ones(p - 1)
    nu_aux = np.ones(p - 1)
    tau2 = 1.0
    xi_aux = 1.0
    fixed = config.fix_global_scale is not None
    if fixed:
        tau2 = float(config.fix_global_scale) ** 2
    sigma2 = max(float(y.var()), 1e-12)
    beta = np.zeros(p)

    kept = np.empty((config.iters - config.burn_in, p))
    for it in range(config.iters):
        prior_prec = np.empty(p)
        prior_prec[0] = 1e-6 / sigma2
        prior_prec[shrunk] = 1.0 / (lam2 * tau2 * sigma2)
        beta = _beta_draw(rng, xtx, xty, prior_prec, sigma2)

        resid = y - x @ beta
        scaled = beta[shrunk] ** 2 / (lam2 * tau2)
        rate = 0.5 * (resid @ resid + scaled.sum() + 1e-6 * beta[0] ** 2)
        sigma2 = rate / rng.gamma(0.5 * (n + p))

        if not fixed:
            lam2 = (1.0 / nu_aux + beta[shrunk] ** 2 / (2 * tau2 * sigma2)) / rng.gamma(
                1.0, size=p - 1
            )
            nu_aux = (1.0 + 1.0 / lam2) / rng.gamma(1.0, size=p - 1)
            tau2 = (1.0 / xi_aux + (beta[shrunk] ** 2 / lam2).sum() / (2 * sigma2)) / (
                rng.gamma(0.5 * p)
            )
            xi_aux = (1.0 + 1.0 / tau2) / rng.gamma(1.0)
        if it >= config.burn_in:
            kept[it - config.burn_in] = beta

    lo, hi = np.percentile(kept, [2.5, 97.5], axis=0)
    return [
        CoefficientSummary(
            names[j],
            float(kept[:, j].mean()),
            float(kept[:, j].std(ddof=1)),
            float(lo[j]),
            float(hi[j]),
        )
        for j in range(p)
    ]


def pool_synthetic(estimates: list[list[CoefficientSummary]]) -> list[CoefficientSummary]:
    """Combine per-dataset fits: q_bar, T = u_bar + b_m/m, normal intervals."""
    m = len(estimates)
    if m < 2:
        raise ValueError("pooling requires estimates from at least 2 datasets")
    names = [c.name for c in estimates[0]]
    for est in estimates[1:]:
        if [c.name for c in est] != names:
            raise MismatchedCoefficientSetsError(
                "per-dataset fits disagree on the coefficient set"
            )
    out = []
    for j, name in enumerate(names):
        points = np.array([est[j].point for est in estimates])
        within = np.array([est[j].sd ** 2 for est in estimates])
        q_bar = points.mean()
        b_m = points.var(ddof=1)
        t_var = within.mean() + b_m / m
        half = 1.96 * np.sqrt(t_var)
        out.append(
            CoefficientSummary(
                name, float(q_bar), float(np.sqrt(t_var)), float(q_bar - half),
                float(q_bar + half),
            )
        )
    return out


def cio(obs: tuple, syn: tuple) -> float:
    """95% interval overlap; negative when the intervals are disjoint."""
    l_o, u_o = obs
    l_s, u_s = syn
    if not (u_o > l_o) or not (u_s > l_s):
        raise ZeroWidthIntervalError("interval endpoints must satisfy l < u")
    over = min(u_o, u_s) - max(l_o, l_s)
    return 0.5 * (over / (u_o - l_o) + over / (u_s - l_s))


def coef_mse(obs: CoefficientSummary, syn_point: float) -> float:
    """Squared point-estimate gap in units of the confidential posterior var."""
    if obs.sd <= 0:
        raise ZeroPosteriorSDError(f"coefficient '{obs.name}' has zero posterior sd")
    return float((obs.point - syn_point) ** 2 / obs.sd**2)


def _pmse_design(conf: MixedDataset, syn: MixedDataset):
    if syn.schema != conf.schema:
        raise SchemaMismatchError("synthetic schema differs from confidential schema")
    cols = [np.ones(conf.n + syn.n)]
    for cs in conf.schema:
        both = np.concatenate([conf.columns[cs.name], syn.columns[cs.name]])
        if cs.kind is Kind.CATEGORICAL:
            for code in range(1, len(cs.levels)):
                cols.append((both == code).astype(np.float64))
        else:
            x = both.astype(np.float64)
            sd = x.std(ddof=1)
            cols.append((x - x.mean()) / sd if sd > 0 else x * 0.0)
    x = np.column_stack(cols)
    # drop constant non-intercept columns so the IRLS normal matrix stays sane
    keep = np.concatenate([[True], np.ptp(x[:, 1:], axis=0) > 0])
    return x[:, keep]


def _irls(x, s, ridge):
    beta = np.zeros(x.shape[1])
    for _ in range(60):
        eta = np.clip(x @ beta, -30, 30)
        p_hat = expit(eta)
        w = np.maximum(p_hat * (1 - p_hat), 1e-10)
        z = eta + (s - p_hat) / w
        a = (x.T * w) @ x
        if ridge:
            a = a + ridge * np.eye(x.shape[1])
        new = np.linalg.solve(a, (x.T * w) @ z)
        step = np.max(np.abs(new - beta))
        beta = new
        if step < 1e-10:
            return beta, True
    return beta, False


def pmse(conf: MixedDataset, syn: MixedDataset) -> float:
    """Propensity-score MSE of a main-effects logistic discriminator.

    0 means the discriminator cannot tell synthetic rows from confidential
    ones; 0.25 is the perfect-separation ceiling at equal pool sizes.
    """
    x = _pmse_design(conf, syn)
    s = np.concatenate([np.zeros(conf.n), np.ones(syn.n)])
    c = syn.n / (conf.n + syn.n)
    beta, converged = _irls(x, s, ridge=0.0)
    p_hat = expit(np.clip(x @ beta, -30, 30))
    if not converged or np.any(p_hat < 1e-8) or np.any(p_hat > 1 - 1e-8):
        warnings.warn(
            "separation detected in the propensity fit; refitting with a "
            "ridge penalty of 1e-4",
            SeparationWarning,
            stacklevel=2,
        )
        beta, _ = _irls(x, s, ridge=1e-4)
        p_hat = expit(np.clip(x @ beta, -30, 30))
    return float(np.mean((p_hat - c) ** 2))


def aggregated_utility(cio_bar: float, mse_bar: float, pmse_value: float) -> float:
    """U = (CIO-bar + (1 - MSE-bar) + (1 - 4 pMSE)) / 3, maximum 1."""
    for v in (cio_bar, mse_bar, pmse_value):
        if not np.isfinite(v):
            raise ValueError("aggregated utility inputs must be finite")
    return (cio_bar + (1.0 - mse_bar) + (1.0 - 4.0 * pmse_value)) / 3.0


@dataclass
class UtilityReport:
    coef_names: list
    cio_per_coef: dict
    mse_per_coef: dict
    cio_bar: float
    mse_bar: float
    pmse: float
    u: float
    obs_summaries: list = field(repr=False, default_factory=list)
    syn_summaries: list = field(repr=False, default_factory=list)

    def to_doc(self) -> dict:
        return {
            "cio_bar": self.cio_bar,
            "mse_bar": self.mse_bar,
            "pmse": self.pmse,
            "U": self.u,
            "per_coefficient": [
                {
                    "name": n,
                    "cio": self.cio_per_coef[n],
                    "mse": self.mse_per_coef[n],
                    "obs": vars(self.obs_summaries[j]),
                    "syn": vars(self.syn_summaries[j]),
                }
                for j, n in enumerate(self.coef_names)
            ],
        }


def _interval(c: CoefficientSummary):
    return (c.lower, c.upper)


def evaluate_utility(
    conf: MixedDataset,
    syn_list: list[MixedDataset],
    spec: RegressionSpec,
    config: HorseshoeConfig = HorseshoeConfig(),
) -> UtilityReport:
    """Full report for a release: pooled inference metrics plus mean pMSE.

    The slopes (not the intercept) enter CIO-bar and MSE-bar, matching a
    comparison of substantive regression coefficients.
    """
    obs = fit_bayes_lm(conf, spec, config)
    fits = [fit_bayes_lm(s, spec, config) for s in syn_list]
    pooled = pool_synthetic(fits) if len(fits) > 1 else fits[0]
    cio_per, mse_per = {}, {}
    for o, s in zip(obs, pooled):
        if o.name == "(intercept)":
            continue
        cio_per[o.name] = cio(_interval(o), _interval(s))
        mse_per[o.name] = coef_mse(o, s.point)
    names = list(cio_per)
    cio_bar = float(np.mean([cio_per[n] for n in names]))
    mse_bar = float(np.mean([mse_per[n] for n in names]))
    pmse_bar = float(np.mean([pmse(conf, s) for s in syn_list]))
    u = aggregated_utility(cio_bar, mse_bar, pmse_bar)
    keep_obs = [c for c in obs if c.name != "(intercept)"]
    keep_syn = [c for c in pooled if c.name != "(intercept)"]
    return UtilityReport(
        names, cio_per, mse_per, cio_bar, mse_bar, pmse_bar, u, keep_obs, keep_syn
    )


def release_utility(
    conf: MixedDataset,
    syn_list: list[MixedDataset],
    spec: RegressionSpec,
    config: HorseshoeConfig = HorseshoeConfig(),
):
    """Per-dataset utilities U_i and their mean U-bar for a release."""
    obs = fit_bayes_lm(conf, spec, config)
    us = []
    for s in syn_list:
        fit = fit_bayes_lm(s, spec, config)
        cios, mses = [], []
        for o, c in zip(obs, fit):
            if o.name == "(intercept)":
                continue
            cios.append(cio(_interval(o), _interval(c)))
            mses.append(coef_mse(o, c.point))
        us.append(
            aggregated_utility(
                float(np.mean(cios)), float(np.mean(mses)), pmse(conf, s)
            )
        )
    return float(np.mean(us)), us
