"""Marginal distribution estimation and inversion.

Ordinal/count/binary columns get rescaled empirical CDFs; continuous columns
get a Gaussian-kernel-smoothed CDF with Silverman bandwidth.  All CDFs carry
the n/(n+1) rescale so no observed value maps to a 0/1 probability (and hence
to an infinite latent Gaussian value).  Categorical columns are summarized by
their empirical level frequencies together with the joint cross-classification
table over all categorical variables, which is what synthesis draws from so
that observed categorical dependence (and structural zeros) survive.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import ConstantColumnWarning, EmptyColumnError, NoCategoricalColumnsError
from .schema import Kind, MixedDataset

__all__ = [
    "DiscreteMarginal",
    "ContinuousMarginal",
    "DegenerateMarginal",
    "CategoricalProbTable",
    "fit_marginal",
    "inverse_cdf",
    "fit_categorical_probs",
    "ks_distance",
]

_GRID_POINTS = 4097


@dataclass
class DiscreteMarginal:
    """Step CDF over the sorted unique observed values, rescaled by n/(n+1)."""

    values: np.ndarray
    counts: np.ndarray
    n: int = field(init=False)
    cum: np.ndarray = field(init=False)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.n = int(self.counts.sum())
        self.cum = np.cumsum(self.counts) / (self.n + 1.0)

    def cdf(self, x):
        idx = np.searchsorted(self.values, x, side="right")
        padded = np.concatenate(([0.0], self.cum))
        return padded[idx]

    def inverse(self, u):
        """Smallest support value v with F(v) >= u; u past the top clamps to max."""
        idx = np.searchsorted(self.cum, u, side="left")
        idx = np.minimum(idx, len(self.values) - 1)
        return self.values[idx]


@dataclass
class ContinuousMarginal:
    """Gaussian-kernel CDF with Silverman bandwidth; inverse clamped to the hull."""

    sample: np.ndarray
    bandwidth: float
    n: int = field(init=False)
    lo: float = field(init=False)
    hi: float = field(init=False)
    _grid_x: np.ndarray | None = field(default=None, repr=False)
    _grid_u: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.sample = np.sort(np.asarray(self.sample, dtype=np.float64))
        self.n = self.sample.size
        self.lo = float(self.sample[0])
        self.hi = float(self.sample[-1])

    def cdf(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        out = np.empty(x.size)
        # chunked so cdf over a long vector stays O(chunk * n) in memory
        step = max(1, 2**22 // max(self.n, 1))
        for s in range(0, x.size, step):
            blk = x[s : s + step, None]
            out[s : s + step] = ndtr((blk - self.sample[None, :]) / self.bandwidth).sum(
                axis=1
            )
        out /= self.n + 1.0
        return out if out.size > 1 else float(out[0])

    def _ensure_grid(self):
        if self._grid_x is None:
            self._grid_x = np.linspace(self.lo, self.hi, _GRID_POINTS)
            self._grid_u = np.asarray(self.cdf(self._grid_x))

    def inverse(self, u):
        """Numeric inverse on a fine grid; outputs clamp to [min, max] observed."""
        self._ensure_grid()
        return np.interp(u, self._grid_u, self._grid_x)


@dataclass
class DegenerateMarginal:
    """Point mass at a single value (constant column fallback)."""

    value: float
    n: int = 1

    def cdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.where(x >= self.value, self.n / (self.n + 1.0), 0.0)

    def inverse(self, u):
        return np.full_like(np.asarray(u, dtype=np.float64), self.value)


def _silverman_bandwidth(x: np.ndarray) -> float:
    n = x.size
    sd = float(np.std(x, ddof=1)) if n > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    iqr = float(q75 - q25)
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * n ** (-0.2)


def fit_marginal(column, kind: Kind):
    """Fit the marginal estimator appropriate to a (non-categorical) kind."""
    col = np.asarray(column)
    if col.size == 0:
        raise EmptyColumnError("cannot fit a marginal on an empty column")
    if kind is Kind.CATEGORICAL:
        raise ValueError("categorical columns use fit_categorical_probs")
    if kind is Kind.CONTINUOUS:
        col = col.astype(np.float64)
        h = _silverman_bandwidth(col)
        if h <= 0.0:
            warnings.warn(
                "constant continuous column: falling back to a point mass",
                ConstantColumnWarning,
                stacklevel=2,
            )
            return DegenerateMarginal(float(col[0]), n=col.size)
        return ContinuousMarginal(col, h)
    values, counts = np.unique(col.astype(np.int64), return_counts=True)
    return DiscreteMarginal(values, counts)


def inverse_cdf(est, u):
    """Generalized-inverse evaluation of a fitted marginal at u in (0,1)."""
    return est.inverse(u)


@dataclass
class CategoricalProbTable:
    """Empirical level frequencies plus the joint cell table used for synthesis."""

    var_names: tuple[str, ...]
    marginals: tuple[np.ndarray, ...]
    cells: np.ndarray  # (n_cells, q) level codes, lexicographically sorted
    cell_probs: np.ndarray

    def marginal(self, name: str) -> np.ndarray:
        return self.marginals[self.var_names.index(name)]

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw joint categorical assignments; returns (size, q) level codes."""
        idx = rng.choice(self.cells.shape[0], size=size, p=self.cell_probs)
        return self.cells[idx]


def fit_categorical_probs(ds: MixedDataset) -> CategoricalProbTable:
    """Tabulate per-variable frequencies and the joint cross-classification.

    Only observed joint cells carry mass, so combinations absent from the
    data (structural zeros) can never be synthesized.
    """
    cat_cols = [c for c in ds.schema if c.kind is Kind.CATEGORICAL]
    if not cat_cols:
        raise NoCategoricalColumnsError("dataset declares no categorical columns")
    codes = np.column_stack([ds.columns[c.name] for c in cat_cols])
    marginals = []
    for j, c in enumerate(cat_cols):
        counts = np.bincount(codes[:, j], minlength=c.k)
        marginals.append(counts / ds.n)
    cells, counts = np.unique(codes, axis=0, return_counts=True)
    return CategoricalProbTable(
        tuple(c.name for c in cat_cols),
        tuple(marginals),
        cells,
        counts / ds.n,
    )


def ks_distance(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov sup-distance between empirical CDFs."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def marginal_to_dict(est) -> dict:
    """JSON-friendly form of a fitted marginal (for the model archive)."""
    if isinstance(est, DiscreteMarginal):
        return {
            "type": "discrete",
            "values": est.values.tolist(),
            "counts": est.counts.tolist(),
        }
    if isinstance(est, ContinuousMarginal):
        return {
            "type": "continuous",
            "sample": est.sample.tolist(),
            "bandwidth": est.bandwidth,
        }
    if isinstance(est, DegenerateMarginal):
        return {"type": "degenerate", "value": est.value, "n": est.n}
    raise TypeError(f"unknown marginal estimator {type(est)!r}")


def marginal_from_dict(doc: dict):
    t = doc["type"]
    if t == "discrete":
        return DiscreteMarginal(np.asarray(doc["values"]), np.asarray(doc["counts"]))
    if t == "continuous":
        return ContinuousMarginal(np.asarray(doc["sample"]), float(doc["bandwidth"]))
    if t == "degenerate":
        return DegenerateMarginal(float(doc["value"]), int(doc.get("n", 1)))
    raise ValueError(f"unknown marginal type '{t}'")
