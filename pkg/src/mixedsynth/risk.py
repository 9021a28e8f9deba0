"""Attribute-disclosure risk via correct (median) attribution probabilities.

An adversary knows a subset of columns for every confidential record and
attacks a release of m synthetic datasets: pool every synthetic record that
matches the known values exactly, take the median of the pooled target
values, and score a hit when it lands within an integer slack of the truth.
The same machinery run against the confidential data itself gives the
no-synthesis baseline.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientPoolError, SchemaError, UnknownColumnError
from .schema import Kind, MixedDataset
from .streams import substream

__all__ = [
    "AdversaryScenario",
    "RiskReport",
    "RiskCell",
    "match_set",
    "cmap_record",
    "cmap_mean",
    "risk_study",
]


@dataclass(frozen=True)
class AdversaryScenario:
    known: tuple
    target: str
    epsilon: int = 0
    m: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "known", tuple(self.known))
        if not self.known:
            raise ValueError("adversary must know at least one column")
        if self.target in self.known:
            raise ValueError(f"target '{self.target}' cannot be a known column")
        if self.epsilon < 0 or int(self.epsilon) != self.epsilon:
            raise ValueError("epsilon must be a nonnegative integer")


@dataclass(frozen=True)
class RiskReport:
    cmap_syn: float
    cmap_base: float
    cmap_syn_uniques: float
    cmap_base_uniques: float
    risk_reduction: float
    n_matched: int
    n_unmatched: int
    n_uniques: int


@dataclass(frozen=True)
class RiskCell:
    m: int
    n_known: int
    epsilon: int
    report: RiskReport


def _check_columns(ds: MixedDataset, scenario: AdversaryScenario):
    for name in scenario.known + (scenario.target,):
        if name not in ds.columns:
            raise UnknownColumnError(f"column '{name}' not in dataset")
    for name in scenario.known:
        if ds.col_schema(name).kind is Kind.CONTINUOUS:
            raise SchemaError(
                f"known column '{name}' is continuous; exact matching needs "
                "discrete columns"
            )


def _key_rows(ds: MixedDataset, known) -> np.ndarray:
    return np.column_stack([ds.columns[name] for name in known])


def _key_index(conf: MixedDataset, release, known):
    """Integer key ids shared between confidential and released records.

    Returns (rec_key: per confidential record, syn_keys: one array per
    released dataset with -1 where the key never occurs in conf, n_keys).
    """
    conf_rows = _key_rows(conf, known)
    stacked = [conf_rows] + [_key_rows(s, known) for s in release]
    lengths = [r.shape[0] for r in stacked]
    _, inv = np.unique(np.concatenate(stacked), axis=0, return_inverse=True)
    inv = inv.astype(np.int64)
    bounds = np.cumsum([0] + lengths)
    conf_codes = inv[: bounds[1]]
    ucodes = np.unique(conf_codes)
    lut = np.full(int(inv.max()) + 1, -1, dtype=np.int64)
    lut[ucodes] = np.arange(ucodes.size)
    rec_key = lut[conf_codes]
    syn_keys = [lut[inv[bounds[i] : bounds[i + 1]]] for i in range(1, len(lengths))]
    return rec_key, syn_keys, ucodes.size


def _group_medians(keys: np.ndarray, values: np.ndarray, n_keys: int):
    """Lower-middle median of values per key; nan where a key has no rows."""
    med = np.full(n_keys, np.nan)
    ok = keys >= 0
    keys, values = keys[ok], values[ok]
    if keys.size:
        order = np.lexsort((values, keys))
        keys, values = keys[order], values[order]
        starts = np.flatnonzero(np.r_[True, np.diff(keys) > 0])
        counts = np.diff(np.r_[starts, keys.size])
        med[keys[starts]] = values[starts + (counts - 1) // 2]
    return med


def match_set(
    conf: MixedDataset, release: list, scenario: AdversaryScenario, record_index: int
) -> np.ndarray:
    """Pooled target values of every released record matching one confidential
    record's known tuple exactly.  Empty array when nothing matches."""
    row = _key_rows(conf, scenario.known)[record_index]
    out = [np.empty(0)]
    for s in release:
        hit = np.all(_key_rows(s, scenario.known) == row, axis=1)
        out.append(s.columns[scenario.target][hit].astype(np.float64))
    return np.concatenate(out)


def cmap_record(match_values: np.ndarray, target_value, epsilon: int) -> int:
    """1 iff the pooled match set is non-empty and its median is within slack.

    The median of an even-sized multiset is the lower-middle order statistic,
    which keeps it on the integer grid for count targets.
    """
    vals = np.sort(np.asarray(match_values))
    if vals.size == 0:
        return 0
    med = vals[(vals.size - 1) // 2]
    return int(abs(float(med) - float(target_value)) <= epsilon)


def _cmap_vector(rec_key, n_keys, conf_targets, syn_keys, syn_targets, eps):
    keys = np.concatenate(syn_keys) if syn_keys else np.empty(0, dtype=np.int64)
    vals = np.concatenate(syn_targets) if syn_targets else np.empty(0)
    med = _group_medians(keys, vals, n_keys)
    rec_med = med[rec_key]
    hit = np.isfinite(rec_med) & (np.abs(rec_med - conf_targets) <= eps)
    return hit, np.isfinite(rec_med)


def cmap_mean(
    conf: MixedDataset, release: list, scenario: AdversaryScenario
) -> RiskReport:
    """Score a release and the confidential baseline for one scenario."""
    _check_columns(conf, scenario)
    for s in release:
        _check_columns(s, scenario)
    rec_key, syn_keys, n_keys = _key_index(conf, release, scenario.known)
    t_conf = conf.columns[scenario.target].astype(np.float64)
    syn_targets = [s.columns[scenario.target].astype(np.float64) for s in release]

    hit_syn, matched = _cmap_vector(
        rec_key, n_keys, t_conf, syn_keys, syn_targets, scenario.epsilon
    )
    # baseline: the confidential data attacks itself (self-match included)
    hit_base, _ = _cmap_vector(
        rec_key, n_keys, t_conf, [rec_key], [t_conf], scenario.epsilon
    )
    counts = np.bincount(rec_key, minlength=n_keys)
    uniq = counts[rec_key] == 1

    return RiskReport(
        cmap_syn=float(hit_syn.mean()),
        cmap_base=float(hit_base.mean()),
        cmap_syn_uniques=float(hit_syn[uniq].mean()) if uniq.any() else 0.0,
        cmap_base_uniques=float(hit_base[uniq].mean()) if uniq.any() else 0.0,
        risk_reduction=float(hit_base.mean() - hit_syn.mean()),
        n_matched=int(matched.sum()),
        n_unmatched=int((~matched).sum()),
        n_uniques=int(uniq.sum()),
    )


def risk_study(
    conf: MixedDataset,
    pool: list,
    known: tuple,
    target: str,
    m_grid=(5, 10, 20),
    k_grid=None,
    eps_grid=(0, 1, 2),
    reps: int = 100,
    seed: int = 0,
) -> list[RiskCell]:
    """Average scenario risk over bootstrap re-releases drawn from a pool.

    For each rep and pool size m, a release is drawn without replacement;
    every (known-prefix length, epsilon) cell is scored on the same release
    so cells stay comparable.  cmap_base depends only on (prefix, epsilon).
    """
    known = tuple(known)
    if k_grid is None:
        k_grid = (len(known),)
    if max(m_grid) > len(pool):
        raise InsufficientPoolError(
            f"pool has {len(pool)} datasets; largest release asks for {max(m_grid)}"
        )
    if max(k_grid) > len(known) or min(k_grid) < 1:
        raise ValueError("known-prefix lengths must be within the known list")

    cells = []
    for m in m_grid:
        acc: dict[tuple, list] = {(k, e): [] for k in k_grid for e in eps_grid}
        for rep in range(reps):
            rng = substream(seed, "risk", m, rep)
            release = [pool[i] for i in rng.choice(len(pool), size=m, replace=False)]
            for k_len in k_grid:
                for eps in eps_grid:
                    scen = AdversaryScenario(known[:k_len], target, eps, m)
                    acc[(k_len, eps)].append(cmap_mean(conf, release, scen))
        for k_len in k_grid:
            for eps in eps_grid:
                cells.append(RiskCell(m, k_len, eps, _avg_reports(acc[(k_len, eps)])))
    return cells


def _avg_reports(reports: list) -> RiskReport:
    """Bootstrap average; baseline fields are rep-invariant by construction."""
    syn = float(np.mean([r.cmap_syn for r in reports]))
    base = reports[0].cmap_base
    return RiskReport(
        cmap_syn=syn,
        cmap_base=base,
        cmap_syn_uniques=float(np.mean([r.cmap_syn_uniques for r in reports])),
        cmap_base_uniques=reports[0].cmap_base_uniques,
        risk_reduction=base - syn,
        n_matched=int(round(np.mean([r.n_matched for r in reports]))),
        n_unmatched=int(round(np.mean([r.n_unmatched for r in reports]))),
        n_uniques=reports[0].n_uniques,
    )
