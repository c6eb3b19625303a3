"""Feature-panel assembly: 6 metrics x 4 quarters, rebalancing, scaling, splits.

Column order is metric-major then quarter and is fixed across every run:
stpd, roe, roa, tier1_ratio, tier1_leverage, contagion_proxy, each q1..q4.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .balance_sheets import DefaultLabelSet, QuarterlyPanel
from .errors import ArityError, ClassBalanceError, DatasetSizeError

_METRIC_FIELDS = (
    ("stpd", "short_term_past_due_ratio"),
    ("roe", "roe"),
    ("roa", "roa"),
    ("tier1_ratio", "tier1_capital_ratio"),
    ("tier1_leverage", "tier1_leverage_ratio"),
)

COLUMN_NAMES: tuple[str, ...] = tuple(
    f"{metric}_q{k}" for metric, _ in _METRIC_FIELDS for k in range(1, 5)
) + tuple(f"contagion_proxy_q{k}" for k in range(1, 5))

N_COLUMNS = len(COLUMN_NAMES)  # 24

CONTAGION_COLUMNS = tuple(c for c in COLUMN_NAMES if c.startswith("contagion_proxy"))


@dataclass(frozen=True)
class FeaturePanel:
    bank_ids: tuple[str, ...]
    column_names: tuple[str, ...]
    x: np.ndarray
    y: np.ndarray
    exclusions: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=int).reshape(-1)
        if x.ndim != 2:
            raise ArityError(f"feature matrix must be 2-D, got shape {x.shape}")
        if x.shape != (len(self.bank_ids), len(self.column_names)):
            raise ArityError(
                f"feature matrix {x.shape} does not match {len(self.bank_ids)} "
                f"banks x {len(self.column_names)} columns"
            )
        if y.shape[0] != x.shape[0]:
            raise ArityError(f"{y.shape[0]} labels for {x.shape[0]} rows")
        bad = set(np.unique(y)) - {0, 1}
        if bad:
            raise ValueError(f"labels must be 0/1, found {sorted(bad)}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True)
class SplitAssignment:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    rng_seed: int


@dataclass(frozen=True)
class RobustScalerParams:
    """Per-column median and interquartile range, fit on training rows only."""

    median: np.ndarray
    iqr: np.ndarray

    def divisor(self) -> np.ndarray:
        # IQR 0 means a constant training column: center it, do not rescale.
        return np.where(self.iqr == 0.0, 1.0, self.iqr)


def build_panel(
    quarters: Sequence[QuarterlyPanel],
    proxies: Sequence[Mapping[str, float]],
    labels: DefaultLabelSet,
) -> FeaturePanel:
    """Inner-join banks present in all four quarters (with proxies and a label).

    Banks missing anywhere are excluded and reported on the panel, not raised.
    """
    if len(quarters) != 4:
        raise ArityError(f"expected 4 quarterly panels, got {len(quarters)}")
    if len(proxies) != 4:
        raise ArityError(f"expected 4 proxy maps, got {len(proxies)}")
    by_quarter = [{r.bank_id: r for r in q.records} for q in quarters]

    universe = sorted(set().union(*(set(m) for m in by_quarter)))
    kept: list[str] = []
    exclusions: list[tuple[str, str]] = []
    for bank_id in universe:
        reason = None
        for k in range(4):
            if bank_id not in by_quarter[k]:
                reason = f"missing from quarter {quarters[k].quarter}"
                break
            if bank_id not in proxies[k]:
                reason = f"no contagion proxy for quarter {quarters[k].quarter}"
                break
        if reason is None and bank_id not in labels.labels:
            reason = "no default label"
        if reason is None:
            kept.append(bank_id)
        else:
            exclusions.append((bank_id, reason))

    if not kept:
        warnings.warn("feature panel is empty: no bank passes the four-quarter join")

    x = np.empty((len(kept), N_COLUMNS), dtype=float)
    for row, bank_id in enumerate(kept):
        col = 0
        for _, fieldname in _METRIC_FIELDS:
            for k in range(4):
                x[row, col] = getattr(by_quarter[k][bank_id], fieldname)
                col += 1
        for k in range(4):
            x[row, col] = proxies[k][bank_id]
            col += 1
    y = np.array([labels.labels[b] for b in kept], dtype=int)
    return FeaturePanel(
        bank_ids=tuple(kept),
        column_names=COLUMN_NAMES,
        x=x,
        y=y,
        exclusions=tuple(exclusions),
    )


def rebalance(panel: FeaturePanel, target_total: int, seed: int) -> FeaturePanel:
    """Resample to target_total rows, half per class.

    The minority class is oversampled with replacement (originals always kept),
    the majority class subsampled without replacement. Synthetic rows are exact
    copies, never jittered.
    """
    if target_total <= 0 or target_total % 2 != 0:
        raise ValueError(f"target_total must be a positive even count, got {target_total}")
    per_class = target_total // 2
    rng = np.random.default_rng(seed)
    picks = []
    for cls in (0, 1):
        idx = np.flatnonzero(panel.y == cls)
        if idx.size == 0:
            raise ClassBalanceError(f"class {cls} is empty; cannot rebalance")
        if idx.size >= per_class:
            picks.append(rng.choice(idx, size=per_class, replace=False))
        else:
            extra = rng.choice(idx, size=per_class - idx.size, replace=True)
            picks.append(np.concatenate([idx, extra]))
    rows = np.concatenate(picks)
    rows = rows[rng.permutation(rows.size)]
    return replace(
        panel,
        bank_ids=tuple(panel.bank_ids[i] for i in rows),
        x=panel.x[rows],
        y=panel.y[rows],
    )


def fit_scaler(panel: FeaturePanel, train_idx) -> RobustScalerParams:
    """Median/IQR per column over the training rows only (no test leakage)."""
    train_idx = np.asarray(train_idx, dtype=int)
    if train_idx.size == 0:
        raise DatasetSizeError("cannot fit a scaler on an empty training set")
    xt = panel.x[train_idx]
    median = np.median(xt, axis=0)
    q1, q3 = np.quantile(xt, [0.25, 0.75], axis=0)  # linear interpolation
    return RobustScalerParams(median=median, iqr=q3 - q1)


def apply_scaler(params: RobustScalerParams, panel: FeaturePanel) -> FeaturePanel:
    scaled = (panel.x - params.median) / params.divisor()
    return replace(panel, x=scaled)


def split(panel: FeaturePanel, seed: int) -> SplitAssignment:
    """Seeded random split into thirds, class-stratified.

    Partition sizes are equal within one row; within each class the partition
    quotas follow largest-remainder apportionment so class rates match the
    panel within one row per partition.
    """
    m = len(panel)
    if m < 3:
        raise DatasetSizeError(f"need at least 3 rows to split, got {m}")
    rng = np.random.default_rng(seed)
    base, rem = divmod(m, 3)
    targets = np.array([base + (1 if p < rem else 0) for p in range(3)])
    caps = targets.copy()

    parts: list[list[int]] = [[], [], []]
    leftovers: list[tuple[float, int, int, int]] = []  # (-frac, class order, partition, row)
    for order, cls in enumerate(np.unique(panel.y)):
        rows = rng.permutation(np.flatnonzero(panel.y == cls))
        quota = rows.size * targets / m
        take = np.floor(quota).astype(int)
        pos = 0
        for p in range(3):
            parts[p].extend(rows[pos : pos + take[p]].tolist())
            pos += take[p]
        caps -= take
        frac = quota - take
        for j, row in enumerate(rows[pos:]):
            # one leftover unit per fractional slot, preferring large fractions
            p = int(np.argsort(-frac, kind="stable")[j])
            leftovers.append((-frac[p], order, p, int(row)))

    leftovers.sort()
    for _, _, p, row in leftovers:
        if caps[p] > 0:
            parts[p].append(row)
            caps[p] -= 1
        else:
            q = int(np.argmax(caps))
            parts[q].append(row)
            caps[q] -= 1

    train, validation, test = (np.array(sorted(p), dtype=int) for p in parts)
    return SplitAssignment(train=train, validation=validation, test=test, rng_seed=seed)
