"""Equity contagion over a fixed exposure network.

Losses travel from borrowers to lenders: a drop in a borrower's equity
devalues the loans extended to it in proportion to the borrower's relative
equity loss, measured against the pre-run baseline,

    E_i(t+1) = max(0, E_i(t) + sum_j phi_ij * beta * (E_j(t) - E_j(t-1)))

with phi_ij = W0_ij / E0_j frozen at its initial value. Equity is floored at
zero; a bank that reaches the floor is insolvent and its phi column is zeroed
before the next period so it transmits nothing further. beta scales the
pass-through (beta = 1 is plain proportional transmission, beta = 0 disables
contagion entirely).

The per-bank contagion proxy is the percentage equity loss between the
post-shock state and the converged state, i.e. the damage attributable to
contagion alone, excluding the initial shock. It always lies in [-100, 0].
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .balance_sheets import QuarterlyPanel, close_system
from .errors import DataError, DomainError, UnknownBankError
from .reconstruction import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOLERANCE,
    ExposureMatrix,
    RasReport,
    reconstruct,
)

DEFAULT_ALPHA = 1e-6
DEFAULT_MAX_PERIODS = 10_000
DEFAULT_SHOCK_FRACTION = 0.1
_EPS = 1e-12

SHOCK_MODES = ("equity_fraction", "absolute")


@dataclass(frozen=True)
class ShockSpec:
    """Initial shock: per-bank equity fractions in [0, 1] or absolute amounts."""

    mode: str
    targets: Mapping[str, float]

    def __post_init__(self):
        if self.mode not in SHOCK_MODES:
            raise ValueError(f"unknown shock mode {self.mode!r}; use one of {SHOCK_MODES}")
        if self.mode == "equity_fraction":
            bad = {b: f for b, f in self.targets.items() if not 0.0 <= f <= 1.0}
            if bad:
                raise ValueError(f"equity fractions must lie in [0, 1]: {bad}")
        else:
            bad = {b: a for b, a in self.targets.items() if a < 0.0}
            if bad:
                raise ValueError(f"absolute shocks must be nonnegative: {bad}")

    @classmethod
    def uniform(cls, bank_ids, fraction: float) -> "ShockSpec":
        return cls(mode="equity_fraction", targets={b: fraction for b in bank_ids})


@dataclass
class NetworkState:
    """Mutable simulation state; phi is frozen except for insolvency zero-outs."""

    exposures: ExposureMatrix
    e0: np.ndarray
    phi: np.ndarray
    e_prev: np.ndarray
    e_curr: np.ndarray
    insolvent: np.ndarray
    shocked: bool = False

    @property
    def bank_ids(self) -> tuple[str, ...]:
        return self.exposures.bank_ids

    @property
    def n(self) -> int:
        return self.exposures.n


@dataclass(frozen=True)
class ContagionRun:
    """Outcome of one propagation: final/post-shock equity and the proxy."""

    bank_ids: tuple[str, ...]
    beta: float
    alpha: float
    e_post_shock: np.ndarray
    e_final: np.ndarray
    proxy: np.ndarray  # percentages in [-100, 0]
    initially_defaulted: np.ndarray
    cascade_defaulted: np.ndarray
    periods: int
    converged: bool
    defaults_cascaded: int
    trajectory: tuple[np.ndarray, ...] | None = None


def init_state(w: ExposureMatrix, equity) -> NetworkState:
    """Build phi = W0 / E0 (column-wise by borrower equity) and freeze it."""
    equity = np.asarray(equity, dtype=float)
    if equity.shape != (w.n,):
        raise DomainError(f"equity vector of length {equity.size} for n={w.n}")
    nonpos = np.flatnonzero(equity <= 0)
    if nonpos.size:
        names = ", ".join(w.bank_ids[i] for i in nonpos[:10])
        raise DomainError(
            f"non-positive starting equity for bank(s): {names}; exclude them upstream"
        )
    phi = w.w / equity[None, :]
    return NetworkState(
        exposures=w,
        e0=equity.copy(),
        phi=phi,
        e_prev=equity.copy(),
        e_curr=equity.copy(),
        insolvent=np.zeros(w.n, dtype=bool),
    )


def apply_shock(state: NetworkState, shock: ShockSpec) -> NetworkState:
    """Reduce current equity per the shock; the pre-shock vector is kept as
    the previous period so the first propagation step sees the shock as the
    equity change. Banks driven to zero stop transmitting immediately."""
    if state.shocked:
        raise ValueError("state already shocked; apply_shock expects a fresh state")
    index = {b: i for i, b in enumerate(state.bank_ids)}
    unknown = sorted(set(shock.targets) - set(index))
    if unknown:
        raise UnknownBankError(f"shock targets unknown bank_id(s): {', '.join(unknown)}")
    e_curr = state.e_curr.copy()
    for bank_id, size in shock.targets.items():
        i = index[bank_id]
        if shock.mode == "equity_fraction":
            e_curr[i] = state.e_curr[i] * (1.0 - size)
        else:
            e_curr[i] = max(0.0, state.e_curr[i] - size)
    killed = e_curr == 0.0
    phi = state.phi
    if killed.any():
        phi = phi.copy()
        phi[:, killed] = 0.0
    return NetworkState(
        exposures=state.exposures,
        e0=state.e0,
        phi=phi,
        e_prev=state.e_prev.copy(),
        e_curr=e_curr,
        insolvent=killed,
        shocked=True,
    )


def _proxy_vector(e_post_shock: np.ndarray, e_final: np.ndarray):
    initially_defaulted = e_post_shock == 0.0
    denom = np.where(initially_defaulted, 1.0, e_post_shock)
    proxy = np.where(
        initially_defaulted, 0.0, (e_final - e_post_shock) / denom * 100.0
    )
    return proxy, initially_defaulted


def propagate(
    state: NetworkState,
    beta: float = 1.0,
    alpha: float = DEFAULT_ALPHA,
    max_periods: int = DEFAULT_MAX_PERIODS,
    record_trajectory: bool = False,
) -> ContagionRun:
    """Iterate the contagion update until the largest relative equity change
    falls below alpha, or max_periods is reached (reported, not raised).

    The passed state is not mutated; newly insolvent banks have their phi
    column zeroed before the next period.
    """
    if beta < 0:
        raise ValueError(f"beta must be nonnegative, got {beta}")
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    # Borrower-major layout: phi_by_borrower[j] holds every lender's exposure
    # ratio to borrower j, so the per-period reduction below runs left to
    # right over borrowers (a fixed order, reproducible and matching a
    # literal per-term evaluation bit for bit).
    phi_by_borrower = np.ascontiguousarray(state.phi.T)
    insolvent = state.insolvent.copy()
    e_prev = state.e_prev.copy()
    e_curr = state.e_curr.copy()
    e_post_shock = state.e_curr.copy()
    trajectory = [e_post_shock.copy()] if record_trajectory else None

    converged = False
    periods = 0
    for t in range(1, max_periods + 1):
        delta = e_curr - e_prev
        e_next = e_curr.copy()
        for j in np.flatnonzero(delta != 0.0):
            e_next += phi_by_borrower[j] * (beta * delta[j])
        np.maximum(e_next, 0.0, out=e_next)
        newly = (e_next == 0.0) & ~insolvent
        if newly.any():
            phi_by_borrower[newly, :] = 0.0
            insolvent |= newly
        periods = t
        if record_trajectory:
            trajectory.append(e_next.copy())
        rel = np.abs(e_next - e_curr) / np.maximum(e_curr, _EPS)
        e_prev, e_curr = e_curr, e_next
        if float(rel.max()) < alpha:
            converged = True
            break

    proxy, initially_defaulted = _proxy_vector(e_post_shock, e_curr)
    cascade_defaulted = (e_curr == 0.0) & ~initially_defaulted
    return ContagionRun(
        bank_ids=state.bank_ids,
        beta=beta,
        alpha=alpha,
        e_post_shock=e_post_shock,
        e_final=e_curr,
        proxy=proxy,
        initially_defaulted=initially_defaulted,
        cascade_defaulted=cascade_defaulted,
        periods=periods,
        converged=converged,
        defaults_cascaded=int(cascade_defaulted.sum()),
        trajectory=tuple(trajectory) if record_trajectory else None,
    )


def contagion_proxy(run: ContagionRun) -> np.ndarray:
    """Percentage equity lost to contagion alone; banks killed by the initial
    shock get 0 (their loss belongs to the shock, flagged initially_defaulted)."""
    proxy, _ = _proxy_vector(run.e_post_shock, run.e_final)
    return proxy


@dataclass(frozen=True)
class QuarterSimulation:
    """One quarter's reconstruction + contagion run with bookkeeping."""

    quarter: str
    bank_ids: tuple[str, ...]
    run: ContagionRun
    ras: RasReport
    excluded: tuple[tuple[str, str], ...]
    closure_factor: float

    @property
    def proxies(self) -> dict[str, float]:
        return {b: float(p) for b, p in zip(self.bank_ids, self.run.proxy)}


def simulate_quarter(
    panel: QuarterlyPanel,
    scenario: ShockSpec | None = None,
    beta: float = 1.0,
    alpha: float = DEFAULT_ALPHA,
    *,
    shock_fraction: float = DEFAULT_SHOCK_FRACTION,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iter: int = DEFAULT_MAX_ITER,
    max_periods: int = DEFAULT_MAX_PERIODS,
    record_trajectory: bool = False,
) -> QuarterSimulation:
    """Reconstruct the quarter's network and run the contagion scenario.

    Banks with non-positive starting equity are excluded (and reported); the
    surviving subsystem is re-closed before reconstruction since exclusions
    unbalance the aggregates. With no explicit scenario, a uniform equity
    fraction shock of ``shock_fraction`` hits every bank.
    """
    excluded = tuple(
        (r.bank_id, f"non-positive starting equity ({r.equity:g})")
        for r in panel.records
        if r.equity <= 0
    )
    live = tuple(r for r in panel.records if r.equity > 0)
    if not live:
        raise DataError(f"panel {panel.quarter}: no banks with positive equity")
    sub = close_system(QuarterlyPanel(quarter=panel.quarter, records=live))
    ids = sub.bank_ids
    equity = sub.equity()

    if scenario is None:
        scenario = ShockSpec.uniform(ids, shock_fraction)
    else:
        unknown = sorted(set(scenario.targets) - set(panel.bank_ids))
        if unknown:
            raise UnknownBankError(
                f"shock targets unknown bank_id(s): {', '.join(unknown)}"
            )
        kept = {b: s for b, s in scenario.targets.items() if b in set(ids)}
        scenario = replace(scenario, targets=kept)

    if len(ids) == 1:
        # No counterparties: an empty network, nothing to propagate.
        exposures = ExposureMatrix(bank_ids=ids, w=np.zeros((1, 1)))
        ras = RasReport(iterations=0, max_marginal_error=0.0, converged=True)
    else:
        exposures, ras = reconstruct(
            sub.interbank_assets(),
            sub.interbank_liabilities(),
            tolerance=tolerance,
            max_iter=max_iter,
            bank_ids=ids,
        )
    state = apply_shock(init_state(exposures, equity), scenario)
    run = propagate(
        state,
        beta=beta,
        alpha=alpha,
        max_periods=max_periods,
        record_trajectory=record_trajectory,
    )
    return QuarterSimulation(
        quarter=panel.quarter,
        bank_ids=ids,
        run=run,
        ras=ras,
        excluded=excluded,
        closure_factor=float(sub.closure_factor or 1.0),
    )


def quarterly_proxies(
    panel: QuarterlyPanel,
    scenario: ShockSpec | None = None,
    beta: float = 1.0,
    alpha: float = DEFAULT_ALPHA,
    **kwargs,
) -> dict[str, float]:
    """Contagion proxy per bank for one quarter (excluded banks are absent)."""
    return simulate_quarter(panel, scenario, beta, alpha, **kwargs).proxies
