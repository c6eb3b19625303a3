"""Maximum-entropy reconstruction of bilateral exposures from aggregates.

Alternating row/column proportional rescaling (the RAS scheme): even steps
rescale every row to its interbank-asset marginal, odd steps rescale every
column to its liability marginal, starting from a uniform matrix with a hard
zero diagonal. The fixed point is the maximum-entropy matrix consistent with
the observed aggregates and no self-lending.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, InfeasibilityError, SchemaError

MAGIC = b"IBNW0001"
DEFAULT_TOLERANCE = 1e-8
DEFAULT_MAX_ITER = 10_000
_EPS = 1e-12


@dataclass(frozen=True)
class ExposureMatrix:
    """Dense n x n bilateral loan matrix; w[i, j] is the loan from i to j."""

    bank_ids: tuple[str, ...]
    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise DimensionError(f"exposure matrix must be square, got shape {w.shape}")
        if w.shape[0] != len(self.bank_ids):
            raise DimensionError(
                f"{len(self.bank_ids)} bank_ids for a {w.shape[0]}x{w.shape[1]} matrix"
            )
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    def row_sums(self) -> np.ndarray:
        return self.w.sum(axis=1)

    def col_sums(self) -> np.ndarray:
        return self.w.sum(axis=0)


@dataclass(frozen=True)
class RasReport:
    iterations: int
    max_marginal_error: float
    converged: bool


def _row_scaled(w: np.ndarray, ia: np.ndarray) -> np.ndarray:
    """Rescale rows to hit the asset marginals; 0/0 rows stay exactly zero."""
    rs = w.sum(axis=1)
    scale = np.divide(ia, rs, out=np.zeros_like(ia), where=rs > 0)
    return w * scale[:, None]


def _col_scaled(w: np.ndarray, il: np.ndarray) -> np.ndarray:
    cs = w.sum(axis=0)
    scale = np.divide(il, cs, out=np.zeros_like(il), where=cs > 0)
    return w * scale[None, :]


def _relative_errors(w, ia, il):
    row = np.abs(w.sum(axis=1) - ia) / np.maximum(ia, _EPS)
    col = np.abs(w.sum(axis=0) - il) / np.maximum(il, _EPS)
    return row, col


def marginal_errors(exposures: ExposureMatrix, ia, il):
    """Relative row/column marginal errors of a matrix against targets."""
    ia = np.asarray(ia, dtype=float)
    il = np.asarray(il, dtype=float)
    if ia.shape != (exposures.n,) or il.shape != (exposures.n,):
        raise DimensionError(
            f"marginals of length {ia.size}/{il.size} for n={exposures.n}"
        )
    return _relative_errors(exposures.w, ia, il)


def reconstruct(
    ia,
    il,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iter: int = DEFAULT_MAX_ITER,
    bank_ids: tuple[str, ...] | None = None,
) -> tuple[ExposureMatrix, RasReport]:
    """Reconstruct the bilateral matrix from aggregate assets and liabilities.

    Aggregates must already balance (run close_system first). Non-convergence
    within max_iter is reported, not raised.
    """
    ia = np.asarray(ia, dtype=float)
    il = np.asarray(il, dtype=float)
    if ia.ndim != 1 or il.shape != ia.shape:
        raise DimensionError(f"marginal shapes differ: {ia.shape} vs {il.shape}")
    n = ia.size
    if n < 2:
        raise DimensionError("need at least 2 banks to reconstruct a network")
    if (ia < 0).any() or (il < 0).any():
        raise ValueError("marginals must be nonnegative")
    total = float(ia.sum())
    if abs(total - float(il.sum())) > 1e-9 * max(total, _EPS):
        raise InfeasibilityError(
            f"aggregates are not balanced (assets {total:g} vs liabilities "
            f"{float(il.sum()):g}); run close_system first"
        )
    if bank_ids is None:
        bank_ids = tuple(str(i) for i in range(n))

    # A lender needs at least one counterparty with borrowing capacity and
    # vice versa, otherwise the zero diagonal makes the marginals unservable.
    il_total = float(il.sum())
    ia_total = total
    for i in range(n):
        if ia[i] > 0 and il_total - il[i] <= 0:
            raise InfeasibilityError(
                f"bank {bank_ids[i]} has interbank assets {ia[i]:g} but no other "
                "bank reports interbank liabilities"
            )
        if il[i] > 0 and ia_total - ia[i] <= 0:
            raise InfeasibilityError(
                f"bank {bank_ids[i]} has interbank liabilities {il[i]:g} but no "
                "other bank reports interbank assets"
            )
    # Complete zero-diagonal feasibility (Gale-Hoffman with a forbidden
    # diagonal): every bank's combined assets and liabilities must fit into
    # the rest of the system.
    overs = np.flatnonzero(ia + il > total * (1.0 + 1e-12))
    if overs.size:
        i = int(overs[0])
        raise InfeasibilityError(
            f"bank {bank_ids[i]} has interbank assets + liabilities "
            f"{ia[i] + il[i]:g} exceeding the system total {total:g}; "
            "no zero-diagonal matrix can satisfy the marginals"
        )

    w = np.ones((n, n), dtype=float)
    np.fill_diagonal(w, 0.0)

    iterations = 0
    err = np.inf
    converged = False
    for iterations in range(1, max_iter + 1):
        w = _row_scaled(w, ia)  # even step: rows match assets
        w = _col_scaled(w, il)  # odd step: columns match liabilities
        row_err, col_err = _relative_errors(w, ia, il)
        err = float(max(row_err.max(), col_err.max()))
        if err <= tolerance:
            converged = True
            break

    return (
        ExposureMatrix(bank_ids=tuple(bank_ids), w=w),
        RasReport(iterations=iterations, max_marginal_error=err, converged=converged),
    )


def write_matrix(path, exposures: ExposureMatrix) -> None:
    """Binary dump: 8-byte magic, n as little-endian uint64, row-major float64.

    A sidecar CSV `<path>.ids.csv` records bank_ids in row order.
    """
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", exposures.n))
        fh.write(np.ascontiguousarray(exposures.w, dtype="<f8").tobytes())
    with open(f"{path}.ids.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("bank_id",))
        for b in exposures.bank_ids:
            writer.writerow((b,))


def read_matrix(path) -> ExposureMatrix:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise SchemaError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        (n,) = struct.unpack("<Q", fh.read(8))
        w = np.frombuffer(fh.read(8 * n * n), dtype="<f8").reshape(n, n)
    ids_path = Path(f"{path}.ids.csv")
    if ids_path.exists():
        with open(ids_path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        bank_ids = tuple(r[0] for r in rows[1:])
    else:
        bank_ids = tuple(str(i) for i in range(n))
    return ExposureMatrix(bank_ids=bank_ids, w=w.astype(float))
