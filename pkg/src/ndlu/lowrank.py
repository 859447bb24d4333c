"""Interpolative decompositions with optional randomized row sampling.

A block B of separator coupling is compressed by expressing most of its
columns (the redundant set) as combinations of a few kept columns (the
skeleton): B[:, redundant] ~= B[:, skeleton] @ interp. The skeleton is found
by column-pivoted QR, either on B itself or on a short sketch of B that keeps
nearby rows verbatim and compresses distant rows through a Gaussian matrix.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.spatial import cKDTree

from .errors import DimensionError, InterpolationBoundError

log = logging.getLogger(__name__)

OVERSAMPLE = 5

STRATEGY_NONE = "none"
STRATEGY_GAUSSIAN = "gaussian"
STRATEGY_HYBRID = "hybrid"


@dataclass
class InterpolativeDecomposition:
    """skeleton/redundant partition the column positions 0..n-1; interp has
    one row per skeleton column and one column per redundant column, both in
    ascending-position order. pivots preserves the raw pivot sequence."""

    skeleton: np.ndarray
    redundant: np.ndarray
    interp: np.ndarray
    rank: int
    tol: float
    pivots: np.ndarray

    @property
    def num_columns(self):
        return len(self.skeleton) + len(self.redundant)

    def reconstruction_error(self, block):
        """Frobenius error of interpolating the redundant columns."""
        approx = block[:, self.skeleton] @ self.interp
        return float(np.linalg.norm(block[:, self.redundant] - approx))


@dataclass
class SamplingPlan:
    """Row treatment for sketched decomposition: `near` rows enter the sketch
    verbatim, `far` rows are mixed down to h Gaussian combinations."""

    strategy: str
    near: np.ndarray
    far: np.ndarray
    h: int
    seed: int

    @property
    def num_rows(self):
        return len(self.near) + len(self.far)


def _check_interp_norm(interp, n, k):
    if interp.size == 0 or k == 0:
        return
    tf = float(np.linalg.norm(interp))
    soft = math.sqrt(float(n) * k * (n - k))
    if tf > 10.0 * soft:
        raise InterpolationBoundError(
            f"interpolation matrix norm {tf:.3e} exceeds 10x the stable bound {soft:.3e}"
        )
    if tf > soft:
        log.warning(
            "interpolation matrix norm %.3e above the stable bound %.3e "
            "(rank %d of %d columns)", tf, soft, k, n
        )


def _sorted_id(block_columns, piv, k, rank_t, eps):
    """Re-express a pivot-ordered ID with ascending skeleton/redundant lists."""
    n = block_columns
    skeleton_piv = piv[:k]
    redundant_piv = piv[k:]
    row_order = np.argsort(skeleton_piv)
    col_order = np.argsort(redundant_piv)
    interp = rank_t[row_order][:, col_order] if rank_t.size else rank_t
    ident = InterpolativeDecomposition(
        skeleton=np.sort(skeleton_piv).astype(np.int64),
        redundant=np.sort(redundant_piv).astype(np.int64),
        interp=np.ascontiguousarray(interp),
        rank=k,
        tol=eps,
        pivots=np.asarray(piv, dtype=np.int64),
    )
    _check_interp_norm(ident.interp, n, k)
    return ident


def cpqr_id(block, eps, refine_swaps=0):
    """Interpolative decomposition by column-pivoted Householder QR.

    Columns are kept while |R[k,k]| > eps * |R[0,0]|; the interpolation
    matrix solves R1 @ interp = R2 by back substitution. With refine_swaps
    > 0, redundant columns whose coefficients exceed 2 in magnitude are
    swapped into the skeleton (bounded strong-pivoting cleanup).
    """
    block = np.atleast_2d(np.asarray(block))
    m, n = block.shape
    dtype = block.dtype
    if n == 0 or m == 0 or not np.any(block):
        return _sorted_id(n, np.arange(n), 0, np.zeros((0, n), dtype=dtype), eps)

    r, piv = sla.qr(block, mode="r", pivoting=True)
    diag = np.abs(np.diag(r))
    cutoff = eps * diag[0]
    below = np.flatnonzero(diag <= cutoff)
    k = int(below[0]) if len(below) else len(diag)
    if k == 0:
        return _sorted_id(n, np.arange(n), 0, np.zeros((0, n), dtype=dtype), eps)
    if k == n:
        return _sorted_id(n, piv, n, np.zeros((n, 0), dtype=dtype), eps)

    rank_t = sla.solve_triangular(r[:k, :k], r[:k, k:], lower=False)

    if refine_swaps > 0:
        piv, rank_t = _refine_by_swaps(block, piv, k, rank_t, refine_swaps)

    return _sorted_id(n, piv, k, rank_t, eps)


def _refine_by_swaps(block, piv, k, rank_t, max_swaps):
    """Swap the worst offending redundant column into the skeleton while any
    interpolation coefficient exceeds 2, at most max_swaps times."""
    order = np.array(piv)
    for _ in range(max_swaps):
        if rank_t.size == 0:
            break
        flat = int(np.argmax(np.abs(rank_t)))
        i, j = divmod(flat, rank_t.shape[1])
        if abs(rank_t[i, j]) <= 2.0:
            break
        order[i], order[k + j] = order[k + j], order[i]
        r = sla.qr(block[:, order], mode="r", pivoting=False)[0]
        diag = np.abs(np.diag(r)[:k])
        if np.any(diag == 0):
            order[i], order[k + j] = order[k + j], order[i]
            break
        rank_t = sla.solve_triangular(r[:k, :k], r[:k, k:], lower=False)
    return order, rank_t


def plan_dense(num_rows):
    """Plan that applies no sampling at all."""
    empty = np.empty(0, dtype=np.int64)
    return SamplingPlan(STRATEGY_NONE, empty, np.arange(num_rows, dtype=np.int64), 0, 0)


def plan_gaussian(num_rows, rank_guess, seed, oversample=OVERSAMPLE):
    """Pure randomized plan: every row is mixed through the Gaussian sketch."""
    h = min(num_rows, rank_guess + oversample)
    if h >= num_rows:
        return plan_dense(num_rows)
    empty = np.empty(0, dtype=np.int64)
    return SamplingPlan(
        STRATEGY_GAUSSIAN, empty, np.arange(num_rows, dtype=np.int64), h, seed
    )


def build_hybrid_plan(row_points, segment_points, radius, rank_guess, seed,
                      oversample=OVERSAMPLE):
    """Split rows into near (within `radius` of any segment point, kept
    verbatim) and far (sketched down to rank_guess + oversample Gaussian
    rows). Degrades to no sampling when the far set is too small to shrink."""
    row_points = np.asarray(row_points, dtype=np.float64)
    m = len(row_points)
    if m == 0:
        return plan_dense(0)
    tree = cKDTree(np.asarray(segment_points, dtype=np.float64))
    dist, _ = tree.query(row_points)
    near = np.flatnonzero(dist <= radius).astype(np.int64)
    far = np.flatnonzero(dist > radius).astype(np.int64)
    h = min(len(far), rank_guess + oversample)
    if len(far) == 0 or h >= len(far):
        return plan_dense(m)
    return SamplingPlan(STRATEGY_HYBRID, near, far, h, seed)


def _gaussian_sketch(rng, h, num_far, dtype):
    scale = 1.0 / math.sqrt(h)
    if np.issubdtype(dtype, np.complexfloating):
        g = rng.standard_normal((h, num_far)) + 1j * rng.standard_normal((h, num_far))
        return (g * (scale / math.sqrt(2.0))).astype(dtype)
    return (rng.standard_normal((h, num_far)) * scale).astype(dtype)


def sampled_id(block, plan, eps, refine_swaps=0):
    """Interpolative decomposition of `block` via the plan's sketch.

    The skeleton is chosen from the sketch Y = [block[near]; G @ block[far]]
    and the interpolation matrix is taken from the sketch's QR; both are then
    used against the full block.
    """
    block = np.atleast_2d(np.asarray(block))
    if plan.strategy == STRATEGY_NONE:
        return cpqr_id(block, eps, refine_swaps=refine_swaps)
    if plan.num_rows != block.shape[0]:
        raise DimensionError(
            f"plan covers {plan.num_rows} rows, block has {block.shape[0]}"
        )
    rng = np.random.default_rng(plan.seed)
    sketch = _gaussian_sketch(rng, plan.h, len(plan.far), block.dtype)
    pieces = []
    if len(plan.near):
        pieces.append(block[plan.near])
    pieces.append(sketch @ block[plan.far])
    return cpqr_id(np.vstack(pieces), eps, refine_swaps=refine_swaps)


def joint_unsymmetric_id(coupling_in, coupling_out, plan, eps, refine_swaps=0):
    """One ID serving both sides of an unsymmetric coupling.

    coupling_in is (neighbors x segment), coupling_out is (segment x
    neighbors); the stack [coupling_in; coupling_out^T] is decomposed so the
    same skeleton columns work for rows and columns of the segment. Sampling
    is applied to each half separately with independent sketches.
    """
    coupling_in = np.atleast_2d(np.asarray(coupling_in))
    coupling_out = np.atleast_2d(np.asarray(coupling_out))
    if coupling_out.shape != coupling_in.shape[::-1]:
        raise DimensionError(
            f"coupling blocks disagree: {coupling_in.shape} vs {coupling_out.shape}"
        )
    other = coupling_out.T
    if plan.strategy == STRATEGY_NONE:
        return cpqr_id(np.vstack([coupling_in, other]), eps, refine_swaps=refine_swaps)
    if plan.num_rows != coupling_in.shape[0]:
        raise DimensionError(
            f"plan covers {plan.num_rows} rows, blocks have {coupling_in.shape[0]}"
        )
    rng = np.random.default_rng(plan.seed)
    dtype = np.promote_types(coupling_in.dtype, coupling_out.dtype)
    pieces = []
    for half in (coupling_in, other):
        if len(plan.near):
            pieces.append(half[plan.near].astype(dtype, copy=False))
        sketch = _gaussian_sketch(rng, plan.h, len(plan.far), dtype)
        pieces.append(sketch @ half[plan.far])
    return cpqr_id(np.vstack(pieces), eps, refine_swaps=refine_swaps)
