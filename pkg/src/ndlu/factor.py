"""Multilevel elimination engine over a dissection tree.

The factorization sweeps the separator hierarchy bottom-up. Leaf interiors
are eliminated densely first; the remaining unknowns live on separator
segments. Each stage then (1) compresses every regular segment's coupling to
its neighbors with an interpolative decomposition so the redundant rows and
columns of the segment decouple, (2) eliminates the decoupled remainders and
every segment owned by the stage's separators, and (3) merges sibling
segments back into their parents so the next, coarser stage sees whole
segments again.

Every transform is recorded as an elementary factor carrying explicit global
index scopes and dense payloads. Applying the left actions forward, the
block-diagonal middle actions (symmetric mode only), and the right actions in
reverse order applies the inverse of the matrix; the solver module drives
those passes.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import lowrank
from .core import Permutation, SparseMatrix, lu_compact, triangular_solve
from .dissection import JUNCTION, REGULAR, DissectionTree
from .errors import ConfigError, DimensionError, SingularBlockError

SAMPLING_CHOICES = (lowrank.STRATEGY_HYBRID, lowrank.STRATEGY_GAUSSIAN,
                    lowrank.STRATEGY_NONE)


@dataclass
class FactorOptions:
    """Knobs for factorize; defaults match the benchmark configuration.

    symmetric_mode: "auto" uses the symmetric path when the matrix is real
    and numerically symmetric; True/False force it. sampling picks how the
    coupling blocks are sketched before the interpolative decomposition.
    near_radius (geometry units) separates near rows, kept verbatim, from far
    rows, which are mixed through a Gaussian sketch; None derives it from the
    median edge length. Segments smaller than min_sparsify_size skip
    compression: a rank-revealing decomposition of a block that small costs
    more than it saves and such blocks sit at or near full rank anyway, so
    they are eliminated or merged at full size instead. threads is recorded
    for reporting; BLAS threading is controlled by the environment.
    """

    symmetric_mode: object = "auto"
    sampling: str = lowrank.STRATEGY_HYBRID
    oversample: int = lowrank.OVERSAMPLE
    seed: int = 0
    near_radius: float | None = None
    min_sparsify_size: int = 64
    refine_swaps: int = 0
    audit: bool = False
    threads: int = 0

    def validate(self):
        if self.sampling not in SAMPLING_CHOICES:
            raise ConfigError(
                f"sampling must be one of {SAMPLING_CHOICES}, got {self.sampling!r}"
            )
        if self.min_sparsify_size < 0 or self.oversample < 0:
            raise ConfigError("sizes and oversampling must be nonnegative")
        return self


# ---------------------------------------------------------------------------
# Elementary factors
# ---------------------------------------------------------------------------


@dataclass
class SparsifyFactor:
    """Two-sided transform decoupling a segment's redundant indices.

    Right action: x[skeleton] -= interp @ x[redundant]. Left action:
    y[redundant] -= interp.T @ y[skeleton]. The right action is exactly the
    adjoint of the left one, in both symmetric and unsymmetric mode.
    """

    skeleton: np.ndarray
    redundant: np.ndarray
    interp: np.ndarray
    level: int

    kind = "sparsify"

    @property
    def scope(self):
        return np.concatenate([self.skeleton, self.redundant])

    @property
    def payload_nnz(self):
        return self.interp.size


@dataclass
class EliminationFactor:
    """Block elimination of `idx` against its neighbor set `nbr`.

    Payloads come from the pivoted LU self_block[perm] = L @ U:
    compact_lu packs L (unit lower) and U; coupling_left = A[nbr, idx] U^-1;
    coupling_right = L^-1 A[idx, nbr][perm]. Left action: t = L^-1 y[idx][perm];
    y[nbr] -= coupling_left @ t; y[idx] = t. Right action:
    x[idx] = U^-1 (x[idx] - coupling_right @ x[nbr]).
    """

    idx: np.ndarray
    nbr: np.ndarray
    compact_lu: np.ndarray
    perm: np.ndarray
    coupling_left: np.ndarray
    coupling_right: np.ndarray
    level: int
    tag: str = "segment"

    @property
    def kind(self):
        return "interior-lu" if self.tag == "interior" else "eliminate"

    @property
    def scope(self):
        return np.concatenate([self.idx, self.nbr])

    @property
    def payload_nnz(self):
        return (self.compact_lu.size + self.coupling_left.size
                + self.coupling_right.size)


@dataclass
class SymEliminationFactor:
    """Symmetric block elimination; the right action is the left's adjoint.

    Payloads come from self_block = lu @ d @ lu.T with lu[perm] unit lower
    triangular (Bunch-Kaufman). lower_perm stores lu[perm]; coupling stores
    A[nbr, idx] lu^-T d^-1; dinv stores d^-1. Left action:
    t = lu^-1 y[idx]; y[nbr] -= coupling @ t; y[idx] = t. Middle action:
    y[idx] = dinv @ y[idx]. Right action:
    x[idx] = lu^-T (x[idx] - coupling.T @ x[nbr]).
    """

    idx: np.ndarray
    nbr: np.ndarray
    lower_perm: np.ndarray
    perm: np.ndarray
    coupling: np.ndarray
    dinv: np.ndarray
    level: int
    tag: str = "segment"

    @property
    def kind(self):
        return "interior-lu" if self.tag == "interior" else "eliminate"

    @property
    def scope(self):
        return np.concatenate([self.idx, self.nbr])

    @property
    def payload_nnz(self):
        return self.lower_perm.size + self.coupling.size + self.dinv.size


# ---------------------------------------------------------------------------
# Schur state
# ---------------------------------------------------------------------------


class _Unit:
    """One active segment: its current global positions and bookkeeping."""

    __slots__ = ("uid", "pos", "kind", "redundant_local", "skeleton_local")

    def __init__(self, uid, pos, kind):
        self.uid = uid
        self.pos = np.asarray(pos, dtype=np.int64)
        self.kind = kind
        self.redundant_local = None
        self.skeleton_local = None

    @property
    def owner_level(self):
        return self.uid[0]

    @property
    def size(self):
        return self.pos.size


def _digest(arr):
    h = hashlib.blake2b(digest_size=16)
    h.update(str(arr.shape).encode())
    h.update(np.ascontiguousarray(arr).tobytes())
    return h.digest()


class SchurState:
    """Active submatrix kept as dense blocks between segment units.

    Blocks are keyed by ordered unit-id pairs. In symmetric mode only the
    canonical orientation (smaller uid first) is stored; the transpose is
    synthesized on read, so the state stays exactly symmetric. Invariants:
    eliminated positions never retain coupling to active ones, and unit
    vertex lists stay disjoint under splits and merges.
    """

    def __init__(self, n, dtype, symmetric, coords=None, near_radius=None):
        self.n = n
        self.dtype = dtype
        self.symmetric = symmetric
        self.coords = coords
        self.near_radius = near_radius
        self.units = {}
        self.blocks = {}
        self.nbrs = {}
        self.pos_unit = np.full(n, -1, dtype=np.int64)
        self.local_pos = np.full(n, -1, dtype=np.int64)
        self.level = 0
        self.unit_ids = []
        self.audit = False
        self.audit_log = []
        self.stat_rows = []

    # -- unit bookkeeping ---------------------------------------------------

    def add_unit(self, uid, pos, kind):
        unit = _Unit(uid, pos, kind)
        serial = len(self.unit_ids)
        self.unit_ids.append(uid)
        self.units[uid] = unit
        self.nbrs[uid] = set()
        self.pos_unit[unit.pos] = serial
        self.local_pos[unit.pos] = np.arange(unit.pos.size)
        return unit

    def active_ids(self):
        return sorted(self.units)

    def uid_at_position(self, pos):
        serial = self.pos_unit[pos]
        return None if serial < 0 else self.unit_ids[serial]

    # -- block access ---------------------------------------------------------

    def _canonical(self, a, b):
        if self.symmetric and b < a:
            return (b, a), True
        return (a, b), False

    def read_block(self, a, b):
        """Dense coupling of a's rows to b's columns (copy-safe to stack)."""
        key, flipped = self._canonical(a, b)
        arr = self.blocks.get(key)
        if arr is None:
            return None
        return arr.T if flipped else arr

    def add_to_block(self, a, b, delta, rows=None, cols=None):
        """Accumulate delta into block (a, b), creating it when absent."""
        key, flipped = self._canonical(a, b)
        if flipped:
            a, b = b, a
            delta = delta.T
            rows, cols = cols, rows
        arr = self.blocks.get(key)
        if arr is None:
            arr = np.zeros((self.units[a].size, self.units[b].size),
                           dtype=self.dtype)
            self.blocks[key] = arr
            if a != b:
                self.nbrs[a].add(b)
                self.nbrs[b].add(a)
                if not self.symmetric:
                    mirror = (b, a)
                    if mirror not in self.blocks:
                        self.blocks[mirror] = np.zeros(
                            (self.units[b].size, self.units[a].size),
                            dtype=self.dtype)
        if rows is None and cols is None:
            arr += delta
        elif cols is None:
            arr[rows, :] += delta
        elif rows is None:
            arr[:, cols] += delta
        else:
            arr[np.ix_(rows, cols)] += delta

    def set_block(self, a, b, value):
        key, flipped = self._canonical(a, b)
        self.blocks[key] = value.T.copy() if flipped else value
        if a != b:
            self.nbrs[a].add(b)
            self.nbrs[b].add(a)

    def drop_unit(self, uid):
        """Remove a unit and every block touching it."""
        unit = self.units.pop(uid)
        self.pos_unit[unit.pos] = -1
        self.local_pos[unit.pos] = -1
        for v in self.nbrs.pop(uid, set()):
            self.nbrs[v].discard(uid)
            for key in ((uid, v), (v, uid)):
                self.blocks.pop(key, None)
        self.blocks.pop((uid, uid), None)

    def total_block_entries(self):
        return sum(arr.size for arr in self.blocks.values())

    # -- write audit ----------------------------------------------------------

    def snapshot_outside(self, allowed):
        """Digest every block not fully inside the allowed unit set."""
        if not self.audit:
            return None
        return {key: _digest(arr) for key, arr in self.blocks.items()
                if key[0] not in allowed or key[1] not in allowed}

    def check_outside(self, before, allowed, where):
        if not self.audit:
            return
        after = {key: _digest(arr) for key, arr in self.blocks.items()
                 if key[0] not in allowed or key[1] not in allowed}
        bad = []
        for key, dig in after.items():
            if key not in before:
                bad.append(("created", key))
            elif before[key] != dig:
                bad.append(("modified", key))
        for key in before:
            if key not in after:
                bad.append(("deleted", key))
        self.audit_log.append({"op": where, "violations": bad})


def _resolve_symmetric(csr, mode):
    if mode is True or mode is False:
        return bool(mode)
    if mode != "auto":
        raise ConfigError(f"symmetric_mode must be 'auto' or a bool, got {mode!r}")
    if np.issubdtype(csr.dtype, np.complexfloating):
        return False
    if csr.nnz == 0:
        return True
    gap = abs(csr - csr.T)
    scale = np.abs(csr.data).max()
    return gap.nnz == 0 or gap.data.max() <= 1e-14 * scale


def _median_edge_length(graph, cap=200_000):
    """Median geometric length over (a sample of) the graph's edges."""
    src = np.repeat(np.arange(graph.n), np.diff(graph.indptr))
    dst = graph.indices
    keep = src < dst
    src, dst = src[keep], dst[keep]
    if src.size == 0:
        return 1.0
    if src.size > cap:
        src, dst = src[:cap], dst[:cap]
    d = graph.coords[src] - graph.coords[dst]
    return float(np.median(np.hypot(d[:, 0], d[:, 1])))


def _as_csr(a):
    csr = a.csr if isinstance(a, SparseMatrix) else sp.csr_matrix(a)
    if csr.shape[0] != csr.shape[1]:
        raise DimensionError("factorization needs a square matrix")
    dtype = np.promote_types(csr.dtype, np.float64)
    if csr.dtype != dtype:
        csr = csr.astype(dtype)
    return csr


def _symmetric_elimination(self_block, a_nu, level, segment, tag):
    """LDL-based elimination payloads for a symmetric self block."""
    k = self_block.shape[0]
    if k == 0:
        empty = np.zeros((0, 0))
        return SymEliminationFactor(
            idx=np.empty(0, np.int64), nbr=np.empty(0, np.int64),
            lower_perm=empty, perm=np.empty(0, np.int64), coupling=a_nu,
            dinv=empty, level=level, tag=tag), np.zeros((a_nu.shape[0],) * 2)
    hermitian = not np.issubdtype(self_block.dtype, np.complexfloating)
    try:
        lu, d, perm = sla.ldl(self_block, hermitian=hermitian)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - scipy raises rarely
        raise SingularBlockError(str(exc), level=level, segment=segment)
    lower = lu[perm]
    if not np.all(np.isfinite(lower)) or not np.all(np.isfinite(d)):
        raise SingularBlockError(
            f"non-finite elimination payload in {k}x{k} block",
            level=level, segment=segment)
    try:
        dinv = np.linalg.inv(d)
    except np.linalg.LinAlgError:
        raise SingularBlockError(
            f"singular diagonal in {k}x{k} block", level=level, segment=segment)
    # t1 = lu^-1 A[idx, nbr]; coupling = (dinv @ t1).T = A[nbr, idx] lu^-T d^-1
    t1 = triangular_solve(lower, a_nu.T[perm], lower=True, unit_diag=True)
    coupling = (dinv @ t1).T
    schur = coupling @ t1
    factor = SymEliminationFactor(
        idx=None, nbr=None, lower_perm=lower, perm=perm.astype(np.int64),
        coupling=np.ascontiguousarray(coupling), dinv=dinv, level=level, tag=tag)
    return factor, schur


def _unsymmetric_elimination(self_block, a_nu, a_un, level, segment, tag):
    """Pivoted-LU elimination payloads for a general self block."""
    k = self_block.shape[0]
    lu, _, perm = lu_compact(self_block, level=level, segment=segment)
    if k and not np.all(np.isfinite(lu)):
        raise SingularBlockError(
            f"non-finite elimination payload in {k}x{k} block",
            level=level, segment=segment)
    if k:
        diag = np.abs(np.diagonal(lu))
        if np.any(diag == 0.0):
            raise SingularBlockError(
                f"zero pivot in {k}x{k} block", level=level, segment=segment)
    # coupling_left = A[nbr, idx] U^-1; coupling_right = L^-1 A[idx, nbr][perm]
    c_left = triangular_solve(lu, a_nu.T, lower=False, trans=True).T
    c_right = triangular_solve(lu, a_un[perm], lower=True, unit_diag=True)
    schur = c_left @ c_right
    factor = EliminationFactor(
        idx=None, nbr=None, compact_lu=lu, perm=perm,
        coupling_left=np.ascontiguousarray(c_left),
        coupling_right=np.ascontiguousarray(c_right), level=level, tag=tag)
    return factor, schur


# ---------------------------------------------------------------------------
# Pipeline operations
# ---------------------------------------------------------------------------


def eliminate_interiors(a, tree, options=None):
    """Eliminate every leaf interior; returns (SchurState, factors).

    The Schur complement of each leaf lands on the separator segments
    adjacent to it, so afterwards the active set is exactly the separator
    vertices. A singular leaf block raises SingularBlockError naming the
    leaf's position span.
    """
    opts = (options or FactorOptions()).validate()
    csr = _as_csr(a)
    n = csr.shape[0]
    if tree.order is None or tree.order.n != n:
        raise DimensionError("dissection tree does not match the matrix size")
    symmetric = _resolve_symmetric(csr, opts.symmetric_mode)
    nested = csr[tree.order.fwd][:, tree.order.fwd].tocsr()
    nested.sort_indices()
    coords = tree.graph.coords[tree.order.fwd]
    radius = opts.near_radius
    if radius is None:
        radius = 2.0 * _median_edge_length(tree.graph)

    state = SchurState(n, nested.dtype, symmetric, coords=coords,
                       near_radius=radius)
    state.audit = opts.audit
    state.level = tree.levels + 1

    for seg in tree.segments_at_stage(tree.levels):
        pos = np.sort(tree.position[seg.vertices])
        state.add_unit(seg.id, pos, seg.kind)

    _assemble_separator_coupling(state, nested)

    csc = nested.tocsc()
    csc.sort_indices()
    factors = []
    interior_level = tree.levels + 1
    for leaf in tree.leaves:
        s, e = leaf.span
        if e <= s:
            continue
        ii, ext, a_ie, a_ei = _extract_leaf(nested, csc, s, e)
        segment = ("leaf", int(s), int(e))
        if symmetric:
            factor, schur = _symmetric_elimination(
                ii, a_ei, interior_level, segment, "interior")
        else:
            factor, schur = _unsymmetric_elimination(
                ii, a_ei, a_ie, interior_level, segment, "interior")
        factor.idx = np.arange(s, e, dtype=np.int64)
        factor.nbr = ext
        factors.append(factor)
        if ext.size:
            _scatter_schur(state, ext, schur)
    return state, factors


def _extract_leaf(csr, csc, s, e):
    """Dense interior block plus its couplings for positions [s, e)."""
    m = e - s
    lo, hi = csr.indptr[s], csr.indptr[e]
    cols = csr.indices[lo:hi]
    vals = csr.data[lo:hi]
    rows = np.repeat(np.arange(m), np.diff(csr.indptr[s:e + 1]))
    inside = (cols >= s) & (cols < e)
    ii = np.zeros((m, m), dtype=csr.dtype)
    ii[rows[inside], cols[inside] - s] = vals[inside]
    ext_row = np.unique(cols[~inside])

    lo2, hi2 = csc.indptr[s], csc.indptr[e]
    rws = csc.indices[lo2:hi2]
    vls = csc.data[lo2:hi2]
    ccols = np.repeat(np.arange(m), np.diff(csc.indptr[s:e + 1]))
    outside2 = (rws < s) | (rws >= e)
    ext_col = np.unique(rws[outside2])

    ext = np.union1d(ext_row, ext_col).astype(np.int64)
    a_ie = np.zeros((m, ext.size), dtype=csr.dtype)
    sel = ~inside
    a_ie[rows[sel], np.searchsorted(ext, cols[sel])] = vals[sel]
    a_ei = np.zeros((ext.size, m), dtype=csr.dtype)
    a_ei[np.searchsorted(ext, rws[outside2]), ccols[outside2]] = vls[outside2]
    return ii, ext, a_ie, a_ei


def _assemble_separator_coupling(state, nested):
    """Bucket every separator-to-separator entry into its unit block."""
    n = state.n
    coo_rows = np.repeat(np.arange(n), np.diff(nested.indptr))
    coo_cols = nested.indices
    coo_vals = nested.data
    pr = state.pos_unit[coo_rows]
    pc = state.pos_unit[coo_cols]
    keep = (pr >= 0) & (pc >= 0)
    if state.symmetric:
        # store the canonical orientation only (smaller unit id first; unit
        # serials do not follow id order); self blocks keep both halves
        by_uid = sorted(range(len(state.unit_ids)),
                        key=lambda s: state.unit_ids[s])
        rank = np.empty(len(state.unit_ids), dtype=np.int64)
        rank[by_uid] = np.arange(len(state.unit_ids))
        keep &= rank[pr] <= rank[pc]
    pr, pc = pr[keep], pc[keep]
    rows, cols, vals = coo_rows[keep], coo_cols[keep], coo_vals[keep]
    if rows.size == 0:
        return
    m = len(state.unit_ids)
    key = pr * m + pc
    order = np.argsort(key, kind="stable")
    key = key[order]
    rows, cols, vals = rows[order], cols[order], vals[order]
    cuts = np.flatnonzero(np.diff(key)) + 1
    starts = np.concatenate([[0], cuts])
    stops = np.concatenate([cuts, [key.size]])
    for b0, b1 in zip(starts, stops):
        ua = state.unit_ids[key[b0] // m]
        ub = state.unit_ids[key[b0] % m]
        arr = np.zeros((state.units[ua].size, state.units[ub].size),
                       dtype=state.dtype)
        arr[state.local_pos[rows[b0:b1]], state.local_pos[cols[b0:b1]]] = \
            vals[b0:b1]
        state.set_block(ua, ub, arr)
    if not state.symmetric:
        for ua, ub in list(state.blocks):
            if ua != ub and (ub, ua) not in state.blocks:
                state.blocks[(ub, ua)] = np.zeros(
                    (state.units[ub].size, state.units[ua].size),
                    dtype=state.dtype)


def _scatter_schur(state, ext, schur):
    """Subtract the dense Schur update from the touched unit blocks."""
    serials = state.pos_unit[ext]
    if np.any(serials < 0):
        raise DimensionError("Schur update touches an eliminated position")
    order = np.argsort(serials, kind="stable")
    sorted_serials = serials[order]
    cuts = np.flatnonzero(np.diff(sorted_serials)) + 1
    group_slices = np.split(order, cuts)
    groups = [(state.unit_ids[serials[g[0]]], g) for g in group_slices]
    for ua, ga in groups:
        rows_local = state.local_pos[ext[ga]]
        for ub, gb in groups:
            if state.symmetric and ub < ua:
                continue
            cols_local = state.local_pos[ext[gb]]
            state.add_to_block(ua, ub, -schur[np.ix_(ga, gb)],
                               rows=rows_local, cols=cols_local)


def sparsify_segment(state, seg, eps, plan=None, symmetric=None, options=None):
    """Compress one regular segment's coupling; returns (factors, skeleton).

    Computes an interpolative decomposition of the segment's coupling to its
    neighbors (of the stacked in/out coupling in unsymmetric mode), emits the
    two-sided sparsify factor, applies it to the state, and zeroes the
    decoupled entries in storage. The skeleton keeps the segment's global
    positions that still couple outward.
    """
    opts = (options or FactorOptions()).validate()
    if isinstance(seg, _Unit):
        uid = seg.uid
    elif hasattr(seg, "id"):
        uid = seg.id
    else:
        uid = tuple(seg)
    unit = state.units[uid]
    if unit.kind == JUNCTION:
        raise ConfigError("junction segments are merged, never sparsified")
    symmetric = state.symmetric if symmetric is None else symmetric
    m = unit.size
    if m == 0:
        return [], unit.pos.copy()

    nbr_list = sorted(state.nbrs[uid])
    stacks = [state.read_block(v, uid) for v in nbr_list]
    a_nu = np.vstack(stacks) if stacks else np.zeros((0, m), dtype=state.dtype)
    if plan is None:
        plan = _plan_for(state, unit, nbr_list, a_nu.shape[0], opts)
    if symmetric:
        ident = lowrank.sampled_id(a_nu, plan, eps,
                                   refine_swaps=opts.refine_swaps)
    else:
        outs = [state.read_block(uid, v) for v in nbr_list]
        a_un = (np.hstack(outs) if outs
                else np.zeros((m, 0), dtype=state.dtype))
        ident = lowrank.joint_unsymmetric_id(a_nu, a_un, plan, eps,
                                             refine_swaps=opts.refine_swaps)

    skel_l = ident.skeleton
    red_l = ident.redundant
    unit.redundant_local = red_l
    unit.skeleton_local = skel_l
    skeleton = unit.pos[skel_l]
    if red_l.size == 0:
        return [], skeleton

    interp = ident.interp
    factor = SparsifyFactor(skeleton=skeleton, redundant=unit.pos[red_l],
                            interp=interp, level=state.level)

    allowed = {uid} | set(nbr_list)
    before = state.snapshot_outside(allowed)

    self_block = state.read_block(uid, uid)
    if self_block is not None:
        self_block[red_l, :] -= interp.T @ self_block[skel_l, :]
        self_block[:, red_l] -= self_block[:, skel_l] @ interp

    coupling_norm = np.linalg.norm(a_nu) if a_nu.size else 0.0
    interp_norm = np.linalg.norm(interp)
    bound = 10.0 * (1.0 + interp_norm) * eps * coupling_norm
    worst = 0.0
    for v in nbr_list:
        key, flipped = state._canonical(v, uid)
        arr = state.blocks[key]
        if not flipped:
            arr[:, red_l] -= arr[:, skel_l] @ interp
            worst = max(worst, _maxabs(arr[:, red_l]))
            arr[:, red_l] = 0.0
            if not state.symmetric:
                out = state.blocks[(uid, v)]
                out[red_l, :] -= interp.T @ out[skel_l, :]
                worst = max(worst, _maxabs(out[red_l, :]))
                out[red_l, :] = 0.0
        else:
            arr[red_l, :] -= interp.T @ arr[skel_l, :]
            worst = max(worst, _maxabs(arr[red_l, :]))
            arr[red_l, :] = 0.0
    if state.audit:
        state.audit_log.append({"op": ("sparsify", uid), "violations": [],
                                "dropped_max": worst, "drop_bound": bound})
        state.check_outside(before, allowed, ("sparsify", uid))
    return [factor], skeleton


def _maxabs(arr):
    return float(np.abs(arr).max()) if arr.size else 0.0


def _plan_for(state, unit, nbr_list, num_rows, opts):
    if opts.sampling == lowrank.STRATEGY_NONE or num_rows == 0:
        return lowrank.plan_dense(num_rows)
    seed = int(np.random.SeedSequence(
        [opts.seed & 0xFFFFFFFF, state.level]
        + [x & 0xFFFFFFFF for x in unit.uid]).generate_state(1)[0])
    if opts.sampling == lowrank.STRATEGY_GAUSSIAN:
        return lowrank.plan_gaussian(num_rows, unit.size, seed,
                                     oversample=opts.oversample)
    row_pos = np.concatenate([state.units[v].pos for v in nbr_list])
    return lowrank.build_hybrid_plan(
        state.coords[row_pos], state.coords[unit.pos], state.near_radius,
        unit.size, seed, oversample=opts.oversample)


def eliminate_segments(state, level):
    """Eliminate decoupled remainders, then whole level-`level` segments.

    Remainder elimination is internal to each segment (its only remaining
    coupling is to its own skeleton). Segments owned by this level are then
    eliminated entirely, with Schur updates scattered only over their
    neighbor sets. Returns the elimination factors in application order.
    """
    factors = []
    for uid in state.active_ids():
        unit = state.units[uid]
        if unit.redundant_local is None or unit.redundant_local.size == 0:
            unit.redundant_local = None
            unit.skeleton_local = None
            continue
        factors.append(_eliminate_remainder(state, unit, level))
    for uid in state.active_ids():
        unit = state.units[uid]
        if unit.owner_level != level:
            continue
        factors.append(_eliminate_whole(state, unit, level))
    return factors


def _eliminate_remainder(state, unit, level):
    uid = unit.uid
    red = unit.redundant_local
    keep = unit.skeleton_local
    allowed = {uid} | set(state.nbrs[uid])
    before = state.snapshot_outside(allowed)

    block = state.read_block(uid, uid)
    a_rr = block[np.ix_(red, red)]
    a_rk = block[np.ix_(red, keep)]
    a_kr = block[np.ix_(keep, red)]
    if state.symmetric:
        factor, schur = _symmetric_elimination(a_rr, a_kr, level, uid,
                                               "remainder")
    else:
        factor, schur = _unsymmetric_elimination(a_rr, a_kr, a_rk, level, uid,
                                                 "remainder")
    factor.idx = unit.pos[red]
    factor.nbr = unit.pos[keep]

    new_self = block[np.ix_(keep, keep)] - schur
    state.pos_unit[unit.pos[red]] = -1
    state.local_pos[unit.pos[red]] = -1
    unit.pos = unit.pos[keep]
    state.local_pos[unit.pos] = np.arange(unit.pos.size)
    state.blocks[(uid, uid)] = new_self
    for v in sorted(state.nbrs[uid]):
        key, flipped = state._canonical(v, uid)
        arr = state.blocks[key]
        if flipped:
            state.blocks[key] = np.ascontiguousarray(arr[keep, :])
        else:
            state.blocks[key] = np.ascontiguousarray(arr[:, keep])
        if not state.symmetric:
            state.blocks[(uid, v)] = np.ascontiguousarray(
                state.blocks[(uid, v)][keep, :])
    unit.redundant_local = None
    unit.skeleton_local = None
    if state.audit:
        state.check_outside(before, allowed, ("remainder", uid))
    return factor


def _eliminate_whole(state, unit, level):
    uid = unit.uid
    nbr_list = sorted(state.nbrs[uid])
    allowed = {uid} | set(nbr_list)
    before = state.snapshot_outside(allowed)

    self_block = state.read_block(uid, uid)
    if self_block is None:
        self_block = np.zeros((unit.size, unit.size), dtype=state.dtype)
    ins = [state.read_block(v, uid) for v in nbr_list]
    a_nu = (np.vstack(ins) if ins
            else np.zeros((0, unit.size), dtype=state.dtype))
    if state.symmetric:
        factor, schur = _symmetric_elimination(self_block, a_nu, level, uid,
                                               "segment")
    else:
        outs = [state.read_block(uid, v) for v in nbr_list]
        a_un = (np.hstack(outs) if outs
                else np.zeros((unit.size, 0), dtype=state.dtype))
        factor, schur = _unsymmetric_elimination(self_block, a_nu, a_un,
                                                 level, uid, "segment")
    factor.idx = unit.pos.copy()
    factor.nbr = (np.concatenate([state.units[v].pos for v in nbr_list])
                  if nbr_list else np.empty(0, np.int64))

    sizes = [state.units[v].size for v in nbr_list]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    for i, va in enumerate(nbr_list):
        ra = slice(offsets[i], offsets[i + 1])
        for j, vb in enumerate(nbr_list):
            if state.symmetric and vb < va:
                continue
            rb = slice(offsets[j], offsets[j + 1])
            state.add_to_block(va, vb, -schur[ra, rb])
    state.drop_unit(uid)
    if state.audit:
        state.check_outside(before, allowed, ("eliminate", uid))
    return factor


def merge_segments(state, tree, level):
    """Undo this level's split events: children rejoin their parents.

    Events are undone in reverse creation order so nested splits unwind
    cleanly; junction children are absorbed into the parent along with the
    sibling skeletons. Returns the state.
    """
    for event in reversed([e for e in tree.events if e.level == level]):
        kids = [state.units[cid] for cid in event.children]
        for kid in kids:
            if kid.redundant_local is not None:
                raise ConfigError(
                    f"segment {kid.uid} merged with a pending remainder")
        outside = set()
        for kid in kids:
            outside |= state.nbrs[kid.uid] - set(event.children)
        allowed = {event.parent} | set(event.children) | outside
        before = state.snapshot_outside(allowed)

        pos = np.concatenate([k.pos for k in kids]) if kids else \
            np.empty(0, np.int64)
        if pos.size > 1 and np.any(np.diff(pos) <= 0):
            raise DimensionError(
                f"merged segment {event.parent} has out-of-order positions")
        sizes = [k.size for k in kids]
        offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        total = int(offsets[-1])

        self_block = np.zeros((total, total), dtype=state.dtype)
        for i, ka in enumerate(kids):
            for j, kb in enumerate(kids):
                arr = state.read_block(ka.uid, kb.uid)
                if arr is not None:
                    self_block[offsets[i]:offsets[i + 1],
                               offsets[j]:offsets[j + 1]] = arr

        couplings = {}
        couplings_out = {}
        for v in sorted(outside):
            nv = state.units[v].size
            coupling = np.zeros((nv, total), dtype=state.dtype)
            for i, ka in enumerate(kids):
                arr = state.read_block(v, ka.uid)
                if arr is not None:
                    coupling[:, offsets[i]:offsets[i + 1]] = arr
            couplings[v] = coupling
            if not state.symmetric:
                out = np.zeros((total, nv), dtype=state.dtype)
                for i, ka in enumerate(kids):
                    arr = state.read_block(ka.uid, v)
                    if arr is not None:
                        out[offsets[i]:offsets[i + 1], :] = arr
                couplings_out[v] = out

        for cid in event.children:
            state.drop_unit(cid)
        parent_kind = tree.segments[event.parent].kind
        state.add_unit(event.parent, pos, parent_kind)
        if total:
            state.set_block(event.parent, event.parent, self_block)
        for v, coupling in couplings.items():
            if coupling.size:
                state.set_block(v, event.parent,
                                np.ascontiguousarray(coupling))
                if not state.symmetric:
                    state.set_block(event.parent, v, couplings_out[v])
        if state.audit:
            state.check_outside(before, allowed, ("merge", event.parent))
    return state


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------


@dataclass
class SpaluFactorization:
    """Ordered elementary factors plus the nested ordering and statistics.

    factors applies left actions in list order and right actions in reverse
    list order; symmetric-mode factors also carry a block-diagonal middle
    action. level_stats rows are JSON-ready per-stage dicts.
    """

    factors: list
    order: Permutation
    n: int
    eps: float
    symmetric: bool
    dtype: object
    level_stats: list = field(default_factory=list)
    interior_seconds: float = 0.0
    audit_log: list = field(default_factory=list)

    @property
    def qtilde(self):
        ratios = [row["e_l_prime"] / row["e_l"]
                  for row in self.level_stats if row["e_l"] > 0]
        return max(ratios) if ratios else 1.0

    @property
    def factor_nnz(self):
        return int(sum(f.payload_nnz for f in self.factors))

    def stats_json(self):
        return {
            "levels": self.level_stats,
            "qtilde": self.qtilde,
            "factor_nnz": self.factor_nnz,
            "interior_seconds": self.interior_seconds,
            "symmetric": self.symmetric,
            "eps": self.eps,
        }


def factorize(a, tree, eps, options=None):
    """Run the full pipeline and return the factorization.

    Interiors first, then per stage from the deepest separator level to the
    root: sparsify every regular segment, eliminate remainders and the
    stage's own segments, merge split segments back together. Singular
    blocks raise SingularBlockError tagged with level and segment id.
    """
    if not (0.0 < eps < 1.0):
        raise ConfigError(f"eps must lie in (0, 1), got {eps}")
    opts = (options or FactorOptions()).validate()

    t0 = time.perf_counter()
    state, factors = eliminate_interiors(a, tree, options=opts)
    interior_seconds = time.perf_counter() - t0

    level_stats = []
    for level in range(tree.levels, 0, -1):
        state.level = level
        regulars = [uid for uid in state.active_ids()
                    if state.units[uid].kind == REGULAR]

        # Segment sizes are recorded around the actual compression step:
        # segments below the size floor skip the decomposition entirely (the
        # factorization stays exact on them; they are eliminated or merged at
        # full size) and therefore contribute nothing to this stage's
        # compression statistics.
        pre_sizes = []
        post_sizes = []
        t_sp = time.perf_counter()
        for uid in regulars:
            unit = state.units[uid]
            if unit.size < opts.min_sparsify_size:
                continue
            pre_sizes.append(unit.size)
            new_factors, skeleton = sparsify_segment(state, unit, eps,
                                                     options=opts)
            factors.extend(new_factors)
            post_sizes.append(len(skeleton))
        time_sparsify = time.perf_counter() - t_sp

        t_el = time.perf_counter()
        factors.extend(eliminate_segments(state, level))
        merge_segments(state, tree, level)
        time_eliminate = time.perf_counter() - t_el

        level_stats.append({
            "l": level,
            "num_segments": len(regulars),
            "e_l": max(pre_sizes, default=0),
            "e_l_prime": max(post_sizes, default=0),
            "time_sparsify": time_sparsify,
            "time_eliminate": time_eliminate,
        })

    if state.units:
        leftover = sorted(state.units)[:4]
        raise ConfigError(f"active segments remain after the last stage: "
                          f"{leftover}")
    return SpaluFactorization(
        factors=factors, order=tree.order, n=state.n, eps=eps,
        symmetric=state.symmetric, dtype=state.dtype,
        level_stats=level_stats, interior_seconds=interior_seconds,
        audit_log=state.audit_log)
