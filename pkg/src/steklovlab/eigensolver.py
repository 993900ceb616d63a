"""Generalized eigensolvers for pencils A0 u = lambda B u with complex
symmetric A0 and real symmetric PSD (typically singular) B.

The singular B makes the pencil have infinite eigenvalues; in shift-invert
coordinates theta = 1/(lambda - sigma) they collapse to theta = 0 and are
discarded below a relative cutoff.  Every reported pair carries a residual
certificate

    ||A0 x - lambda B x|| / (||A0 x|| + |lambda| ||B x||) <= tol,

so downstream consumers never rely on solver-internal convergence estimates.

The Arnoldi driver runs with full reorthogonalization and deterministic
seeded start vectors, and locks converged Ritz vectors between restarts;
restarting orthogonally to the locked set is what recovers the remaining
copies of (numerically) multiple eigenvalues, which a single Krylov vector
cannot see.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AssumptionViolation, ShiftAtEigenvalue

DEFAULT_DENSE_LIMIT = 3000
DEFAULT_THETA_CUT = 1e-10


@dataclass
class EigenResult:
    """Certified eigenpairs plus optional clustering information."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None
    residuals: np.ndarray
    cluster_labels: np.ndarray | None = None
    cluster_sizes: np.ndarray | None = None
    cluster_means: np.ndarray | None = None      # indexed by cluster label
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.eigenvalues)


@dataclass
class SectorCensus:
    inside: int
    outside: int
    in_disk: int
    delta: float
    radius: float

    def as_dict(self):
        return {
            "inside": self.inside,
            "outside": self.outside,
            "in_disk": self.in_disk,
            "delta": self.delta,
            "radius": self.radius,
        }


# --------------------------------------------------------------------- #
# operator plumbing
# --------------------------------------------------------------------- #

def _b_matvec(B):
    if sp.issparse(B):
        return lambda v: B @ v
    if hasattr(B, "matvec"):
        return B.matvec
    B = np.asarray(B)
    return lambda v: B @ v


def _a_matvec(A0):
    if sp.issparse(A0):
        return lambda v: A0 @ v
    A0 = np.asarray(A0)
    return lambda v: A0 @ v


def _a0_norm(A0):
    """Max row sum of |A0| (infinity norm)."""
    if sp.issparse(A0):
        return float(abs(A0).sum(axis=1).max())
    return float(np.abs(np.asarray(A0)).sum(axis=1).max())


def pencil_residual(A0, B, lam, x, a0_norm=None):
    """Normwise relative residual of a candidate pair (lam, x):

        ||A0 x - lam B x|| / (||A0||_inf ||x|| + |lam| ||B x||).

    Anchoring the denominator at the matrix norm keeps the certificate
    meaningful for lam = 0 eigenpairs (A0 x itself is the residual there,
    so a vector-based denominator would degenerate to ratio one).
    """
    av = _a_matvec(A0)(x)
    bv = _b_matvec(B)(x)
    num = np.linalg.norm(av - lam * bv)
    if a0_norm is None:
        a0_norm = _a0_norm(A0)
    den = a0_norm * np.linalg.norm(x) + abs(lam) * np.linalg.norm(bv)
    return float(num / den) if den > 0 else np.inf


class _ShiftedSolver:
    """Factorization of (A0 - sigma B) with an apply for (A0 - sigma B)^-1 B.

    For a matrix-free boundary Gram form B = D^T L^+ D the shifted solve is
    done through the sparse augmented system

        [A0  -sigma D^T] [x]   [b]
        [D      -L     ] [y] = [0]   (one surface row grounded),

    which avoids densifying B; the grounded row is harmless because D^T
    annihilates constant surface functions.
    """

    def __init__(self, A0, B, sigma, probe_seed=0):
        self.b_mv = _b_matvec(B)
        self.sigma = complex(sigma)
        n = A0.shape[0]
        self.n = n

        if sp.issparse(A0) and hasattr(B, "ops"):
            ops = B.ops
            D = ops.D.tocsr()
            L = ops.L.tolil()
            ns = D.shape[0]
            D0 = D.tolil()
            D0[0, :] = 0.0
            C = (-L).tolil()
            C[0, :] = 0.0
            C[0, 0] = 1.0
            aug = sp.bmat(
                [[A0.astype(np.complex128), -self.sigma * D.T], [D0.tocsr(), C.tocsr()]],
                format="csc",
            )
            try:
                self._lu = spla.splu(aug)
            except RuntimeError as exc:
                raise ShiftAtEigenvalue(f"augmented factorization failed: {exc}") from exc
            self._mode = "augmented"
            self._ns = ns
        elif sp.issparse(A0):
            Bm = B if sp.issparse(B) else sp.csr_matrix(np.asarray(B))
            shifted = (A0.astype(np.complex128) - self.sigma * Bm).tocsc()
            try:
                self._lu = spla.splu(shifted)
            except RuntimeError as exc:
                raise ShiftAtEigenvalue(f"factorization failed: {exc}") from exc
            self._mode = "sparse"
        else:
            A0 = np.asarray(A0, dtype=np.complex128)
            Bm = np.asarray(B.to_sparse().todense()) if hasattr(B, "to_sparse") else np.asarray(B)
            shifted = A0 - self.sigma * Bm
            try:
                self._lu = scipy.linalg.lu_factor(shifted)
            except scipy.linalg.LinAlgError as exc:
                raise ShiftAtEigenvalue(f"dense factorization failed: {exc}") from exc
            self._mode = "dense"

        self._a_mv = _a_matvec(A0)
        self._probe(probe_seed)

    def solve_shifted(self, b):
        if self._mode == "augmented":
            rhs = np.concatenate([b, np.zeros(self._ns, dtype=np.complex128)])
            return self._lu.solve(rhs)[: self.n]
        if self._mode == "sparse":
            return self._lu.solve(b.astype(np.complex128))
        return scipy.linalg.lu_solve(self._lu, b.astype(np.complex128))

    def apply(self, v):
        """(A0 - sigma B)^-1 (B v)."""
        return self.solve_shifted(self.b_mv(v))

    def _probe(self, seed):
        # backward-stable solves keep this tiny; a (near-)singular shifted
        # pencil leaves an O(1) relative residual
        rng = np.random.default_rng(seed)
        b = rng.standard_normal(self.n) + 1j * rng.standard_normal(self.n)
        x = self.solve_shifted(b)
        resid = np.linalg.norm(self._a_mv(x) - self.sigma * self.b_mv(x) - b)
        if not np.isfinite(resid) or resid > 1e-6 * np.linalg.norm(b):
            raise ShiftAtEigenvalue(
                f"shifted pencil at sigma={self.sigma} is numerically singular "
                f"(probe residual {resid:.2e})"
            )


# --------------------------------------------------------------------- #
# dense oracle
# --------------------------------------------------------------------- #

def solve_dense_oracle(A0, B, dense_limit=DEFAULT_DENSE_LIMIT,
                       theta_cut=DEFAULT_THETA_CUT, residual_tol=1e-10) -> EigenResult:
    """Brute-force reference: all finite eigenvalues of the pencil via the
    dense spectrum of A0^-1 B.

    Requires A0 invertible (equivalently lambda = 0 is not an eigenvalue);
    eigenvalues of A0^-1 B below the relative cutoff are the infinite modes
    of the singular pencil and are discarded.  Reported pairs are certified
    at ``residual_tol``; uncertified ones are dropped and counted in meta.
    """
    A0 = np.asarray(A0.todense()) if sp.issparse(A0) else np.asarray(A0)
    if hasattr(B, "to_sparse"):
        B = B.to_sparse()
    Bd = np.asarray(B.todense()) if sp.issparse(B) else np.asarray(B)
    n = A0.shape[0]
    if n > dense_limit:
        raise ValueError(f"problem size {n} exceeds dense limit {dense_limit}")

    A0c = A0.astype(np.complex128)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu = scipy.linalg.lu_factor(A0c)
    except scipy.linalg.LinAlgError as exc:
        raise AssumptionViolation(f"A0 is singular (lambda=0 eigenvalue): {exc}") from exc
    diag = np.abs(np.diag(lu[0]))
    if diag.min() <= 1e-14 * diag.max():
        raise AssumptionViolation("A0 is numerically singular (lambda=0 is an eigenvalue)")

    T = scipy.linalg.lu_solve(lu, Bd.astype(np.complex128))
    theta, X = scipy.linalg.eig(T)
    keep = np.abs(theta) > theta_cut * np.abs(theta).max()
    lam = 1.0 / theta[keep]
    X = X[:, keep]

    a0n = _a0_norm(A0c)
    residuals = np.array([pencil_residual(A0c, Bd, l, X[:, j], a0n) for j, l in enumerate(lam)])
    certified = residuals <= residual_tol
    order = np.argsort(np.abs(lam[certified]), kind="stable")
    lam_out = lam[certified][order]
    vec_out = X[:, certified][:, order]
    res_out = residuals[certified][order]
    return EigenResult(
        eigenvalues=lam_out,
        eigenvectors=vec_out,
        residuals=res_out,
        meta={
            "method": "dense_oracle",
            "discarded_infinite": int(np.sum(~keep)),
            "discarded_uncertified": int(np.sum(~certified)),
            "residual_tol": residual_tol,
        },
    )


# --------------------------------------------------------------------- #
# shift-invert Arnoldi with locking
# --------------------------------------------------------------------- #

def _arnoldi(apply_op, n, m, v0, locked):
    """Full-reorthogonalization Arnoldi, deflated against ``locked`` columns.

    Returns (V, H, steps, breakdown, beta); on breakdown the captured space
    is invariant and beta = 0, otherwise beta is the trailing coupling
    H[m, m-1] used for cheap Ritz convergence estimates.
    """
    V = np.zeros((n, m + 1), dtype=np.complex128)
    H = np.zeros((m + 1, m), dtype=np.complex128)

    def deflate(w):
        if locked is not None and locked.shape[1]:
            w = w - locked @ (locked.conj().T @ w)
            w = w - locked @ (locked.conj().T @ w)
        return w

    v = deflate(v0.astype(np.complex128))
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return V[:, :0], H[:0, :0], 0, True, 0.0

    V[:, 0] = v / nv
    for j in range(m):
        w = apply_op(V[:, j])
        w = deflate(w)
        h = V[:, : j + 1].conj().T @ w
        w = w - V[:, : j + 1] @ h
        h2 = V[:, : j + 1].conj().T @ w
        w = w - V[:, : j + 1] @ h2
        h = h + h2
        H[: j + 1, j] = h
        beta = np.linalg.norm(w)
        H[j + 1, j] = beta
        scale = np.abs(h).max() if np.abs(h).max() > 0 else 1.0
        if beta <= 1e-12 * scale or beta == 0.0:
            return V[:, : j + 1], H[: j + 1, : j + 1], j + 1, True, 0.0
        V[:, j + 1] = w / beta
    return V[:, :m], H[:m, :m], m, False, float(np.abs(H[m, m - 1]))


def solve_shift_invert(A0, B, sigma, k, tol=1e-10, krylov_dim=None,
                       max_krylov=None, max_sweeps=12, theta_cut=DEFAULT_THETA_CUT,
                       seed=0) -> EigenResult:
    """Shift-invert Arnoldi for the k eigenvalues nearest ``sigma``.

    ``B`` may be a sparse matrix or a matrix-free boundary Gram form.  Ritz
    values theta map back through lambda = sigma + 1/theta; near-zero theta
    are infinite-eigenvalue modes of the singular pencil and are never
    reported.  Converged pairs are locked and the iteration restarts in
    their orthogonal complement until k pairs are certified, the Krylov
    space is exhausted (meta["exhausted"]), or the sweep budget runs out
    (meta["partial"]).
    """
    n = A0.shape[0]
    k = int(k)
    if k < 1:
        raise ValueError("k must be >= 1")
    solver = _ShiftedSolver(A0, B, sigma)
    sigma = complex(sigma)
    a0n = _a0_norm(A0)

    m0 = krylov_dim or max(3 * k + 20, 60)
    if max_krylov is None:
        max_krylov = max(2 * m0, 150)
    m0 = min(m0, n, max_krylov)

    locked_vecs = np.zeros((n, 0), dtype=np.complex128)
    locked_vals: list[complex] = []
    locked_res: list[float] = []
    total_iters = 0
    exhausted = False
    stale_sweeps = 0

    def k_nearest_radius():
        if len(locked_vals) < k:
            return np.inf
        dist = np.sort(np.abs(np.array(locked_vals) - sigma))
        return dist[k - 1]

    for sweep in range(max_sweeps):
        rng = np.random.default_rng(seed + 1000 * sweep)
        v0 = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        # later sweeps only chase the remaining copies near sigma
        m = m0 if sweep == 0 else min(m0, max(2 * (k - len(locked_vals)) + 10, 30))
        new_pairs = []
        breakdown = False
        while True:
            V, H, steps, breakdown, beta = _arnoldi(solver.apply, n, m, v0, locked_vecs)
            total_iters += steps
            if steps == 0:
                exhausted = True
                break
            theta, Y = scipy.linalg.eig(H[:steps, :steps])
            tmax = np.abs(theta).max() if len(theta) else 0.0
            new_pairs = []
            if tmax > 0:
                finite = np.nonzero(np.abs(theta) > theta_cut * tmax)[0]
                # certify dominant Ritz values first; the Arnoldi coupling
                # beta |y_m| prefilters clearly unconverged candidates, a
                # patience counter stops wasted certification far from sigma
                order = finite[np.argsort(-np.abs(theta[finite]), kind="stable")]
                budget = (k - len(locked_vals)) + 10
                failures = 0
                for j in order:
                    if len(new_pairs) >= budget or failures >= 10:
                        break
                    if beta * np.abs(Y[steps - 1, j]) > 0.1 * np.abs(theta[j]):
                        continue
                    lam = sigma + 1.0 / theta[j]
                    x = V[:, :steps] @ Y[:, j]
                    nx = np.linalg.norm(x)
                    if nx == 0.0:
                        continue
                    x = x / nx
                    res = pencil_residual(A0, B, lam, x, a0n)
                    if res <= tol:
                        new_pairs.append((lam, x, res))
                        failures = 0
                    else:
                        failures += 1
            if new_pairs or breakdown or m >= min(n, max_krylov):
                break
            m = min(2 * m, n, max_krylov)
        if breakdown and not new_pairs:
            exhausted = True

        if not new_pairs:
            stale_sweeps += 1
            if exhausted or stale_sweeps >= 2:
                break
            continue
        stale_sweeps = 0
        radius_before = k_nearest_radius()
        added_closer = False
        for lam, x, res in new_pairs:
            # the sweep ran deflated, so x is already independent of the
            # locked set; a certified duplicate of a simple eigenvalue cannot
            # occur orthogonally to its own eigenvector
            locked_vecs = np.concatenate([locked_vecs, x[:, None]], axis=1)
            locked_vals.append(lam)
            locked_res.append(res)
            if abs(lam - sigma) < radius_before:
                added_closer = True
        # stop only once a deflated restart no longer changes the k nearest:
        # degenerate eigenvalues surface one copy per sweep
        if len(locked_vals) >= k and not added_closer:
            break

    lam = np.array(locked_vals, dtype=np.complex128)
    res = np.array(locked_res)
    order = np.lexsort((lam.imag, lam.real, np.abs(lam - sigma)))
    order = order[: min(k, len(order))]
    result = EigenResult(
        eigenvalues=lam[order],
        eigenvectors=locked_vecs[:, order] if locked_vecs.size else locked_vecs,
        residuals=res[order],
        meta={
            "method": "shift_invert_arnoldi",
            "sigma": sigma,
            "requested": k,
            "converged": int(len(order)),
            "iterations": total_iters,
            "krylov_dim": m0,
            "seed": seed,
            "tol": tol,
            "exhausted": bool(exhausted and len(order) < k),
            "partial": bool(len(order) < k),
        },
    )
    return result


# --------------------------------------------------------------------- #
# clustering and census
# --------------------------------------------------------------------- #

def cluster(values, reltol=1e-6) -> EigenResult:
    """Single-linkage clustering of eigenvalues with relative gap ``reltol``.

    Accepts an EigenResult (labels are attached to a copy) or a plain value
    list.  The cluster mean is the multiplicity-weighted mean of its members
    (each reported value counts with its numerical multiplicity one).
    """
    if isinstance(values, EigenResult):
        base = values
        vals = np.asarray(base.eigenvalues)
    else:
        base = None
        vals = np.asarray(values, dtype=np.complex128)
    n = len(vals)
    if n == 0:
        empty = np.array([], dtype=np.int64)
        return EigenResult(vals, base.eigenvectors if base else None,
                           base.residuals if base else np.array([]),
                           cluster_labels=empty, cluster_sizes=empty,
                           cluster_means=np.array([], dtype=np.complex128),
                           meta=dict(base.meta) if base else {})

    scale = float(np.abs(vals).max())
    thr = reltol * (scale if scale > 0 else 1.0)
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if abs(vals[i] - vals[j]) <= thr:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    roots = np.array([find(i) for i in range(n)])
    labels = np.zeros(n, dtype=np.int64)
    means = []
    sizes = np.zeros(n, dtype=np.int64)
    next_label = 0
    for i in range(n):
        if roots[i] == i:
            members = roots == i
            labels[members] = next_label
            means.append(vals[members].mean())
            sizes[members] = int(members.sum())
            next_label += 1
    return EigenResult(
        vals,
        base.eigenvectors if base else None,
        base.residuals if base else np.full(n, np.nan),
        cluster_labels=labels,
        cluster_sizes=sizes,
        cluster_means=np.array(means),
        meta=dict(base.meta, cluster_reltol=reltol) if base else {"cluster_reltol": reltol},
    )


def sector_census(values, delta, radius) -> SectorCensus:
    """Count eigenvalues with |lambda| <= radius split by |arg lambda| < delta.

    arg(0) counts as inside the sector.
    """
    if not (0.0 < delta < np.pi):
        raise ValueError(f"delta must be in (0, pi), got {delta}")
    vals = np.asarray(values, dtype=np.complex128)
    in_disk = np.abs(vals) <= radius
    args = np.abs(np.angle(vals[in_disk]))
    args[np.abs(vals[in_disk]) == 0.0] = 0.0
    inside = int(np.sum(args < delta))
    outside = int(np.sum(args >= delta))
    return SectorCensus(inside, outside, int(in_disk.sum()), float(delta), float(radius))
