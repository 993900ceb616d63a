"""Lowest-order edge-element discretization of the modified Maxwell Steklov
problem.

The pencil is (K_curl - omega^2 M_eps) u = lambda B u with

    K_curl = <mu_inv curl u, curl u'>,   M_eps = <eps u, u'>,

and B the boundary Gram form of the smoothing operator (boundary_ops).  Edge
basis functions are oriented globally low -> high vertex index, which makes
assembly deterministic and gives the discrete complex identity
K_curl . G = 0 for the vertex-to-edge gradient matrix G.

Eigenvectors of the pencil are discretely eps-divergence-free; project_Vh
realizes the corresponding projection by subtracting the gradient of a
mean-zero scalar potential solved from the eps-weighted Laplacian G^T M_eps G.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._assembly import P1_TET_MASS, scatter_square
from .boundary_ops import BoundaryGram, SurfaceOperatorSet, assemble_boundary_form
from .errors import ConfigError, SolverFailure
from .materials import MaterialField
from .mesh import LOCAL_EDGES, Mesh


@dataclass
class MaxwellPencil:
    """Sparse pencil (K_curl - omega^2 M_eps) u = lambda B u on edge dofs."""

    K_curl: sp.csr_matrix
    M_eps: sp.csr_matrix
    B: BoundaryGram
    G: sp.csr_matrix                      # edges x vertices discrete gradient
    omega: float
    mesh: Mesh = field(repr=False)
    ops: SurfaceOperatorSet = field(repr=False)
    _a0: sp.csr_matrix | None = field(default=None, repr=False)
    _proj_lu: object = field(default=None, repr=False)

    @property
    def n_dofs(self):
        return self.K_curl.shape[0]

    def a0(self) -> sp.csr_matrix:
        if self._a0 is None:
            self._a0 = (self.K_curl.astype(np.complex128) - (self.omega**2) * self.M_eps).tocsr()
        return self._a0


@dataclass
class ProjectionResult:
    projected: np.ndarray
    potential: np.ndarray     # mean-zero vertex potential
    residual: float


def discrete_gradient(mesh: Mesh) -> sp.csr_matrix:
    """G[e, hi] = +1, G[e, lo] = -1: edge dofs of the gradient of a vertex field."""
    ne = mesh.n_edges
    rows = np.repeat(np.arange(ne), 2)
    cols = mesh.edges.ravel()
    data = np.tile([-1.0, 1.0], ne)
    return sp.coo_matrix((data, (rows, cols)), shape=(ne, mesh.n_vertices)).tocsr()


def edge_mass_matrix(mesh: Mesh, tensors=None) -> sp.csr_matrix:
    """<A u, u'> for edge elements; ``tensors`` (T, 3, 3) or None for identity."""
    g = mesh.tet_gradients
    if tensors is None:
        C = np.einsum("tic,tjc->tij", g, g)
    else:
        C = np.einsum("tic,tcd,tjd->tij", g, tensors, g)
    a = LOCAL_EDGES[:, 0]
    b = LOCAL_EDGES[:, 1]
    P = P1_TET_MASS
    local = (
        P[np.ix_(a, a)] * C[:, b[:, None], b[None, :]]
        - P[np.ix_(a, b)] * C[:, b[:, None], a[None, :]]
        - P[np.ix_(b, a)] * C[:, a[:, None], b[None, :]]
        + P[np.ix_(b, b)] * C[:, a[:, None], a[None, :]]
    )
    s = mesh.tet_edge_signs
    local *= s[:, :, None] * s[:, None, :]
    local *= mesh.volumes[:, None, None]
    local = 0.5 * (local + local.transpose(0, 2, 1))
    return scatter_square(local, mesh.tet_edges, mesh.n_edges)


def curl_curl_matrix(mesh: Mesh, tensors) -> sp.csr_matrix:
    """<A curl u, curl u'> for edge elements; curls are constant per element."""
    g = mesh.tet_gradients
    a = LOCAL_EDGES[:, 0]
    b = LOCAL_EDGES[:, 1]
    curls = 2.0 * np.cross(g[:, a], g[:, b])          # (T, 6, 3)
    curls = curls * mesh.tet_edge_signs[:, :, None]
    local = np.einsum("tic,tcd,tjd->tij", curls, tensors, curls)
    local *= mesh.volumes[:, None, None]
    local = 0.5 * (local + local.transpose(0, 2, 1))
    return scatter_square(local, mesh.tet_edges, mesh.n_edges)


def assemble_maxwell(mesh: Mesh, mu_inv: MaterialField, eps: MaterialField,
                     omega: float, ops: SurfaceOperatorSet) -> MaxwellPencil:
    """Assemble the Maxwell pencil; piecewise-constant coefficients are
    integrated exactly (the integrands are at most quadratic)."""
    if omega == 0:
        raise ValueError("omega must be nonzero for the Maxwell pencil")
    if mu_inv.name != "mu_inv" or eps.name != "eps":
        raise ConfigError("fields must be passed as (mu_inv, eps)")
    for fld in (mu_inv, eps):
        if fld.mesh is not mesh and not np.array_equal(fld.mesh.tets, mesh.tets):
            raise ConfigError(f"field {fld.name!r} was built on a different mesh")
    if ops.mesh is not mesh:
        raise ConfigError("surface operators belong to a different mesh")

    K = curl_curl_matrix(mesh, np.ascontiguousarray(mu_inv.tensors.real))
    M = edge_mass_matrix(mesh, eps.tensors)
    B = assemble_boundary_form(ops)
    G = discrete_gradient(mesh)
    return MaxwellPencil(K, M, B, G, float(omega), mesh, ops)


def project_Vh(pencil: MaxwellPencil, u, eps: MaterialField | None = None,
               tol: float = 1e-10) -> ProjectionResult:
    """Remove the eps-weighted gradient part: u - grad w with

        G^T M_eps G w = G^T M_eps u,   w mean-zero.

    With ``eps`` None the pencil's own mass matrix is reused (factorization
    cached); passing a field re-assembles the weighted mass.
    """
    u = np.asarray(u, dtype=np.complex128)
    mesh = pencil.mesh
    G = pencil.G
    if eps is None:
        M = pencil.M_eps
        lu = pencil._proj_lu
    else:
        M = edge_mass_matrix(mesh, eps.tensors)
        lu = None
    L_eps = (G.T @ (M @ G)).tocsc()
    if lu is None:
        lu = spla.splu(L_eps[1:, 1:])
        if eps is None:
            pencil._proj_lu = lu

    rhs = G.T @ (M @ u)
    w = np.zeros(mesh.n_vertices, dtype=np.complex128)
    w[1:] = lu.solve(rhs[1:])
    lumped = np.zeros(mesh.n_vertices)
    np.add.at(lumped, mesh.tets.ravel(), np.repeat(mesh.volumes / 4.0, 4))
    w -= (lumped @ w) / lumped.sum()

    resid = np.linalg.norm(L_eps @ w - rhs)
    # anchor the scale to the operator so a numerically zero right-hand side
    # (input already divergence-free) is not flagged
    lscale = abs(L_eps).max()
    denom = np.linalg.norm(rhs) + lscale * (1.0 + np.linalg.norm(w))
    rel = float(resid / denom)
    if not np.isfinite(rel) or rel > tol:
        raise SolverFailure(f"projection scalar solve residual {rel:.2e} > {tol:.1e}")
    return ProjectionResult(u - G @ w, w, rel)


def kernel_subspace_basis(mesh: Mesh):
    """Orthonormal basis of the spanned part of the discrete smoothing-operator
    kernel: all gradients plus all interior-edge unit fields.

    Returns (Q, info): Q is (n_edges, r) orthonormal; info records the
    subspace dimension and, for comparison, the dimension of the full kernel
    of the coupling matrix implied by its rank, so an unspanned remainder is
    detectable rather than silent.
    """
    ne = mesh.n_edges
    interior = mesh.interior_edge_ids
    G = discrete_gradient(mesh)
    Z = np.zeros((ne, mesh.n_vertices + len(interior)))
    Z[:, :mesh.n_vertices] = G.toarray()
    Z[interior, mesh.n_vertices + np.arange(len(interior))] = 1.0
    Q, R, _ = scipy.linalg.qr(Z, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > 1e-12 * diag[0]))
    Q = np.ascontiguousarray(Q[:, :rank])
    info = {"subspace_dim": rank, "n_edges": ne, "n_interior_edges": int(len(interior))}
    return Q, info


def kernelS_diagnostic(pencil: MaxwellPencil, basis=None, return_details=False):
    """Smallest singular value (normalized by the largest) of the pencil
    matrix compressed to the spanned kernel subspace of the smoothing
    operator.

    A value near zero signals that the variational problem restricted to that
    subspace is (numerically) singular at this omega, breaking the
    well-posedness assumption behind the eigenvalue problem.  The details
    report the subspace dimension and the rank of the coupling matrix so a
    kernel remainder not covered by gradients + interior edges is visible.
    """
    if basis is None:
        Q, info = kernel_subspace_basis(pencil.mesh)
    else:
        Q, info = basis
    A = pencil.a0()
    AQ = A @ Q
    proj = Q.T @ AQ
    s = scipy.linalg.svdvals(proj)
    sigma = float(s[-1] / s[0]) if s[0] > 0 else 0.0

    if not return_details:
        return sigma
    D = pencil.ops.D
    bed = pencil.mesh.boundary_edge_ids
    Db = np.asarray(D[:, bed].todense())
    sd = scipy.linalg.svdvals(Db)
    rank_D = int(np.sum(sd > 1e-12 * sd[0])) if sd.size and sd[0] > 0 else 0
    details = dict(info)
    details["rank_D"] = rank_D
    details["kernel_dim_from_rank"] = pencil.n_dofs - rank_D
    details["unspanned_kernel_dim"] = details["kernel_dim_from_rank"] - info["subspace_dim"]
    details["sigma_min"] = sigma
    return sigma, details
