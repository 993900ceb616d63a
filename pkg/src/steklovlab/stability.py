"""Perturbation studies: eigenvalue drift against L^p norms of material
perturbations, log-log rate fits, and first-order drift predictions.

Baseline and perturbed eigenvalues are always computed on the same mesh, so
discretization error cancels and the material effect is isolated.  For a
complex-symmetric pencil the left eigenvectors are the unconjugated right
ones, so all pairings below are bilinear (no conjugation): the nondegeneracy
coefficient is

    c = (1/N) sum_n u_n^T B u_n,

which can vanish for genuinely complex eigenvectors even when B u_n != 0,
and the first-order drift of a tracked semisimple cluster under a pencil
perturbation (delta K - omega^2 delta M) is

    lambda_h - lambda_0 ~= (1/N) sum_n u_n^T (delta K - omega^2 delta M) u_n / c.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._assembly import p1_mass, p1_stiffness
from .boundary_ops import assemble_boundary_form, assemble_surface_operators
from .eigensolver import _b_matvec, cluster, solve_shift_invert
from .errors import AssumptionViolation, DegenerateCluster, InsufficientData
from .fem_maxwell import (
    assemble_maxwell,
    edge_mass_matrix,
    kernelS_diagnostic,
    kernel_subspace_basis,
)
from .fem_scalar import assemble_scalar, scalar_dirichlet_diagnostic
from .materials import PerturbationSpec, build_field, lp_diff_norm
from .mesh import Mesh, extract_boundary


@dataclass
class FitResult:
    slope: float
    intercept: float
    residual: float          # rms deviation in log-log space
    bound_ratio_max: float   # max over steps of (drift/norm) / (drift_0/norm_0)

    def as_dict(self):
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "residual": self.residual,
            "bound_ratio_max": self.bound_ratio_max,
        }


def fit_rate(pairs) -> FitResult:
    """Least squares on (log norm, log drift).

    The first pair is the reference (coarsest) step for the bound-satisfaction
    ratio.  Pairs with nonpositive norm or drift are unusable; fewer than
    three usable pairs raise InsufficientData.
    """
    usable = [(float(n), float(d)) for n, d in pairs if n > 0 and d > 0]
    if len(usable) < 3:
        raise InsufficientData(f"need >= 3 positive (norm, drift) pairs, got {len(usable)}")
    norms = np.array([n for n, _ in usable])
    drifts = np.array([d for _, d in usable])
    slope, intercept = np.polyfit(np.log(norms), np.log(drifts), 1)
    resid = np.log(drifts) - (slope * np.log(norms) + intercept)
    ref = drifts[0] / norms[0]
    ratio = float(np.max((drifts / norms) / ref))
    return FitResult(float(slope), float(intercept), float(np.sqrt(np.mean(resid**2))), ratio)


def normalize_vectors(vectors, gram):
    """Normalize columns in the sesquilinear inner product of ``gram``."""
    vecs = np.array(vectors, dtype=np.complex128, copy=True)
    for j in range(vecs.shape[1]):
        nrm = np.sqrt(np.real(np.conj(vecs[:, j]) @ (gram @ vecs[:, j])))
        if nrm == 0.0:
            raise ValueError("vector with zero norm in the provided inner product")
        vecs[:, j] /= nrm
    return vecs


def nondegeneracy(B, vectors, gram=None) -> complex:
    """Bilinear cluster coefficient c = (1/N) sum_n u_n^T B u_n.

    ``vectors`` are the cluster eigenvectors as columns, normalized in the
    discrete energy inner product (pass ``gram`` to normalize here).
    """
    vecs = np.asarray(vectors, dtype=np.complex128)
    if vecs.ndim == 1:
        vecs = vecs[:, None]
    if vecs.shape[1] == 0:
        raise ValueError("nondegeneracy needs at least one vector")
    if gram is not None:
        vecs = normalize_vectors(vecs, gram)
    bmv = _b_matvec(B)
    vals = [np.asarray(vecs[:, j]) @ bmv(vecs[:, j]) for j in range(vecs.shape[1])]
    return complex(np.mean(vals))


def _c_scale(B, vecs):
    bmv = _b_matvec(B)
    mags = [np.real(np.conj(vecs[:, j]) @ bmv(vecs[:, j])) for j in range(vecs.shape[1])]
    return float(np.mean(mags))


def first_order_prediction(pencil0, pencil_h, vectors, gram=None, c=None,
                           c_threshold=1e-8):
    """Predicted eigenvalue shift lambda_h - lambda_0 for a tracked cluster.

    Both pencils must live on the same mesh; the boundary form is unchanged
    by material perturbations, so the pencil perturbation is
    delta A = (K_h - K_0) - omega^2 (M_h - M_0).  Refuses (DegenerateCluster)
    when |c| falls below ``c_threshold`` relative to the sesquilinear
    cluster average of B, mirroring the failure of the nondegeneracy
    condition.
    """
    vecs = np.asarray(vectors, dtype=np.complex128)
    if vecs.ndim == 1:
        vecs = vecs[:, None]
    if vecs.shape[1] == 0:
        raise ValueError("prediction needs at least one vector")
    if gram is not None:
        vecs = normalize_vectors(vecs, gram)
    B = pencil0.B
    if c is None:
        c = nondegeneracy(B, vecs)
    scale = max(_c_scale(B, vecs), 1e-300)
    if abs(c) <= c_threshold * scale:
        raise DegenerateCluster(
            f"|c| = {abs(c):.3e} below threshold {c_threshold:.1e} x {scale:.3e}"
        )
    delta_a = pencil_h.a0() - pencil0.a0()
    vals = [vecs[:, j] @ (delta_a @ vecs[:, j]) for j in range(vecs.shape[1])]
    return complex(np.mean(vals) / c), complex(c)


# --------------------------------------------------------------------- #
# study driver
# --------------------------------------------------------------------- #

@dataclass
class StudySetup:
    """Inputs of a perturbation study on a fixed mesh."""

    mesh: Mesh
    omega: float
    schedule: list                      # (h, delta) pairs, coarsest first
    problem: str = "maxwell"
    mu_base: dict = field(default_factory=lambda: {1: 1.0})
    eps_base: dict = field(default_factory=lambda: {1: 1.0})
    center: tuple = (0.0, 0.0, 0.0)
    target: str = "eps"
    p_list: tuple = (4.0,)
    sigma: complex = 1.0 + 0.0j
    target_lambda: complex | None = None
    k: int = 12
    tol: float = 1e-11
    cluster_reltol: float = 1e-6
    diag_threshold: float = 1e-6
    step_diagnostics: bool = True
    seed: int = 0
    c_threshold: float = 1e-8


@dataclass
class StepRecord:
    index: int
    h: float
    delta: complex
    status: str                          # ok | lost-track | ambiguous | aborted-*
    norms: dict                          # field -> {p: value}
    diag_sigma: float | None = None
    n_matched: int = 0
    lam: complex | None = None
    drift: float | None = None
    mean_lam: complex | None = None
    mean_drift: float | None = None
    cluster_diameter: float | None = None
    predicted: complex | None = None
    prediction_note: str = ""

    def as_dict(self):
        def cx(z):
            return None if z is None else {"re": z.real, "im": z.imag}

        return {
            "index": self.index,
            "h": self.h,
            "delta": cx(self.delta),
            "status": self.status,
            "norms": {f: {str(p): v for p, v in ps.items()} for f, ps in self.norms.items()},
            "diag_sigma": self.diag_sigma,
            "n_matched": self.n_matched,
            "lambda": cx(self.lam),
            "drift": self.drift,
            "lambda_mean": cx(self.mean_lam),
            "mean_drift": self.mean_drift,
            "cluster_diameter": self.cluster_diameter,
            "predicted": cx(self.predicted),
            "prediction_note": self.prediction_note,
        }


@dataclass
class StudyReport:
    problem: str
    omega: float
    target: str
    p_list: tuple
    lambda0: complex
    cluster_size: int
    c: complex
    guard_radius: float
    baseline_diag: float
    steps: list
    fits: dict                           # p -> FitResult (drift vs target-field norm)
    mean_fits: dict                      # p -> FitResult (mean drift)
    meta: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "problem": self.problem,
            "omega": self.omega,
            "target": self.target,
            "p_list": list(self.p_list),
            "lambda0": {"re": self.lambda0.real, "im": self.lambda0.imag},
            "cluster_size": self.cluster_size,
            "c": {"re": self.c.real, "im": self.c.imag},
            "guard_radius": self.guard_radius,
            "baseline_diag": self.baseline_diag,
            "steps": [s.as_dict() for s in self.steps],
            "fits": {str(p): f.as_dict() for p, f in self.fits.items()},
            "mean_fits": {str(p): f.as_dict() for p, f in self.mean_fits.items()},
            "meta": self.meta,
        }

    def csv_rows(self):
        """Summary rows: h, norms, drifts, predictions."""
        header = ["index", "h", "delta_re", "delta_im", "status"]
        for p in self.p_list:
            header.append(f"norm_mu_inv_p{p:g}")
        for p in self.p_list:
            header.append(f"norm_eps_p{p:g}")
        header += ["drift", "mean_drift", "predicted_re", "predicted_im", "diag_sigma"]
        rows = [header]
        for s in self.steps:
            row = [s.index, s.h, s.delta.real, s.delta.imag, s.status]
            for fld in ("mu_inv", "eps"):
                for p in self.p_list:
                    row.append(s.norms.get(fld, {}).get(p, 0.0))
            row += [
                s.drift, s.mean_drift,
                None if s.predicted is None else s.predicted.real,
                None if s.predicted is None else s.predicted.imag,
                s.diag_sigma,
            ]
            rows.append(row)
        return rows


class _MaxwellProblem:
    def __init__(self, setup):
        self.setup = setup
        self.ops = assemble_surface_operators(extract_boundary(setup.mesh), setup.mesh)
        self.B = assemble_boundary_form(self.ops)
        self._basis = kernel_subspace_basis(setup.mesh)
        self._gram = None

    def assemble(self, mu, eps):
        return assemble_maxwell(self.setup.mesh, mu, eps, self.setup.omega, self.ops)

    def diagnostic(self, pencil):
        return kernelS_diagnostic(pencil, basis=self._basis)

    def gram(self, pencil):
        if self._gram is None:
            self._gram = (pencil.K_curl + edge_mass_matrix(self.setup.mesh)).tocsr()
        return self._gram


class _ScalarProblem:
    def __init__(self, setup):
        self.setup = setup
        self.B = None          # set after first assembly (boundary mass)
        self._gram = None

    def assemble(self, mu, eps):
        pencil = assemble_scalar(self.setup.mesh, mu, eps, self.setup.omega)
        if self.B is None:
            self.B = pencil.B_bd
        return pencil

    def diagnostic(self, pencil):
        return scalar_dirichlet_diagnostic(pencil)

    def gram(self, pencil):
        if self._gram is None:
            mesh = self.setup.mesh
            ident = np.broadcast_to(np.eye(3), (mesh.n_tets, 3, 3))
            self._gram = (p1_stiffness(mesh, ident) + p1_mass(mesh, np.ones(mesh.n_tets))).tocsr()
        return self._gram


def run_study(setup: StudySetup) -> StudyReport:
    """Track one eigenvalue cluster across a perturbation schedule.

    Rebuilds the coefficient fields per step, reassembles only the
    coefficient-dependent matrices on the same mesh, resolves near the
    tracked eigenvalue with the shift placed at it, and matches eigenvalues
    by nearest neighbor inside a guard radius of half the baseline gap.
    """
    if setup.problem not in ("maxwell", "scalar"):
        raise ValueError(f"unknown problem {setup.problem!r}")
    prob = _MaxwellProblem(setup) if setup.problem == "maxwell" else _ScalarProblem(setup)

    mu0 = build_field(setup.mesh, "mu_inv", setup.mu_base)
    eps0 = build_field(setup.mesh, "eps", setup.eps_base)
    pencil0 = prob.assemble(mu0, eps0)
    baseline_diag = prob.diagnostic(pencil0)
    if setup.step_diagnostics and baseline_diag < setup.diag_threshold:
        raise AssumptionViolation(
            f"baseline diagnostic {baseline_diag:.3e} below threshold {setup.diag_threshold:.1e}"
        )

    base = solve_shift_invert(pencil0.a0(), prob.B, setup.sigma, setup.k,
                              tol=setup.tol, seed=setup.seed)
    if len(base) == 0:
        raise AssumptionViolation("baseline solve produced no certified eigenvalues")
    clustered = cluster(base, setup.cluster_reltol)
    guess = setup.target_lambda if setup.target_lambda is not None else setup.sigma
    tracked_label = clustered.cluster_labels[int(np.argmin(np.abs(clustered.eigenvalues - guess)))]
    members = clustered.cluster_labels == tracked_label
    lam0 = complex(clustered.cluster_means[tracked_label])
    n_members = int(members.sum())
    other_means = np.array([m for i, m in enumerate(clustered.cluster_means) if i != tracked_label])
    guard = 0.5 * float(np.abs(other_means - lam0).min()) if len(other_means) else np.inf

    gram = prob.gram(pencil0)
    vectors = normalize_vectors(base.eigenvectors[:, members], gram)
    c = nondegeneracy(prob.B, vectors)

    records = []
    for idx, (h, delta) in enumerate(setup.schedule):
        rec = _run_step(setup, prob, pencil0, mu0, eps0, lam0, n_members, guard,
                        vectors, c, idx, float(h), complex(delta))
        records.append(rec)
    records.sort(key=lambda r: r.h)

    fits, mean_fits = {}, {}
    ok = [r for r in records if r.status == "ok"]
    ok_coarse_first = sorted(ok, key=lambda r: -r.h)
    for p in setup.p_list:
        pairs = [(r.norms[setup.target][p], r.drift) for r in ok_coarse_first]
        mean_pairs = [(r.norms[setup.target][p], r.mean_drift) for r in ok_coarse_first]
        try:
            fits[p] = fit_rate(pairs)
            mean_fits[p] = fit_rate(mean_pairs)
        except InsufficientData:
            continue

    return StudyReport(
        problem=setup.problem,
        omega=setup.omega,
        target=setup.target,
        p_list=tuple(setup.p_list),
        lambda0=lam0,
        cluster_size=n_members,
        c=complex(c),
        guard_radius=guard,
        baseline_diag=float(baseline_diag),
        steps=records,
        fits=fits,
        mean_fits=mean_fits,
        meta={
            "sigma": {"re": complex(setup.sigma).real, "im": complex(setup.sigma).imag},
            "seed": setup.seed,
            "k": setup.k,
            "tol": setup.tol,
            "n_steps": len(records),
            "mesh": {"vertices": setup.mesh.n_vertices, "tets": setup.mesh.n_tets,
                     "edges": setup.mesh.n_edges, "kind": setup.mesh.kind},
        },
    )


def _run_step(setup, prob, pencil0, mu0, eps0, lam0, n_members, guard,
              vectors, c, idx, h, delta):
    spec = PerturbationSpec(setup.center, h, delta, setup.target)
    try:
        mu_h = build_field(setup.mesh, "mu_inv", setup.mu_base, [spec])
        eps_h = build_field(setup.mesh, "eps", setup.eps_base, [spec])
    except AssumptionViolation as exc:
        return StepRecord(idx, h, delta, f"aborted-invalid-field: {exc}", {})

    norms = {
        "mu_inv": {p: lp_diff_norm(mu_h, mu0, p) for p in setup.p_list},
        "eps": {p: lp_diff_norm(eps_h, eps0, p) for p in setup.p_list},
    }
    rec = StepRecord(idx, h, delta, "ok", norms)

    if all(v == 0.0 for ps in norms.values() for v in ps.values()):
        # perturbation misses every element: identical pencil, zero drift
        rec.n_matched = n_members
        rec.lam = lam0
        rec.drift = 0.0
        rec.mean_lam = lam0
        rec.mean_drift = 0.0
        rec.cluster_diameter = 0.0
        rec.predicted = 0.0 + 0.0j
        return rec

    pencil_h = prob.assemble(mu_h, eps_h)
    if setup.step_diagnostics:
        rec.diag_sigma = float(prob.diagnostic(pencil_h))
        if rec.diag_sigma < setup.diag_threshold:
            rec.status = "aborted-diagnostic"
            return rec

    k_step = max(n_members + 4, 6)
    res = solve_shift_invert(pencil_h.a0(), prob.B, lam0, k_step,
                             tol=setup.tol, seed=setup.seed)
    cand = res.eigenvalues[np.abs(res.eigenvalues - lam0) < guard]
    rec.n_matched = int(len(cand))
    if len(cand) == 0:
        rec.status = "lost-track"
        return rec
    if len(cand) > n_members:
        rec.status = "ambiguous"
        return rec

    nearest = cand[int(np.argmin(np.abs(cand - lam0)))]
    mean = complex(cand.mean())
    rec.lam = complex(nearest)
    rec.drift = float(abs(lam0 - nearest))
    rec.mean_lam = mean
    rec.mean_drift = float(abs(lam0 - mean))
    rec.cluster_diameter = float(np.abs(cand[:, None] - cand[None, :]).max()) if len(cand) > 1 else 0.0

    try:
        predicted, _ = first_order_prediction(
            pencil0, pencil_h, vectors, c=c, c_threshold=setup.c_threshold
        )
        rec.predicted = predicted
    except DegenerateCluster as exc:
        rec.prediction_note = str(exc)
    return rec
