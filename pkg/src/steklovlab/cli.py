"""Batch front door: mesh generation, eigenvalue solves, perturbation
studies, and assumption diagnostics.

Subcommands
-----------
mesh      write a mesh JSON for a cube or ball domain
solve     assemble + solve one pencil; writes eigenvalues.csv + solve_meta.json
study     run a perturbation study; writes study_report.json + study_summary.csv
diagnose  evaluate the coefficient and well-posedness checks; exit 2 on failure

Exit codes: 0 success, 1 configuration error, 2 assumption violation
(diagnostic failure), 3 solver failure.  Every failure prints one
machine-parsable line on stderr: ``error: <kind>: <message>``.

Identical config and seed produce byte-identical CSV outputs; no timestamps
or environment-dependent values are written.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boundary_ops import assemble_surface_operators
from .eigensolver import cluster, sector_census, solve_shift_invert
from .errors import (
    AssumptionViolation,
    ConfigError,
    MalformedMeshError,
    SolverFailure,
)
from .fem_maxwell import assemble_maxwell, kernelS_diagnostic
from .fem_scalar import assemble_scalar, scalar_dirichlet_diagnostic
from .materials import PerturbationSpec, build_field, validate
from .mesh import extract_boundary, generate_ball_mesh, generate_cube_mesh, load_mesh, save_mesh
from .stability import StudySetup, run_study

DEFAULT_CENSUS_DELTA = np.pi / 3.0


def _fmt(x) -> str:
    if x is None:
        return ""
    return format(float(x), ".17g")


def _cx(z):
    z = complex(z)
    return {"re": z.real, "im": z.imag}


@dataclass
class RunConfig:
    """Validated run configuration (see README for the JSON schema)."""

    problem: str
    mesh_spec: dict
    omega: float
    materials: dict
    perturbations: list
    sigma: complex = 1.0 + 0.0j
    k: int = 12
    tol: float = 1e-10
    dense_limit: int = 3000
    seed: int = 0
    cluster_reltol: float = 1e-6
    krylov_dim: int | None = None
    max_krylov: int | None = None
    census_delta: float = DEFAULT_CENSUS_DELTA
    census_radius: float | None = None
    diag_threshold: float = 1e-6
    study: dict | None = None

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config root must be a JSON object")
        problem = doc.get("problem")
        if problem not in ("scalar", "maxwell"):
            raise ConfigError(f"problem must be 'scalar' or 'maxwell', got {problem!r}")
        mesh_spec = doc.get("mesh")
        if not isinstance(mesh_spec, dict):
            raise ConfigError("config requires a 'mesh' object")
        if "path" not in mesh_spec and mesh_spec.get("kind") not in ("cube", "ball"):
            raise ConfigError("mesh needs 'path' or kind 'cube'/'ball'")
        try:
            omega = float(doc.get("omega", 0.0))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"omega must be a number: {exc}") from exc
        if problem == "maxwell" and omega == 0.0:
            raise ConfigError("omega must be nonzero for the maxwell problem")

        materials = doc.get("materials")
        if not isinstance(materials, dict) or not {"mu_inv", "eps"} <= set(materials):
            raise ConfigError("materials must provide 'mu_inv' and 'eps' region tables")

        perturbations = []
        for i, p in enumerate(doc.get("perturbations", [])):
            try:
                perturbations.append(PerturbationSpec(
                    tuple(p["center"]),
                    float(p["h"]),
                    complex(p.get("delta_re", 0.0), p.get("delta_im", 0.0)),
                    p.get("target", "eps"),
                ))
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"perturbation #{i} invalid: {exc}") from exc

        solver = doc.get("solver", {})
        sigma = complex(solver.get("sigma_re", 1.0), solver.get("sigma_im", 0.0))
        k = int(solver.get("k", 12))
        if k < 1:
            raise ConfigError("solver.k must be >= 1")
        tol = float(solver.get("tol", 1e-10))
        census = doc.get("census", {})
        diag = doc.get("diagnostics", {})

        study = doc.get("study")
        if study is not None:
            if not isinstance(study, dict) or "schedule" not in study:
                raise ConfigError("study section needs a 'schedule' list")
            for p in study.get("p_list", [4.0]):
                if float(p) < 1.0:
                    raise ConfigError(f"study p values must be >= 1, got {p}")

        return cls(
            problem=problem,
            mesh_spec=mesh_spec,
            omega=omega,
            materials=materials,
            perturbations=perturbations,
            sigma=sigma,
            k=k,
            tol=tol,
            dense_limit=int(solver.get("dense_limit", 3000)),
            seed=int(solver.get("seed", 0)),
            cluster_reltol=float(solver.get("cluster_reltol", 1e-6)),
            krylov_dim=(None if solver.get("krylov_dim") is None else int(solver["krylov_dim"])),
            max_krylov=(None if solver.get("max_krylov") is None else int(solver["max_krylov"])),
            census_delta=float(census.get("delta", DEFAULT_CENSUS_DELTA)),
            census_radius=(None if census.get("radius") is None else float(census["radius"])),
            diag_threshold=float(diag.get("threshold", 1e-6)),
            study=study,
        )


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return RunConfig.from_dict(doc)


def build_mesh(spec: dict):
    if "path" in spec:
        return load_mesh(spec["path"])
    if spec["kind"] == "cube":
        if "n" not in spec:
            raise ConfigError("cube mesh needs 'n'")
        return generate_cube_mesh(int(spec["n"]))
    if "level" not in spec:
        raise ConfigError("ball mesh needs 'level'")
    return generate_ball_mesh(int(spec["level"]))


def _build_problem(cfg: RunConfig):
    """Mesh, fields, pencil, and the well-posedness diagnostic for a config."""
    mesh = build_mesh(cfg.mesh_spec)
    mu = build_field(mesh, "mu_inv", cfg.materials["mu_inv"], cfg.perturbations)
    eps = build_field(mesh, "eps", cfg.materials["eps"], cfg.perturbations)
    reports = {
        "mu_inv": validate(mu, cfg.omega).as_dict(),
        "eps": validate(eps, cfg.omega).as_dict(),
    }
    if cfg.problem == "scalar":
        pencil = assemble_scalar(mesh, mu, eps, cfg.omega)
        sigma_min = scalar_dirichlet_diagnostic(pencil, dense_limit=cfg.dense_limit)
        diag = {"kind": "interior_dirichlet", "sigma_min": float(sigma_min)}
        B = pencil.B_bd
    else:
        ops = assemble_surface_operators(extract_boundary(mesh), mesh)
        pencil = assemble_maxwell(mesh, mu, eps, cfg.omega, ops)
        sigma_min, details = kernelS_diagnostic(pencil, return_details=True)
        diag = {"kind": "kernel_subspace", **{k: (float(v) if isinstance(v, float) else v)
                                              for k, v in details.items()}}
        B = pencil.B
    diag["threshold"] = cfg.diag_threshold
    diag["passed"] = bool(sigma_min >= cfg.diag_threshold)
    return mesh, pencil, B, reports, diag, float(sigma_min)


def _mesh_info(mesh):
    return {
        "vertices": mesh.n_vertices,
        "tets": mesh.n_tets,
        "edges": mesh.n_edges,
        "boundary_faces": int(len(mesh.boundary_faces)),
        "kind": mesh.kind,
    }


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------- #
# subcommands
# --------------------------------------------------------------------- #

def cmd_mesh(args) -> int:
    if args.kind == "cube":
        mesh = generate_cube_mesh(args.n)
    else:
        mesh = generate_ball_mesh(args.level)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "mesh.json"
    save_mesh(mesh, path)
    print(f"wrote {path} ({mesh.n_vertices} vertices, {mesh.n_tets} tets)")
    return 0


def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)

    mesh, pencil, B, reports, diag, sigma_min = _build_problem(cfg)
    meta = {
        "problem": cfg.problem,
        "omega": cfg.omega,
        "mesh": _mesh_info(mesh),
        "materials": reports,
        "diagnostics": diag,
        "solver": {"sigma": _cx(cfg.sigma), "k": cfg.k, "tol": cfg.tol, "seed": cfg.seed},
    }
    if not diag["passed"]:
        _write_json(out / "solve_meta.json", meta)
        raise AssumptionViolation(
            f"well-posedness diagnostic {sigma_min:.3e} below threshold "
            f"{cfg.diag_threshold:.1e}; no eigenvalue table emitted"
        )

    result = solve_shift_invert(pencil.a0(), B, cfg.sigma, cfg.k,
                                tol=cfg.tol, seed=cfg.seed,
                                krylov_dim=cfg.krylov_dim, max_krylov=cfg.max_krylov)
    if len(result) == 0:
        raise SolverFailure("no eigenvalue converged at the requested tolerance")
    clustered = cluster(result, cfg.cluster_reltol)

    radius = cfg.census_radius
    if radius is None:
        radius = 10.0 * float(np.median(np.abs(clustered.eigenvalues)))
    census = sector_census(clustered.eigenvalues, cfg.census_delta, radius)

    csv_path = out / "eigenvalues.csv"
    with open(csv_path, "w", newline="") as fh:
        fh.write("index,re,im,residual,cluster_id,cluster_size\n")
        for i, lam in enumerate(clustered.eigenvalues):
            fh.write(",".join([
                str(i), _fmt(lam.real), _fmt(lam.imag),
                _fmt(clustered.residuals[i]),
                str(int(clustered.cluster_labels[i])),
                str(int(clustered.cluster_sizes[i])),
            ]) + "\n")

    meta["census"] = census.as_dict()
    meta["solver"].update({
        "converged": int(result.meta["converged"]),
        "iterations": int(result.meta["iterations"]),
        "partial": bool(result.meta["partial"]),
        "exhausted": bool(result.meta["exhausted"]),
    })
    meta["cluster_means"] = [_cx(m) for m in clustered.cluster_means]
    _write_json(out / "solve_meta.json", meta)
    print(f"wrote {csv_path} ({len(clustered)} eigenvalues)")
    return 0


def cmd_study(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if cfg.study is None:
        raise ConfigError("config has no 'study' section")
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)

    mesh = build_mesh(cfg.mesh_spec)
    st = cfg.study
    schedule = []
    for i, step in enumerate(st["schedule"]):
        try:
            schedule.append((
                float(step["h"]),
                complex(step.get("delta_re", 0.0), step.get("delta_im", 0.0)),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"study schedule entry #{i} invalid: {exc}") from exc
    target_lambda = st.get("target_lambda")
    if target_lambda is not None:
        target_lambda = complex(target_lambda.get("re", 0.0), target_lambda.get("im", 0.0))

    setup = StudySetup(
        mesh=mesh,
        omega=cfg.omega,
        problem=cfg.problem,
        mu_base=cfg.materials["mu_inv"],
        eps_base=cfg.materials["eps"],
        center=tuple(st.get("center", (0.0, 0.0, 0.0))),
        target=st.get("target", "eps"),
        schedule=schedule,
        p_list=tuple(float(p) for p in st.get("p_list", [4.0])),
        sigma=cfg.sigma,
        target_lambda=target_lambda,
        k=cfg.k,
        tol=cfg.tol,
        cluster_reltol=cfg.cluster_reltol,
        diag_threshold=cfg.diag_threshold,
        step_diagnostics=bool(st.get("step_diagnostics", True)),
        seed=cfg.seed,
    )
    report = run_study(setup)

    _write_json(out / "study_report.json", report.as_dict())
    csv_path = out / "study_summary.csv"
    with open(csv_path, "w", newline="") as fh:
        rows = report.csv_rows()
        fh.write(",".join(str(c) for c in rows[0]) + "\n")
        for row in rows[1:]:
            cells = []
            for c in row:
                if c is None:
                    cells.append("")
                elif isinstance(c, str):
                    cells.append(c)
                elif isinstance(c, (int, np.integer)):
                    cells.append(str(int(c)))
                else:
                    cells.append(_fmt(c))
            fh.write(",".join(cells) + "\n")
    print(f"wrote {csv_path} ({len(report.steps)} steps)")
    return 0


def cmd_diagnose(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)

    failures = []
    try:
        mesh, pencil, B, reports, diag, sigma_min = _build_problem(cfg)
    except AssumptionViolation as exc:
        # field-level failure: still emit a report with what we know
        doc = {"problem": cfg.problem, "passed": False, "failures": [str(exc)]}
        _write_json(out / "diagnostics.json", doc)
        raise

    for name, rep in reports.items():
        if not rep["passed"]:
            failures.extend(f"{name}: {msg}" for msg in rep["failures"])
    if not diag["passed"]:
        failures.append(
            f"well-posedness diagnostic {sigma_min:.3e} below threshold {cfg.diag_threshold:.1e}"
        )

    doc = {
        "problem": cfg.problem,
        "omega": cfg.omega,
        "mesh": _mesh_info(mesh),
        "materials": reports,
        "diagnostics": diag,
        "passed": not failures,
        "failures": failures,
    }
    _write_json(out / "diagnostics.json", doc)
    if failures:
        raise AssumptionViolation("; ".join(failures))
    print(f"diagnostics passed (sigma_min = {sigma_min:.3e})")
    return 0


# --------------------------------------------------------------------- #
# entry point
# --------------------------------------------------------------------- #

def _parser():
    ap = argparse.ArgumentParser(prog="steklovlab",
                                 description="Steklov eigenvalue laboratory")
    sub = ap.add_subparsers(dest="command", required=True)

    mesh_p = sub.add_parser("mesh", help="generate and write a mesh JSON")
    mesh_p.add_argument("--kind", choices=["cube", "ball"], required=True)
    mesh_p.add_argument("--n", type=int, default=2, help="cube subdivisions per axis")
    mesh_p.add_argument("--level", type=int, default=1, help="ball refinement level")
    mesh_p.add_argument("--output", default=".")

    for name in ("solve", "study", "diagnose"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--output", default=".")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
    return ap


_ERROR_KINDS = [
    (ConfigError, "config-error", 1),
    (MalformedMeshError, "malformed-mesh", 1),
    (AssumptionViolation, "assumption-violation", 2),
    (SolverFailure, "solver-failure", 3),
    (ValueError, "invalid-argument", 1),
]


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    threads = getattr(args, "threads", None)
    if threads is None:
        env = os.environ.get("STEKLOV_THREADS")
        threads = int(env) if env else None
    try:
        if threads is not None:
            import threadpoolctl

            with threadpoolctl.threadpool_limits(limits=threads):
                return _dispatch(args)
        return _dispatch(args)
    except Exception as exc:   # mapped onto documented exit codes
        for klass, kind, code in _ERROR_KINDS:
            if isinstance(exc, klass):
                print(f"error: {kind}: {exc}", file=sys.stderr)
                return code
        raise


def _dispatch(args) -> int:
    if args.command == "mesh":
        return cmd_mesh(args)
    if args.command == "solve":
        return cmd_solve(args)
    if args.command == "study":
        return cmd_study(args)
    return cmd_diagnose(args)


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
