import json

import numpy as np
import pytest

from steklovlab.cli import run


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def scalar_ball_config(sigma=1.5, level=1, eps=1.0, omega=0.0, seed=0):
    return {
        "problem": "scalar",
        "mesh": {"kind": "ball", "level": level},
        "omega": omega,
        "materials": {"mu_inv": {"1": 1.0}, "eps": {"1": eps}},
        "solver": {"sigma_re": sigma, "k": 18, "tol": 1e-9, "seed": seed,
                   "cluster_reltol": 0.05},
    }


def test_mesh_command(tmp_path):
    assert run(["mesh", "--kind", "cube", "--n", "2", "--output", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "mesh.json").read_text())
    assert doc["version"] == 1
    assert len(doc["tets"]) == 48


def test_mesh_command_invalid_n(tmp_path, capsys):
    code = run(["mesh", "--kind", "cube", "--n", "0", "--output", str(tmp_path)])
    assert code == 1
    assert "error: invalid-argument" in capsys.readouterr().err


def test_solve_scalar_ball(tmp_path, capsys):
    cfg = write_config(tmp_path, scalar_ball_config())
    out = tmp_path / "run"
    assert run(["solve", "--config", cfg, "--output", str(out)]) == 0
    lines = (out / "eigenvalues.csv").read_text().strip().splitlines()
    assert lines[0] == "index,re,im,residual,cluster_id,cluster_size"
    rows = [ln.split(",") for ln in lines[1:]]
    assert len(rows) == 18
    meta = json.loads((out / "solve_meta.json").read_text())
    assert meta["diagnostics"]["passed"]
    assert "census" in meta
    assert meta["census"]["outside"] == 0      # real eps: spectrum on the real axis
    # smallest cluster means approximate the sphere harmonics ladder 0,1,2,3
    means = sorted((m["re"] for m in meta["cluster_means"]))
    assert abs(means[0]) < 0.05
    assert means[1] == pytest.approx(1.0, abs=0.2)


def test_solve_determinism(tmp_path):
    cfg = write_config(tmp_path, scalar_ball_config(seed=3))
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run(["solve", "--config", cfg, "--output", str(out1), "--seed", "3"]) == 0
    assert run(["solve", "--config", cfg, "--output", str(out2), "--seed", "3"]) == 0
    assert (out1 / "eigenvalues.csv").read_bytes() == (out2 / "eigenvalues.csv").read_bytes()
    assert (out1 / "solve_meta.json").read_bytes() == (out2 / "solve_meta.json").read_bytes()


def test_diagnose_negative_eps_fails(tmp_path, capsys):
    doc = scalar_ball_config(eps=-1.0)
    cfg = write_config(tmp_path, doc)
    code = run(["diagnose", "--config", cfg, "--output", str(tmp_path / "d")])
    assert code == 2
    err = capsys.readouterr().err
    assert "error: assumption-violation" in err


def test_diagnose_passes(tmp_path):
    cfg = write_config(tmp_path, scalar_ball_config(eps={"re": 2.0, "im": 1.0}, omega=1.0))
    out = tmp_path / "d"
    assert run(["diagnose", "--config", cfg, "--output", str(out)]) == 0
    doc = json.loads((out / "diagnostics.json").read_text())
    assert doc["passed"]
    assert doc["materials"]["eps"]["coercivity_min"] == pytest.approx(2.0)


def test_config_error_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, {"problem": "nope"})
    assert run(["solve", "--config", cfg, "--output", str(tmp_path)]) == 1
    assert "error: config-error" in capsys.readouterr().err


def test_config_maxwell_omega_zero_rejected(tmp_path):
    doc = {
        "problem": "maxwell",
        "mesh": {"kind": "cube", "n": 2},
        "omega": 0.0,
        "materials": {"mu_inv": {"1": 1.0}, "eps": {"1": 1.0}},
    }
    cfg = write_config(tmp_path, doc)
    assert run(["solve", "--config", cfg, "--output", str(tmp_path)]) == 1


def test_missing_config_file(tmp_path, capsys):
    assert run(["solve", "--config", str(tmp_path / "nope.json"), "--output", str(tmp_path)]) == 1


def test_solve_maxwell_cube(tmp_path):
    doc = {
        "problem": "maxwell",
        "mesh": {"kind": "cube", "n": 2},
        "omega": 1.0,
        "materials": {"mu_inv": {"1": 1.0}, "eps": {"1": {"re": 4.0, "im": 1.0}}},
        "solver": {"sigma_re": 2.3, "k": 5, "tol": 1e-9},
    }
    cfg = write_config(tmp_path, doc)
    out = tmp_path / "mx"
    assert run(["solve", "--config", cfg, "--output", str(out)]) == 0
    meta = json.loads((out / "solve_meta.json").read_text())
    assert meta["diagnostics"]["kind"] == "kernel_subspace"
    assert meta["diagnostics"]["unspanned_kernel_dim"] >= 0
    lines = (out / "eigenvalues.csv").read_text().strip().splitlines()
    assert len(lines) == 6


def test_study_command(tmp_path):
    doc = {
        "problem": "maxwell",
        "mesh": {"kind": "cube", "n": 3},
        "omega": 1.0,
        "materials": {"mu_inv": {"1": 1.0}, "eps": {"1": {"re": 4.0, "im": 1.0}}},
        "solver": {"sigma_re": 2.3, "k": 6, "tol": 1e-11},
        "study": {
            "target": "eps",
            "center": [0.5, 0.5, 0.5],
            "schedule": [{"h": 0.45, "delta_im": 2e-3}, {"h": 0.45, "delta_im": 1e-3}],
            "p_list": [2, 4],
        },
    }
    cfg = write_config(tmp_path, doc)
    out = tmp_path / "study"
    assert run(["study", "--config", cfg, "--output", str(out)]) == 0
    report = json.loads((out / "study_report.json").read_text())
    assert report["cluster_size"] >= 1
    assert len(report["steps"]) == 2
    csv_lines = (out / "study_summary.csv").read_text().strip().splitlines()
    assert csv_lines[0].startswith("index,h,delta_re,delta_im,status")
    assert len(csv_lines) == 3


def test_study_requires_section(tmp_path):
    cfg = write_config(tmp_path, scalar_ball_config())
    assert run(["study", "--config", cfg, "--output", str(tmp_path)]) == 1


def test_solve_suppresses_table_on_diagnostic_failure(tmp_path, capsys):
    # oracle: dense interior eigensolve gives a Dirichlet eigenvalue; at that
    # omega the well-posedness diagnostic fails and no eigenvalue table may
    # be emitted
    import scipy.linalg

    from steklovlab.fem_scalar import assemble_scalar
    from steklovlab.materials import build_field
    from steklovlab.mesh import generate_ball_mesh

    mesh = generate_ball_mesh(1)
    mu = build_field(mesh, "mu_inv", {1: 1.0})
    eps = build_field(mesh, "eps", {1: 1.0})
    base = assemble_scalar(mesh, mu, eps, 0.0)
    interior = base.interior_vertices
    K = base.K.toarray()[np.ix_(interior, interior)]
    M = base.M.toarray().real[np.ix_(interior, interior)]
    omega_hit = float(np.sqrt(scipy.linalg.eigh(K, M, eigvals_only=True)[0]))

    doc = scalar_ball_config(omega=omega_hit)
    cfg = write_config(tmp_path, doc)
    out = tmp_path / "fail"
    code = run(["solve", "--config", cfg, "--output", str(out)])
    assert code == 2
    assert "error: assumption-violation" in capsys.readouterr().err
    assert not (out / "eigenvalues.csv").exists()
    meta = json.loads((out / "solve_meta.json").read_text())
    assert meta["diagnostics"]["passed"] is False


def test_threads_flag_accepted(tmp_path):
    cfg = write_config(tmp_path, scalar_ball_config())
    out = tmp_path / "thr"
    assert run(["solve", "--config", cfg, "--output", str(out), "--threads", "1"]) == 0
