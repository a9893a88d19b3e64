import csv
import json

import numpy as np
import pytest

from eddm.cli import bench_polar, main
from eddm.deform import read_omega
from eddm.mesh import load_obj, save_obj
from eddm.rig import load_rig, skinning_matrices, load_pose
from eddm.scenarios import min_angle_degrees
from eddm.numerics import factor_affine


@pytest.fixture(scope="module")
def fig1_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("fig1")
    assert main(["scenario", "--name", "fig1", "--outdir", str(out)]) == 0
    assert main(["precompute", "--mesh", str(out / "mesh.obj"), "--weights", str(out / "weights.json"), "--out", str(out / "omega.bin")]) == 0
    return out


def deform(d, mode, pose="pose.json", out=None):
    src = ["--omega", str(d / "omega.bin")] if mode in ("eddm", "ddm") else ["--weights", str(d / "weights.json")]
    out = out or d / f"{mode}_{pose}.obj"
    code = main(["deform", "--mesh", str(d / "mesh.obj"), *src, "--rig", str(d / "rig.json"), "--pose", str(d / pose), "--mode", mode, "--out", str(out)])
    assert code == 0
    return load_obj(out.read_bytes()).positions


class TestScenario:
    def test_fig1_pose_file(self, fig1_dir):
        pose = {e["joint"]: e for e in json.loads((fig1_dir / "pose.json").read_text())["pose"]}
        assert pose["joint1"]["s"] == [1.0, 2.0, 1.0]
        assert pose["joint2"]["s"] == [0.5, 0.5, 0.5]

    def test_fig2_non_rigid(self, tmp_path):
        assert main(["scenario", "--name", "fig2", "--outdir", str(tmp_path)]) == 0
        rig = load_rig((tmp_path / "rig.json").read_text())
        (m,) = skinning_matrices(rig, load_pose((tmp_path / "pose.json").read_text(), rig))
        _, ss = factor_affine(m)
        assert abs(np.linalg.det(ss.linear) - 1.0) > 1.0

    def test_stress_slivers(self, tmp_path):
        assert main(["scenario", "--name", "stress", "--outdir", str(tmp_path)]) == 0
        assert min_angle_degrees(load_obj((tmp_path / "mesh.obj").read_bytes())) < 1.0

    def test_unknown(self, tmp_path, capsys):
        assert main(["scenario", "--name", "nope", "--outdir", str(tmp_path)]) == 2
        assert "nope" in capsys.readouterr().err


class TestPrecompute:
    def test_sums_and_report(self, fig1_dir, capsys):
        out = fig1_dir / "again.bin"
        main(["precompute", "--mesh", str(fig1_dir / "mesh.obj"), "--weights", str(fig1_dir / "weights.json"), "--out", str(out)])
        text = capsys.readouterr().out
        assert "laplacian_row_sum_error=" in text
        table = read_omega(out.read_bytes())
        np.testing.assert_allclose(table.omega_sums(), 1.0, atol=1e-9)

    def test_zero_iterations(self, fig1_dir):
        out = fig1_dir / "raw.bin"
        main(["precompute", "--mesh", str(fig1_dir / "mesh.obj"), "--weights", str(fig1_dir / "weights.json"), "--iterations", "0", "--out", str(out)])
        table = read_omega(out.read_bytes())
        p = load_obj((fig1_dir / "mesh.obj").read_bytes()).positions
        rows = table.rows()
        np.testing.assert_array_equal(table.coeffs[:, 3], p[rows, 0] * table.coeffs[:, 9])

    def test_missing_weights(self, fig1_dir, tmp_path, capsys):
        missing = tmp_path / "absent.json"
        code = main(["precompute", "--mesh", str(fig1_dir / "mesh.obj"), "--weights", str(missing), "--out", str(tmp_path / "o.bin")])
        assert code == 2
        assert str(missing) in capsys.readouterr().err

    def test_malformed_mesh(self, fig1_dir, tmp_path, capsys):
        bad = tmp_path / "bad.obj"
        bad.write_text("v 0 0 0\nf 1 2 3\n")
        code = main(["precompute", "--mesh", str(bad), "--weights", str(fig1_dir / "weights.json"), "--out", str(tmp_path / "o.bin")])
        assert code == 2
        assert "bad.obj" in capsys.readouterr().err


class TestDeform:
    @pytest.mark.parametrize("mode", ["eddm", "ddm", "lbs", "dm"])
    def test_bind_pose(self, fig1_dir, mode):
        (fig1_dir / "bind.json").write_text('{"pose": []}')
        out = deform(fig1_dir, mode, "bind.json")
        rest = load_obj((fig1_dir / "mesh.obj").read_bytes()).positions
        np.testing.assert_allclose(out, rest, atol=1e-9)

    def test_fig1_eddm_matches_lbs_on_single_influence(self, fig1_dir):
        table = read_omega((fig1_dir / "omega.bin").read_bytes())
        single = np.diff(table.indptr) == 1
        e, l = deform(fig1_dir, "eddm"), deform(fig1_dir, "lbs")
        assert np.max(np.linalg.norm(e - l, axis=1)[single]) <= 1e-6

    def test_fig1_ddm_understates_extent(self, fig1_dir):
        d, l = deform(fig1_dir, "ddm"), deform(fig1_dir, "lbs")
        # the stretched joint-1 segment reaches y = -2 under lbs; ddm falls short
        assert np.min(l[:, 1]) == pytest.approx(-2.0)
        assert np.min(d[:, 1]) > np.min(l[:, 1]) + 0.1

    def test_fig1_rigid_variant_eddm_equals_ddm(self, fig1_dir):
        e = deform(fig1_dir, "eddm", "pose_rigid.json")
        d = deform(fig1_dir, "ddm", "pose_rigid.json")
        assert np.max(np.linalg.norm(e - d, axis=1)) <= 1e-9

    def test_deterministic_output(self, fig1_dir):
        a = deform(fig1_dir, "eddm", out=fig1_dir / "run_a.obj")
        b = deform(fig1_dir, "eddm", out=fig1_dir / "run_b.obj")
        assert (fig1_dir / "run_a.obj").read_bytes() == (fig1_dir / "run_b.obj").read_bytes()
        np.testing.assert_array_equal(a, b)

    def test_mode_needs_matching_input(self, fig1_dir, tmp_path, capsys):
        code = main(["deform", "--mesh", str(fig1_dir / "mesh.obj"), "--weights", str(fig1_dir / "weights.json"), "--rig", str(fig1_dir / "rig.json"), "--pose", str(fig1_dir / "pose.json"), "--mode", "eddm", "--out", str(tmp_path / "x.obj")])
        assert code == 2
        assert "--omega" in capsys.readouterr().err

    def test_unknown_pose_joint(self, fig1_dir, tmp_path):
        pose = tmp_path / "p.json"
        pose.write_text('{"pose": [{"joint": "ghost"}]}')
        code = main(["deform", "--mesh", str(fig1_dir / "mesh.obj"), "--omega", str(fig1_dir / "omega.bin"), "--rig", str(fig1_dir / "rig.json"), "--pose", str(pose), "--out", str(tmp_path / "x.obj")])
        assert code == 2


class TestCompare:
    @pytest.fixture()
    def pair(self, tmp_path, fig1_dir):
        mesh = load_obj((fig1_dir / "mesh.obj").read_bytes())
        a, b = tmp_path / "a.obj", tmp_path / "b.obj"
        a.write_bytes(save_obj(mesh))
        b.write_bytes(save_obj(mesh, mesh.positions + [0.0, 1.0, 0.0]))
        return a, b

    def test_identical(self, pair, capsys):
        a, _ = pair
        assert main(["compare", "--a", str(a), "--b", str(a)]) == 0
        out = capsys.readouterr().out
        assert "max=0.0" in out and "mean=0.0" in out

    def test_translated_report(self, pair, tmp_path):
        a, b = pair
        report = tmp_path / "r.csv"
        assert main(["compare", "--a", str(a), "--b", str(b), "--report", str(report), "--threshold", "2"]) == 0
        rows = list(csv.reader(report.read_text().splitlines()))
        assert rows[0] == ["vertex", "dx", "dy", "dz", "distance"]
        per_vertex = [r for r in rows[1:] if r[0].isdigit()]
        assert {float(r[4]) for r in per_vertex} == {1.0}
        summary = {r[0]: float(r[4]) for r in rows[1:] if not r[0].isdigit()}
        assert summary == {"max": 1.0, "mean": 1.0, "rms": 1.0, "pct_over_threshold": 0.0}

    def test_csv_matches_stdout(self, fig1_dir, tmp_path, capsys):
        a = fig1_dir / "mesh.obj"
        b = tmp_path / "eddm.obj"
        deform(fig1_dir, "eddm", out=b)
        capsys.readouterr()
        report = tmp_path / "r.csv"
        main(["compare", "--a", str(a), "--b", str(b), "--report", str(report), "--threshold", "10"])
        printed = dict(line.split("=", 1) for line in capsys.readouterr().out.split())
        rows = list(csv.reader(report.read_text().splitlines()))
        summary = {r[0]: r[4] for r in rows[1:] if not r[0].isdigit()}
        assert summary == printed
        assert float(summary["max"]) >= float(summary["rms"]) >= 0.0

    def test_threshold_exit(self, pair):
        a, b = pair
        assert main(["compare", "--a", str(a), "--b", str(b), "--threshold", "0.5"]) == 3

    def test_vertex_count_mismatch(self, pair, tmp_path):
        a, _ = pair
        small = tmp_path / "s.obj"
        small.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
        assert main(["compare", "--a", str(a), "--b", str(small)]) == 2


class TestBenchPolar:
    def test_single_sample(self):
        assert bench_polar(1, 0)["max_discrepancy"] <= 1e-6

    def test_csv_format(self, tmp_path, capsys):
        out = tmp_path / "bench.csv"
        assert main(["bench-polar", "--samples", "2000", "--seed", "3", "--out", str(out)]) == 0
        rows = list(csv.reader(out.read_text().splitlines()))
        assert rows[0] == ["metric", "value"]
        names = [r[0] for r in rows[1:]]
        assert names == ["polar_ns_per_op", "svd_oracle_ns_per_op", "max_discrepancy"]
        assert "speedup=" in capsys.readouterr().err

    def test_deterministic_discrepancy(self):
        assert bench_polar(5000, 7)["max_discrepancy"] == bench_polar(5000, 7)["max_discrepancy"]

    def test_rejects_zero_samples(self):
        assert main(["bench-polar", "--samples", "0"]) == 2
