import json

import numpy as np
import pytest

from knnsampler.cli import main
from knnsampler.core import RngStream, load_dataset, read_table, save_dataset
from knnsampler.datagen import MaskSpec, make_dataset
from knnsampler.imputers import impute_knn_mean, knn_conditional
from knnsampler.neighbors import build_index


@pytest.fixture()
def ring_file(tmp_path):
    path = tmp_path / "d.csv"
    save_dataset(make_dataset("ring", 1200, MaskSpec("mar_window", 80), RngStream(2)), path)
    return path


def run(*args):
    return main([str(a) for a in args])


class TestGenerate:
    def test_repeatable(self, tmp_path):
        for name in ("a.csv", "b.csv"):
            assert run("generate", "--setup", "ring", "--n", 10_000, "--seed", 7, "--output", tmp_path / name) == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_seed_matters(self, tmp_path):
        run("generate", "--n", 500, "--m", 50, "--seed", 1, "--output", tmp_path / "a.csv")
        run("generate", "--n", 500, "--m", 50, "--seed", 2, "--output", tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() != (tmp_path / "b.csv").read_bytes()

    def test_infeasible_mask_is_runtime_error(self, tmp_path):
        assert run("generate", "--n", 10, "--m", 500, "--output", tmp_path / "a.csv") == 2


class TestImpute:
    def test_sampler_auto(self, ring_file, tmp_path, capsys):
        out = tmp_path / "o.csv"
        assert run("impute", "--input", ring_file, "--output", out, "--method", "knn-sampler", "--k", "auto", "--seed", 42) == 0
        printed = capsys.readouterr().out
        assert "resolved k =" in printed and "LOOCV" in printed
        header, rows = read_table(out)
        assert header[-1] == "__imputed__" and sum(r[-1] == "true" for r in rows) == 80

    def test_imputer_spot_check(self, ring_file, tmp_path):
        out = tmp_path / "o.csv"
        assert run("impute", "--input", ring_file, "--output", out, "--method", "knn-imputer", "--k", 5) == 0
        ds = load_dataset(ring_file, ["x"], "y", "y_true")
        _, rows = read_table(out)
        index = build_index(ds.x_obs)
        for j in (0, 10, 79):
            row = ds.missing_rows[j]
            expected = impute_knn_mean(knn_conditional(index, ds.y_obs, ds.x_miss[j], 5, None))
            assert float(rows[row][1]) == pytest.approx(expected, rel=1e-12)

    def test_replicates_write_suffixed_files(self, ring_file, tmp_path):
        out = tmp_path / "o.csv"
        assert run("impute", "--input", ring_file, "--output", out, "--method", "knn-sampler", "--k", 10, "--replicates", 3) == 0
        files = [tmp_path / f"o_{b}.csv" for b in range(3)]
        assert all(f.exists() for f in files) and not out.exists()
        assert files[0].read_bytes() != files[1].read_bytes()

    def test_intervals(self, ring_file, tmp_path):
        iv = tmp_path / "iv.csv"
        assert run("impute", "--input", ring_file, "--output", tmp_path / "o.csv", "--method", "knn-sampler",
                   "--k", 40, "--intervals", iv, "--alpha", 0.1) == 0
        header, rows = read_table(iv)
        assert header == ["row", "lower", "upper", "nominal", "conditional_std"] and len(rows) == 80
        assert all(float(r[1]) <= float(r[2]) for r in rows)

    def test_unknown_method(self, ring_file, tmp_path, capsys):
        assert run("impute", "--input", ring_file, "--output", tmp_path / "o.csv", "--method", "bogus") == 1
        assert "knn-sampler" in capsys.readouterr().err

    @pytest.mark.parametrize("k", ["0", "many"])
    def test_bad_k(self, ring_file, tmp_path, k):
        assert run("impute", "--input", ring_file, "--output", tmp_path / "o.csv", "--method", "knn-sampler", "--k", k) == 1

    def test_empty_observed(self, tmp_path):
        src = tmp_path / "e.csv"
        src.write_text("x,y\n0.1,\n0.2,\n")
        assert run("impute", "--input", src, "--output", tmp_path / "o.csv", "--method", "knn-sampler") == 2

    def test_missing_input(self, tmp_path):
        assert run("impute", "--input", tmp_path / "nope.csv", "--output", tmp_path / "o.csv", "--method", "linear") == 2


class TestEvaluate:
    def test_identical_files(self, tmp_path, capsys):
        src = tmp_path / "t.csv"
        save_dataset(make_dataset("linear", 400, MaskSpec("mcar", 0), RngStream(1)), src)
        capsys.readouterr()
        assert run("evaluate", "--truth", src, "--imputed", src, "--permutations", 99) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["rmse"] == 0.0 and report["energy"] <= 0 and report["p_value"] > 0.05

    def test_disjoint(self, tmp_path, capsys):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        x = np.linspace(0, 1, 200).tolist()
        a.write_text("x,y\n" + "".join(f"{v!r},{v!r}\n" for v in x))
        b.write_text("x,y\n" + "".join(f"{v!r},{v + 50!r}\n" for v in x))
        capsys.readouterr()
        assert run("evaluate", "--truth", a, "--imputed", b, "--permutations", 199, "--output", tmp_path / "r.json") == 0
        report = json.loads((tmp_path / "r.json").read_text())
        assert report["p_value"] == 1 / 200

    def test_generated_then_imputed(self, ring_file, tmp_path, capsys):
        out = tmp_path / "o.csv"
        run("impute", "--input", ring_file, "--output", out, "--method", "knn-sampler", "--k", 30)
        capsys.readouterr()
        assert run("evaluate", "--truth", ring_file, "--imputed", out, "--permutations", 19) == 0
        assert json.loads(capsys.readouterr().out)["rmse"] > 0

    def test_missing_truth_flag(self, ring_file):
        assert run("evaluate", "--imputed", ring_file) == 1

    def test_row_mismatch(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        a.write_text("x,y\n0,1\n1,2\n2,3\n")
        b.write_text("x,y\n0,1\n1,2\n")
        assert run("evaluate", "--truth", a, "--imputed", b) == 2


class TestBenchmarkAndTheory:
    def test_benchmark(self, tmp_path):
        out = tmp_path / "b.json"
        assert run("benchmark", "--setup", "ring", "--n", 600, "--m", 50, "--replicates", 2, "--permutations", 19,
                   "--seed", 1, "--output", out) == 0
        report = json.loads(out.read_text())
        assert len(report["cells"]) == 4

    def test_benchmark_csv(self, tmp_path):
        out = tmp_path / "b.csv"
        assert run("benchmark", "--n", 400, "--m", 40, "--replicates", 1, "--permutations", 9,
                   "--methods", "linear,knn-imputer", "--output", out) == 0
        assert out.read_text().startswith("setup,n,method,metric,mean,std,runs\n")

    @pytest.mark.parametrize("grid", ["0", "100,x", ","])
    def test_invalid_grid(self, tmp_path, grid):
        assert run("benchmark", "--n", grid, "--output", tmp_path / "b.json") == 1

    def test_unknown_benchmark_method(self, tmp_path):
        assert run("benchmark", "--n", 400, "--methods", "random-forest", "--output", tmp_path / "b.json") == 1

    def test_theory_check(self, tmp_path):
        out = tmp_path / "t.json"
        assert run("theory-check", "--setup", "linear", "--d", 1, "--n", "400,1600", "--replicates", 2,
                   "--reference-size", 20_000, "--output", out) == 0
        assert "fitted_slope" in json.loads(out.read_text())

    def test_theory_bad_grid(self, tmp_path):
        assert run("theory-check", "--n", "1600,400", "--output", tmp_path / "t.json") == 1

    @pytest.mark.slow
    def test_theory_check_three_sizes(self, tmp_path):
        out = tmp_path / "t.json"
        assert run("theory-check", "--setup", "linear", "--d", 1, "--n", "1000,4000,16000", "--replicates", 5,
                   "--output", out) == 0


def test_no_subcommand():
    assert main([]) == 1
