import hashlib

import numpy as np
import pytest

from tgp import cli, container
from tgp.data import ingest
from tgp.errors import DataError
from tgp.evaluation import read_report
from tgp.model import BaseMeasure, TgpModel
from tgp.modelfile import load_model, model_to_bytes, model_from_bytes, save_model
from tgp.rff import frequency_covariance, sample_basis
from tgp.synthetic import TWO_BLOBS, gaussian, gaussian_mixture, ring, two_blobs


def write_csv(path, X, header=None):
    with open(path, "w") as fh:
        if header:
            fh.write(header + "\n")
        for row in X:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return path


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(*argv):
    return cli.main([str(a) for a in argv])


class TestIngest:
    def test_centering_two_rows(self, tmp_path):
        ds = ingest(write_csv(tmp_path / "a.csv", [[1.0, 5.0], [3.0, -1.0]]), center=True)
        np.testing.assert_array_equal(ds.rows.sum(axis=0), [0.0, 0.0])
        np.testing.assert_array_equal(ds.offset, [2.0, 2.0])

    def test_one_malformed_row_of_100(self, tmp_path):
        X = np.random.default_rng(0).standard_normal((100, 3))
        path = write_csv(tmp_path / "b.csv", X)
        lines = path.read_text().splitlines()
        lines[40] = "1.0,2.0"
        path.write_text("\n".join(lines) + "\n")
        ds = ingest(path)
        assert ds.N == 99 and ds.rejected == 1

    def test_nan_and_empty_cells_rejected(self, tmp_path):
        path = tmp_path / "c.csv"
        path.write_text("1,2\nnan,3\n4,\ninf,1\n5,6\n")
        ds = ingest(path)
        np.testing.assert_array_equal(ds.rows, [[1.0, 2.0], [5.0, 6.0]])
        assert ds.rejected == 3

    def test_header_detection(self, tmp_path):
        ds = ingest(write_csv(tmp_path / "d.csv", [[1.0, 2.0]], header="x,y"))
        assert ds.column_names == ("x", "y") and ds.N == 1
        ds = ingest(write_csv(tmp_path / "e.csv", [[1.0, 2.0], [3.0, 4.0]]), header=True)
        assert ds.column_names == ("1.0", "2.0") and ds.N == 1

    def test_other_delimiter_and_max_rows(self, tmp_path):
        path = tmp_path / "f.tsv"
        path.write_text("1\t2\n3\t4\n5\t6\n")
        ds = ingest(path, delimiter="\t", max_rows=2)
        np.testing.assert_array_equal(ds.rows, [[1.0, 2.0], [3.0, 4.0]])

    def test_errors(self, tmp_path):
        with pytest.raises(DataError):
            ingest(tmp_path / "missing.csv")
        bad = tmp_path / "g.csv"
        bad.write_text("1,2\n3,abc\n")
        with pytest.raises(DataError, match="non-numeric"):
            ingest(bad)
        empty = tmp_path / "h.csv"
        empty.write_text("x,y\n")
        with pytest.raises(DataError, match="no usable rows"):
            ingest(empty)

    def test_offset_applied(self, tmp_path):
        ds = ingest(write_csv(tmp_path / "i.csv", [[1.0, 1.0]]), offset=[0.5, -1.0])
        np.testing.assert_array_equal(ds.rows, [[0.5, 2.0]])
        with pytest.raises(DataError):
            ingest(write_csv(tmp_path / "j.csv", [[1.0, 1.0]]), offset=[0.5])


class TestSynthetic:
    def test_mixture_moments(self):
        X = two_blobs(200_000, seed=0)
        want = sum(w * np.asarray(m) for w, m in zip(TWO_BLOBS["weights"], TWO_BLOBS["means"]))
        np.testing.assert_allclose(X.mean(axis=0), want, atol=0.02)

    def test_seeded(self):
        np.testing.assert_array_equal(gaussian(10, 3, seed=1), gaussian(10, 3, seed=1))
        assert ring(50, seed=2).shape == (50, 2)

    def test_single_component(self):
        X = gaussian_mixture(100_000, [1.0], [[1.0, -1.0]], [[[2.0, 0.0], [0.0, 0.5]]], seed=3)
        np.testing.assert_allclose(np.cov(X, rowvar=False), [[2.0, 0.0], [0.0, 0.5]], atol=0.03)


class TestContainer:
    def test_round_trip_bytes(self):
        arrays = {"b": np.arange(6.0).reshape(2, 3), "a": np.array([0.1, 1 / 3])}
        blob = container.dumps("k", {"x": 1.5, "name": "z"}, arrays)
        meta, back = container.loads(blob, "k")
        assert meta == {"x": 1.5, "name": "z"}
        np.testing.assert_array_equal(back["b"], arrays["b"])
        assert container.dumps("k", meta, back) == blob

    def test_corruption_detected(self):
        blob = bytearray(container.dumps("k", {}, {"a": np.ones(4)}))
        blob[-3] ^= 1
        with pytest.raises(DataError, match="corrupt"):
            container.loads(bytes(blob))
        with pytest.raises(DataError, match="magic"):
            container.loads(b"XXXX" + bytes(blob))
        with pytest.raises(DataError, match="expected"):
            container.loads(container.dumps("k", {}, {}), "other")
        with pytest.raises(DataError, match="truncated"):
            container.loads(container.dumps("k", {}, {"a": np.ones(4)})[:-8])


class TestModelFile:
    def make(self, fvpd=False):
        from tgp.learn import fit_fd, fit_fvpd
        from tgp.model import empirical_base
        from tgp.suffstats import collect
        X = two_blobs(300, seed=0)
        base = empirical_base(X)
        basis = sample_basis(2, 16, 0.5, frequency_covariance(base.Sigma), seed=4)
        fit = fit_fvpd if fvpd else fit_fd
        return fit(collect(X, basis, base), basis, base).with_meta(offset=(0.0, 0.0))

    @pytest.mark.parametrize("fvpd", [False, True])
    def test_save_load_save_identical(self, tmp_path, fvpd):
        model = self.make(fvpd)
        p1, p2 = tmp_path / "a.tgp", tmp_path / "b.tgp"
        save_model(model, p1)
        save_model(load_model(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()
        back = load_model(p1)
        x = np.array([[0.3, -0.2], [1.0, 1.0]])
        np.testing.assert_array_equal(back.log_unnorm_density(x), model.log_unnorm_density(x))

    def test_theta_identical(self):
        model = self.make()
        np.testing.assert_array_equal(model_from_bytes(model_to_bytes(model)).theta, model.theta)

    def test_checksum_mismatch(self):
        model = self.make()
        meta, arrays = container.loads(model_to_bytes(model))
        meta["basis"]["seed"] = 5
        with pytest.raises(DataError, match="checksum"):
            model_from_bytes(container.dumps("tgp-model", meta, arrays))


class TestFitCommand:
    @pytest.fixture
    def blobs(self, tmp_path):
        return write_csv(tmp_path / "train.csv", two_blobs(1000, seed=1))

    def test_fd_round_trip(self, tmp_path, blobs, capsys):
        out = tmp_path / "fd.tgp"
        assert run("fit", blobs, "-o", out, "--S", 256) == 0
        assert "timing pass=" in capsys.readouterr().err
        model = load_model(out)
        assert model.basis.S == 256 and model.meta["algorithm"] == "fd"
        assert load_model(out).theta.tobytes() == model.theta.tobytes()

    def test_ncfd_single_level_equals_fd(self, tmp_path, blobs):
        run("fit", blobs, "-o", tmp_path / "a.tgp", "--S", 64, "--algorithm", "fd")
        run("fit", blobs, "-o", tmp_path / "b.tgp", "--S", 64, "--algorithm", "ncfd", "--H", 1)
        np.testing.assert_array_equal(load_model(tmp_path / "a.tgp").theta,
                                      load_model(tmp_path / "b.tgp").theta)

    @pytest.mark.parametrize("lam", ["0", "-1"])
    def test_invalid_lambda(self, tmp_path, blobs, lam):
        out = tmp_path / "x.tgp"
        assert run("fit", blobs, "-o", out, "--lambda", lam) == 2
        assert not out.exists()

    def test_exit_codes(self, tmp_path, blobs):
        assert run("fit", tmp_path / "missing.csv", "-o", tmp_path / "m.tgp") == 3
        with pytest.raises(SystemExit) as exc:
            run("fit", blobs, "-o", tmp_path / "m.tgp", "--algorithm", "nope")
        assert exc.value.code == 2
        path = write_csv(tmp_path / "line.csv", [[1.0, 2.0]] * 10)
        assert run("fit", path, "-o", tmp_path / "m.tgp") == 3

    def test_threads_flag_bitwise(self, tmp_path, blobs):
        run("fit", blobs, "-o", tmp_path / "a.tgp", "--S", 64, "--threads", 1)
        run("fit", blobs, "-o", tmp_path / "b.tgp", "--S", 64, "--threads", 4)
        assert sha(tmp_path / "a.tgp") == sha(tmp_path / "b.tgp")


class TestSampleCommand:
    def zero_model(self, tmp_path, mu=(3.0, -2.0)):
        basis = sample_basis(2, 8, 1.0, seed=0)
        model = TgpModel(basis, BaseMeasure(np.zeros(2), np.eye(2)), theta=np.zeros(8),
                         meta={"offset": mu})
        path = tmp_path / "zero.tgp"
        save_model(model, path)
        return path

    def test_zero_theta_mean(self, tmp_path):
        out = tmp_path / "s.csv"
        assert run("sample", self.zero_model(tmp_path), "-k", 5000, "-o", out, "--n-s", 20_000) == 0
        ds = ingest(out)
        assert ds.N == 5000
        np.testing.assert_allclose(ds.rows.mean(axis=0), [3.0, -2.0], atol=0.06)

    def test_deterministic_and_round_trip(self, tmp_path):
        model = self.zero_model(tmp_path)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run("sample", model, "-k", 50, "-o", a, "--seed", 3, "--n-s", 1000)
        run("sample", model, "-k", 50, "-o", b, "--seed", 3, "--n-s", 1000)
        assert a.read_bytes() == b.read_bytes()
        ws = tmp_path / "w.csv"
        run("sample", model, "-k", 1, "-o", ws, "--n-s", 100, "--weighted")
        text_rows = [[float(v) for v in line.split(",")] for line in ws.read_text().splitlines()]
        np.testing.assert_allclose(ingest(ws).rows, text_rows, rtol=1e-12, atol=0)

    def test_errors(self, tmp_path):
        model = self.zero_model(tmp_path)
        assert run("sample", model, "-k", 0, "-o", tmp_path / "o.csv") == 2
        bad = tmp_path / "bad.tgp"
        bad.write_bytes(model.read_bytes()[:-5])
        assert run("sample", bad, "-k", 3, "-o", tmp_path / "o.csv") == 3


class TestEvalCommand:
    def test_deterministic_and_consistent(self, tmp_path):
        train = write_csv(tmp_path / "t.csv", two_blobs(500, seed=1))
        test = write_csv(tmp_path / "v.csv", two_blobs(500, seed=2))
        model = tmp_path / "m.tgp"
        run("fit", train, "-o", model, "--S", 64)
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        opts = ("--directions", 20, "--grid-points", 500, "--n-s", 5000, "--seed", 7)
        assert run("eval", model, "--data", test, "-o", a, *opts) == 0
        run("eval", model, "--data", test, "-o", b, *opts)
        assert a.read_bytes() == b.read_bytes()
        ks, wd, summary = read_report(a)
        assert len(ks) == 20
        assert summary["median_ks"] == float(np.median(ks))
        assert summary["median_wd"] == float(np.median(wd))

    def test_kde_modes(self, tmp_path):
        train = write_csv(tmp_path / "t.csv", two_blobs(500, seed=1))
        test = write_csv(tmp_path / "v.csv", two_blobs(500, seed=2))
        opts = ("--directions", 20, "--grid-points", 500, "--n-s", 5000)
        medians = {}
        for mode in ("exact", "rff"):
            out = tmp_path / f"{mode}.txt"
            assert run("eval", "--kde", mode, "--train", train, "--data", test, "-o", out, *opts) == 0
            medians[mode] = read_report(out)[2]["median_ks"]
        assert max(medians.values()) < 0.25
        assert abs(medians["exact"] - medians["rff"]) < 0.1
        assert run("eval", "--kde", "exact", "--data", test, "-o", tmp_path / "x.txt") == 2

    def test_gaussian_data_fd_model(self, tmp_path):
        train = write_csv(tmp_path / "t.csv", gaussian(10_000, 2, seed=1))
        test = write_csv(tmp_path / "v.csv", gaussian(10_000, 2, seed=2))
        model, report = tmp_path / "m.tgp", tmp_path / "r.txt"
        assert run("fit", train, "-o", model) == 0
        assert run("eval", model, "--data", test, "-o", report) == 0
        assert read_report(report)[2]["median_ks"] <= 0.05


class TestPlotdataCommand:
    def test_zero_theta_is_base_density(self, tmp_path):
        basis = sample_basis(2, 8, 1.0, seed=0)
        base = BaseMeasure(np.zeros(2), np.array([[1.0, 0.2], [0.2, 0.5]]))
        path = tmp_path / "z.tgp"
        save_model(TgpModel(basis, base, theta=np.zeros(8), meta={"offset": (1.0, 0.0)}), path)
        out = tmp_path / "g.csv"
        assert run("plotdata", path, "-o", out, "--bounds", -2, 2, -1, 1, "--resolution", 5, 4) == 0
        G = np.loadtxt(out, delimiter=",")
        assert G.shape == (20, 3)
        np.testing.assert_allclose(G[:, 2], base.logpdf(G[:, :2] - [1.0, 0.0]), rtol=1e-13)

    def test_noise_smooths(self, tmp_path):
        train = write_csv(tmp_path / "t.csv", two_blobs(2000, seed=1))
        model = tmp_path / "n.tgp"
        run("fit", train, "-o", model, "--algorithm", "ncfd", "--S", 300, "--H", 4)
        grid = load_model(model).meta["sigma_grid"]
        rough = []
        for s in (0.0, grid[-1]):
            out = tmp_path / f"g{s}.csv"
            assert run("plotdata", model, "-o", out, "--bounds", -4, 4, -3, 3,
                       "--resolution", 60, 40, "--sigma", repr(s)) == 0
            V = np.loadtxt(out, delimiter=",")[:, 2].reshape(40, 60)
            rough.append(np.mean(np.abs(np.diff(V, n=2, axis=1))))
        assert rough[1] < rough[0]

    def test_off_grid_sigma(self, tmp_path, capsys):
        train = write_csv(tmp_path / "t.csv", two_blobs(300, seed=1))
        model = tmp_path / "n.tgp"
        run("fit", train, "-o", model, "--algorithm", "ncfd", "--S", 32, "--H", 3)
        capsys.readouterr()
        assert run("plotdata", model, "-o", tmp_path / "g.csv", "--bounds", 0, 1, 0, 1,
                   "--sigma", 0.123) == 2
        err = capsys.readouterr().err
        for s in load_model(model).meta["sigma_grid"]:
            assert repr(s) in err

    def test_requires_2d(self, tmp_path):
        basis = sample_basis(3, 4, 1.0)
        path = tmp_path / "m.tgp"
        save_model(TgpModel(basis, BaseMeasure(np.zeros(3), np.eye(3)), theta=np.zeros(4),
                            meta={"offset": (0.0, 0.0, 0.0)}), path)
        assert run("plotdata", path, "-o", tmp_path / "g", "--bounds", 0, 1, 0, 1) == 2
