import csv
import subprocess
import sys

import numpy as np
import pytest

from copi.analysis import read_pgm
from copi.checkpoint import load_checkpoint, load_network
from copi.cli import derive_seed, main
from copi.trainer import TrainMetrics


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


@pytest.fixture
def trained(fake_mnist, tmp_path):
    out = tmp_path / "run"
    code = main(["train", "--data-dir", str(fake_mnist), "--out-dir", str(out), "--dims", "784,32,10",
                 "--epochs", "3", "--batch", "10", "--seeds", "2", "--eta-w", "1e-5"])
    assert code == 0
    return fake_mnist, out


class TestTrain:
    def test_outputs(self, trained):
        _, out = trained
        for k in (0, 1):
            assert load_network(out / f"checkpoint_seed{k}.copi").dims == [784, 32, 10]
            m = TrainMetrics.read_csv(out / f"metrics_seed{k}.csv")
            assert [r.epoch for r in m.rows] == [1, 2, 3]
            assert m.peak() > 0.5
        text = (out / "metrics_seed0.csv").read_text()
        assert text.startswith("# copi train")
        assert "rule = copi" in text
        summary = {r["metric"]: r for r in rows(out / "summary.csv")}
        assert int(summary["peak_test_acc"]["n_runs"]) == 2

    def test_seeds_differ_but_reproduce(self, trained, tmp_path):
        data, out = trained
        a = load_network(out / "checkpoint_seed0.copi")
        b = load_network(out / "checkpoint_seed1.copi")
        assert not np.array_equal(a.layers[0].W, b.layers[0].W)
        again = tmp_path / "again"
        main(["train", "--data-dir", str(data), "--out-dir", str(again), "--dims", "784,32,10", "--epochs", "3",
              "--batch", "10", "--eta-w", "1e-5"])
        c = load_network(again / "checkpoint_seed0.copi")
        assert np.array_equal(a.layers[0].W, c.layers[0].W)

    def test_config_file_and_flag_precedence(self, fake_mnist, tmp_path):
        ini = tmp_path / "c.ini"
        ini.write_text(f"[common]\ndata_dir = {fake_mnist}\n[train]\ndims = 784,16,10\nepochs = 1\nbatch = 25\n")
        out = tmp_path / "o"
        assert main(["train", "--config", str(ini), "--out-dir", str(out), "--epochs", "2", "--eta-w", "1e-5"]) == 0
        assert load_network(out / "checkpoint_seed0.copi").dims == [784, 16, 10]
        header = (out / "metrics_seed0.csv").read_text()
        assert "epochs = 2" in header and "batch = 25" in header

    def test_unknown_config_key(self, fake_mnist, tmp_path):
        ini = tmp_path / "c.ini"
        ini.write_text("[train]\nlearning_rate = 3\n")
        assert main(["train", "--config", str(ini), "--data-dir", str(fake_mnist)]) == 2

    def test_missing_data(self, tmp_path):
        assert main(["train", "--data-dir", str(tmp_path / "nope"), "--out-dir", str(tmp_path)]) == 3

    def test_dims_mismatch(self, fake_mnist, tmp_path):
        assert main(["train", "--data-dir", str(fake_mnist), "--dims", "100,10", "--out-dir", str(tmp_path)]) == 2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_exit(self, fake_mnist, tmp_path):
        code = main(["train", "--data-dir", str(fake_mnist), "--dims", "784,32,10", "--epochs", "2",
                     "--eta-w", "1", "--eta-r", "1", "--out-dir", str(tmp_path)])
        assert code == 5

    def test_fa_and_adam(self, fake_mnist, tmp_path):
        for extra in (["--signal", "fa"], ["--rule", "bp-adam", "--eta-w", "1e-3"]):
            assert main(["train", "--data-dir", str(fake_mnist), "--dims", "784,16,10", "--epochs", "1",
                         "--batch", "10", "--eta-w", "1e-5", "--out-dir", str(tmp_path / extra[1])] + extra) == 0


class TestOtherCommands:
    def test_eval(self, trained, capsys):
        data, out = trained
        assert main(["eval", "--checkpoint", str(out / "checkpoint_seed0.copi"), "--data-dir", str(data)]) == 0
        assert capsys.readouterr().out.startswith("test_acc ")

    def test_compress(self, trained, tmp_path):
        data, out = trained
        cdir = tmp_path / "c"
        assert main(["compress", "--checkpoint", str(out / "checkpoint_seed0.copi"), "--data-dir", str(data),
                     "--out-dir", str(cdir)]) == 0
        table = rows(cdir / "compression.csv")
        assert [int(r["keep_layers"]) for r in table] == [2, 1, 0]
        assert load_checkpoint(cdir / "compressed_keep0.copi").keep_layers == 0
        assert main(["eval", "--checkpoint", str(cdir / "compressed_keep1.copi"), "--data-dir", str(data)]) == 0

    def test_features(self, trained, tmp_path):
        data, out = trained
        fdir = tmp_path / "f"
        assert main(["features", "--checkpoint", str(out / "checkpoint_seed0.copi"), "--data-dir", str(data),
                     "--layers", "1,2", "--units", "9", "--out-dir", str(fdir)]) == 0
        assert read_pgm(fdir / "features_layer1.pgm").shape == (3 * 29 + 1, 3 * 29 + 1)
        assert read_pgm(fdir / "features_layer2.pgm").shape == (3 * 29 + 1, 3 * 29 + 1)  # 9 of the 10 units
        assert (fdir / "inputs.pgm").exists() and (fdir / "decorrelated_inputs.pgm").exists()

    def test_corrupt_checkpoint(self, fake_mnist, tmp_path):
        bad = tmp_path / "bad.copi"
        bad.write_bytes(b"COPI" + bytes(10))
        assert main(["eval", "--checkpoint", str(bad), "--data-dir", str(fake_mnist)]) == 4

    def test_missing_checkpoint(self, fake_mnist, tmp_path):
        assert main(["eval", "--checkpoint", str(tmp_path / "x"), "--data-dir", str(fake_mnist)]) == 3

    def test_decorr_lab(self, tmp_path, capsys):
        assert main(["decorr-lab", "--dim", "10", "--n-samples", "50", "--out-dir", str(tmp_path)]) == 0
        table = rows(tmp_path / "decorr_lab.csv")
        assert len(table) == 9
        copi = [float(r["reduction"]) for r in table if r["rule"] == "copi"]
        assert max(copi) - min(copi) < 1e-6 * max(copi)


def test_derive_seed():
    assert derive_seed(0, 0) == derive_seed(0, 0)
    assert len({derive_seed(0, k) for k in range(10)}) == 10


def test_entry_point_help():
    r = subprocess.run([sys.executable, "-m", "copi.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for sub in ("train", "eval", "compress", "features", "decorr-lab"):
        assert sub in r.stdout
