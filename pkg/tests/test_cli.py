import csv
import io

import numpy as np
import pytest

from edg import cli, dda
from edg import datagen as dg

FAST = "method = dda\ndataset = rotated_gaussian\nepisodes = 10\neval_every = 5\nn_domains = 6\nn_per_domain = 40\n"


@pytest.fixture
def conf(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(FAST)
    return path


def test_gen_writes_dataset(tmp_path, capsys):
    out = tmp_path / "s.edg"
    assert cli.main(["gen", "--dataset", "sine", "--seed", "3", "--out", str(out), "n_per_domain=20"]) == 0
    ds = dg.load_dataset(out)
    assert ds.n_source == 10 and all(d.n == 20 for d in ds.sources)
    ref = dg.gen_sine(seed=3, n_per_domain=20)
    assert ds.sources[4].x.tobytes() == ref.sources[4].x.tobytes()


def test_gen_rejects_unknown_param(tmp_path, capsys):
    assert cli.main(["gen", "--dataset", "sine", "--out", str(tmp_path / "x"), "delta_deg=3"]) == 2
    assert "unknown parameter" in capsys.readouterr().err


def test_ldda_prints_csv(tmp_path, capsys):
    out = tmp_path / "g.edg"
    cli.main(["gen", "--dataset", "rotated_gaussian", "--out", str(out), "n_target=2"])
    capsys.readouterr()
    assert cli.main(["ldda", "--dataset", str(out)]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    psi = np.array([[float(v) for v in r[1:]] for r in rows[1:3]])
    assert np.linalg.norm(psi - dg.rotation_matrix(12.0)) <= 0.1
    assert rows[-2][0] == "1" and rows[-1][0] == "2"
    assert all(0 <= float(r[1]) <= 1 for r in rows[-2:])


def test_ldda_single_offset(tmp_path, capsys):
    out = tmp_path / "g.edg"
    cli.main(["gen", "--dataset", "rotated_gaussian", "--out", str(out), "n_target=3"])
    capsys.readouterr()
    cli.main(["ldda", "--dataset", str(out), "--target-offset", "3"])
    assert capsys.readouterr().out.strip().splitlines()[-1].startswith("3,")


def test_train_twice_is_bit_identical(tmp_path, conf, capsys):
    for name in ("a", "b"):
        assert cli.main(["train", "--config", str(conf), "--seed", "4", "--out", str(tmp_path / name)]) == 0
    ck = "dda_rotated_gaussian_seed4.edgckpt"
    assert (tmp_path / "a" / ck).read_bytes() == (tmp_path / "b" / ck).read_bytes()

    def rows(name):
        with open(tmp_path / name / "results.csv", newline="") as fh:
            return [{k: v for k, v in r.items() if k != "wall_seconds"} for r in csv.DictReader(fh)]

    assert rows("a") == rows("b")


def test_train_error_exit_code(conf, capsys):
    assert cli.main(["train", "--config", str(conf), "--set", "lambda=1.5"]) == 2
    assert "lambda must lie in [0, 1]" in capsys.readouterr().err


def test_train_reports_failed_horizon(tmp_path, conf, capsys):
    assert cli.main(["train", "--config", str(conf), "--out", str(tmp_path / "o"), "--set", "horizons=1,2"]) == 3


def test_eval_and_export_grid(tmp_path, conf, capsys):
    cli.main(["train", "--config", str(conf), "--out", str(tmp_path / "o")])
    data = tmp_path / "d.edg"
    cli.main(["gen", "--dataset", "rotated_gaussian", "--out", str(data), "n_domains=6", "n_per_domain=40"])
    capsys.readouterr()
    ck = tmp_path / "o" / "dda_rotated_gaussian_seed0.edgckpt"
    assert cli.main(["eval", "--checkpoint", str(ck), "--dataset", str(data), "--horizon", "1"]) == 0
    out = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    with open(tmp_path / "o" / "results.csv", newline="") as fh:
        recorded = next(csv.DictReader(fh))["accuracy"]
    assert out[1][2] == recorded  # same data, same split: same number

    grid = tmp_path / "grid.csv"
    assert cli.main(["export-grid", "--checkpoint", str(ck), "--resolution", "4",
                     "--bounds", "-2,2,-2,2", "--out", str(grid)]) == 0
    with open(grid, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 16 and set(rows[0]) == {"x1", "x2", "predicted_class", "logit_margin"}
    assert float(rows[0]["x1"]) == -2.0


def test_export_grid_bad_bounds(tmp_path, conf, capsys):
    cli.main(["train", "--config", str(conf), "--out", str(tmp_path / "o")])
    ck = tmp_path / "o" / "dda_rotated_gaussian_seed0.edgckpt"
    assert cli.main(["export-grid", "--checkpoint", str(ck), "--bounds", "0,1,2"]) == 2


def test_sweep(tmp_path, conf, capsys):
    assert cli.main(["sweep", "--config", str(conf), "--axis", "inner_steps_aug", "--values", "0,1",
                     "--out", str(tmp_path / "sw")]) == 0
    with open(tmp_path / "sw" / "sweep_inner_steps_aug.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["value"] for r in rows] == ["0", "1"]
    assert cli.main(["sweep", "--config", str(conf), "--axis", "bogus", "--values", "1"]) == 2


def test_threads_env_caps_workers(tmp_path, conf, capsys, monkeypatch):
    monkeypatch.setenv("EDG_THREADS", "0")
    assert cli.main(["train", "--config", str(conf), "--out", str(tmp_path / "o")]) == 2
    assert "EDG_THREADS" in capsys.readouterr().err


def test_checkpoint_manifest_carries_run_info(tmp_path, conf, capsys):
    cli.main(["train", "--config", str(conf), "--seed", "2", "--out", str(tmp_path / "o")])
    _, cfg, manifest = dda.load_checkpoint(tmp_path / "o" / "dda_rotated_gaussian_seed2.edgckpt")
    assert manifest["seed"] == 2 and manifest["dataset_spec"]["data"] == {"n_domains": 6, "n_per_domain": 40}
    assert cfg.episodes == 10 and manifest["episodes"] == 10
