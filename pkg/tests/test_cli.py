import csv
import struct

import numpy as np
import pytest

from structmtl import cli
from structmtl.cli import (ConfigError, ModelChecksumError, ModelFileError, ModelTruncatedError,
                           ModelVersionError, RunConfig, load_config, load_model, main, parse_eyes,
                           save_model)
from structmtl.data import dataset_digest, load_dataset
from structmtl.mtl import MODES

TINY = ["dims=16,8,6,4,20", "img_side=4", "n_train=20", "n_valid=6", "n_test=6", "epochs=3",
        "learning_rate=0.1", "ae_weight_decay=0", "scale_min=0.9", "shift_max=0.02"]


def tiny_args(*extra):
    out = []
    for kv in TINY + list(extra):
        out += ["-s", kv]
    return out


def tiny_cfg(*extra):
    return load_config(None, TINY + list(extra))


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


# -- config -----------------------------------------------------------------------

def test_defaults_are_full_scale():
    c = RunConfig()
    assert (c.learning_rate, c.momentum, c.batch_size, c.epochs) == (1e-3, 0.9, 10, 1000)
    assert (c.corruption, c.ae_weight_decay) == (0.2, 1e-2)
    assert c.dims == (2500, 1025, 512, 64, 136)


def test_presets_load():
    full = load_config("full", ["train_dir=somewhere"])
    assert full.dims == RunConfig().dims and full.learning_rate == 1e-3
    synth = load_config("synth")
    assert synth.dims[0] == synth.img_side ** 2 == 400
    assert (synth.n_train, synth.n_valid, synth.n_test, synth.epochs) == (500, 100, 200, 200)


def test_config_file_and_overrides(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\n\nmode = mlp_out\nseeds = 3, 4\nepochs=7  # trailing\n" + "\n".join(TINY[:2]))
    c = load_config(str(p), ["epochs=9"])
    assert c.mode == "mlp_out" and c.seeds == (3, 4) and c.epochs == 9


@pytest.mark.parametrize("overrides,match", [
    (["nope=1"], "unknown key"),
    (["epochs=ten"], "cannot parse"),
    (["mode=mlp", "in_start=0.5"], "lambda_in == 0"),
    (["mode=mlp_in", "out_end=0.1"], "lambda_out == 0"),
    (["mode=mlp_out", "in_start=1"], "lambda_in == 0"),
    (["k_in=2", "k_out=2"], "smaller than"),
    (["dims=15,8,6,4,20"], "img_side"),
    (["dims=16,8,6,4,22"], "coordinates"),
    (["mode=fast"], "mode must be"),
    (["eyes=1,2"], "two non-empty groups"),
    (["corruption=1.5"], "corruption"),
])
def test_config_violations(overrides, match):
    with pytest.raises(ConfigError, match=match):
        tiny_cfg(*overrides)


def test_config_violation_exit_code_before_compute(tmp_path):
    rc = main(["train", *tiny_args("mode=mlp", "in_start=1"), "--model", str(tmp_path / "m"),
               "--log", str(tmp_path / "l.csv")])
    assert rc == 2
    assert not (tmp_path / "m").exists()
    assert main(["train", "--bogus"]) == 2


def test_mode_schedules():
    c = tiny_cfg("epochs=10")
    for mode in MODES:
        s = c.schedules(mode)
        assert s.sup(0) == s.sup(10) == 1.0
        assert (s.in_(0) == 1.0) == (mode in ("mlp_in", "mlp_in_out"))
        assert (s.out(0) == 1.0) == (mode in ("mlp_out", "mlp_in_out"))
        assert s.in_(9) == 0.0 and s.out(9) == 0.0
    s = tiny_cfg("epochs=10", "in_ramp=0.5", "in_start=2").schedules("mlp_in")
    assert (s.in_(0), s.in_(5), s.in_.ramp_epochs) == (2.0, 0.0, 5)


def test_eyes():
    assert parse_eyes("36-41;42-47") == (tuple(range(36, 42)), tuple(range(42, 48)))
    assert parse_eyes("5;6") == ((5,), (6,))
    c = RunConfig()
    assert c.eye_groups(10) == ((5,), (6,))
    assert c.eye_groups(68)[0] == tuple(range(36, 42))
    with pytest.raises(ConfigError):
        c.eye_groups(7)


# -- synth --------------------------------------------------------------------------

def test_synth_counts_and_determinism(tmp_path, capsys):
    args = tiny_args("input_only_fraction=0.3", "label_only_fraction=0.3", "data_seed=7")
    assert main(["synth", str(tmp_path / "a"), "-n", "100", *args]) == 0
    assert "full=40 input_only=30 label_only=30" in capsys.readouterr().out
    assert main(["synth", str(tmp_path / "b"), "-n", "100", *args]) == 0
    assert dataset_digest(tmp_path / "a") == dataset_digest(tmp_path / "b")
    kinds = [r[0] for r in read_csv(tmp_path / "a" / "manifest.tsv")[1:]]
    assert len(kinds) == 100
    ds = load_dataset(tmp_path / "a", 4)
    assert ds.counts() == {"full": 40, "input_only": 30, "label_only": 30}


def test_synth_usage_errors(tmp_path):
    assert main(["synth", str(tmp_path / "z"), "-n", "0", *tiny_args()]) == 2
    assert main(["synth", str(tmp_path / "z"), *tiny_args("input_only_fraction=0.8",
                                                          "label_only_fraction=0.5")]) == 2
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["synth", str(blocker / "sub"), *tiny_args()]) == 3


# -- model file -----------------------------------------------------------------------

@pytest.fixture
def model(tmp_path):
    cfg = tiny_cfg()
    fw = cli.fresh_framework(cfg, 5)
    m = cli.model_file(cfg, fw, "mlp_in_out", 5, 10)
    path = tmp_path / "m.model"
    save_model(path, m)
    return path, m


def test_model_round_trip(model):
    path, m = model
    back = load_model(path)
    assert back.store.equal(m.store)
    assert back.header() == m.header()
    assert back.rng_algorithm == "numpy.PCG64"
    fw = back.framework()
    X = np.random.default_rng(0).random((16, 3))
    assert np.array_equal(fw.predict(X), cli.fresh_framework(tiny_cfg(), 5).predict(X))


def test_model_truncated(model, tmp_path):
    path, _ = model
    buf = path.read_bytes()
    for cut in (5, 40, len(buf) // 2, len(buf) - 2):
        (tmp_path / "t").write_bytes(buf[:cut])
        with pytest.raises(ModelFileError) as e:
            load_model(tmp_path / "t")
        assert isinstance(e.value, ModelTruncatedError) or cut == 5


def test_model_version_and_checksum(model, tmp_path):
    path, _ = model
    buf = bytearray(path.read_bytes())
    fut = bytearray(buf)
    fut[8:10] = struct.pack("<H", 2)
    (tmp_path / "v").write_bytes(bytes(fut))
    with pytest.raises(ModelVersionError, match="version 2"):
        load_model(tmp_path / "v")
    flip = bytearray(buf)
    flip[-20] ^= 0x01
    (tmp_path / "c").write_bytes(bytes(flip))
    with pytest.raises(ModelChecksumError):
        load_model(tmp_path / "c")
    bad = b"NOTAMODL" + bytes(buf[8:])
    (tmp_path / "b").write_bytes(bad)
    with pytest.raises(ModelFileError, match="bad magic"):
        load_model(tmp_path / "b")


def test_inspect(model, capsys):
    path, _ = model
    assert main(["inspect", str(path)]) == 0
    out = capsys.readouterr().out
    assert '"rng_algorithm": "numpy.PCG64"' in out
    assert "cin.1\t8x16" in out and "dout.1\t20x4" in out


# -- train / eval --------------------------------------------------------------------------

def run_train(tmp_path, name, *extra):
    m, l = tmp_path / f"{name}.model", tmp_path / f"{name}.csv"
    assert main(["train", *tiny_args(*extra), "--model", str(m), "--log", str(l)]) == 0
    return m, l


def test_train_deterministic(tmp_path):
    m1, l1 = run_train(tmp_path, "a", "seed=3")
    m2, l2 = run_train(tmp_path, "b", "seed=3")
    assert m1.read_bytes() == m2.read_bytes()
    assert l1.read_bytes() == l2.read_bytes()
    m3, _ = run_train(tmp_path, "c", "seed=4")
    assert m3.read_bytes() != m1.read_bytes()


def test_train_log_columns_follow_mode(tmp_path):
    _, l = run_train(tmp_path, "mlp", "mode=mlp")
    rows = read_csv(l)
    assert rows[0] == ["epoch", "lam_sup", "lam_in", "lam_out", "train_mse", "valid_mse", "j_in", "j_out"]
    assert len(rows) == 4
    assert all(float(r[6]) == 0.0 and float(r[7]) == 0.0 for r in rows[1:])
    _, l = run_train(tmp_path, "io", "mode=mlp_in_out", "extra_label_only=5", "extra_input_only=5")
    rows = read_csv(l)
    assert float(rows[1][7]) > 0.0 and float(rows[1][6]) > 0.0


def test_eval_and_baseline(tmp_path, capsys):
    m, _ = run_train(tmp_path, "a")
    paths = []
    for k in range(2):
        e, c = tmp_path / f"e{k}.csv", tmp_path / f"c{k}.csv"
        assert main(["eval", *tiny_args(), "--model", str(m), "--errors", str(e), "--cdf", str(c)]) == 0
        paths.append((e, c))
    assert paths[0][0].read_bytes() == paths[1][0].read_bytes()
    assert paths[0][1].read_bytes() == paths[1][1].read_bytes()
    assert "auc=" in capsys.readouterr().out
    e, c = tmp_path / "be.csv", tmp_path / "bc.csv"
    assert main(["eval", *tiny_args(), "--baseline", "--errors", str(e), "--cdf", str(c)]) == 0
    assert len(read_csv(e)) == 7
    assert main(["eval", *tiny_args(), "--errors", str(e), "--cdf", str(c)]) == 2


def test_eval_errors(tmp_path):
    m, _ = run_train(tmp_path, "a")
    bad = tmp_path / "bad.model"
    bad.write_bytes(b"XXXX" + m.read_bytes()[4:])
    out = ["--errors", str(tmp_path / "e"), "--cdf", str(tmp_path / "c")]
    assert main(["eval", *tiny_args(), "--model", str(bad), *out]) == 3
    other = tiny_args("dims=16,8,6,4,20")
    assert main(["eval", *other, "--model", str(tmp_path / "missing"), *out]) == 3
    # model trained on other dims than the data
    m9, _ = run_train(tmp_path, "wide", "dims=16,9,6,4,20")
    assert main(["eval", *tiny_args(), "--model", str(m9), *out]) == 0
    assert main(["eval", *tiny_args("img_side=5", "dims=25,8,6,4,20"), "--model", str(m9), *out]) == 3


def test_numeric_failure_exit_code(tmp_path, monkeypatch):
    from structmtl.numerics import ACTIVATIONS
    act, deriv = ACTIVATIONS["sigmoid"]
    monkeypatch.setitem(ACTIVATIONS, "sigmoid", (lambda z: act(z) * np.nan, deriv))
    rc = main(["train", *tiny_args(), "--model", str(tmp_path / "m"), "--log", str(tmp_path / "l")])
    assert rc == 4
    assert not (tmp_path / "m").exists()


def test_directory_training(tmp_path):
    assert main(["synth", str(tmp_path / "d"), "-n", "30", *tiny_args()]) == 0
    cfg = tiny_cfg(f"train_dir={tmp_path / 'd'}", "n_valid=5")
    splits = cli.make_splits(cfg)
    assert (len(splits.train), len(splits.valid), splits.test) == (25, 5, None)
    m, l = tmp_path / "m", tmp_path / "l"
    assert main(["train", *tiny_args(f"train_dir={tmp_path / 'd'}", "n_valid=5"), "--model", str(m),
                 "--log", str(l)]) == 0
    assert main(["train", *tiny_args(f"train_dir={tmp_path / 'nothing'}"), "--model", str(m),
                 "--log", str(l)]) == 3


# -- experiment ----------------------------------------------------------------------------

def test_experiment_shares_initialization(tmp_path, monkeypatch):
    seen = []
    real = cli.train

    def spy(fw, *a, **k):
        seen.append(fw.store.snapshot())
        return real(fw, *a, **k)

    monkeypatch.setattr(cli, "train", spy)
    rows = cli.cmd_experiment(tiny_cfg("seeds=0,1"), tmp_path / "t.csv")
    assert len(seen) == 8
    for per_seed in (seen[:4], seen[4:]):
        for snap in per_seed[1:]:
            assert all(np.array_equal(snap[i][0], per_seed[0][i][0]) for i in snap)
    assert not all(np.array_equal(seen[0][i][0], seen[4][i][0]) for i in seen[0])
    assert len(rows) == 12


def test_experiment_table(tmp_path):
    t = tmp_path / "t.csv"
    assert main(["experiment", *tiny_args("seeds=0,1,2,3,4", "epochs=1"), "--table", str(t)]) == 0
    rows = read_csv(t)
    assert rows[0] == ["seed", "mode", "best_valid_mse", "auc", "cdf_0.1"]
    assert len(rows) == 1 + 20 + 4
    assert [r[1] for r in rows[-4:]] == list(MODES)
    mlp = [float(r[2]) for r in rows[1:21] if r[1] == "mlp"]
    assert float(rows[-4][2]) == pytest.approx(np.mean(mlp), rel=1e-12)


def test_experiment_with_augmentation(tmp_path):
    t = tmp_path / "t.csv"
    args = tiny_args("seeds=0", "epochs=1", "extra_input_only=4", "extra_label_only=4")
    assert main(["experiment", *args, "--table", str(t), "--models-dir", str(tmp_path / "m")]) == 0
    names = [r[1] for r in read_csv(t)[1:]]
    assert names == list(MODES) + ["mlp_in_out+aug"] + list(MODES) + ["mlp_in_out+aug"]
    assert len(list((tmp_path / "m").iterdir())) == 5
