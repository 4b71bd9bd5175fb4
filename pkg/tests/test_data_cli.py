import csv
import struct

import numpy as np
import pytest

from detrame.cli import read_config, run_command
from detrame.data import (
    IdxDimensionError, IdxMagicError, IdxTruncatedError, LabelRangeError,
    gen_two_moons, load_idx, standardize, write_idx,
)


@pytest.fixture
def idx_pair(tmp_path):
    r = np.random.default_rng(0)
    imgs = r.integers(0, 256, (6, 28, 28), dtype=np.uint8)
    labels = np.array([0, 1, 2, 3, 4, 9], dtype=np.uint8)
    write_idx(tmp_path / "img.idx", imgs)
    write_idx(tmp_path / "lab.idx", labels)
    return tmp_path / "img.idx", tmp_path / "lab.idx", imgs, labels


def test_idx_header_bytes(idx_pair):
    img_path, lab_path, imgs, _ = idx_pair
    raw = img_path.read_bytes()
    assert struct.unpack(">iiii", raw[:16]) == (2051, 6, 28, 28)
    assert struct.unpack(">ii", lab_path.read_bytes()[:8]) == (2049, 6)


def test_load_idx(idx_pair):
    img_path, lab_path, imgs, labels = idx_pair
    ds = load_idx(img_path, lab_path)
    assert ds.X.shape == (6, 784) and ds.X.dtype == np.float64
    np.testing.assert_array_equal(ds.X[2], imgs[2].reshape(-1) / 255.0)
    np.testing.assert_array_equal(ds.y, labels)
    assert 0 <= ds.X.min() and ds.X.max() <= 1
    assert load_idx(img_path, lab_path, flatten=False).X.shape == (6, 1, 28, 28)


def test_idx_truncated(tmp_path):
    p = tmp_path / "t.idx"
    p.write_bytes(struct.pack(">iiii", 2051, 3, 28, 28))
    with pytest.raises(IdxTruncatedError):
        load_idx(p, p)
    p.write_bytes(struct.pack(">ii", 2051, 3))
    with pytest.raises(IdxTruncatedError):
        load_idx(p, p)


def test_idx_wrong_magic(tmp_path, idx_pair):
    img_path, lab_path, *_ = idx_pair
    with pytest.raises(IdxMagicError):
        load_idx(lab_path, lab_path)
    with pytest.raises(IdxMagicError):
        load_idx(img_path, img_path)


def test_idx_dim_overflow(tmp_path):
    p = tmp_path / "o.idx"
    p.write_bytes(struct.pack(">iiii", 2051, 70000, 70000, 70000))
    with pytest.raises(IdxDimensionError):
        load_idx(p, p)
    p.write_bytes(struct.pack(">iiii", 2051, -1, 2, 2))
    with pytest.raises(IdxDimensionError):
        load_idx(p, p)


def test_idx_label_range(tmp_path, idx_pair):
    img_path, *_ = idx_pair
    write_idx(tmp_path / "bad.idx", np.array([0, 1, 12, 3, 4, 5], dtype=np.uint8))
    with pytest.raises(LabelRangeError):
        load_idx(img_path, tmp_path / "bad.idx", class_count=10)


def test_two_moons_noise_free():
    ds = gen_two_moons(200, 0.0, seed=1)
    r = np.linalg.norm(ds.X[ds.y == 0], axis=1)
    assert np.max(np.abs(r - 1)) <= 1e-12
    assert np.all(ds.X[ds.y == 0][:, 1] >= 0)
    shifted = ds.X[ds.y == 1] - [1.0, 0.5]
    assert np.max(np.abs(np.linalg.norm(shifted, axis=1) - 1)) <= 1e-12


def test_two_moons_seeded():
    a, b = gen_two_moons(50, 0.1, 7), gen_two_moons(50, 0.1, 7)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
    assert not np.array_equal(a.X, gen_two_moons(50, 0.1, 8).X)


def test_standardize_uses_train_stats(rng):
    tr = rng.normal(3, 2, (100, 3))
    te = rng.normal(0, 1, (10, 3))
    mean, std, Xtr, (Xte,) = standardize(tr, te)
    np.testing.assert_allclose(Xtr.mean(0), 0, atol=1e-12)
    np.testing.assert_allclose(Xte, (te - mean) / std)


# ---------------------------------------------------------------------------

QUICK = """
seed = 3  # comment
[data]
dataset = two_moons
n_train = 40
n_test = 40
[model]
hidden = 6, 6
tt_max = 2
[train]
lr = 0.1
epochs = 3
batch_size = 16
"""


@pytest.fixture
def quick_cfg(tmp_path):
    p = tmp_path / "quick.cfg"
    p.write_text(QUICK)
    return p


def read_rows(path):
    with open(path) as f:
        return list(csv.reader(f))


def test_config_parsing(quick_cfg):
    cp = read_config(quick_cfg)
    assert cp.get("general", "seed") == "3"
    assert cp.get("model", "hidden") == "6, 6"


def test_bad_config_exit_2(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("[train]\nlr = fast\n")
    assert run_command(["train", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    p.write_text("[train\nlr = 1\n")
    assert run_command(["train", "--config", str(p)]) == 2
    assert run_command(["train", "--config", str(tmp_path / "missing.cfg")]) == 2
    p.write_text("[data]\ndataset = cifar\n")
    assert run_command(["train", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


def test_unknown_subcommand():
    assert run_command(["bogus"]) == 2


def test_train_writes_csv_and_model(quick_cfg, tmp_path, capsys):
    out = tmp_path / "run"
    assert run_command(["train", "--config", str(quick_cfg), "--out", str(out)]) == 0
    rows = read_rows(out / "metrics.csv")
    assert rows[0] == ["epoch", "train_loss", "train_acc", "test_acc", "wall_s"]
    assert len(rows) == 4
    assert [int(r[0]) for r in rows[1:]] == [0, 1, 2]
    assert (out / "model.bin").exists()
    capsys.readouterr()
    assert run_command(["eval", "--config", str(quick_cfg), "--out", str(out)]) == 0
    assert capsys.readouterr().out.startswith("accuracy=")


def test_train_csv_round_trips(quick_cfg, tmp_path):
    from detrame.cli import _prepare, build_model, train_config
    from detrame.train import train_loop

    out = tmp_path / "run"
    run_command(["train", "--config", str(quick_cfg), "--out", str(out)])
    rows = read_rows(out / "metrics.csv")[1:]
    cp = read_config(quick_cfg)
    tr, te, _, _, Xtr, Xte = _prepare(cp, 3)
    model = build_model(cp, tr.X.shape[1:], 2, 3)
    hist = train_loop(model, (Xtr, tr.y), (Xte, te.y), train_config(cp, 3))
    for row, rec in zip(rows, hist.records):
        assert float(row[1]) == rec.train_loss and float(row[3]) == rec.test_acc


def test_seed_override_changes_run(quick_cfg, tmp_path):
    run_command(["train", "--config", str(quick_cfg), "--out", str(tmp_path / "a")])
    run_command(["train", "--config", str(quick_cfg), "--seed", "99", "--out", str(tmp_path / "b")])
    assert read_rows(tmp_path / "a" / "metrics.csv") != read_rows(tmp_path / "b" / "metrics.csv")


def test_wall_time_opt_in(quick_cfg, tmp_path):
    cfg = tmp_path / "wall.cfg"
    cfg.write_text(QUICK + "[output]\nwall_time = true\n")
    run_command(["train", "--config", str(cfg), "--out", str(tmp_path / "w")])
    assert any(float(r[4]) > 0 for r in read_rows(tmp_path / "w" / "metrics.csv")[1:])


def test_train_on_idx_conv(tmp_path, idx_pair):
    img_path, lab_path, *_ = idx_pair
    cfg = tmp_path / "idx.cfg"
    cfg.write_text(f"""
[data]
dataset = idx
train_images = {img_path}
train_labels = {lab_path}
test_images = {img_path}
test_labels = {lab_path}
[model]
conv_channels = 2
stride = 2
padding = 0
hidden = 4
[train]
epochs = 2
batch_size = 3
lr = 0.01
""")
    out = tmp_path / "idx_run"
    assert run_command(["train", "--config", str(cfg), "--out", str(out)]) == 0
    assert run_command(["eval", "--config", str(cfg), "--out", str(out)]) == 0


def test_equiv_check_default(tmp_path, capsys):
    assert run_command(["equiv-check", "--out", str(tmp_path)]) == 0
    line = capsys.readouterr().out
    assert float(line.split()[0].split("=")[1]) <= 1e-6
    assert len(read_rows(tmp_path / "equiv.csv")) == 21


def test_equiv_check_fails_on_loose_solver(tmp_path):
    cfg = tmp_path / "e.cfg"
    cfg.write_text("[equiv]\ninstances = 2\nsolver_tol = 1e-2\ntol = 1e-12\n")
    assert run_command(["equiv-check", "--config", str(cfg)]) == 1


def test_gradcheck_command(capsys):
    assert run_command(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "detrame-2layer" in out


def test_prox_bench(tmp_path):
    cfg = tmp_path / "b.cfg"
    cfg.write_text("[bench]\ninstances = 2\nk = 4\nn = 3\ntt_values = 1, 3, 500\n")
    assert run_command(["prox-bench", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "prox_bench.csv")
    assert rows[0] == ["tt_max", "instance", "max_err", "rnn_s", "oracle_s"]
    assert len(rows) == 1 + 2 * 3
    assert all(float(r[2]) <= 1e-6 for r in rows[1:] if r[0] == "500")
