import json
import os
import re

import pytest

from multicenter.cli import main

SMALL = {
    "data": {"kind": "mixture", "num_classes": 3, "clusters_per_class": 2, "samples_per_class": 40, "seed": 1},
    "backbone": {"layer_dims": [2, 8, 4]},
    "head": {"sub_centers": 2},
    "train": {"epochs": 3, "batch_size": 16, "peak_lr": 0.01, "warmup_epochs": 1, "seed": 0},
    "output_dir": "run",
}


def write_config(tmp_path, doc=SMALL, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def test_train_writes_artifacts(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["train", cfg]) == 0
    run = tmp_path / "run"
    for name in ("metrics.jsonl", "final.ckpt", "resolved-config.json"):
        assert (run / name).exists()
    resolved = json.loads((run / "resolved-config.json").read_text())
    assert resolved["head"]["feature_dim"] == 4 and resolved["head"]["num_classes"] == 3
    assert len((run / "metrics.jsonl").read_text().splitlines()) == 3


def test_train_is_byte_identical(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["train", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["train", cfg, "--out", str(tmp_path / "b")]) == 0
    for name in ("metrics.jsonl", "final.ckpt", "last_good.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_override_changes_run(tmp_path):
    cfg = write_config(tmp_path)
    main(["train", cfg, "--out", str(tmp_path / "a")])
    main(["train", cfg, "--out", str(tmp_path / "b"), "--seed", "5"])
    assert (tmp_path / "a" / "final.ckpt").read_bytes() != (tmp_path / "b" / "final.ckpt").read_bytes()


def test_malformed_json_names_byte_offset(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"train": {"epochs": 3,, }}')
    assert main(["train", str(p)]) == 2
    err = capsys.readouterr().err
    assert "byte offset 23" in err and "line 1" in err


def test_unknown_key_rejected(tmp_path, capsys):
    doc = json.loads(json.dumps(SMALL))
    doc["train"]["learning_rate"] = 0.1
    assert main(["train", write_config(tmp_path, doc)]) == 2
    assert "learning_rate" in capsys.readouterr().err


def test_numeric_abort_exit_code(tmp_path, monkeypatch):
    import multicenter.trainer as T
    from multicenter.head import LossBreakdown

    real = T.backward

    def broken(*args, **kwargs):
        losses, grads = real(*args, **kwargs)
        return LossBreakdown(losses.l_m, losses.l_sigma, float("inf")), grads

    monkeypatch.setattr(T, "backward", broken)
    assert main(["train", write_config(tmp_path)]) == 3


def test_eval_full_and_collapsed_agree(tmp_path, capsys):
    cfg = write_config(tmp_path)
    main(["train", cfg])
    ckpt = str(tmp_path / "run" / "final.ckpt")
    small = str(tmp_path / "small.ckpt")
    assert main(["collapse", ckpt, small]) == 0
    assert os.path.getsize(small) < os.path.getsize(ckpt)
    capsys.readouterr()
    assert main(["eval", ckpt, "--config", cfg]) == 0
    full = capsys.readouterr().out
    assert main(["eval", small, "--config", cfg]) == 0
    assert capsys.readouterr().out == full
    assert re.fullmatch(r"top1=\d\.\d{6} n=24\n", full)


def test_eval_hand_counted_csv(tmp_path, capsys):
    from multicenter import checkpoint
    import numpy as np

    W = np.array([[1.0, -1.0], [0.0, 0.0]])
    checkpoint.save(tmp_path / "h.ckpt", checkpoint.Checkpoint(W, None, 0))
    # predictions: class 0 when x0 > 0, else class 1 (tie at 0 goes to class 0)
    (tmp_path / "d.csv").write_text("x0,x1,label\n1,5,0\n-1,2,1\n0,0,0\n2,1,1\n")
    assert main(["eval", str(tmp_path / "h.ckpt"), "--csv", str(tmp_path / "d.csv")]) == 0
    assert capsys.readouterr().out == "top1=0.750000 n=4\n"


def test_eval_corrupted_checkpoint(tmp_path, capsys):
    cfg = write_config(tmp_path)
    main(["train", cfg])
    raw = (tmp_path / "run" / "final.ckpt").read_bytes()
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(raw[:-7])
    assert main(["eval", str(bad), "--config", cfg]) == 2
    bad.write_bytes(b"JUNK" + raw[4:])
    assert main(["eval", str(bad), "--config", cfg]) == 2
    assert "magic" in capsys.readouterr().err


def test_gradcheck_default_passes(capsys):
    assert main(["gradcheck", "--trials", "5"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_gradcheck_k0_reports_vanilla(capsys):
    assert main(["gradcheck", "--dims", "4,3,0,5", "--trials", "2"]) == 0
    assert "vanilla_reduction" in capsys.readouterr().out


def test_gradcheck_detects_fault(capsys):
    assert main(["gradcheck", "--trials", "3", "--inject-fault", "dlog_sigma"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_gradcheck_rejects_huge_dims():
    assert main(["gradcheck", "--dims", "100,100,2,5"]) == 2


def test_sweep_k_single_point(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "sweep"
    assert main(["sweep-k", cfg, "--k-list", "0", "--seeds", "2", "--out", str(out)]) == 0
    rows = (out / "sweep.csv").read_text().splitlines()
    assert rows[0] == "k,seed,top1" and len(rows) == 3
    assert all(r.startswith("0,") for r in rows[1:])
    summary = (out / "sweep_summary.csv").read_text().splitlines()
    assert len(summary) == 2
    assert (out / "k0_seed0" / "metrics.jsonl").exists()
    table = (out / "sweep.csv").read_bytes()
    assert main(["sweep-k", cfg, "--k-list", "0", "--seeds", "2", "--out", str(out)]) == 0
    assert (out / "sweep.csv").read_bytes() == table


def test_gen_data(tmp_path):
    args = ["gen-data", "--num-classes", "3", "--samples-per-class", "10", "--seed", "4"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("train.csv", "test.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert len((tmp_path / "a" / "train.csv").read_text().splitlines()) == 1 + 24
    assert len((tmp_path / "a" / "test.csv").read_text().splitlines()) == 1 + 6


@pytest.mark.skipif(hasattr(os, "geteuid") and os.geteuid() == 0, reason="root ignores directory permissions")
def test_gen_data_unwritable_dir_permissions(tmp_path):
    locked = tmp_path / "locked"
    locked.mkdir()
    locked.chmod(0o500)
    try:
        assert main(["gen-data", "--out", str(locked / "sub")]) == 2
    finally:
        locked.chmod(0o700)


def test_gen_data_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    # a regular file where a directory is needed
    assert main(["gen-data", "--out", str(blocker / "sub")]) == 2
