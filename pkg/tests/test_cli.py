import csv
import io
import subprocess
import sys

import pytest

from oracles import random_qnet
from rscw.cli import main
from rscw.neural import default_spec, save_weights


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    import os

    for k in list(os.environ):
        if k.startswith("RSCW_"):
            monkeypatch.delenv(k)


def _alloc_units(capsys, argv):
    assert main(argv) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    return [int(r[3]) for r in rows[1:-1]]


def test_usage_errors(capsys):
    assert main([]) == 2
    assert main(["nope"]) == 2
    assert main(["allocate"]) == 2  # --C missing
    assert main(["sample", "--L", "3", "--T", "3", "--out", "x"]) == 2  # --p missing
    assert main(["hamming", "--L", "3", "--T", "3", "--p", "0.01", "--model", "weird"]) == 2
    assert main(["--help"]) == 0
    capsys.readouterr()


def test_runtime_errors(tmp_path, capsys):
    assert main(["sample", "--L", "4", "--T", "3", "--p", "0.01", "--out", str(tmp_path / "a")]) == 1
    assert main(["decode", "--data", str(tmp_path / "missing.bin")]) == 1
    assert main(["allocate", "--M", "10,10", "--C", "1"]) == 1
    capsys.readouterr()


def test_allocate_output(capsys):
    assert _alloc_units(capsys, ["allocate", "--M", "100,400", "--C", "30"]) == [10, 20]
    units = _alloc_units(capsys, ["allocate", "--L", "5", "--C", "64"])
    assert len(units) >= 3


def test_settings_precedence(tmp_path, monkeypatch, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# defaults\nM = 100,400\nC=30\n")
    assert _alloc_units(capsys, ["allocate", "--config", str(cfg)]) == [10, 20]
    monkeypatch.setenv("RSCW_C", "60")
    monkeypatch.setenv("RSCW_SAMPLES", "5")  # belongs to other subcommands: ignored
    assert _alloc_units(capsys, ["allocate", "--config", str(cfg)]) == [20, 40]
    assert _alloc_units(capsys, ["allocate", "--config", str(cfg), "--C", "90"]) == [30, 60]
    assert _alloc_units(capsys, ["--config", str(cfg), "allocate", "--C=90"]) == [30, 60]


def test_unknown_or_bad_config_keys(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("C=30\nbogus=1\n")
    assert main(["allocate", "--M", "1,1", "--config", str(cfg)]) == 2
    cfg.write_text("C=thirty\n")
    assert main(["allocate", "--M", "1,1", "--config", str(cfg)]) == 2
    cfg.write_text("just words\n")
    assert main(["allocate", "--M", "1,1", "--config", str(cfg)]) == 2
    assert main(["allocate", "--M", "1,1", "--C", "4", "--config", str(tmp_path / "none.cfg")]) == 1
    capsys.readouterr()


def test_sample_decode_and_ler(tmp_path, capsys):
    data = tmp_path / "d.bin"
    assert main(["sample", "--L", "3", "--T", "3", "--p", "0.01", "--samples", "500",
                 "--out", str(data)]) == 0
    out = tmp_path / "pred.csv"
    assert main(["decode", "--data", str(data), "--decoder", "mwpm", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "class_accuracy" in text
    assert len(out.read_text().splitlines()) == 501

    lut = tmp_path / "t.lut"
    assert main(["export-lut", "--p", "0.01", "--samples", "20000", "--out", str(lut)]) == 0
    summary = tmp_path / "s.csv"
    raw = tmp_path / "r.csv"
    assert main(["bench-ler", "--L", "3", "--T", "3", "--p", "0.01", "--decoder", "lut",
                 "--lut", str(lut), "--trajectories", "50", "--allow-few",
                 "--out", str(summary), "--raw", str(raw)]) == 0
    row = next(csv.DictReader(open(summary)))
    assert row["decoder"] == "lut" and int(row["trajectories"]) == 50
    assert len(raw.read_text().splitlines()) == 51
    assert main(["bench-ler", "--L", "3", "--T", "3", "--p", "0.01", "--trajectories", "50"]) == 2
    assert main(["bench-ler", "--L", "3", "--T", "3", "--preset", "google", "--decoder", "none",
                 "--trajectories", "50", "--allow-few", "--max-cycles", "3"]) == 0
    capsys.readouterr()


def test_train_then_decode_with_networks(tmp_path, capsys):
    prefix = tmp_path / "net"
    assert main(["train", "--L", "3", "--T", "3", "--p", "0.01", "--samples", "2000",
                 "--epochs", "1", "--calibration", "500", "--float", "--out", str(prefix)]) == 0
    for t in "XZ":
        assert (tmp_path / f"net.{t}.mtlw").exists()
        assert (tmp_path / f"net.{t}.float.mtlw").exists()
        assert (tmp_path / f"net.{t}.log.csv").exists()
    data = tmp_path / "d.bin"
    main(["sample", "--L", "3", "--T", "3", "--p", "0.01", "--samples", "200", "--out", str(data)])
    assert main(["decode", "--data", str(data), "--decoder", "mtlnd",
                 "--weights-x", str(tmp_path / "net.X.mtlw"),
                 "--weights-z", str(tmp_path / "net.Z.mtlw")]) == 0
    assert main(["decode", "--data", str(data), "--decoder", "mtlnd"]) == 2
    capsys.readouterr()


def test_hamming_both_models(tmp_path, capsys):
    out = tmp_path / "h.csv"
    assert main(["hamming", "--L", "3", "--T", "3", "--p", "0.01", "--samples", "2000",
                 "--model", "both", "--out", str(out)]) == 0
    models = {r["model"] for r in csv.DictReader(open(out))}
    assert models == {"circuit", "phenomenological"}
    capsys.readouterr()


def test_npe_commands(tmp_path, capsys):
    spec = default_spec(3)
    wpath = tmp_path / "q.mtlw"
    with open(wpath, "wb") as fh:
        save_weights(fh, spec, random_qnet(spec, 0))
    cfg = tmp_path / "npe.cfg"
    cfg.write_text("mau_count=32\nmau_width=8\n")
    prog = tmp_path / "p.npe"
    assert main(["npe-compile", "--weights", str(wpath), "--out", str(prog), "--config", str(cfg)]) == 0
    trace = tmp_path / "trace.csv"
    assert main(["npe-sim", "--program", str(prog), "--inputs", "3", "--report",
                 "--sm-period", "1e-6", "--trace", str(trace)]) == 0
    text = capsys.readouterr().out
    assert "compute cycles" in text and "pipelined latency" in text
    assert trace.read_text().startswith("cycle,stage,instruction,event")
    assert main(["npe-sim", "--weights", str(wpath), "--inputs", "2"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 1 + 2 * len(spec.heads)
    cfg.write_text("mau_count=3\n")
    assert main(["npe-compile", "--weights", str(wpath), "--out", str(prog), "--config", str(cfg)]) == 1
    capsys.readouterr()


def test_module_entry_point():
    done = subprocess.run([sys.executable, "-m", "rscw", "allocate", "--M", "4,9", "--C", "5"],
                          capture_output=True, text=True)
    assert done.returncode == 0
    assert done.stdout.splitlines()[0] == "layer,M,alpha,units,continuous"
    bad = subprocess.run([sys.executable, "-m", "rscw", "frobnicate"], capture_output=True, text=True)
    assert bad.returncode == 2
