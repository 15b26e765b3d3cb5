"""File formats and the command line, driven through ``main(argv)``."""
import csv
import io
import json
import shutil

import numpy as np
import pytest
import torch

from sphnet.cli import main
from sphnet.config import ConfigError, load_config, parse_config
from sphnet.io import (
    BadMagic,
    BadVersion,
    ChecksumMismatch,
    FormatError,
    format_xyz,
    load_checkpoint,
    matrix_bytes,
    parse_matrix,
    parse_xyz,
    read_dataset,
    read_trace,
    save_checkpoint,
    write_dataset,
    write_trace,
)
from sphnet.model import ModelConfig, SPHNet
from sphnet.model.graph import MoleculeGraph
from sphnet.training.data import generate_teacher_dataset, teacher_config

SMALL_MODEL = {"lmax": 4, "channels": 2, "n_vectorial": 1}


def tiny_dataset(n=3, seed=5):
    return generate_teacher_dataset(seed, n, (3, 4), teacher=teacher_config(7, **SMALL_MODEL))


def write_config(path, **sections):
    path.write_text(json.dumps(sections))
    return str(path)


# -- XYZ ----------------------------------------------------------------------------

def test_xyz_round_trip_is_exact():
    g = MoleculeGraph([8, 1, 1], [[0.1, 0.2, 0.3], [1 / 3, -2.5e-7, 0.0], [-0.7, 0.9, 1e-12]], "w")
    back = parse_xyz(format_xyz(g))
    np.testing.assert_array_equal(back.pos, g.pos)
    assert back.Z.tolist() == [8, 1, 1] and back.name == "w"


def test_xyz_accepts_crlf_and_trailing_blank_lines():
    text = "2\r\nmol\r\nC 0 0 0\r\nh 1.1 0 0\r\n\r\n"
    g = parse_xyz(text)
    assert g.Z.tolist() == [6, 1] and g.name == "mol"


@pytest.mark.parametrize("text", ["", "x\nm\n", "2\nm\nC 0 0 0\n", "1\nm\nC 0 0\n", "1\nm\nXx 0 0 0\n"])
def test_xyz_errors(text):
    with pytest.raises(FormatError):
        parse_xyz(text)


# -- binary matrices ------------------------------------------------------------------

def test_matrix_round_trip():
    H = np.random.default_rng(0).standard_normal((5, 5))
    np.testing.assert_array_equal(parse_matrix(matrix_bytes(H)), H)


def test_matrix_header_errors():
    good = matrix_bytes(np.eye(2))
    with pytest.raises(BadMagic):
        parse_matrix(b"NOPE" + good[4:])
    with pytest.raises(BadVersion):
        parse_matrix(good[:4] + (9).to_bytes(4, "little") + good[8:])
    with pytest.raises(FormatError):
        parse_matrix(good[:-8])
    with pytest.raises(ValueError):
        matrix_bytes(np.zeros((2, 3)))


# -- datasets ----------------------------------------------------------------------------

def test_dataset_round_trip(tmp_path):
    ds = tiny_dataset()
    write_dataset(ds, tmp_path / "d")
    back = read_dataset(tmp_path / "d")
    assert back.manifest["seed"] == 5
    for a, b in zip(ds.samples, back.samples):
        np.testing.assert_array_equal(a.H, b.H)
        np.testing.assert_array_equal(a.graph.pos, b.graph.pos)
    with pytest.raises(FileExistsError):
        write_dataset(ds, tmp_path / "d")


def test_dataset_detects_tampering(tmp_path):
    write_dataset(tiny_dataset(), tmp_path / "d")
    target = sorted((tmp_path / "d" / "hamiltonian").iterdir())[0]
    data = bytearray(target.read_bytes())
    data[-1] ^= 1
    target.write_bytes(bytes(data))
    with pytest.raises(ChecksumMismatch):
        read_dataset(tmp_path / "d")
    read_dataset(tmp_path / "d", verify=False)


# -- checkpoints and traces -----------------------------------------------------------------

def test_checkpoint_round_trip_with_gate_state(tmp_path):
    m = SPHNet(ModelConfig(**SMALL_MODEL, k_path=0.3, k_pair=0.3, tss_epoch=1, seed=2))
    m.set_epoch(1)
    m.freeze_gates()
    m.set_epoch(2)
    g = MoleculeGraph([6, 1, 8], [[0, 0, 0], [1.1, 0, 0], [-0.4, 1.2, 0.3]])
    m.eval()
    with torch.no_grad():
        ref = m([g]).matrices[0]
    save_checkpoint(tmp_path / "c.npz", m, 2, {"note": "x"})
    back, header = load_checkpoint(tmp_path / "c.npz")
    assert header["epoch"] == 2 and header["note"] == "x"
    with torch.no_grad():
        assert torch.equal(back([g]).matrices[0], ref)
    for (_, a), (_, b) in zip(m.gates(), back.gates()):
        assert a.phase == b.phase and (b.frozen is not None)
        assert a.scheduler.state() == b.scheduler.state()


def test_checkpoint_rejects_foreign_npz(tmp_path):
    np.savez(tmp_path / "x.npz", a=np.zeros(2))
    with pytest.raises(BadMagic):
        load_checkpoint(tmp_path / "x.npz")


def test_trace_round_trip(tmp_path):
    rows = [{"epoch": 0, "a": 0.1}, {"epoch": 1, "a": float("nan")}]
    write_trace(tmp_path / "t.csv", rows, ("epoch", "a"))
    back = read_trace(tmp_path / "t.csv")
    assert back[0] == {"epoch": 0, "a": 0.1} and np.isnan(back[1]["a"])


# -- config --------------------------------------------------------------------------------

def test_config_defaults_and_shorthand():
    cfg = parse_config({"k": 0.3, "t": 2})
    assert cfg.model.k_path == cfg.model.k_pair == 0.3 and cfg.model.tss_epoch == 2
    assert parse_config(cfg.to_dict()).to_dict() == cfg.to_dict()
    assert load_config(None).train.epochs == 50


@pytest.mark.parametrize("bad", [{"extra": 1}, {"model": {"width": 2}}, {"train": {"lr": -1}},
                                 {"model": {"k_path": 1.5}}, {"train": {"schedule": "cosine"}}])
def test_config_is_strict(bad):
    with pytest.raises(ConfigError):
        parse_config(bad)


# -- command line ----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "cfg.json", model={**SMALL_MODEL, "k_path": 0.3, "k_pair": 0.3,
                                                 "tss_epoch": 1},
                       train={"epochs": 3, "batch_size": 2, "lr": 5e-3, "warmup_steps": 1, "holdout": 1},
                       data={"n_molecules": 4, "size_range": [3, 4]})
    assert main(["gen-data", "--config", cfg, "--out", str(root / "data")]) == 0
    assert main(["train", "--config", cfg, "--data", str(root / "data"), "--out", str(root / "run")]) == 0
    return root


def test_gen_data_refuses_to_overwrite(run_dir, capsys):
    assert main(["gen-data", "--out", str(run_dir / "data"), "--n", "1"]) == 1
    assert "--force" in capsys.readouterr().err


def test_train_writes_outputs(run_dir):
    trace = read_trace(run_dir / "run" / "trace.csv")
    assert [r["epoch"] for r in trace] == [0, 1, 2]
    echo = json.loads((run_dir / "run" / "config.json").read_text())
    assert echo["model"]["k_path"] == 0.3 and echo["train"]["holdout"] == 1
    model, header = load_checkpoint(run_dir / "run" / "checkpoint.npz")
    assert header["run"]["data_path"].endswith("data")


def test_train_missing_data_is_usage_error(tmp_path):
    assert main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "r")]) == 1
    assert main(["train", "--out", str(tmp_path / "r")]) == 1


def test_train_bad_config_is_usage_error(run_dir, tmp_path):
    cfg = write_config(tmp_path / "bad.json", model={"lmax": 3})
    assert main(["train", "--config", cfg, "--data", str(run_dir / "data"), "--out", str(tmp_path)]) == 1


def test_train_divergence_exit_code(run_dir, tmp_path):
    cfg = write_config(tmp_path / "nan.json", model=SMALL_MODEL, train={"epochs": 1, "lr": 1e300})
    code = main(["train", "--config", cfg, "--data", str(run_dir / "data"), "--out", str(tmp_path / "r")])
    assert code == 2


def test_train_checksum_exit_code(run_dir, tmp_path):
    shutil.copytree(run_dir / "data", tmp_path / "d")
    target = sorted((tmp_path / "d" / "geometry").iterdir())[0]
    target.write_text(target.read_text() + " ")
    assert main(["train", "--data", str(tmp_path / "d"), "--out", str(tmp_path / "r")]) == 5


def test_equivariance_check_passes_and_fails(run_dir, capsys):
    ckpt = str(run_dir / "run" / "checkpoint.npz")
    assert main(["equivariance-check", "--checkpoint", ckpt, "--trials", "2"]) == 0
    assert "passed" in capsys.readouterr().out
    assert main(["equivariance-check", "--checkpoint", ckpt, "--trials", "2", "--corrupt-cg"]) == 6
    assert main(["equivariance-check", "--checkpoint", ckpt, "--trials", "2", "--translation-only"]) == 0


def test_inspect_gates(run_dir, capsys):
    ckpt = str(run_dir / "run" / "checkpoint.npz")
    assert main(["inspect-gates", "--checkpoint", ckpt, "--data", str(run_dir / "data")]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    gates = {r["gate"] for r in rows}
    assert "pair1.pair_tp_gate" in gates and "spherical2.pair_gate" in gates
    tp = [r for r in rows if r["gate"] == "pair1.pair_tp_gate"]
    assert len(tp) == 65 and sum(int(r["selected"]) for r in tp) == 46
    w = [float(r["weight"]) for r in tp]
    assert w == sorted(w, reverse=True)
    assert main(["inspect-gates", "--checkpoint", ckpt, "--gate", "pair2.diag_gate"]) == 0
    assert {r["gate"] for r in csv.DictReader(io.StringIO(capsys.readouterr().out))} == {"pair2.diag_gate"}


def test_bench_csv_to_file(tmp_path):
    out = tmp_path / "b.csv"
    assert main(["bench", "tp-order", "--lmax-list", "1,2,16", "--time-max-l", "2", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert [int(r["cost"]) for r in rows[:2]] == [55, 615]
    assert rows[2]["time_ns_median"] == "nan"


def test_bench_sparsity_stdout(capsys):
    assert main(["bench", "sparsity", "--lmax", "2", "--channels", "2", "--k-list", "0,0.5"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert [int(r["paths"]) for r in rows] == [15, 8]
