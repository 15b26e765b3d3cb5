"""On-disk formats: XYZ geometries, binary matrices, dataset manifest, checkpoints, traces."""
from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .model.basis import NUMBERS, SYMBOLS
from .model.graph import MoleculeGraph
from .model.network import ModelConfig, SPHNet
from .training.data import Dataset, Sample

MATRIX_MAGIC = b"SPHH"
MATRIX_VERSION = 1
MANIFEST_VERSION = 1
CHECKPOINT_VERSION = 1
TRACE_VERSION = 1


class FormatError(Exception):
    """Unreadable file; ``exit_code`` is what the CLI returns for it."""

    exit_code = 1


class BadMagic(FormatError):
    exit_code = 3


class BadVersion(FormatError):
    exit_code = 4


class ChecksumMismatch(FormatError):
    exit_code = 5


# -- XYZ -------------------------------------------------------------------

def format_xyz(graph: MoleculeGraph, comment: str | None = None) -> str:
    lines = [str(graph.n_atoms), comment if comment is not None else graph.name]
    for z, (x, y, w) in zip(graph.Z, graph.pos):
        lines.append(f"{SYMBOLS.get(int(z), str(z))} {float(x)!r} {float(y)!r} {float(w)!r}")
    return "\n".join(lines) + "\n"


def parse_xyz(text: str) -> MoleculeGraph:
    """Count line, comment line (molecule id), then ``element x y z`` rows in Angstrom."""
    lines = text.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    while lines and not lines[-1].strip():
        lines.pop()
    if len(lines) < 2:
        raise FormatError("XYZ text needs a count line and a comment line")
    try:
        n = int(lines[0].strip())
    except ValueError:
        raise FormatError(f"bad atom count line {lines[0]!r}") from None
    rows = lines[2:]
    if len(rows) != n:
        raise FormatError(f"XYZ declares {n} atoms but has {len(rows)} coordinate lines")
    Z, pos = [], []
    for row in rows:
        parts = row.split()
        if len(parts) != 4:
            raise FormatError(f"bad XYZ row {row!r}")
        sym = parts[0]
        z = NUMBERS.get(sym.capitalize()) if not sym.isdigit() else int(sym)
        if z is None:
            raise FormatError(f"unknown element symbol {sym!r}")
        Z.append(z)
        pos.append([float(v) for v in parts[1:]])
    return MoleculeGraph(np.array(Z), np.array(pos).reshape(-1, 3), lines[1].strip())


def write_xyz(path, graph: MoleculeGraph) -> None:
    Path(path).write_text(format_xyz(graph))


def read_xyz(path) -> MoleculeGraph:
    return parse_xyz(Path(path).read_text())


# -- binary matrices --------------------------------------------------------

def matrix_bytes(H: np.ndarray) -> bytes:
    H = np.asarray(H, dtype="<f8")
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"expected a square matrix, got {H.shape}")
    return MATRIX_MAGIC + struct.pack("<II", MATRIX_VERSION, H.shape[0]) + np.ascontiguousarray(H).tobytes()


def parse_matrix(data: bytes) -> np.ndarray:
    if data[:4] != MATRIX_MAGIC:
        raise BadMagic(f"bad matrix magic {data[:4]!r}")
    if len(data) < 12:
        raise FormatError("truncated matrix header")
    version, n = struct.unpack("<II", data[4:12])
    if version != MATRIX_VERSION:
        raise BadVersion(f"matrix format version {version} is not supported")
    body = data[12:]
    if len(body) != 8 * n * n:
        raise FormatError(f"matrix body has {len(body)} bytes, expected {8 * n * n}")
    return np.frombuffer(body, dtype="<f8").reshape(n, n).astype(np.float64)


def write_matrix(path, H) -> None:
    Path(path).write_bytes(matrix_bytes(H))


def read_matrix(path) -> np.ndarray:
    return parse_matrix(Path(path).read_bytes())


# -- datasets -----------------------------------------------------------------

def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_dataset(dataset: Dataset, out, force: bool = False) -> Path:
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not force:
        raise FileExistsError(f"{out} is not empty; pass --force to overwrite")
    (out / "geometry").mkdir(parents=True, exist_ok=True)
    (out / "hamiltonian").mkdir(parents=True, exist_ok=True)
    entries = []
    for m, s in enumerate(dataset.samples):
        name = s.graph.name or f"mol{m:05d}"
        xyz = format_xyz(s.graph, name).encode()
        mat = matrix_bytes(s.H)
        xyz_path, mat_path = f"geometry/{name}.xyz", f"hamiltonian/{name}.sphh"
        (out / xyz_path).write_bytes(xyz)
        (out / mat_path).write_bytes(mat)
        entry = {"id": name, "xyz": xyz_path, "xyz_sha256": _sha256(xyz),
                 "matrix": mat_path, "matrix_sha256": _sha256(mat)}
        if s.S is not None:
            sb = matrix_bytes(s.S)
            entry["overlap"] = f"hamiltonian/{name}.overlap.sphh"
            entry["overlap_sha256"] = _sha256(sb)
            (out / entry["overlap"]).write_bytes(sb)
        entries.append(entry)
    manifest = {"version": MANIFEST_VERSION, **dataset.manifest, "molecules": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def _checked(root: Path, rel: str, digest: str, verify: bool) -> bytes:
    data = (root / rel).read_bytes()
    if verify and _sha256(data) != digest:
        raise ChecksumMismatch(f"checksum mismatch for {rel}")
    return data


def read_dataset(path, verify: bool = True) -> Dataset:
    root = Path(path)
    mpath = root / "manifest.json"
    if not mpath.is_file():
        raise FileNotFoundError(f"no manifest.json under {root}")
    manifest = json.loads(mpath.read_text())
    if manifest.get("version") != MANIFEST_VERSION:
        raise BadVersion(f"manifest version {manifest.get('version')} is not supported")
    samples = []
    for e in manifest["molecules"]:
        graph = parse_xyz(_checked(root, e["xyz"], e["xyz_sha256"], verify).decode())
        H = parse_matrix(_checked(root, e["matrix"], e["matrix_sha256"], verify))
        S = None
        if "overlap" in e:
            S = parse_matrix(_checked(root, e["overlap"], e["overlap_sha256"], verify))
        samples.append(Sample(graph, H, S))
    meta = {k: v for k, v in manifest.items() if k not in ("molecules", "version")}
    return Dataset(samples, meta)


# -- checkpoints ----------------------------------------------------------------

_HEADER_KEY = "__header__"


def save_checkpoint(path, model: SPHNet, epoch: int, extra: dict | None = None) -> None:
    """``.npz`` of parameters plus a JSON header with config and gate state."""
    arrays = {f"param/{n}": p.detach().numpy().copy() for n, p in model.named_parameters()}
    gates = {}
    for name, g in model.gates():
        state = {"scheduler": g.scheduler.state(), "epoch": g.epoch, "phase": g.phase.value,
                 "frozen": g.frozen is not None, "kind": type(g).__name__}
        if g.frozen is not None:
            frozen = g.frozen if isinstance(g.frozen, tuple) else (g.frozen,)
            for n, t in enumerate(frozen):
                arrays[f"frozen/{name}/{n}"] = t.numpy().copy()
        if g.last_mask is not None and type(g).__name__ == "SparseTPGate":
            arrays[f"mask/{name}"] = g.last_mask.astype(np.uint8)
        gates[name] = state
    header = {"version": CHECKPOINT_VERSION, "config": model.config.to_dict(), "epoch": epoch,
              "gates": gates, **(extra or {})}
    arrays[_HEADER_KEY] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    buf = _io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[SPHNet, dict]:
    with np.load(Path(path), allow_pickle=False) as data:
        if _HEADER_KEY not in data:
            raise BadMagic(f"{path} is not a model checkpoint")
        header = json.loads(bytes(data[_HEADER_KEY]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise BadVersion(f"checkpoint version {header.get('version')} is not supported")
        model = SPHNet(ModelConfig.from_dict(header["config"]))
        params = dict(model.named_parameters())
        with torch.no_grad():
            for name, p in params.items():
                p.copy_(torch.from_numpy(data[f"param/{name}"]))
        for name, g in model.gates():
            st = header["gates"][name]
            g.scheduler.load_state(st["scheduler"])
            g.set_epoch(st["epoch"])
            if st["frozen"]:
                parts = []
                n = 0
                while f"frozen/{name}/{n}" in data:
                    parts.append(torch.from_numpy(data[f"frozen/{name}/{n}"].copy()))
                    n += 1
                g.frozen = tuple(parts) if len(parts) > 1 else parts[0]
            if f"mask/{name}" in data:
                g.last_mask = data[f"mask/{name}"].astype(bool)
    model.eval()
    return model, header


# -- traces ------------------------------------------------------------------------

def write_trace(path, rows, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([row[c] if isinstance(row[c], int) else repr(float(row[c])) for c in columns])


def read_trace(path) -> list[dict]:
    with open(path, newline="") as fh:
        out = []
        for row in csv.DictReader(fh):
            out.append({k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()})
        return out

