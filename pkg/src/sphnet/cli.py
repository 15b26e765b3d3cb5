"""``sphnet`` command line: data generation, training, checks, benchmarks, gate dumps.

Exit codes: 0 success, 1 usage / missing input, 2 training diverged,
3 bad file magic, 4 unsupported format version, 5 checksum mismatch,
6 equivariance check failed.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import bench
from .config import ConfigError, load_config
from .io import (
    FormatError,
    load_checkpoint,
    read_dataset,
    save_checkpoint,
    write_dataset,
    write_trace,
)
from .sparsity import Phase, SparsePairGate, SparseTPGate
from .training.data import Dataset, generate_teacher_dataset
from .training.train import TRACE_COLUMNS, TrainingDiverged, config_echo, train_loop

log = logging.getLogger("sphnet")

EXIT_USAGE, EXIT_DIVERGED, EXIT_EQUIVARIANCE = 1, 2, 6


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _emit(rows, columns, out: str | None) -> None:
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([r[c] for c in columns])
    finally:
        if out:
            fh.close()


def _require(path: str | None, what: str) -> Path:
    if not path:
        raise UsageError(f"{what} path is required")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} {p} does not exist")
    return p


# -- commands -----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    d = cfg.data
    n = args.n if args.n is not None else d.n_molecules
    seed = args.seed if args.seed is not None else d.seed
    ds = generate_teacher_dataset(seed, n, tuple(d.size_range), d.basis)
    try:
        write_dataset(ds, args.out, force=args.force)
    except FileExistsError as exc:
        raise UsageError(str(exc)) from None
    print(f"wrote {len(ds)} molecules to {args.out}")
    return 0


def cmd_train(args) -> int:
    data_path = _require(args.data, "data")
    cfg = load_config(args.config)
    ds = read_dataset(data_path)
    holdout = cfg.train.holdout
    if holdout >= len(ds):
        raise UsageError(f"holdout {holdout} leaves no training molecules out of {len(ds)}")
    train_set, eval_set = ds.split(len(ds) - holdout) if holdout else (ds, None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    echo = {**cfg.to_dict(), "data_path": str(data_path)}
    (out / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n")
    try:
        result = train_loop(cfg.model, cfg.train.core(), train_set, eval_set)
    except TrainingDiverged as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    write_trace(out / "trace.csv", result.trace, TRACE_COLUMNS)
    save_checkpoint(out / "checkpoint.npz", result.model, cfg.train.epochs - 1,
                    {"run": echo, "echo": config_echo(cfg.model, cfg.train.core())})
    print(f"checkpoint: {out / 'checkpoint.npz'}\ntrace: {out / 'trace.csv'}")
    return 0


def cmd_equivariance(args) -> int:
    from .cg import corrupted_cg
    from .equivariance import run_trials

    model, _ = load_checkpoint(_require(args.checkpoint, "checkpoint"))
    ctx = corrupted_cg(1, 1, 2) if args.corrupt_cg else contextlib.nullcontext()
    with ctx:
        # plans cache their coefficient tables; rebuild them under the hook
        if args.corrupt_cg:
            model = type(model)(model.config)
        devs = run_trials(model, args.trials, args.seed, translation_only=args.translation_only)
    worst = max(devs, default=0.0)
    print(f"trials={len(devs)} max_block_deviation={worst:.3e} tolerance={args.tolerance:.1e}")
    if worst > args.tolerance:
        print("equivariance check FAILED", file=sys.stderr)
        return EXIT_EQUIVARIANCE
    print("equivariance check passed")
    return 0


def cmd_bench(args) -> int:
    with bench.pinned_threads():
        if args.bench == "tp-order":
            rows = bench.bench_tp_order(_ints(args.lmax_list), args.channels, args.batch,
                                        args.time_max_l, repeats=args.repeats)
            cols = bench.TP_ORDER_COLUMNS
        elif args.bench == "sparsity":
            rows = bench.bench_sparsity(args.lmax, args.channels, _floats(args.k_list), args.batch,
                                        repeats=args.repeats, seed=args.seed)
            cols = bench.SPARSITY_COLUMNS
        elif args.bench == "pairs":
            rows = bench.bench_pairs(_ints(args.n_list), args.lmax, args.channels,
                                     repeats=args.repeats, seed=args.seed)
            cols = bench.PAIRS_COLUMNS
        else:
            rows = bench.bench_backends(_ints(args.lmax_list), args.channels, args.batch,
                                        repeats=args.repeats)
            cols = bench.BACKEND_COLUMNS
    _emit(rows, cols, args.out)
    return 0


def _probe_pair_scores(model, graph) -> dict:
    """Run one molecule through the model and record each pair gate's scores and candidates."""
    batch = model.collate([graph])
    up = batch.edges[0] < batch.edges[1]
    candidates = {"spherical2": (batch.edges[0][up], batch.edges[1][up])}
    gates = dict(model.gates())
    captured = {}
    for name, g in gates.items():
        if isinstance(g, SparsePairGate):
            def score(inv, name=name, inner=g.score):
                s = inner(inv)
                captured[name] = s.detach().numpy().copy()
                return s
            g.score = score
    try:
        with torch.no_grad():
            model(batch)
    finally:
        for g in gates.values():
            g.__dict__.pop("score", None)
    out = {}
    for name, s in captured.items():
        i, j = candidates.get(name, batch.pairs)
        out[name] = (s, i, j, gates[name].last_mask)
    return out


def gate_rows(model, probe: Dataset | None = None) -> list[dict]:
    """One row per scored element of every gate, sorted by descending weight within a gate."""
    pair_scores = {}
    if probe is not None and len(probe):
        pair_scores = _probe_pair_scores(model, probe.samples[0].graph)
    rows = []
    for name, g in model.gates():
        if isinstance(g, SparseTPGate):
            for rank, path, w, sel in g.dump():
                rows.append({"gate": name, "rank": rank, "element": "({},{},{})".format(*path),
                             "weight": w, "selected": int(sel)})
        elif name in pair_scores:
            s, i, j, mask = pair_scores[name]
            for rank, idx in enumerate(np.argsort(-s, kind="stable")):
                rows.append({"gate": name, "rank": rank + 1, "element": f"({i[idx]},{j[idx]})",
                             "weight": float(s[idx]), "selected": int(mask[idx])})
    return rows


def cmd_inspect(args) -> int:
    model, header = load_checkpoint(_require(args.checkpoint, "checkpoint"))
    phase = model.gate_phase()
    if phase is None:
        print("checkpoint has no gates", file=sys.stderr)
        return 0
    if phase is Phase.RANDOM:
        print("warning: gates are in the random phase; selections are stochastic and the "
              "flags below show the top-score set", file=sys.stderr)
    probe = read_dataset(args.data) if args.data else None
    rows = gate_rows(model, probe)
    if args.gate:
        rows = [r for r in rows if r["gate"] == args.gate]
    _emit(rows, ("gate", "rank", "element", "weight", "selected"), args.out)
    return 0


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sphnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a teacher-labelled dataset")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train on a dataset directory")
    t.add_argument("--config")
    t.add_argument("--data")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("equivariance-check", help="rotate/translate random molecules through a checkpoint")
    e.add_argument("--checkpoint")
    e.add_argument("--trials", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--tolerance", type=float, default=1e-7)
    e.add_argument("--translation-only", action="store_true")
    e.add_argument("--corrupt-cg", action="store_true", help=argparse.SUPPRESS)
    e.set_defaults(func=cmd_equivariance)

    b = sub.add_parser("bench", help="scaling benchmarks (CSV)")
    b.add_argument("bench", choices=("tp-order", "sparsity", "pairs", "backends"))
    b.add_argument("--lmax-list", default="1,2,3,4,5,6,8,16,32")
    b.add_argument("--lmax", type=int, default=None)
    b.add_argument("--channels", type=int, default=None)
    b.add_argument("--k-list", default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")
    b.add_argument("--n-list", default="16,32,64,128")
    b.add_argument("--batch", type=int, default=4)
    b.add_argument("--time-max-l", type=int, default=8)
    b.add_argument("--repeats", type=int, default=7)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    i = sub.add_parser("inspect-gates", help="dump gate scores and selections")
    i.add_argument("--checkpoint")
    i.add_argument("--data", help="dataset whose first molecule is used to score pairs")
    i.add_argument("--gate")
    i.add_argument("--out")
    i.set_defaults(func=cmd_inspect)
    return p


_BENCH_DEFAULTS = {
    "tp-order": {"channels": 1},
    "sparsity": {"lmax": 6, "channels": 64},
    "pairs": {"lmax": 4, "channels": 8},
    "backends": {"channels": 16},
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "bench":
        for key, val in _BENCH_DEFAULTS[args.bench].items():
            if getattr(args, key) is None:
                setattr(args, key, val)
        if args.bench == "backends" and args.lmax_list == parser.get_default("lmax_list"):
            args.lmax_list = "2,4,6"
    torch.set_num_threads(bench.thread_count(torch.get_num_threads()))
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
