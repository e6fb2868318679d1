"""layersim command line: data generation, training, rollout, evaluation, export, checks."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .metrics import EvalReport, MetricsError, score_sequence
from .model import ModelParams, Simulator, load_checkpoint
from .model.params import CheckpointError
from .oracle import FormatError, OracleDivergence, Sequence, generate_sequence, read_lseq, \
    write_lseq
from .oracle.lseq import list_sequences

log = logging.getLogger("layersim")

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class Diverged(Exception):
    pass


def _threads() -> int:
    raw = os.environ.get("LAYERSIM_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"LAYERSIM_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("LAYERSIM_THREADS must be at least 1")
    return n


def sequence_seed(seed: int, index: int) -> int:
    """Per-sequence seed, independent of how many sequences are generated."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _existing(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} {p} does not exist")
    return p


def _load_dir(directory) -> list[tuple[str, Sequence]]:
    paths = list_sequences(_existing(directory, "data directory"))
    if not paths:
        raise UsageError(f"no .lseq files in {directory}")
    return [(p.stem, read_lseq(p)) for p in paths]


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.count < 1:
        raise UsageError("--count must be at least 1")

    def one(i):
        scene = dataclasses.replace(cfg.scene, seed=sequence_seed(args.seed, i))
        try:
            seq = generate_sequence(scene)
        except OracleDivergence as e:
            raise Diverged(f"sequence {i}: {e}") from None
        return write_lseq(out / f"seq_{i:04d}.lseq", seq)

    with ThreadPoolExecutor(max_workers=min(_threads(), args.count)) as pool:
        for path in pool.map(one, range(args.count)):
            log.info("wrote %s", path)
    print(f"wrote {args.count} sequences to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .plotting import plot_training_log
    from .training import Trainer

    cfg = load_config(args.config)
    data = _load_dir(args.data)
    model_cfg = dataclasses.replace(cfg.model, seed=args.seed)
    train_cfg = dataclasses.replace(cfg.train, seed=args.seed)
    params = ModelParams.init(model_cfg)
    trainer = Trainer(params, [s for _, s in data], train_cfg, cfg.loss)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path = Path(args.log) if args.log else out.with_suffix(".log.csv")
    rows = trainer.fit(log_path=log_path)
    trainer.save(out)
    fig = plot_training_log(rows, log_path.with_suffix(".png"))
    print(f"trained {trainer.step_count} steps; checkpoint {out}, log {log_path}, figure {fig}")
    return EXIT_OK


def rollout_to_sequence(sim: Simulator, seq: Sequence, start: int | None, steps: int | None,
                        seed: int = 0) -> tuple[Sequence, int | None]:
    """Truth up to and including ``start``, predictions after; truncated on divergence."""
    h = sim.config.history
    start = h if start is None else start
    if start < h or start >= seq.n_frames - 1:
        raise UsageError(f"rollout start {start} outside [{h}, {seq.n_frames - 2}]")
    res = sim.rollout_sequence(seq, start=start, steps=steps, seed=seed)
    n = start + 1 + len(res.positions)
    pos = seq.positions[:n].copy()
    if res.positions:
        pos[start + 1:] = np.stack(res.positions)
    header = dict(seq.header)
    header["rollout"] = {"start": start, "predicted": len(res.positions),
                         "diverged_at": res.diverged_at, "seed": seed}
    pred = Sequence(header, pos.astype(np.float32).astype(np.float64), seq.body[:n],
                    seq.body_normals[:n], seq.wind[:n])
    return pred, res.diverged_at


def _simulator(ckpt) -> Simulator:
    params, _ = load_checkpoint(_existing(ckpt, "checkpoint"))
    return Simulator(params)


def cmd_rollout(args) -> int:
    sim = _simulator(args.ckpt)
    seq = read_lseq(_existing(args.seq, "sequence"))
    pred, diverged = rollout_to_sequence(sim, seq, args.start, args.steps, args.seed)
    write_lseq(args.out, pred)
    print(f"wrote {pred.n_frames} frames to {args.out}")
    if diverged is not None:
        print(f"rollout diverged at step {diverged}; output truncated", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _predicted_frames(pred: Sequence) -> tuple[np.ndarray, int]:
    info = pred.header.get("rollout")
    if not info:
        raise UsageError("prediction file carries no rollout metadata")
    start = int(info["start"])
    return pred.positions[start + 1:], start + 1


def cmd_eval(args) -> int:
    from .plotting import plot_eval_report

    cfg = load_config(args.config)
    ev = cfg.eval
    data = _load_dir(args.data)
    if bool(args.ckpt) == bool(args.pred):
        raise UsageError("give exactly one of --ckpt or --pred")
    sim = _simulator(args.ckpt) if args.ckpt else None
    scores, diverged = [], False
    for name, seq in data:
        if sim is not None:
            pred, div = rollout_to_sequence(sim, seq, ev.start, ev.steps, ev.rollout_seed)
            diverged |= div is not None
        else:
            pred = read_lseq(_existing(Path(args.pred) / f"{name}.lseq", "prediction"))
        frames, first = _predicted_frames(pred)
        scores.append(score_sequence(name, seq, frames, first, ev.d_pen, ev.garment_radius_scale))
    report = EvalReport(scores)
    path = report.write_csv(args.report)
    fig = plot_eval_report(report, Path(args.report).with_suffix(".png"))
    print(f"euclid_err_m={report.euclid_err_m:.6g} coll_body_pct={report.coll_body_pct:.4g} "
          f"coll_garment_pct={report.coll_garment_pct:.4g}; report {path}, figure {fig}")
    return EXIT_DIVERGED if diverged else EXIT_OK


def write_obj(path, positions, faces) -> Path:
    path = Path(path)
    lines = [f"v {x:.7g} {y:.7g} {z:.7g}" for x, y, z in np.asarray(positions)]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in np.asarray(faces)]
    path.write_text("\n".join(lines) + "\n")
    return path


def cmd_export_obj(args) -> int:
    seq = read_lseq(_existing(args.seq, "sequence"))
    if not 0 <= args.frame < seq.n_frames:
        raise UsageError(f"frame {args.frame} outside [0, {seq.n_frames - 1}]")
    topo = seq.combined_topology()
    write_obj(args.out, seq.positions[args.frame], topo.faces)
    print(f"wrote {topo.n_vertices} vertices, {len(topo.faces)} faces to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .verify import gradcheck_report

    worst, rows = gradcheck_report(seed=args.seed)
    for name, err in rows:
        print(f"{name:24s} {err:.3e}")
    ok = worst < args.tol
    print(f"max relative error {worst:.3e} ({'ok' if ok else 'FAIL'} at tol {args.tol:g})")
    return EXIT_OK if ok else EXIT_INVALID


def cmd_verify(args) -> int:
    from .verify import run_all

    results = run_all(seed=args.seed)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'}  {r.name}: {r.detail}")
    return EXIT_OK if all(r.ok for r in results) else EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="layersim", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="simulate oracle sequences")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a simulator on a directory of sequences")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--log", help="CSV training log (default: next to the checkpoint)")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("rollout", help="predict a sequence from its first frames")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--seq", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--start", type=int)
    r.add_argument("--steps", type=int)
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(func=cmd_rollout)

    e = sub.add_parser("eval", help="score rollouts against ground truth")
    e.add_argument("--ckpt")
    e.add_argument("--pred", help="directory of rollout files named like the data files")
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--config")
    e.set_defaults(func=cmd_eval)

    o = sub.add_parser("export-obj", help="write one frame as a Wavefront OBJ")
    o.add_argument("--seq", required=True)
    o.add_argument("--frame", type=int, required=True)
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_export_obj)

    c = sub.add_parser("gradcheck", help="finite-difference check of every parameter block")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--tol", type=float, default=1e-4)
    c.set_defaults(func=cmd_gradcheck)

    v = sub.add_parser("verify", help="run the property checks")
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, FormatError, CheckpointError, MetricsError) as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return EXIT_INVALID
    except Diverged as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
