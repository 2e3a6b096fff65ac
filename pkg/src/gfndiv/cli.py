"""Command-line harness: ``gfndiv run | variance | enumerate | alpha-sweep``."""

from __future__ import annotations

import argparse
import csv
import math
import sys
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .autodiff import ParamStore
from .config import RunConfig, default_config, parse_config, with_overrides
from .envs import ContinuousEnv
from .errors import GfnError
from .metrics import MetricRecord, target_distribution
from .objectives import DivergenceSpec, RewardShift, estimate
from .policies import make_policy
from .sampler import sample_forward
from .train import CALIBRATION, train
from .varred import CV_OFF, CV_ON, variance_trace

PARAMS_MAGIC = "gfndiv-params v1"
EPOCH_NOTE = "one epoch = one gradient step on one batch of trajectories"


# ---------------------------------------------------------------------------
# file formats


def fmt(value: float) -> str:
    """Shortest text that round-trips the float exactly."""
    return repr(float(value))


def write_metrics(path: Path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "metric", "value", "seed"])
        for r in records:
            w.writerow([r.step, r.metric, fmt(r.value), r.seed])


def read_metrics(path: Path) -> list[MetricRecord]:
    with open(path, newline="") as fh:
        return [
            MetricRecord(int(row["step"]), row["metric"], float(row["value"]), int(row["seed"]))
            for row in csv.DictReader(fh)
        ]


def write_aggregate(path: Path, records) -> None:
    groups = defaultdict(list)
    for r in records:
        groups[(r.step, r.metric)].append(r.value)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "metric", "mean", "std", "n"])
        for (step, metric) in sorted(groups):
            vals = np.asarray(groups[(step, metric)])
            w.writerow([step, metric, fmt(vals.mean()), fmt(vals.std()), len(vals)])


def write_params(path: Path, store: ParamStore) -> None:
    """Text header naming blocks and shapes, an END line, then little-endian float64 data."""
    names = store.names()
    header = [PARAMS_MAGIC]
    for n in names:
        header.append(f"{n} {','.join(str(d) for d in store.blocks[n].shape)}")
    header.append("END")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode())
        for n in names:
            fh.write(np.ascontiguousarray(store.blocks[n].value, dtype="<f8").tobytes())


def read_params(path: Path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    end = blob.index(b"\nEND\n") + len(b"\nEND\n")
    lines = blob[:end].decode().splitlines()
    if lines[0] != PARAMS_MAGIC:
        raise GfnError(f"{path}: not a parameter dump")
    out, pos = {}, end
    for line in lines[1:-1]:
        name, _, dims = line.rpartition(" ")
        shape = tuple(int(d) for d in dims.split(",") if d)
        size = int(np.prod(shape)) if shape else 1
        out[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
        pos += 8 * size
    return out


def write_manifest(path: Path, cfg: RunConfig, env, extra: dict) -> None:
    lines = [f"# {EPOCH_NOTE}"]
    for key, value in cfg.flat().items():
        lines.append(f"{key} = {_show(value)}")
    for key, value in env.manifest().items():
        lines.append(f"env_spec.{key} = {_show(value)}")
    for key, value in extra.items():
        lines.append(f"{key} = {_show(value)}")
    Path(path).write_text("\n".join(lines) + "\n")


def _show(value) -> str:
    if isinstance(value, float):
        return fmt(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_show(v) for v in value) + "]"
    return str(value)


# ---------------------------------------------------------------------------
# subcommands


def _train_seed(args):
    cfg, seed, out = args
    env = cfg.build_env()
    result = train(env, cfg.divergence(), cfg.settings(), seed)
    records = []
    for r in result.records:
        records.append(r)
        if not math.isfinite(r.value):
            records.append(MetricRecord(r.step, f"flag_nonfinite:{r.metric}", 1.0, seed))
    write_metrics(out / f"metrics_seed{seed}.csv", records)
    write_params(out / f"params_seed{seed}.bin", result.store)
    return seed, records, result.shift.offset, result.skipped


def _map(fn, jobs, items):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def cmd_run(cfg: RunConfig) -> int:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    env = cfg.build_env()
    results = _map(_train_seed, cfg.train.jobs, [(cfg, s, out) for s in cfg.train.seeds])
    extra = {"policy.architecture": type(make_policy(env, ParamStore(0), cfg.train.arch, cfg.train.hidden)).__name__}
    records = []
    for seed, recs, offset, skipped in results:
        records.extend(recs)
        extra[f"seed{seed}.reward_shift"] = offset
        extra[f"seed{seed}.skipped_steps"] = skipped
    write_aggregate(out / "metrics_agg.csv", records)
    write_manifest(out / "manifest.txt", cfg, env, extra)
    for seed, recs, _, _ in results:
        final = [r for r in recs if r.step == cfg.train.steps and r.metric in ("l1", "jsd")]
        for r in final:
            print(f"seed {seed}: final {r.metric} = {r.value:.4f}")
    return 0


def variance_rows(cfg: RunConfig, seed: int) -> list[MetricRecord]:
    env = cfg.build_env()
    store = ParamStore(seed)
    policy = make_policy(env, store, cfg.train.arch, cfg.train.hidden)
    calib = sample_forward(env, policy, cfg.train.batch, seed, step=0, stream=CALIBRATION)
    shift = RewardShift.calibrate(calib.log_reward)

    def estimator(spec, batch_size, s):
        return estimate(sample_forward(env, policy, batch_size, s), store, spec, shift).flat(store)

    rows = []
    rng = np.random.default_rng(seed)
    for name in cfg.variance.estimators:
        kind, _, alpha = name.partition("-")
        alpha = float(alpha) if alpha else cfg.objective.alpha
        for b in cfg.variance.batches:
            for label, cv in (("cv_on", CV_ON), ("cv_off", CV_OFF)):
                spec = DivergenceSpec(kind, alpha, cv, cfg.objective.self_normalize, cfg.objective.batch_shift)
                report = variance_trace(estimator, store, spec, b, cfg.variance.repetitions, rng)
                rows.append(MetricRecord(0, f"variance_trace:{name}:{label}:b{b}", report.trace, seed))
    return rows


def _variance_seed(args):
    cfg, seed, out = args
    rows = variance_rows(cfg, seed)
    write_metrics(out / f"metrics_seed{seed}.csv", rows)
    return rows


def cmd_variance(cfg: RunConfig) -> int:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    results = _map(_variance_seed, cfg.train.jobs, [(cfg, s, out) for s in cfg.train.seeds])
    rows = [r for rs in results for r in rs]
    write_aggregate(out / "metrics_agg.csv", rows)
    write_manifest(out / "manifest.txt", cfg, cfg.build_env(), {"variance.protocol": "theta frozen at initialisation"})
    for r in rows:
        print(f"seed {r.seed} {r.metric} = {r.value:.6g}")
    return 0


def cmd_enumerate(cfg: RunConfig, out_dir: str | None) -> int:
    env = cfg.build_env()
    if isinstance(env, ContinuousEnv):
        raise GfnError("enumerate needs a discrete environment")
    xs, probs = target_distribution(env, cfg.env.enum_cap)
    log_r = np.array([env.log_reward(x) for x in xs])
    top = log_r.max()
    log_z = float(top + np.log(np.exp(log_r - top).sum()))
    print(f"terminals = {len(xs)}")
    print(f"log_Z = {log_z:.10g}")
    print(f"Z = {math.exp(log_z):.10g}")
    print("terminal\tprobability")
    for x, p in zip(xs, probs):
        print(f"{_show(list(x))}\t{p:.6f}")
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "enumerate.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["terminal", "log_reward", "probability"])
            for x, lr, p in zip(xs, log_r, probs):
                w.writerow([" ".join(str(v) for v in x), fmt(lr), fmt(p)])
    return 0


def _sweep_one(args):
    cfg, alpha, seed, out = args
    env = cfg.build_env()
    spec = replace(cfg.divergence(), kind="renyi", alpha=alpha)
    result = train(env, spec, cfg.settings(), seed)
    xs = result.policy.sample(cfg.sweep.samples, np.random.default_rng([seed, 99]))
    with open(out / f"samples_alpha{alpha:g}_seed{seed}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x1", "x2"])
        for row in xs:
            w.writerow([fmt(v) for v in row])
    records = [replace(r, metric=f"alpha{alpha:g}:{r.metric}") for r in result.records]
    return records


def cmd_alpha_sweep(cfg: RunConfig) -> int:
    if cfg.env.kind not in ("gm", "banana"):
        raise GfnError("alpha-sweep runs on a continuous environment (gm or banana)")
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, a, s, out) for a in cfg.sweep.alphas for s in cfg.train.seeds]
    records = [r for rs in _map(_sweep_one, cfg.train.jobs, jobs) for r in rs]
    for seed in cfg.train.seeds:
        write_metrics(out / f"metrics_seed{seed}.csv", [r for r in records if r.seed == seed])
    write_aggregate(out / "metrics_agg.csv", records)
    write_manifest(out / "manifest.txt", cfg, cfg.build_env(), {"sweep.objective": "renyi"})
    return 0


# ---------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gfndiv", description="Divergence-based GFlowNet experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--seed", help="comma-separated seeds, e.g. 0,1,2")
        p.add_argument("--out", help="output directory")
        p.add_argument("--env", choices=("set", "seq", "phylo", "gm", "banana"))
        p.add_argument("--objective", choices=("tb", "revkl", "fwdkl", "renyi", "tsallis"))
        p.add_argument("--alpha", type=float)
        p.add_argument("--batch", type=int)
        p.add_argument("--steps", type=int)
        p.add_argument("--jobs", type=int, help="seeds run in parallel processes")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE")
        return p

    common(sub.add_parser("run", help="train and write learning curves"))
    v = common(sub.add_parser("variance", help="gradient-variance traces with and without variance reduction"))
    v.add_argument("--M", type=int, help="repetitions per report (>= 2)")
    v.add_argument("--batches", help="comma-separated batch sizes")
    common(sub.add_parser("enumerate", help="exact Z and terminal probabilities"))
    s = common(sub.add_parser("alpha-sweep", help="Renyi runs across alpha with sample dumps"))
    s.add_argument("--alphas", help="comma-separated alphas")
    return parser


def resolve_config(args) -> RunConfig:
    if args.config:
        cfg = parse_config(args.config)
    else:
        default_env = "gm" if args.command == "alpha-sweep" else "set"
        cfg = default_config(args.env or default_env, args.objective or "revkl")
    pairs = list(args.overrides)
    if args.env and args.env != cfg.env.kind:
        pairs.append(f"env.kind={args.env}")
    if args.objective:
        pairs.append(f"objective.kind={args.objective}")
    for flag, key in (("alpha", "objective.alpha"), ("batch", "train.batch"), ("steps", "train.steps"), ("jobs", "train.jobs")):
        if getattr(args, flag) is not None:
            pairs.append(f"{key}={getattr(args, flag)}")
    if args.seed:
        pairs.append(f"train.seeds={args.seed}")
    if args.out:
        pairs.append(f"output.dir={args.out}")
    if getattr(args, "M", None) is not None:
        pairs.append(f"variance.repetitions={args.M}")
    if getattr(args, "batches", None):
        pairs.append(f"variance.batches={args.batches}")
    if getattr(args, "alphas", None):
        pairs.append(f"sweep.alphas={args.alphas}")
    return with_overrides(cfg, pairs) if pairs else cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "variance":
            return cmd_variance(cfg)
        if args.command == "enumerate":
            return cmd_enumerate(cfg, args.out)
        return cmd_alpha_sweep(cfg)
    except GfnError as exc:
        print(f"gfndiv: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
