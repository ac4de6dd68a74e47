"""Operator entry point: corpus generation, training, evaluation, closed-loop
simulation, the realtime bridge, and log reporting.

Exit codes: 0 success, 2 validation/usage error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .allocator import AllocatorError, ControllerConfig
from .core import (
    CORPUS_VERSION,
    Branch,
    CorpusFormatError,
    CorpusManifest,
    read_corpus,
    slice_windows,
    window_arrays,
    write_corpus,
)
from .datagen import gen_multimodal, gen_phrc, split_train_test
from .intent import LossWeights, load_branch, sample_best_of_n, sample_most_likely, train
from .intent.model import BranchModel
from .metrics import metric_ade, metric_fde
from .nn.params import ConfigError, NetConfig
from .sim import Scenario, load_episode, make_free_scenario, make_standard_scenario, run_episode, save_episode


class CliError(ValueError):
    pass


def _write_split(out: Path, name: str, dt: float, seed: int, trajs: list) -> Path:
    branches = {t.branch for t in trajs}
    if len(branches) > 1:
        raise CliError(f"corpus {name} mixes branches {branches}")
    branch = branches.pop() if branches else Branch.ROBOT
    manifest = CorpusManifest(version=CORPUS_VERSION, dt=dt, branch=branch, count=len(trajs), seed=seed)
    path = out / f"{name}.csv"
    write_corpus(path, manifest, trajs)
    return path


def cmd_datagen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "multimodal":
        trajs = gen_multimodal(args.n, dt=args.dt, seed=args.seed)
        train_set, test_set = split_train_test(trajs, args.test_frac, args.seed)
        p1 = _write_split(out, "multimodal_train", args.dt, args.seed, train_set)
        p2 = _write_split(out, "multimodal_test", args.dt, args.seed, test_set)
        print(f"wrote {p1} ({len(train_set)} trajectories)")
        print(f"wrote {p2} ({len(test_set)} trajectories)")
    else:
        trajs = gen_phrc(args.n_free, args.n_avoid, dt=args.dt, seed=args.seed)
        robot = [t for t in trajs if t.branch is Branch.ROBOT]
        human = [t for t in trajs if t.branch is Branch.HUMAN]
        p1 = _write_split(out, "phrc_robot", args.dt, args.seed, robot)
        p2 = _write_split(out, "phrc_human", args.dt, args.seed, human)
        print(f"wrote {p1} ({len(robot)} trajectories)")
        print(f"wrote {p2} ({len(human)} trajectories)")
    return 0


def cmd_train(args) -> int:
    _, trajs = read_corpus(args.corpus)
    branch = Branch.ROBOT if args.branch == "robot" else Branch.HUMAN
    net = NetConfig(**json.loads(Path(args.net_config).read_text())) if args.net_config else NetConfig()
    model = BranchModel.build(branch, net, seed=args.seed, l_obs=args.l_obs, l_fut=args.l_fut)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / f"{args.branch}.ckpt"
    report_path = out / f"{args.branch}_train_report.csv"
    report = train(
        model, trajs, epochs=args.epochs, batch=args.batch, lr=args.lr,
        weights=LossWeights(kl_weight=args.kl_weight, recon_weight=args.recon_weight),
        seed=args.seed, stride=args.stride, checkpoint_path=ckpt, report_path=report_path,
    )
    last = report.epochs[-1]
    print(f"wrote {ckpt}")
    print(f"epoch {last.epoch}: loss={last.loss:.4f} kl={last.kl:.4f} recon={last.recon:.4f}")
    return 0


def constant_velocity_prediction(past: np.ndarray, l_fut: int, dt: float) -> np.ndarray:
    """Straight-line extrapolation of the last observed velocity."""
    pos, vel = past[-1, :3], past[-1, 3:6]
    steps = np.arange(1, l_fut + 1)[:, None] * dt
    return np.hstack([pos + steps * vel, np.repeat(vel[None], l_fut, axis=0)])


def eval_model(model: BranchModel, trajs, *, n_best: int, seed: int, stride: int):
    """Per-window metrics table rows for the model and the constant-velocity
    baseline; returns (rows, per-window arrays for the model)."""
    ml_ade, ml_fde, bo_ade, bo_fde = [], [], [], []
    cv_ade, cv_fde = [], []
    idx = 0
    for traj in trajs:
        for w in slice_windows(traj, model.l_obs, model.l_fut, stride):
            x, y = window_arrays(w, traj.branch)
            ml = sample_most_likely(model, x)
            ml_ade.append(metric_ade(ml, y))
            ml_fde.append(metric_fde(ml, y))
            best, ade = sample_best_of_n(model, x, n_best, y, seed=seed + idx)
            bo_ade.append(ade)
            bo_fde.append(metric_fde(best, y))
            cv = constant_velocity_prediction(x, model.l_fut, traj.dt)
            cv_ade.append(metric_ade(cv, y))
            cv_fde.append(metric_fde(cv, y))
            idx += 1
    if idx == 0:
        raise CliError("no evaluation windows (corpus too short for the model horizon)")
    arrays = {
        "ml_ade": np.array(ml_ade), "ml_fde": np.array(ml_fde),
        "bo_ade": np.array(bo_ade), "bo_fde": np.array(bo_fde),
        "cv_ade": np.array(cv_ade), "cv_fde": np.array(cv_fde),
    }
    rows = [
        ("model", float(arrays["bo_ade"].mean()), float(arrays["bo_fde"].mean()),
         float(arrays["ml_ade"].mean()), float(arrays["ml_fde"].mean())),
        ("const_velocity", None, None, float(arrays["cv_ade"].mean()), float(arrays["cv_fde"].mean())),
    ]
    return rows, arrays


def cmd_eval(args) -> int:
    model = load_branch(args.checkpoint)
    _, trajs = read_corpus(args.corpus)
    rows, _ = eval_model(model, trajs, n_best=args.best_of, seed=args.seed, stride=args.stride)

    def fmt(v):
        return "-" if v is None else f"{v:.2f}"

    if args.csv:
        print(f"method,bo{args.best_of}_ade_mm,bo{args.best_of}_fde_mm,ml_ade_mm,ml_fde_mm")
        for name, ba, bf, ma, mf in rows:
            print(",".join([name, fmt(ba), fmt(bf), fmt(ma), fmt(mf)]))
    else:
        print(f"{'method':<16}{'best-of-%d ADE' % args.best_of:>16}{'FDE':>10}{'most-likely ADE':>18}{'FDE':>10}")
        for name, ba, bf, ma, mf in rows:
            print(f"{name:<16}{fmt(ba):>16}{fmt(bf):>10}{fmt(ma):>18}{fmt(mf):>10}")
    return 0


def _load_scenario(name_or_path: str, seed: int) -> Scenario:
    if name_or_path == "standard":
        return make_standard_scenario(seed)
    if name_or_path == "free":
        return make_free_scenario()
    path = Path(name_or_path)
    if not path.exists():
        raise CliError(f"scenario file not found: {name_or_path}")
    return Scenario.from_json(path)


def _parse_seeds(text: str) -> list:
    if ":" in text:
        lo, hi = text.split(":", 1)
        return list(range(int(lo), int(hi)))
    return [int(s) for s in text.split(",")]


def cmd_simulate(args) -> int:
    models_dir = Path(args.models)
    robot = load_branch(models_dir / "robot.ckpt")
    human = load_branch(models_dir / "human.ckpt")
    config = ControllerConfig.from_json(args.config) if args.config else ControllerConfig.default()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = _parse_seeds(args.seeds) if args.seeds else [args.seed]
    suffix = "" if args.kappa_fixed is None else "_fixed"
    for seed in seeds:
        scenario = _load_scenario(args.scenario, seed)
        log = run_episode(scenario, config, robot, human, seed=seed, kappa_override=args.kappa_fixed)
        path = out / f"episode_seed{seed}{suffix}.csv"
        save_episode(log, path)
        if log.failed:
            print(f"seed {seed}: FAILED at tick {log.fail_tick} -> {path}")
        else:
            m = log.metrics

            def fmt(key, digits=3):
                value = m.get(key)
                return "n/a" if value is None else f"{value:.{digits}f}"

            print(
                f"seed {seed}: theta={fmt('theta_deg', 1)} deg i_asst={fmt('i_asst')} "
                f"mu={fmt('mu')} work={fmt('work', 4)} J "
                f"clearance={fmt('min_obstacle_clearance')} -> {path}"
            )
    return 0


def cmd_report(args) -> int:
    status = 0
    for path in args.logs:
        log = load_episode(path)
        recomputed = log.phrc_metrics().to_dict()
        stored = {k: log.metrics.get(k) for k in recomputed}
        match = all(
            (stored[k] is None and recomputed[k] is None)
            or (stored[k] is not None and recomputed[k] is not None and stored[k] == recomputed[k])
            for k in recomputed
        )
        print(f"{path}: {json.dumps(recomputed)} header_match={match}")
        if not match:
            status = 1
    return status


def cmd_serve(args) -> int:
    import uvicorn

    from .bridge import create_app

    models_dir = Path(args.models)
    robot = load_branch(models_dir / "robot.ckpt")
    human = load_branch(models_dir / "human.ckpt")
    config = ControllerConfig.from_json(args.config) if args.config else ControllerConfig.default()
    app = create_app(robot, human, config, static_dir=args.static)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phrcbench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate synthetic corpora")
    p.add_argument("--kind", choices=["multimodal", "phrc"], required=True)
    p.add_argument("--n", type=int, default=2000, help="multimodal trajectory count")
    p.add_argument("--n-free", type=int, default=40)
    p.add_argument("--n-avoid", type=int, default=60)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--test-frac", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("train", help="train one estimator branch")
    p.add_argument("--branch", choices=["robot", "human"], required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--kl-weight", type=float, default=1.0)
    p.add_argument("--recon-weight", type=float, default=1.0)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--l-obs", type=int, default=8)
    p.add_argument("--l-fut", type=int, default=12)
    p.add_argument("--net-config", help="JSON file with NetConfig overrides")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="displacement-error tables on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--best-of", type=int, default=20)
    p.add_argument("--stride", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="run closed-loop episodes")
    p.add_argument("--models", required=True, help="directory with robot.ckpt and human.ckpt")
    p.add_argument("--scenario", default="standard", help="standard | free | path to JSON")
    p.add_argument("--config", help="controller config JSON")
    p.add_argument("--seeds", help="comma list or lo:hi range")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kappa-fixed", type=float, default=None, help="pin kappa (baseline)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="recompute metrics from episode logs")
    p.add_argument("logs", nargs="+")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="run the realtime session bridge")
    p.add_argument("--models", required=True)
    p.add_argument("--config")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8750)
    p.add_argument("--static", help="directory of built UI assets")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    if getattr(args, "command", None) == "datagen" and args.dt is None:
        args.dt = 0.05 if args.kind == "multimodal" else 0.01
    try:
        return args.func(args)
    except (CliError, CorpusFormatError, AllocatorError, ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - boundary: report and signal failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
