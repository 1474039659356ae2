"""``yoto`` command line: teaching streams to trained policies and benchmark numbers.

Exit codes: 0 ok, 1 internal, 2 parse, 3 degenerate data, 4 coordination,
5 workspace, 6 dataset.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ParseError, YotoError

log = logging.getLogger("yoto")

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

# Per-command defaults; a --config file and explicit flags override them in that order.
DEFAULTS = {
    "extract": {"camera": None, "frame": "robot"},
    "keyframes": {"task": "", "speed_eps": 0.01, "window": 5, "max_gap": None, "move_eps": 0.005},
    "seeds": {"task": None, "count": 1, "seed": None, "nominal": False, "program": None, "n_points": 1024},
    "teach": {"task": None, "seed": 0},
    "proliferate": {"factor": 1, "seed": None, "task": None, "workspace": None},
    "train": {"seed": None, "epochs": 300, "batch": 32, "lr": 1e-3, "draws": 4, "n_points": 1024,
              "prediction": "sample", "delta": False, "loss_csv": None},
    "eval": {"checkpoint": None, "expert": False, "task": None, "trials": 50, "seed": None,
             "n_steps": None},
    "plot": {"kind": None},
}
STOCHASTIC = {"seeds", "proliferate", "train", "eval"}


def _load_config(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read config {p}: {exc}") from None
    try:
        if p.suffix == ".json":
            return json.loads(text)
        return tomllib.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{p}: {exc.msg}", line=exc.lineno) from None
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"{p}: {exc}") from None


def effective_config(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        raw = _load_config(args.config)
        section = raw.get(command, {}) if isinstance(raw.get(command), dict) else {}
        flat = {k: v for k, v in raw.items() if not isinstance(v, dict) or k == "camera"}
        for src in (flat, section):
            for k, v in src.items():
                key = k.replace("-", "_")
                if key in cfg:
                    cfg[key] = v
    for k in cfg:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _write_sidecar(out, command: str, cfg: dict, extra: dict | None = None) -> None:
    side = Path(str(out) + ".config.json")
    payload = {"command": command, "config": cfg, **(extra or {})}
    side.write_text(json.dumps(payload, indent=1, sort_keys=True, default=str))


def _need_seed(command, cfg):
    if cfg.get("seed") is None:
        raise argparse.ArgumentTypeError(f"{command}: --seed is required")


# --------------------------------------------------------------------------- commands


def cmd_extract(args, cfg) -> int:
    from .geometry import StereoCamera
    from .hand_motion import extract_motion, read_hand_frames, transform_trajectory, write_trajectory
    from .sim.teaching import CAMERA_TO_ROBOT, TEACHING_CAMERA

    L, R = read_hand_frames(args.input)
    cam = StereoCamera.from_dict(cfg["camera"]) if cfg["camera"] else TEACHING_CAMERA
    traj = extract_motion(L, R, cam)
    if cfg["frame"] == "robot":
        traj = transform_trajectory(traj, CAMERA_TO_ROBOT)
    write_trajectory(args.out, traj)
    _write_sidecar(args.out, "extract", cfg)
    print(json.dumps({"frames": len(traj), "out": str(args.out)}))
    return 0


def cmd_keyframes(args, cfg) -> int:
    from .hand_motion import read_trajectory
    from .keyframes import KeyframeConfig, build_program, extract_keyframes

    traj = read_trajectory(args.input)
    kcfg = KeyframeConfig(cfg["speed_eps"], int(cfg["window"]), cfg["max_gap"], cfg["move_eps"])
    idx = extract_keyframes(traj, kcfg)
    prog = build_program(traj, idx, kcfg, cfg["task"])
    prog.save(args.out)
    _write_sidecar(args.out, "keyframes", cfg)
    print(json.dumps({"K": prog.K, "mode": prog.mask.mode, "frames": idx}))
    return 0


def cmd_teach(args, cfg) -> int:
    from .sim.teaching import write_fixture

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = write_fixture(cfg["task"], out.parent, int(cfg["seed"]))
    if tmp != out:
        tmp.replace(out)
    _write_sidecar(out, "teach", cfg)
    print(json.dumps({"task": cfg["task"], "out": str(out)}))
    return 0


def cmd_seeds(args, cfg) -> int:
    from .keyframes import KeyframeProgram
    from .sim.tasks import make_task
    from .sim.teaching import teaching_demo

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if cfg["program"]:
        prog = KeyframeProgram.load(cfg["program"])
        demo = teaching_demo(cfg["task"], prog, int(cfg["seed"]))
        demos = [demo]
    else:
        base = int(cfg["seed"])
        demos = [make_task(cfg["task"], base + i, int(cfg["n_points"]), nominal=bool(cfg["nominal"]))[1]
                 for i in range(int(cfg["count"]))]
    for i, d in enumerate(demos):
        path = out / f"seed_{i:04d}.ydemo"
        d.save(path)
        written.append(path.name)
    _write_sidecar(out / "seeds", "seeds", cfg)
    print(json.dumps({"seeds": len(written), "out": str(out)}))
    return 0


def cmd_proliferate(args, cfg) -> int:
    from .errors import EmptyDataset, WorkspaceError
    from .proliferation import Dataset, Workspace, proliferate
    from .sim.tasks import get_task

    seeds = list(Dataset.load(args.input))
    if not seeds:
        raise EmptyDataset(f"no seed demonstrations in {args.input}")
    if cfg["workspace"]:
        try:
            ws = Workspace.from_json(json.loads(Path(cfg["workspace"]).read_text()))
        except (KeyError, TypeError, ValueError) as exc:
            raise WorkspaceError(f"invalid workspace: {exc}") from None
    else:
        ws = get_task(cfg["task"] or seeds[0].task).workspace
    factor = int(cfg["factor"])
    if factor < 1:
        raise argparse.ArgumentTypeError("--factor must be at least 1")
    ds = proliferate(seeds, factor, ws, int(cfg["seed"]))
    ds.save(args.out)
    _write_sidecar(Path(args.out) / "manifest", "proliferate", cfg)
    print(json.dumps({"demos": len(ds), "out": str(args.out)}))
    return 0


def cmd_train(args, cfg) -> int:
    from .bidp.policy import PolicyConfig, TrainConfig, train
    from .proliferation import Dataset

    ds = Dataset.load(args.input)
    tcfg = TrainConfig(epochs=int(cfg["epochs"]), batch=int(cfg["batch"]), lr=float(cfg["lr"]),
                       n_draws=int(cfg["draws"]), seed=int(cfg["seed"]))
    pcfg = PolicyConfig(horizon=0, n_points=int(cfg["n_points"]), delta=bool(cfg["delta"]),
                        net={"prediction": cfg["prediction"]})

    def progress(epoch, trace):
        if epoch % 25 == 0 or epoch == tcfg.epochs - 1:
            log.info("epoch %d loss %.6g", epoch, trace.epoch_means()[-1])

    policy, trace = train(ds, tcfg, pcfg, progress=progress)
    policy.save(args.out)
    csv = cfg["loss_csv"] or str(args.out) + ".loss.csv"
    trace.to_csv(csv)
    _write_sidecar(args.out, "train", cfg, {"demos": len(ds)})
    print(json.dumps({"final_loss": float(trace.epoch_means()[-1]) if trace.rows else None,
                      "steps": len(trace.rows), "out": str(args.out), "loss_csv": csv}))
    return 0


def cmd_eval(args, cfg) -> int:
    from .bidp.policy import Policy
    from .sim.metrics import benchmark, expert_policy, validate_summary
    from .sim.tasks import get_task

    if cfg["expert"]:
        spec = get_task(cfg["task"])
        policy = expert_policy(spec)
    else:
        if not cfg["checkpoint"]:
            raise argparse.ArgumentTypeError("eval needs a checkpoint or --expert")
        pol = Policy.load(cfg["checkpoint"])
        spec = get_task(cfg["task"] or pol.task)
        n_steps = cfg["n_steps"]
        policy = lambda obs, scene: pol.predict(obs, seed=int(cfg["seed"]), n_steps=n_steps)  # noqa: E731
    summary = benchmark(policy, spec, int(cfg["trials"]), int(cfg["seed"]))
    validate_summary(summary)
    text = json.dumps(summary, indent=1)
    if args.out:
        Path(args.out).write_text(text)
        _write_sidecar(args.out, "eval", cfg)
    print(json.dumps({k: summary[k] for k in ("task", "trials", "success_rate", "avg_length", "per_substep")}))
    return 0


def _guess_kind(path: Path) -> str:
    if path.suffix == ".csv":
        return "loss"
    first = path.read_text().splitlines()[:1]
    rec = json.loads(first[0]) if first else {}
    return "trace" if "w" in rec else "trajectory"


def cmd_plot(args, cfg) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    src = Path(args.input)
    kind = cfg["kind"] or _guess_kind(src)
    fig = plt.figure(figsize=(6, 4.5))
    if kind == "loss":
        data = np.genfromtxt(src, delimiter=",", names=True)
        ax = fig.add_subplot(111)
        ax.semilogy(data["step"], data["loss"], lw=0.6, color="0.5", label="step")
        ep = data["epoch"]
        means = [data["loss"][ep == e].mean() for e in np.unique(ep)]
        last = [data["step"][ep == e].max() for e in np.unique(ep)]
        ax.semilogy(last, means, color="C0", label="epoch mean")
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend()
    elif kind == "trajectory":
        from .hand_motion import read_trajectory
        from .keyframes import extract_keyframes

        traj = read_trajectory(src)
        idx = extract_keyframes(traj)
        ax = fig.add_subplot(111, projection="3d")
        for hand, color in (("L", "C0"), ("R", "C3")):
            P = traj.positions(hand)
            ax.plot(P[:, 0], P[:, 1], P[:, 2], color=color, lw=1, label=hand)
            ax.scatter(P[idx, 0], P[idx, 1], P[idx, 2], color=color, s=14)
        ax.legend()
    elif kind == "trace":
        rows = [json.loads(l) for l in src.read_text().splitlines() if l.strip()]
        ax = fig.add_subplot(111, projection="3d")
        for hand, color in (("L", "C0"), ("R", "C3")):
            P = np.array([r[hand] for r in rows])
            ax.plot(P[:, 0], P[:, 1], P[:, 2], color=color, lw=1, label=hand)
            ends = [i for i, r in enumerate(rows) if i + 1 == len(rows) or rows[i + 1]["k"] != r["k"]]
            ax.scatter(P[ends, 0], P[ends, 1], P[ends, 2], color=color, s=14)
        ax.legend()
    else:
        raise argparse.ArgumentTypeError(f"unknown plot kind {kind!r}")
    fig.tight_layout()
    fig.savefig(args.out)
    plt.close(fig)
    _write_sidecar(args.out, "plot", {**cfg, "kind": kind})
    print(json.dumps({"kind": kind, "out": str(args.out)}))
    return 0


COMMANDS = {
    "extract": cmd_extract, "keyframes": cmd_keyframes, "teach": cmd_teach, "seeds": cmd_seeds,
    "proliferate": cmd_proliferate, "train": cmd_train, "eval": cmd_eval, "plot": cmd_plot,
}


# --------------------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ParseError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="yoto", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, stochastic=False):
        sp.add_argument("--config", help="TOML or JSON file; flags override it")
        sp.add_argument("--threads", type=int, help="cap numeric library threads")
        if stochastic:
            sp.add_argument("--seed", type=int)
        return sp

    sp = common(sub.add_parser("extract", help="hand-frame JSONL to a motion trajectory"))
    sp.add_argument("input")
    sp.add_argument("--out", required=True)
    sp.add_argument("--frame", choices=("camera", "robot"))

    sp = common(sub.add_parser("keyframes", help="trajectory to a keyframe program"))
    sp.add_argument("input")
    sp.add_argument("--out", required=True)
    sp.add_argument("--task")
    sp.add_argument("--speed-eps", dest="speed_eps", type=float)
    sp.add_argument("--window", type=int)
    sp.add_argument("--max-gap", dest="max_gap", type=int)
    sp.add_argument("--move-eps", dest="move_eps", type=float)

    sp = common(sub.add_parser("teach", help="write the synthetic teaching stream of a task"))
    sp.add_argument("--task", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)

    sp = common(sub.add_parser("seeds", help="seed demonstrations (scripted or from a program)"), True)
    sp.add_argument("--task", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--count", type=int)
    sp.add_argument("--nominal", action="store_true", default=None)
    sp.add_argument("--program", help="keyframe program JSON to pair with the nominal scene")
    sp.add_argument("--n-points", dest="n_points", type=int)

    sp = common(sub.add_parser("proliferate", help="expand seed demonstrations"), True)
    sp.add_argument("input", help="directory of seed .ydemo files")
    sp.add_argument("--out", required=True)
    sp.add_argument("--factor", type=int)
    sp.add_argument("--task")
    sp.add_argument("--workspace", help="workspace JSON (defaults to the task's)")

    sp = common(sub.add_parser("train", help="train the diffusion policy"), True)
    sp.add_argument("input", help="dataset directory")
    sp.add_argument("--out", required=True)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--batch", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--draws", type=int)
    sp.add_argument("--n-points", dest="n_points", type=int)
    sp.add_argument("--prediction", choices=("sample", "epsilon"))
    sp.add_argument("--delta", action="store_true", default=None)
    sp.add_argument("--loss-csv", dest="loss_csv")

    sp = common(sub.add_parser("eval", help="benchmark a checkpoint or the scripted expert"), True)
    sp.add_argument("checkpoint", nargs="?")
    sp.add_argument("--expert", action="store_true", default=None)
    sp.add_argument("--task")
    sp.add_argument("--trials", type=int)
    sp.add_argument("--n-steps", dest="n_steps", type=int)
    sp.add_argument("--out")

    sp = common(sub.add_parser("plot", help="figure of a trajectory, trace or loss CSV"))
    sp.add_argument("input")
    sp.add_argument("--out", required=True)
    sp.add_argument("--kind", choices=("trajectory", "trace", "loss"))
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.DEBUG)
        cfg = effective_config(args.command, args)
        if args.command in STOCHASTIC:
            _need_seed(args.command, cfg)
        if args.threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(args.threads):
                return COMMANDS[args.command](args, cfg)
        return COMMANDS[args.command](args, cfg)
    except argparse.ArgumentTypeError as exc:
        print(f"yoto: error: {exc}", file=sys.stderr)
        return 2
    except YotoError as exc:
        print(f"yoto: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"yoto: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the internal exit code
        log.exception("internal error")
        print(f"yoto: internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
