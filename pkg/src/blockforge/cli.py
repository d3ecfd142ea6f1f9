"""Command-line harness: generate, play, train, eval, render, replay.

Exit codes: 0 success, 2 configuration error, 3 threshold or replay failure.
``BLOCKFORGE_CONFIG`` may name a JSON training config used when ``train``
gets no ``--config``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

from . import __version__
from . import actions as A
from . import neural
from .agents import POLICY_NAMES, CoveringHeuristic, GreedyQPolicy, RandomPolicy, SilhouetteHeuristic
from .env import Env, EnvConfig, env_from_header, load_log, replay
from .physics import BLOCK_H, HALF_W, WORLD_H, Kind, Scene
from .rng import substream
from .scenegen import MAX_LEVEL, TaskId, generate, training_scene

EXIT_OK, EXIT_CONFIG, EXIT_THRESHOLD = 0, 2, 3
REPORT_SCHEMA = 1


class ConfigError(Exception):
    pass


def _args_dict(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "fn"}


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


def write_manifest(out: Path, config: dict, seeds: list[int], outputs: list[Path], inputs: list[Path] = ()) -> Path:
    manifest = {
        "version": __version__,
        "config": config,
        "seeds": seeds,
        "inputs": {str(p): _sha(Path(p).read_bytes()) for p in inputs},
        "outputs": sorted(str(p.relative_to(out)) for p in outputs),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# scenes and policies


def _task(name: str) -> TaskId:
    try:
        return TaskId(name.replace("-", "_"))
    except ValueError:
        raise ConfigError(f"unknown task {name!r}; choose from {[t.value for t in TaskId]}")


def _scene(task: TaskId, level: int | None, hardest: bool, seed: int, index: int):
    if level is not None:
        if not 1 <= level <= MAX_LEVEL[task]:
            raise ConfigError(f"level {level} outside 1..{MAX_LEVEL[task]} for {task.value}")
        return generate(task, level, seed, index)
    return training_scene(task, 1.0, seed, index, hardest_only=hardest)


def load_checkpoint(path: str | None):
    if path is None:
        raise ConfigError("this policy needs --checkpoint")
    try:
        params, gn = neural.load_params(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load checkpoint {path}: {exc}")
    return params, gn or neural.GNConfig()


def make_policy(name: str, checkpoint: str | None = None, budget: int = 0):
    from .plan import MCTSConfig, MCTSPolicy

    if name == "random":
        return RandomPolicy()
    if name == "heur-silhouette":
        return SilhouetteHeuristic()
    if name == "heur-covering":
        return CoveringHeuristic()
    if name == "dqn":
        return GreedyQPolicy(*load_checkpoint(checkpoint))
    if name == "dqn-mcts":
        params, gn = load_checkpoint(checkpoint)
        return MCTSPolicy(params, gn, MCTSConfig(budget=budget))
    if name == "raw-mcts":
        return MCTSPolicy(None, None, MCTSConfig(budget=budget, use_prior=False))
    raise ConfigError(f"unknown policy {name!r}; choose from {POLICY_NAMES}")


def _run_one(job: tuple) -> dict:
    policy_name, checkpoint, budget, task, level, hardest, seed, index, env_cfg = job
    policy = make_policy(policy_name, checkpoint, budget)
    gen = _scene(task, level, hardest, seed, index)
    env = Env.from_generated(gen, env_cfg)
    rng = substream(seed, "play", index)
    total = 0.0
    while not env.done:
        total += env.step(policy.act(env, rng)).reward
    return {"index": index, "return": total, "reason": env.state.terminated.value,
            "steps": env.state.step, "log": env.dump_log()}


def run_episodes(policy_name: str, task: TaskId, episodes: int, seed: int, level: int | None = None,
                 hardest: bool = False, budget: int = 0, checkpoint: str | None = None,
                 workers: int = 1, env_cfg: EnvConfig | None = None) -> list[dict]:
    """Play ``episodes`` scenes; results are ordered by episode index whatever the worker count."""
    make_policy(policy_name, checkpoint, budget)  # fail fast on bad arguments
    env_cfg = env_cfg or EnvConfig()
    jobs = [(policy_name, checkpoint, budget, task, level, hardest, seed, k, env_cfg) for k in range(episodes)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    return sorted(results, key=lambda r: r["index"])


def summarize(results: list[dict]) -> dict:
    rets = [r["return"] for r in results]
    reasons: dict[str, int] = {}
    for r in results:
        reasons[r["reason"]] = reasons.get(r["reason"], 0) + 1
    return {
        "episodes": len(results),
        "mean_return": statistics.fmean(rets) if rets else 0.0,
        "median_return": statistics.median(rets) if rets else 0.0,
        "completed_rate": reasons.get("completed", 0) / max(len(results), 1),
        "reasons": dict(sorted(reasons.items())),
    }


# ---------------------------------------------------------------------------
# rendering

COLORS = {
    Kind.PLACED: "#1f3a93",
    Kind.OBSTACLE: "#d62728",
    Kind.TARGET_BLOCK: "#bbbbbb",
    Kind.TARGET_POINT: "#f2c500",
    Kind.FLOOR: "#555555",
    Kind.AVAILABLE: "#1f3a93",
}
STICKY_COLOR = "#7fb3ff"
SCALE = 40.0
Y_MIN = -1.5


def render_svg(scene: Scene, title: str = "") -> str:
    """Deterministic SVG of a scene; world y grows upwards."""
    width, height = 2 * HALF_W * SCALE, (WORLD_H - Y_MIN) * SCALE

    def box(r):
        x = (r.left + HALF_W) * SCALE
        y = (WORLD_H - r.top) * SCALE
        return f'x="{x:.3f}" y="{y:.3f}" width="{r.w * SCALE:.3f}" height="{r.h * SCALE:.3f}"'

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
             f'viewBox="0 0 {width:.0f} {height:.0f}">',
             f'<rect x="0" y="0" width="{width:.0f}" height="{height:.0f}" fill="#ffffff"/>']
    if title:
        parts.append(f'<title>{title}</title>')
    order = [Kind.TARGET_BLOCK, Kind.FLOOR, Kind.OBSTACLE, Kind.AVAILABLE, Kind.PLACED, Kind.TARGET_POINT]
    for kind in order:
        for b in scene.of_kind(kind):
            fill = STICKY_COLOR if b.sticky else COLORS[kind]
            extra = ' fill-opacity="0.5" stroke="#888888" stroke-dasharray="4 2"' if kind is Kind.TARGET_BLOCK \
                else ' stroke="#000000" stroke-width="0.5"'
            parts.append(f'<rect {box(b.rect)} fill="{fill}"{extra}><desc>{b.id}</desc></rect>')
    sep = (WORLD_H + BLOCK_H / 2) * SCALE  # between the floor and the available row
    parts.append(f'<line x1="0" y1="{sep:.3f}" x2="{width:.0f}" y2="{sep:.3f}" stroke="#cccccc"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_path(src: Path, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    text = src.read_text()
    written = []
    if src.suffix == ".jsonl":
        header, records = load_log(text)
        env = env_from_header(header)
        frames = [env.state.scene.copy()]
        for rec in records:
            env.step(A.action_from_dict(rec["action"]))
            frames.append(env.state.scene.copy())
        for k, scene in enumerate(frames):
            p = out / f"{src.stem}_step{k:03d}.svg"
            p.write_text(render_svg(scene, f"step {k}"))
            written.append(p)
    else:
        data = json.loads(text)
        scene = Scene.from_dict(data.get("scene", data))
        p = out / f"{src.stem}.svg"
        p.write_text(render_svg(scene, src.stem))
        written.append(p)
    return written


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    task = _task(args.task)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written, stats = [], []
    for k in range(args.count):
        gen = _scene(task, args.level, args.hardest, args.seed, k)
        p = out / f"scene_{k:05d}.json"
        p.write_text(json.dumps({**gen.header(), "scene": gen.scene.to_dict()}, sort_keys=True) + "\n")
        written.append(p)
        stats.append(gen.stats)
    summary = {
        "count": args.count,
        "mean_targets": statistics.fmean(s["n_targets"] for s in stats) if stats else 0.0,
        "mean_obstacle_length": statistics.fmean(s["obstacle_length"] for s in stats) if stats else 0.0,
    }
    sp = out / "stats.json"
    sp.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    written.append(sp)
    write_manifest(out, _args_dict(args), [args.seed], written)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_play(args) -> int:
    task = _task(args.task)
    results = run_episodes(args.policy, task, args.episodes, args.seed, args.level, args.hardest,
                           args.budget, args.checkpoint, args.workers)
    summary = summarize(results)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for r in results:
            p = out / f"episode_{r['index']:05d}.jsonl"
            p.write_text(r["log"])
            written.append(p)
        sp = out / "summary.json"
        sp.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        written.append(sp)
        inputs = [Path(args.checkpoint).with_suffix(".bin")] if args.checkpoint else []
        write_manifest(out, _args_dict(args), [args.seed], written, inputs)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _train_config(args):
    from .learn import TrainConfig

    path = args.config or os.environ.get("BLOCKFORGE_CONFIG")
    data = {}
    if path:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
    try:
        cfg = TrainConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc))
    if args.steps is not None:
        cfg.learner_steps = args.steps
    if args.seed is not None:
        cfg.seed = args.seed
    _task(cfg.task)
    if cfg.curriculum not in ("linear", "dynamic", "fixed"):
        raise ConfigError(f"unknown curriculum {cfg.curriculum!r}")
    return cfg, path


def cmd_train(args) -> int:
    from .learn import Trainer

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint"
    if args.resume:
        trainer = Trainer.resume(ckpt)
        if args.steps is not None:
            trainer.cfg.learner_steps = args.steps
        cfg, path = trainer.cfg, None
    else:
        cfg, path = _train_config(args)
        trainer = Trainer(cfg)

    def report(row):
        print(json.dumps(row, sort_keys=True), flush=True)

    trainer.run(callback=report)
    trainer.save(ckpt)
    trainer.write_metrics(out / "metrics.csv")
    written = [ckpt.with_suffix(".bin"), ckpt.with_suffix(".json"), ckpt.with_suffix(".state.pkl"), out / "metrics.csv"]
    write_manifest(out, {"command": "train", "train": asdict(cfg)}, [cfg.seed], written,
                   [Path(path)] if path else [])
    return EXIT_OK


def cmd_eval(args) -> int:
    task = _task(args.task)
    load_checkpoint(args.checkpoint)
    budgets = args.budget or [0]
    report = {"schema_version": REPORT_SCHEMA, "task": task.value, "hardest_only": args.hardest,
              "episodes": args.episodes, "seed": args.seed, "runs": []}
    for b in budgets:
        results = run_episodes("dqn" if b == 0 else "dqn-mcts", task, args.episodes, args.seed, args.level,
                               args.hardest, b, args.checkpoint, args.workers)
        report["runs"].append({"budget": b, **summarize(results)})
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    if args.min_completed is not None and any(r["completed_rate"] < args.min_completed for r in report["runs"]):
        return EXIT_THRESHOLD
    return EXIT_OK


def cmd_render(args) -> int:
    src = Path(args.input)
    if not src.exists():
        raise ConfigError(f"no such file {src}")
    for p in render_path(src, Path(args.out)):
        print(p)
    return EXIT_OK


def cmd_replay(args) -> int:
    src = Path(args.log)
    if not src.exists():
        raise ConfigError(f"no such file {src}")
    rep = replay(src.read_text())
    print(json.dumps(asdict(rep), sort_keys=True))
    return EXIT_OK if rep.ok else EXIT_THRESHOLD


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="blockforge", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def scene_flags(sp):
        sp.add_argument("--task", required=True)
        sp.add_argument("--level", type=int, default=None, help="fixed curriculum level (default: full training mix)")
        sp.add_argument("--hardest", action="store_true", help="only the top curriculum level")
        sp.add_argument("--seed", type=int, default=0)

    g = sub.add_parser("gen", help="generate scenes")
    scene_flags(g)
    g.add_argument("--count", type=int, default=10)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen)

    pl = sub.add_parser("play", help="run a policy and log episodes")
    scene_flags(pl)
    pl.add_argument("--policy", required=True, choices=POLICY_NAMES)
    pl.add_argument("--episodes", type=int, default=10)
    pl.add_argument("--budget", type=int, default=0)
    pl.add_argument("--checkpoint", default=None)
    pl.add_argument("--workers", type=int, default=1)
    pl.add_argument("--out", default=None)
    pl.set_defaults(fn=cmd_play)

    t = sub.add_parser("train", help="train a GN-DQN agent")
    t.add_argument("--config", default=None)
    t.add_argument("--out", required=True)
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--resume", action="store_true")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint at one or more search budgets")
    scene_flags(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=100)
    e.add_argument("--budget", type=int, action="append", default=None)
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--min-completed", type=float, default=None)
    e.add_argument("--out", default=None)
    e.set_defaults(fn=cmd_eval)

    r = sub.add_parser("render", help="render a scene or episode log to SVG")
    r.add_argument("input")
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_render)

    rp = sub.add_parser("replay", help="verify an episode log")
    rp.add_argument("log")
    rp.set_defaults(fn=cmd_replay)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
