"""Train GN-DQN on single-target Silhouette scenes and report the completed rate.

    python scripts/train_silhouette.py --steps 50000 --eval-every 2500 --out runs/sil1

Writes checkpoint.bin and metrics.csv under --out.
"""
import argparse
import json
import time
from pathlib import Path

from blockforge.learn import TrainConfig, Trainer, evaluate
from blockforge.agents import GreedyQPolicy


class Converged(Exception):
    pass


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=50_000)
    ap.add_argument("--eval-every", type=int, default=2500)
    ap.add_argument("--level", type=int, default=1)
    ap.add_argument("--n-rec", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--patience", type=int, default=3,
                    help="stop after this many consecutive evals at >=95%% completed (0 disables)")
    ap.add_argument("--final-episodes", type=int, default=500)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    cfg = TrainConfig(task="silhouette", curriculum="fixed", level=args.level, n_rec=args.n_rec,
                      learner_steps=args.steps, eval_every=args.eval_every, eval_episodes=100, seed=args.seed)
    trainer = Trainer(cfg)
    t0 = time.time()

    def report(row):
        print(f"{time.time() - t0:7.0f}s step {row['step']:6d} return {row['mean_return_hardest']:.3f} "
              f"completed {row['completed_hardest']:.2f} loss {row['loss']:.4f}", flush=True)
        recent = trainer.metrics[-args.patience:] if args.patience else []
        if len(recent) == args.patience and all(r["completed_hardest"] >= 0.95 for r in recent):
            raise Converged

    try:
        trainer.run(callback=report)
    except Converged:
        print("converged")
    final = evaluate(GreedyQPolicy(trainer.params, trainer.gn),
                     trainer.eval_scenes(True, args.final_episodes), trainer.env_cfg, cfg.eval_seed)
    print(json.dumps({"steps": trainer.steps, "completed": final.completed_rate, "mean_return": final.mean_return}))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        trainer.save(out / "checkpoint")
        trainer.write_metrics(out / "metrics.csv")


if __name__ == "__main__":
    main()
