"""Final Silhouette return for several recurrence depths across seeds.

Each run uses the linear curriculum compressed into its own step budget and
is scored on 200 scenes of the full training mix.

    python scripts/nrec_sweep.py --n-rec 1 3 --seeds 5 --steps 3000
"""
import argparse
import time

import numpy as np

from blockforge.learn import TrainConfig, Trainer


def final_return(n_rec: int, seed: int, steps: int, episodes: int = 200) -> float:
    cfg = TrainConfig(task="silhouette", n_rec=n_rec, seed=seed, learner_steps=steps, curriculum_steps=steps,
                      eval_every=0, eval_episodes=episodes)
    trainer = Trainer(cfg)
    trainer.run()
    return trainer.evaluate()["mean_return_all"]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n-rec", type=int, nargs="+", default=[1, 3])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--steps", type=int, default=3000)
    args = ap.parse_args()
    for n_rec in args.n_rec:
        t0 = time.time()
        rets = [final_return(n_rec, s, args.steps) for s in range(args.seeds)]
        print(f"n_rec={n_rec} median {np.median(rets):.3f} returns {np.round(rets, 3).tolist()} "
              f"({time.time() - t0:.0f}s)", flush=True)


if __name__ == "__main__":
    main()
