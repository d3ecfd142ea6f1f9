"""Mean returns of the hand-written heuristics and random play.

    python scripts/heuristic_baselines.py --episodes 1000
"""
import argparse

import numpy as np

from blockforge.agents import CoveringHeuristic, RandomPolicy, SilhouetteHeuristic
from blockforge.env import Env, run_episode
from blockforge.rng import substream
from blockforge.scenegen import TaskId, training_scene

PAIRS = [
    (TaskId.SILHOUETTE, "silhouette", SilhouetteHeuristic()),
    (TaskId.COVERING, "covering", CoveringHeuristic()),
    (TaskId.COVERING_HARD, "covering", CoveringHeuristic()),
]


def mean_return(policy, task, hardest, episodes, seed):
    rets = [run_episode(Env.from_generated(training_scene(task, 1.0, seed, k, hardest_only=hardest)), policy,
                        substream(seed, "baseline", k))
            for k in range(episodes)]
    return float(np.mean(rets)), float(np.std(rets) / np.sqrt(len(rets)))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--episodes", type=int, default=300)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    print(f"{'task':15s} {'policy':11s} {'training':>16s} {'hardest':>16s}")
    for task, name, heuristic in PAIRS:
        for label, pol in ((name, heuristic), ("random", RandomPolicy())):
            cells = [mean_return(pol, task, h, args.episodes, args.seed) for h in (False, True)]
            print(f"{task.value:15s} {label:11s} " + " ".join(f"{m:8.2f} ± {s:5.2f}" for m, s in cells))


if __name__ == "__main__":
    main()
