"""Fill the acceptance result cache, longest-lived experiments last.

    python3 scripts/run_acceptance.py [--only stability,unconstrained,...]

Each finished seed or grid is written as soon as it completes, so the script
can be interrupted and restarted without losing work.
"""

import argparse
import logging
import time

from behaviorspec import experiments

ORDER = ("stability", "unconstrained", "constrained", "no_bootstrap", "td3", "grid_1", "grid_2")


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--only", default=",".join(ORDER))
    p.add_argument("--workers", type=int, default=1)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    bars = experiments.acceptance_bars()
    for name in args.only.split(","):
        start = time.time()
        if name == "stability":
            out = experiments.stability_experiment()
            summary = {m: max(r["lambda_1"] for r in rows) for m, rows in out["log"].items()}
        elif name.startswith("grid_"):
            rows = experiments.grid_experiment(name, workers=args.workers)
            summary = [(tuple(v for k, v in r.items() if k.startswith("w_")), r["class"], r["steps"]) for r in rows]
        else:
            preset, bar = bars[name]
            summary = []
            for seed in experiments.preset_seeds(preset):
                res = experiments.seed_until_bar(preset, seed, bar)
                summary.append((seed, res["reached_step"]))
                logging.info("%s seed %d reached %s", name, seed, res["reached_step"])
        logging.info("%s done in %.0fs: %s", name, time.time() - start, summary)


if __name__ == "__main__":
    main()
