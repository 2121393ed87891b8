"""Render cached acceptance runs as SVG curves (nothing is retrained).

    python3 scripts/plot_acceptance.py [--out results/plots]

Missing cache entries are skipped.
"""

import argparse
import json
import os
from dataclasses import asdict

from behaviorspec import experiments
from behaviorspec.config import load_config
from behaviorspec.plotting import line_plot, plot_metrics


def cached_seeds(preset, bar):
    out = []
    for seed in experiments.preset_seeds(preset):
        parsed = load_config(experiments.CONFIG_DIR / f"{preset}.cfg")
        key = experiments.config_key(parsed, extra={"bar": asdict(bar), "seed": seed})
        path = experiments.RESULTS_DIR / preset / key / f"seed_{seed}.json"
        if path.exists():
            out.append(json.loads(path.read_text()))
    return out


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", default=str(experiments.ROOT / "results" / "plots"))
    args = p.parse_args()
    os.makedirs(args.out, exist_ok=True)
    for name, (preset, bar) in experiments.acceptance_bars().items():
        runs = cached_seeds(preset, bar)
        for run in runs:
            plot_metrics(run["rows"], args.out, prefix=f"{name}_seed_{run['seed']}_")
        if runs:
            series = {f"seed {r['seed']}": ([x["step"] for x in r["rows"]], [x["success_rate"] for x in r["rows"]])
                      for r in runs}
            with open(os.path.join(args.out, f"{name}_success.svg"), "w") as fh:
                fh.write(line_plot(series, title=f"{name}: evaluation success", xlabel="environment steps"))
        print(f"{name}: {len(runs)} cached seeds")


if __name__ == "__main__":
    main()
