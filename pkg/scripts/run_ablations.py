"""All ablation tables plus the occlusion study, then figures.

Expects the dataset written by run_desk.py. The occluded test set is generated
next to it (no reconstruction needed, the study uses raw drone frames).

    python scripts/run_ablations.py --data runs/desk/data --out runs/ablations
"""

import argparse
import json
import logging
from dataclasses import replace
from pathlib import Path

from bevloc import pipeline
from bevloc.config import load_config
from bevloc.evaluation import metrics_json
from bevloc.plotting import plot_directory


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="runs/ablations")
    p.add_argument("--n-seeds", type=int, default=3)
    p.add_argument("--tables", nargs="+", default=["a", "b", "c", "robustness"],
                   choices=["a", "b", "c", "robustness"])
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")

    cfg = load_config(args.config)
    seeds = list(range(args.n_seeds))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for table in args.tables:
        if table == "a":
            res = pipeline.ablation_inputs(cfg, args.data, seeds)
        elif table == "b":
            res = pipeline.ablation_strategies(cfg, args.data, seeds)
        elif table == "c":
            res = pipeline.ablation_topk(cfg, args.data, (1, 2, 3, 4, 5, 6), seeds)
        else:
            occ = replace(cfg, data=replace(cfg.data, occlusion_rate=0.3, n_synthetic=0))
            root = out / "occluded_data"
            if not (root / "manifest.json").exists():
                pipeline.generate(occ, root)
            res = pipeline.robustness(occ, root, seeds)
        (out / f"ablation_{table}.json").write_text(metrics_json(res))
        print(table, json.dumps(res["mean_ap"], sort_keys=True))
    for path in plot_directory(out, out):
        print("figure", path)


if __name__ == "__main__":
    main()
