"""Desk-scale run: generate, reconstruct, train both stages (Freeze), evaluate.

    python scripts/run_desk.py --out runs/desk
"""

import argparse
import json
import logging
import time
from pathlib import Path

from bevloc import pipeline
from bevloc.config import load_config
from bevloc.data import BEV_INDEX
from bevloc.evaluation import metrics_json
from bevloc.training import save_checkpoint


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=None, help="YAML overlay on the desk preset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/desk")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")

    cfg = load_config(args.config).with_seed(args.seed)
    out = Path(args.out)
    data = out / "data"
    t0 = time.time()
    if not (data / "manifest.json").exists():
        pipeline.generate(cfg, data)
    if not (data / BEV_INDEX).exists():
        pipeline.reconstruct(cfg, data)
    t_data = time.time() - t0

    s1 = pipeline.stage1(cfg, data, "bev")
    s2 = pipeline.stage2(cfg, data, s1, "freeze")
    save_checkpoint(out / "stage2.pt", s2.stage1.model, s2.head, extra={"source": "bev", "strategy": "freeze"})
    records = pipeline.evaluate_all(cfg, data, s2.stage1.model, s2.head, "bev")
    (out / "metrics.json").write_text(metrics_json(records))
    for d, r in records.items():
        print(d, json.dumps(r["final"]))
    print(f"data {t_data / 60:.1f} min, total {(time.time() - t0) / 60:.1f} min")


if __name__ == "__main__":
    main()
