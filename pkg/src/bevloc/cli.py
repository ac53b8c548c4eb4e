"""Command-line interface: ``bevloc <subcommand> [--config FILE] [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import ConfigError, dump_config, load_config
from .evaluation import metrics_json
from .training import NEGATIVE_MODES, STRATEGIES, load_checkpoint, save_checkpoint

log = logging.getLogger("bevloc")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(metrics_json(obj))


def cmd_gen_data(args, cfg):
    manifest = pipeline.generate(cfg, args.out)
    print(f"wrote {sum(len(v) for v in manifest.splits.values())} locations to {args.out}")


def cmd_reconstruct(args, cfg):
    index = pipeline.reconstruct(cfg, args.data or args.out)
    print(f"reconstructed {len(index)} videos")


def cmd_train_stage1(args, cfg):
    state = pipeline.stage1(cfg, args.data, args.source)
    out = Path(args.out)
    save_checkpoint(out / "stage1.pt", state.model, extra={"source": args.source})
    _write_json(out / "stage1_log.json", state.history)
    print(f"stage 1: {state.epoch} epochs, final loss {state.history[-1]['loss']:.4f} -> {out / 'stage1.pt'}")


def cmd_train_stage2(args, cfg):
    s1 = None
    if args.strategy != "train_together":
        if not args.stage1:
            raise ConfigError(f"--stage1 checkpoint is required for strategy {args.strategy}")
        model, _, _ = load_checkpoint(args.stage1)
        s1 = pipeline.Stage1State(model)
    state = pipeline.stage2(cfg, args.data, s1, args.strategy, args.negatives)
    out = Path(args.out)
    save_checkpoint(out / "stage2.pt", state.stage1.model, state.head,
                    extra={"strategy": args.strategy, "negatives": args.negatives or cfg.stage2.negatives})
    _write_json(out / "stage2_log.json", state.history)
    print(f"stage 2 ({args.strategy}): final L_M {state.history[-1]['matching']:.4f} -> {out / 'stage2.pt'}")


def cmd_eval(args, cfg):
    model, head, blob = load_checkpoint(args.checkpoint)
    source = args.source or blob["extra"].get("source", cfg.eval.source)
    records = pipeline.evaluate_all(cfg, args.data, model, None if args.stage1_only else head, source, args.k)
    path = Path(args.out) / "metrics.json"
    _write_json(path, records)
    for d, r in records.items():
        f = r["final"]
        print(f"{d}: R@1 {f['R@1']:.3f} R@5 {f['R@5']:.3f} R@10 {f['R@10']:.3f} AP {f['AP']:.3f}")
    print(f"metrics -> {path}")


def cmd_ablate(args, cfg):
    seeds = list(range(args.seed, args.seed + args.n_seeds))
    if args.table == "a":
        res = pipeline.ablation_inputs(cfg, args.data, seeds)
    elif args.table == "b":
        res = pipeline.ablation_strategies(cfg, args.data, seeds)
    elif args.table == "c":
        res = pipeline.ablation_topk(cfg, args.data, tuple(args.ks), seeds)
    else:
        res = pipeline.robustness(cfg, args.data, seeds)
    path = Path(args.out) / f"ablation_{args.table}.json"
    _write_json(path, res)
    print(json.dumps(res["mean_ap"], indent=1, sort_keys=True))
    print(f"results -> {path}")


def cmd_plot(args, cfg):
    from .plotting import plot_directory

    paths = plot_directory(Path(args.results or args.out), Path(args.out))
    if not paths:
        print("no ablation results found to plot")
    for p in paths:
        print(f"figure -> {p}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="YAML config; default is the desk preset")
    common.add_argument("--seed", type=int, default=None, help="overrides every seed in the config")
    common.add_argument("--out", default="runs", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="bevloc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", parents=[common], help="render locations, drone videos, satellite images, negatives")
    s = sub.add_parser("reconstruct", parents=[common], help="fit scenes and render BEV sequences")
    s.add_argument("--data", default=None, help="dataset directory (default: --out)")

    for name in ("train-stage1", "train-stage2", "eval", "ablate"):
        s = sub.add_parser(name, parents=[common])
        s.add_argument("--data", required=True, help="dataset directory")
        if name == "train-stage1":
            s.add_argument("--source", choices=("bev", "drone"), default="bev")
        if name == "train-stage2":
            s.add_argument("--stage1", default=None, help="stage-1 checkpoint")
            s.add_argument("--strategy", choices=STRATEGIES, default="freeze")
            s.add_argument("--negatives", choices=NEGATIVE_MODES, default=None)
        if name == "eval":
            s.add_argument("--checkpoint", required=True)
            s.add_argument("--source", choices=("bev", "drone"), default=None)
            s.add_argument("--k", type=int, default=None, help="re-rank depth (default from config)")
            s.add_argument("--stage1-only", action="store_true")
        if name == "ablate":
            s.add_argument("--table", choices=("a", "b", "c", "robustness"), required=True)
            s.add_argument("--n-seeds", type=int, default=3)
            s.add_argument("--ks", type=int, nargs="+", default=[1, 2, 4, 8, 16, 32])
    s = sub.add_parser("plot", parents=[common], help="figures from ablation JSON files")
    s.add_argument("--results", default=None, help="directory with ablation_*.json (default: --out)")
    return p


COMMANDS = {"gen-data": cmd_gen_data, "reconstruct": cmd_reconstruct, "train-stage1": cmd_train_stage1,
            "train-stage2": cmd_train_stage2, "eval": cmd_eval, "ablate": cmd_ablate, "plot": cmd_plot}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        else:
            args.seed = cfg.stage1.seed
        log.info("config:\n%s", dump_config(cfg))
        COMMANDS[args.command](args, cfg)
    except (ConfigError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
