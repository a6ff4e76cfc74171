"""``dpgn`` command line: train, eval, ablate-dist, sweep-gen, heatmap, semisup."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import RunConfig, parse_bool


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "iters", None) is not None:
        overrides["max_iters"] = args.iters
    return cfg.update(**overrides) if overrides else cfg


def _load_model(args):
    from .training import load_checkpoint

    if not args.ckpt:
        raise SystemExit("error: --ckpt is required")
    config = RunConfig.load(args.config) if args.config else None
    return load_checkpoint(args.ckpt, config)


def cmd_train(args) -> int:
    from .training import fit

    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.txt")
    result = fit(cfg, out_dir=out)
    best = f"{result.best_val:.2f}% at iteration {result.best_iteration}" if result.best_val is not None else "n/a"
    print(f"trained {cfg.train.max_iters} iterations; final loss {result.losses[-1]:.4f}; best val {best}")
    print(f"checkpoints: {out / 'best.ckpt'}, {out / 'last.ckpt'}; metrics: {out / 'metrics.csv'}")
    return 0


def cmd_eval(args) -> int:
    from .analysis import spec_for, write_eval_report
    from .training import build_source, evaluate

    model = _load_model(args)
    cfg = model.run_config
    overrides = {}
    if args.transductive is not None:
        overrides["transductive"] = args.transductive
    if args.labeled_ratio is not None:
        overrides["labeled_ratio"] = args.labeled_ratio
    spec = spec_for(model, cfg, **overrides)
    report = evaluate(build_source(cfg), spec, model, args.tasks, args.seed or 0, split=args.split)
    print(report)
    out = Path(args.out)
    write_eval_report(report, out / "eval.csv")
    return 0


def cmd_ablate(args) -> int:
    from .analysis import ablate_distribution, spec_for
    from .training import build_source

    model = _load_model(args)
    spec = spec_for(model)
    dims = _int_list(args.kept_dims) if args.kept_dims else list(range(spec.n_way * spec.k_shot + 1))
    reports = ablate_distribution(model, build_source(model.run_config), spec, dims,
                                  args.tasks, args.seed or 0, out_dir=args.out, parallel=args.parallel)
    for r in reports:
        print(f"kept_dims={r.kept_dims}: {r.mean_acc:.2f}% +- {r.ci95:.2f}%")
    return 0


def cmd_sweep(args) -> int:
    from .analysis import DEFAULT_GENERATIONS, sweep_generations

    cfg = _load_config(args)
    results = sweep_generations(cfg, _int_list(args.gens), args.tasks, args.seed or 0,
                                out_dir=args.out, parallel=args.parallel)
    for g, r in results:
        tag = "  (default)" if g == DEFAULT_GENERATIONS else ""
        label = "0 (D2P bypassed)" if g == 0 else str(g)
        print(f"generations={label}: {r.mean_acc:.2f}% +- {r.ci95:.2f}%{tag}")
    return 0


def cmd_heatmap(args) -> int:
    from .analysis import generation_heatmaps, spec_for
    from .training import build_source

    model = _load_model(args)
    spec = spec_for(model, transductive=True)
    maps, preds, episode = generation_heatmaps(model, build_source(model.run_config), spec,
                                               args.seed or 0, out_dir=args.out)
    print(f"wrote {len(maps)} heatmaps to {args.out}; predictions {preds.tolist()} "
          f"labels {episode.query_y.tolist()}")
    return 0


def cmd_semisup(args) -> int:
    from .analysis import semisupervised_sweep

    cfg = _load_config(args)
    results = semisupervised_sweep(cfg, _float_list(args.ratios), args.tasks, args.seed or 0,
                                   out_dir=args.out, parallel=args.parallel)
    for r, rep in results:
        print(f"labeled_ratio={r:g}: {rep.mean_acc:.2f}% +- {rep.ci95:.2f}%")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpgn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, tasks=True):
        p.add_argument("--config", help="key = value run config file")
        p.add_argument("--ckpt", help="checkpoint archive")
        p.add_argument("--seed", type=int)
        if tasks:
            p.add_argument("--tasks", type=int, default=1000)
        p.add_argument("--out", default="runs/latest")
        return p

    p = common(sub.add_parser("train", help="episodic meta-training"), tasks=False)
    p.add_argument("--iters", type=int, help="override max_iters")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("eval", help="mean accuracy and 95%% CI over sampled tasks"))
    p.add_argument("--transductive", type=parse_bool, default=None)
    p.add_argument("--labeled-ratio", type=float, default=None)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("ablate-dist", help="mask distribution-node dimensions at inference"))
    p.add_argument("--kept-dims", help="comma list, default 0..NK")
    p.add_argument("--parallel", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = common(sub.add_parser("sweep-gen", help="accuracy against generation count"))
    p.add_argument("--gens", default="1,2,4,6")
    p.add_argument("--iters", type=int, help="override max_iters per point")
    p.add_argument("--parallel", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = common(sub.add_parser("heatmap", help="per-generation query x class votes"), tasks=False)
    p.set_defaults(func=cmd_heatmap)

    p = common(sub.add_parser("semisup", help="accuracy against labeled support ratio"))
    p.add_argument("--ratios", default="0.2,0.4,0.6,1.0")
    p.add_argument("--iters", type=int, help="override max_iters per point")
    p.add_argument("--parallel", action="store_true")
    p.set_defaults(func=cmd_semisup)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"dpgn {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
