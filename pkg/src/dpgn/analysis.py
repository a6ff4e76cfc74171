"""Ablations and visualisations: distribution-dimension masking, generation
sweep, per-generation vote heatmaps, labeled-ratio sweep.

Every experiment writes a CSV table (the primary artifact) and a PNG rendered
from the same rows, and appends its config hash to ``run_info.txt``.
"""
from __future__ import annotations

import copy
import csv
import dataclasses
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import torch  # noqa: E402

from .config import RunConfig  # noqa: E402
from .episodes import DatasetSource, EpisodeSpec, sample_episode  # noqa: E402
from .graph import DPGN, export_edge_history  # noqa: E402
from .objectives import query_votes  # noqa: E402
from .training import EvalReport, build_source, episodes_to_tensors, evaluate, fit  # noqa: E402

DEFAULT_GENERATIONS = 6


def write_table(path, header: list[str], rows: list[list]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def read_table(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _note_run(out_dir: Path, artifact: str, cfg: RunConfig | None, seed: int) -> None:
    digest = cfg.config_hash() if cfg is not None else "none"
    with open(out_dir / "run_info.txt", "a") as fh:
        fh.write(f"{artifact}\tconfig_hash={digest}\tseed={seed}\n")


def line_plot(csv_path, x_key: str, xlabel: str, png_path=None, title: str = "") -> Path:
    """Render accuracy +- ci against ``x_key`` from a table written by this module."""
    rows = read_table(csv_path)
    xs = [float(r[x_key]) for r in rows]
    ys = np.array([float(r["accuracy"]) for r in rows])
    ci = np.array([float(r["ci"]) for r in rows])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(xs, ys, yerr=ci, marker="o", capsize=3)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("accuracy (%)")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    png_path = Path(png_path) if png_path else Path(csv_path).with_suffix(".png")
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return png_path


def _run_points(fn, points, parallel: bool):
    if not parallel:
        return [fn(p) for p in points]
    with ThreadPoolExecutor() as pool:
        return list(pool.map(fn, points))


def ablate_distribution(
    model: DPGN,
    src: DatasetSource,
    spec: EpisodeSpec,
    kept_dims: list[int],
    tasks: int = 1000,
    seed: int = 0,
    out_dir=None,
    parallel: bool = False,
) -> list[EvalReport]:
    """Accuracy when only the first ``k`` distribution-node dimensions reach the
    distribution-edge encoders (inference-time masking; training is untouched)."""
    nk = spec.n_way * spec.k_shot
    for k in kept_dims:
        if not 0 <= k <= nk:
            raise ValueError(f"kept_dims={k} outside [0, {nk}]")

    def point(k):
        m = copy.deepcopy(model) if parallel else model
        return evaluate(src, spec, m, tasks, seed, kept_dims=k)

    reports = _run_points(point, list(kept_dims), parallel)
    if out_dir is not None:
        out = Path(out_dir)
        path = write_table(out / "ablate_dist.csv", ["kept_dims", "accuracy", "ci"],
                           [[r.kept_dims, f"{r.mean_acc:.4f}", f"{r.ci95:.4f}"] for r in reports])
        line_plot(path, "kept_dims", "distribution dimensions kept",
                  title="distribution-graph masking")
        _note_run(out, path.name, getattr(model, "run_config", None), seed)
    return reports


def sweep_generations(
    cfg: RunConfig,
    generations: list[int],
    tasks: int = 1000,
    seed: int = 0,
    out_dir=None,
    src: DatasetSource | None = None,
    baseline: bool = True,
    parallel: bool = False,
) -> list[tuple[int, EvalReport]]:
    """Train and evaluate one model per generation count.

    With ``baseline`` an extra point at 0 trains a single generation with D2P
    bypassed, so point nodes never receive distribution information.
    """
    if not generations:
        raise ValueError("empty generation list")
    if len(set(generations)) != len(generations):
        raise ValueError("duplicate generation counts")
    if min(generations) < 1:
        raise ValueError("generation counts must be >= 1")
    src = src if src is not None else build_source(cfg)
    spec = cfg.episode_spec()
    points = ([0] if baseline else []) + sorted(generations)

    # training stays sequential (global torch seed); only evaluations run concurrently
    models = [fit(cfg.update(generations=max(g, 1)), src, bypass_d2p=(g == 0)).model for g in points]
    reports = _run_points(lambda m: evaluate(src, spec, m, tasks, seed), models, parallel)
    results = list(zip(points, reports))
    if out_dir is not None:
        out = Path(out_dir)
        rows = [[g, f"{r.mean_acc:.4f}", f"{r.ci95:.4f}", int(g == DEFAULT_GENERATIONS)]
                for g, r in results]
        path = write_table(out / "sweep_gen.csv", ["generations", "accuracy", "ci", "default"], rows)
        line_plot(path, "generations", "generations (0 = D2P bypassed)", title="generation sweep")
        _note_run(out, path.name, cfg, seed)
    return results


@torch.no_grad()
def generation_heatmaps(model: DPGN, src: DatasetSource, spec: EpisodeSpec, seed: int = 0,
                        split: str = "test", out_dir=None):
    """Per-generation query x class vote matrices for one transductive episode.

    Entry ``[q, c]`` sums the final-normalised point edges from query ``q`` to
    the labeled supports of class ``c``, before the softmax.  Each full edge
    row sums to 1, so a heatmap row sums to the share of that mass landing on
    supports (at most 1; the rest sits on query columns).

    Returns ``(heatmaps, predictions, episode)``.
    """
    if not spec.transductive:
        raise ValueError("heatmaps are defined for the transductive graph")
    episode = sample_episode(src, spec, seed, split)
    model.eval()
    x, sy, lab, _ = episodes_to_tensors([episode], dtype=next(model.parameters()).dtype)
    out = model(x, sy, lab, transductive=True)
    if not out.history.point_edges:
        raise ValueError("model run retained no generation history")
    maps = [query_votes(out, g)[0].numpy() for g in range(out.history.generations)]
    preds = maps[-1].argmax(-1)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for l, hm in enumerate(maps, 1):
            np.savetxt(out_dir / f"heatmap_gen{l}.csv", hm, delimiter=",", fmt="%.8g")
            fig, ax = plt.subplots(figsize=(3.2, 3))
            ax.imshow(hm, cmap="Blues")
            ax.set_xlabel("support class")
            ax.set_ylabel("query")
            ax.set_title(f"generation {l}")
            fig.tight_layout()
            fig.savefig(out_dir / f"heatmap_gen{l}.png", dpi=100)
            plt.close(fig)
        write_table(out_dir / "heatmap_queries.csv", ["query", "label", "prediction"],
                    [[i, int(y), int(p)] for i, (y, p) in enumerate(zip(episode.query_y, preds))])
        export_edge_history(out.history, out_dir / "edges")
        _note_run(out_dir, "heatmap_gen*.csv", getattr(model, "run_config", None), seed)
    return maps, preds, episode


def semisupervised_sweep(
    cfg: RunConfig,
    ratios: list[float],
    tasks: int = 1000,
    seed: int = 0,
    out_dir=None,
    src: DatasetSource | None = None,
    parallel: bool = False,
) -> list[tuple[float, EvalReport]]:
    """Train and evaluate one model per labeled ratio (same seeds throughout).

    Training and evaluation use the labeled ratio of the point being run.
    """
    if not ratios:
        raise ValueError("empty ratio list")
    for r in ratios:
        if not 0.0 < r <= 1.0:
            raise ValueError(f"labeled ratio {r} outside (0, 1]")
    if len(set(ratios)) != len(ratios):
        raise ValueError("duplicate ratios")
    src = src if src is not None else build_source(cfg)

    ratios = sorted(ratios)
    runs = [cfg.update(labeled_ratio=r) for r in ratios]
    models = [fit(run, src).model for run in runs]
    reports = _run_points(lambda mr: evaluate(src, mr[1].episode_spec(), mr[0], tasks, seed),
                          list(zip(models, runs)), parallel)
    results = list(zip(ratios, reports))
    if out_dir is not None:
        out = Path(out_dir)
        path = write_table(out / "semisup.csv", ["labeled_ratio", "accuracy", "ci"],
                           [[r, f"{e.mean_acc:.4f}", f"{e.ci95:.4f}"] for r, e in results])
        line_plot(path, "labeled_ratio", "labeled support ratio", title="semi-supervised")
        _note_run(out, path.name, cfg, seed)
    return results


def write_eval_report(report: EvalReport, path) -> Path:
    row = report.as_row()
    return write_table(path, list(row), [list(row.values())])


def spec_for(model: DPGN, cfg: RunConfig | None = None, **overrides) -> EpisodeSpec:
    """Episode spec matching a model's way/shot, with data settings from ``cfg``."""
    cfg = cfg or getattr(model, "run_config", None) or RunConfig(model=model.cfg)
    cfg = dataclasses.replace(cfg, model=model.cfg)
    return cfg.episode_spec(**overrides)
