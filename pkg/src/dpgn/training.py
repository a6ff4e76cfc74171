"""Episodic meta-training, evaluation protocol and checkpoints."""
from __future__ import annotations

import copy
import csv
import io
import logging
import math
import time
import warnings
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import DPGNConfig, RunConfig, TrainConfig
from .episodes import (
    DatasetSource,
    Episode,
    EpisodeSpec,
    EpisodeStream,
    load_dataset,
    make_synthetic_clusters,
    make_synthetic_images,
)
from .graph import DPGN
from .objectives import episode_losses, query_votes

log = logging.getLogger(__name__)

METRICS_HEADER = ["iteration", "loss", "val_acc", "val_ci"]


def lr_at(iteration: int, cfg: TrainConfig) -> float:
    """Step schedule: ``lr * factor ** (iteration // every)``."""
    return cfg.lr * cfg.lr_decay_factor ** (iteration // cfg.lr_decay_every)


def episodes_to_tensors(episodes: list[Episode], device="cpu", dtype=torch.float32):
    x = np.stack([ep.samples() for ep in episodes])
    return (
        torch.as_tensor(x, dtype=dtype, device=device),
        torch.as_tensor(np.stack([ep.support_y for ep in episodes]), device=device),
        torch.as_tensor(np.stack([ep.labeled for ep in episodes]), device=device),
        torch.as_tensor(np.stack([ep.query_y for ep in episodes]), device=device),
    )


def build_source(cfg: RunConfig) -> DatasetSource:
    data = cfg.data
    counts = tuple(int(v) for v in data.split.split(",")) if data.split else None
    if data.dataset == "clusters":
        return make_synthetic_clusters(
            data.num_classes, data.dim, data.separation, rng=data.data_seed,
            samples_per_class=data.samples_per_class, splits=counts,
        )
    if data.dataset == "images":
        return make_synthetic_images(
            data.num_classes, rng=data.data_seed, samples_per_class=data.samples_per_class,
            splits=counts,
        )
    root = Path(data.dataset)
    split = data.split or (root / "split.txt")
    return load_dataset(root, split)


def build_model(cfg: DPGNConfig, seed: int = 0) -> DPGN:
    torch.manual_seed(seed)
    return DPGN(cfg)


def fit(cfg: RunConfig, src: DatasetSource | None = None, out_dir=None,
        bypass_d2p: bool = False) -> TrainResult:
    """Build a source (unless given) and a fresh model from ``cfg`` and train it."""
    src = src if src is not None else build_source(cfg)
    model = build_model(cfg.model, cfg.train.seed)
    model.bypass_d2p = bypass_d2p
    return train(src, cfg.episode_spec(), model, cfg.train, out_dir=out_dir, run_config=cfg)


def _rotate_episodes(x: torch.Tensor, gen: torch.Generator) -> torch.Tensor:
    """Apply one random orthogonal map per episode to vector samples ``(B, T, d)``.

    Distances inside an episode are unchanged; absolute positions of the
    training clusters are not, so they cannot be memorised.
    """
    b, _, d = x.shape
    q, r = torch.linalg.qr(torch.randn(b, d, d, generator=gen, dtype=x.dtype))
    q = q * torch.sign(torch.diagonal(r, dim1=-2, dim2=-1)).unsqueeze(-2)
    return torch.bmm(x, q)


def _augment(x: torch.Tensor, gen: torch.Generator) -> torch.Tensor:
    """Random horizontal flip and 2-pixel pad-and-crop, per sample."""
    b, t = x.shape[:2]
    flat = x.reshape(b * t, *x.shape[2:])
    flip = torch.rand(flat.shape[0], generator=gen) < 0.5
    flat = torch.where(flip[:, None, None, None], flat.flip(-1), flat)
    h, w = flat.shape[-2:]
    padded = torch.nn.functional.pad(flat, (2, 2, 2, 2))
    offs = torch.randint(0, 5, (flat.shape[0], 2), generator=gen)
    out = torch.stack([padded[i, :, dy:dy + h, dx:dx + w] for i, (dy, dx) in enumerate(offs.tolist())])
    return out.reshape(x.shape)


@dataclass
class EvalReport:
    tasks: int
    mean_acc: float
    ci95: float
    transductive: bool
    labeled_ratio: float
    accuracies: np.ndarray = field(repr=False, default=None)
    kept_dims: int | None = None

    def __str__(self) -> str:
        mode = "transductive" if self.transductive else "non-transductive"
        return (f"accuracy {self.mean_acc:.2f}% +- {self.ci95:.2f}% "
                f"(95% CI, {self.tasks} tasks, {mode}, labeled_ratio={self.labeled_ratio:g})")

    def as_row(self) -> dict:
        return {"tasks": self.tasks, "accuracy": round(self.mean_acc, 4), "ci": round(self.ci95, 4),
                "transductive": self.transductive, "labeled_ratio": self.labeled_ratio}


def confidence_interval(accuracies) -> tuple[float, float]:
    """Mean and 95% half-width ``1.96 * std / sqrt(n)`` (population std)."""
    acc = np.asarray(accuracies, dtype=np.float64)
    if acc.size == 0:
        raise ValueError("no accuracies to summarise")
    return float(acc.mean()), float(1.96 * acc.std() / math.sqrt(len(acc)))


@torch.no_grad()
def predict_episodes(model: DPGN, episodes: list[Episode], transductive=None, kept_dims=None):
    """Final-generation query predictions ``(B, Tq)`` for a list of episodes."""
    was_training = model.training
    model.eval()
    try:
        x, sy, lab, _ = episodes_to_tensors(episodes, dtype=next(model.parameters()).dtype)
        out = model(x, sy, lab, transductive=transductive, kept_dims=kept_dims)
        return query_votes(out).argmax(-1).numpy()
    finally:
        model.train(was_training)


def evaluate(
    src: DatasetSource,
    spec: EpisodeSpec,
    model: DPGN,
    num_tasks: int = 1000,
    seed: int = 0,
    split: str = "test",
    kept_dims: int | None = None,
    batch_size: int = 100,
) -> EvalReport:
    """Mean query accuracy (in %) with a 95% confidence interval over sampled tasks.

    Runs in inference mode: no parameter or batch-norm statistic changes.
    """
    if num_tasks < 1:
        raise ValueError("num_tasks must be >= 1")
    stream = EpisodeStream(src, spec, seed, split)
    accs = []
    remaining = num_tasks
    while remaining:
        chunk = stream.take(min(batch_size, remaining))
        remaining -= len(chunk)
        pred = predict_episodes(model, chunk, transductive=spec.transductive, kept_dims=kept_dims)
        truth = np.stack([ep.query_y for ep in chunk])
        accs.extend((pred == truth).mean(1))
    accs = np.asarray(accs) * 100.0
    mean, ci = confidence_interval(accs)
    return EvalReport(num_tasks, mean, ci, spec.transductive, spec.labeled_ratio, accs, kept_dims)


@dataclass
class TrainResult:
    model: DPGN
    losses: list[float]
    metrics: list[dict]
    best_val: float | None
    best_iteration: int | None


def train(
    src: DatasetSource,
    spec: EpisodeSpec,
    model: DPGN,
    cfg: TrainConfig,
    out_dir=None,
    run_config: RunConfig | None = None,
    restore_best: bool = True,
) -> TrainResult:
    """Meta-train ``model`` on episodes from the ``train`` split.

    Each iteration averages the total loss over ``cfg.episodes_per_iter``
    episodes and takes one Adam step.  When the source has a ``val`` split,
    accuracy is checked every ``cfg.eval_every`` iterations and the best
    weights are kept (and written to ``best.ckpt`` when ``out_dir`` is given).
    """
    mcfg = model.cfg
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    stream = EpisodeStream(src, spec, cfg.seed, "train")
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    has_val = len(src.classes_in("val")) >= spec.n_way
    val_spec = EpisodeSpec(spec.n_way, spec.k_shot, spec.n_query, spec.labeled_ratio,
                           spec.transductive, spec.balanced_queries)

    out = Path(out_dir) if out_dir is not None else None
    writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        fh = open(out / "metrics.csv", "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)

    losses: list[float] = []
    metrics: list[dict] = []
    best_val, best_it, best_state = None, None, None
    started = time.time()
    try:
        for it in range(cfg.max_iters):
            for group in opt.param_groups:
                group["lr"] = lr_at(it, cfg)
            model.train()
            x, sy, lab, qy = episodes_to_tensors(stream.take(cfg.episodes_per_iter),
                                                 dtype=next(model.parameters()).dtype)
            if x.dim() == 3 and cfg.rotate_episodes:
                x = _rotate_episodes(x, gen)
            elif x.dim() == 5 and cfg.augment_images:
                x = _augment(x, gen)
            result = model(x, sy, lab, qy, transductive=spec.transductive)
            loss = episode_losses(result, mcfg.lambda_p, mcfg.lambda_d, mcfg.loss_on).total
            if not torch.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at iteration {it + 1}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            for p in model.parameters():
                # a parameter with no gradient signal is left untouched by the step
                if p.grad is not None and not p.grad.any():
                    p.grad = None
            opt.step()
            losses.append(loss.item())

            row = {"iteration": it + 1, "loss": loss.item(), "val_acc": "", "val_ci": ""}
            if has_val and cfg.eval_every and (it + 1) % cfg.eval_every == 0:
                rep = evaluate(src, val_spec, model, cfg.eval_tasks, seed=cfg.seed + 1, split="val")
                row["val_acc"], row["val_ci"] = rep.mean_acc, rep.ci95
                if best_val is None or rep.mean_acc > best_val:
                    best_val, best_it = rep.mean_acc, it + 1
                    best_state = copy.deepcopy(model.state_dict())
                    if out is not None:
                        save_checkpoint(model, out / "best.ckpt", run_config, it + 1,
                                        {"val_acc": rep.mean_acc, "val_ci": rep.ci95})
                if out is not None:
                    save_checkpoint(model, out / "last.ckpt", run_config, it + 1,
                                    {"val_acc": rep.mean_acc, "val_ci": rep.ci95})
                log.info("iter %d  loss %.4f  val %.2f +- %.2f", it + 1, loss.item(),
                         rep.mean_acc, rep.ci95)
            elif cfg.log_every and (it + 1) % cfg.log_every == 0:
                log.info("iter %d  loss %.4f  lr %.2e  (%.0fs)", it + 1, loss.item(),
                         lr_at(it, cfg), time.time() - started)
            metrics.append(row)
            if writer is not None:
                writer.writerow([row[k] for k in METRICS_HEADER])
    finally:
        if writer is not None:
            fh.close()

    if out is not None:
        save_checkpoint(model, out / "last.ckpt", run_config, cfg.max_iters,
                        {"final_loss": losses[-1] if losses else float("nan")})
        if best_state is None:
            save_checkpoint(model, out / "best.ckpt", run_config, cfg.max_iters, {})
    if restore_best and best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model, losses, metrics, best_val, best_it)


# --------------------------------------------------------------------------
# Checkpoints: zip archive holding params.npz (named arrays) and manifest.txt

ARCH_KEYS = ("n_way", "k_shot", "generations", "emb_dim", "backbone", "input_shape",
             "hidden", "mlp_depth", "support_tying", "share_generations")


def save_checkpoint(model: DPGN, path, run_config: RunConfig | None = None,
                    iteration: int = 0, metrics: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    run_config = run_config or RunConfig(model=model.cfg)
    if run_config.model != model.cfg:
        run_config = RunConfig(model=model.cfg, train=run_config.train, data=run_config.data)
    arrays = io.BytesIO()
    np.savez(arrays, **{k: v.detach().cpu().numpy() for k, v in model.state_dict().items()})
    manifest = [
        "format = dpgn-checkpoint-1",
        f"config_hash = {run_config.config_hash()}",
        f"iteration = {iteration}",
        f"generations = {model.cfg.generations}",
    ]
    for key, value in (metrics or {}).items():
        manifest.append(f"metric.{key} = {value}")
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr("params.npz", arrays.getvalue())
        zf.writestr("manifest.txt", "\n".join(manifest) + "\n")
        zf.writestr("config.txt", run_config.to_text())
    return path


def read_manifest(path) -> dict[str, str]:
    try:
        with zipfile.ZipFile(path) as zf:
            text = zf.read("manifest.txt").decode()
    except (zipfile.BadZipFile, KeyError) as exc:
        raise ValueError(f"corrupt checkpoint {path}: {exc}") from None
    return dict((s.strip() for s in line.split("=", 1)) for line in text.splitlines() if "=" in line)


def load_checkpoint(path, config: RunConfig | DPGNConfig | None = None) -> DPGN:
    """Rebuild a model from a checkpoint.

    With ``config`` given, its architecture must agree with the stored one
    (``ValueError`` on dimension mismatch); a differing config hash only warns.
    The returned model carries ``run_config`` and ``manifest`` attributes.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            params = np.load(io.BytesIO(zf.read("params.npz")))
            stored = RunConfig.from_text(zf.read("config.txt").decode())
            params = {k: params[k] for k in params.files}
    except (zipfile.BadZipFile, KeyError, ValueError, OSError) as exc:
        raise ValueError(f"corrupt checkpoint {path}: {exc}") from None
    manifest = read_manifest(path)

    if config is not None:
        run_cfg = config if isinstance(config, RunConfig) else RunConfig(model=config)
        for key in ARCH_KEYS:
            want, have = getattr(run_cfg.model, key), getattr(stored.model, key)
            if want != have:
                raise ValueError(f"dimension mismatch: {key}={want} requested, checkpoint has {have}")
        if run_cfg.config_hash() != manifest.get("config_hash"):
            warnings.warn(f"config hash differs from checkpoint {path.name}", stacklevel=2)
        model_cfg = run_cfg.model
    else:
        run_cfg, model_cfg = stored, stored.model

    model = DPGN(model_cfg)
    state = model.state_dict()
    for key, value in params.items():
        if key not in state or tuple(state[key].shape) != value.shape:
            raise ValueError(f"dimension mismatch in parameter {key}")
    model.load_state_dict({k: torch.as_tensor(v) for k, v in params.items()})
    model.eval()
    model.run_config = run_cfg
    model.manifest = manifest
    return model
