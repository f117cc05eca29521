"""Single-sample training loop with decoupled weight decay.

The optimizer is Adam with bias correction plus decoupled decay: the
decay term is added to the normalized moment update, never to the raw
gradient, so it does not leak into the moments:

    theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)

Each epoch shuffles the cached preprocessed frames with its own seeded
stream; in "mixed" threshold mode that same stream draws one selection
threshold per frame, so runs are reproducible end to end.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .costmodel import model_macs
from .errors import EmptyDataset, ShapeMismatch
from .kernels import cross_entropy
from .patches import sample_threshold_mixed, select_active
from .vit import ViTConfig, ViTParams, forward, loss_and_gradients
from .voxel import augment, build_voxel_grid, normalize_nonzero, resize_pad

THRESHOLD_MODES = ("fixed", "mixed")


LR_SCHEDULES = ("constant", "cosine")


@dataclass
class TrainConfig:
    epochs: int = 30
    lr: float = 1e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    threshold_mode: str = "fixed"
    threshold: float = 0.0
    mixed_low: float = 0.0
    mixed_high: float = 0.7
    augment: bool = False
    lr_schedule: str = "constant"
    clip_norm: float = 0.0   # 0 disables clipping
    seed: int = 0

    def __post_init__(self):
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ValueError(f"threshold_mode must be one of {THRESHOLD_MODES}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        if not 0.0 <= self.mixed_low <= self.mixed_high <= 1.0:
            raise ValueError("need 0 <= mixed_low <= mixed_high <= 1")
        if self.epochs < 0 or self.lr <= 0 or self.clip_norm < 0:
            raise ValueError("epochs, lr, and clip_norm must be sane")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for an epoch; cosine decays to 5% of the base."""
        if self.lr_schedule == "constant" or self.epochs <= 1:
            return self.lr
        frac = 0.5 * (1.0 + np.cos(np.pi * epoch / (self.epochs - 1)))
        return self.lr * max(frac, 0.05)


@dataclass
class OptimizerState:
    moment1: dict
    moment2: dict
    step: int = 0

    @classmethod
    def for_params(cls, params: ViTParams) -> "OptimizerState":
        return cls(
            moment1={n: np.zeros_like(t) for n, t in params.named_tensors()},
            moment2={n: np.zeros_like(t) for n, t in params.named_tensors()},
        )


def adamw_step(params: ViTParams, grads: ViTParams, state: OptimizerState,
               cfg: TrainConfig, lr: float | None = None):
    """One in-place update; returns (params, state) for chaining.

    ``lr`` overrides cfg.lr so schedules can vary the rate per epoch
    without touching the config.
    """
    if lr is None:
        lr = cfg.lr
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for (name, p), (gname, g) in zip(params.named_tensors(),
                                     grads.named_tensors()):
        if name != gname or p.shape != g.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {g.shape}, "
                                f"parameter has {p.shape}")
        m = state.moment1[name]
        v = state.moment2[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p -= lr * (m_hat / (np.sqrt(v_hat) + cfg.eps)
                   + cfg.weight_decay * p)
    return params, state


def clip_gradients(grads: ViTParams, max_norm: float) -> float:
    """Scale all gradients so their global norm is at most max_norm.

    Returns the pre-clip norm."""
    total = 0.0
    for _, g in grads.named_tensors():
        total += float(np.sum(g * g))
    norm = float(np.sqrt(total))
    if max_norm > 0.0 and norm > max_norm:
        scale = max_norm / norm
        for _, g in grads.named_tensors():
            g *= scale
    return norm


# ---------------------------------------------------------------------------
# data preparation

def preprocess_recording(rec, vit_cfg: ViTConfig) -> np.ndarray:
    """Recording -> normalized frame sized for the model."""
    grid = build_voxel_grid(rec, vit_cfg.channels)
    grid = resize_pad(grid, vit_cfg.frame_height, vit_cfg.frame_width)
    return normalize_nonzero(grid)


def prepare_dataset(recordings, vit_cfg: ViTConfig) -> list:
    """Preprocess once up front; returns [(frame, label), ...].

    Voxelization and resizing are label-independent and deterministic, so
    they are hoisted out of the epoch loop.
    """
    out = []
    for rec in recordings:
        if rec.label is None:
            raise ValueError("training recordings need labels")
        out.append((preprocess_recording(rec, vit_cfg), int(rec.label)))
    if not out:
        raise EmptyDataset("no recordings to train on")
    return out


# ---------------------------------------------------------------------------
# epochs

@dataclass
class EpochMetrics:
    split: str
    loss: float
    accuracy: float
    mean_active_fraction: float
    mean_macs: float


def _frame_threshold(tcfg: TrainConfig, rng: np.random.Generator) -> float:
    if tcfg.threshold_mode == "mixed":
        return sample_threshold_mixed(rng, tcfg.mixed_low, tcfg.mixed_high)
    return tcfg.threshold


def train_epoch(params: ViTParams, dataset, vit_cfg: ViTConfig,
                tcfg: TrainConfig, state: OptimizerState,
                rng: np.random.Generator,
                lr: float | None = None) -> EpochMetrics:
    """One pass over the dataset, batch size 1, in shuffled order."""
    if not dataset:
        raise EmptyDataset("cannot train on an empty dataset")
    order = rng.permutation(len(dataset))
    losses = []
    correct = 0
    fracs = []
    macs = []
    for idx in order:
        frame, label = dataset[idx]
        if tcfg.augment:
            frame = augment(frame, rng)
        threshold = _frame_threshold(tcfg, rng)
        ps = select_active(frame, threshold, vit_cfg.patch_size)
        loss, logits, grads = loss_and_gradients(ps, label, params, vit_cfg)
        if tcfg.clip_norm > 0.0:
            clip_gradients(grads, tcfg.clip_norm)
        adamw_step(params, grads, state, tcfg, lr=lr)
        losses.append(loss)
        correct += int(np.argmax(logits) == label)
        fracs.append(ps.active_fraction)
        macs.append(model_macs(ps.n, vit_cfg))
    return EpochMetrics("train", float(np.mean(losses)),
                        correct / len(dataset), float(np.mean(fracs)),
                        float(np.mean(macs)))


def evaluate(params: ViTParams, dataset, vit_cfg: ViTConfig,
             threshold: float) -> EpochMetrics:
    """Forward-only pass at a fixed selection threshold."""
    if not dataset:
        raise EmptyDataset("cannot evaluate an empty dataset")
    losses = []
    correct = 0
    fracs = []
    macs = []
    for frame, label in dataset:
        ps = select_active(frame, threshold, vit_cfg.patch_size)
        logits = forward(ps, params, vit_cfg)
        loss, _ = cross_entropy(logits, label)
        losses.append(loss)
        correct += int(np.argmax(logits) == label)
        fracs.append(ps.active_fraction)
        macs.append(model_macs(ps.n, vit_cfg))
    return EpochMetrics("test", float(np.mean(losses)),
                        correct / len(dataset), float(np.mean(fracs)),
                        float(np.mean(macs)))


METRICS_HEADER = ("epoch", "split", "loss", "accuracy",
                  "mean_active_fraction", "mean_macs")


def write_metrics_csv(fh, rows) -> None:
    """rows: iterable of (epoch, EpochMetrics)."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    for epoch, m in rows:
        writer.writerow([epoch, m.split, f"{m.loss:.6f}", f"{m.accuracy:.6f}",
                         f"{m.mean_active_fraction:.6f}", f"{m.mean_macs:.1f}"])


def fit(params: ViTParams, train_set, vit_cfg: ViTConfig, tcfg: TrainConfig,
        eval_set=None, eval_threshold: float | None = None):
    """Run the full schedule; returns [(epoch, EpochMetrics), ...].

    Each epoch gets a child stream spawned from the run seed, so epoch k
    is reproducible regardless of how earlier epochs consumed randomness.
    """
    if eval_threshold is None:
        eval_threshold = tcfg.threshold if tcfg.threshold_mode == "fixed" else 0.0
    state = OptimizerState.for_params(params)
    children = np.random.SeedSequence(tcfg.seed).spawn(max(tcfg.epochs, 1))
    rows = []
    for epoch in range(tcfg.epochs):
        rng = np.random.default_rng(children[epoch])
        rows.append((epoch, train_epoch(params, train_set, vit_cfg, tcfg,
                                        state, rng, lr=tcfg.lr_at(epoch))))
        if eval_set:
            rows.append((epoch, evaluate(params, eval_set, vit_cfg,
                                         eval_threshold)))
    return rows
