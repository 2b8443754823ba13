"""Short-term training loop, evaluation metrics, and checkpoint I/O."""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .config import ModelConfig
from .data import (RoadNetwork, ScalerStats, TimeSeriesPanel, WindowBatch, WindowSet,
                   build_connectivity_graph, extract_windows, fit_scaler,
                   normalized_panel, pearson_correlation_graph, split_panel)
from .model import DFMT

CHECKPOINT_VERSION = 1
MAPE_EPS = 1e-3
GRAD_CLIP_NORM = 5.0
BATCH_SIZE = 32
EARLY_STOP_PATIENCE = 15


class TrainingError(RuntimeError):
    pass


@dataclass
class MetricSet:
    """MAE / RMSE / MAPE, aggregate and per horizon step."""

    mae: float
    rmse: float
    mape: float
    mae_per_step: list[float]
    rmse_per_step: list[float]
    mape_per_step: list[float]

    def to_dict(self) -> dict:
        return {
            "mae": self.mae, "rmse": self.rmse, "mape": self.mape,
            "mae_per_step": self.mae_per_step,
            "rmse_per_step": self.rmse_per_step,
            "mape_per_step": self.mape_per_step,
        }


@dataclass
class TrainReport:
    seed: int
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    best_val_loss: float | None = None
    best_epoch: int | None = None
    checkpoint_path: str | None = None
    wall_clock_seconds: float = 0.0


def compute_metrics(y: np.ndarray, y_hat: np.ndarray) -> MetricSet:
    """Metrics over (..., tau) arrays in original units.

    MAPE excludes targets with |y| < MAPE_EPS, where the division is
    meaningless.
    """
    if y.size == 0:
        raise TrainingError("empty evaluation set")
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    err = y_hat - y
    tau = y.shape[-1]
    flat_err = err.reshape(-1, tau)
    flat_y = y.reshape(-1, tau)
    mae_steps, rmse_steps, mape_steps = [], [], []
    for s in range(tau):
        e, t = flat_err[:, s], flat_y[:, s]
        mae_steps.append(float(np.abs(e).mean()))
        rmse_steps.append(float(np.sqrt((e ** 2).mean())))
        mask = np.abs(t) >= MAPE_EPS
        mape_steps.append(float(100.0 * np.abs(e[mask] / t[mask]).mean()) if mask.any() else 0.0)
    mask = np.abs(y) >= MAPE_EPS
    return MetricSet(
        mae=float(np.abs(err).mean()),
        rmse=float(np.sqrt((err ** 2).mean())),
        mape=float(100.0 * np.abs(err[mask] / y[mask]).mean()) if mask.any() else 0.0,
        mae_per_step=mae_steps,
        rmse_per_step=rmse_steps,
        mape_per_step=mape_steps,
    )


# ---------------------------------------------------------------------------
# Tensor plumbing
# ---------------------------------------------------------------------------

def batch_to_tensors(batch: WindowBatch, dtype=torch.float32):
    x_r = torch.as_tensor(batch.x_r, dtype=dtype)
    x_d = torch.as_tensor(batch.x_d, dtype=dtype)
    x_w = torch.as_tensor(batch.x_w, dtype=dtype)
    t_h = torch.as_tensor(batch.t_h, dtype=torch.long)
    t_p = torch.as_tensor(batch.t_p, dtype=torch.long)
    return x_r, x_d, x_w, t_h, t_p


@torch.no_grad()
def predict(model: DFMT, batch: WindowBatch, scaler: ScalerStats | None = None) -> np.ndarray:
    """Forward a window batch; descale to original units when given a scaler."""
    dtype = next(model.parameters()).dtype
    model.eval()
    out = model(*batch_to_tensors(batch, dtype)).cpu().numpy()
    if scaler is not None:
        out = scaler.denormalize(out, axis=1)
    return out


def evaluate(model: DFMT, windows: WindowSet, scaler: ScalerStats,
             targets_original: np.ndarray | None = None) -> MetricSet:
    """Metrics in original units; targets in the windows are normalized, so
    pass them through the inverse scaler (or supply original-unit targets)."""
    if len(windows) == 0:
        raise TrainingError("empty evaluation set")
    preds = []
    for mb in windows.minibatches(BATCH_SIZE):
        preds.append(predict(model, mb, scaler))
    y_hat = np.concatenate(preds, axis=0)
    y = targets_original if targets_original is not None else scaler.denormalize(windows.batch.y, axis=1)
    return compute_metrics(y, y_hat)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class PreparedDataset:
    """Everything the loops need, derived once from a raw network + panel."""

    network: RoadNetwork
    panel: TimeSeriesPanel
    scaler: ScalerStats
    norm_panel: TimeSeriesPanel
    a_r: np.ndarray
    a_c: np.ndarray
    train_end: int
    val_end: int


def prepare_dataset(network: RoadNetwork, panel: TimeSeriesPanel,
                    train_frac: float = 0.7, val_frac: float = 0.1) -> PreparedDataset:
    train_end, val_end = split_panel(panel, train_frac, val_frac)
    a_r = build_connectivity_graph(network)
    a_c = pearson_correlation_graph(panel.slice(0, train_end))
    scaler = fit_scaler(panel.slice(0, train_end))
    return PreparedDataset(network=network, panel=panel, scaler=scaler,
                           norm_panel=normalized_panel(panel, scaler),
                           a_r=a_r, a_c=a_c, train_end=train_end, val_end=val_end)


def train_short_term(dataset: PreparedDataset, config: ModelConfig, epochs: int,
                     seed: int = 0, max_steps: int | None = None,
                     lr: float | None = None) -> tuple[DFMT, TrainReport]:
    """Minimize L1 error in normalized space with Adam; keep the epoch with
    the best validation MAE. Deterministic under a fixed seed."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    started = time.time()
    model = DFMT(config)
    model.set_graphs(dataset.a_r, dataset.a_c)
    report = TrainReport(seed=seed)

    train_windows = extract_windows(dataset.norm_panel, config, stop=dataset.train_end)
    val_windows = extract_windows(dataset.norm_panel, config,
                                  start=dataset.train_end, stop=dataset.val_end)
    if epochs > 0 and len(train_windows) == 0:
        raise TrainingError("no training windows (insufficient history?)")

    optimizer = torch.optim.Adam(model.parameters(), lr=lr or config.learning_rate)
    best_state = copy.deepcopy(model.state_dict())
    best_val = float("inf")
    bad_epochs = 0
    steps_done = 0
    for epoch in range(epochs):
        model.train()
        losses = []
        for mb in train_windows.minibatches(BATCH_SIZE, shuffle=True, rng=rng):
            if max_steps is not None and steps_done >= max_steps:
                break
            x_r, x_d, x_w, t_h, t_p = batch_to_tensors(mb, next(model.parameters()).dtype)
            y = torch.as_tensor(mb.y, dtype=x_r.dtype)
            loss = torch.mean(torch.abs(model(x_r, x_d, x_w, t_h, t_p) - y))
            if not torch.isfinite(loss):
                raise TrainingError(f"training diverged at epoch {epoch}: loss={loss.item()}")
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), GRAD_CLIP_NORM)
            optimizer.step()
            losses.append(loss.item())
            steps_done += 1
        if not losses:
            break
        report.train_losses.append(float(np.mean(losses)))

        if len(val_windows) > 0:
            val_mae = _normalized_mae(model, val_windows)
        else:
            val_mae = report.train_losses[-1]
        report.val_losses.append(val_mae)
        if val_mae < best_val:
            best_val = val_mae
            report.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= EARLY_STOP_PATIENCE:
                break
        if max_steps is not None and steps_done >= max_steps:
            break

    if report.val_losses:
        model.load_state_dict(best_state)
        report.best_val_loss = best_val
    report.wall_clock_seconds = time.time() - started
    return model, report


@torch.no_grad()
def _normalized_mae(model: DFMT, windows: WindowSet) -> float:
    model.eval()
    dtype = next(model.parameters()).dtype
    total, count = 0.0, 0
    for mb in windows.minibatches(BATCH_SIZE):
        out = model(*batch_to_tensors(mb, dtype))
        y = torch.as_tensor(mb.y, dtype=dtype)
        total += torch.abs(out - y).sum().item()
        count += y.numel()
    return total / count


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path: str, model: DFMT, scaler: ScalerStats,
                    dataset: PreparedDataset | None = None,
                    extra: dict | None = None) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": model.cfg.to_dict(),
        "state_dict": model.state_dict(),
        "scaler_mean": scaler.mean,
        "scaler_std": scaler.std,
    }
    if dataset is not None:
        payload["a_r"] = dataset.a_r
        payload["a_c"] = dataset.a_c
        payload["node_ids"] = list(dataset.network.node_ids)
    if extra:
        payload["extra"] = extra
    torch.save(payload, path)


def load_checkpoint(path: str) -> tuple[DFMT, ScalerStats, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise TrainingError(f"unsupported checkpoint version {payload.get('version')}")
    model = DFMT(ModelConfig.from_dict(payload["config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    scaler = ScalerStats(mean=np.asarray(payload["scaler_mean"]),
                         std=np.asarray(payload["scaler_std"]))
    return model, scaler, payload
