"""Autoregressive long-horizon rollout and the fine-tuning pass behind it.

Each stage feeds the previous stage's full ``horizon``-step prediction back
in as the next recent window, so the predicted series grows by ``horizon``
steps per stage. Daily and weekly windows are looked up in the combined
(real history + predicted) buffer once their offsets land past real data.
"""

from __future__ import annotations

import copy

import numpy as np
import torch

from .config import ModelConfig
from .data import ScalerStats, TimeSeriesPanel, window_indices
from .train import GRAD_CLIP_NORM, PreparedDataset, TrainingError, batch_to_tensors
from .model import DFMT


def _require_rollout_config(cfg: ModelConfig) -> None:
    if cfg.horizon != cfg.t_r:
        raise TrainingError("rollout requires horizon == t_r so stage outputs can re-enter as inputs")


def _stage_inputs(combined: np.ndarray, panel: TimeSeriesPanel, cfg: ModelConfig, t_i: int,
                  dtype) -> tuple:
    recent, daily, weekly = window_indices(t_i, cfg.t_r, cfg.t_d, cfg.t_w, cfg.q)
    x_r = torch.as_tensor(combined[None, :, recent], dtype=dtype)
    x_d = torch.as_tensor(combined[None, :, daily], dtype=dtype)
    x_w = torch.as_tensor(combined[None, :, weekly], dtype=dtype)
    t_h = torch.as_tensor(panel.step_codes(recent)[None], dtype=torch.long)
    t_p = torch.as_tensor(panel.step_codes(t_i + np.arange(cfg.horizon))[None], dtype=torch.long)
    return x_r, x_d, x_w, t_h, t_p


@torch.no_grad()
def autoregressive_rollout(model: DFMT, panel: TimeSeriesPanel, scaler: ScalerStats,
                           start: int, n_stages: int) -> np.ndarray:
    """Roll the frozen model forward ``n_stages`` stages from absolute step
    ``start``; returns the predicted series (N x n_stages*horizon) in
    original units. Temporal codes advance with wall-clock and are cyclic."""
    cfg = model.cfg
    _require_rollout_config(cfg)
    if start < 7 * cfg.t_w * cfg.q:
        raise TrainingError("not enough history before rollout start")
    if start > panel.n_steps:
        raise TrainingError("rollout start beyond panel end")
    model.eval()
    dtype = next(model.parameters()).dtype
    tau = cfg.horizon
    norm = scaler.normalize(panel.values[:, :start], axis=0)
    combined = np.concatenate([norm, np.zeros((panel.n_nodes, n_stages * tau))], axis=1)
    for i in range(n_stages):
        t_i = start + i * tau
        out = model(*_stage_inputs(combined, panel, cfg, t_i, dtype))
        combined[:, t_i:t_i + tau] = out[0].cpu().numpy()
    return scaler.denormalize(combined[:, start:], axis=0)


def finetune_long_term(model: DFMT, dataset: PreparedDataset, start: int, length: int,
                       epochs: int = 10, lr: float = 1e-4, seed: int = 0) -> DFMT:
    """Fine-tune a short-term-trained model against its own rollout over a
    chosen segment of real data.

    The segment's first ``t_r`` steps seed the rollout; remaining L_g =
    length - t_r steps are the L1 targets. Gradients are truncated at stage
    boundaries (each stage's input is detached). Daily/weekly windows come
    from real history here; deployment rollout reads them from predictions.
    """
    cfg = model.cfg
    _require_rollout_config(cfg)
    tau = cfg.horizon
    if length < tau + 1:
        raise TrainingError(f"segment must be longer than {tau} steps")
    if start < 7 * cfg.t_w * cfg.q or start + length > dataset.panel.n_steps:
        raise TrainingError("segment out of range")
    l_g = length - tau
    n_stages = (l_g + tau - 1) // tau
    torch.manual_seed(seed)
    model = copy.deepcopy(model)
    dtype = next(model.parameters()).dtype
    panel = dataset.norm_panel
    target = torch.as_tensor(panel.values[:, start + tau: start + tau + l_g], dtype=dtype)
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    for _ in range(epochs):
        model.train()
        prev_out: torch.Tensor | None = None
        preds = []
        for i in range(n_stages):
            t_i = start + tau + i * tau
            x_r, x_d, x_w, t_h, t_p = _stage_inputs(panel.values, panel, cfg, t_i, dtype)
            if prev_out is not None:
                x_r = prev_out.detach()
            out = model(x_r, x_d, x_w, t_h, t_p)
            prev_out = out
            preds.append(out[0])
        pred_series = torch.cat(preds, dim=1)[:, :l_g]
        loss = torch.mean(torch.abs(pred_series - target))
        if not torch.isfinite(loss):
            raise TrainingError("fine-tuning diverged")
        optimizer.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), GRAD_CLIP_NORM)
        optimizer.step()
    model.eval()
    return model
