"""Road networks, traffic panels, graphs, multi-scale windows, and scaling.

Everything here is pure numpy over immutable inputs; functions are safe to
call from multiple threads.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np


class DataError(ValueError):
    """Raised for invalid networks, panels, or file contents."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RoadNetwork:
    """Road graph: one node per road, edges carry positive distances."""

    node_ids: tuple
    edges: tuple  # of (src, dst, distance)

    def __post_init__(self):
        if len(set(self.node_ids)) != len(self.node_ids):
            raise DataError("duplicate node ids")
        known = set(self.node_ids)
        for src, dst, dist in self.edges:
            if src not in known or dst not in known:
                raise DataError(f"edge ({src}, {dst}) references unknown node")
            if src == dst:
                raise DataError(f"self-loop edge at {src}")
            if not dist > 0:
                raise DataError(f"non-positive distance on edge ({src}, {dst})")

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    def index_of(self, node_id) -> int:
        try:
            return self.node_ids.index(node_id)
        except ValueError:
            raise DataError(f"unknown node id {node_id!r}") from None


@dataclass
class TimeSeriesPanel:
    """N x T traffic values plus sampling metadata.

    ``q`` is the number of samples per day; ``slice_minutes`` the sampling
    interval. ``start_timestamp`` anchors time-of-day / day-of-week codes.
    """

    values: np.ndarray
    slice_minutes: int
    q: int
    start_timestamp: datetime
    zero_variance_nodes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError("panel values must be 2-D (nodes x time)")
        if 1440 % (self.q * self.slice_minutes) != 0:
            raise DataError("q * slice_minutes must divide a day")
        if np.isnan(self.values).any():
            raise DataError("panel contains NaN after imputation")
        flat = self.values.std(axis=1) == 0
        self.zero_variance_nodes = tuple(np.nonzero(flat)[0].tolist())

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]

    def step_codes(self, steps: np.ndarray) -> np.ndarray:
        """(time-of-day, day-of-week) integer codes for absolute step indices."""
        steps = np.asarray(steps, dtype=np.int64)
        start_min = self.start_timestamp.hour * 60 + self.start_timestamp.minute
        start_tod = start_min // self.slice_minutes
        start_dow = self.start_timestamp.weekday()
        tod = (start_tod + steps) % self.q
        days = (start_tod + steps) // self.q
        dow = (start_dow + days) % 7
        return np.stack([tod, dow], axis=-1)

    def slice(self, start: int, stop: int) -> "TimeSeriesPanel":
        return TimeSeriesPanel(
            values=self.values[:, start:stop],
            slice_minutes=self.slice_minutes,
            q=self.q,
            start_timestamp=self.start_timestamp + timedelta(minutes=start * self.slice_minutes),
        )


@dataclass
class WindowBatch:
    """Aligned multi-scale input windows, targets, and temporal codes.

    ``x_d`` step k holds the value at t_i - (T_d - k) * q and ``x_w`` step k
    the value at t_i - 7 * (T_w - k) * q; ``y`` starts at t_i.
    """

    x_r: np.ndarray  # B x N x T_r
    x_d: np.ndarray  # B x N x T_d
    x_w: np.ndarray  # B x N x T_w
    y: np.ndarray    # B x N x tau
    t_h: np.ndarray  # B x T_r x 2 (time-of-day, day-of-week)
    t_p: np.ndarray  # B x tau x 2
    t_i: np.ndarray  # B absolute anchor steps

    def __len__(self) -> int:
        return self.x_r.shape[0]


@dataclass(frozen=True)
class ScalerStats:
    """Per-node z-score statistics fitted on the training split."""

    mean: np.ndarray
    std: np.ndarray

    def normalize(self, values: np.ndarray, axis: int = 0) -> np.ndarray:
        shape = [1] * values.ndim
        shape[axis] = -1
        return (values - self.mean.reshape(shape)) / self.std.reshape(shape)

    def denormalize(self, values: np.ndarray, axis: int = 0) -> np.ndarray:
        shape = [1] * values.ndim
        shape[axis] = -1
        return values * self.std.reshape(shape) + self.mean.reshape(shape)


# ---------------------------------------------------------------------------
# Graph construction
# ---------------------------------------------------------------------------

def build_connectivity_graph(network: RoadNetwork) -> np.ndarray:
    """Symmetric binary adjacency with zero diagonal."""
    n = network.n_nodes
    a_r = np.zeros((n, n), dtype=np.float64)
    for src, dst, _ in network.edges:
        i, j = network.index_of(src), network.index_of(dst)
        a_r[i, j] = a_r[j, i] = 1.0
    return a_r


def pearson_correlation_graph(train_panel: TimeSeriesPanel) -> np.ndarray:
    """Pairwise Pearson correlation over the training samples.

    Zero-variance nodes get correlation 0 against every other node; the
    diagonal is forced to 1.
    """
    values = train_panel.values
    if values.shape[1] < 2:
        raise DataError("need at least 2 samples for correlation")
    centered = values - values.mean(axis=1, keepdims=True)
    norms = np.sqrt((centered ** 2).sum(axis=1))
    safe = np.where(norms == 0, 1.0, norms)
    unit = centered / safe[:, None]
    a_c = unit @ unit.T
    flat = norms == 0
    a_c[flat, :] = 0.0
    a_c[:, flat] = 0.0
    np.fill_diagonal(a_c, 1.0)
    a_c = np.clip(a_c, -1.0, 1.0)
    # enforce exact symmetry against float noise
    return (a_c + a_c.T) / 2.0


# ---------------------------------------------------------------------------
# Windows
# ---------------------------------------------------------------------------

@dataclass
class WindowSet:
    """Materialized windows over a panel range plus a skipped-anchor count."""

    batch: WindowBatch
    skipped: int

    def __len__(self) -> int:
        return len(self.batch)

    def minibatches(self, batch_size: int, shuffle: bool = False, rng: np.random.Generator | None = None):
        """Deterministic-order minibatch views (shuffled when asked)."""
        n = len(self.batch)
        order = np.arange(n)
        if shuffle:
            (rng or np.random.default_rng(0)).shuffle(order)
        b = self.batch
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            yield WindowBatch(b.x_r[idx], b.x_d[idx], b.x_w[idx], b.y[idx],
                              b.t_h[idx], b.t_p[idx], b.t_i[idx])


def window_indices(t_i: int, t_r: int, t_d: int, t_w: int, q: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Absolute step indices of the recent, daily, and weekly windows."""
    recent = t_i - t_r + np.arange(t_r)
    daily = t_i - (t_d - np.arange(t_d)) * q
    weekly = t_i - 7 * (t_w - np.arange(t_w)) * q
    return recent, daily, weekly


def extract_windows(panel: TimeSeriesPanel, config, start: int | None = None,
                    stop: int | None = None) -> WindowSet:
    """Cut every valid anchor t_i in [start, stop) into aligned windows.

    Anchors without enough history (t_i < 7 * T_w * q) or future (t_i + tau > T)
    are counted as skipped, never silently dropped.
    """
    t_r, t_d, t_w, tau, q = config.t_r, config.t_d, config.t_w, config.horizon, config.q
    lo = 0 if start is None else start
    hi = panel.n_steps if stop is None else stop
    min_t = max(t_r, 7 * t_w * q)
    xs_r, xs_d, xs_w, ys, ths, tps, tis = [], [], [], [], [], [], []
    skipped = 0
    for t_i in range(lo, hi):
        if t_i < min_t or t_i + tau > panel.n_steps:
            skipped += 1
            continue
        recent, daily, weekly = window_indices(t_i, t_r, t_d, t_w, q)
        target = t_i + np.arange(tau)
        xs_r.append(panel.values[:, recent])
        xs_d.append(panel.values[:, daily])
        xs_w.append(panel.values[:, weekly])
        ys.append(panel.values[:, target])
        ths.append(panel.step_codes(recent))
        tps.append(panel.step_codes(target))
        tis.append(t_i)
    if xs_r:
        batch = WindowBatch(np.stack(xs_r), np.stack(xs_d), np.stack(xs_w), np.stack(ys),
                            np.stack(ths), np.stack(tps), np.asarray(tis, dtype=np.int64))
    else:
        n = panel.n_nodes
        batch = WindowBatch(np.zeros((0, n, t_r)), np.zeros((0, n, t_d)), np.zeros((0, n, t_w)),
                            np.zeros((0, n, tau)), np.zeros((0, t_r, 2), dtype=np.int64),
                            np.zeros((0, tau, 2), dtype=np.int64), np.zeros((0,), dtype=np.int64))
    return WindowSet(batch=batch, skipped=skipped)


def input_window(panel: TimeSeriesPanel, config, t_i: int | None = None) -> WindowBatch:
    """Single input-only window anchored at t_i (default: just past the panel
    end), with zero targets; used for serving forecasts of unseen steps."""
    t_r, t_d, t_w, tau, q = config.t_r, config.t_d, config.t_w, config.horizon, config.q
    if t_i is None:
        t_i = panel.n_steps
    if t_i < max(t_r, 7 * t_w * q) or t_i > panel.n_steps:
        raise DataError(f"anchor {t_i} out of range for input window")
    recent, daily, weekly = window_indices(t_i, t_r, t_d, t_w, q)
    target = t_i + np.arange(tau)
    n = panel.n_nodes
    return WindowBatch(
        x_r=panel.values[None, :, recent], x_d=panel.values[None, :, daily],
        x_w=panel.values[None, :, weekly], y=np.zeros((1, n, tau)),
        t_h=panel.step_codes(recent)[None], t_p=panel.step_codes(target)[None],
        t_i=np.asarray([t_i], dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# Scaling and splits
# ---------------------------------------------------------------------------

def fit_scaler(train_panel: TimeSeriesPanel) -> ScalerStats:
    """Per-node mean/std; zero-variance nodes get std forced to 1."""
    if train_panel.n_steps == 0:
        raise DataError("cannot fit scaler on empty training split")
    mean = train_panel.values.mean(axis=1)
    std = train_panel.values.std(axis=1)
    std = np.where(std == 0, 1.0, std)
    return ScalerStats(mean=mean, std=std)


def split_panel(panel: TimeSeriesPanel, train_frac: float = 0.7,
                val_frac: float = 0.1) -> tuple[int, int]:
    """Contiguous train/val/test split boundaries (train end, val end)."""
    t = panel.n_steps
    train_end = int(t * train_frac)
    val_end = int(t * (train_frac + val_frac))
    return train_end, val_end


def normalized_panel(panel: TimeSeriesPanel, scaler: ScalerStats) -> TimeSeriesPanel:
    return TimeSeriesPanel(
        values=scaler.normalize(panel.values, axis=0),
        slice_minutes=panel.slice_minutes,
        q=panel.q,
        start_timestamp=panel.start_timestamp,
    )


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def impute_linear(values: np.ndarray) -> np.ndarray:
    """Per-node linear interpolation over NaN gaps; edges extend nearest value."""
    out = np.array(values, dtype=np.float64)
    t = out.shape[1]
    xs = np.arange(t)
    for i in range(out.shape[0]):
        row = out[i]
        bad = np.isnan(row)
        if not bad.any():
            continue
        if bad.all():
            raise DataError(f"node {i} has no observed values")
        out[i, bad] = np.interp(xs[bad], xs[~bad], row[~bad])
    return out


def load_network_csv(path: str) -> RoadNetwork:
    """Edge list CSV with columns src,dst,distance (header optional)."""
    edges = []
    nodes: dict = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        for row in reader:
            if not row or row[0].strip().lower() in ("src", "from", "source"):
                continue
            if len(row) < 3:
                raise DataError(f"bad edge row: {row}")
            src, dst, dist = row[0].strip(), row[1].strip(), float(row[2])
            edges.append((src, dst, dist))
            nodes.setdefault(src, None)
            nodes.setdefault(dst, None)
    return RoadNetwork(node_ids=tuple(nodes), edges=tuple(edges))


def _read_series_csv(path: str) -> tuple[list, np.ndarray]:
    node_ids, rows = [], []
    with open(path, newline="") as f:
        for row in csv.reader(f):
            if not row:
                continue
            node_ids.append(row[0].strip())
            rows.append([float(v) if v.strip() not in ("", "nan", "NaN") else np.nan for v in row[1:]])
    lengths = {len(r) for r in rows}
    if len(lengths) != 1:
        raise DataError("series rows have unequal lengths")
    return node_ids, np.asarray(rows, dtype=np.float64)


def _read_series_npz(path: str) -> tuple[list, np.ndarray]:
    with np.load(path, allow_pickle=False) as z:
        values = np.asarray(z["values"], dtype=np.float64)
        node_ids = [str(x) for x in z["node_ids"]] if "node_ids" in z else [str(i) for i in range(values.shape[0])]
    return node_ids, values


def load_dataset(network_path: str, series_path: str, fmt: str = "csv", *,
                 slice_minutes: int = 5, q: int = 288,
                 start_timestamp: datetime | None = None) -> tuple[RoadNetwork, TimeSeriesPanel]:
    """Load and validate a network plus its traffic panel.

    Missing values are imputed by per-node linear interpolation. Series rows
    must align with the network's node set.
    """
    for p in (network_path, series_path):
        if not os.path.exists(p):
            raise DataError(f"file not found: {p}")
    network = load_network_csv(network_path)
    if fmt == "csv":
        node_ids, raw = _read_series_csv(series_path)
    elif fmt in ("npz", "binary"):
        node_ids, raw = _read_series_npz(series_path)
    else:
        raise DataError(f"unknown format {fmt!r}")
    if len(node_ids) != network.n_nodes:
        raise DataError(f"series has {len(node_ids)} rows but network has {network.n_nodes} nodes")
    if set(node_ids) != set(network.node_ids):
        raise DataError("series node ids do not match network node ids")
    # reorder series rows to the network's node order
    order = [node_ids.index(nid) for nid in network.node_ids]
    values = impute_linear(raw[order])
    panel = TimeSeriesPanel(
        values=values,
        slice_minutes=slice_minutes,
        q=q,
        start_timestamp=start_timestamp or datetime(2018, 7, 2),  # a Monday
    )
    return network, panel


def load_manifest(manifest_path: str) -> tuple[RoadNetwork, TimeSeriesPanel, dict]:
    """Dataset manifest JSON: paths plus sampling metadata."""
    with open(manifest_path) as f:
        manifest = json.load(f)
    base = os.path.dirname(os.path.abspath(manifest_path))
    network_path = os.path.join(base, manifest["network"])
    series_path = os.path.join(base, manifest["series"])
    fmt = manifest.get("format", "npz" if series_path.endswith(".npz") else "csv")
    start = manifest.get("start_timestamp")
    network, panel = load_dataset(
        network_path, series_path, fmt,
        slice_minutes=int(manifest["slice_minutes"]),
        q=int(manifest["q"]),
        start_timestamp=datetime.fromisoformat(start) if start else None,
    )
    return network, panel, manifest
