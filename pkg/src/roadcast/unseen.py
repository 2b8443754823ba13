"""Estimating traffic on roads with no history.

A similarity model maps each road's local structure (neighbor counts and
distances) into a 1024-d latent space supervised by traffic correlation.
For a proposed road, the most similar existing roads are selected and a
small forecaster is trained on their windows, with positive-parameter MLPs
squaring the rectangular selected-vs-all graphs so they can be renormalized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .data import RoadNetwork, ScalerStats, TimeSeriesPanel, extract_windows, fit_scaler
from .model import DFMT, normalize_adjacency_torch
from .train import BATCH_SIZE, GRAD_CLIP_NORM, TrainingError, batch_to_tensors

LATENT_DIM = 1024
DEFAULT_TOP_K = 10
N_DIST_BINS = 8
_DIST_BIN_EDGES = np.logspace(-1, 2, N_DIST_BINS + 1)  # 0.1 .. 100 length units
ENCODING_DIM = 2 + 2 * N_DIST_BINS + 6


# ---------------------------------------------------------------------------
# Spatial semantic graphs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpatialSemanticGraph:
    """A node's upstream/downstream neighbors and the distances to them."""

    c_up: tuple
    c_down: tuple
    d_up: tuple
    d_down: tuple

    def __post_init__(self):
        if len(self.c_up) != len(self.d_up) or len(self.c_down) != len(self.d_down):
            raise ValueError("neighbor and distance lists must align")
        if any(d <= 0 for d in self.d_up + self.d_down):
            raise ValueError("distances must be positive")

    @property
    def is_isolated(self) -> bool:
        return not self.c_up and not self.c_down


def spatial_semantic_graph(node, network: RoadNetwork) -> SpatialSemanticGraph:
    """Neighbors of an existing node. Undirected networks duplicate the
    neighbor set into both directions."""
    network.index_of(node)  # validates the id
    ups = []
    for src, dst, dist in network.edges:
        if src == node:
            ups.append((dst, dist))
        elif dst == node:
            ups.append((src, dist))
    neighbors = tuple(n for n, _ in ups)
    dists = tuple(d for _, d in ups)
    return SpatialSemanticGraph(c_up=neighbors, c_down=neighbors, d_up=dists, d_down=dists)


def proposed_semantic_graph(connections: list[tuple]) -> SpatialSemanticGraph:
    """Semantic graph for a not-yet-built road from declared connections
    [(existing_node, distance), ...]."""
    neighbors = tuple(n for n, _ in connections)
    dists = tuple(float(d) for _, d in connections)
    return SpatialSemanticGraph(c_up=neighbors, c_down=neighbors, d_up=dists, d_down=dists)


def encode_semantic_graph(g: SpatialSemanticGraph) -> np.ndarray:
    """Fixed-length encoding: counts, log-spaced distance histograms, and
    mean/min/max distances per direction."""
    def side(dists):
        d = np.asarray(dists, dtype=np.float64)
        if d.size == 0:
            return np.zeros(N_DIST_BINS + 3)
        hist, _ = np.histogram(np.clip(d, _DIST_BIN_EDGES[0], _DIST_BIN_EDGES[-1]),
                               bins=_DIST_BIN_EDGES)
        return np.concatenate([hist.astype(np.float64), [d.mean(), d.min(), d.max()]])
    return np.concatenate([
        [len(g.c_up), len(g.c_down)],
        side(g.d_up),
        side(g.d_down),
    ])


# ---------------------------------------------------------------------------
# Co-semantic similarity model
# ---------------------------------------------------------------------------

class CoSemanticModel(nn.Module):
    """Linear map from semantic-graph encodings to the similarity latent space."""

    def __init__(self, n_top: int = DEFAULT_TOP_K):
        super().__init__()
        self.n_top = n_top
        self.proj = nn.Linear(ENCODING_DIM, LATENT_DIM)

    def embed(self, encodings: torch.Tensor) -> torch.Tensor:
        return self.proj(encodings)

    def embed_graphs(self, graphs: list[SpatialSemanticGraph]) -> torch.Tensor:
        enc = np.stack([encode_semantic_graph(g) for g in graphs])
        return self.embed(torch.as_tensor(enc, dtype=self.proj.weight.dtype))


def _cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    # zero-norm embeddings get similarity 0 instead of NaN
    na, nb = a.norm(dim=-1), b.norm(dim=-1)
    denom = na * nb
    sim = (a * b).sum(dim=-1) / torch.where(denom == 0, torch.ones_like(denom), denom)
    return torch.where(denom == 0, torch.zeros_like(sim), sim)


def cosemantic_similarity(model: CoSemanticModel, target: SpatialSemanticGraph,
                          references: list[SpatialSemanticGraph]) -> np.ndarray:
    """Cosine similarity of latent embeddings, one score per reference."""
    with torch.no_grad():
        emb = model.embed_graphs([target] + list(references))
        sims = _cosine(emb[0:1], emb[1:])
    return sims.cpu().numpy()


def pretrain_cosemantic(references: list[SpatialSemanticGraph], corr: np.ndarray,
                        n_top: int = DEFAULT_TOP_K, epochs: int = 200,
                        lr: float = 1e-3, seed: int = 0) -> CoSemanticModel:
    """Fit latent similarities to the traffic correlation rows.

    The loss is the mean absolute gap between each node's leave-self-out
    similarity vector and its correlation row, plus a term over the top
    ``n_top`` entries comparing squared values to amplify strong
    correlations.
    """
    n_e = len(references)
    if n_e < 2:
        raise TrainingError("need at least 2 reference nodes")
    torch.manual_seed(seed)
    model = CoSemanticModel(n_top=n_top)
    corr_t = torch.as_tensor(corr, dtype=torch.float32)
    enc = torch.as_tensor(np.stack([encode_semantic_graph(g) for g in references]),
                          dtype=torch.float32)
    k = min(n_top, n_e - 1)
    off_diag = ~torch.eye(n_e, dtype=torch.bool)
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    for _ in range(epochs):
        emb = model.embed(enc)
        unit = F.normalize(emb, dim=-1, eps=1e-12)
        sims = unit @ unit.T
        v = sims[off_diag].reshape(n_e, n_e - 1)
        c = corr_t[off_diag].reshape(n_e, n_e - 1)
        base = torch.abs(v - c).mean()
        top_v = torch.topk(v, k, dim=1).values
        top_c = torch.topk(c, k, dim=1).values
        amp = torch.abs(top_v ** 2 - top_c ** 2).mean()
        loss = base + amp
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    model.eval()
    return model


def cosemantic_pretrain_loss(model: CoSemanticModel, references: list[SpatialSemanticGraph],
                             corr: np.ndarray) -> float:
    """Current value of the pre-training objective (for descent checks)."""
    n_e = len(references)
    with torch.no_grad():
        emb = model.embed_graphs(references)
        unit = F.normalize(emb, dim=-1, eps=1e-12)
        sims = unit @ unit.T
        off_diag = ~torch.eye(n_e, dtype=torch.bool)
        v = sims[off_diag].reshape(n_e, n_e - 1)
        c = torch.as_tensor(corr, dtype=sims.dtype)[off_diag].reshape(n_e, n_e - 1)
        k = min(model.n_top, n_e - 1)
        base = torch.abs(v - c).mean()
        amp = torch.abs(torch.topk(v, k, 1).values ** 2 - torch.topk(c, k, 1).values ** 2).mean()
    return float(base + amp)


def select_top_k(scores: np.ndarray, k: int) -> list[int]:
    """Indices of the k highest scores; ties broken by lower index."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return order[:k]


# ---------------------------------------------------------------------------
# Positive square mapping
# ---------------------------------------------------------------------------

class PositiveSquareMapper(nn.Module):
    """MLP mapping a rectangular k x N_e graph to a strictly positive k x k
    matrix. Weights and biases are stored unconstrained and exponentiated on
    use, so they stay positive through any gradient update."""

    def __init__(self, n_existing: int, k: int, hidden: int = 64):
        super().__init__()
        self.w1 = nn.Parameter(torch.randn(n_existing, hidden) * 0.1 - 3.0)
        self.b1 = nn.Parameter(torch.full((hidden,), -3.0))
        self.w2 = nn.Parameter(torch.randn(hidden, k) * 0.1 - 3.0)
        self.b2 = nn.Parameter(torch.full((k,), -3.0))

    def positive_parameters(self) -> list[torch.Tensor]:
        return [p.exp() for p in (self.w1, self.b1, self.w2, self.b2)]

    def forward(self, rect: torch.Tensor) -> torch.Tensor:
        w1, b1, w2, b2 = self.positive_parameters()
        h = rect @ w1 + b1
        return h @ w2 + b2


# ---------------------------------------------------------------------------
# Estimation
# ---------------------------------------------------------------------------

@dataclass
class UnseenEstimate:
    estimated_series: np.ndarray      # original units, test-range targets
    selected_nodes: list              # node ids of the top-k existing roads
    similarities: np.ndarray          # per-existing-node scores
    estimator: "UnseenEstimator"
    scaler: ScalerStats


class UnseenEstimator(nn.Module):
    """Forecaster over the selected nodes with a readout to the unseen road.

    The rectangular connectivity/correlation rows are mapped to positive
    square matrices, renormalized, and fed to the forecaster; a linear
    readout collapses the k node forecasts into the unseen road's series.
    """

    def __init__(self, cfg: ModelConfig, n_existing: int, rect_r: np.ndarray,
                 rect_c: np.ndarray):
        super().__init__()
        k = cfg.n_nodes
        self.dfmt = DFMT(cfg)
        self.map_r = PositiveSquareMapper(n_existing, k)
        self.map_c = PositiveSquareMapper(n_existing, k)
        self.readout = nn.Linear(k, 1)
        self.register_buffer("rect_r", torch.as_tensor(rect_r, dtype=torch.float32))
        self.register_buffer("rect_c", torch.as_tensor(rect_c, dtype=torch.float32))

    def square_graphs(self) -> tuple[torch.Tensor, torch.Tensor]:
        sq_r = self.map_r(self.rect_r)
        sq_c = self.map_c(self.rect_c)
        return sq_r, sq_c

    def forward(self, x_r, x_d, x_w, t_h, t_p) -> torch.Tensor:
        sq_r, sq_c = self.square_graphs()
        out = self.dfmt(x_r, x_d, x_w, t_h, t_p,
                        a_hat_r=normalize_adjacency_torch(sq_r),
                        a_hat_c=normalize_adjacency_torch(sq_c))
        return self.readout(out.transpose(1, 2)).squeeze(-1)  # B, tau


def estimate_unseen_road(cosemantic: CoSemanticModel, config: ModelConfig,
                         network: RoadNetwork, panel: TimeSeriesPanel,
                         connections: list[tuple], a_r: np.ndarray, a_c: np.ndarray,
                         target_series: np.ndarray | None = None,
                         k: int = DEFAULT_TOP_K, epochs: int = 50, lr: float = 1e-3,
                         seed: int = 0, train_frac: float = 0.7) -> UnseenEstimate:
    """Train an estimator for a proposed road attached at ``connections``.

    ``target_series`` (the road's real history) supervises the readout when
    available; without it a similarity-weighted blend of the selected roads
    stands in, so what-if queries stay answerable.
    """
    if not connections:
        raise TrainingError("unseen node needs at least one declared connection")
    n_e = network.n_nodes
    if k > n_e:
        raise TrainingError(f"k={k} exceeds {n_e} existing nodes")
    torch.manual_seed(seed)

    target_graph = proposed_semantic_graph(connections)
    references = [spatial_semantic_graph(nid, network) for nid in network.node_ids]
    sims = cosemantic_similarity(cosemantic, target_graph, references)
    selected = select_top_k(sims, k)
    selected_ids = [network.node_ids[i] for i in selected]

    rect_r = a_r[selected, :]
    rect_c = a_c[selected, :]

    sub_panel = TimeSeriesPanel(values=panel.values[selected], slice_minutes=panel.slice_minutes,
                                q=panel.q, start_timestamp=panel.start_timestamp)
    if target_series is None:
        w = torch.softmax(torch.as_tensor(sims[selected]), dim=0).numpy()
        target_series = (w[:, None] * panel.values[selected]).sum(axis=0)
    target_series = np.asarray(target_series, dtype=np.float64)
    if target_series.shape[0] != panel.n_steps:
        raise TrainingError("target series length must match the panel")

    train_end = int(panel.n_steps * train_frac)
    scaler = fit_scaler(sub_panel.slice(0, train_end))
    t_mean = target_series[:train_end].mean()
    t_std = target_series[:train_end].std() or 1.0

    cfg = ModelConfig(**{**config.to_dict(), "n_nodes": k})
    norm_sub = TimeSeriesPanel(values=scaler.normalize(sub_panel.values, axis=0),
                               slice_minutes=panel.slice_minutes, q=panel.q,
                               start_timestamp=panel.start_timestamp)
    norm_target = (target_series - t_mean) / t_std

    windows = extract_windows(norm_sub, cfg, stop=train_end)
    if len(windows) == 0:
        raise TrainingError("no training windows for estimation")
    estimator = UnseenEstimator(cfg, n_e, rect_r, rect_c)
    optimizer = torch.optim.Adam(estimator.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    dtype = torch.float32
    for _ in range(epochs):
        estimator.train()
        for mb in windows.minibatches(BATCH_SIZE, shuffle=True, rng=rng):
            tensors = batch_to_tensors(mb, dtype)
            y = torch.as_tensor(
                np.stack([norm_target[t:t + cfg.horizon] for t in mb.t_i]), dtype=dtype)
            loss = torch.mean(torch.abs(estimator(*tensors) - y))
            if not torch.isfinite(loss):
                raise TrainingError("estimation training diverged")
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(estimator.parameters(), GRAD_CLIP_NORM)
            optimizer.step()
    estimator.eval()

    test_windows = extract_windows(norm_sub, cfg, start=train_end)
    outs = []
    with torch.no_grad():
        for mb in test_windows.minibatches(BATCH_SIZE):
            outs.append(estimator(*batch_to_tensors(mb, dtype)).cpu().numpy())
    est_norm = np.concatenate(outs, axis=0) if outs else np.zeros((0, cfg.horizon))
    estimated = est_norm * t_std + t_mean
    return UnseenEstimate(estimated_series=estimated, selected_nodes=selected_ids,
                          similarities=sims, estimator=estimator, scaler=scaler)
