import numpy as np
import pytest
from datetime import datetime

from roadcast.config import ModelConfig
from roadcast.data import RoadNetwork, TimeSeriesPanel


MONDAY = datetime(2018, 7, 2)  # anchors day-of-week codes at 0


def make_panel(values, q=24, slice_minutes=60, start=MONDAY):
    return TimeSeriesPanel(values=np.asarray(values, dtype=np.float64),
                           slice_minutes=slice_minutes, q=q, start_timestamp=start)


def sinusoid_panel(n_nodes, days, q=24, amplitude=30.0, offset=100.0, noise=0.0, seed=0,
                   phases=None):
    rng = np.random.default_rng(seed)
    t = days * q
    xs = np.arange(t)
    phases = phases if phases is not None else np.zeros(n_nodes)
    vals = offset + amplitude * np.sin(2 * np.pi * xs[None, :] / q + np.asarray(phases)[:, None])
    if noise:
        vals = vals + rng.normal(0, noise, vals.shape)
    return make_panel(vals, q=q)


def line_network(n_nodes):
    ids = tuple(str(i) for i in range(n_nodes))
    edges = tuple((str(i), str(i + 1), 1.0) for i in range(n_nodes - 1))
    return RoadNetwork(node_ids=ids, edges=edges)


def tiny_config(n_nodes=4, q=24, **overrides):
    base = dict(n_nodes=n_nodes, t_r=4, t_d=2, t_w=1, horizon=4, embed_size=8, n_blocks=1,
                heads_fusion_rd=2, heads_fusion_rw=2, heads_spatial=2, heads_temporal=2, q=q)
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
