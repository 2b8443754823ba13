"""End-to-end acceptance checks. Each test prints one PASS/FAIL line."""
import itertools
import json
import time

import numpy as np
import pytest
import torch
from fastapi.testclient import TestClient

from roadcast.agents import ReplayLLMClient, default_thresholds, parse_demand_fallback
from roadcast.config import ModelConfig
from roadcast.data import RoadNetwork, extract_windows, pearson_correlation_graph
from roadcast.longterm import autoregressive_rollout, finetune_long_term
from roadcast.model import fuse_graphs, fusion_weights, normalize_adjacency
from roadcast.service.app import ServiceState, create_app
from roadcast.train import (compute_metrics, evaluate, prepare_dataset,
                            train_short_term)
from roadcast.unseen import (cosemantic_similarity, estimate_unseen_road,
                             pretrain_cosemantic, proposed_semantic_graph,
                             select_top_k, spatial_semantic_graph)
from conftest import line_network, make_panel, sinusoid_panel
from test_agents import brute_force_best
from test_data import naive_pearson


def report(name: str, ok: bool, detail: str):
    print(f"\nACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{name}: {detail}"


def overfit_config(n_nodes=8):
    return ModelConfig(n_nodes=n_nodes, t_r=12, t_d=2, t_w=1, horizon=12,
                       embed_size=16, n_blocks=2, heads_fusion_rd=2, heads_fusion_rw=2,
                       heads_spatial=4, heads_temporal=4, q=24)


@pytest.fixture(scope="module")
def periodic_fixture():
    """Noise-free daily sinusoid, 8 roads, 21 days hourly, trained 300 steps."""
    panel = sinusoid_panel(n_nodes=8, days=21, noise=0.0, seed=0,
                           phases=np.linspace(0, 2 * np.pi, 8, endpoint=False))
    dataset = prepare_dataset(line_network(8), panel)
    model, _ = train_short_term(dataset, overfit_config(), epochs=200,
                                max_steps=300, seed=0, lr=1e-2)
    return panel, dataset, model


def test_correlation_graph_matches_textbook_formula(rng):
    started = time.monotonic()
    worst = 0.0
    for _ in range(20):
        series = rng.normal(0, 1, (6, 200)) + rng.normal(0, 2, (6, 1))
        got = pearson_correlation_graph(make_panel(series, q=20, slice_minutes=1))
        n = series.shape[0]
        expected = np.array([[naive_pearson(series[i], series[j])
                              for j in range(n)] for i in range(n)])
        worst = max(worst, np.abs(got - expected).max())
    elapsed = time.monotonic() - started
    report("correlation-oracle", worst < 1e-9 and elapsed < 1.0,
           f"max |Δ|={worst:.2e}, {elapsed:.2f}s")


def test_adjacency_normalization_oracle_and_spectrum(rng):
    started = time.monotonic()
    worst_delta, worst_radius = 0.0, 0.0
    for _ in range(50):
        n = int(rng.integers(2, 11))
        a = rng.random((n, n)) * (rng.random((n, n)) < 0.5)
        a = (a + a.T) / 2
        np.fill_diagonal(a, 0)
        got = normalize_adjacency(a)
        a_tilde = a + np.eye(n)
        d_inv_sqrt = np.diag(1.0 / np.sqrt(a_tilde.sum(axis=1)))
        expected = d_inv_sqrt @ a_tilde @ d_inv_sqrt
        worst_delta = max(worst_delta, np.abs(got - expected).max())
        worst_radius = max(worst_radius, np.abs(np.linalg.eigvals(got)).max())
    elapsed = time.monotonic() - started
    report("adjacency-normalization",
           worst_delta < 1e-12 and worst_radius <= 1 + 1e-6 and elapsed < 5.0,
           f"max |Δ|={worst_delta:.2e}, max radius={worst_radius:.8f}, {elapsed:.2f}s")


def test_graph_fusion_weights_and_convexity(rng):
    torch.manual_seed(0)
    ok = True
    for _ in range(100):
        a1 = torch.rand(4, 4, dtype=torch.float64)
        a2 = torch.rand(4, 4, dtype=torch.float64)
        w_r, w_c = (torch.tensor(v) for v in rng.normal(0, 3, 2))
        p_r, p_c = fusion_weights(w_r, w_c)
        ok &= float(p_r + p_c) == 1.0
        fused = fuse_graphs(a1, a2, w_r, w_c)
        lo, hi = torch.minimum(a1, a2), torch.maximum(a1, a2)
        ok &= bool(((fused >= lo - 1e-12) & (fused <= hi + 1e-12)).all())
    report("graph-fusion", ok, "w'_r + w'_c = 1 and fused ∈ [min, max] on 100 trials")


def test_gradients_match_finite_differences():
    from test_gradients import test_autograd_matches_finite_differences
    started = time.monotonic()
    test_autograd_matches_finite_differences()
    elapsed = time.monotonic() - started
    report("gradient-check", elapsed < 120.0,
           f"all sampled parameter gradients, rel err < 1e-4, {elapsed:.1f}s")


def test_model_overfits_periodic_signal(periodic_fixture):
    started = time.monotonic()
    panel, dataset, model = periodic_fixture
    cfg = model.cfg
    train_windows = extract_windows(dataset.norm_panel, cfg, stop=dataset.train_end)
    metrics = evaluate(model, train_windows, dataset.scaler)
    amplitude = 30.0
    elapsed = time.monotonic() - started
    ok = metrics.mae < 0.02 * amplitude and elapsed < 300
    report("overfit-fixture", ok,
           f"train MAE={metrics.mae:.3f} vs limit {0.02 * amplitude:.2f}, {elapsed:.1f}s")


def test_long_rollout_error_does_not_explode(periodic_fixture):
    started = time.monotonic()
    panel, dataset, model = periodic_fixture
    start = panel.n_steps - 300
    tuned = finetune_long_term(model, dataset, start=start - 12,
                               length=panel.n_steps - start + 12,
                               epochs=15, lr=1e-4, seed=0)
    rolled = autoregressive_rollout(tuned, panel, dataset.scaler, start, n_stages=25)
    truth = panel.values[:, start:start + 300]
    mae_first = np.abs(rolled[:, :12] - truth[:, :12]).mean()
    mae_last = np.abs(rolled[:, 288:300] - truth[:, 288:300]).mean()
    elapsed = time.monotonic() - started
    ok = mae_last <= 1.5 * mae_first and elapsed < 300
    report("long-term-stability", ok,
           f"MAE steps 289-300 = {mae_last:.3f} ≤ 1.5 × {mae_first:.3f} (steps 1-12), {elapsed:.1f}s")


def test_cosemantic_selection_recovers_planted_clusters(rng):
    started = time.monotonic()
    # two structurally distinct families; the held-out node belongs to the first
    def dense_graph():
        return proposed_semantic_graph(
            [(f"d{j}", float(rng.uniform(0.5, 2.0))) for j in range(5)])

    def sparse_graph():
        return proposed_semantic_graph([("s", float(rng.uniform(30, 90)))])

    refs = [dense_graph() for _ in range(12)] + [sparse_graph() for _ in range(12)]
    corr = np.full((24, 24), 0.1)
    corr[:12, :12] = 0.9
    corr[12:, 12:] = 0.9
    np.fill_diagonal(corr, 1.0)
    model = pretrain_cosemantic(refs, corr, n_top=10, epochs=300, seed=0)

    held_out = dense_graph()
    true_corr = np.concatenate([np.full(12, 0.9), np.full(12, 0.1)])
    true_corr += rng.uniform(-0.01, 0.01, 24)  # break ties the oracle way
    oracle_top = set(select_top_k(true_corr, 10))
    sims = cosemantic_similarity(model, held_out, refs)
    selected = set(select_top_k(sims, 10))
    overlap = len(selected & oracle_top) / 10
    elapsed = time.monotonic() - started
    report("cosemantic-recovery", overlap >= 0.8 and elapsed < 180,
           f"top-10 overlap={overlap:.0%}, {elapsed:.1f}s")


def test_unseen_estimation_approaches_direct_fit():
    started = time.monotonic()
    phases = np.linspace(0, np.pi, 6)
    panel = sinusoid_panel(n_nodes=6, days=14, noise=0.3, seed=3, phases=phases)
    net = line_network(6)
    ds = prepare_dataset(net, panel)
    cfg = ModelConfig(n_nodes=3, t_r=4, t_d=2, t_w=1, horizon=4, embed_size=8,
                      n_blocks=1, heads_fusion_rd=2, heads_fusion_rw=2,
                      heads_spatial=2, heads_temporal=2, q=24)
    cosem = pretrain_cosemantic(
        [spatial_semantic_graph(n, net) for n in net.node_ids],
        np.clip(ds.a_c, 0, 1), n_top=3, epochs=100, seed=0)
    target_idx = 2
    result = estimate_unseen_road(
        cosem, cfg, net, panel, connections=[("1", 1.0), ("3", 1.0)],
        a_r=ds.a_r, a_c=ds.a_c, target_series=panel.values[target_idx], k=3,
        epochs=40, seed=0)

    # direct-fit oracle: the same forecaster trained on the target road itself
    direct_net = RoadNetwork(node_ids=("t",), edges=())
    direct_panel = make_panel(panel.values[target_idx:target_idx + 1])
    direct_ds = prepare_dataset(direct_net, direct_panel, train_frac=0.7, val_frac=0.1)
    direct_cfg = ModelConfig(**{**cfg.to_dict(), "n_nodes": 1})
    direct_model, _ = train_short_term(direct_ds, direct_cfg, epochs=40, seed=0)

    train_end = int(panel.n_steps * 0.7)
    test_windows = extract_windows(direct_ds.norm_panel, direct_cfg, start=train_end)
    truth = np.stack([panel.values[target_idx, t:t + cfg.horizon]
                      for t in test_windows.batch.t_i])
    direct_mae = evaluate(direct_model, test_windows, direct_ds.scaler,
                          targets_original=truth[:, None, :]).mae
    est_mae = np.abs(result.estimated_series - truth).mean()
    elapsed = time.monotonic() - started
    ok = est_mae <= 1.5 * direct_mae and elapsed < 600
    report("unseen-estimation", ok,
           f"estimated MAE={est_mae:.3f} ≤ 1.5 × direct-fit MAE={direct_mae:.3f}, {elapsed:.1f}s")


def test_route_planner_matches_exhaustive_search(rng):
    from roadcast.agents import RouteError, plan_route
    started = time.monotonic()
    checked = 0
    for _ in range(100):
        n = int(rng.integers(3, 9))
        ids = tuple(str(i) for i in range(n))
        edges = tuple((ids[i], ids[j], float(rng.uniform(0.5, 5)))
                      for i, j in itertools.combinations(range(n), 2)
                      if rng.random() < 0.4)
        if not edges:
            continue
        net = RoadNetwork(node_ids=ids, edges=edges)
        costs = {nid: float(rng.integers(1, 6)) for nid in ids}
        expected = brute_force_best(net, costs, ids[0], ids[-1])
        if expected is None:
            with pytest.raises(RouteError):
                plan_route(net, costs, ids[0], ids[-1])
        else:
            s = plan_route(net, costs, ids[0], ids[-1])
            assert s.payload["total_predicted_time"] == pytest.approx(expected[0], abs=1e-9)
            assert s.payload["path"] == expected[1]
        checked += 1
    elapsed = time.monotonic() - started
    report("route-optimality", elapsed < 5.0,
           f"{checked} random graphs match exhaustive enumeration, {elapsed:.2f}s")


def test_metric_formulas_match_direct_oracle(rng):
    worst = 0.0
    rmse_ge_mae = True
    for _ in range(30):
        y = rng.normal(50, 20, (8, 3, 6))
        y_hat = y + rng.normal(0, 5, y.shape)
        m = compute_metrics(y, y_hat)
        err = np.abs(y_hat - y)
        mask = np.abs(y) >= 1e-3
        worst = max(worst,
                    abs(m.mae - err.mean()),
                    abs(m.rmse - np.sqrt((err ** 2).mean())),
                    abs(m.mape - 100 * (err[mask] / np.abs(y[mask])).mean()))
        rmse_ge_mae &= m.rmse >= m.mae - 1e-12
    report("metric-formulas", worst < 1e-9 and rmse_ge_mae,
           f"max |Δ|={worst:.2e}, RMSE ≥ MAE always")


CANONICAL_UTTERANCE = "I want to go to Road 53. It takes about ten minutes to drive there."


def test_fallback_parser_extracts_destination_and_horizon():
    spec = parse_demand_fallback(CANONICAL_UTTERANCE)
    ok = (spec.task == "route" and spec.destination == "53"
          and spec.horizon_minutes == 10)
    report("demand-fallback-parser", ok,
           f"task={spec.task}, destination={spec.destination}, "
           f"horizon={spec.horizon_minutes}min")


def test_service_answers_canonical_route_query():
    panel = sinusoid_panel(n_nodes=4, days=14, noise=0.5, seed=6)
    ids = ("50", "51", "52", "53")
    network = RoadNetwork(node_ids=ids, edges=tuple(
        (ids[i], ids[i + 1], 1.0) for i in range(3)))
    dataset = prepare_dataset(network, panel)
    cfg = ModelConfig(n_nodes=4, t_r=4, t_d=2, t_w=1, horizon=4, embed_size=8,
                      n_blocks=1, heads_fusion_rd=2, heads_fusion_rw=2,
                      heads_spatial=2, heads_temporal=2, q=24)
    model, _ = train_short_term(dataset, cfg, epochs=1, seed=0)
    llm = ReplayLLMClient({CANONICAL_UTTERANCE: json.dumps({
        "task": "route", "target_roads": ["53"], "origin": None,
        "destination": "53", "horizon_minutes": 10})})
    state = ServiceState(network=network, panel=panel, dataset=dataset, model=model,
                         scaler=dataset.scaler, llm_client=llm,
                         thresholds=default_thresholds(panel.values[:, :dataset.train_end]),
                         default_origin="50")
    client = TestClient(create_app(state))
    resp = client.post("/query", json={"text": CANONICAL_UTTERANCE})
    body = resp.json() if resp.status_code == 200 else {}
    kinds = [s["kind"] for s in body.get("suggestions", [])]
    ok = (resp.status_code == 200 and "route" in kinds
          and body.get("route_nodes") == ["50", "51", "52", "53"]
          and len(llm.requests) == 1)
    report("service-end-to-end", ok,
           f"status={resp.status_code}, suggestion kinds={kinds}, "
           f"route={body.get('route_nodes')}")
