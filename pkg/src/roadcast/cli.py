"""Command line entry points: training, evaluation, rollout, unseen-road
estimation, serving, and a thin HTTP client for the query endpoint."""

from __future__ import annotations

import csv
import json
import math
import sys

import click

from .config import ModelConfig
from .data import load_manifest
from .train import (evaluate as evaluate_model, extract_windows, load_checkpoint,
                    prepare_dataset, save_checkpoint, train_short_term)


@click.group()
def main():
    """Multi-scale road traffic forecasting toolkit."""


def _config_for(manifest: dict, config_path: str | None, n_nodes: int, q: int) -> ModelConfig:
    if config_path:
        cfg = ModelConfig.from_json(config_path)
        return ModelConfig(**{**cfg.to_dict(), "n_nodes": n_nodes, "q": q})
    return ModelConfig(n_nodes=n_nodes, q=q)


@main.command()
@click.option("--dataset", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--epochs", default=50, show_default=True)
@click.option("--seed", default=0, show_default=True)
def train(manifest_path, config_path, out_path, epochs, seed):
    """Train the short-term forecaster and write a checkpoint."""
    network, panel, manifest = load_manifest(manifest_path)
    cfg = _config_for(manifest, config_path, network.n_nodes, panel.q)
    dataset = prepare_dataset(network, panel)
    model, report = train_short_term(dataset, cfg, epochs=epochs, seed=seed)
    save_checkpoint(out_path, model, dataset.scaler, dataset)
    click.echo(json.dumps({
        "checkpoint": out_path,
        "epochs_run": len(report.train_losses),
        "best_val_loss": report.best_val_loss,
        "wall_clock_seconds": round(report.wall_clock_seconds, 2),
    }))


@main.command("eval")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--dataset", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--report", "report_path", required=True, type=click.Path())
def eval_cmd(ckpt, manifest_path, report_path):
    """Evaluate a checkpoint on the test split; write a JSON metrics report."""
    model, scaler, _ = load_checkpoint(ckpt)
    network, panel, _ = load_manifest(manifest_path)
    dataset = prepare_dataset(network, panel)
    windows = extract_windows(dataset.norm_panel, model.cfg, start=dataset.val_end)
    metrics = evaluate_model(model, windows, scaler)
    with open(report_path, "w") as f:
        json.dump(metrics.to_dict(), f, indent=2)
    click.echo(json.dumps({"mae": metrics.mae, "rmse": metrics.rmse, "mape": metrics.mape}))


@main.command()
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--dataset", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--start", type=int, default=None, help="Absolute start step (default: panel end).")
@click.option("--days", default=1, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def rollout(ckpt, manifest_path, start, days, out_path):
    """Autoregressive long-horizon prediction written as CSV (rows=roads)."""
    from .longterm import autoregressive_rollout
    model, scaler, _ = load_checkpoint(ckpt)
    network, panel, _ = load_manifest(manifest_path)
    start = panel.n_steps if start is None else start
    steps = days * model.cfg.q
    n_stages = math.ceil(steps / model.cfg.horizon)
    series = autoregressive_rollout(model, panel, scaler, start, n_stages)[:, :steps]
    with open(out_path, "w", newline="") as f:
        writer = csv.writer(f)
        for nid, row in zip(network.node_ids, series):
            writer.writerow([nid] + [f"{v:.6f}" for v in row])
    click.echo(json.dumps({"out": out_path, "roads": network.n_nodes, "steps": steps}))


@main.command("estimate-unseen")
@click.option("--ckpt", required=True, type=click.Path(exists=True),
              help="Short-term checkpoint for the base configuration.")
@click.option("--dataset", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--new-node", "spec_path", required=True, type=click.Path(exists=True),
              help="JSON spec: {\"connections\": [{\"node\": id, \"distance\": km}, ...]}")
@click.option("--epochs", default=30, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def estimate_unseen(ckpt, manifest_path, spec_path, epochs, out_path):
    """Estimate traffic for a proposed road; writes the estimated series CSV."""
    from .unseen import estimate_unseen_road, pretrain_cosemantic, spatial_semantic_graph
    model, _, _ = load_checkpoint(ckpt)
    network, panel, _ = load_manifest(manifest_path)
    dataset = prepare_dataset(network, panel)
    with open(spec_path) as f:
        spec = json.load(f)
    connections = [(str(c["node"]), float(c["distance"])) for c in spec["connections"]]
    refs = [spatial_semantic_graph(nid, network) for nid in network.node_ids]
    k = min(10, network.n_nodes)
    cosemantic = pretrain_cosemantic(refs, dataset.a_c, n_top=k, epochs=200)
    result = estimate_unseen_road(cosemantic, model.cfg, network, panel, connections,
                                  dataset.a_r, dataset.a_c, k=k, epochs=epochs)
    with open(out_path, "w", newline="") as f:
        writer = csv.writer(f)
        for row in result.estimated_series:
            writer.writerow([f"{v:.6f}" for v in row])
    click.echo(json.dumps({"out": out_path, "selected_nodes": result.selected_nodes}))


@main.command()
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--dataset", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--port", default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
def serve(ckpt, manifest_path, port, host):
    """Run the HTTP service."""
    import uvicorn
    from .agents import LLMClient
    from .service import create_app, load_state
    state = load_state(ckpt, manifest_path, llm_client=LLMClient())
    uvicorn.run(create_app(state), host=host, port=port)


@main.command()
@click.argument("text")
@click.option("--url", default="http://127.0.0.1:8000", show_default=True)
def query(text, url):
    """Send a free-text demand to a running service and print the response."""
    import requests
    resp = requests.post(f"{url}/query", json={"text": text}, timeout=120)
    if resp.status_code != 200:
        click.echo(f"error {resp.status_code}: {resp.text}", err=True)
        sys.exit(1)
    click.echo(json.dumps(resp.json(), indent=2))


if __name__ == "__main__":
    main()
