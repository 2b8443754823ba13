"""HTTP facade: demand parsing, the three prediction paths, suggestions.

Model objects are frozen at startup and shared across requests; retraining
happens out of process via the CLI and swaps checkpoints on restart.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware

from .. import agents
from ..agents import DemandParseError, DemandSpec, RouteError, Suggestion
from ..data import RoadNetwork, ScalerStats, TimeSeriesPanel, input_window
from ..longterm import autoregressive_rollout
from ..model import DFMT
from ..train import PreparedDataset, load_checkpoint, predict, prepare_dataset
from ..unseen import CoSemanticModel, estimate_unseen_road, pretrain_cosemantic
from .schemas import (ConnectionModel, DemandModel, EdgeModel, HealthResponse,
                      NetworkResponse, PredictionResponse, QueryRequest, QueryResponse,
                      RouteResponse, SuggestionModel, UnseenRequest, UnseenResponse)

log = logging.getLogger("roadcast.service")


@dataclass
class ServiceState:
    network: RoadNetwork | None = None
    panel: TimeSeriesPanel | None = None
    dataset: PreparedDataset | None = None
    model: DFMT | None = None
    scaler: ScalerStats | None = None
    cosemantic: CoSemanticModel | None = None
    llm_client: agents.LLMClient | None = None
    thresholds: np.ndarray | None = None
    default_origin: str | None = None
    estimation_epochs: int = 10
    _forecast_cache: dict = field(default_factory=dict)

    @property
    def loaded(self) -> bool:
        return self.model is not None and self.panel is not None

    def latest_forecast(self) -> np.ndarray:
        """Short-term forecast from the end of the panel, in original units.
        Cached per panel length (one slice lifetime)."""
        key = self.panel.n_steps
        if key not in self._forecast_cache:
            batch = input_window(
                # panel is in original units; the model wants normalized input
                _normalized(self.panel, self.scaler), self.model.cfg)
            self._forecast_cache = {key: predict(self.model, batch, self.scaler)[0]}
        return self._forecast_cache[key]


def _normalized(panel: TimeSeriesPanel, scaler: ScalerStats) -> TimeSeriesPanel:
    return TimeSeriesPanel(values=scaler.normalize(panel.values, axis=0),
                           slice_minutes=panel.slice_minutes, q=panel.q,
                           start_timestamp=panel.start_timestamp)


def load_state(checkpoint_path: str, manifest_path: str,
               llm_client: agents.LLMClient | None = None,
               estimation_epochs: int = 10) -> ServiceState:
    from ..data import load_manifest
    model, scaler, payload = load_checkpoint(checkpoint_path)
    network, panel, _ = load_manifest(manifest_path)
    dataset = prepare_dataset(network, panel)
    return ServiceState(
        network=network, panel=panel, dataset=dataset, model=model, scaler=scaler,
        llm_client=llm_client,
        thresholds=agents.default_thresholds(panel.values[:, :dataset.train_end]),
        default_origin=network.node_ids[0],
        estimation_epochs=estimation_epochs,
    )


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="roadcast", version="0.1.0")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    app.state.service = state

    def require_loaded():
        if not state.loaded:
            raise HTTPException(status_code=503, detail="model not loaded")

    def road_index(road: str) -> int:
        try:
            return state.network.index_of(road)
        except Exception:
            raise HTTPException(status_code=404, detail=f"unknown road {road!r}")

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", model_loaded=state.loaded,
                              n_nodes=state.network.n_nodes if state.network else None)

    @app.get("/network", response_model=NetworkResponse)
    def network():
        require_loaded()
        return NetworkResponse(
            node_ids=list(state.network.node_ids),
            edges=[EdgeModel(src=s, dst=d, distance=dist) for s, d, dist in state.network.edges],
        )

    @app.get("/predict/short", response_model=PredictionResponse)
    def predict_short(road: str, steps: int | None = None):
        require_loaded()
        idx = road_index(road)
        tau = state.model.cfg.horizon
        steps = min(steps or tau, tau)
        series = state.latest_forecast()[idx, :steps]
        return PredictionResponse(road=road, steps=steps,
                                  slice_minutes=state.panel.slice_minutes,
                                  series=[float(v) for v in series])

    @app.get("/predict/long", response_model=PredictionResponse)
    def predict_long(road: str, days: int = 1):
        require_loaded()
        idx = road_index(road)
        cfg = state.model.cfg
        steps = days * cfg.q
        n_stages = math.ceil(steps / cfg.horizon)
        series = autoregressive_rollout(state.model, state.panel, state.scaler,
                                        state.panel.n_steps, n_stages)[idx, :steps]
        return PredictionResponse(road=road, steps=steps,
                                  slice_minutes=state.panel.slice_minutes,
                                  series=[float(v) for v in series])

    @app.get("/route", response_model=RouteResponse)
    def route(to: str, origin: str = Query(alias="from"), departure_step: int = 0):
        require_loaded()
        road_index(origin)
        road_index(to)
        suggestion = _plan(state, origin, to, departure_step)
        costs = _route_costs(state, departure_step)
        return RouteResponse(
            path=suggestion.payload["path"],
            total_predicted_time=suggestion.payload["total_predicted_time"],
            departure_step=departure_step,
            per_road_time={r: costs[r] for r in suggestion.payload["path"]},
        )

    @app.post("/estimate/unseen", response_model=UnseenResponse)
    def estimate_unseen(req: UnseenRequest):
        require_loaded()
        for conn in req.connections:
            road_index(conn.node)
        if not req.connections:
            raise HTTPException(status_code=400, detail="connections required")
        result = _estimate(state, [(c.node, c.distance) for c in req.connections],
                           np.asarray(req.series) if req.series else None,
                           req.epochs or state.estimation_epochs)
        horizon = req.horizon_steps or state.model.cfg.horizon
        series = result.estimated_series[-1] if len(result.estimated_series) else []
        return UnseenResponse(
            selected_nodes=result.selected_nodes,
            similarities={nid: float(s) for nid, s in
                          zip(state.network.node_ids, result.similarities)},
            estimated_series=[float(v) for v in list(series)[:horizon]],
        )

    @app.post("/query", response_model=QueryResponse)
    def query(req: QueryRequest):
        require_loaded()
        started = time.time()
        if req.demand is not None:
            try:
                demand = DemandSpec(**req.demand.model_dump())
            except ValueError as e:
                raise HTTPException(status_code=400, detail=str(e))
        elif req.text:
            try:
                demand = agents.parse_demand(req.text, state.llm_client)
            except DemandParseError as e:
                raise HTTPException(status_code=400,
                                    detail={"error": str(e), "clarification": e.clarification})
        else:
            raise HTTPException(status_code=400, detail="text or demand required")
        response = _handle_demand(state, demand)
        log.info("query task=%s roads=%s took=%.3fs", demand.task, demand.target_roads,
                 time.time() - started)
        return response

    return app


# ---------------------------------------------------------------------------
# Demand dispatch
# ---------------------------------------------------------------------------

def _route_costs(state: ServiceState, departure_step: int = 0) -> dict:
    forecast = state.latest_forecast()
    step = min(departure_step, forecast.shape[1] - 1)
    return {nid: float(forecast[i, step]) for i, nid in enumerate(state.network.node_ids)}


def _plan(state: ServiceState, origin: str, destination: str, departure_step: int) -> Suggestion:
    try:
        return agents.plan_route(state.network, _route_costs(state, departure_step),
                                 origin, destination, departure_step)
    except RouteError as e:
        raise HTTPException(status_code=400, detail=str(e))


def _estimate(state: ServiceState, connections, series, epochs):
    cfg = state.model.cfg
    k = min(10, state.network.n_nodes)
    if state.cosemantic is None:
        from ..unseen import spatial_semantic_graph
        refs = [spatial_semantic_graph(nid, state.network) for nid in state.network.node_ids]
        state.cosemantic = pretrain_cosemantic(refs, state.dataset.a_c, n_top=k, epochs=100)
    return estimate_unseen_road(
        state.cosemantic, cfg, state.network, state.panel, connections,
        state.dataset.a_r, state.dataset.a_c, target_series=series,
        k=k, epochs=epochs)


def _steps_for(state: ServiceState, horizon_minutes: int | None) -> int:
    tau = state.model.cfg.horizon
    if horizon_minutes is None:
        return tau
    return max(1, min(tau, math.ceil(horizon_minutes / state.panel.slice_minutes)))


def _handle_demand(state: ServiceState, demand: DemandSpec) -> QueryResponse:
    for road in demand.target_roads + [demand.origin, demand.destination]:
        if road is not None and road not in state.network.node_ids:
            raise HTTPException(status_code=404, detail=f"unknown road {road!r}")

    forecast = state.latest_forecast()
    steps = _steps_for(state, demand.horizon_minutes)
    roads = demand.target_roads or list(state.network.node_ids)
    predictions = {r: [float(v) for v in forecast[state.network.index_of(r), :steps]]
                   for r in roads}
    heatmap = {nid: float(forecast[i, 0]) for i, nid in enumerate(state.network.node_ids)}
    suggestions: list[SuggestionModel] = []
    route_nodes = None

    if demand.task == "route" or (demand.destination is not None and demand.task == "short_term"):
        origin = demand.origin or state.default_origin
        destination = demand.destination or (roads[0] if roads else None)
        if destination is None:
            raise HTTPException(status_code=400, detail="route demand without destination")
        if origin == destination:
            origin = next(n for n in state.network.node_ids if n != destination)
        suggestion = _plan(state, origin, destination, 0)
        route_nodes = suggestion.payload["path"]
        suggestions.append(SuggestionModel(**suggestion.to_dict()))
    elif demand.task == "alert":
        idxs = [state.network.index_of(r) for r in roads]
        alert = agents.congestion_alert(forecast[idxs, :steps],
                                        state.thresholds[idxs], road_ids=roads)
        suggestions.append(SuggestionModel(**alert.to_dict()))
    elif demand.task == "long_term":
        days = max(1, (demand.horizon_minutes or 1440) // 1440)
        cfg = state.model.cfg
        n_stages = math.ceil(days * cfg.q / cfg.horizon)
        rollout = autoregressive_rollout(state.model, state.panel, state.scaler,
                                         state.panel.n_steps, n_stages)
        predictions = {r: [float(v) for v in rollout[state.network.index_of(r), :days * cfg.q]]
                       for r in roads}
        suggestions.append(SuggestionModel(kind="estimate_summary", payload={
            "roads": roads, "days": days,
            "mean_predicted": {r: float(np.mean(predictions[r])) for r in roads},
        }))
    elif demand.task == "unseen_estimate":
        connections = [(c, 1.0) for c in demand.connections]
        result = _estimate(state, connections, None, state.estimation_epochs)
        series = result.estimated_series[-1] if len(result.estimated_series) else []
        suggestions.append(SuggestionModel(kind="estimate_summary", payload={
            "selected_nodes": result.selected_nodes,
            "estimated_series": [float(v) for v in series],
        }))
    else:
        suggestions.append(SuggestionModel(kind="estimate_summary", payload={
            "roads": roads, "steps": steps,
            "mean_predicted": {r: float(np.mean(predictions[r])) for r in roads},
        }))

    return QueryResponse(demand=DemandModel(**demand.to_dict()), predictions=predictions,
                         suggestions=suggestions, heatmap=heatmap, route_nodes=route_nodes)
