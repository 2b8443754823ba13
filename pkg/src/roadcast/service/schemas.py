"""Request/response bodies of the HTTP facade."""

from __future__ import annotations

from pydantic import BaseModel, Field


class DemandModel(BaseModel):
    task: str
    target_roads: list[str] = Field(default_factory=list)
    origin: str | None = None
    destination: str | None = None
    horizon_minutes: int | None = None
    connections: list[str] = Field(default_factory=list)
    free_text: str = ""


class QueryRequest(BaseModel):
    text: str | None = None
    demand: DemandModel | None = None
    session_id: str | None = None


class SuggestionModel(BaseModel):
    kind: str
    payload: dict


class QueryResponse(BaseModel):
    demand: DemandModel
    predictions: dict[str, list[float]] = Field(default_factory=dict)
    suggestions: list[SuggestionModel] = Field(default_factory=list)
    heatmap: dict[str, float] = Field(default_factory=dict)
    route_nodes: list[str] | None = None


class EdgeModel(BaseModel):
    src: str
    dst: str
    distance: float


class NetworkResponse(BaseModel):
    node_ids: list[str]
    edges: list[EdgeModel]


class PredictionResponse(BaseModel):
    road: str
    steps: int
    slice_minutes: int
    series: list[float]


class RouteResponse(BaseModel):
    path: list[str]
    total_predicted_time: float
    departure_step: int
    per_road_time: dict[str, float]


class ConnectionModel(BaseModel):
    node: str
    distance: float


class UnseenRequest(BaseModel):
    connections: list[ConnectionModel]
    series: list[float] | None = None
    horizon_steps: int | None = None
    epochs: int | None = None


class UnseenResponse(BaseModel):
    selected_nodes: list[str]
    similarities: dict[str, float]
    estimated_series: list[float]


class HealthResponse(BaseModel):
    status: str
    model_loaded: bool
    n_nodes: int | None = None
