"""Text-to-demand extraction and the suggestion engine.

Demand parsing works either through a pluggable chat-completion client or a
deterministic rule-based fallback; both emit the same DemandSpec schema.
Suggestions cover optimal routes (Dijkstra over predicted travel times) and
congestion alert windows.
"""

from __future__ import annotations

import heapq
import json
import os
import re
from dataclasses import dataclass, field
from importlib import resources as importlib_resources

import numpy as np

TASKS = ("short_term", "long_term", "unseen_estimate", "route", "alert")

_WORD_NUMBERS = {
    "one": 1, "two": 2, "three": 3, "four": 4, "five": 5, "six": 6, "seven": 7,
    "eight": 8, "nine": 9, "ten": 10, "fifteen": 15, "twenty": 20, "thirty": 30,
    "forty": 40, "forty-five": 45, "fifty": 50, "sixty": 60, "half an": 30,
}


class DemandParseError(ValueError):
    """Unparseable demand; carries a clarification question for the user."""

    def __init__(self, message: str, clarification: str):
        super().__init__(message)
        self.clarification = clarification


@dataclass
class DemandSpec:
    task: str
    target_roads: list = field(default_factory=list)
    origin: str | None = None
    destination: str | None = None
    horizon_minutes: int | None = None
    connections: list = field(default_factory=list)
    free_text: str = ""

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.horizon_minutes is not None and self.horizon_minutes <= 0:
            raise ValueError("horizon must be positive")
        if self.task == "route" and self.origin is not None and self.origin == self.destination:
            raise ValueError("route origin must differ from destination")

    def to_dict(self) -> dict:
        return {
            "task": self.task, "target_roads": self.target_roads,
            "origin": self.origin, "destination": self.destination,
            "horizon_minutes": self.horizon_minutes, "connections": self.connections,
            "free_text": self.free_text,
        }


@dataclass
class Suggestion:
    kind: str  # route | alert | estimate_summary
    payload: dict

    def to_dict(self) -> dict:
        return {"kind": self.kind, "payload": self.payload}


def load_prompts() -> dict:
    with importlib_resources.files("roadcast.resources").joinpath("prompts.json").open() as f:
        return json.load(f)


# ---------------------------------------------------------------------------
# Demand parsing
# ---------------------------------------------------------------------------

class LLMClient:
    """Chat-completion interface; configured via LLM_ENDPOINT / LLM_API_KEY /
    LLM_MODEL environment variables. Subclass or replace for tests."""

    def __init__(self, endpoint: str | None = None, api_key: str | None = None,
                 model: str | None = None):
        self.endpoint = endpoint or os.environ.get("LLM_ENDPOINT")
        self.api_key = api_key or os.environ.get("LLM_API_KEY")
        self.model = model or os.environ.get("LLM_MODEL")

    @property
    def configured(self) -> bool:
        return bool(self.endpoint and self.model)

    def complete(self, messages: list[dict]) -> str:
        import requests
        resp = requests.post(
            self.endpoint,
            headers={"Authorization": f"Bearer {self.api_key}"},
            json={"model": self.model, "messages": messages},
            timeout=30,
        )
        resp.raise_for_status()
        return resp.json()["choices"][0]["message"]["content"]


class ReplayLLMClient(LLMClient):
    """Recorded-replay client: maps user text to canned replies, offline."""

    def __init__(self, replies: dict):
        super().__init__(endpoint="replay", model="replay")
        self.replies = replies
        self.requests: list[list[dict]] = []

    def complete(self, messages: list[dict]) -> str:
        self.requests.append(messages)
        text = messages[-1]["content"]
        if text not in self.replies:
            raise KeyError(f"no recorded reply for {text!r}")
        return self.replies[text]


def _extract_road_ids(text: str) -> list[str]:
    return re.findall(r"[Rr]oad\s+(\d+)", text)


def _extract_minutes(text: str) -> int | None:
    lowered = text.lower()
    m = re.search(r"(\d+)\s*(?:min|minute)", lowered)
    if m:
        return int(m.group(1))
    m = re.search(r"(\d+(?:\.\d+)?)\s*(?:hour|hr)", lowered)
    if m:
        return int(float(m.group(1)) * 60)
    for word, value in _WORD_NUMBERS.items():
        if re.search(rf"\b{word}\b\s*(?:min|minute|hour)", lowered):
            return value * 60 if "hour" in lowered.split(word, 1)[1][:12] else value
    m = re.search(r"(\d+)\s*day", lowered)
    if m:
        return int(m.group(1)) * 1440
    return None


def parse_demand_fallback(text: str) -> DemandSpec:
    """Total rule-based parser: every non-empty input yields a DemandSpec or
    a structured DemandParseError, never a crash."""
    if not text or not text.strip():
        raise DemandParseError("empty input",
                               "What would you like to know about traffic? Mention a road, e.g. 'Road 53'.")
    roads = _extract_road_ids(text)
    minutes = _extract_minutes(text)
    lowered = text.lower()

    if re.search(r"\b(add|new|build|construct|unseen)\b.*\broad\b|\broad\b.*\bbetween\b", lowered) \
            and len(roads) >= 2:
        return DemandSpec(task="unseen_estimate", connections=roads, target_roads=roads,
                          horizon_minutes=minutes, free_text=text)
    if re.search(r"\b(alert|congestion|rush hour|jam)\b", lowered):
        return DemandSpec(task="alert", target_roads=roads, horizon_minutes=minutes, free_text=text)
    if re.search(r"\b(days?|weeks?|months?|long[- ]term|tomorrow)\b", lowered):
        return DemandSpec(task="long_term", target_roads=roads, horizon_minutes=minutes, free_text=text)
    if re.search(r"\b(go to|route|path|way to|drive to|get to|travel)\b", lowered) and roads:
        origin = None
        m = re.search(r"from\s+[Rr]oad\s+(\d+)", text)
        if m:
            origin = m.group(1)
        destination = next((r for r in roads if r != origin), roads[0])
        return DemandSpec(task="route", target_roads=roads, origin=origin,
                          destination=destination, horizon_minutes=minutes, free_text=text)
    if roads:
        return DemandSpec(task="short_term", target_roads=roads, horizon_minutes=minutes,
                          free_text=text)
    raise DemandParseError(f"could not parse {text!r}",
                           "Which road are you asking about? Mention it like 'Road 53'.")


def parse_demand(text: str, llm_client: LLMClient | None = None) -> DemandSpec:
    """Parse free text into a DemandSpec.

    With a configured client, the pre-prompt messages are sent ahead of the
    user text and the structured JSON reply is parsed; otherwise (or if the
    reply is malformed) the rule-based fallback answers.
    """
    if llm_client is not None and llm_client.configured:
        prompts = load_prompts()
        messages = [{"role": "user", "content": p} for p in prompts["pre_prompts"]]
        messages.append({"role": "system", "content": prompts["reply_instruction"]})
        messages.append({"role": "user", "content": text})
        try:
            reply = llm_client.complete(messages)
            d = json.loads(re.search(r"\{.*\}", reply, re.S).group(0))
            return DemandSpec(
                task=d["task"],
                target_roads=[str(r) for r in d.get("target_roads", [])],
                origin=str(d["origin"]) if d.get("origin") is not None else None,
                destination=str(d["destination"]) if d.get("destination") is not None else None,
                horizon_minutes=d.get("horizon_minutes"),
                connections=[str(c) for c in d.get("connections", [])],
                free_text=text,
            )
        except DemandParseError:
            raise
        except Exception:
            pass  # malformed reply: fall through to the rule-based path
    return parse_demand_fallback(text)


# ---------------------------------------------------------------------------
# Route planning
# ---------------------------------------------------------------------------

class RouteError(ValueError):
    pass


def plan_route(network, costs: dict, origin, destination, departure_step: int = 0) -> Suggestion:
    """Dijkstra shortest path; entering road v costs ``costs[v]`` (its
    predicted travel time at the departure step). Ties break toward
    lexicographically smaller paths.
    """
    if origin not in network.node_ids or destination not in network.node_ids:
        raise RouteError("origin or destination not in network")
    adj: dict = {nid: [] for nid in network.node_ids}
    for src, dst, _ in network.edges:
        adj[src].append(dst)
        adj[dst].append(src)
    for nid in adj:
        adj[nid].sort()

    heap: list[tuple[float, list]] = [(0.0, [origin])]
    settled: set = set()
    while heap:
        d, path = heapq.heappop(heap)
        node = path[-1]
        if node in settled:
            continue
        settled.add(node)
        if node == destination:
            return Suggestion(kind="route", payload={
                "path": path,
                "total_predicted_time": d,
                "departure_step": departure_step,
            })
        for nbr in adj[node]:
            if nbr in settled:
                continue
            cost = float(costs[nbr])
            if cost < 0:
                raise RouteError(f"negative predicted time for road {nbr}")
            heapq.heappush(heap, (d + cost, path + [nbr]))
    raise RouteError(f"no path from {origin} to {destination}")


# ---------------------------------------------------------------------------
# Congestion alerts
# ---------------------------------------------------------------------------

def default_thresholds(train_values: np.ndarray, percentile: float = 85.0) -> np.ndarray:
    """Per-road alert thresholds from the training data distribution."""
    return np.percentile(train_values, percentile, axis=1)


def congestion_alert(predicted: np.ndarray, thresholds: np.ndarray,
                     road_ids: list | None = None) -> Suggestion:
    """Maximal [start, stop) windows where a road's prediction exceeds its
    threshold; severity is the window's peak relative exceedance."""
    predicted = np.atleast_2d(predicted)
    windows = []
    for i in range(predicted.shape[0]):
        thr = float(thresholds[i])
        above = predicted[i] > thr
        start = None
        for t, flag in enumerate(above):
            if flag and start is None:
                start = t
            elif not flag and start is not None:
                windows.append(_window(road_ids, i, start, t, predicted[i], thr))
                start = None
        if start is not None:
            windows.append(_window(road_ids, i, start, len(above), predicted[i], thr))
    return Suggestion(kind="alert", payload={"windows": windows})


def _window(road_ids, i, start, stop, series, thr) -> dict:
    peak = float(series[start:stop].max())
    return {
        "road": road_ids[i] if road_ids else str(i),
        "start": int(start),
        "stop": int(stop),
        "severity": (peak - thr) / thr if thr != 0 else float("inf"),
    }
