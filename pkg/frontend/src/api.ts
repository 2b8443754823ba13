// Typed client for the forecasting service. The UI does no prediction math:
// every number rendered comes from one of these response payloads.

export interface EdgeInfo {
  src: string;
  dst: string;
  distance: number;
}

export interface NetworkInfo {
  node_ids: string[];
  edges: EdgeInfo[];
}

export interface PredictionInfo {
  road: string;
  steps: number;
  slice_minutes: number;
  series: number[];
}

export interface RouteInfo {
  path: string[];
  total_predicted_time: number;
  departure_step: number;
  per_road_time: Record<string, number>;
}

export interface SuggestionInfo {
  kind: 'route' | 'alert' | 'estimate_summary';
  payload: Record<string, unknown>;
}

export interface QueryReply {
  demand: {
    task: string;
    target_roads: string[];
    origin: string | null;
    destination: string | null;
    horizon_minutes: number | null;
  };
  predictions: Record<string, number[]>;
  suggestions: SuggestionInfo[];
  heatmap: Record<string, number>;
  route_nodes: string[] | null;
}

export interface UnseenReply {
  selected_nodes: string[];
  similarities: Record<string, number>;
  estimated_series: number[];
}

export interface ConnectionDraft {
  node: string;
  distance: number;
}

export class ServiceError extends Error {
  constructor(readonly status: number, detail: string) {
    super(detail);
  }
}

async function request<T>(base: string, path: string, init?: RequestInit): Promise<T> {
  const response = await fetch(base + path, init);
  const body = await response.json().catch(() => ({}));
  if (!response.ok) {
    const detail = typeof body.detail === 'string' ? body.detail : JSON.stringify(body.detail ?? body);
    throw new ServiceError(response.status, detail);
  }
  return body as T;
}

export class ApiClient {
  constructor(readonly base: string = '') {}

  getNetwork(): Promise<NetworkInfo> {
    return request(this.base, '/network');
  }

  getShortPrediction(road: string, steps?: number): Promise<PredictionInfo> {
    const query = steps ? `?road=${encodeURIComponent(road)}&steps=${steps}` : `?road=${encodeURIComponent(road)}`;
    return request(this.base, `/predict/short${query}`);
  }

  getLongPrediction(road: string, days: number): Promise<PredictionInfo> {
    return request(this.base, `/predict/long?road=${encodeURIComponent(road)}&days=${days}`);
  }

  getRoute(from: string, to: string): Promise<RouteInfo> {
    return request(this.base, `/route?from=${encodeURIComponent(from)}&to=${encodeURIComponent(to)}`);
  }

  postQuery(text: string): Promise<QueryReply> {
    return request(this.base, '/query', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ text }),
    });
  }

  postUnseenEstimate(connections: ConnectionDraft[], horizonSteps?: number): Promise<UnseenReply> {
    return request(this.base, '/estimate/unseen', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ connections, horizon_steps: horizonSteps }),
    });
  }
}
