// Canned service responses mirroring the backend's JSON shapes.

import { NetworkInfo, QueryReply, UnseenReply } from '../src/api';

export const fixtureNetwork: NetworkInfo = {
  node_ids: ['50', '51', '52', '53'],
  edges: [
    { src: '50', dst: '51', distance: 1.0 },
    { src: '51', dst: '52', distance: 1.0 },
    { src: '52', dst: '53', distance: 1.0 },
  ],
};

export const fixtureQueryReply: QueryReply = {
  demand: {
    task: 'route',
    target_roads: ['53'],
    origin: null,
    destination: '53',
    horizon_minutes: 10,
  },
  predictions: { '53': [61.2, 60.8, 60.1, 59.7] },
  suggestions: [
    {
      kind: 'route',
      payload: {
        path: ['50', '51', '52', '53'],
        total_predicted_time: 182.4,
        departure_step: 0,
      },
    },
  ],
  heatmap: { '50': 58.2, '51': 63.1, '52': 55.4, '53': 61.2 },
  route_nodes: ['50', '51', '52', '53'],
};

export const fixtureUnseenReply: UnseenReply = {
  selected_nodes: ['51', '52', '53'],
  similarities: { '50': 0.41, '51': 0.93, '52': 0.88, '53': 0.77 },
  estimated_series: [60.1, 59.8, 60.4, 61.0, 60.6, 60.2],
};

type JsonBody = Record<string, unknown> | unknown[];

export interface RecordedRequest {
  url: string;
  init?: RequestInit;
}

/** Install a fetch stub that answers from a URL-prefix → response table. */
export function stubFetch(
  routes: Array<{ match: (url: string) => boolean; status?: number; body: JsonBody }>,
): RecordedRequest[] {
  const recorded: RecordedRequest[] = [];
  globalThis.fetch = (async (url: string, init?: RequestInit) => {
    recorded.push({ url: String(url), init });
    const route = routes.find((r) => r.match(String(url)));
    if (!route) {
      return new Response(JSON.stringify({ detail: 'not found' }), { status: 404 });
    }
    return new Response(JSON.stringify(route.body), { status: route.status ?? 200 });
  }) as typeof fetch;
  return recorded;
}
