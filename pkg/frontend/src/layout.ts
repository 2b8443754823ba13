// Force-directed layout for the abstract road graph. Datasets ship adjacency
// only (no geocoordinates), so positions are computed once per network and
// persisted in localStorage keyed by the node set.

import { NetworkInfo } from './api';

export interface NodePosition {
  id: string;
  x: number;
  y: number;
}

export function layoutKey(network: NetworkInfo): string {
  return `roadcast-layout:${network.node_ids.join(',')}`;
}

export function computeLayout(network: NetworkInfo, iterations = 200, seed = 1): NodePosition[] {
  const n = network.node_ids.length;
  const index = new Map(network.node_ids.map((id, i) => [id, i]));
  const rand = seededRandom(seed);
  const xs = new Array(n).fill(0).map(() => rand());
  const ys = new Array(n).fill(0).map(() => rand());
  const springLength = 1 / Math.sqrt(Math.max(1, n));

  for (let iter = 0; iter < iterations; iter++) {
    const step = 0.05 * (1 - iter / iterations);
    const fx = new Array(n).fill(0);
    const fy = new Array(n).fill(0);
    // pairwise repulsion
    for (let i = 0; i < n; i++) {
      for (let j = i + 1; j < n; j++) {
        const dx = xs[i] - xs[j];
        const dy = ys[i] - ys[j];
        const d2 = dx * dx + dy * dy + 1e-6;
        const f = (springLength * springLength) / d2;
        fx[i] += dx * f; fy[i] += dy * f;
        fx[j] -= dx * f; fy[j] -= dy * f;
      }
    }
    // spring attraction along edges
    for (const edge of network.edges) {
      const i = index.get(edge.src)!;
      const j = index.get(edge.dst)!;
      const dx = xs[j] - xs[i];
      const dy = ys[j] - ys[i];
      const d = Math.sqrt(dx * dx + dy * dy) + 1e-6;
      const f = (d - springLength) / d;
      fx[i] += dx * f; fy[i] += dy * f;
      fx[j] -= dx * f; fy[j] -= dy * f;
    }
    for (let i = 0; i < n; i++) {
      xs[i] += step * fx[i];
      ys[i] += step * fy[i];
    }
  }

  // normalize into the unit square
  const minX = Math.min(...xs), maxX = Math.max(...xs);
  const minY = Math.min(...ys), maxY = Math.max(...ys);
  const spanX = maxX - minX || 1;
  const spanY = maxY - minY || 1;
  return network.node_ids.map((id, i) => ({
    id,
    x: (xs[i] - minX) / spanX,
    y: (ys[i] - minY) / spanY,
  }));
}

function seededRandom(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export interface LayoutStore {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
}

export function persistedLayout(network: NetworkInfo, store: LayoutStore): NodePosition[] {
  const key = layoutKey(network);
  const saved = store.getItem(key);
  if (saved) {
    try {
      const positions = JSON.parse(saved) as NodePosition[];
      if (positions.length === network.node_ids.length) {
        return positions;
      }
    } catch {
      // fall through to recompute
    }
  }
  const positions = computeLayout(network);
  store.setItem(key, JSON.stringify(positions));
  return positions;
}
