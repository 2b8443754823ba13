// Road-network heatmap: SVG circles positioned by the persisted layout,
// colored by the service's predicted value at the slider step. Coloring is
// presentation only — values come straight from response payloads.

import { NetworkInfo } from './api';
import { NodePosition } from './layout';

export interface HeatmapDatum {
  road: string;
  value: number;
}

/** Linear blue→red ramp over the observed value range. */
export function colorFor(value: number, min: number, max: number): string {
  const span = max - min;
  const t = span > 0 ? (value - min) / span : 0.5;
  const r = Math.round(255 * t);
  const b = Math.round(255 * (1 - t));
  return `rgb(${r},64,${b})`;
}

export function heatmapData(
  predictions: Record<string, number[]>,
  sliderStep: number,
): HeatmapDatum[] {
  return Object.entries(predictions).map(([road, series]) => {
    const step = Math.min(sliderStep, series.length - 1);
    return { road, value: series[step] };
  });
}

export interface RenderOptions {
  width?: number;
  height?: number;
  highlightPath?: string[] | null;
}

export function renderHeatmap(
  container: HTMLElement,
  network: NetworkInfo,
  positions: NodePosition[],
  data: HeatmapDatum[],
  options: RenderOptions = {},
): void {
  const width = options.width ?? 600;
  const height = options.height ?? 400;
  const byId = new Map(positions.map((p) => [p.id, p]));
  const values = new Map(data.map((d) => [d.road, d.value]));
  const numbers = data.map((d) => d.value);
  const min = Math.min(...numbers);
  const max = Math.max(...numbers);
  const onPath = new Set(options.highlightPath ?? []);

  const px = (p: NodePosition) => 20 + p.x * (width - 40);
  const py = (p: NodePosition) => 20 + p.y * (height - 40);

  const edges = network.edges
    .map((e) => {
      const a = byId.get(e.src);
      const b = byId.get(e.dst);
      if (!a || !b) return '';
      const highlighted = onPath.has(e.src) && onPath.has(e.dst);
      return `<line x1="${px(a)}" y1="${py(a)}" x2="${px(b)}" y2="${py(b)}"` +
        ` stroke="${highlighted ? '#ffb300' : '#888'}" stroke-width="${highlighted ? 4 : 1.5}"/>`;
    })
    .join('');

  const nodes = positions
    .map((p) => {
      const value = values.get(p.id);
      const fill = value === undefined ? '#ccc' : colorFor(value, min, max);
      const stroke = onPath.has(p.id) ? '#ffb300' : '#333';
      return `<circle class="road-node" data-road="${p.id}" data-value="${value ?? ''}"` +
        ` cx="${px(p)}" cy="${py(p)}" r="9" fill="${fill}" stroke="${stroke}" stroke-width="2">` +
        `<title>Road ${p.id}${value === undefined ? '' : `: ${value.toFixed(1)}`}</title></circle>`;
    })
    .join('');

  container.innerHTML =
    `<svg viewBox="0 0 ${width} ${height}" width="${width}" height="${height}">${edges}${nodes}</svg>`;
}
