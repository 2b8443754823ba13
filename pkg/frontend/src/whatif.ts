// What-if editor: draft a proposed road by picking existing endpoints and
// distances, post it to /estimate/unseen, chart the estimated series.

import { ApiClient, ConnectionDraft, ServiceError, UnseenReply } from './api';
import { RequestSequencer } from './state';

export interface WhatIfResult {
  reply: UnseenReply | null;
  error: string | null;
}

export class WhatIfPanel {
  private readonly sequencer = new RequestSequencer();
  result: WhatIfResult = { reply: null, error: null };

  constructor(
    private readonly api: ApiClient,
    private readonly onChange: (result: WhatIfResult) => void,
  ) {}

  async submit(connections: ConnectionDraft[], horizonSteps: number): Promise<void> {
    const seq = this.sequencer.next();
    try {
      const reply = await this.api.postUnseenEstimate(connections, horizonSteps);
      this.sequencer.apply(seq, () => {
        this.result = { reply, error: null };
        this.onChange(this.result);
      });
    } catch (error) {
      this.sequencer.apply(seq, () => {
        const message = error instanceof ServiceError
          ? `Estimation failed (${error.status}): ${error.message}`
          : `Estimation failed: ${String(error)}`;
        this.result = { reply: null, error: message };
        this.onChange(this.result);
      });
    }
  }
}

/** Inline SVG line chart of a series returned by the service. */
export function renderSeriesChart(
  container: HTMLElement,
  series: number[],
  options: { width?: number; height?: number; label?: string } = {},
): void {
  const width = options.width ?? 400;
  const height = options.height ?? 160;
  if (series.length === 0) {
    container.innerHTML = '<p class="chart-empty">No data.</p>';
    return;
  }
  const min = Math.min(...series);
  const max = Math.max(...series);
  const span = max - min || 1;
  const points = series
    .map((v, i) => {
      const x = 10 + (i / Math.max(1, series.length - 1)) * (width - 20);
      const y = height - 10 - ((v - min) / span) * (height - 20);
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(' ');
  container.innerHTML =
    `<svg viewBox="0 0 ${width} ${height}" width="${width}" height="${height}" class="series-chart" data-points="${series.length}">` +
    `<polyline fill="none" stroke="#1976d2" stroke-width="2" points="${points}"/>` +
    (options.label ? `<text x="12" y="16" class="chart-label">${options.label}</text>` : '') +
    `</svg>`;
}
