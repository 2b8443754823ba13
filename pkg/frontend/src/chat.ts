// Chat-style demand panel: free text in, demand echo + suggestions out.
// Service errors (including the 400 clarification replies) are rendered
// inline, never swallowed.

import { ApiClient, QueryReply, ServiceError, SuggestionInfo } from './api';
import { RequestSequencer } from './state';

export interface ChatEntry {
  role: 'user' | 'service' | 'error';
  text: string;
  reply?: QueryReply;
}

export function describeSuggestion(suggestion: SuggestionInfo): string {
  if (suggestion.kind === 'route') {
    const path = (suggestion.payload.path as string[]) ?? [];
    const time = suggestion.payload.total_predicted_time as number;
    return `Route: ${path.map((r) => `Road ${r}`).join(' → ')} (predicted ${time.toFixed(1)})`;
  }
  if (suggestion.kind === 'alert') {
    const windows = (suggestion.payload.windows as Array<Record<string, unknown>>) ?? [];
    if (windows.length === 0) {
      return 'No congestion expected in the requested window.';
    }
    return windows
      .map((w) => `Road ${w.road}: congested steps ${w.start}–${w.stop}` +
        ` (severity ${(w.severity as number).toFixed(2)})`)
      .join('; ');
  }
  const payload = suggestion.payload;
  if (payload.estimated_series) {
    const series = payload.estimated_series as number[];
    return `Estimated series for the proposed road (${series.length} steps), ` +
      `based on roads ${(payload.selected_nodes as string[]).join(', ')}.`;
  }
  return `Summary: ${JSON.stringify(payload.mean_predicted ?? payload)}`;
}

export class ChatPanel {
  readonly entries: ChatEntry[] = [];
  private readonly sequencer = new RequestSequencer();

  constructor(
    private readonly api: ApiClient,
    private readonly onChange: (entries: ChatEntry[]) => void,
  ) {}

  async send(text: string): Promise<void> {
    if (!text.trim()) {
      return;
    }
    this.entries.push({ role: 'user', text });
    this.onChange(this.entries);
    const seq = this.sequencer.next();
    try {
      const reply = await this.api.postQuery(text);
      this.sequencer.apply(seq, () => {
        this.entries.push({
          role: 'service',
          text: reply.suggestions.map(describeSuggestion).join('\n') ||
            `Forecast ready for ${Object.keys(reply.predictions).length} road(s).`,
          reply,
        });
        this.onChange(this.entries);
      });
    } catch (error) {
      this.sequencer.apply(seq, () => {
        const text = error instanceof ServiceError
          ? `Service error (${error.status}): ${error.message}`
          : `Request failed: ${String(error)}`;
        this.entries.push({ role: 'error', text });
        this.onChange(this.entries);
      });
    }
  }
}

export function renderChat(container: HTMLElement, entries: ChatEntry[]): void {
  container.innerHTML = entries
    .map((entry) =>
      `<div class="chat-entry chat-${entry.role}">` +
      `<span class="chat-role">${entry.role}</span>` +
      `<span class="chat-text">${escapeHtml(entry.text)}</span></div>`)
    .join('');
}

function escapeHtml(text: string): string {
  return text.replace(/&/g, '&amp;').replace(/</g, '&lt;').replace(/>/g, '&gt;');
}
