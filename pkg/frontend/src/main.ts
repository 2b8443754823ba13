// Wires the panels together against a running service.

import { ApiClient, NetworkInfo, QueryReply } from './api';
import { ChatPanel, renderChat } from './chat';
import { heatmapData, renderHeatmap } from './heatmap';
import { persistedLayout } from './layout';
import { initialViewState, setHorizon, setSlider, ViewState } from './state';
import { renderSeriesChart, WhatIfPanel } from './whatif';

const api = new ApiClient('');

async function boot(): Promise<void> {
  const heatmapEl = document.getElementById('heatmap')!;
  const chatLogEl = document.getElementById('chat-log')!;
  const chatInputEl = document.getElementById('chat-input') as HTMLInputElement;
  const chatSendEl = document.getElementById('chat-send')!;
  const sliderEl = document.getElementById('time-slider') as HTMLInputElement;
  const trendEl = document.getElementById('trend-chart')!;
  const whatifFormEl = document.getElementById('whatif-form') as HTMLFormElement;
  const whatifChartEl = document.getElementById('whatif-chart')!;
  const whatifStatusEl = document.getElementById('whatif-status')!;

  let state: ViewState = initialViewState();
  let network: NetworkInfo;
  try {
    network = await api.getNetwork();
  } catch (error) {
    heatmapEl.innerHTML = `<p class="error">Service unreachable: ${String(error)}</p>`;
    return;
  }
  const positions = persistedLayout(network, window.localStorage);
  let predictions: Record<string, number[]> = {};
  let routeNodes: string[] | null = null;

  const redraw = () => {
    renderHeatmap(heatmapEl, network, positions, heatmapData(predictions, state.sliderStep), {
      highlightPath: routeNodes,
    });
  };

  const applyReply = (reply: QueryReply) => {
    predictions = reply.heatmap
      ? Object.fromEntries(Object.entries(reply.heatmap).map(([road, v]) => {
          const series = reply.predictions[road];
          return [road, series ?? [v]];
        }))
      : reply.predictions;
    routeNodes = reply.route_nodes;
    const horizon = Math.max(1, ...Object.values(predictions).map((s) => s.length));
    state = setHorizon(state, horizon);
    sliderEl.max = String(horizon - 1);
    const [firstRoad] = Object.keys(reply.predictions);
    if (firstRoad) {
      renderSeriesChart(trendEl, reply.predictions[firstRoad], { label: `Road ${firstRoad}` });
    }
    redraw();
  };

  const chat = new ChatPanel(api, (entries) => {
    renderChat(chatLogEl, entries);
    const last = entries[entries.length - 1];
    if (last?.reply) {
      applyReply(last.reply);
    }
  });

  chatSendEl.addEventListener('click', () => {
    void chat.send(chatInputEl.value);
    chatInputEl.value = '';
  });
  chatInputEl.addEventListener('keydown', (event) => {
    if (event.key === 'Enter') {
      void chat.send(chatInputEl.value);
      chatInputEl.value = '';
    }
  });

  sliderEl.addEventListener('input', () => {
    state = setSlider(state, Number(sliderEl.value));
    redraw();
  });

  const whatif = new WhatIfPanel(api, (result) => {
    if (result.error) {
      whatifStatusEl.textContent = result.error;
      whatifChartEl.innerHTML = '';
    } else if (result.reply) {
      whatifStatusEl.textContent =
        `Estimated from roads ${result.reply.selected_nodes.join(', ')}`;
      renderSeriesChart(whatifChartEl, result.reply.estimated_series, { label: 'Proposed road' });
    }
  });

  whatifFormEl.addEventListener('submit', (event) => {
    event.preventDefault();
    const data = new FormData(whatifFormEl);
    const endpoints = String(data.get('endpoints') ?? '')
      .split(',')
      .map((s) => s.trim())
      .filter(Boolean);
    const distance = Number(data.get('distance') ?? 1);
    const horizon = Number(data.get('horizon') ?? 12);
    void whatif.submit(endpoints.map((node) => ({ node, distance })), horizon);
  });

  // initial view: short-term forecast for every road
  const replies = await Promise.all(
    network.node_ids.map((road) => api.getShortPrediction(road).catch(() => null)),
  );
  predictions = Object.fromEntries(
    replies.filter((r) => r !== null).map((r) => [r!.road, r!.series]),
  );
  const horizon = Math.max(1, ...Object.values(predictions).map((s) => s.length));
  state = setHorizon(state, horizon);
  sliderEl.max = String(horizon - 1);
  redraw();
}

void boot();
