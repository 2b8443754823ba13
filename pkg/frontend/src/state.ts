// Shared view state. Panels read from here and re-render on change; fetches
// carry sequence numbers so a stale response can never overwrite a newer one.

import { ConnectionDraft } from './api';

export interface ViewState {
  selectedRoads: string[];
  activeDemandText: string;
  sliderStep: number;
  horizonSteps: number;
  draftConnections: ConnectionDraft[];
}

export function initialViewState(): ViewState {
  return {
    selectedRoads: [],
    activeDemandText: '',
    sliderStep: 0,
    horizonSteps: 1,
    draftConnections: [],
  };
}

/** Clamp the time slider into the horizon returned by the service. */
export function setSlider(state: ViewState, step: number): ViewState {
  const bounded = Math.min(Math.max(0, Math.floor(step)), state.horizonSteps - 1);
  return { ...state, sliderStep: bounded };
}

/** Record a new forecast horizon, keeping the slider in range. */
export function setHorizon(state: ViewState, horizonSteps: number): ViewState {
  if (horizonSteps < 1) {
    throw new Error(`horizon must be at least 1, got ${horizonSteps}`);
  }
  return setSlider({ ...state, horizonSteps }, state.sliderStep);
}

/** Draft road endpoints must be existing nodes with positive distances. */
export function setDraftConnections(
  state: ViewState,
  connections: ConnectionDraft[],
  knownNodes: string[],
): ViewState {
  for (const conn of connections) {
    if (!knownNodes.includes(conn.node)) {
      throw new Error(`unknown road ${conn.node}`);
    }
    if (!(conn.distance > 0)) {
      throw new Error(`distance to ${conn.node} must be positive`);
    }
  }
  return { ...state, draftConnections: connections };
}

/** Monotonic sequence numbers; apply() ignores responses that arrive after
 * a newer request has been issued. */
export class RequestSequencer {
  private issued = 0;
  private applied = 0;

  next(): number {
    return ++this.issued;
  }

  apply(seq: number, fn: () => void): boolean {
    if (seq <= this.applied) {
      return false;
    }
    this.applied = seq;
    fn();
    return true;
  }
}
