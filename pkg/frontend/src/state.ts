// Single UI store. Threshold moves re-label the case purely client-side
// from the stored aggregate probability; no state change here ever issues
// a network call.

import type {
  CaseRecord,
  ClassLabel,
  ExplainResponse,
  PredictResponse,
} from "./api.js";

export interface CaseView {
  caseId: string;
  imageUrl: string | null;
  response: PredictResponse;
  threshold: number;
  balancedThreshold: number;
  explanation: ExplainResponse | null;
  explaining: boolean;
  overlayVisible: boolean;
  overlayOpacity: number;
  dispositions: { disposition: string; note: string }[];
}

export interface AppState {
  current: CaseView | null;
  history: CaseRecord[];
  error: string | null;
  busy: boolean;
}

export function initialState(): AppState {
  return { current: null, history: [], error: null, busy: false };
}

// Decision rule mirrored from the service: abnormal when p >= threshold.
export function labelFor(abnormalProbability: number, threshold: number): ClassLabel {
  return abnormalProbability >= threshold ? "abnormal" : "normal";
}

export function currentLabel(view: CaseView): ClassLabel {
  return labelFor(view.response.prediction.abnormal_probability, view.threshold);
}

export function setPrediction(
  state: AppState,
  response: PredictResponse,
  imageUrl: string | null,
): void {
  state.current = {
    caseId: response.case_id,
    imageUrl,
    response,
    threshold: response.threshold,
    balancedThreshold: response.balanced_threshold,
    explanation: null,
    explaining: false,
    overlayVisible: true,
    overlayOpacity: 0.4,
    dispositions: [],
  };
  state.error = null;
  state.busy = false;
}

export function setThreshold(state: AppState, threshold: number): void {
  if (state.current) state.current.threshold = threshold;
}

export function setExplaining(state: AppState, explaining: boolean): void {
  if (state.current) state.current.explaining = explaining;
}

export function setExplanation(state: AppState, explanation: ExplainResponse): void {
  if (state.current && state.current.caseId === explanation.case_id) {
    state.current.explanation = explanation;
    state.current.explaining = false;
  }
}

export function setOverlayVisible(state: AppState, visible: boolean): void {
  if (state.current) state.current.overlayVisible = visible;
}

export function setOverlayOpacity(state: AppState, opacity: number): void {
  if (state.current) state.current.overlayOpacity = opacity;
}

export function addDisposition(state: AppState, disposition: string, note: string): void {
  if (state.current) state.current.dispositions.push({ disposition, note });
}

export function setHistory(state: AppState, cases: CaseRecord[]): void {
  state.history = cases;
}

export function setError(state: AppState, message: string | null): void {
  state.error = message;
  state.busy = false;
}
