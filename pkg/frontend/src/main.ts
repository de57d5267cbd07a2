// Event wiring: one in-flight predict per upload, 409-aware explain polling,
// and pure client-side threshold exploration.

import {
  ApiError,
  explain,
  fetchCases,
  postDisposition,
  predict,
} from "./api.js";
import { render } from "./render.js";
import {
  AppState,
  addDisposition,
  initialState,
  setError,
  setExplaining,
  setExplanation,
  setHistory,
  setOverlayOpacity,
  setOverlayVisible,
  setPrediction,
  setThreshold,
} from "./state.js";

const EXPLAIN_POLL_MS = 1200;
const EXPLAIN_POLL_LIMIT = 30;

export function setupApp(): AppState {
  const state = initialState();
  let lastFile: File | null = null;

  const byId = <T extends HTMLElement>(id: string): T =>
    document.getElementById(id) as T;

  async function refreshHistory(): Promise<void> {
    try {
      const list = await fetchCases();
      setHistory(state, list.cases);
    } catch {
      // history is non-critical; leave the previous list in place
    }
    render(state);
  }

  async function upload(file: File): Promise<void> {
    lastFile = file;
    state.busy = true;
    state.error = null;
    render(state);
    try {
      const response = await predict(file);
      const imageUrl =
        typeof URL !== "undefined" && typeof URL.createObjectURL === "function"
          ? URL.createObjectURL(file)
          : null;
      setPrediction(state, response, imageUrl);
      render(state);
      void refreshHistory();
    } catch (err) {
      if (err instanceof ApiError) {
        setError(state, err.status === 400 ? `Unsupported file: ${err.message}` : err.message);
      } else {
        setError(state, "Service unreachable — check the server and retry.");
      }
      render(state);
    }
  }

  async function runExplain(): Promise<void> {
    const view = state.current;
    if (!view || view.explaining) return;
    setExplaining(state, true);
    render(state);
    for (let attempt = 0; attempt < EXPLAIN_POLL_LIMIT; attempt++) {
      try {
        const result = await explain(view.caseId);
        setExplanation(state, result);
        render(state);
        return;
      } catch (err) {
        if (err instanceof ApiError && err.status === 409) {
          await new Promise((resolve) => setTimeout(resolve, EXPLAIN_POLL_MS));
          continue;
        }
        setExplaining(state, false);
        setError(state, err instanceof Error ? err.message : "explanation failed");
        render(state);
        return;
      }
    }
    setExplaining(state, false);
    setError(state, "explanation still in progress; try again shortly");
    render(state);
  }

  async function submitDisposition(): Promise<void> {
    const view = state.current;
    if (!view) return;
    const choice = byId<HTMLInputElement>("disposition-confirm").checked
      ? "confirm"
      : "override";
    const note = byId<HTMLTextAreaElement>("disposition-note").value;
    try {
      await postDisposition(view.caseId, choice, note);
      addDisposition(state, choice, note);
      byId<HTMLTextAreaElement>("disposition-note").value = "";
      await refreshHistory();
    } catch (err) {
      setError(state, err instanceof Error ? err.message : "disposition failed");
      render(state);
    }
  }

  const fileInput = byId<HTMLInputElement>("file-input");
  fileInput.addEventListener("change", () => {
    if (fileInput.files && fileInput.files[0]) void upload(fileInput.files[0]);
  });

  const dropZone = byId<HTMLDivElement>("drop-zone");
  dropZone.addEventListener("dragover", (event) => {
    event.preventDefault();
    dropZone.classList.add("dragging");
  });
  dropZone.addEventListener("dragleave", () => dropZone.classList.remove("dragging"));
  dropZone.addEventListener("drop", (event) => {
    event.preventDefault();
    dropZone.classList.remove("dragging");
    const file = event.dataTransfer?.files?.[0];
    if (file) void upload(file);
  });

  byId<HTMLButtonElement>("retry-button").addEventListener("click", () => {
    if (lastFile) void upload(lastFile);
  });

  // Threshold exploration is pure client-side re-labeling: no network.
  const slider = byId<HTMLInputElement>("threshold-slider");
  slider.addEventListener("input", () => {
    setThreshold(state, Number(slider.value));
    render(state);
  });

  byId<HTMLButtonElement>("explain-button").addEventListener("click", () => void runExplain());

  const overlayToggle = byId<HTMLInputElement>("overlay-toggle");
  overlayToggle.addEventListener("change", () => {
    setOverlayVisible(state, overlayToggle.checked);
    render(state);
  });

  const opacitySlider = byId<HTMLInputElement>("opacity-slider");
  opacitySlider.addEventListener("input", () => {
    setOverlayOpacity(state, Number(opacitySlider.value));
    render(state);
  });

  byId<HTMLButtonElement>("disposition-submit").addEventListener(
    "click",
    () => void submitDisposition(),
  );

  render(state);
  void refreshHistory();
  return state;
}
