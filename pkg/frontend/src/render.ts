// DOM rendering: one render(state) pass rewrites the dynamic regions.
// The displayed label is always derived from the stored aggregate and the
// slider's current threshold, matching the service's >= rule.

import type { AppState, CaseView } from "./state.js";
import { currentLabel } from "./state.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function pct(x: number): string {
  return `${(100 * x).toFixed(1)}%`;
}

function renderError(state: AppState): void {
  const box = el<HTMLDivElement>("error-box");
  if (state.error) {
    box.hidden = false;
    el<HTMLSpanElement>("error-text").textContent = state.error;
  } else {
    box.hidden = true;
  }
}

function renderBadge(view: CaseView): void {
  const label = currentLabel(view);
  const badge = el<HTMLSpanElement>("label-badge");
  badge.textContent = label.toUpperCase();
  badge.className = `badge badge-${label}`;
  el<HTMLSpanElement>("aggregate-value").textContent = pct(
    view.response.prediction.abnormal_probability,
  );
  const bar = el<HTMLDivElement>("aggregate-bar");
  bar.style.width = pct(view.response.prediction.abnormal_probability);
  const flags = [];
  if (view.response.prediction.stain_fallback) flags.push("stain fallback");
  if (view.response.prediction.patch_fallback) flags.push("whole-image patch");
  el<HTMLSpanElement>("fallback-flags").textContent = flags.join(" · ");
}

function renderThreshold(view: CaseView): void {
  const slider = el<HTMLInputElement>("threshold-slider");
  if (document.activeElement !== slider) slider.value = String(view.threshold);
  el<HTMLSpanElement>("threshold-value").textContent = view.threshold.toFixed(2);
  const marker = el<HTMLDivElement>("balanced-marker");
  marker.style.left = pct(view.balancedThreshold);
  marker.title = `balanced threshold ${view.balancedThreshold.toFixed(2)}`;
  el<HTMLSpanElement>("balanced-value").textContent = view.balancedThreshold.toFixed(2);
}

function renderGallery(view: CaseView): void {
  const gallery = el<HTMLDivElement>("patch-gallery");
  gallery.textContent = "";
  const { patch_probabilities, patch_bboxes } = view.response.prediction;
  patch_probabilities.forEach((probs, i) => {
    const card = document.createElement("div");
    card.className = "patch-card";

    if (view.explanation && view.overlayVisible && view.explanation.patch_overlays[i]) {
      const img = document.createElement("img");
      img.className = "overlay-thumb";
      img.src = view.explanation.patch_overlays[i];
      img.style.opacity = String(view.overlayOpacity);
      img.alt = `patch ${i + 1} activation overlay`;
      card.appendChild(img);
    }

    const chip = document.createElement("div");
    chip.className = "patch-prob";
    chip.textContent = `patch ${i + 1}: ${pct(probs[0])} abnormal`;
    card.appendChild(chip);

    const bbox = document.createElement("div");
    bbox.className = "patch-bbox";
    bbox.textContent = `bbox ${patch_bboxes[i].join(", ")}`;
    card.appendChild(bbox);

    gallery.appendChild(card);
  });
}

function renderExplain(view: CaseView): void {
  const button = el<HTMLButtonElement>("explain-button");
  button.disabled = view.explaining;
  button.textContent = view.explaining ? "Explaining…" : "Explain";
  el<HTMLDivElement>("explain-spinner").hidden = !view.explaining;

  const composite = el<HTMLImageElement>("composite-overlay");
  if (view.explanation && view.overlayVisible) {
    composite.hidden = false;
    composite.src = view.explanation.composite_overlay;
    composite.style.opacity = String(view.overlayOpacity);
  } else {
    composite.hidden = true;
  }
  const original = el<HTMLImageElement>("original-image");
  if (view.imageUrl) {
    original.hidden = false;
    original.src = view.imageUrl;
  } else {
    original.hidden = true;
  }
}

function renderHistory(state: AppState): void {
  const list = el<HTMLUListElement>("history-list");
  list.textContent = "";
  for (const record of state.history) {
    const item = document.createElement("li");
    const latest = record.dispositions[record.dispositions.length - 1];
    const review = latest ? ` — ${latest.disposition}${latest.note ? `: ${latest.note}` : ""}` : "";
    item.textContent =
      `${record.case_id} · ${record.prediction.label} ` +
      `(${pct(record.prediction.abnormal_probability)})${review}`;
    list.appendChild(item);
  }
  el<HTMLSpanElement>("history-count").textContent = String(state.history.length);
}

export function render(state: AppState): void {
  renderError(state);
  el<HTMLDivElement>("busy-indicator").hidden = !state.busy;
  const result = el<HTMLDivElement>("result-card");
  if (state.current) {
    result.hidden = false;
    renderBadge(state.current);
    renderThreshold(state.current);
    renderGallery(state.current);
    renderExplain(state.current);
  } else {
    result.hidden = true;
  }
  renderHistory(state);
}
