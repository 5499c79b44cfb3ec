/* DOM builders for the model sidebar and the result grid.
 *
 * Pure construction: everything rendered is taken verbatim from the API
 * payloads, and the grid preserves the response array order so side-by-side
 * comparison means what the service said, in the order it said it.
 */
import {
  isEntryError,
  ModelInfo,
  PredictAllEntry,
  PredictResult,
} from "./api.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function pngSrc(b64: string): string {
  return `data:image/png;base64,${b64}`;
}

export function modelCard(
  model: ModelInfo,
  selected: boolean,
  onSelect: (id: string) => void,
): HTMLElement {
  const card = el("button", selected ? "model-card selected" : "model-card");
  card.type = "button";
  card.dataset.modelId = model.id;
  card.appendChild(el("span", "model-name", model.name));
  card.appendChild(el("span", "model-arch", model.architecture));
  if (model.f1 !== null) {
    card.appendChild(el("span", "model-f1", `F1 ${model.f1}`));
  }
  card.addEventListener("click", () => onSelect(model.id));
  return card;
}

/* Rebuild the sidebar; the card list mirrors `models` one-to-one in order. */
export function renderSidebar(
  container: HTMLElement,
  models: ModelInfo[],
  selectedId: string | null,
  onSelect: (id: string) => void,
): void {
  container.replaceChildren();
  for (const m of models) {
    container.appendChild(modelCard(m, m.id === selectedId, onSelect));
  }
}

export function renderDescription(
  container: HTMLElement,
  model: ModelInfo | null,
): void {
  container.textContent = model ? model.description : "";
}

export function resultCard(
  result: PredictResult,
  onDownload: (r: PredictResult) => void,
): HTMLElement {
  const card = el("div", "result-card");
  card.dataset.modelId = result.model_id;
  card.appendChild(el("h3", "result-title", result.model_id));

  const row = el("div", "result-images");
  for (const [label, b64] of [
    ["input", result.rgb_png],
    ["mask", result.mask_png],
    ["overlay", result.overlay_png],
  ] as const) {
    const fig = el("figure", `result-${label}`);
    const img = document.createElement("img");
    img.src = pngSrc(b64);
    img.alt = `${result.model_id} ${label}`;
    fig.appendChild(img);
    fig.appendChild(el("figcaption", "", label));
    row.appendChild(fig);
  }
  card.appendChild(row);

  const stats = el("p", "result-stats");
  stats.appendChild(el("span", "fraction-label", "landslide fraction "));
  // Shown verbatim; the UI does no arithmetic on predictions.
  stats.appendChild(
    el("span", "fraction-value", String(result.landslide_fraction)),
  );
  stats.appendChild(
    el("span", "threshold-value", ` @ threshold ${result.threshold}`),
  );
  card.appendChild(stats);

  const dl = el("button", "download-btn", "download probabilities");
  dl.type = "button";
  dl.addEventListener("click", () => onDownload(result));
  card.appendChild(dl);
  return card;
}

export function errorCard(modelId: string, message: string): HTMLElement {
  const card = el("div", "result-card result-error");
  card.dataset.modelId = modelId;
  card.appendChild(el("h3", "result-title", modelId));
  card.appendChild(el("p", "error-message", message));
  return card;
}

/* One card per entry, in the exact order the API returned them. */
export function renderResults(
  container: HTMLElement,
  entries: PredictAllEntry[],
  onDownload: (r: PredictResult) => void,
): void {
  container.replaceChildren();
  for (const entry of entries) {
    container.appendChild(
      isEntryError(entry)
        ? errorCard(entry.model_id, entry.error)
        : resultCard(entry, onDownload),
    );
  }
}
