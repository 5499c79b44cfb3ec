/* Single-page application shell.
 *
 * State machine: one optional in-flight run; submitting while a run is in
 * flight is a no-op, so the same form can never race itself. Model list and
 * results are always rebuilt from fresh API payloads — on fetch failure the
 * sidebar is cleared before the retry banner shows, never left stale.
 */
import { Api, ApiError, ModelInfo, PredictAllEntry, PredictResult } from "./api.js";
import { renderDescription, renderResults, renderSidebar } from "./cards.js";
import { downloadResult, SaveFn, saveBlob } from "./download.js";

function describe(err: unknown): string {
  if (err instanceof ApiError) {
    if (err.status === 413) return "upload too large for the service";
    if (err.detail) return err.detail;
    return err.code;
  }
  return err instanceof Error ? err.message : String(err);
}

export class App {
  api: Api;
  root: HTMLElement;
  save: SaveFn;

  models: ModelInfo[] = [];
  selectedId: string | null = null;
  running = false;

  sidebar!: HTMLElement;
  description!: HTMLElement;
  banner!: HTMLElement;
  allToggle!: HTMLInputElement;
  fileInput!: HTMLInputElement;
  threshold!: HTMLInputElement;
  thresholdValue!: HTMLElement;
  runButton!: HTMLButtonElement;
  runError!: HTMLElement;
  grid!: HTMLElement;
  toast!: HTMLElement;

  constructor(root: HTMLElement, api: Api, save: SaveFn = saveBlob) {
    this.root = root;
    this.api = api;
    this.save = save;
    this.buildShell();
  }

  private buildShell(): void {
    this.root.innerHTML = `
      <aside class="panel">
        <h2>models</h2>
        <div class="banner hidden"></div>
        <nav class="sidebar"></nav>
        <p class="description"></p>
      </aside>
      <main class="panel">
        <form class="run-form">
          <label class="file-label">patch (.h5)
            <input type="file" class="file-input" accept=".h5" />
          </label>
          <label class="all-label">
            <input type="checkbox" class="all-toggle" /> all models
          </label>
          <label class="threshold-label">threshold
            <input type="range" class="threshold" min="0" max="1"
                   step="0.01" value="0.5" />
            <span class="threshold-value">0.5</span>
          </label>
          <button type="submit" class="run-btn">run</button>
        </form>
        <p class="run-error hidden"></p>
        <section class="results"></section>
        <div class="toast hidden"></div>
      </main>`;

    const q = <T extends Element>(sel: string) =>
      this.root.querySelector(sel) as T;
    this.sidebar = q(".sidebar");
    this.description = q(".description");
    this.banner = q(".banner");
    this.allToggle = q(".all-toggle");
    this.fileInput = q(".file-input");
    this.threshold = q(".threshold");
    this.thresholdValue = q(".threshold-value");
    this.runButton = q(".run-btn");
    this.runError = q(".run-error");
    this.grid = q(".results");
    this.toast = q(".toast");

    this.threshold.addEventListener("input", () => {
      this.thresholdValue.textContent = this.threshold.value;
    });
    q<HTMLFormElement>(".run-form").addEventListener("submit", (ev) => {
      ev.preventDefault();
      const file = this.fileInput.files && this.fileInput.files[0];
      if (!file) {
        this.showRunError("choose a .h5 patch first");
        return;
      }
      void this.run(file, file.name);
    });
  }

  async init(): Promise<void> {
    // Clear before fetching so a failure can never leave a stale list up.
    this.models = [];
    this.selectedId = null;
    renderSidebar(this.sidebar, [], null, () => undefined);
    renderDescription(this.description, null);
    try {
      this.models = await this.api.models();
    } catch (err) {
      this.showBanner(`could not reach the service (${describe(err)})`);
      return;
    }
    this.banner.classList.add("hidden");
    this.renderModels();
  }

  private showBanner(message: string): void {
    this.banner.replaceChildren();
    this.banner.appendChild(document.createTextNode(message + " "));
    const retry = document.createElement("button");
    retry.type = "button";
    retry.className = "retry-btn";
    retry.textContent = "retry";
    retry.addEventListener("click", () => void this.init());
    this.banner.appendChild(retry);
    this.banner.classList.remove("hidden");
  }

  private renderModels(): void {
    renderSidebar(this.sidebar, this.models, this.selectedId, (id) =>
      this.select(id),
    );
    const selected = this.models.find((m) => m.id === this.selectedId) ?? null;
    renderDescription(this.description, selected);
  }

  select(id: string): void {
    this.selectedId = id;
    this.renderModels();
  }

  private showRunError(message: string): void {
    this.runError.textContent = message;
    this.runError.classList.remove("hidden");
  }

  private showToast(message: string): void {
    this.toast.textContent = message;
    this.toast.classList.remove("hidden");
  }

  /* Run one prediction; ignored while a previous run is still in flight. */
  async run(file: Blob, filename: string): Promise<void> {
    if (this.running) return;
    if (!this.allToggle.checked && this.selectedId === null) {
      this.showRunError("select a model or switch to all-models mode");
      return;
    }
    this.running = true;
    this.runButton.disabled = true;
    this.runError.classList.add("hidden");
    this.toast.classList.add("hidden");
    const threshold = Number(this.threshold.value);
    try {
      let entries: PredictAllEntry[];
      if (this.allToggle.checked) {
        entries = await this.api.predictAll(file, filename, threshold);
      } else {
        entries = [
          await this.api.predict(file, filename, this.selectedId!, threshold),
        ];
      }
      renderResults(this.grid, entries, (r) => void this.download(r));
    } catch (err) {
      // Whole-run failure: message inline, no cards.
      renderResults(this.grid, [], () => undefined);
      this.showRunError(describe(err));
    } finally {
      this.running = false;
      this.runButton.disabled = false;
    }
  }

  async download(result: PredictResult): Promise<void> {
    try {
      await downloadResult(this.api, result, this.save);
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        this.showToast("export expired — run the prediction again to regenerate it");
        return;
      }
      this.showToast(describe(err));
    }
  }
}

export function mount(root: HTMLElement, base = ""): App {
  const app = new App(root, new Api(base));
  void app.init();
  return app;
}
