// UI controller: every rendered number or badge comes from a service
// response; the transcript is always rebuilt from GET /sessions/{id}.

import { ApiClient, ApiError, SessionView } from "./api.js";
import { colorForRound, drawComposite } from "./overlay.js";

export class App {
  view: SessionView | null = null;
  busy = false;
  overlayVisible = new Map<number, boolean>();

  constructor(
    private doc: Document,
    readonly api: ApiClient,
  ) {}

  private el<T extends HTMLElement>(id: string): T {
    const node = this.doc.getElementById(id);
    if (!node) throw new Error(`missing element #${id}`);
    return node as T;
  }

  bind(): void {
    this.el<HTMLButtonElement>("start-seed-btn").addEventListener("click", () => {
      const seed = parseInt(this.el<HTMLInputElement>("seed-input").value || "0", 10);
      void this.startFromSeed(seed);
    });
    this.el<HTMLButtonElement>("start-file-btn").addEventListener("click", () => {
      const input = this.el<HTMLInputElement>("image-file");
      const file = input.files && input.files[0];
      if (file) void this.startFromFile(file);
      else this.toast("choose an image file first");
    });
    this.el<HTMLButtonElement>("submit-btn").addEventListener("click", () => {
      void this.submitRound(
        this.el<HTMLInputElement>("query-input").value,
        parseInt(this.el<HTMLSelectElement>("ref-picker").value, 10),
      );
    });
    const slider = this.el<HTMLInputElement>("beta-slider");
    slider.addEventListener("change", () => void this.setBeta(parseFloat(slider.value)));
    const jcm = this.el<HTMLInputElement>("jcm-toggle");
    jcm.addEventListener("change", () => void this.setJcm(jcm.checked));
  }

  async restoreFromHash(): Promise<void> {
    const sid = (this.doc.defaultView?.location.hash || "").replace(/^#/, "");
    if (sid) {
      try {
        this.view = await this.api.getSession(sid);
        await this.render();
      } catch (e) {
        this.toast(this.describe(e));
      }
    }
  }

  async startFromSeed(seed: number): Promise<void> {
    try {
      const created = await this.api.createFromSeed(seed);
      await this.adopt(created.session_id);
    } catch (e) {
      this.toast(this.describe(e));
    }
  }

  async startFromFile(file: File): Promise<void> {
    try {
      const b64 = await fileToBase64(file);
      const created = await this.api.createFromImage(b64);
      await this.adopt(created.session_id);
    } catch (e) {
      this.toast(this.describe(e));
    }
  }

  private async adopt(sessionId: string): Promise<void> {
    const win = this.doc.defaultView;
    if (win) win.location.hash = sessionId;
    this.overlayVisible.clear();
    this.view = await this.api.getSession(sessionId);
    await this.render();
  }

  async submitRound(queryText: string, refRound: number): Promise<void> {
    if (!this.view) {
      this.toast("start a session first");
      return;
    }
    if (this.busy) {
      this.toast("round in progress");
      return;
    }
    this.busy = true;
    this.el<HTMLButtonElement>("submit-btn").disabled = true;
    this.el<HTMLSelectElement>("ref-picker").classList.remove("error");
    try {
      await this.api.postRound(this.view.session_id, queryText, refRound);
      this.view = await this.api.getSession(this.view.session_id);
      await this.render();
      this.el<HTMLInputElement>("query-input").value = "";
    } catch (e) {
      if (e instanceof ApiError && e.status === 409) this.toast("round in progress");
      else if (e instanceof ApiError && e.status === 422) {
        this.el<HTMLSelectElement>("ref-picker").classList.add("error");
        this.toast(`invalid reference round: ${e.detail}`);
      } else this.toast(this.describe(e));
    } finally {
      this.busy = false;
      this.el<HTMLButtonElement>("submit-btn").disabled = false;
    }
  }

  async setBeta(beta: number): Promise<void> {
    if (!this.view) return;
    try {
      const cfg = await this.api.patchConfig(this.view.session_id, { beta });
      this.view.config = cfg;
      await this.render();
    } catch (e) {
      this.toast(this.describe(e));
    }
  }

  async setJcm(on: boolean): Promise<void> {
    if (!this.view) return;
    try {
      const cfg = await this.api.patchConfig(this.view.session_id, { jcm: on });
      this.view.config = cfg;
      await this.render();
    } catch (e) {
      this.toast(this.describe(e));
      await this.render(); // snap the checkbox back to server truth
    }
  }

  toggleOverlay(roundIndex: number, visible: boolean): void {
    this.overlayVisible.set(roundIndex, visible);
    void this.redrawCanvas();
  }

  // Rebuild all session-dependent DOM from the current view.
  async render(): Promise<void> {
    const view = this.view;
    if (!view) return;
    this.el("session-label").textContent = `session ${view.session_id.slice(0, 8)} (${view.width}x${view.height})`;

    const slider = this.el<HTMLInputElement>("beta-slider");
    slider.value = String(view.config.beta);
    this.el("beta-value").textContent = view.config.beta.toFixed(2);
    this.el<HTMLInputElement>("jcm-toggle").checked = view.config.jcm;

    const picker = this.el<HTMLSelectElement>("ref-picker");
    picker.innerHTML = "";
    const none = this.doc.createElement("option");
    none.value = "0";
    none.textContent = "no reference";
    picker.appendChild(none);
    for (const r of view.rounds) {
      const opt = this.doc.createElement("option");
      opt.value = String(r.round_index);
      opt.textContent = `round ${r.round_index}`;
      picker.appendChild(opt);
    }

    const list = this.el("transcript");
    list.innerHTML = "";
    for (const r of view.rounds) {
      if (!this.overlayVisible.has(r.round_index)) this.overlayVisible.set(r.round_index, true);
      const li = this.doc.createElement("li");
      li.dataset.round = String(r.round_index);
      li.dataset.corrected = String(r.corrected);
      li.dataset.segEmitted = String(r.seg_emitted);
      const swatch = this.doc.createElement("span");
      swatch.className = "swatch";
      swatch.style.backgroundColor = colorForRound(r.round_index);
      li.appendChild(swatch);
      const main = this.doc.createElement("div");
      const who = r.ref_round > 0 ? ` (ref round ${r.ref_round})` : "";
      const query = this.doc.createElement("p");
      query.className = "query";
      query.textContent = `#${r.round_index}${who}: ${r.query_text}`;
      const answer = this.doc.createElement("p");
      answer.className = "answer";
      answer.textContent = r.answer_text;
      main.appendChild(query);
      main.appendChild(answer);
      const badges = this.doc.createElement("p");
      badges.className = "badges";
      if (r.q !== null) {
        const qb = this.doc.createElement("span");
        qb.className = "badge q-badge";
        qb.textContent = `q=${r.q.toFixed(3)}`;
        badges.appendChild(qb);
      }
      if (r.corrected) {
        const cb = this.doc.createElement("span");
        cb.className = "badge corrected-badge";
        cb.textContent = "corrected";
        badges.appendChild(cb);
      }
      if (!r.seg_emitted) {
        const nb = this.doc.createElement("span");
        nb.className = "badge noseg-badge";
        nb.textContent = "no [SEG]";
        badges.appendChild(nb);
      }
      if (r.ref_empty) {
        const eb = this.doc.createElement("span");
        eb.className = "badge refempty-badge";
        eb.textContent = "empty reference";
        badges.appendChild(eb);
      }
      const area = this.doc.createElement("span");
      area.className = "badge area-badge";
      area.textContent = `${r.mask_area} px`;
      badges.appendChild(area);
      main.appendChild(badges);
      li.appendChild(main);
      const toggle = this.doc.createElement("input");
      toggle.type = "checkbox";
      toggle.className = "overlay-toggle";
      toggle.checked = this.overlayVisible.get(r.round_index) ?? true;
      toggle.addEventListener("change", () => this.toggleOverlay(r.round_index, toggle.checked));
      li.appendChild(toggle);
      list.appendChild(li);
    }
    await this.redrawCanvas();
  }

  private async redrawCanvas(): Promise<void> {
    const view = this.view;
    if (!view) return;
    const canvas = this.el<HTMLCanvasElement>("canvas");
    const layers = view.rounds.map((r) => ({
      maskBase64: r.mask_base64,
      color: colorForRound(r.round_index),
      visible: this.overlayVisible.get(r.round_index) ?? true,
    }));
    try {
      await drawComposite(canvas, view.width, view.height, view.image_base64, layers);
    } catch {
      // canvas-free environment: state is still reflected in the DOM
    }
  }

  toast(message: string): void {
    this.el("toast").textContent = message;
  }

  private describe(e: unknown): string {
    if (e instanceof ApiError) return `${e.status}: ${e.detail}`;
    return e instanceof Error ? e.message : String(e);
  }
}

export function fileToBase64(file: File): Promise<string> {
  return new Promise((resolve, reject) => {
    const reader = new FileReader();
    reader.onload = () => {
      const url = String(reader.result || "");
      resolve(url.replace(/^data:[^,]*,/, ""));
    };
    reader.onerror = () => reject(new Error("could not read file"));
    reader.readAsDataURL(file);
  });
}

export function initApp(doc: Document, baseUrl = ""): App {
  const app = new App(doc, new ApiClient(baseUrl));
  app.bind();
  void app.restoreFromHash();
  return app;
}

declare global {
  interface Window {
    roundsegApp?: App;
  }
}

if (typeof window !== "undefined" && typeof process === "undefined") {
  window.addEventListener("DOMContentLoaded", () => {
    window.roundsegApp = initApp(document, "");
  });
}
