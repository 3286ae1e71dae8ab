/**
 * Interactive editor page: pick or seed an asset, choose a trained
 * instruction, apply it, scrub per-edit strength sliders, and compare the
 * base and edited turntables side by side.
 *
 * All state is a projection of service responses; mutations are serialized
 * so at most one is on the wire per session, and slider scrubbing is
 * debounced to bound request rate.
 */

import { ApiClient } from "./api.js";
import { DEBOUNCE_MS, Debounced, debounce } from "./debounce.js";
import { TurntablePane } from "./panes.js";
import {
  SessionView,
  emptyView,
  fromSession,
  groupByKind,
  withCatalog,
  withError,
} from "./state.js";

export interface AppOptions {
  /** Frames per turntable loop; defaults to the server's descriptor. */
  frames?: number;
  /** Render resolution; defaults to the server-side configuration. */
  res?: number;
  /** Strength-slider debounce interval. */
  debounceMs?: number;
}

export class App {
  readonly basePane: TurntablePane;
  readonly headPane: TurntablePane;
  view: SessionView = emptyView();

  // serialize mutations: at most one in flight per session
  private chain: Promise<void> = Promise.resolve();
  private scrubbers = new Map<number, Debounced<[number]>>();

  constructor(
    private readonly root: Document,
    private readonly client: ApiClient,
    private readonly opts: AppOptions = {},
  ) {
    this.basePane = new TurntablePane(this.el<HTMLImageElement>("#pane-base img"));
    this.headPane = new TurntablePane(this.el<HTMLImageElement>("#pane-head img"));
    this.el<HTMLButtonElement>("#sample-button").addEventListener("click", () => {
      const prompt = this.el<HTMLInputElement>("#sample-prompt").value.trim();
      if (prompt !== "") void this.createFromPrompt(prompt);
    });
  }

  async start(): Promise<void> {
    await this.refreshCatalog();
  }

  /** All queued work done; tests await this between steps. */
  idle(): Promise<void> {
    return this.chain;
  }

  async refreshCatalog(): Promise<void> {
    try {
      this.view = withCatalog(this.view, await this.client.loadCatalog());
    } catch (err) {
      this.view = withError(this.view, describe(err));
    }
    this.renderCatalog();
    this.renderStatus();
  }

  createFromPrompt(prompt: string): Promise<void> {
    return this.enqueue(async () => {
      const payload = await this.client.createSession({ prompt });
      this.view = fromSession(this.view, payload);
      const frames = await this.fetchTurntable();
      // empty stack: the head turntable is the base turntable
      this.basePane.setFrames(frames);
      this.headPane.setFrames(frames);
      this.renderAll();
    });
  }

  applyInstruction(text: string, eta = 1.0): Promise<void> {
    return this.enqueue(async () => {
      const sessionId = this.requireSession();
      const t0 = performance.now();
      const payload = await this.client.applyEdit(sessionId, text, eta);
      this.view = fromSession(this.view, payload, performance.now() - t0);
      await this.refreshHead();
      this.renderAll();
    });
  }

  /** Slider handler: updates the readout immediately, commits debounced. */
  scrubStrength(index: number, eta: number): void {
    let scrub = this.scrubbers.get(index);
    if (scrub === undefined) {
      scrub = debounce((value: number) => {
        void this.enqueue(() => this.commitStrength(index, value));
      }, this.opts.debounceMs ?? DEBOUNCE_MS);
      this.scrubbers.set(index, scrub);
    }
    scrub(eta);
  }

  private async commitStrength(index: number, eta: number): Promise<void> {
    const sessionId = this.requireSession();
    const t0 = performance.now();
    const payload = await this.client.setStrength(sessionId, index, eta);
    this.view = fromSession(this.view, payload, performance.now() - t0);
    await this.refreshHead();
    this.renderAll();
  }

  private async refreshHead(): Promise<void> {
    this.headPane.setFrames(await this.fetchTurntable());
  }

  private async fetchTurntable(): Promise<Uint8Array[]> {
    const sessionId = this.requireSession();
    const count = this.opts.frames ?? this.view.turntableFrames;
    const frames: Uint8Array[] = [];
    for (let k = 0; k < count; k++) {
      frames.push(
        await this.client.turntableFrame(sessionId, k, {
          frames: count,
          res: this.opts.res ?? null,
        }),
      );
    }
    return frames;
  }

  private requireSession(): string {
    if (this.view.sessionId === null) throw new Error("no active session");
    return this.view.sessionId;
  }

  private enqueue(fn: () => Promise<void>): Promise<void> {
    const run = async () => {
      try {
        await fn();
      } catch (err) {
        this.view = withError(this.view, describe(err));
        this.renderStatus();
      }
    };
    this.chain = this.chain.then(run);
    return this.chain;
  }

  // -- rendering -----------------------------------------------------------

  private renderAll(): void {
    this.renderCatalog();
    this.renderStack();
    this.renderStatus();
  }

  private renderCatalog(): void {
    const host = this.el("#catalog");
    host.textContent = "";
    if (this.view.catalog.length === 0) {
      if (this.view.error !== null) {
        const banner = this.root.createElement("div");
        banner.className = "banner";
        banner.append("service unreachable ");
        const retry = this.root.createElement("button");
        retry.type = "button";
        retry.className = "retry";
        retry.textContent = "retry";
        retry.addEventListener("click", () => void this.enqueue(() => this.refreshCatalog()));
        banner.append(retry);
        host.append(banner);
      } else {
        const note = this.root.createElement("p");
        note.className = "empty";
        note.textContent = "no trained instructions";
        host.append(note);
      }
      return;
    }
    const groups = groupByKind(this.view.catalog);
    for (const [label, items] of [
      ["global", groups.global],
      ["local", groups.local],
    ] as const) {
      if (items.length === 0) continue;
      const heading = this.root.createElement("h2");
      heading.textContent = label;
      const list = this.root.createElement("div");
      list.className = "group";
      list.dataset.kind = label;
      for (const item of items) {
        const button = this.root.createElement("button");
        button.type = "button";
        button.className = "instruction";
        button.textContent = item.text;
        if (item.target_description !== null) button.title = item.target_description;
        button.disabled = this.view.sessionId === null;
        button.addEventListener("click", () => void this.applyInstruction(item.text));
        list.append(button);
      }
      host.append(heading, list);
    }
  }

  private renderStack(): void {
    const host = this.el("#stack");
    host.textContent = "";
    this.view.edits.forEach((entry, index) => {
      const row = this.root.createElement("li");
      row.dataset.index = String(index);
      const label = this.root.createElement("span");
      label.className = "instruction";
      label.textContent = entry.instruction;
      const slider = this.root.createElement("input");
      slider.type = "range";
      slider.min = "0";
      slider.max = "2";
      slider.step = "0.01";
      slider.value = String(entry.eta);
      slider.setAttribute("aria-label", `strength of edit ${index + 1}`);
      const readout = this.root.createElement("output");
      readout.textContent = entry.eta.toFixed(2);
      slider.addEventListener("input", () => {
        const eta = Number.parseFloat(slider.value);
        readout.textContent = eta.toFixed(2);
        this.scrubStrength(index, eta);
      });
      row.append(label, slider, readout);
      host.append(row);
    });
  }

  private renderStatus(): void {
    const status = this.el("#status");
    if (this.view.error !== null) {
      status.textContent = this.view.error;
      status.className = "error";
    } else if (this.view.lastLatencyMs !== null) {
      status.textContent = `last edit: ${this.view.lastLatencyMs.toFixed(0)} ms`;
      status.className = "";
    } else {
      status.textContent = "";
      status.className = "";
    }
  }

  private el<T extends Element = HTMLElement>(selector: string): T {
    const found = this.root.querySelector(selector);
    if (found === null) throw new Error(`page is missing ${selector}`);
    return found as T;
  }
}

function describe(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}
