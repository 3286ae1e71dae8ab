import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { ApiClient, FetchLike } from "../src/api.js";
import { App } from "../src/app.js";
import { PAGE_BODY } from "../src/page.js";
import { Recording, loadRecording, recordedFetch } from "./replay.js";

const catalog = loadRecording("catalog.json");
const editScrub = loadRecording("edit_scrub.json");
const errors = loadRecording("errors.json");

function makeApp(recording: Recording) {
  document.body.innerHTML = PAGE_BODY;
  const replay = recordedFetch(recording);
  const client = new ApiClient("", replay.fetch);
  const app = new App(document, client, { frames: 4, res: 16, debounceMs: 100 });
  return { app, client, replay };
}

function q<T extends Element>(selector: string): T {
  const found = document.querySelector(selector);
  expect(found, selector).not.toBeNull();
  return found as T;
}

function catalogButton(text: string): HTMLButtonElement {
  const buttons = [...document.querySelectorAll<HTMLButtonElement>("#catalog button.instruction")];
  const match = buttons.find((b) => b.textContent === text);
  expect(match, `catalog button "${text}"`).toBeDefined();
  return match as HTMLButtonElement;
}

function scrubTo(value: string): void {
  const slider = q<HTMLInputElement>("#stack li input[type=range]");
  slider.value = value;
  slider.dispatchEvent(new Event("input"));
}

describe("editor page against recorded interactions", () => {
  beforeEach(() => {
    vi.useFakeTimers();
  });
  afterEach(() => {
    vi.useRealTimers();
  });

  it("lists the trained prompts grouped by kind", async () => {
    const { app } = makeApp(editScrub);
    await app.start();

    const globals = [...document.querySelectorAll("#catalog .group[data-kind=global] button")];
    const locals = [...document.querySelectorAll("#catalog .group[data-kind=local] button")];
    expect(globals.map((b) => b.textContent)).toEqual(["shift the colors"]);
    expect(locals.map((b) => b.textContent)).toEqual(["give it a santa hat"]);
    // no session yet: picker is visible but inert
    expect(globals.every((b) => (b as HTMLButtonElement).disabled)).toBe(true);
  });

  it("applying an instruction updates both panes and grows the stack", async () => {
    const { app } = makeApp(editScrub);
    await app.start();

    q<HTMLButtonElement>("#sample-button").click();
    await app.idle();
    expect(app.basePane.frameBytes()).toHaveLength(4);
    expect(app.headPane.frameBytes()).toEqual(app.basePane.frameBytes());
    expect(q<HTMLImageElement>("#pane-base img").src).toMatch(/^data:image\/png;base64,/);

    const baseFrames = app.basePane.frameBytes().map((f) => f.slice());
    catalogButton("shift the colors").click();
    await app.idle();

    expect(app.basePane.frameBytes()).toEqual(baseFrames);
    expect(app.headPane.frameBytes()).not.toEqual(baseFrames);
    const rows = [...document.querySelectorAll("#stack li")];
    expect(rows).toHaveLength(1);
    expect(rows[0]?.querySelector(".instruction")?.textContent).toBe("shift the colors");
    expect(rows[0]?.querySelector("input")?.value).toBe("1");
    expect(q("#status").textContent).toMatch(/last edit: \d+ ms/);
  });

  it("scrubbing the strength from 1 to 0 restores the base turntable bitwise", async () => {
    const { app, client, replay } = makeApp(editScrub);
    await app.start();
    q<HTMLButtonElement>("#sample-button").click();
    await app.idle();
    const baseFrames = app.basePane.frameBytes().map((f) => f.slice());
    catalogButton("shift the colors").click();
    await app.idle();

    // rapid burst: three slider moves inside the debounce window become one PATCH
    scrubTo("0.9");
    await vi.advanceTimersByTimeAsync(30);
    scrubTo("0.7");
    await vi.advanceTimersByTimeAsync(30);
    scrubTo("0.5");
    await vi.advanceTimersByTimeAsync(100);
    await app.idle();
    expect(app.view.edits).toEqual([{ instruction: "shift the colors", eta: 0.5 }]);
    expect(app.headPane.frameBytes()).not.toEqual(baseFrames);

    scrubTo("0");
    await vi.advanceTimersByTimeAsync(100);
    await app.idle();
    expect(app.view.edits).toEqual([{ instruction: "shift the colors", eta: 0.0 }]);
    expect(app.headPane.frameBytes()).toEqual(baseFrames);
    expect(q<HTMLInputElement>("#stack li input").value).toBe("0");

    // the on-page stack is exactly what the service reports
    const sessionId = app.view.sessionId;
    expect(sessionId).not.toBeNull();
    const reported = await client.getSession(sessionId as string);
    expect(app.view.edits).toEqual(reported.edits);
    expect(replay.remaining()).toBe(0);
  });

  it("an unknown instruction shows the service detail and leaves the stack alone", async () => {
    const { app, replay } = makeApp(errors);
    await app.createFromPrompt("demo blob");
    await app.applyInstruction("paint it neon");

    const status = q("#status");
    expect(status.className).toBe("error");
    expect(status.textContent).toContain("shift the colors");
    expect(app.view.edits).toEqual([]);
    expect(document.querySelectorAll("#stack li")).toHaveLength(0);
    expect(replay.remaining()).toBe(0);
  });

  it("a dead service shows a retry banner that reloads the catalog", async () => {
    document.body.innerHTML = PAGE_BODY;
    const instructionsOnly: Recording = {
      interactions: catalog.interactions.filter(
        (i) => i.request.path === "/v1/instructions",
      ),
    };
    const replay = recordedFetch(instructionsOnly);
    let failures = 1;
    const flaky: FetchLike = (url, init) => {
      if (failures > 0) {
        failures -= 1;
        return Promise.reject(new TypeError("fetch failed"));
      }
      return replay.fetch(url, init);
    };
    const app = new App(document, new ApiClient("", flaky));
    await app.start();

    expect(q("#status").textContent).toContain("fetch failed");
    const retry = q<HTMLButtonElement>("#catalog .banner button.retry");
    retry.click();
    await app.idle();
    expect(document.querySelectorAll("#catalog button.instruction")).toHaveLength(2);
    expect(q("#status").textContent).toBe("");
  });
});
