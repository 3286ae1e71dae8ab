/**
 * Page state as a pure projection of the last service responses.  No latent
 * math happens client-side: every stack row and every derived pixel shown in
 * a pane originates from something the service returned.
 */

import type { EditEntry, Instruction, SessionPayload } from "./api.js";

export interface SessionView {
  sessionId: string | null;
  catalog: Instruction[];
  edits: EditEntry[];
  turntableFrames: number;
  lastLatencyMs: number | null;
  error: string | null;
}

export function emptyView(): SessionView {
  return {
    sessionId: null,
    catalog: [],
    edits: [],
    turntableFrames: 0,
    lastLatencyMs: null,
    error: null,
  };
}

export function withCatalog(view: SessionView, catalog: Instruction[]): SessionView {
  return { ...view, catalog, error: null };
}

export function withError(view: SessionView, message: string): SessionView {
  return { ...view, error: message };
}

/** Fold a session payload (the response of create/apply/patch/get) into the view. */
export function fromSession(
  view: SessionView,
  payload: SessionPayload,
  latencyMs: number | null = view.lastLatencyMs,
): SessionView {
  return {
    ...view,
    sessionId: payload.session_id,
    edits: payload.edits.map((e: EditEntry) => ({ ...e })),
    turntableFrames: payload.turntable.frames,
    lastLatencyMs: latencyMs,
    error: null,
  };
}

export function groupByKind(catalog: Instruction[]): {
  global: Instruction[];
  local: Instruction[];
} {
  return {
    global: catalog.filter((i) => i.kind === "global"),
    local: catalog.filter((i) => i.kind === "local"),
  };
}
