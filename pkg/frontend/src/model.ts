// Pure session-view model: the UI state is a function of the server's
// SessionView history plus the user's unsubmitted chip choices.  Past
// rounds are immutable; errors land in a banner and never destroy state.

import type { ConfirmRequest, SessionView } from "./types.js";

export type ChipState = "yes" | "no" | "skip";

export interface RoundEntry {
  view: SessionView;
  submitted: { positive: string[]; negative: string[] } | null; // null = round 0
}

export interface Banner {
  code: string;
  message: string;
}

export interface UiSessionModel {
  baseQueryCount: number;
  current: SessionView | null;
  chips: Record<string, ChipState>;
  history: RoundEntry[];
  banner: Banner | null;
  locked: boolean; // server rejected this round (409); submit disabled
}

export function newModel(): UiSessionModel {
  return {
    baseQueryCount: 0,
    current: null,
    chips: {},
    history: [],
    banner: null,
    locked: false,
  };
}

function freshChips(view: SessionView): Record<string, ChipState> {
  const chips: Record<string, ChipState> = {};
  for (const word of view.candidates) chips[word] = "skip";
  return chips;
}

export function startSession(model: UiSessionModel, view: SessionView): UiSessionModel {
  return {
    baseQueryCount: view.queries.length,
    current: view,
    chips: freshChips(view),
    history: [{ view, submitted: null }],
    banner: null,
    locked: false,
  };
}

export function setChip(
  model: UiSessionModel,
  word: string,
  state: ChipState,
): UiSessionModel {
  if (!(word in model.chips)) return model;
  return { ...model, chips: { ...model.chips, [word]: state } };
}

const CYCLE: Record<ChipState, ChipState> = { skip: "yes", yes: "no", no: "skip" };

export function cycleChip(model: UiSessionModel, word: string): UiSessionModel {
  if (!(word in model.chips)) return model;
  return setChip(model, word, CYCLE[model.chips[word]]);
}

export function allRemainingNo(model: UiSessionModel): UiSessionModel {
  const chips = { ...model.chips };
  for (const word of Object.keys(chips)) {
    if (chips[word] === "skip") chips[word] = "no";
  }
  return { ...model, chips };
}

export function confirmationPayload(model: UiSessionModel): ConfirmRequest {
  if (!model.current) throw new Error("no active session");
  const positive: string[] = [];
  const negative: string[] = [];
  for (const word of model.current.candidates) {
    if (model.chips[word] === "yes") positive.push(word);
    else if (model.chips[word] === "no") negative.push(word);
  }
  return { positive, negative, round: model.current.round };
}

export function applyConfirmResult(
  model: UiSessionModel,
  submitted: { positive: string[]; negative: string[] },
  view: SessionView,
): UiSessionModel {
  return {
    ...model,
    current: view,
    chips: freshChips(view),
    history: [...model.history, { view, submitted }],
    banner: null,
    locked: false,
  };
}

export function applyError(
  model: UiSessionModel,
  err: { status?: number; code?: string; message?: string },
): UiSessionModel {
  return {
    ...model,
    banner: {
      code: err.code ?? "UnknownError",
      message: err.message ?? "request failed",
    },
    locked: model.locked || err.status === 409,
  };
}

export function clearBanner(model: UiSessionModel): UiSessionModel {
  return { ...model, banner: null };
}

/** Queries appended by confirmations, distinguished from the user's own. */
export function appendedQueries(model: UiSessionModel): string[] {
  if (!model.current) return [];
  return model.current.queries.slice(model.baseQueryCount);
}

/** Demo-mode rank trajectory, one point per completed round. */
export function rankSeries(model: UiSessionModel): { round: number; rank: number }[] {
  const out: { round: number; rank: number }[] = [];
  for (const entry of model.history) {
    if (entry.view.target_rank !== undefined) {
      out.push({ round: entry.view.round, rank: entry.view.target_rank });
    }
  }
  return out;
}

export function canSubmit(model: UiSessionModel): boolean {
  return model.current !== null && !model.current.done && !model.locked;
}
