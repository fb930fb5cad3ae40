// DOM wiring: renders the session model and forwards user actions to the
// service.  Views update only from server responses (no optimistic UI).

import { ApiError, ObjseekClient } from "./api.js";
import { renderRankChart } from "./chart.js";
import {
  UiSessionModel,
  allRemainingNo,
  applyConfirmResult,
  applyError,
  canSubmit,
  confirmationPayload,
  cycleChip,
  newModel,
  rankSeries,
  startSession,
} from "./model.js";

let client = new ObjseekClient("");
let model: UiSessionModel = newModel();
let busy = false;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function chipClass(state: string): string {
  return `chip chip-${state}`;
}

function render(): void {
  const banner = el<HTMLDivElement>("banner");
  if (model.banner) {
    banner.textContent = `${model.banner.code}: ${model.banner.message}`;
    banner.hidden = false;
  } else {
    banner.hidden = true;
  }

  const session = el<HTMLDivElement>("session");
  session.hidden = model.current === null;
  if (!model.current) return;
  const view = model.current;

  el<HTMLSpanElement>("round-label").textContent =
    `round ${view.round} / ${view.max_rounds}` + (view.done ? " (done)" : "");

  const queryChips = el<HTMLDivElement>("query-chips");
  queryChips.replaceChildren();
  view.queries.forEach((q, i) => {
    const chip = document.createElement("span");
    chip.className = i < model.baseQueryCount ? "chip chip-query" : "chip chip-appended";
    chip.textContent = q;
    queryChips.appendChild(chip);
  });

  const candidates = el<HTMLDivElement>("candidate-chips");
  candidates.replaceChildren();
  for (const word of view.candidates) {
    const chip = document.createElement("button");
    chip.type = "button";
    chip.className = chipClass(model.chips[word] ?? "skip");
    chip.textContent = word;
    chip.title = "click to cycle: skip -> yes -> no";
    chip.addEventListener("click", () => {
      model = cycleChip(model, word);
      render();
    });
    candidates.appendChild(chip);
  }

  const results = el<HTMLDivElement>("results");
  results.replaceChildren();
  for (const img of view.top_images) {
    const card = document.createElement("div");
    card.className = "card";
    if (img.url) {
      const thumb = document.createElement("img");
      thumb.src = img.url;
      thumb.alt = img.id;
      card.appendChild(thumb);
    }
    const title = document.createElement("div");
    title.className = "card-title";
    title.textContent = `${img.id}  (${img.score.toFixed(4)})`;
    card.appendChild(title);
    const tags = document.createElement("div");
    tags.className = "card-tags";
    for (const obj of img.objects) {
      const tag = document.createElement("span");
      tag.className = "tag";
      tag.textContent = obj;
      tags.appendChild(tag);
    }
    card.appendChild(tags);
    results.appendChild(card);
  }

  const chart = el<HTMLDivElement>("chart");
  const series = rankSeries(model);
  chart.innerHTML = view.mode === "demo" ? renderRankChart(series) : "";

  const historyNode = el<HTMLOListElement>("history");
  historyNode.replaceChildren();
  for (const entry of model.history) {
    if (!entry.submitted) continue;
    const item = document.createElement("li");
    const pos = entry.submitted.positive.map((w) => `+${w}`).join(" ");
    const neg = entry.submitted.negative.map((w) => `-${w}`).join(" ");
    const rank = entry.view.target_rank !== undefined
      ? ` | rank ${entry.view.target_rank}` : "";
    item.textContent =
      `round ${entry.view.round}: ${[pos, neg].filter(Boolean).join(" ") || "(all skipped)"}${rank}`;
    const positives = new Set(entry.submitted.positive);
    if (positives.size) item.className = "history-has-positives";
    historyNode.appendChild(item);
  }

  el<HTMLButtonElement>("submit").disabled = busy || !canSubmit(model);
  el<HTMLButtonElement>("all-no").disabled = busy || !canSubmit(model);
}

async function onStart(event: Event): Promise<void> {
  event.preventDefault();
  if (busy) return;
  busy = true;
  try {
    client = new ObjseekClient(el<HTMLInputElement>("base-url").value.trim());
    const queries = el<HTMLTextAreaElement>("queries")
      .value.split("\n").map((q) => q.trim()).filter(Boolean);
    const mode = el<HTMLSelectElement>("mode").value as "live" | "demo";
    const targetId = el<HTMLInputElement>("target-id").value.trim();
    const view = await client.createSession({
      queries,
      mode,
      ...(mode === "demo" && targetId ? { target_id: targetId } : {}),
    });
    model = startSession(model, view);
  } catch (err) {
    model = applyError(model, err instanceof ApiError ? err : { message: String(err) });
  } finally {
    busy = false;
    render();
  }
}

async function onSubmit(): Promise<void> {
  if (busy || !model.current || !canSubmit(model)) return;
  busy = true;
  render();
  const payload = confirmationPayload(model);
  try {
    const view = await client.confirmRound(model.current.session_id, payload);
    model = applyConfirmResult(
      model, { positive: payload.positive, negative: payload.negative }, view);
  } catch (err) {
    model = applyError(model, err instanceof ApiError ? err : { message: String(err) });
  } finally {
    busy = false;
    render();
  }
}

function init(): void {
  el<HTMLFormElement>("start-form").addEventListener("submit", onStart);
  el<HTMLButtonElement>("submit").addEventListener("click", onSubmit);
  el<HTMLButtonElement>("all-no").addEventListener("click", () => {
    model = allRemainingNo(model);
    render();
  });
  el<HTMLSelectElement>("mode").addEventListener("change", () => {
    el<HTMLInputElement>("target-id").parentElement!.hidden =
      el<HTMLSelectElement>("mode").value !== "demo";
  });
  render();
}

window.addEventListener("DOMContentLoaded", init);
