/**
 * DOM layer. All harmony/session logic lives in state.ts and audio.ts; this
 * module only renders and wires events, so the vitest suite can drive it
 * inside jsdom with a faked fetch and a silent player.
 */

import {
  AnnotationRecord,
  ApiError,
  PaletteEntry,
  Prompt,
  Suggestion,
  fetchHealth,
  fetchPalette,
  fetchPrompts,
  fetchSuggestions,
  postAnnotation,
} from "./api";
import { ChordPlayer } from "./audio";
import { RetryQueue } from "./queue";
import {
  AnnotationSession,
  PromptState,
  SessionIdentity,
  buildRecord,
  canSubmit,
  chooseFirst,
  toggleAlternative,
  validIdentity,
} from "./state";

export const GRID_COLUMNS = 12;
const SUGGEST_FETCH_K = 12;
const SUGGEST_SHOW_K = 4;

export interface AppDeps {
  root: HTMLElement;
  player: ChordPlayer;
  api?: {
    palette: typeof fetchPalette;
    prompts: typeof fetchPrompts;
    health: typeof fetchHealth;
    suggest: typeof fetchSuggestions;
    submit: typeof postAnnotation;
  };
}

interface AppContext {
  root: HTMLElement;
  player: ChordPlayer;
  api: Required<AppDeps>["api"];
  palette: PaletteEntry[];
  pitches: Map<string, number[]>;
  prompts: Prompt[];
  queue: RetryQueue;
  session: AnnotationSession | null;
  armed: string | null;
  composeProgression: string[];
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  if (text !== undefined) node.textContent = text;
  return node;
}

function playToken(ctx: AppContext, chord: string): void {
  const pitchClasses = ctx.pitches.get(chord);
  if (pitchClasses) ctx.player.playChord(pitchClasses);
}

/**
 * The 48-chord grid. Arrow keys move focus between neighbors so every chord
 * is reachable from the keyboard; Enter/Space activate like any button.
 */
export function paletteGrid(
  palette: PaletteEntry[],
  onActivate: (chord: string) => void,
  marks: Map<string, string> = new Map(),
): HTMLElement {
  const grid = el("div", { class: "palette", role: "grid", "aria-label": "chord palette" });
  palette.forEach((entry) => {
    const button = el("button", {
      class: "chord",
      type: "button",
      "data-chord": entry.chord,
    });
    button.append(el("span", { class: "chord-name" }, entry.chord));
    const mark = marks.get(entry.chord);
    if (mark !== undefined) {
      button.append(el("span", { class: "mark" }, mark));
      button.classList.add(mark === "1st" ? "is-first" : "is-alt");
    }
    button.addEventListener("click", () => onActivate(entry.chord));
    grid.append(button);
  });
  grid.addEventListener("keydown", (event) => {
    const keys: Record<string, number> = {
      ArrowLeft: -1,
      ArrowRight: 1,
      ArrowUp: -GRID_COLUMNS,
      ArrowDown: GRID_COLUMNS,
    };
    const delta = keys[event.key];
    const active = document.activeElement;
    if (delta === undefined || !(active instanceof HTMLButtonElement)) return;
    const buttons = Array.from(grid.querySelectorAll("button"));
    const next = buttons.indexOf(active) + delta;
    if (next >= 0 && next < buttons.length) {
      event.preventDefault();
      (buttons[next] as HTMLButtonElement).focus();
    }
  });
  return grid;
}

function progressionChips(ctx: AppContext, chords: string[]): HTMLElement {
  const row = el("div", { class: "progression" });
  for (const chord of chords) {
    const chip = el("button", { class: "chip", type: "button" }, chord);
    chip.addEventListener("click", () => playToken(ctx, chord));
    row.append(chip);
  }
  const play = el("button", { class: "play-all", type: "button" }, "Play progression");
  play.addEventListener("click", () => {
    const stacks = chords
      .map((chord) => ctx.pitches.get(chord))
      .filter((p): p is number[] => p !== undefined);
    ctx.player.playProgression(stacks);
  });
  row.append(play);
  return row;
}

function banner(kind: "info" | "error", message: string): HTMLElement {
  return el("p", { class: `banner ${kind}`, role: "status" }, message);
}

// --- identity gate ---------------------------------------------------------

function renderIdentity(ctx: AppContext): void {
  const view = el("section", { class: "identity" });
  view.append(el("h2", {}, "Who is annotating?"));
  const idLabel = el("label", { for: "annotator-id" }, "Annotator id");
  const idInput = el("input", { id: "annotator-id", type: "text", autocomplete: "off" });
  const expLabel = el("label", { for: "expertise" }, "Musical expertise (0-100)");
  const slider = el("input", {
    id: "expertise",
    type: "range",
    min: "0",
    max: "100",
    step: "1",
    value: "0",
  });
  const sliderValue = el("output", { for: "expertise" }, "0");
  slider.addEventListener("input", () => {
    sliderValue.textContent = slider.value;
  });
  const start = el("button", { id: "start", type: "button", disabled: "" }, "Start");
  const noPrompts = ctx.prompts.length === 0;
  if (noPrompts) {
    view.append(banner("info", "no annotation prompts are configured; use compose mode"));
  }
  idInput.addEventListener("input", () => {
    if (!noPrompts && idInput.value.trim().length > 0) start.removeAttribute("disabled");
    else start.setAttribute("disabled", "");
  });
  start.addEventListener("click", () => {
    const identity: SessionIdentity = {
      annotatorId: idInput.value,
      expertise: Number(slider.value),
    };
    if (!validIdentity(identity)) return;
    ctx.session = new AnnotationSession(ctx.prompts, identity);
    renderAnnotate(ctx);
  });
  view.append(idLabel, idInput, expLabel, slider, sliderValue, start);
  swap(ctx, view);
}

// --- annotate flow ----------------------------------------------------------

function selectionMarks(state: PromptState): Map<string, string> {
  const marks = new Map<string, string>();
  if (state.firstChoice !== null) marks.set(state.firstChoice, "1st");
  state.alternatives.forEach((chord) => marks.set(chord, "alt"));
  return marks;
}

function renderAnnotate(ctx: AppContext, note?: HTMLElement): void {
  const session = ctx.session;
  if (session === null) {
    renderIdentity(ctx);
    return;
  }
  if (session.done) {
    renderDone(ctx);
    return;
  }
  const state = session.current;
  const view = el("section", { class: "annotate" });
  view.append(
    el("h2", {}, `Prompt ${session.position + 1} of ${session.prompts.length}`),
    el("p", {}, "Listen, then pick the chord you would play next, plus one or two alternatives."),
    progressionChips(ctx, state.prompt.progression),
  );
  if (note) view.append(note);

  view.append(paletteGrid(ctx.palette, (chord) => {
    playToken(ctx, chord);
    ctx.armed = chord;
    renderAnnotate(ctx);
  }, selectionMarks(state)));

  const controls = el("div", { class: "controls" });
  const armedLabel = el("span", { class: "armed" }, ctx.armed ?? "click a chord to audition it");
  const setFirst = el("button", { id: "set-first", type: "button" }, "Set as first choice");
  const setAlt = el("button", { id: "toggle-alt", type: "button" }, "Add / remove alternative");
  if (ctx.armed === null) {
    setFirst.setAttribute("disabled", "");
    setAlt.setAttribute("disabled", "");
  }
  setFirst.addEventListener("click", () => {
    if (ctx.armed === null) return;
    session.current = chooseFirst(session.current, ctx.armed);
    renderAnnotate(ctx);
  });
  setAlt.addEventListener("click", () => {
    if (ctx.armed === null) return;
    session.current = toggleAlternative(session.current, ctx.armed);
    renderAnnotate(ctx);
  });
  controls.append(armedLabel, setFirst, setAlt);
  view.append(controls);

  const picks = el("p", { class: "picks" });
  picks.append(
    el("span", {}, `First choice: ${state.firstChoice ?? "none"}`),
    el("span", {}, ` Alternatives: ${state.alternatives.join(", ") || "none"}`),
  );
  view.append(picks);

  const submit = el("button", { id: "submit", type: "button" }, "Submit and continue");
  if (!canSubmit(state)) submit.setAttribute("disabled", "");
  submit.addEventListener("click", () => void submitCurrent(ctx));
  view.append(submit);
  swap(ctx, view);
}

/**
 * Submit is pessimistic: the button only advances after the server confirms
 * the record is on disk (201, or 409 for an earlier identical answer).
 * Retryable failures park the record in the queue and keep the UI on the
 * same prompt with a retry banner.
 */
async function submitCurrent(ctx: AppContext): Promise<void> {
  const session = ctx.session;
  if (session === null || session.done) return;
  const paletteSet = new Set(ctx.pitches.keys());
  let record: AnnotationRecord;
  try {
    record = buildRecord(session.identity, session.current, paletteSet);
  } catch (err) {
    renderAnnotate(ctx, banner("error", String((err as Error).message)));
    return;
  }
  try {
    await ctx.api.submit(record);
  } catch (err) {
    if (err instanceof ApiError && err.status < 500) {
      renderAnnotate(ctx, banner("error", `rejected: ${err.message}`));
    } else {
      ctx.queue.enqueue(record);
      renderAnnotate(ctx, retryBanner(ctx));
    }
    return;
  }
  ctx.armed = null;
  session.advance();
  renderAnnotate(ctx);
}

function retryBanner(ctx: AppContext): HTMLElement {
  const wrap = banner("error", `offline: ${ctx.queue.size} answer(s) waiting to send `);
  const retry = el("button", { id: "retry", type: "button" }, "Retry now");
  retry.addEventListener("click", () => {
    void ctx.queue.flush().then((report) => {
      const session = ctx.session;
      if (session !== null && report.delivered > 0) {
        ctx.armed = null;
        for (let i = 0; i < report.delivered; i += 1) session.advance();
      }
      renderAnnotate(
        ctx,
        report.pending > 0 ? retryBanner(ctx) : banner("info", "answers delivered"),
      );
    });
  });
  wrap.append(retry);
  return wrap;
}

function renderDone(ctx: AppContext): void {
  const view = el("section", { class: "done" });
  view.append(
    el("h2", {}, "All prompts answered"),
    el("p", {}, "Thanks! Your answers are saved. Try compose mode from the menu."),
  );
  swap(ctx, view);
}

// --- compose mode -----------------------------------------------------------

/** Model output can include tokens outside the palette (UNK, song boundary); only playable palette chords are offered. */
export function playableSuggestions(
  suggestions: Suggestion[],
  palette: ReadonlySet<string>,
  limit: number = SUGGEST_SHOW_K,
): Suggestion[] {
  return suggestions.filter((s) => palette.has(s.chord)).slice(0, limit);
}

function renderCompose(ctx: AppContext): void {
  const view = el("section", { class: "compose" });
  view.append(
    el("h2", {}, "Compose"),
    el("p", {}, "Build a progression; after each chord the model suggests what could come next."),
  );
  if (ctx.composeProgression.length > 0) {
    view.append(progressionChips(ctx, ctx.composeProgression));
    const reset = el("button", { id: "reset", type: "button" }, "Start over");
    reset.addEventListener("click", () => {
      ctx.composeProgression = [];
      renderCompose(ctx);
    });
    view.append(reset);
  } else {
    view.append(el("p", {}, "Pick any chord from the palette to begin."));
  }

  const suggestBox = el("div", { class: "suggestions", "aria-live": "polite" });
  view.append(suggestBox);

  view.append(paletteGrid(ctx.palette, (chord) => {
    playToken(ctx, chord);
    ctx.composeProgression = [...ctx.composeProgression, chord];
    renderCompose(ctx);
  }));
  swap(ctx, view);

  if (ctx.composeProgression.length === 0) return;
  void ctx.api
    .suggest(ctx.composeProgression, SUGGEST_FETCH_K)
    .then((suggestions) => {
      const playable = playableSuggestions(suggestions, new Set(ctx.pitches.keys()));
      suggestBox.append(el("h3", {}, "Model suggestions"));
      for (const suggestion of playable) {
        const row = el("button", {
          class: "suggestion",
          type: "button",
          "data-chord": suggestion.chord,
        });
        row.append(
          el("span", { class: "chord-name" }, suggestion.chord),
          el("span", { class: "prob" }, `${(suggestion.probability * 100).toFixed(1)}%`),
        );
        const bar = el("span", { class: "bar" });
        bar.style.width = `${Math.round(suggestion.probability * 100)}%`;
        row.append(bar);
        // Accepting a suggestion appends it and re-queries for the next step.
        row.addEventListener("click", () => {
          playToken(ctx, suggestion.chord);
          ctx.composeProgression = [...ctx.composeProgression, suggestion.chord];
          renderCompose(ctx);
        });
        suggestBox.append(row);
      }
    })
    .catch((err) => {
      if (err instanceof ApiError && err.status === 503) {
        suggestBox.append(banner("error", "suggestions unavailable: no model loaded"));
      } else {
        suggestBox.append(banner("error", `suggestions failed: ${(err as Error).message}`));
      }
    });
}

// --- shell -------------------------------------------------------------------

function swap(ctx: AppContext, view: HTMLElement): void {
  const main = ctx.root.querySelector("main");
  if (main === null) return;
  main.replaceChildren(view);
}

export async function startApp(deps: AppDeps): Promise<AppContext> {
  const api = deps.api ?? {
    palette: fetchPalette,
    prompts: fetchPrompts,
    health: fetchHealth,
    suggest: fetchSuggestions,
    submit: postAnnotation,
  };
  const [palette, prompts, health] = await Promise.all([
    api.palette(),
    api.prompts(),
    api.health(),
  ]);
  const ctx: AppContext = {
    root: deps.root,
    player: deps.player,
    api,
    palette,
    pitches: new Map(palette.map((entry) => [entry.chord, entry.pitch_classes])),
    prompts,
    queue: new RetryQueue((record) => api.submit(record)),
    session: null,
    armed: null,
    composeProgression: [],
  };

  const header = el("header", {});
  header.append(el("h1", {}, "chordspace annotator"));
  const nav = el("nav", {});
  const annotateTab = el("button", { id: "nav-annotate", type: "button" }, "Annotate");
  const composeTab = el("button", { id: "nav-compose", type: "button" }, "Compose");
  annotateTab.addEventListener("click", () => renderAnnotate(ctx));
  composeTab.addEventListener("click", () => renderCompose(ctx));
  nav.append(annotateTab, composeTab);
  header.append(nav);
  header.append(
    el(
      "span",
      { id: "health", class: health.model_loaded ? "ok" : "warn" },
      health.model_loaded ? "model loaded" : "no model: suggestions disabled",
    ),
  );
  ctx.root.replaceChildren(header, el("main", {}));

  if (prompts.length > 0) renderIdentity(ctx);
  else renderCompose(ctx);
  return ctx;
}
