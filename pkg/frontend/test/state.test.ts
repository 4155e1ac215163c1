import { describe, expect, it } from "vitest";

import { Prompt } from "../src/api";
import {
  AnnotationSession,
  MAX_ALTERNATIVES,
  buildRecord,
  canSubmit,
  chooseFirst,
  emptyPromptState,
  toggleAlternative,
  validIdentity,
} from "../src/state";

const PROMPT: Prompt = { prompt_id: "p1", progression: ["C", "G", "Am"] };
const PALETTE = new Set(["C", "Dm", "Em", "F", "G", "Am", "G7", "Em7"]);
const IDENTITY = { annotatorId: "ann-1", expertise: 40 };

/** Deterministic 32-bit PRNG so the invariant walk is reproducible. */
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

describe("prompt selection state", () => {
  it("starts empty and not submittable", () => {
    const state = emptyPromptState(PROMPT);
    expect(state.firstChoice).toBeNull();
    expect(state.alternatives).toEqual([]);
    expect(canSubmit(state)).toBe(false);
  });

  it("needs a first choice plus at least one alternative", () => {
    let state = chooseFirst(emptyPromptState(PROMPT), "F");
    expect(canSubmit(state)).toBe(false);
    state = toggleAlternative(state, "Am");
    expect(canSubmit(state)).toBe(true);
    state = toggleAlternative(state, "Dm");
    expect(canSubmit(state)).toBe(true);
  });

  it("caps alternatives at two and ignores the overflow click", () => {
    let state = emptyPromptState(PROMPT);
    state = toggleAlternative(state, "F");
    state = toggleAlternative(state, "Am");
    state = toggleAlternative(state, "Dm");
    expect(state.alternatives).toEqual(["F", "Am"]);
  });

  it("re-toggling an alternative removes it", () => {
    let state = toggleAlternative(emptyPromptState(PROMPT), "F");
    state = toggleAlternative(state, "F");
    expect(state.alternatives).toEqual([]);
  });

  it("keeps the first choice and alternatives disjoint", () => {
    let state = chooseFirst(emptyPromptState(PROMPT), "F");
    state = toggleAlternative(state, "F");
    expect(state.alternatives).toEqual([]);
    state = toggleAlternative(state, "Am");
    state = chooseFirst(state, "Am");
    expect(state.firstChoice).toBe("Am");
    expect(state.alternatives).toEqual([]);
  });

  it("never exceeds two alternatives under a random click walk", () => {
    const rand = mulberry32(20260814);
    const chords = [...PALETTE];
    let state = emptyPromptState(PROMPT);
    for (let step = 0; step < 500; step += 1) {
      const chord = chords[Math.floor(rand() * chords.length)] as string;
      state = rand() < 0.3 ? chooseFirst(state, chord) : toggleAlternative(state, chord);
      expect(state.alternatives.length).toBeLessThanOrEqual(MAX_ALTERNATIVES);
      expect(new Set(state.alternatives).size).toBe(state.alternatives.length);
      if (state.firstChoice !== null) {
        expect(state.alternatives).not.toContain(state.firstChoice);
      }
    }
  });
});

describe("identity", () => {
  it("requires a non-blank id and an integer rating in range", () => {
    expect(validIdentity(IDENTITY)).toBe(true);
    expect(validIdentity({ annotatorId: "  ", expertise: 40 })).toBe(false);
    expect(validIdentity({ annotatorId: "x", expertise: -1 })).toBe(false);
    expect(validIdentity({ annotatorId: "x", expertise: 101 })).toBe(false);
    expect(validIdentity({ annotatorId: "x", expertise: 33.5 })).toBe(false);
    expect(validIdentity({ annotatorId: "x", expertise: 0 })).toBe(true);
    expect(validIdentity({ annotatorId: "x", expertise: 100 })).toBe(true);
  });
});

describe("buildRecord", () => {
  function ready() {
    let state = chooseFirst(emptyPromptState(PROMPT), "F");
    return toggleAlternative(state, "Am");
  }

  it("assembles the exact wire shape", () => {
    const record = buildRecord(IDENTITY, ready(), PALETTE);
    expect(record).toEqual({
      prompt_id: "p1",
      progression: ["C", "G", "Am"],
      annotator_id: "ann-1",
      expertise: 40,
      first_choice: "F",
      alternatives: ["Am"],
    });
  });

  it("trims the annotator id", () => {
    const record = buildRecord({ annotatorId: "  ann-2  ", expertise: 5 }, ready(), PALETTE);
    expect(record.annotator_id).toBe("ann-2");
  });

  it("rejects an incomplete selection", () => {
    const state = chooseFirst(emptyPromptState(PROMPT), "F");
    expect(() => buildRecord(IDENTITY, state, PALETTE)).toThrow(/alternatives/);
  });

  it("rejects chords outside the palette", () => {
    let state = chooseFirst(emptyPromptState(PROMPT), "F");
    state = toggleAlternative(state, "Bdim");
    expect(() => buildRecord(IDENTITY, state, PALETTE)).toThrow(/palette/);
  });

  it("rejects prompts with a non-served progression length", () => {
    const odd: Prompt = { prompt_id: "bad", progression: ["C", "G"] };
    let state = chooseFirst(emptyPromptState(odd), "F");
    state = toggleAlternative(state, "Am");
    expect(() => buildRecord(IDENTITY, state, PALETTE)).toThrow(/3 or 6/);
  });
});

describe("AnnotationSession", () => {
  const prompts: Prompt[] = [
    { prompt_id: "p1", progression: ["C", "G", "Am"] },
    { prompt_id: "p2", progression: ["C", "G", "Am", "F", "C", "G"] },
  ];

  it("walks prompts in served order and only advances when told", () => {
    const session = new AnnotationSession(prompts, IDENTITY);
    expect(session.position).toBe(0);
    expect(session.current.prompt.prompt_id).toBe("p1");
    session.advance();
    expect(session.current.prompt.prompt_id).toBe("p2");
    expect(session.done).toBe(false);
    session.advance();
    expect(session.done).toBe(true);
    session.advance();
    expect(session.done).toBe(true);
  });

  it("resets the selection for each new prompt", () => {
    const session = new AnnotationSession(prompts, IDENTITY);
    session.current = chooseFirst(session.current, "F");
    session.advance();
    expect(session.current.firstChoice).toBeNull();
    expect(session.current.alternatives).toEqual([]);
  });

  it("refuses an empty prompt list", () => {
    expect(() => new AnnotationSession([], IDENTITY)).toThrow(/no prompts/);
  });
});
