/**
 * Annotation session state machine, kept free of DOM so it can be tested
 * directly. One session = one annotator id + one expertise rating, then the
 * prompts in the exact order the server listed them.
 */

import { AnnotationRecord, Prompt } from "./api";

export const MAX_ALTERNATIVES = 2;
export const PROMPT_LENGTHS = [3, 6];

export interface PromptState {
  prompt: Prompt;
  firstChoice: string | null;
  alternatives: string[];
}

export function emptyPromptState(prompt: Prompt): PromptState {
  return { prompt, firstChoice: null, alternatives: [] };
}

/** Selecting the first choice also evicts it from the alternatives. */
export function chooseFirst(state: PromptState, chord: string): PromptState {
  return {
    prompt: state.prompt,
    firstChoice: chord,
    alternatives: state.alternatives.filter((c) => c !== chord),
  };
}

/**
 * Add or remove an alternative. Re-toggling removes; adding past the limit
 * or shadowing the first choice is ignored, so the invariant that at most
 * two alternatives exist and never overlap the first choice always holds.
 */
export function toggleAlternative(state: PromptState, chord: string): PromptState {
  if (state.alternatives.includes(chord)) {
    return { ...state, alternatives: state.alternatives.filter((c) => c !== chord) };
  }
  if (state.alternatives.length >= MAX_ALTERNATIVES || chord === state.firstChoice) {
    return state;
  }
  return { ...state, alternatives: [...state.alternatives, chord] };
}

/** The submit gate: a first choice plus one or two alternatives. */
export function canSubmit(state: PromptState): boolean {
  return (
    state.firstChoice !== null &&
    state.alternatives.length >= 1 &&
    state.alternatives.length <= MAX_ALTERNATIVES
  );
}

export interface SessionIdentity {
  annotatorId: string;
  expertise: number;
}

export function validIdentity(identity: SessionIdentity): boolean {
  return (
    identity.annotatorId.trim().length > 0 &&
    Number.isInteger(identity.expertise) &&
    identity.expertise >= 0 &&
    identity.expertise <= 100
  );
}

/**
 * Assemble the record the server expects. Throws when the state machine
 * invariants do not hold, which would indicate a UI bug rather than user
 * error; callers gate on canSubmit first.
 */
export function buildRecord(
  identity: SessionIdentity,
  state: PromptState,
  palette: ReadonlySet<string>,
): AnnotationRecord {
  if (!validIdentity(identity)) {
    throw new Error("annotator id and a 0-100 expertise rating are required");
  }
  if (!canSubmit(state)) {
    throw new Error("pick a first choice and one or two alternatives");
  }
  if (!PROMPT_LENGTHS.includes(state.prompt.progression.length)) {
    throw new Error(`prompt progression must have ${PROMPT_LENGTHS.join(" or ")} chords`);
  }
  for (const chord of [state.firstChoice as string, ...state.alternatives]) {
    if (!palette.has(chord)) {
      throw new Error(`${chord} is not in the annotation palette`);
    }
  }
  return {
    prompt_id: state.prompt.prompt_id,
    progression: [...state.prompt.progression],
    annotator_id: identity.annotatorId.trim(),
    expertise: identity.expertise,
    first_choice: state.firstChoice as string,
    alternatives: [...state.alternatives],
  };
}

/** Walks the prompt list in served order; advance only after persistence. */
export class AnnotationSession {
  readonly prompts: Prompt[];
  private index = 0;
  current: PromptState;

  constructor(prompts: Prompt[], readonly identity: SessionIdentity) {
    if (prompts.length === 0) throw new Error("no prompts served");
    this.prompts = [...prompts];
    this.current = emptyPromptState(this.prompts[0] as Prompt);
  }

  get position(): number {
    return this.index;
  }

  get done(): boolean {
    return this.index >= this.prompts.length;
  }

  /** Call once the POST was confirmed stored (or already on disk). */
  advance(): void {
    if (this.done) return;
    this.index += 1;
    if (!this.done) {
      this.current = emptyPromptState(this.prompts[this.index] as Prompt);
    }
  }
}
