/** Typed client for the annotation server's JSON API. */

export interface PaletteEntry {
  chord: string;
  pitch_classes: number[];
}

export interface Prompt {
  prompt_id: string;
  progression: string[];
}

export interface Suggestion {
  chord: string;
  probability: number;
}

export interface AnnotationRecord {
  prompt_id: string;
  progression: string[];
  annotator_id: string;
  expertise: number;
  first_choice: string;
  alternatives: string[];
}

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

/** Outcome of a POST /api/annotations: both mean the record is persisted. */
export type SubmitOutcome = "stored" | "duplicate";

async function getJson<T>(url: string): Promise<T> {
  const resp = await fetch(url);
  if (!resp.ok) {
    throw new ApiError(resp.status, await errorMessage(resp));
  }
  return (await resp.json()) as T;
}

async function errorMessage(resp: Response): Promise<string> {
  try {
    const body = (await resp.json()) as { error?: string };
    if (body && typeof body.error === "string") return body.error;
  } catch {
    /* non-JSON error body; fall through to the status line */
  }
  return `request failed with status ${resp.status}`;
}

export function fetchPalette(): Promise<PaletteEntry[]> {
  return getJson<PaletteEntry[]>("/api/palette");
}

export function fetchPrompts(): Promise<Prompt[]> {
  return getJson<Prompt[]>("/api/prompts");
}

export function fetchHealth(): Promise<{ status: string; model_loaded: boolean }> {
  return getJson("/healthz");
}

/**
 * Top-k next-chord suggestions. Raises ApiError with status 503 when the
 * server has no model loaded; compose mode uses that to disable itself.
 */
export async function fetchSuggestions(
  progression: string[],
  k: number,
): Promise<Suggestion[]> {
  const query = new URLSearchParams({
    progression: progression.join(","),
    k: String(k),
  });
  const body = await getJson<{ suggestions: Suggestion[] }>(
    `/api/suggest?${query.toString()}`,
  );
  return body.suggestions;
}

/**
 * Persist one annotation. A 409 means this annotator already answered the
 * prompt, which the caller treats as success (the record is on disk); any
 * other error status throws.
 */
export async function postAnnotation(record: AnnotationRecord): Promise<SubmitOutcome> {
  const resp = await fetch("/api/annotations", {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(record),
  });
  if (resp.status === 201) return "stored";
  if (resp.status === 409) return "duplicate";
  throw new ApiError(resp.status, await errorMessage(resp));
}
