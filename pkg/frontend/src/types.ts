/** Wire types for the annotation API, plus the score scales the widgets are
 * generated from. Widget values come from these arrays only, so out-of-range
 * scores are unconstructible in the UI. */

export interface ContextTurn {
  speaker: number;
  text: string;
}

export interface BatchItem {
  instance_id: string;
  target: string;
  context: ContextTurn[];
  image_ref: string;
  questions: Record<string, string>;
}

export interface Progress {
  answered: number;
  total: number;
}

export type QuestionId = "q1" | "q2" | "q3" | "q4";

export const SCALES: Record<QuestionId, readonly number[]> = {
  q1: [1, 2, 3],
  q2: [1, 2, 3],
  q3: [1, 2, 3, 4, 5],
  q4: [1, 2, 3, 4],
};

export const QUESTION_TEXT: Record<QuestionId, string> = {
  q1: "How well does the image contain the key objects of the replaced sentence?",
  q2: "How well does the image represent the meaning of the replaced sentence?",
  q3: "How consistent is the image with the context of the conversation?",
  q4: "What is the purpose of using the image in the conversation?",
};

export const Q4_INTENTS: readonly string[] = [
  "answering the question",
  "expressing emotional reactions",
  "proposing a new topic",
  "giving additional explanations",
];

export interface AnswerPayload {
  instance_id: string;
  annotator_id: string;
  q1: number;
  q2: number;
  q3: number;
  q4?: number;
}

export type SubmitResult =
  | { kind: "accepted" }
  | { kind: "duplicate"; message: string }
  | { kind: "invalid"; message: string };

function parseTurn(value: unknown): ContextTurn {
  const turn = value as Record<string, unknown>;
  if (typeof turn?.speaker !== "number" || typeof turn?.text !== "string") {
    throw new Error("malformed context turn");
  }
  return { speaker: turn.speaker, text: turn.text };
}

export function parseBatchItem(value: unknown): BatchItem {
  const item = value as Record<string, unknown>;
  if (
    typeof item?.instance_id !== "string" ||
    typeof item?.target !== "string" ||
    typeof item?.image_ref !== "string" ||
    !Array.isArray(item?.context)
  ) {
    throw new Error("malformed batch item");
  }
  return {
    instance_id: item.instance_id,
    target: item.target,
    context: item.context.map(parseTurn),
    image_ref: item.image_ref,
    questions: (item.questions ?? {}) as Record<string, string>,
  };
}

export function parseProgress(value: unknown): Progress {
  const progress = value as Record<string, unknown>;
  if (typeof progress?.answered !== "number" || typeof progress?.total !== "number") {
    throw new Error("malformed progress payload");
  }
  return { answered: progress.answered, total: progress.total };
}
