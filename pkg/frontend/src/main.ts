/** DOM wiring: render the session into #app and forward clicks to it.
 *
 * The conversation renders as chat bubbles; the substituted image appears
 * inline at the replaced position with the target sentence beneath it, and
 * the response turn is never shown (annotators judge image-in-context).
 */

import { ApiClient } from "./api.js";
import { AnnotationSession } from "./session.js";
import { BatchItem, Q4_INTENTS, QUESTION_TEXT, QuestionId, SCALES } from "./types.js";

function baseUrl(): string {
  const meta = document.querySelector('meta[name="mmdial-base"]');
  return meta?.getAttribute("content") ?? "";
}

function annotatorId(): string {
  const fromQuery = new URLSearchParams(window.location.search).get("annotator");
  if (fromQuery) {
    return fromQuery;
  }
  const entered = window.prompt("Annotator id:")?.trim();
  if (!entered) {
    throw new Error("annotator id is required");
  }
  const url = new URL(window.location.href);
  url.searchParams.set("annotator", entered);
  window.history.replaceState(null, "", url.toString());
  return entered;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) {
    node.className = className;
  }
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

function renderDialogue(item: BatchItem): HTMLElement {
  const panel = el("div", "dialogue");
  for (const turn of item.context) {
    const bubble = el("div", `bubble speaker-${turn.speaker % 2}`, turn.text);
    panel.appendChild(bubble);
  }
  const replaced = el("div", "bubble image-bubble");
  const img = el("img");
  img.src = item.image_ref;
  img.alt = "substituted image";
  replaced.appendChild(img);
  replaced.appendChild(el("div", "target-sentence", `replaced sentence: “${item.target}”`));
  panel.appendChild(replaced);
  return panel;
}

function renderQuestion(
  session: AnnotationSession,
  question: QuestionId,
): HTMLElement {
  const block = el("fieldset", "question");
  block.appendChild(el("legend", undefined, `${question.toUpperCase()}. ${QUESTION_TEXT[question]}`));
  const row = el("div", "choices");
  for (const value of SCALES[question]) {
    const label = question === "q4" ? `${value}. ${Q4_INTENTS[value - 1]}` : String(value);
    const button = el("button", "choice", label);
    button.type = "button";
    if (session.draft.get(question) === value) {
      button.classList.add("selected");
    }
    button.addEventListener("click", () => session.setScore(question, value));
    row.appendChild(button);
  }
  block.appendChild(row);
  return block;
}

function render(session: AnnotationSession, root: HTMLElement): void {
  root.replaceChildren();
  const header = el("header");
  header.appendChild(el("h1", undefined, "Dialogue image annotation"));
  header.appendChild(
    el("div", "progress", `${session.progress.answered} / ${session.progress.total}`),
  );
  root.appendChild(header);

  if (session.connectionError) {
    const banner = el("div", "banner error-banner",
      `Connection problem: ${session.connectionError} `);
    const retry = el("button", "choice", "retry");
    retry.addEventListener("click", () => void session.start());
    banner.appendChild(retry);
    root.appendChild(banner);
  }
  if (session.notice) {
    root.appendChild(el("div", "banner notice-banner", session.notice));
  }

  if (session.phase === "loading") {
    root.appendChild(el("p", "status", "Loading…"));
    return;
  }
  if (session.phase === "complete") {
    root.appendChild(el("p", "status done", "All instances answered. Thank you!"));
    return;
  }
  const item = session.current();
  if (session.phase === "error" || !item) {
    return;
  }

  root.appendChild(renderDialogue(item));
  const form = el("div", "questions");
  for (const question of ["q1", "q2", "q3", "q4"] as const) {
    form.appendChild(renderQuestion(session, question));
  }
  const submit = el("button", "submit", "Submit");
  submit.disabled = !session.canSubmit();
  submit.addEventListener("click", () => void session.submit());
  form.appendChild(submit);
  root.appendChild(form);
}

function start(): void {
  const root = document.getElementById("app");
  if (!root) {
    throw new Error("missing #app element");
  }
  const session = new AnnotationSession(new ApiClient(baseUrl()), annotatorId());
  session.onChange(() => render(session, root));
  void session.start();
}

start();
