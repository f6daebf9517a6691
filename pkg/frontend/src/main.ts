// DOM wiring for the listening test. One item per screen: play the clip,
// pick a half-step rating, submit, move on. Resume restores the first
// unrated item from the server using the stored session token.

import { AnnotationApi, ApiError } from "./api.js";
import { gridButtons, valueForKey } from "./grid.js";
import {
  UiSessionState,
  applyAck,
  canSubmit,
  currentItem,
  initialState,
  isComplete,
  markPlaybackStarted,
  progressPercent,
  selectValue,
} from "./state.js";
import { clearToken, loadToken, saveToken } from "./storage.js";

const api = new AnnotationApi("");
const app = document.getElementById("app") as HTMLElement;

let state: UiSessionState | null = null;
let guidelineText = "";
let guidelineSeen = false;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function clear(): void {
  app.replaceChildren();
}

function header(showGuidelineLink: boolean): HTMLElement {
  const bar = el("header", "topbar");
  bar.appendChild(el("span", "title", "Listening test"));
  if (showGuidelineLink) {
    const link = el("button", "linklike", "Guideline");
    link.addEventListener("click", () => renderGuideline(true));
    bar.appendChild(link);
  }
  return bar;
}

function renderStart(): void {
  clear();
  app.appendChild(header(false));
  const form = el("div", "card");
  form.appendChild(el("h2", undefined, "Start a session"));
  const input = el("input");
  input.placeholder = "annotator id";
  input.id = "annotator-id";
  const button = el("button", "primary", "Start");
  button.addEventListener("click", () => {
    const annotatorId = input.value.trim();
    if (!annotatorId) return;
    void startSession(annotatorId);
  });
  form.append(input, button);
  app.appendChild(form);
}

async function startSession(annotatorId: string): Promise<void> {
  try {
    const session = await api.createSession(annotatorId);
    saveToken(session.token);
    state = initialState(session.token, session.items);
    await loadGuideline();
    renderGuideline(false);
  } catch (err) {
    renderError(`Could not start a session: ${String(err)}`, renderStart);
  }
}

async function resumeSession(token: string): Promise<void> {
  try {
    const progress = await api.fetchProgress(token);
    state = initialState(token, progress.items);
    await loadGuideline();
    if (isComplete(state)) {
      renderDone();
    } else if (!guidelineSeen) {
      renderGuideline(false);
    } else {
      renderItem();
    }
  } catch (err) {
    clearToken();
    if (err instanceof ApiError && err.status === 404) {
      renderError("This session has expired. Start a new one.", renderStart);
    } else {
      renderError(`Could not resume: ${String(err)}`, renderStart);
    }
  }
}

async function loadGuideline(): Promise<void> {
  if (!guidelineText) {
    const guide = await api.fetchGuideline();
    guidelineText = guide.guideline;
  }
}

function renderGuideline(fromHeader: boolean): void {
  clear();
  app.appendChild(header(false));
  const card = el("div", "card");
  card.appendChild(el("h2", undefined, "How to rate"));
  card.appendChild(el("p", "guideline", guidelineText));
  const button = el("button", "primary",
    fromHeader ? "Back" : "Begin rating");
  button.addEventListener("click", () => {
    guidelineSeen = true;
    if (state && !isComplete(state)) {
      renderItem();
    } else if (state) {
      renderDone();
    } else {
      renderStart();
    }
  });
  card.appendChild(button);
  app.appendChild(card);
}

function renderError(message: string, retry: () => void): void {
  clear();
  app.appendChild(header(false));
  const card = el("div", "card error");
  card.appendChild(el("p", undefined, message));
  const button = el("button", "primary", "Retry");
  button.addEventListener("click", retry);
  card.appendChild(button);
  app.appendChild(card);
}

function renderDone(): void {
  clear();
  app.appendChild(header(true));
  const card = el("div", "card");
  card.appendChild(el("h2", undefined, "Thank you"));
  card.appendChild(
    el("p", undefined, "Every item in this session has been rated."),
  );
  app.appendChild(card);
}

function renderItem(): void {
  if (!state) return renderStart();
  if (isComplete(state)) return renderDone();
  const item = currentItem(state);
  if (!item) return renderDone();

  clear();
  app.appendChild(header(true));
  const card = el("div", "card");
  card.appendChild(
    el("p", "progress-label",
      `Item ${state.completedCount + 1} of ${state.items.length}`),
  );
  const bar = el("div", "progress");
  const fill = el("div", "progress-fill");
  fill.style.width = `${progressPercent(state)}%`;
  bar.appendChild(fill);
  card.appendChild(bar);

  const audio = el("audio");
  audio.controls = true;
  audio.preload = "auto";
  audio.src = api.audioUrl(item.itemId);
  audio.addEventListener("play", () => {
    if (!state) return;
    state = markPlaybackStarted(state);
    updateSubmit();
  });
  audio.addEventListener("error", () => {
    renderError("Audio failed to load.", renderItem);
  });
  card.appendChild(audio);

  const grid = el("div", "grid");
  for (const button of gridButtons()) {
    const option = el("button", "grid-value", button.label);
    option.dataset.value = String(button.value);
    option.title = `shortcut: ${button.key}`;
    option.addEventListener("click", () => {
      if (!state) return;
      state = selectValue(state, button.value);
      for (const other of grid.querySelectorAll("button")) {
        other.classList.toggle(
          "selected",
          Number(other.dataset.value) === state.selectedValue,
        );
      }
      updateSubmit();
    });
    grid.appendChild(option);
  }
  card.appendChild(grid);

  const submit = el("button", "primary", "Submit rating");
  submit.id = "submit";
  submit.disabled = true;
  submit.addEventListener("click", () => void doSubmit());
  card.appendChild(submit);
  card.appendChild(
    el("p", "hint", "Play the clip at least once before rating. "
      + "Keys 1-9 select a rating."),
  );
  app.appendChild(card);

  function updateSubmit(): void {
    if (state) submit.disabled = !canSubmit(state);
  }
}

async function doSubmit(): Promise<void> {
  if (!state || !canSubmit(state)) return;
  const item = currentItem(state);
  if (!item || state.selectedValue === null) return;
  try {
    await api.submitRating(state.token, item.itemId, state.selectedValue);
    state = applyAck(state, item.itemId, state.selectedValue ?? 0);
    renderItem();
  } catch (err) {
    renderError(`Rating was not accepted: ${String(err)}`, renderItem);
  }
}

document.addEventListener("keydown", (event) => {
  if (!state || isComplete(state)) return;
  if (document.activeElement instanceof HTMLInputElement) return;
  const value = valueForKey(event.key);
  if (value === null) return;
  const grid = document.querySelector(".grid button[data-value='" +
    String(value) + "']");
  if (grid instanceof HTMLButtonElement) grid.click();
});

const existing = loadToken();
if (existing) {
  void resumeSession(existing);
} else {
  renderStart();
}
