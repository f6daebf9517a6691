// Typed client for the annotation service. Every annotator-facing payload
// is checked for model-identity leaks and stripped down to known fields
// before the rest of the app sees it.

export interface SessionItem {
  itemId: string;
  orderIndex: number;
  rated: boolean;
  value?: number;
}

export interface SessionInfo {
  token: string;
  seed: number;
  itemCount: number;
  items: SessionItem[];
}

export interface SessionProgress {
  items: SessionItem[];
  cursor: number;
  completed: number;
}

export interface Guideline {
  guideline: string;
  scale: string;
  grid: number[];
}

export class ApiError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
  }
}

export class BlindnessViolation extends Error {}

/**
 * Reject any payload that could reveal which model produced a clip.
 * Key names mentioning models and values that look like file paths have
 * no business in an annotator-facing response.
 */
export function assertBlind(payload: unknown): void {
  const walk = (node: unknown, path: string): void => {
    if (node === null || node === undefined) return;
    if (Array.isArray(node)) {
      node.forEach((entry, i) => walk(entry, `${path}[${i}]`));
      return;
    }
    if (typeof node === "object") {
      for (const [key, value] of Object.entries(node as object)) {
        if (key.toLowerCase().includes("model")) {
          throw new BlindnessViolation(
            `payload field ${path}.${key} could identify a model`,
          );
        }
        if (key.toLowerCase().includes("path")) {
          throw new BlindnessViolation(
            `payload field ${path}.${key} could reveal a file path`,
          );
        }
        walk(value, `${path}.${key}`);
      }
    }
  };
  walk(payload, "$");
}

function toItem(raw: Record<string, unknown>): SessionItem {
  const item: SessionItem = {
    itemId: String(raw["item_id"]),
    orderIndex: Number(raw["order_index"]),
    rated: Boolean(raw["rated"]),
  };
  if (typeof raw["value"] === "number") {
    item.value = raw["value"];
  }
  return item;
}

async function readJson(response: Response): Promise<unknown> {
  const body = (await response.json()) as unknown;
  if (!response.ok) {
    const detail =
      typeof body === "object" && body !== null && "detail" in body
        ? String((body as { detail: unknown }).detail)
        : response.statusText;
    throw new ApiError(detail, response.status);
  }
  return body;
}

export class AnnotationApi {
  constructor(private readonly base: string = "") {}

  async createSession(annotatorId: string, seed?: number): Promise<SessionInfo> {
    const response = await fetch(`${this.base}/sessions`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ annotator_id: annotatorId, seed: seed ?? null }),
    });
    const body = (await readJson(response)) as Record<string, unknown>;
    assertBlind(body);
    const items = (body["items"] as Record<string, unknown>[]).map((raw) =>
      toItem({ ...raw, rated: false }),
    );
    return {
      token: String(body["session_token"]),
      seed: Number(body["seed"]),
      itemCount: Number(body["item_count"]),
      items,
    };
  }

  async fetchProgress(token: string): Promise<SessionProgress> {
    const response = await fetch(`${this.base}/sessions/${token}/items`);
    const body = (await readJson(response)) as Record<string, unknown>;
    assertBlind(body);
    return {
      items: (body["items"] as Record<string, unknown>[]).map(toItem),
      cursor: Number(body["cursor"]),
      completed: Number(body["completed"]),
    };
  }

  async submitRating(
    token: string,
    itemId: string,
    value: number,
  ): Promise<void> {
    const response = await fetch(`${this.base}/sessions/${token}/ratings`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ item_id: itemId, value }),
    });
    await readJson(response);
  }

  async fetchGuideline(): Promise<Guideline> {
    const response = await fetch(`${this.base}/guideline`);
    const body = (await readJson(response)) as Record<string, unknown>;
    assertBlind(body);
    return {
      guideline: String(body["guideline"]),
      scale: String(body["scale"]),
      grid: (body["grid"] as number[]) ?? [],
    };
  }

  audioUrl(itemId: string): string {
    return `${this.base}/audio/${itemId}`;
  }
}
