/**
 * Polling / submission state machine for the annotation screen.
 *
 * Keeps exactly one query on screen, pauses polling while a submission is in
 * flight, and guards against double submits: the first click wins, later
 * clicks on the same query are ignored.
 */

import { LabelingClient, QueryPayload, StatusPayload } from "./api.js";

/** The left panel is "A"; preferring it maps to label 1, "B" to 0. */
export type Choice = "A" | "B";

export function choiceToLabel(choice: Choice): 0 | 1 {
  return choice === "A" ? 1 : 0;
}

export interface SessionHooks {
  onQuery?: (query: QueryPayload) => void;
  onIdle?: () => void;
  onStatus?: (status: StatusPayload) => void;
  onError?: (message: string) => void;
  onSubmitted?: (id: string, label: 0 | 1) => void;
}

export class AnnotationSession {
  private current: QueryPayload | null = null;
  private inFlight = false;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private readonly client: LabelingClient,
    private readonly hooks: SessionHooks = {},
  ) {}

  get currentQuery(): QueryPayload | null {
    return this.current;
  }

  get busy(): boolean {
    return this.inFlight;
  }

  /** One poll tick; no-op while a submission is in flight. */
  async pollOnce(): Promise<void> {
    if (this.inFlight) {
      return;
    }
    try {
      const status = await this.client.status();
      this.hooks.onStatus?.(status);
    } catch (err) {
      this.hooks.onError?.(`status unavailable: ${String(err)}`);
    }
    try {
      const query = await this.client.nextQuery();
      if (query === null) {
        this.current = null;
        this.hooks.onIdle?.();
        return;
      }
      if (this.current === null || this.current.id !== query.id) {
        this.current = query;
        this.hooks.onQuery?.(query);
      }
    } catch (err) {
      this.hooks.onError?.(`service unreachable: ${String(err)}`);
    }
  }

  /**
   * Submit the annotator's choice for the displayed query.  Returns true
   * when a label was posted (or the query was already answered elsewhere),
   * false when the click was ignored by the double-submit guard.
   */
  async choose(choice: Choice): Promise<boolean> {
    if (this.inFlight || this.current === null) {
      return false;
    }
    const query = this.current;
    const label = choiceToLabel(choice);
    this.inFlight = true;
    try {
      const result = await this.client.submitLabel(query.id, label);
      if (result === "conflict") {
        this.hooks.onError?.(`query ${query.id} was already answered`);
      } else {
        this.hooks.onSubmitted?.(query.id, label);
      }
      this.current = null;
      return true;
    } catch (err) {
      this.hooks.onError?.(`label post failed: ${String(err)}`);
      return false;
    } finally {
      this.inFlight = false;
    }
  }

  start(intervalMs = 2000): void {
    if (this.timer !== null) {
      return;
    }
    void this.pollOnce();
    this.timer = setInterval(() => void this.pollOnce(), intervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }
}
