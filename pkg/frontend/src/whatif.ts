// What-if exploration: layered overrides over a screened base case,
// debounced re-screening, and monotone sequence numbers so a stale
// response can never overwrite a newer one. At most one request is in
// flight; adjustments during flight coalesce into one trailing request.

import type { CaseValues, ScreenResponse } from "./types";

export type SendFn = (body: CaseValues) => Promise<ScreenResponse>;

export interface WhatIfView {
  base: ScreenResponse | null;
  current: ScreenResponse | null;
  deltas: number[] | null;       // current minus base, per subtype
  overrides: CaseValues;
  inFlight: boolean;
}

export class WhatIfController {
  private baseCase: CaseValues | null = null;
  private base: ScreenResponse | null = null;
  private current: ScreenResponse | null = null;
  private overrides: CaseValues = {};

  private seq = 0;            // last issued request number
  private appliedSeq = 0;     // highest sequence number rendered
  private inFlight = false;
  private trailing = false;   // an adjustment arrived while in flight
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private readonly send: SendFn,
    private readonly onUpdate: (view: WhatIfView) => void,
    private readonly debounceMs = 250,
  ) {}

  get requestsIssued(): number {
    return this.seq;
  }

  /** Install the screened base case; clears overrides, no request. */
  setBase(caseValues: CaseValues, result: ScreenResponse): void {
    this.baseCase = { ...caseValues };
    this.base = result;
    this.current = result;
    this.overrides = {};
    this.cancelTimer();
    this.notify();
  }

  /** Layer one override and schedule a debounced re-screen. */
  adjust(field: string, value: string | number | null): void {
    if (this.baseCase === null) {
      throw new Error("what-if requires a screened base case first");
    }
    this.overrides = { ...this.overrides, [field]: value };
    this.schedule();
  }

  /** Drop all overrides: the cached base response returns, no request. */
  reset(): void {
    this.overrides = {};
    this.cancelTimer();
    this.current = this.base;
    this.notify();
  }

  private schedule(): void {
    this.cancelTimer();
    this.timer = setTimeout(() => {
      this.timer = null;
      this.fire();
    }, this.debounceMs);
  }

  private cancelTimer(): void {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
  }

  private fire(): void {
    if (this.inFlight) {
      this.trailing = true;
      return;
    }
    const seq = ++this.seq;
    this.inFlight = true;
    this.notify();
    const body = { ...this.baseCase, ...this.overrides };
    this.send(body)
      .then((result) => {
        if (seq > this.appliedSeq) {
          this.appliedSeq = seq;
          this.current = result;
        }
      })
      .catch(() => {
        // errors surface through the banner path in the page layer;
        // sequencing state stays consistent either way
      })
      .finally(() => {
        this.inFlight = false;
        if (this.trailing) {
          this.trailing = false;
          this.fire();
        } else {
          this.notify();
        }
      });
  }

  view(): WhatIfView {
    const deltas =
      this.base && this.current && this.current !== this.base
        ? this.current.scores.map((s, i) => s - this.base!.scores[i])
        : null;
    return {
      base: this.base,
      current: this.current,
      deltas,
      overrides: { ...this.overrides },
      inFlight: this.inFlight,
    };
  }

  private notify(): void {
    this.onUpdate(this.view());
  }
}
