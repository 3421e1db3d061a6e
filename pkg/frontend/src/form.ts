// Case-entry form state: raw values, per-field verdicts, dirty flags.
// Validation rules come from the served schema document, never from
// constants baked into the client.

import { Verdict, validateField } from "./validation";
import type { CaseValues, SchemaDocument } from "./types";

export class CaseForm {
  readonly values: CaseValues = {};
  readonly dirty = new Set<string>();

  constructor(readonly schema: SchemaDocument) {}

  setValue(name: string, raw: string | number | null): void {
    this.values[name] = raw === "" ? null : raw;
    this.dirty.add(name);
  }

  verdict(name: string): Verdict {
    return validateField(this.schema, name, this.values[name]);
  }

  verdicts(): Record<string, Verdict> {
    const out: Record<string, Verdict> = {};
    for (const name of Object.keys(this.schema.fields)) {
      out[name] = this.verdict(name);
    }
    return out;
  }

  /** Submit enabled only when every field verdict is valid (required
   * fields present, every supplied optional in range). */
  submittable(): boolean {
    return Object.values(this.verdicts()).every((v) => v.valid);
  }

  /** Typed request body: numbers for numeric fields, raw tokens for
   * categorical ones; absent fields omitted. */
  toRequestBody(): CaseValues {
    const body: CaseValues = {};
    for (const [name, field] of Object.entries(this.schema.fields)) {
      const raw = this.values[name];
      if (raw === null || raw === undefined || raw === "") continue;
      body[name] = field.type === "number" ? Number(raw) : String(raw);
    }
    return body;
  }
}
