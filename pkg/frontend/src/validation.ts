// Client-side field validation driven by the served schema document.
// Verdicts must match the server's validator for every field, so the
// logic below mirrors its coercion rules rather than inventing its own:
// numbers parse with Python-float-like strictness, category tokens
// normalize through the same numeric canonicalization and alias table.

import type { CategoryFieldSchema, FieldSchema, NumberFieldSchema, SchemaDocument } from "./types";

export type VerdictCode =
  | "ok"
  | "missing_required"
  | "range_violation"
  | "unknown_category";

export interface Verdict {
  valid: boolean;
  code: VerdictCode;
  absent: boolean;
  message?: string;
}

const OK: Verdict = { valid: true, code: "ok", absent: false };
const ABSENT: Verdict = { valid: true, code: "ok", absent: true };

// Matches what Python's float() accepts for ordinary decimal input.
const FLOAT_RE = /^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$/;

function parseNumber(value: string | number): number | null {
  if (typeof value === "number") {
    return Number.isFinite(value) ? value : null;
  }
  const text = value.trim();
  if (!FLOAT_RE.test(text)) return null;
  const num = Number(text);
  return Number.isFinite(num) ? num : null;
}

function formatNumberToken(num: number): string {
  return Number.isInteger(num) ? String(num) : String(num);
}

/** Canonical category token: numeric inputs collapse so 1, 1.0 and "1"
 * agree, strings lowercase and trim. */
export function categoryToken(value: string | number): string {
  if (typeof value === "number") {
    return formatNumberToken(value);
  }
  const text = value.trim().toLowerCase();
  const num = FLOAT_RE.test(text) ? Number(text) : NaN;
  if (Number.isFinite(num)) {
    return formatNumberToken(num);
  }
  return text;
}

function bound(field: NumberFieldSchema): string {
  const left = field.min_exclusive ? "(" : "[";
  const right = field.max_exclusive || field.max === null ? ")" : "]";
  const hi = field.max === null ? "inf" : String(field.max);
  const core = `${left}${field.min},${hi}${right}`;
  return field.integer ? `${core} integer` : core;
}

function validateNumber(field: NumberFieldSchema, value: string | number): Verdict {
  const num = parseNumber(value);
  if (num === null) {
    return {
      valid: false, code: "range_violation", absent: false,
      message: `must be a number in ${bound(field)}`,
    };
  }
  const below = num < field.min || (field.min_exclusive && num === field.min);
  const above =
    field.max !== null && (num > field.max || (field.max_exclusive && num === field.max));
  const notInt = field.integer && !Number.isInteger(num);
  if (below || above || notInt) {
    return {
      valid: false, code: "range_violation", absent: false,
      message: `outside ${bound(field)}`,
    };
  }
  return OK;
}

function validateCategory(
  field: CategoryFieldSchema, value: string | number, required: boolean,
): Verdict {
  let token = categoryToken(value);
  if (token === "unknown" && !(token in field.aliases) && !required) {
    return ABSENT;
  }
  token = field.aliases[token] ?? token;
  if (!field.values.includes(token)) {
    return {
      valid: false, code: "unknown_category", absent: false,
      message: `expected one of ${field.values.join(", ")}`,
    };
  }
  return OK;
}

export function validateField(
  schema: SchemaDocument, name: string, value: string | number | null | undefined,
): Verdict {
  const field: FieldSchema | undefined = schema.fields[name];
  if (!field) return OK; // unknown fields are ignored, as on the server
  if (value === null || value === undefined || value === "") {
    return field.required
      ? { valid: false, code: "missing_required", absent: true,
          message: "required" }
      : ABSENT;
  }
  return field.type === "number"
    ? validateNumber(field, value)
    : validateCategory(field, value, field.required);
}

export function validateForm(
  schema: SchemaDocument, values: Record<string, string | number | null>,
): { verdicts: Record<string, Verdict>; submittable: boolean } {
  const verdicts: Record<string, Verdict> = {};
  for (const name of Object.keys(schema.fields)) {
    verdicts[name] = validateField(schema, name, values[name]);
  }
  const submittable = Object.values(verdicts).every((v) => v.valid);
  return { verdicts, submittable };
}
