// Shared types mirroring the service's HTTP contract.

export interface NumberFieldSchema {
  type: "number";
  required: boolean;
  min: number;
  max: number | null;
  min_exclusive: boolean;
  max_exclusive: boolean;
  integer: boolean;
  unit: string;
}

export interface CategoryFieldSchema {
  type: "category";
  required: boolean;
  values: string[];
  aliases: Record<string, string>;
}

export type FieldSchema = NumberFieldSchema | CategoryFieldSchema;

export interface SchemaDocument {
  format_version: number;
  required: string[];
  labels: string[];
  fields: Record<string, FieldSchema>;
}

export interface EvidenceItem {
  id: string;
  cosine: number;
  rerank_score: number;
  mmse: number | null;
  cdr: string | null;
  age: number | null;
  nwbv: number | null;
}

export interface ScreenResponse {
  request_id: string;
  backend: string;
  scores: number[];
  decided: string[];
  threshold: number;
  no_evidence: boolean;
  evidence: EvidenceItem[];
  checkpoint_digest: string;
  explanation: string | null;
  parse_failure: boolean;
}

export interface ServiceError {
  error: {
    code: string;
    detail: string;
    fields?: { field: string; code: string; detail?: string; bound?: string }[];
  };
  status?: string;
}

export type CaseValues = Record<string, string | number | null>;
