// Typed client for the inference service. The UI never computes
// probabilities itself; every number it shows comes from these responses.

export type ClassLabel = "abnormal" | "normal";

export interface Prediction {
  class_names: string[];
  patch_probabilities: number[][];
  aggregate: number[];
  abnormal_probability: number;
  threshold: number;
  label: ClassLabel;
  patch_bboxes: number[][];
  patch_fallback: boolean;
  stain_fallback: boolean;
}

export interface PredictResponse {
  case_id: string;
  created_at: string;
  model_id: string;
  threshold: number;
  balanced_threshold: number;
  prediction: Prediction;
}

export interface ExplainPatch {
  bbox: number[];
  peak_xy: number[];
}

export interface ExplainResponse {
  case_id: string;
  target_class: number;
  target_label: ClassLabel;
  patches: ExplainPatch[];
  patch_overlays: string[];
  composite_overlay: string;
}

export interface Disposition {
  disposition: "confirm" | "override";
  note: string;
  created_at: string;
}

export interface CaseRecord {
  case_id: string;
  created_at: string;
  model_id: string;
  threshold: number;
  prediction: Prediction;
  dispositions: Disposition[];
}

export interface CaseList {
  cases: CaseRecord[];
  summary: { total: number; by_label: Record<string, number>; reviewed: number };
}

export interface ModelInfo {
  id: string;
  state: string;
  default: boolean;
  backbone: string | null;
  balanced_threshold: number | null;
  threshold: number;
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
  }
}

const API_BASE: string = (globalThis as { GLANDSCREEN_API?: string }).GLANDSCREEN_API ?? "";

async function parseOrThrow<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = `request failed (${response.status})`;
    try {
      const body = (await response.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      // non-JSON error body; keep the generic message
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export async function predict(file: File, threshold?: number): Promise<PredictResponse> {
  const form = new FormData();
  form.append("file", file);
  if (threshold !== undefined) form.append("threshold", String(threshold));
  const response = await fetch(`${API_BASE}/api/predict`, { method: "POST", body: form });
  return parseOrThrow<PredictResponse>(response);
}

export async function explain(caseId: string, targetClass?: number): Promise<ExplainResponse> {
  const response = await fetch(`${API_BASE}/api/explain`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ case_id: caseId, target_class: targetClass ?? null }),
  });
  return parseOrThrow<ExplainResponse>(response);
}

export async function fetchCases(limit = 25): Promise<CaseList> {
  const response = await fetch(`${API_BASE}/api/cases?limit=${limit}`);
  return parseOrThrow<CaseList>(response);
}

export async function postDisposition(
  caseId: string,
  disposition: "confirm" | "override",
  note: string,
): Promise<Disposition> {
  const response = await fetch(`${API_BASE}/api/cases/${caseId}/disposition`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ disposition, note }),
  });
  return parseOrThrow<Disposition>(response);
}

export async function fetchModels(): Promise<{ models: ModelInfo[]; default: string | null }> {
  const response = await fetch(`${API_BASE}/api/models`);
  return parseOrThrow(response);
}
