export interface SlotDecl {
  placeholder: string;
  spans: [number, number][]; // byte offsets into the function text
}

export interface Candidate {
  name: string;
  count: number;
  mean_prob: number;
  token_probs: number[];
}

export interface PredictRequest {
  code: string;
  slots: { placeholder: string; spans: number[][] }[];
  accepted: Record<string, string>;
  k: number;
  mode: "heuristic" | "oracle";
}

export interface PredictResponse {
  model: { vocab_hash: string; checkpoint_hash: string };
  mode: string;
  suggestions: Record<string, Candidate[]>;
}

export interface ModelInfo {
  config: Record<string, unknown>;
  param_count: number;
  vocab_hash: string;
  checkpoint_hash: string;
  max_allowed: number;
}

export type SlotStatus =
  | { kind: "pending" }
  | { kind: "accepted"; name: string; rank: number }
  | { kind: "overridden"; name: string };

export interface SlotState {
  spans: [number, number][];
  status: SlotStatus;
}

export interface WorkbenchState {
  text: string;
  slots: Record<string, SlotState>;
  /** Latest suggestions for the current accepted-set; byte-for-byte what the
   *  service returned, never locally edited. */
  suggestions: Record<string, Candidate[]>;
  requestInFlight: boolean;
  error: string | null;
  modelInfo: ModelInfo | null;
  loaded: boolean;
}

export interface ExportRecord {
  renamedText: string;
  names: Record<string, { name: string; source: "accepted" | "overridden"; rank: number | null }>;
}
