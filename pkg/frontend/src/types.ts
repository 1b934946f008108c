// Wire types for the session service API (see docs/api.md).

export interface ApiErrorBody {
  error: number;
  message: string;
}

export type SessionMode = "active_learning" | "deferral_review";

export interface ALSessionSummary {
  session_id: string;
  mode: "active_learning";
  recording_id: string;
  status: "running" | "finished";
  epoch: number;
  total_epochs: number;
  batch_pct: number;
  labeled_count: number;
  labeled: Record<string, number>;
  query_history: string[][];
  accuracy: number | null;
}

export interface DeferralSessionSummary {
  session_id: string;
  mode: "deferral_review";
  recording_id: string;
  status: "running" | "finished";
  metric_id: string;
  z: number;
  queue_size: number;
  remaining: number;
  resolved_count: number;
  corrected_accuracy: number | null;
  baseline_accuracy: number | null;
}

export type SessionSummary = ALSessionSummary | DeferralSessionSummary;

export interface NeighborExplanation {
  mean_neighbor_distance: number;
  mean_neighbor_confidence: number | null;
}

export interface QueryItem {
  sample_id: string;
  probs: number[];
  coords: [number, number] | null;
  explanation: NeighborExplanation | null;
  oracle_label?: number;
}

export interface QueryBatch {
  session_id: string;
  epoch: number;
  batch_token: string;
  items: QueryItem[];
}

export type DeferralDecision = "relabel" | "confirm_model" | "skip";

export interface DeferralItem {
  sample_id: string;
  score: number;
  rank: number;
  prediction: number | null;
  explanation: NeighborExplanation | null;
  coords: [number, number] | null;
  resolved: boolean;
  decision: DeferralDecision | null;
  expert_label: number | null;
}

export interface DeferralQueue {
  session_id: string;
  metric_id: string;
  z: number;
  remaining: number;
  items: DeferralItem[];
}

export interface ResolveResponse {
  session_id: string;
  remaining: number;
  resolved: number;
  corrected_accuracy: number | null;
}

export interface WorkspaceArtifact {
  simulation: boolean;
  recordings: string[];
  al_params: Record<string, unknown>;
  defer_params: { metric_id?: string; z?: number };
  artifacts: string[];
}

export interface ScoreRow {
  sample_id: string;
  metric_id: string;
  score: number;
  mean_neighbor_distance: number | null;
  mean_neighbor_confidence: number | null;
}

export interface MetricsRow {
  sample_id: string;
  c: number;
  v_al: number;
  v_ep: number;
  v_al_entropy: number;
  v_ep_entropy: number;
  stratum: string;
}

export interface CoordsRow {
  sample_id: string;
  x: number;
  y: number;
}

export interface RecordingArtifact {
  recording_id: string;
  sample_ids: string[];
  probs: number[][];
  predictions: number[];
  labels?: number[];
  coords: ([number, number] | null)[];
}
