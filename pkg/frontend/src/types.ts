// Wire types of the retrieval service (all fields come from server JSON).

export interface TopImage {
  id: string;
  objects: string[];
  score: number;
  url?: string;
}

export interface SessionView {
  session_id: string;
  mode: "live" | "demo";
  round: number;
  max_rounds: number;
  queries: string[];
  top_images: TopImage[];
  candidates: string[];
  done: boolean;
  target_rank?: number;
}

export interface CreateSessionRequest {
  queries: string[];
  ranker?: string;
  n_candidates?: number;
  mode: "live" | "demo";
  target_id?: string;
  max_rounds?: number;
}

export interface ConfirmRequest {
  positive: string[];
  negative: string[];
  round: number;
}

export interface ImageDoc {
  id: string;
  objects: string[];
  captions: string[];
  url?: string;
}

export interface HealthDoc {
  status: string;
  images: number;
  vocab: number;
  sessions: number;
  policy: string | null;
}
