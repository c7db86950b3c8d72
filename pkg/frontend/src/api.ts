/**
 * Typed client for the annotation service HTTP API.
 *
 * All timing is measured server-side (served-at vs annotation time); the
 * client never computes durations or metrics.
 */

export interface DatasetInfo {
  name: string;
  num_classes: number;
  class_names: string[];
  n_items: number;
  modes: string[];
}

export interface SessionInfo {
  session_id: string;
  n_images: number;
  num_classes: number;
  class_names: string[];
  mode: string;
}

export interface ClusterMember {
  image_id: string;
  image_url: string;
}

export interface TaskProposal {
  kind: 'certain' | 'fuzzy';
  p_a: number;
  class_index?: number;
  class_name?: string;
  cluster_id?: number;
  description?: string;
  suggested_class?: number;
  members?: ClusterMember[];
}

export interface Task {
  done: boolean;
  image_id?: string;
  image_url?: string;
  index?: number;
  total?: number;
  proposal?: TaskProposal;
  n_done?: number;
}

export interface AnnotationResult {
  recorded: boolean;
  duration: number;
  replay?: boolean;
  n_done?: number;
  n_remaining?: number;
}

export interface ModeCell {
  consistency: number | null;
  mean_time_s: number;
  speed_up_vs_none: number | null;
}

export interface AnnotatorCell {
  consistency: number | null;
  mean_time_s: number;
  n_sessions: number;
}

export interface ReportPayload {
  manifest: string;
  n_records: number;
  annotators: Record<string, Record<string, AnnotatorCell>>;
  modes: Record<string, ModeCell>;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchFn: typeof fetch = globalThis.fetch.bind(globalThis),
  ) {}

  resolve(path: string): string {
    return this.baseUrl.replace(/\/+$/, '') + path;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.resolve(path), init);
    if (!response.ok) {
      const body = await response.text();
      throw new ApiError(response.status, `${response.status}: ${body}`);
    }
    return (await response.json()) as T;
  }

  listDatasets(): Promise<DatasetInfo[]> {
    return this.request('/api/datasets');
  }

  createSession(
    annotator: string,
    manifest: string,
    mode: string,
    repetition: number,
  ): Promise<SessionInfo> {
    return this.request('/api/sessions', {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ annotator, manifest, mode, repetition }),
    });
  }

  nextTask(sessionId: string): Promise<Task> {
    return this.request(`/api/sessions/${sessionId}/next`);
  }

  annotate(sessionId: string, imageId: string, classIndex: number): Promise<AnnotationResult> {
    return this.request(`/api/sessions/${sessionId}/annotations`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ image_id: imageId, class_index: classIndex }),
    });
  }

  report(manifest: string): Promise<ReportPayload> {
    return this.request(`/api/report?manifest=${encodeURIComponent(manifest)}`);
  }
}
