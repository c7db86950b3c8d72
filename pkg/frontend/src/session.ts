/**
 * Annotation session flow: fetch the next task, hand it to the view layer,
 * submit exactly one decision per task and advance.
 *
 * Submissions are idempotent on the server (same image + same class), so a
 * network failure is retried with the same payload and the task resumes.
 */

import { ApiClient, ApiError, SessionInfo, Task } from './api.js';

export interface FlowHooks {
  onTask(task: Task, info: SessionInfo): void;
  onDone(info: SessionInfo): void;
  onProgress(done: number, total: number): void;
  onError(message: string): void;
}

export class SessionFlow {
  info: SessionInfo | null = null;
  current: Task | null = null;
  private submitting = false;
  private submitted = new Set<string>();

  constructor(
    private api: ApiClient,
    private hooks: FlowHooks,
    private retries = 3,
    private retryDelayMs = 250,
  ) {}

  get mode(): string {
    return this.info?.mode ?? 'none';
  }

  /** Class the Enter key would submit, or null when accepting is disabled. */
  acceptClass(): number | null {
    const proposal = this.current?.proposal;
    if (!proposal) return null;
    if (proposal.kind === 'certain') return proposal.class_index ?? null;
    return proposal.suggested_class ?? null;
  }

  async start(
    annotator: string,
    manifest: string,
    mode: string,
    repetition: number,
  ): Promise<void> {
    this.info = await this.api.createSession(annotator, manifest, mode, repetition);
    this.submitted.clear();
    await this.advance();
  }

  async advance(): Promise<void> {
    if (!this.info) throw new Error('session not started');
    const task = await this.api.nextTask(this.info.session_id);
    this.current = task;
    if (task.done) {
      this.hooks.onProgress(task.n_done ?? 0, task.n_done ?? 0);
      this.hooks.onDone(this.info);
      return;
    }
    this.hooks.onProgress(task.index ?? 0, task.total ?? 0);
    this.hooks.onTask(task, this.info);
  }

  /** Submit a class for the current task; ignored while a submission is in
   * flight or after the task was already answered. */
  async submit(classIndex: number): Promise<boolean> {
    if (!this.info || !this.current || this.current.done) return false;
    const imageId = this.current.image_id!;
    if (this.submitting || this.submitted.has(imageId)) return false;
    this.submitting = true;
    let recorded = false;
    try {
      let lastError: unknown = null;
      for (let attempt = 0; attempt <= this.retries; attempt++) {
        try {
          await this.api.annotate(this.info.session_id, imageId, classIndex);
          this.submitted.add(imageId);
          recorded = true;
          break;
        } catch (err) {
          if (err instanceof ApiError) {
            // server rejected the decision; retrying won't change that
            this.hooks.onError(err.message);
            return false;
          }
          lastError = err; // network failure: retry, POST is idempotent
          await new Promise((r) => setTimeout(r, this.retryDelayMs));
        }
      }
      if (!recorded) {
        this.hooks.onError(`submission failed after retries: ${lastError}`);
        return false;
      }
    } finally {
      this.submitting = false;
    }
    // guard released before advancing so the next task can submit from
    // within the onTask hook
    await this.advance();
    return true;
  }

  async acceptProposal(): Promise<boolean> {
    const cls = this.acceptClass();
    if (cls === null) return false;
    return this.submit(cls);
  }
}
