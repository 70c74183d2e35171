// Poll-driven view state. Every interval the store refreshes the broker
// role, the peer table, and all tracked non-terminal jobs. A failed poll
// raises the stale flag (the banner) but never stops the loop; while
// stale, the store asks every peer URL it has ever seen for broker.role
// and follows the announced leader, so a broker failover heals without a
// page reload.

import { ApiClient } from "./api.js";
import { JobStatus, PeerEntry, RoleInfo, SubmitFields, TERMINAL_STATES } from "./types.js";

export interface TrackedJob {
  jobId: string;
  submittedAt: number; // epoch millis, client-side submission time
  status: JobStatus | null;
  error: string | null;
}

export class DashboardStore {
  peers: PeerEntry[] = [];
  role: RoleInfo | null = null;
  stale = false;
  jobs = new Map<string, TrackedJob>();
  onChange: (() => void) | null = null;

  private knownUrls = new Set<string>();
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(public api: ApiClient, public pollIntervalMs = 2000) {
    this.knownUrls.add(api.baseUrl);
  }

  start(): void {
    if (this.timer !== null) {
      return;
    }
    void this.tick();
    this.timer = setInterval(() => void this.tick(), this.pollIntervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  async tick(): Promise<void> {
    try {
      const role = await this.api.role();
      if (role.leader_url && role.role !== "leader" && role.leader_url !== this.api.baseUrl) {
        this.api.setBase(role.leader_url); // we were talking to a standby
      }
      this.role = role;
      this.peers = await this.api.peers();
      for (const peer of this.peers) {
        this.knownUrls.add(peer.url);
      }
      for (const job of this.jobs.values()) {
        if (job.status !== null && TERMINAL_STATES.has(job.status.aggregate)) {
          continue;
        }
        job.status = await this.api.jobStatus(job.jobId);
      }
      this.stale = false;
    } catch {
      this.stale = true;
      await this.rediscover();
    }
    this.onChange?.();
  }

  private async rediscover(): Promise<void> {
    for (const url of this.knownUrls) {
      let info: RoleInfo;
      try {
        info = await ApiClient.roleAt(url);
      } catch {
        continue;
      }
      const leader = info.role === "leader" ? url : info.leader_url;
      if (!leader) {
        continue;
      }
      try {
        const confirmed = await ApiClient.roleAt(leader);
        if (confirmed.role === "leader") {
          this.api.setBase(leader);
          return;
        }
      } catch {
        // announced leader not reachable yet; keep looking
      }
    }
  }

  async submit(fields: SubmitFields): Promise<string> {
    const jobId = await this.api.submitJob(fields);
    this.jobs.set(jobId, {
      jobId,
      submittedAt: Date.now(),
      status: null,
      error: null,
    });
    this.onChange?.();
    void this.tick();
    return jobId;
  }

  async kill(jobId: string): Promise<void> {
    const job = this.jobs.get(jobId);
    try {
      await this.api.killJob(jobId);
    } catch (err) {
      if (job) {
        job.error = err instanceof Error ? err.message : String(err);
        this.onChange?.();
      }
      throw err;
    }
    void this.tick();
  }

  trackedJobs(): TrackedJob[] {
    return [...this.jobs.values()].sort((a, b) => b.submittedAt - a.submittedAt);
  }
}
