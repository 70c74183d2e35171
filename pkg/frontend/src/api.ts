// Client for the node's /api JSON mirror. Keeps the credential in memory
// (entered once), logs in lazily, and re-logs when a session turns stale,
// which happens naturally after a broker failover: the new leader has no
// record of sessions the dead one issued.

import { ApiFault, Credential, JobStatus, PeerEntry, RoleInfo, RunOutputs, SubmitFields } from "./types.js";

const INVALID_SESSION = 5;

async function parseFault(response: Response): Promise<ApiFault> {
  try {
    const body = await response.json();
    if (body && body.fault) {
      return new ApiFault(body.fault.code, body.fault.message);
    }
  } catch {
    // fall through to the generic error
  }
  return new ApiFault(-1, `HTTP ${response.status}`);
}

export class ApiClient {
  baseUrl: string;
  private credential: Credential | null = null;
  private token: string | null = null;

  constructor(baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  setBase(url: string): void {
    const cleaned = url.replace(/\/+$/, "");
    if (cleaned !== this.baseUrl) {
      this.baseUrl = cleaned;
      this.token = null; // sessions are per node
    }
  }

  async login(credential: Credential): Promise<void> {
    this.credential = credential;
    this.token = null;
    await this.ensureToken();
  }

  get loggedIn(): boolean {
    return this.credential !== null;
  }

  private async ensureToken(): Promise<string> {
    if (this.token !== null) {
      return this.token;
    }
    if (this.credential === null) {
      throw new ApiFault(INVALID_SESSION, "not logged in");
    }
    const response = await fetch(`${this.baseUrl}/api/auth.login`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ credential: this.credential }),
    });
    if (!response.ok) {
      throw await parseFault(response);
    }
    const body = await response.json();
    this.token = body.token as string;
    return this.token;
  }

  private async post(method: string, payload: unknown, retry = true): Promise<Response> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    headers["X-Session"] = await this.ensureToken();
    const response = await fetch(`${this.baseUrl}/api/${method}`, {
      method: "POST",
      headers,
      body: JSON.stringify(payload ?? {}),
    });
    if (!response.ok) {
      const fault = await parseFault(response);
      if (fault.code === INVALID_SESSION && retry) {
        this.token = null;
        return this.post(method, payload, false);
      }
      throw fault;
    }
    return response;
  }

  private async postJson<T>(method: string, payload: unknown): Promise<T> {
    const response = await this.post(method, payload);
    return (await response.json()) as T;
  }

  async role(): Promise<RoleInfo> {
    return ApiClient.roleAt(this.baseUrl);
  }

  static async roleAt(url: string): Promise<RoleInfo> {
    const response = await fetch(`${url.replace(/\/+$/, "")}/api/broker.role`);
    if (!response.ok) {
      throw await parseFault(response);
    }
    return (await response.json()) as RoleInfo;
  }

  async peers(): Promise<PeerEntry[]> {
    return this.postJson<PeerEntry[]>("peer.list", {});
  }

  async submitJob(fields: SubmitFields): Promise<string> {
    const body = await this.postJson<{ job_id: string }>("job.submit", fields);
    return body.job_id;
  }

  async jobStatus(jobId: string): Promise<JobStatus> {
    return this.postJson<JobStatus>("job.status", { job_id: jobId });
  }

  async jobOutputs(jobId: string): Promise<RunOutputs[]> {
    return this.postJson<RunOutputs[]>("job.outputs", { job_id: jobId });
  }

  async killJob(jobId: string): Promise<void> {
    await this.post("job.kill", { job_id: jobId });
  }

  async fetchOutput(jobId: string, run: number, name: string): Promise<Blob> {
    const response = await this.post("job.fetch", {
      job_id: jobId,
      run_index: run,
      name,
      offset: 0,
      length: 0,
    });
    return response.blob();
  }
}
