// Shapes of the broker's /api JSON mirror. Field names match the RPC
// struct keys; the dashboard renders them verbatim and never recomputes.

export interface PeerEntry {
  peer_id: string;
  url: string;
  coefficient?: number;
  timestamp?: number;
  fresh?: boolean;
}

export interface RoleInfo {
  role: string;
  leader_url: string;
  epoch: number;
  peer_id: string;
}

export interface JobStatus {
  job_id: string;
  runs: string[];
  aggregate: string;
}

export interface OutputFile {
  name: string;
  size: number;
  md5: string;
}

export interface RunOutputs {
  run: number;
  files: OutputFile[];
}

export interface Credential {
  dn: string;
  vos: string[];
  secret: string;
}

export interface SubmitFields {
  job_name: string;
  executable: string; // base64
  submit_file: string; // base64
  submit_file_name: string;
  input_file_names: string[];
}

export const TERMINAL_STATES = new Set(["completed", "failed", "killed"]);

export class ApiFault extends Error {
  constructor(public code: number, message: string) {
    super(message);
    this.name = "ApiFault";
  }
}
