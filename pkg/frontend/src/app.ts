// DOM layer. Builds the whole dashboard inside a root element: a connect
// panel (broker URL + credential, entered once and held in memory), the
// stale banner, the peers table, the submit form, and the tracked-jobs
// table with kill buttons and output download links. All values shown
// come verbatim from the JSON mirror.

import { ApiClient } from "./api.js";
import { DashboardStore } from "./store.js";
import { Credential, RunOutputs } from "./types.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  if (text) {
    node.textContent = text;
  }
  return node;
}

export function b64encode(data: Uint8Array): string {
  let binary = "";
  const CHUNK = 0x8000;
  for (let offset = 0; offset < data.length; offset += CHUNK) {
    binary += String.fromCharCode(...data.subarray(offset, offset + CHUNK));
  }
  return btoa(binary);
}

export function b64encodeText(text: string): string {
  return b64encode(new TextEncoder().encode(text));
}

export class App {
  store: DashboardStore;
  private root: HTMLElement;
  private outputsCache = new Map<string, RunOutputs[]>();

  constructor(root: HTMLElement, brokerUrl: string, pollIntervalMs = 2000) {
    this.root = root;
    this.store = new DashboardStore(new ApiClient(brokerUrl), pollIntervalMs);
    this.store.onChange = () => this.render();
    this.buildSkeleton(brokerUrl);
  }

  private query<T extends HTMLElement>(selector: string): T {
    const node = this.root.querySelector(selector);
    if (!node) {
      throw new Error(`missing element ${selector}`);
    }
    return node as T;
  }

  private buildSkeleton(brokerUrl: string): void {
    this.root.innerHTML = "";
    const banner = el("div", { id: "stale-banner", class: "banner hidden" },
      "connection lost - retrying and looking for a new broker");
    this.root.append(banner);

    const connect = el("div", { id: "connect-panel", class: "panel" });
    connect.append(el("h2", {}, "connect"));
    const urlInput = el("input", { id: "broker-url", value: brokerUrl });
    const credInput = el("textarea", {
      id: "credential",
      placeholder: '{"dn": "/O=...", "vos": [], "secret": "..."}',
    });
    const connectBtn = el("button", { id: "connect-btn" }, "connect");
    const connectError = el("div", { id: "connect-error", class: "error" });
    connect.append(el("label", {}, "broker URL"), urlInput,
      el("label", {}, "credential JSON"), credInput, connectBtn, connectError);
    this.root.append(connect);

    const main = el("div", { id: "main-panel", class: "hidden" });

    const peersBox = el("div", { class: "panel" });
    peersBox.append(el("h2", {}, "peers"));
    peersBox.append(el("table", { id: "peers-table" }));
    main.append(peersBox);

    const submitBox = el("div", { class: "panel" });
    submitBox.append(el("h2", {}, "submit a job"));
    submitBox.append(
      el("label", {}, "job name"),
      el("input", { id: "job-name", value: "" }),
      el("label", {}, "executable (paste script or choose file)"),
      el("textarea", { id: "exe-text", placeholder: "#!/bin/sh\n..." }),
      el("input", { id: "exe-file", type: "file" }),
      el("label", {}, "submit file"),
      el("textarea", { id: "submit-text" }, ""),
      el("label", {}, "input paths (space separated, server-side)"),
      el("input", { id: "input-paths", value: "" }),
      el("button", { id: "submit-btn" }, "submit"),
      el("div", { id: "submit-error", class: "error" }),
    );
    main.append(submitBox);

    const jobsBox = el("div", { class: "panel" });
    jobsBox.append(el("h2", {}, "jobs"));
    jobsBox.append(el("div", { id: "jobs-empty" }, "no jobs tracked yet"));
    jobsBox.append(el("table", { id: "jobs-table" }));
    jobsBox.append(el("div", { id: "outputs-panel" }));
    main.append(jobsBox);

    this.root.append(main);

    connectBtn.addEventListener("click", () => void this.connect());
    this.query<HTMLButtonElement>("#submit-btn").addEventListener(
      "click", () => void this.submit());
  }

  async connect(): Promise<void> {
    const errorBox = this.query<HTMLDivElement>("#connect-error");
    errorBox.textContent = "";
    let credential: Credential;
    try {
      credential = JSON.parse(this.query<HTMLTextAreaElement>("#credential").value);
    } catch {
      errorBox.textContent = "credential is not valid JSON";
      return;
    }
    this.store.api.setBase(this.query<HTMLInputElement>("#broker-url").value);
    try {
      await this.store.api.login(credential);
    } catch (err) {
      errorBox.textContent = err instanceof Error ? err.message : String(err);
      return;
    }
    this.query("#connect-panel").classList.add("hidden");
    this.query("#main-panel").classList.remove("hidden");
    this.store.start();
  }

  async submit(): Promise<void> {
    const errorBox = this.query<HTMLDivElement>("#submit-error");
    errorBox.textContent = "";
    const name = this.query<HTMLInputElement>("#job-name").value.trim();
    const submitText = this.query<HTMLTextAreaElement>("#submit-text").value;
    const inputPaths = this.query<HTMLInputElement>("#input-paths").value
      .split(/\s+/).filter((p) => p.length > 0);

    const executable = await this.executableBase64();
    // client-side validation: an empty executable never leaves the page
    if (!executable) {
      errorBox.textContent = "executable is required";
      return;
    }
    if (!name) {
      errorBox.textContent = "job name is required";
      return;
    }
    if (!submitText.trim()) {
      errorBox.textContent = "submit file is required";
      return;
    }
    if (inputPaths.length === 0) {
      errorBox.textContent = "at least one input path is required";
      return;
    }
    try {
      await this.store.submit({
        job_name: name,
        executable,
        submit_file: b64encodeText(submitText),
        submit_file_name: `${name}.sub`,
        input_file_names: inputPaths,
      });
    } catch (err) {
      errorBox.textContent = err instanceof Error ? err.message : String(err);
    }
  }

  private async executableBase64(): Promise<string> {
    const fileInput = this.query<HTMLInputElement>("#exe-file");
    const file = fileInput.files && fileInput.files[0];
    if (file) {
      const buffer = await file.arrayBuffer();
      return b64encode(new Uint8Array(buffer));
    }
    const text = this.query<HTMLTextAreaElement>("#exe-text").value;
    return text ? b64encodeText(text) : "";
  }

  render(): void {
    this.query("#stale-banner").classList.toggle("hidden", !this.store.stale);
    this.renderPeers();
    this.renderJobs();
  }

  private renderPeers(): void {
    const table = this.query<HTMLTableElement>("#peers-table");
    table.innerHTML = "";
    const head = el("tr");
    for (const title of ["peer", "coefficient", "report"]) {
      head.append(el("th", {}, title));
    }
    table.append(head);
    for (const peer of this.store.peers) {
      const row = el("tr", { "data-peer": peer.peer_id });
      row.append(el("td", {}, peer.peer_id));
      row.append(el("td", {},
        peer.coefficient === undefined ? "-" : String(peer.coefficient)));
      row.append(el("td", {},
        peer.fresh === undefined ? "never" : peer.fresh ? "fresh" : "stale"));
      table.append(row);
    }
  }

  private renderJobs(): void {
    const table = this.query<HTMLTableElement>("#jobs-table");
    const empty = this.query<HTMLDivElement>("#jobs-empty");
    const jobs = this.store.trackedJobs();
    empty.classList.toggle("hidden", jobs.length > 0);
    table.innerHTML = "";
    if (jobs.length === 0) {
      return;
    }
    const head = el("tr");
    for (const title of ["job", "submitted", "state", "runs", ""]) {
      head.append(el("th", {}, title));
    }
    table.append(head);
    for (const job of jobs) {
      const row = el("tr", { "data-job": job.jobId });
      row.append(el("td", {}, job.jobId));
      row.append(el("td", {}, new Date(job.submittedAt).toLocaleTimeString()));
      const state = job.status ? job.status.aggregate : "...";
      row.append(el("td", { class: `state-${state}`, "data-role": "aggregate" }, state));
      row.append(el("td", {}, job.status ? job.status.runs.join(" ") : ""));
      const actions = el("td");
      const killBtn = el("button", { "data-role": "kill" }, "kill");
      killBtn.addEventListener("click", () => {
        void this.store.kill(job.jobId).catch(() => undefined);
      });
      const outputsBtn = el("button", { "data-role": "outputs" }, "outputs");
      outputsBtn.addEventListener("click", () => void this.showOutputs(job.jobId));
      actions.append(killBtn, outputsBtn);
      if (job.error) {
        actions.append(el("span", { class: "error" }, job.error));
      }
      row.append(actions);
      table.append(row);
    }
  }

  async showOutputs(jobId: string): Promise<void> {
    const panel = this.query<HTMLDivElement>("#outputs-panel");
    panel.innerHTML = "";
    panel.append(el("h3", {}, `outputs of ${jobId}`));
    let runs: RunOutputs[];
    try {
      runs = await this.store.api.jobOutputs(jobId);
      this.outputsCache.set(jobId, runs);
    } catch (err) {
      panel.append(el("div", { class: "error" },
        err instanceof Error ? err.message : String(err)));
      return;
    }
    for (const run of runs) {
      const list = el("ul", { "data-run": String(run.run) });
      for (const file of run.files) {
        const item = el("li");
        const link = el("a", { href: "#", "data-file": file.name },
          `run-${run.run}/${file.name} (${file.size} bytes)`);
        link.addEventListener("click", (event) => {
          event.preventDefault();
          void this.download(jobId, run.run, file.name);
        });
        item.append(link);
        list.append(item);
      }
      panel.append(list);
    }
  }

  async download(jobId: string, run: number, name: string): Promise<void> {
    const blob = await this.store.api.fetchOutput(jobId, run, name);
    const url = URL.createObjectURL(blob);
    const anchor = el("a", { href: url, download: name.split("/").pop() ?? name });
    document.body.append(anchor);
    anchor.click();
    anchor.remove();
    URL.revokeObjectURL(url);
  }
}
