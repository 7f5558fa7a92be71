// Scenario desktop: search pending cards, fill the manual fields in a
// dialog, inspect the agent's rendered form verbatim, sign via the desk
// agent and watch both statuses change. The page itself is untrusted
// chrome: everything shown comes from agent responses, character for
// character, and nothing is signed without the previewed render digest.

import { AgentClient, AgentError, ConnectivityError } from "./api.js";
import {
  ManualField,
  SigningFlow,
  WorkItemView,
  manualValuesXml,
  summaryLine,
  validateManual,
} from "./model.js";

const DOC_TYPE = "eEAC";

interface Ui {
  token: HTMLInputElement;
  exam: HTMLInputElement;
  refresh: HTMLButtonElement;
  banner: HTMLElement;
  rows: HTMLElement;
  dialog: HTMLElement;
  readonlyPane: HTMLElement;
  manualPane: HTMLElement;
  previewPane: HTMLPreElement;
  digestLine: HTMLElement;
  previewButton: HTMLButtonElement;
  signButton: HTMLButtonElement;
  result: HTMLElement;
}

function el<T extends HTMLElement>(id: string): T {
  const found = document.getElementById(id);
  if (!found) throw new Error(`missing #${id}`);
  return found as T;
}

class Desk {
  private client: AgentClient | null = null;
  private items: WorkItemView[] = [];
  private selected: WorkItemView | null = null;
  private manualFields: ManualField[] = [];
  private flow = new SigningFlow();

  constructor(private ui: Ui) {
    ui.refresh.addEventListener("click", () => void this.refresh());
    ui.previewButton.addEventListener("click", () => void this.preview());
    ui.signButton.addEventListener("click", () => void this.sign());
    this.renderDialog(null);
  }

  private banner(text: string, kind: "error" | "ok" | "none"): void {
    this.ui.banner.textContent = text;
    this.ui.banner.className = kind === "none" ? "banner hidden" : `banner ${kind}`;
  }

  private agent(): AgentClient {
    const token = this.ui.token.value.trim();
    if (!this.client || this.client.token !== token) {
      this.client = new AgentClient("", token);
    }
    return this.client;
  }

  async refresh(): Promise<void> {
    this.banner("", "none");
    this.ui.rows.textContent = "";
    this.items = [];
    try {
      this.items = await this.agent().workList(DOC_TYPE, this.ui.exam.value.trim());
      this.manualFields = await this.agent().manualFields(DOC_TYPE);
    } catch (err) {
      this.showError(err);
      this.renderRows();
      return;
    }
    this.renderRows();
  }

  private renderRows(): void {
    this.ui.rows.textContent = "";
    for (const item of this.items) {
      const row = document.createElement("tr");
      row.className = item === this.selected ? "selected" : "";
      const pick = document.createElement("td");
      const button = document.createElement("button");
      button.textContent = "open";
      button.disabled = item.status !== "pending";
      button.addEventListener("click", () => this.select(item));
      pick.appendChild(button);
      const summary = document.createElement("td");
      summary.textContent = summaryLine(item);
      const status = document.createElement("td");
      const badge = document.createElement("span");
      badge.className = `badge ${item.status}`;
      badge.textContent = item.status;
      status.appendChild(badge);
      const id = document.createElement("td");
      id.className = "docid";
      id.textContent = item.docId;
      row.append(pick, summary, status, id);
      this.ui.rows.appendChild(row);
    }
  }

  private select(item: WorkItemView): void {
    this.selected = item;
    this.flow.reset();
    this.renderDialog(item);
    this.renderRows();
  }

  private renderDialog(item: WorkItemView | null): void {
    const ui = this.ui;
    ui.dialog.classList.toggle("hidden", item === null);
    ui.previewPane.textContent = "";
    ui.digestLine.textContent = "";
    ui.result.textContent = "";
    ui.signButton.disabled = true;
    if (!item) return;
    ui.readonlyPane.textContent = "";
    for (const field of item.fields) {
      const line = document.createElement("div");
      line.className = "readonly-entry";
      line.textContent = `${field.label}: ${field.value}`;
      ui.readonlyPane.appendChild(line);
    }
    ui.manualPane.textContent = "";
    for (const field of this.manualFields) {
      const label = document.createElement("label");
      label.textContent = field.label;
      const input = document.createElement("input");
      input.dataset.path = field.path;
      input.placeholder = field.pattern;
      input.addEventListener("input", () => {
        this.flow.onManualEdited(this.manualValues());
        ui.signButton.disabled = !this.flow.canSign;
      });
      const problem = document.createElement("span");
      problem.className = "field-problem";
      problem.dataset.problemFor = field.path;
      label.append(input, problem);
      ui.manualPane.appendChild(label);
    }
  }

  private manualValues(): Record<string, string> {
    const values: Record<string, string> = {};
    this.ui.manualPane.querySelectorAll("input").forEach((input) => {
      values[(input as HTMLInputElement).dataset.path ?? ""] = (input as HTMLInputElement).value;
    });
    return values;
  }

  private showFieldProblems(problems: Map<string, string>): void {
    this.ui.manualPane.querySelectorAll<HTMLElement>(".field-problem").forEach((span) => {
      span.textContent = problems.get(span.dataset.problemFor ?? "") ?? "";
    });
  }

  async preview(): Promise<void> {
    if (!this.selected) return;
    const values = this.manualValues();
    const problems = validateManual(this.manualFields, values);
    this.showFieldProblems(problems);
    if (problems.size > 0) return;
    try {
      const preview = await this.agent().preview(this.selected.docId, manualValuesXml(values));
      this.flow.notePreview(preview, values);
      // verbatim: the pane holds exactly the agent's serialized form
      this.ui.previewPane.textContent = preview.lines;
      this.ui.digestLine.textContent = `render digest: ${preview.renderDigest}`;
      this.ui.signButton.disabled = false;
      this.banner("", "none");
    } catch (err) {
      this.ui.signButton.disabled = true;
      this.showError(err);
    }
  }

  async sign(): Promise<void> {
    if (!this.selected) return;
    let body: string;
    try {
      body = this.flow.buildSignRequest(this.manualValues());
    } catch (err) {
      this.showError(err);
      this.ui.signButton.disabled = true;
      return;
    }
    try {
      const outcome = await this.agent().sign(this.selected.docId, body);
      this.ui.result.textContent =
        `ticket ${outcome.newDocId} ${outcome.outputStatus}; ` +
        `card ${outcome.inputDocId} ${outcome.inputStatus}; ` +
        `receipt ${outcome.receiptDigest}`;
      this.banner("signed and stored", "ok");
      this.selected = null;
      this.flow.reset();
      this.renderDialog(null);
      await this.refresh();
    } catch (err) {
      this.showError(err);
      await this.refresh();
    }
  }

  private showError(err: unknown): void {
    if (err instanceof AgentError) {
      const label = err.fault.label ? ` [${err.fault.label}]` : "";
      this.banner(`${err.fault.code}${label}: ${err.fault.message}`, "error");
      if (err.fault.label) {
        const problems = new Map<string, string>();
        for (const field of this.manualFields) {
          if (field.label === err.fault.label) problems.set(field.path, err.fault.message);
        }
        this.showFieldProblems(problems);
      }
    } else if (err instanceof ConnectivityError) {
      this.banner(err.message, "error");
    } else {
      this.banner(String(err), "error");
    }
  }
}

export function mount(): void {
  const desk = new Desk({
    token: el<HTMLInputElement>("token"),
    exam: el<HTMLInputElement>("exam"),
    refresh: el<HTMLButtonElement>("refresh"),
    banner: el<HTMLElement>("banner"),
    rows: el<HTMLElement>("rows"),
    dialog: el<HTMLElement>("dialog"),
    readonlyPane: el<HTMLElement>("readonly"),
    manualPane: el<HTMLElement>("manual"),
    previewPane: el<HTMLPreElement>("preview"),
    digestLine: el<HTMLElement>("digest"),
    previewButton: el<HTMLButtonElement>("do-preview"),
    signButton: el<HTMLButtonElement>("do-sign"),
    result: el<HTMLElement>("result"),
  });
  void desk;
}

if (typeof document !== "undefined" && document.getElementById("rows")) {
  mount();
}
