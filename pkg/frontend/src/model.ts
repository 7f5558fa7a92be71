// View models built 1:1 from agent payloads. Nothing here computes,
// transforms or re-serializes document content: every displayed string is
// a value the agent sent, and a sign request can only be assembled from a
// preview the agent produced (its render digest travels along).

import { XElement, child, childText, childrenNamed, escapeXml } from "./xml.js";

export interface FieldEntry {
  label: string;
  path: string;
  value: string;
}

export interface WorkItemView {
  docId: string;
  status: string;
  fields: FieldEntry[];
}

export interface ManualField {
  path: string;
  label: string;
  pattern: string;
}

export interface PreviewForm {
  renderDigest: string;
  lines: string; // verbatim serialization from the agent
}

export interface SignOutcome {
  newDocId: string;
  inputDocId: string;
  inputStatus: string;
  outputStatus: string;
  receiptDigest: string;
}

export interface AgentFault {
  code: string;
  message: string;
  label: string;
}

function parseFields(container: XElement | undefined): FieldEntry[] {
  if (!container) return [];
  return childrenNamed(container, "entry").map((entry) => ({
    label: childText(entry, "label"),
    path: childText(entry, "path"),
    value: childText(entry, "value"),
  }));
}

export function parseWorkList(root: XElement): WorkItemView[] {
  return childrenNamed(root, "item").map((item) => ({
    docId: childText(item, "docId"),
    status: childText(item, "status"),
    fields: parseFields(child(item, "fields")),
  }));
}

export function parseManualFields(root: XElement): ManualField[] {
  return childrenNamed(root, "field").map((f) => ({
    path: childText(f, "path"),
    label: childText(f, "label"),
    pattern: childText(f, "pattern"),
  }));
}

export function parsePreview(root: XElement): PreviewForm {
  return {
    renderDigest: childText(root, "renderDigest"),
    lines: childText(root, "lines"),
  };
}

export function parseSignOutcome(root: XElement): SignOutcome {
  return {
    newDocId: childText(root, "newDocId"),
    inputDocId: childText(root, "inputDocId"),
    inputStatus: childText(root, "inputStatus"),
    outputStatus: childText(root, "outputStatus"),
    receiptDigest: childText(root, "receiptDigest"),
  };
}

export function parseAgentFault(root: XElement): AgentFault {
  return {
    code: childText(root, "code"),
    message: childText(root, "message"),
    label: childText(root, "label"),
  };
}

export function summaryLine(item: WorkItemView): string {
  const byPath = new Map(item.fields.map((f) => [f.path, f.value]));
  const id = byPath.get("eEAC/student/id") ?? "";
  const name = byPath.get("eEAC/student/name") ?? "";
  const exam = byPath.get("eEAC/exam/code") ?? "";
  return `${id}  ${name}  ${exam}`;
}

export function manualValuesXml(values: Record<string, string>): string {
  const entries = Object.keys(values)
    .sort()
    .map((path) => `<entry name="${escapeXml(path)}">${escapeXml(values[path])}</entry>`)
    .join("");
  return `<manualValues>${entries}</manualValues>`;
}

export function validateManual(fields: ManualField[], values: Record<string, string>): Map<string, string> {
  const problems = new Map<string, string>();
  for (const field of fields) {
    const value = values[field.path] ?? "";
    if (value === "") {
      problems.set(field.path, `${field.label} is required`);
      continue;
    }
    if (field.pattern) {
      const re = new RegExp(`^(?:${field.pattern})$`);
      if (!re.test(value)) problems.set(field.path, `${field.label} does not match ${field.pattern}`);
    }
  }
  return problems;
}

/**
 * Sign-gating state machine: a sign request exists only after a preview,
 * carries that preview's render digest, and any manual edit invalidates
 * the preview again.
 */
export class SigningFlow {
  private preview: PreviewForm | null = null;
  private previewedValues = "";

  notePreview(preview: PreviewForm, values: Record<string, string>): void {
    this.preview = preview;
    this.previewedValues = JSON.stringify(values, Object.keys(values).sort());
  }

  onManualEdited(values: Record<string, string>): void {
    const now = JSON.stringify(values, Object.keys(values).sort());
    if (now !== this.previewedValues) this.preview = null;
  }

  get canSign(): boolean {
    return this.preview !== null;
  }

  get currentPreview(): PreviewForm | null {
    return this.preview;
  }

  buildSignRequest(values: Record<string, string>): string {
    if (this.preview === null) {
      throw new Error("nothing previewed: signing is blocked until the form is shown");
    }
    this.onManualEdited(values);
    if (this.preview === null) {
      throw new Error("manual values changed since the preview; preview again");
    }
    return (
      `<signRequest><renderDigest>${escapeXml(this.preview.renderDigest)}</renderDigest>` +
      manualValuesXml(values) +
      `</signRequest>`
    );
  }

  reset(): void {
    this.preview = null;
    this.previewedValues = "";
  }
}
