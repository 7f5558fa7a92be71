// Agent HTTP client. Same origin as the page (the agent serves the UI);
// every request carries the session token, bodies are canonical XML both
// ways, and agent refusals surface as AgentError with the agent's own
// code, message and field label.

import { XElement, parseXml } from "./xml.js";
import {
  AgentFault,
  ManualField,
  PreviewForm,
  SignOutcome,
  WorkItemView,
  parseAgentFault,
  parseManualFields,
  parsePreview,
  parseSignOutcome,
  parseWorkList,
} from "./model.js";

export const TOKEN_HEADER = "X-Agent-Token";

export class AgentError extends Error {
  constructor(readonly fault: AgentFault, readonly httpStatus: number) {
    super(fault.message || fault.code);
  }
}

export class ConnectivityError extends Error {}

export class AgentClient {
  constructor(readonly baseUrl: string, public token: string) {}

  private async request(method: string, path: string, body?: string): Promise<XElement> {
    let response: Response;
    try {
      response = await fetch(this.baseUrl + path, {
        method,
        headers: {
          [TOKEN_HEADER]: this.token,
          ...(body ? { "Content-Type": "application/xml" } : {}),
        },
        body,
      });
    } catch (err) {
      throw new ConnectivityError(`agent unreachable: ${String(err)}`);
    }
    const text = await response.text();
    if (!response.ok) {
      let fault: AgentFault = { code: `HTTP${response.status}`, message: text, label: "" };
      try {
        fault = parseAgentFault(parseXml(text));
      } catch {
        // non-XML error body: keep the raw fallback
      }
      throw new AgentError(fault, response.status);
    }
    return parseXml(text);
  }

  async ping(): Promise<void> {
    await this.request("GET", "/api/ping");
  }

  async workList(typeId: string, examCode: string): Promise<WorkItemView[]> {
    const exam = examCode ? `&exam=${encodeURIComponent(examCode)}` : "";
    const payload = await this.request(
      "GET", `/api/work?type=${encodeURIComponent(typeId)}${exam}`,
    );
    return parseWorkList(payload);
  }

  async manualFields(typeId: string): Promise<ManualField[]> {
    const payload = await this.request(
      "GET", `/api/manual-fields?type=${encodeURIComponent(typeId)}`,
    );
    return parseManualFields(payload);
  }

  async preview(docId: string, manualValuesBody: string): Promise<PreviewForm> {
    const payload = await this.request(
      "POST", `/api/doc/${encodeURIComponent(docId)}/preview`, manualValuesBody,
    );
    return parsePreview(payload);
  }

  async sign(docId: string, signRequestBody: string): Promise<SignOutcome> {
    const payload = await this.request(
      "POST", `/api/doc/${encodeURIComponent(docId)}/sign`, signRequestBody,
    );
    return parseSignOutcome(payload);
  }
}
