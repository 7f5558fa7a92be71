import { readFileSync } from "node:fs";
import { afterEach, describe, expect, it, vi } from "vitest";
import { AgentClient, AgentError, ConnectivityError, TOKEN_HEADER } from "../src/api.js";
import { SigningFlow, parsePreview } from "../src/model.js";
import { parseXml } from "../src/xml.js";

function fixture(name: string): string {
  return readFileSync(new URL(`./fixtures/${name}`, import.meta.url), "utf-8");
}

type Recorded = { url: string; method: string; headers: Record<string, string>; body?: string };

function mockFetch(status: number, payload: string): Recorded[] {
  const calls: Recorded[] = [];
  vi.stubGlobal("fetch", async (url: string, init: RequestInit) => {
    calls.push({
      url,
      method: init.method ?? "GET",
      headers: (init.headers ?? {}) as Record<string, string>,
      body: init.body as string | undefined,
    });
    return new Response(payload, { status });
  });
  return calls;
}

afterEach(() => vi.unstubAllGlobals());

describe("agent client", () => {
  it("sends the session token on every request", async () => {
    const calls = mockFetch(200, fixture("worklist.xml"));
    const client = new AgentClient("", "secret-token");
    await client.workList("eEAC", "01ABC");
    expect(calls[0].headers[TOKEN_HEADER]).toBe("secret-token");
    expect(calls[0].url).toBe("/api/work?type=eEAC&exam=01ABC");
  });

  it("passes work items through without transformation", async () => {
    const raw = fixture("worklist.xml");
    mockFetch(200, raw);
    const items = await new AgentClient("", "t").workList("eEAC", "");
    for (const item of items) {
      for (const field of item.fields) {
        expect(raw).toContain(`<value>${field.value}</value>`);
      }
    }
  });

  it("surfaces agent faults with their code and label", async () => {
    mockFetch(400, fixture("error-manual-missing.xml"));
    const client = new AgentClient("", "t");
    const failure = await client.preview("d".repeat(64), "<manualValues></manualValues>")
      .then(() => null, (err) => err);
    expect(failure).toBeInstanceOf(AgentError);
    expect(failure.fault.code).toBe("ManualFieldMissing");
    expect(failure.fault.label).toBe("Mark");
    expect(failure.httpStatus).toBe(400);
  });

  it("reports connectivity trouble distinctly", async () => {
    vi.stubGlobal("fetch", async () => {
      throw new TypeError("NetworkError");
    });
    const client = new AgentClient("", "t");
    const failure = await client.ping().then(() => null, (err) => err);
    expect(failure).toBeInstanceOf(ConnectivityError);
  });

  it("sign requests on the wire always contain the render digest", async () => {
    const preview = parsePreview(parseXml(fixture("preview.xml")));
    const manual = {
      "eEET/exam/date": "2026-06-10",
      "eEET/exam/mark": "28",
      "eEET/exam/questions": "canonical forms & replay",
    };
    const flow = new SigningFlow();
    flow.notePreview(preview, manual);
    const calls = mockFetch(200, fixture("sign-result.xml"));
    const client = new AgentClient("", "t");
    const outcome = await client.sign("a".repeat(64), flow.buildSignRequest(manual));
    expect(calls[0].method).toBe("POST");
    expect(calls[0].body).toContain(`<renderDigest>${preview.renderDigest}</renderDigest>`);
    expect(outcome.inputStatus).toBe("processed");
    expect(outcome.outputStatus).toBe("issued");
  });
});
