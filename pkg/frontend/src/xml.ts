// Minimal XML subset parser for agent payloads: elements, attributes and
// character data only. Values come back exactly as the agent sent them;
// only the five named entities are decoded, nothing else is rewritten.

export interface XElement {
  name: string;
  attrs: Record<string, string>;
  children: XElement[];
  text: string; // concatenated character data directly under this element
}

const ENTITIES: Record<string, string> = {
  amp: "&",
  lt: "<",
  gt: ">",
  quot: '"',
  apos: "'",
};

export class XmlParseError extends Error {}

class Cursor {
  i = 0;
  constructor(readonly s: string) {}

  fail(message: string): never {
    throw new XmlParseError(`${message} (offset ${this.i})`);
  }

  peek(): string {
    return this.s[this.i] ?? "";
  }

  skipWs(): void {
    while (" \t\r\n".includes(this.s[this.i] ?? "x")) this.i++;
  }
}

function decodeEntities(raw: string, c: Cursor): string {
  if (!raw.includes("&")) return raw;
  let out = "";
  let i = 0;
  while (i < raw.length) {
    const ch = raw[i];
    if (ch !== "&") {
      out += ch;
      i++;
      continue;
    }
    const end = raw.indexOf(";", i + 1);
    if (end < 0 || end - i > 6) c.fail("unterminated entity");
    const name = raw.slice(i + 1, end);
    const decoded = ENTITIES[name];
    if (decoded === undefined) c.fail(`unsupported entity &${name};`);
    out += decoded;
    i = end + 1;
  }
  return out;
}

function parseName(c: Cursor): string {
  const start = c.i;
  while (/[A-Za-z0-9_.\-]/.test(c.s[c.i] ?? "")) c.i++;
  const name = c.s.slice(start, c.i);
  if (!/^[A-Za-z][A-Za-z0-9_.\-]*$/.test(name)) c.fail(`bad name '${name}'`);
  return name;
}

function parseElement(c: Cursor): XElement {
  if (c.peek() !== "<") c.fail("expected element");
  c.i++;
  const name = parseName(c);
  const attrs: Record<string, string> = {};
  for (;;) {
    const hadWs = " \t\r\n".includes(c.peek());
    c.skipWs();
    const ch = c.peek();
    if (ch === ">") {
      c.i++;
      break;
    }
    if (ch === "/") {
      if (c.s.startsWith("/>", c.i)) {
        c.i += 2;
        return { name, attrs, children: [], text: "" };
      }
      c.fail("expected '/>'");
    }
    if (!hadWs) c.fail("expected whitespace before attribute");
    const attrName = parseName(c);
    c.skipWs();
    if (c.peek() !== "=") c.fail("expected '='");
    c.i++;
    c.skipWs();
    const quote = c.peek();
    if (quote !== '"' && quote !== "'") c.fail("expected quoted value");
    c.i++;
    const close = c.s.indexOf(quote, c.i);
    if (close < 0) c.fail("unterminated attribute value");
    if (attrName in attrs) c.fail(`duplicate attribute ${attrName}`);
    attrs[attrName] = decodeEntities(c.s.slice(c.i, close), c);
    c.i = close + 1;
  }
  const children: XElement[] = [];
  let text = "";
  for (;;) {
    const lt = c.s.indexOf("<", c.i);
    if (lt < 0) c.fail(`unterminated element <${name}>`);
    if (lt > c.i) {
      text += decodeEntities(c.s.slice(c.i, lt), c);
      c.i = lt;
    }
    if (c.s.startsWith("</", c.i)) {
      c.i += 2;
      const closing = parseName(c);
      if (closing !== name) c.fail(`mismatched </${closing}>`);
      c.skipWs();
      if (c.peek() !== ">") c.fail("expected '>'");
      c.i++;
      return { name, attrs, children, text };
    }
    if (c.s.startsWith("<!", c.i) || c.s.startsWith("<?", c.i)) {
      c.fail("markup constructs are not part of the subset");
    }
    children.push(parseElement(c));
  }
}

export function parseXml(source: string): XElement {
  const c = new Cursor(source);
  c.skipWs();
  const root = parseElement(c);
  c.skipWs();
  if (c.i !== c.s.length) c.fail("content after document element");
  return root;
}

export function child(el: XElement, name: string): XElement | undefined {
  return el.children.find((c) => c.name === name);
}

export function childText(el: XElement, name: string): string {
  return child(el, name)?.text ?? "";
}

export function childrenNamed(el: XElement, name: string): XElement[] {
  return el.children.filter((c) => c.name === name);
}

export function escapeXml(value: string): string {
  return value
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}
