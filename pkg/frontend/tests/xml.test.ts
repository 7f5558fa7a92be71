import { describe, expect, it } from "vitest";
import { XmlParseError, childText, childrenNamed, escapeXml, parseXml } from "../src/xml.js";

describe("xml subset parser", () => {
  it("parses elements, attributes and text", () => {
    const root = parseXml('<a k="v"><b>hello</b><b>again</b></a>');
    expect(root.name).toBe("a");
    expect(root.attrs).toEqual({ k: "v" });
    expect(childrenNamed(root, "b").map((b) => b.text)).toEqual(["hello", "again"]);
  });

  it("decodes exactly the five named entities", () => {
    const root = parseXml("<a>&amp;&lt;&gt;&quot;&apos;</a>");
    expect(root.text).toBe("&<>\"'");
    expect(() => parseXml("<a>&#65;</a>")).toThrow(XmlParseError);
  });

  it("keeps values verbatim including newlines", () => {
    const payload = "line one\nline two: value\n";
    const root = parseXml(`<lines>${escapeXml(payload)}</lines>`);
    expect(root.text).toBe(payload);
  });

  it("round-trips arbitrary text through escapeXml", () => {
    const nasty = 'a&b<c>d"e\'f\n\tg';
    expect(parseXml(`<x>${escapeXml(nasty)}</x>`).text).toBe(nasty);
    expect(parseXml(`<x k="${escapeXml(nasty)}">z</x>`).attrs.k).toBe(nasty);
  });

  it("refuses markup constructs", () => {
    expect(() => parseXml("<a><!--hidden--></a>")).toThrow(XmlParseError);
    expect(() => parseXml("<a><?pi x?></a>")).toThrow(XmlParseError);
  });

  it("refuses trailing garbage and mismatched tags", () => {
    expect(() => parseXml("<a></a><b></b>")).toThrow(XmlParseError);
    expect(() => parseXml("<a></b>")).toThrow(XmlParseError);
  });

  it("reads nested child text", () => {
    const root = parseXml("<r><inner><deep>x</deep></inner></r>");
    expect(childText(root.children[0], "deep")).toBe("x");
  });
});
