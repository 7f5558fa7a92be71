"""Strict XML subset: parsing, canonical bytes, structural validation.

Only elements, attributes and character data exist in this subset.
Comments, processing instructions, CDATA sections and DOCTYPEs are
rejected at parse time, as is every character a human reviewer cannot
see (controls, zero-width and direction-override code points). The
canonical serialization (`a_canon`) is the only byte form the rest of
the system signs, digests or stores: attributes sorted by code point,
whitespace-only text between elements dropped, `&<>"` escaped, no XML
declaration, empty elements written as `<a></a>`.
"""

from __future__ import annotations

import hashlib
import re
import unicodedata
from dataclasses import dataclass

__all__ = [
    "XmlError",
    "MalformedXml",
    "ForbiddenConstruct",
    "ForbiddenChar",
    "NotNfc",
    "XNode",
    "elem",
    "text_node",
    "element_text",
    "effective_children",
    "text_instances",
    "find_all",
    "find_one",
    "find_text",
    "parse",
    "a_canon",
    "sha256_hex",
    "ElementSpec",
    "TypeDef",
    "Violation",
    "StructureReport",
    "validate_structure",
    "typedef_to_element",
    "typedef_from_element",
    "typedef_digest",
]


class XmlError(Exception):
    """Base class for subset parser and validation errors."""


class MalformedXml(XmlError):
    pass


class ForbiddenConstruct(XmlError):
    """Comment, processing instruction, CDATA or DOCTYPE in the input."""


class ForbiddenChar(XmlError):
    """Character that cannot be displayed faithfully (control/invisible)."""


class NotNfc(XmlError):
    """Input is not Unicode NFC; rejected rather than normalized."""


NAME_RE = re.compile(r"[A-Za-z][A-Za-z0-9_.\-]*\Z")

# C0 controls except TAB/LF/CR, DEL, zero-width and bidi-control ranges.
_FORBIDDEN_RANGES = (
    (0x00, 0x08),
    (0x0B, 0x0C),
    (0x0E, 0x1F),
    (0x7F, 0x7F),
    (0x200B, 0x200F),
    (0x202A, 0x202E),
    (0x2060, 0x2060),
    (0xFEFF, 0xFEFF),
)

FORBIDDEN_CHARS = frozenset(
    chr(cp) for lo, hi in _FORBIDDEN_RANGES for cp in range(lo, hi + 1)
)

_XML_WS = " \t\r\n"

MAX_DEPTH = 100


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


# ---------------------------------------------------------------------------
# Node model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class XNode:
    """Immutable element or text node.

    `kind` is "element" (name, attrs, children populated) or "text"
    (only `text` populated).
    """

    kind: str
    name: str = ""
    attrs: tuple[tuple[str, str], ...] = ()
    children: tuple["XNode", ...] = ()
    text: str = ""


def elem(name, attrs=(), children=(), text=None) -> XNode:
    """Build an element node; `text`, when given, becomes the first child."""
    if isinstance(attrs, dict):
        attrs = tuple(attrs.items())
    else:
        attrs = tuple((k, v) for k, v in attrs)
    kids = tuple(children)
    if text is not None:
        kids = (text_node(text),) + kids
    return XNode("element", name=name, attrs=attrs, children=kids)


def text_node(value: str) -> XNode:
    return XNode("text", text=value)


def effective_children(node: XNode) -> tuple[XNode, ...]:
    """Children in canonical-form view: adjacent text nodes coalesced,
    whitespace-only text dropped when element siblings are present.

    Serialization, validation and display all use this view, so a
    pretty-printed source, a constructed tree with split text nodes and
    the canonical bytes all describe the same document.
    """
    merged: list[XNode] = []
    for c in node.children:
        if c.kind == "text" and merged and merged[-1].kind == "text":
            merged[-1] = text_node(merged[-1].text + c.text)
        else:
            merged.append(c)
    if any(c.kind == "element" for c in merged):
        return tuple(
            c for c in merged if not (c.kind == "text" and c.text.strip(_XML_WS) == "")
        )
    return tuple(merged)


def element_text(node: XNode) -> str:
    return "".join(c.text for c in effective_children(node) if c.kind == "text")


def text_instances(root: XNode) -> tuple[tuple[str, str], ...]:
    """All (path, text) pairs with non-empty text, in document order."""
    out: list[tuple[str, str]] = []

    def walk(el: XNode, path: str) -> None:
        t = element_text(el)
        if t != "":
            out.append((path, t))
        for c in effective_children(el):
            if c.kind == "element":
                walk(c, f"{path}/{c.name}")

    walk(root, root.name)
    return tuple(out)


def find_all(root: XNode, path: str) -> tuple[XNode, ...]:
    """Elements at a full slash path rooted at the document element."""
    segs = path.split("/")
    if not segs or segs[0] != root.name:
        return ()
    current = [root]
    for seg in segs[1:]:
        nxt: list[XNode] = []
        for el in current:
            nxt.extend(c for c in el.children if c.kind == "element" and c.name == seg)
        current = nxt
    return tuple(current)


def find_one(root: XNode, path: str) -> XNode | None:
    found = find_all(root, path)
    return found[0] if found else None


def find_text(root: XNode, path: str) -> str | None:
    el = find_one(root, path)
    return element_text(el) if el is not None else None


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_ENTITIES = {"amp": "&", "lt": "<", "gt": ">", "quot": '"', "apos": "'"}


def parse(data: bytes) -> XNode:
    """Parse subset XML from UTF-8 bytes into the root element.

    Raises MalformedXml, ForbiddenConstruct, ForbiddenChar or NotNfc.
    Round trip through `a_canon` is stable.
    """
    try:
        s = data.decode("utf-8", errors="strict")
    except UnicodeDecodeError as exc:
        raise MalformedXml(f"input is not valid UTF-8: {exc}") from exc
    if not unicodedata.is_normalized("NFC", s):
        raise NotNfc("input is not Unicode NFC")
    for i, ch in enumerate(s):
        if ch in FORBIDDEN_CHARS:
            raise ForbiddenChar(f"forbidden character U+{ord(ch):04X} at offset {i}")
    return _Parser(s).document()


class _Parser:
    __slots__ = ("s", "i", "n")

    def __init__(self, s: str):
        self.s = s
        self.i = 0
        self.n = len(s)

    def fail(self, message: str) -> MalformedXml:
        return MalformedXml(f"{message} (offset {self.i})")

    def skip_ws(self) -> None:
        while self.i < self.n and self.s[self.i] in _XML_WS:
            self.i += 1

    def document(self) -> XNode:
        self.skip_ws()
        if self.i >= self.n or self.s[self.i] != "<":
            raise self.fail("document must start with an element")
        self._reject_markup_constructs()
        root = self.element(depth=0)
        self.skip_ws()
        if self.i != self.n:
            raise self.fail("content after document element")
        return root

    def _reject_markup_constructs(self) -> None:
        # Caller guarantees s[i] == "<".
        s, i = self.s, self.i
        if s.startswith("<!--", i):
            raise ForbiddenConstruct("comment")
        if s.startswith("<![CDATA[", i):
            raise ForbiddenConstruct("CDATA section")
        if s.startswith("<!", i):
            raise ForbiddenConstruct("DOCTYPE or markup declaration")
        if s.startswith("<?", i):
            raise ForbiddenConstruct("processing instruction or XML declaration")

    def name(self) -> str:
        start = self.i
        s, n = self.s, self.n
        while self.i < n and (s[self.i].isalnum() or s[self.i] in "_.-"):
            self.i += 1
        value = s[start:self.i]
        if not NAME_RE.match(value):
            self.i = start
            raise self.fail(f"invalid name {value!r}")
        return value

    def element(self, depth: int) -> XNode:
        if depth > MAX_DEPTH:
            raise self.fail("element nesting too deep")
        if self.s[self.i] != "<":
            raise self.fail("expected element")
        self.i += 1
        name = self.name()
        attrs: list[tuple[str, str]] = []
        seen: set[str] = set()
        while True:
            had_ws = self.i < self.n and self.s[self.i] in _XML_WS
            self.skip_ws()
            if self.i >= self.n:
                raise self.fail("unterminated start tag")
            ch = self.s[self.i]
            if ch == ">":
                self.i += 1
                children = self.content(name, depth)
                return XNode("element", name=name, attrs=tuple(attrs), children=children)
            if ch == "/":
                if not self.s.startswith("/>", self.i):
                    raise self.fail("expected '/>'")
                self.i += 2
                return XNode("element", name=name, attrs=tuple(attrs))
            if not had_ws:
                raise self.fail("expected whitespace before attribute")
            aname = self.name()
            if aname in seen:
                raise self.fail(f"duplicate attribute {aname!r}")
            seen.add(aname)
            self.skip_ws()
            if self.i >= self.n or self.s[self.i] != "=":
                raise self.fail("expected '=' after attribute name")
            self.i += 1
            self.skip_ws()
            attrs.append((aname, self.attr_value()))

    def attr_value(self) -> str:
        if self.i >= self.n or self.s[self.i] not in "\"'":
            raise self.fail("expected quoted attribute value")
        quote = self.s[self.i]
        self.i += 1
        start = self.i
        end = self.s.find(quote, start)
        if end < 0:
            raise self.fail("unterminated attribute value")
        raw = self.s[start:end]
        self.i = end + 1
        if "<" in raw:
            raise self.fail("'<' not allowed in attribute value")
        return self.decode_entities(raw)

    def content(self, name: str, depth: int) -> tuple[XNode, ...]:
        kids: list[XNode] = []
        s, n = self.s, self.n
        while True:
            if self.i >= n:
                raise self.fail(f"unterminated element <{name}>")
            lt = s.find("<", self.i)
            if lt < 0:
                raise self.fail(f"unterminated element <{name}>")
            if lt > self.i:
                kids.append(text_node(self.decode_entities(s[self.i:lt])))
                self.i = lt
            if s.startswith("</", self.i):
                self.i += 2
                closing = self.name()
                if closing != name:
                    raise self.fail(f"mismatched end tag </{closing}> for <{name}>")
                self.skip_ws()
                if self.i >= n or s[self.i] != ">":
                    raise self.fail("expected '>' in end tag")
                self.i += 1
                return tuple(kids)
            self._reject_markup_constructs()
            kids.append(self.element(depth + 1))

    def decode_entities(self, raw: str) -> str:
        if "&" not in raw:
            return raw
        out: list[str] = []
        i, n = 0, len(raw)
        while i < n:
            ch = raw[i]
            if ch != "&":
                out.append(ch)
                i += 1
                continue
            end = raw.find(";", i + 1, i + 8)
            if end < 0:
                raise self.fail("unterminated entity reference")
            entity = raw[i + 1:end]
            if entity not in _ENTITIES:
                # Numeric character references are rejected on purpose: they
                # could smuggle characters past the forbidden-character scan.
                raise self.fail(f"unsupported entity &{entity};")
            out.append(_ENTITIES[entity])
            i = end + 1
        return "".join(out)


# ---------------------------------------------------------------------------
# Canonical serialization
# ---------------------------------------------------------------------------

def _escape(value: str) -> str:
    return (
        value.replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace(">", "&gt;")
        .replace('"', "&quot;")
    )


def _check_value_chars(value: str) -> None:
    for ch in value:
        if ch in FORBIDDEN_CHARS:
            raise ForbiddenChar(f"forbidden character U+{ord(ch):04X} in node value")


def a_canon(node: XNode) -> bytes:
    """Deterministic canonical UTF-8 bytes of an element tree."""
    if node.kind != "element":
        raise ValueError("canonical form starts at an element node")
    out: list[str] = []
    _canon_element(node, out, 0)
    return "".join(out).encode("utf-8")


def _canon_element(el: XNode, out: list[str], depth: int) -> None:
    if depth > MAX_DEPTH:
        raise ValueError("element nesting too deep")
    if not NAME_RE.match(el.name):
        raise ValueError(f"invalid element name {el.name!r}")
    names = [k for k, _ in el.attrs]
    if len(names) != len(set(names)):
        raise ValueError(f"duplicate attribute on <{el.name}>")
    out.append(f"<{el.name}")
    for k, v in sorted(el.attrs):
        if not NAME_RE.match(k):
            raise ValueError(f"invalid attribute name {k!r}")
        _check_value_chars(v)
        out.append(f' {k}="{_escape(v)}"')
    out.append(">")
    for c in effective_children(el):
        if c.kind == "text":
            _check_value_chars(c.text)
            out.append(_escape(c.text))
        else:
            _canon_element(c, out, depth + 1)
    out.append(f"</{el.name}>")


# ---------------------------------------------------------------------------
# Type definitions and structural validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ElementSpec:
    required: bool = False
    repeatable: bool = False
    allowed_children: tuple[str, ...] = ()
    text_allowed: bool = False
    text_pattern: str | None = None


@dataclass(frozen=True)
class TypeDef:
    """Closed structure definition for one document type.

    `elements` maps full slash paths (starting with the root element
    name) to their specs; anything not listed is illegal.
    """

    type_id: str
    version: int
    root: str
    elements: dict[str, ElementSpec]

    def check(self) -> None:
        if self.version < 1:
            raise ValueError("typedef version must be >= 1")
        if self.root not in self.elements:
            raise ValueError(f"root path {self.root!r} missing from elements")
        for path, spec in self.elements.items():
            segs = path.split("/")
            if segs[0] != self.root or not all(NAME_RE.match(s) for s in segs):
                raise ValueError(f"path {path!r} not rooted at {self.root!r}")
            if len(segs) > 1:
                parent = "/".join(segs[:-1])
                pspec = self.elements.get(parent)
                if pspec is None or segs[-1] not in pspec.allowed_children:
                    raise ValueError(f"path {path!r} unreachable from its parent")
            for child in spec.allowed_children:
                if f"{path}/{child}" not in self.elements:
                    raise ValueError(f"child {child!r} of {path!r} has no spec")
            if spec.text_pattern is not None:
                re.compile(spec.text_pattern)

    def text_paths(self) -> tuple[str, ...]:
        return tuple(p for p, s in self.elements.items() if s.text_allowed)

    def required_text_paths(self) -> tuple[str, ...]:
        """Text-bearing paths whose whole ancestor chain is required."""
        out = []
        for path, spec in self.elements.items():
            if not spec.text_allowed:
                continue
            segs = path.split("/")
            chain = ["/".join(segs[: i + 1]) for i in range(len(segs))]
            if all(self.elements[p].required or p == self.root for p in chain):
                out.append(path)
        return tuple(sorted(out))


UNKNOWN_ELEMENT = "UnknownElement"
UNKNOWN_ATTRIBUTE = "UnknownAttribute"
MISSING_REQUIRED = "MissingRequired"
NOT_REPEATABLE = "NotRepeatable"
TEXT_NOT_ALLOWED = "TextNotAllowed"
PATTERN_VIOLATION = "PatternViolation"
ROOT_MISMATCH = "RootMismatch"


@dataclass(frozen=True)
class Violation:
    code: str
    path: str
    detail: str = ""

    def __str__(self) -> str:
        msg = f"{self.code} at /{self.path}"
        return f"{msg}: {self.detail}" if self.detail else msg


@dataclass(frozen=True)
class StructureReport:
    ok: bool
    violations: tuple[Violation, ...] = ()


def validate_structure(node: XNode, typedef: TypeDef) -> StructureReport:
    """Check a document against a closed TypeDef; reports, never raises."""
    violations: list[Violation] = []

    if node.kind != "element" or node.name != typedef.root:
        violations.append(
            Violation(ROOT_MISMATCH, node.name or "(text)", f"expected <{typedef.root}>")
        )
        return StructureReport(False, tuple(violations))

    def walk(el: XNode, path: str) -> None:
        spec = typedef.elements[path]
        for aname, _ in el.attrs:
            violations.append(Violation(UNKNOWN_ATTRIBUTE, path, f"attribute {aname!r}"))
        text = element_text(el)
        if text and not spec.text_allowed:
            violations.append(Violation(TEXT_NOT_ALLOWED, path))
        if spec.text_allowed and spec.text_pattern is not None:
            if re.fullmatch(spec.text_pattern, text) is None:
                violations.append(
                    Violation(PATTERN_VIOLATION, path, f"value {text!r}")
                )
        counts: dict[str, int] = {}
        for c in effective_children(el):
            if c.kind != "element":
                continue
            child_path = f"{path}/{c.name}"
            if c.name not in spec.allowed_children or child_path not in typedef.elements:
                violations.append(Violation(UNKNOWN_ELEMENT, child_path))
                continue
            counts[c.name] = counts.get(c.name, 0) + 1
            walk(c, child_path)
        for child in spec.allowed_children:
            child_path = f"{path}/{child}"
            cspec = typedef.elements[child_path]
            n = counts.get(child, 0)
            if cspec.required and n == 0:
                violations.append(Violation(MISSING_REQUIRED, child_path))
            if n > 1 and not cspec.repeatable:
                violations.append(Violation(NOT_REPEATABLE, child_path, f"{n} occurrences"))

    walk(node, typedef.root)
    return StructureReport(not violations, tuple(violations))


# ---------------------------------------------------------------------------
# TypeDef <-> XML (the typedef.xml file inside a definition bundle)
# ---------------------------------------------------------------------------

def _bool_str(value: bool) -> str:
    return "true" if value else "false"


def _parse_bool(value: str, what: str) -> bool:
    if value == "true":
        return True
    if value == "false":
        return False
    raise ValueError(f"bad boolean {value!r} for {what}")


def typedef_to_element(td: TypeDef) -> XNode:
    element_nodes = []
    for path in sorted(td.elements):
        spec = td.elements[path]
        kids = [
            elem("path", text=path),
            elem("required", text=_bool_str(spec.required)),
            elem("repeatable", text=_bool_str(spec.repeatable)),
            elem("textAllowed", text=_bool_str(spec.text_allowed)),
        ]
        if spec.text_pattern is not None:
            kids.append(elem("textPattern", text=spec.text_pattern))
        if spec.allowed_children:
            kids.append(
                elem("children", children=[elem("c", text=c) for c in spec.allowed_children])
            )
        element_nodes.append(elem("element", children=kids))
    return elem(
        "typedef",
        children=[
            elem("typeId", text=td.type_id),
            elem("version", text=str(td.version)),
            elem("root", text=td.root),
            elem("elements", children=element_nodes),
        ],
    )


def typedef_from_element(root: XNode) -> TypeDef:
    if root.name != "typedef":
        raise ValueError("not a typedef document")
    elements: dict[str, ElementSpec] = {}
    container = find_one(root, "typedef/elements")
    if container is None:
        raise ValueError("typedef has no elements")
    for el in container.children:
        if el.kind != "element" or el.name != "element":
            continue
        fields = {c.name: c for c in el.children if c.kind == "element"}
        path = element_text(fields["path"])
        pattern_el = fields.get("textPattern")
        children_el = fields.get("children")
        allowed = tuple(
            element_text(c)
            for c in (children_el.children if children_el is not None else ())
            if c.kind == "element" and c.name == "c"
        )
        elements[path] = ElementSpec(
            required=_parse_bool(element_text(fields["required"]), "required"),
            repeatable=_parse_bool(element_text(fields["repeatable"]), "repeatable"),
            allowed_children=allowed,
            text_allowed=_parse_bool(element_text(fields["textAllowed"]), "textAllowed"),
            text_pattern=element_text(pattern_el) if pattern_el is not None else None,
        )
    td = TypeDef(
        type_id=find_text(root, "typedef/typeId") or "",
        version=int(find_text(root, "typedef/version") or "0"),
        root=find_text(root, "typedef/root") or "",
        elements=elements,
    )
    td.check()
    return td


def typedef_digest(td: TypeDef) -> str:
    """Hex digest binding e-docs to the exact definition that shaped them."""
    return sha256_hex(a_canon(typedef_to_element(td)))
