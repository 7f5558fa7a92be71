"""Trustworthy display: render an e-doc completely or refuse it.

The display form is the contract between the signing human and the
signed bytes: every text-bearing node of the content appears exactly
once as a `label: value` line, nothing is invented, reformatted or
hidden, and the serialized form is byte-deterministic so an untrusted
UI can be checked against it. Anything that cannot be shown this way
(unknown structure, unmapped fields, characters a reader cannot see)
is rejected outright; rejection never produces a partial render.

Signing is funneled through this module: `sign_edoc` is the only path
that turns a draft into a signed document, and it signs exactly the
canonical bytes the render was built from.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass
from typing import TYPE_CHECKING

from . import edoc as edoc_mod
from . import sigcrypt
from .clock import fmt_ts, utcnow
from .edoc import EDoc, ValidityReport
from .sigcrypt import TrustStore
from .xmlcore import (
    ForbiddenChar,
    TypeDef,
    XNode,
    a_canon,
    elem,
    find_text,
    sha256_hex,
    text_instances,
    validate_structure,
)

if TYPE_CHECKING:  # pragma: no cover
    from .bundles import DefinitionBundle


class DisplayError(Exception):
    pass


class Unmapped(DisplayError):
    """Text present in the document with no display mapping: the
    hidden-field case; the document is refused."""

    def __init__(self, path: str):
        super().__init__(f"no display mapping for text at {path}")
        self.path = path


class StructureInvalid(DisplayError):
    def __init__(self, violations):
        super().__init__("; ".join(str(v) for v in violations) or "invalid structure")
        self.violations = tuple(violations)


class FormatMismatch(StructureInvalid):
    def __init__(self, path: str, fmt: str, value: str):
        DisplayError.__init__(self, f"value {value!r} at {path} is not a {fmt}")
        self.violations = ()
        self.path = path


class DefinitionMismatch(DisplayError):
    """Document header does not bind to the registered definition."""


FORMATS = ("text", "date", "number")

_DATE_RE = re.compile(r"\d{4}-\d{2}-\d{2}(T\d{2}:\d{2}:\d{2}Z)?")
_NUMBER_RE = re.compile(r"-?[0-9]+(\.[0-9]+)?")

_BAD_CATEGORIES = {"Cc", "Cf", "Co", "Cs", "Zl", "Zp"}


def _printable(value: str) -> bool:
    return all(unicodedata.category(ch) not in _BAD_CATEGORIES for ch in value)


# ---------------------------------------------------------------------------
# Display mapping (the display.xml of a definition bundle)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MappingEntry:
    path: str
    label: str
    format: str = "text"


@dataclass(frozen=True)
class DisplayMapping:
    entries: tuple[MappingEntry, ...]

    def by_path(self) -> dict[str, MappingEntry]:
        return {e.path: e for e in self.entries}


def check_mapping(mapping: DisplayMapping, typedef: TypeDef) -> None:
    seen = set()
    for entry in mapping.entries:
        if not entry.label or not _printable(entry.label):
            raise ValueError(f"unusable label {entry.label!r}")
        if entry.format not in FORMATS:
            raise ValueError(f"unknown display format {entry.format!r}")
        spec = typedef.elements.get(entry.path)
        if spec is None or not spec.text_allowed:
            raise ValueError(f"mapped path {entry.path!r} is not a text field")
        if entry.path in seen:
            raise ValueError(f"path {entry.path!r} mapped twice")
        seen.add(entry.path)


def mapping_to_element(mapping: DisplayMapping) -> XNode:
    return elem(
        "display",
        children=[
            elem(
                "entry",
                children=[
                    elem("path", text=e.path),
                    elem("label", text=e.label),
                    elem("format", text=e.format),
                ],
            )
            for e in mapping.entries
        ],
    )


def mapping_from_element(root: XNode) -> DisplayMapping:
    if root.name != "display":
        raise ValueError("not a display mapping")
    entries = []
    for c in root.children:
        if c.kind != "element":
            continue
        entries.append(
            MappingEntry(
                path=find_text(c, "entry/path") or "",
                label=find_text(c, "entry/label") or "",
                format=find_text(c, "entry/format") or "text",
            )
        )
    return DisplayMapping(entries=tuple(entries))


# ---------------------------------------------------------------------------
# Display form
# ---------------------------------------------------------------------------

HEADER_SEPARATOR = "--"


@dataclass(frozen=True)
class DisplayForm:
    header_lines: tuple[str, ...]
    body_lines: tuple[tuple[str, str], ...]

    def serialize(self) -> str:
        lines = list(self.header_lines)
        lines.append(HEADER_SEPARATOR)
        lines.extend(f"{label}: {value}" for label, value in self.body_lines)
        return "\n".join(lines) + "\n"

    @property
    def render_digest(self) -> str:
        return sha256_hex(self.serialize().encode("utf-8"))


def build_display(
    content: XNode,
    typedef: TypeDef,
    mapping: DisplayMapping,
    header_lines: tuple[str, ...] = (),
) -> DisplayForm:
    """Complete, deterministic rendering of `content`, or a refusal.

    Accepts only when the content validates, every text-bearing node is
    covered by the mapping and every displayed value is printable.
    """
    report = validate_structure(content, typedef)
    if not report.ok:
        raise StructureInvalid(report.violations)
    instances = text_instances(content)
    by_path = mapping.by_path()
    for path, value in instances:
        if path not in by_path:
            raise Unmapped(path)
        if not _printable(value):
            raise ForbiddenChar(f"value at {path} contains an undisplayable character")
        entry = by_path[path]
        if entry.format == "date" and _DATE_RE.fullmatch(value) is None:
            raise FormatMismatch(path, "date", value)
        if entry.format == "number" and _NUMBER_RE.fullmatch(value) is None:
            raise FormatMismatch(path, "number", value)
    for line in header_lines:
        if not _printable(line):
            raise ForbiddenChar("header line contains an undisplayable character")
    grouped: dict[str, list[str]] = {}
    for path, value in instances:
        grouped.setdefault(path, []).append(value)
    body: list[tuple[str, str]] = []
    for entry in mapping.entries:
        for value in grouped.get(entry.path, ()):
            body.append((entry.label, value))
    return DisplayForm(header_lines=tuple(header_lines), body_lines=tuple(body))


def _type_header(bundle: "DefinitionBundle") -> str:
    return f"Type: {bundle.type_id} v{bundle.version}"


def _check_binding(doc: EDoc, bundle: "DefinitionBundle") -> None:
    if (
        doc.header.type_id != bundle.type_id
        or doc.header.version != bundle.version
        or doc.header.def_digest != bundle.def_digest
    ):
        raise DefinitionMismatch(
            f"document bound to {doc.header.type_id} v{doc.header.version} "
            f"digest {doc.header.def_digest[:12]}..., registered definition differs"
        )


def render_to_sign(content: XNode, bundle: "DefinitionBundle") -> tuple[DisplayForm, bytes]:
    """Render a draft and return the exact canonical bytes to be signed.

    The returned bytes are the only thing a signature may ever cover;
    the form's render digest binds what was shown to those bytes.
    """
    form = build_display(
        content,
        bundle.typedef,
        bundle.display,
        header_lines=(_type_header(bundle), "Signature: UNSIGNED DRAFT"),
    )
    return form, a_canon(content)


def prepare_edoc_signing(doc: EDoc, bundle: "DefinitionBundle") -> tuple[DisplayForm, bytes]:
    """Header-binding check plus draft rendering for an unsigned e-doc."""
    _check_binding(doc, bundle)
    return render_to_sign(doc.content, bundle)


def sign_edoc(
    doc: EDoc,
    bundle: "DefinitionBundle",
    key: sigcrypt.PrivateKey,
    cert: sigcrypt.MiniCert,
    *,
    at=None,
) -> tuple[EDoc, DisplayForm]:
    """The one signing path: render first, then sign the rendered bytes."""
    at = at or utcnow()
    form, canonical = prepare_edoc_signing(doc, bundle)
    block = sigcrypt.sign_envelope(doc.content, key, cert, "sign", at=at).signature
    assert sigcrypt.digest_bytes(canonical) == block.digest_value
    return edoc_mod.finalize_signed(doc, block), form


def verify_and_render(
    doc: EDoc,
    bundle: "DefinitionBundle",
    trust: TrustStore,
    at=None,
    *,
    attributes=None,
    revocation=None,
) -> tuple[DisplayForm, ValidityReport]:
    """Verify a signed e-doc and render it with an explicit verdict banner.

    An invalid signature still yields a form (marked INVALID); content
    that cannot be displayed raises and yields nothing.
    """
    at = at or utcnow()
    _check_binding(doc, bundle)
    report = edoc_mod.validate_edoc(
        doc, bundle=bundle, trust=trust, at=at, attributes=attributes, revocation=revocation
    )
    primary = doc.signatures[0] if doc.signatures else None
    verdict = "VALID" if report.valid else "INVALID"
    header = [
        _type_header(bundle),
        f"Signature: {verdict}",
        f"Signer: {primary.signer_cert.subject if primary else '(none)'}",
        f"Signed-At: {fmt_ts(primary.timestamp) if primary else '(never)'}",
        f"Checked-At: {fmt_ts(at)}",
    ]
    for line in report.lines():
        header.append(f"Check {line}")
    form = build_display(doc.content, bundle.typedef, bundle.display, header_lines=tuple(header))
    return form, report
