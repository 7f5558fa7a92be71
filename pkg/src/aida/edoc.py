"""Typed e-documents: assembly, lifecycle attributes, processing rules,
revocation records and full validity reports.

An e-doc binds its content to the exact definition that shaped it via a
digest in the header, and gets a content-addressed id computed over the
canonical signed bytes at store time. Attributes split into static ones
(stamped from the definition bundle, immutable) and dynamic ones such
as `status`, whose changes must follow the type's transition table.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from datetime import datetime

from . import sigcrypt
from .clock import fmt_ts, parse_ts, utcnow
from .sigcrypt import SignatureBlock, SignedDoc, TrustStore
from .xmlcore import (
    TypeDef,
    XNode,
    a_canon,
    elem,
    element_text,
    find_one,
    find_text,
    sha256_hex,
    text_node,
    validate_structure,
)


class EdocError(Exception):
    pass


class MissingField(EdocError):
    def __init__(self, path: str):
        super().__init__(f"missing field {path}")
        self.path = path


class UnknownField(EdocError):
    def __init__(self, path: str):
        super().__init__(f"unknown field {path}")
        self.path = path


class PatternViolation(EdocError):
    def __init__(self, path: str, value: str):
        super().__init__(f"value {value!r} not acceptable at {path}")
        self.path = path


class ManualFieldMissing(EdocError):
    def __init__(self, label: str, path: str):
        super().__init__(f"manual field {label!r} not provided")
        self.label = label
        self.path = path


class InputTypeMismatch(EdocError):
    pass


class IllegalTransition(EdocError):
    def __init__(self, current: str, to: str):
        super().__init__(f"no transition {current!r} -> {to!r}")
        self.current = current
        self.to = to


class MalformedEdoc(EdocError):
    pass


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def assemble(typedef: TypeDef, field_values: dict[str, str]) -> XNode:
    """Build content from leaf values; the result validates structurally.

    `field_values` maps full text-bearing paths to their string values.
    Required text paths must all be covered; values must satisfy the
    definition's patterns; unknown paths are refused outright.
    """
    text_paths = {p for p in typedef.elements if typedef.elements[p].text_allowed}
    for path in field_values:
        if path not in text_paths:
            raise UnknownField(path)
    for path in typedef.required_text_paths():
        if path not in field_values:
            raise MissingField(path)
    for path, value in field_values.items():
        pattern = typedef.elements[path].text_pattern
        if pattern is not None and re.fullmatch(pattern, value) is None:
            raise PatternViolation(path, value)

    needed: set[str] = set()

    def need(path: str) -> None:
        segs = path.split("/")
        for i in range(len(segs)):
            needed.add("/".join(segs[: i + 1]))

    for path in field_values:
        need(path)
    for path, spec in typedef.elements.items():
        segs = path.split("/")
        chain = ["/".join(segs[: i + 1]) for i in range(len(segs))]
        if all(typedef.elements[p].required or p == typedef.root for p in chain):
            need(path)

    def build(path: str) -> XNode:
        spec = typedef.elements[path]
        children = []
        if path in field_values:
            children.append(text_node(field_values[path]))
        for child in spec.allowed_children:
            child_path = f"{path}/{child}"
            if child_path in needed:
                children.append(build(child_path))
        return XNode("element", name=path.split("/")[-1], children=tuple(children))

    return build(typedef.root)


# ---------------------------------------------------------------------------
# E-doc container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EDocHeader:
    type_id: str
    version: int
    def_digest: str
    doc_id: str
    created_at: datetime


@dataclass(frozen=True)
class EDoc:
    header: EDocHeader
    content: XNode
    signatures: tuple[SignatureBlock, ...] = ()

    @property
    def signed(self) -> bool:
        return bool(self.signatures)


def new_unsigned(type_id: str, version: int, def_digest: str, content: XNode, *, at=None) -> EDoc:
    return EDoc(
        header=EDocHeader(
            type_id=type_id,
            version=version,
            def_digest=def_digest,
            doc_id="",
            created_at=at or utcnow(),
        ),
        content=content,
    )


def _header_element(header: EDocHeader, *, include_doc_id: bool) -> XNode:
    kids = [
        elem("typeId", text=header.type_id),
        elem("version", text=str(header.version)),
        elem("defDigest", text=header.def_digest),
    ]
    if include_doc_id and header.doc_id:
        kids.append(elem("docId", text=header.doc_id))
    kids.append(elem("createdAt", text=fmt_ts(header.created_at)))
    return elem("header", children=kids)


def edoc_to_element(doc: EDoc, *, include_doc_id: bool = True) -> XNode:
    kids = [
        _header_element(doc.header, include_doc_id=include_doc_id),
        elem("content", children=[doc.content]),
    ]
    if doc.signatures:
        kids.append(
            elem(
                "signatures",
                children=[sigcrypt.block_to_element(b) for b in doc.signatures],
            )
        )
    return elem("edoc", children=kids)


def edoc_from_element(root: XNode) -> EDoc:
    if root.name != "edoc":
        raise MalformedEdoc("not an edoc element")
    content_el = find_one(root, "edoc/content")
    inner = [c for c in (content_el.children if content_el else ()) if c.kind == "element"]
    if len(inner) != 1:
        raise MalformedEdoc("edoc content must hold exactly one element")
    try:
        header = EDocHeader(
            type_id=find_text(root, "edoc/header/typeId") or "",
            version=int(find_text(root, "edoc/header/version") or "0"),
            def_digest=find_text(root, "edoc/header/defDigest") or "",
            doc_id=find_text(root, "edoc/header/docId") or "",
            created_at=parse_ts(find_text(root, "edoc/header/createdAt") or ""),
        )
    except ValueError as exc:
        raise MalformedEdoc(f"bad edoc header: {exc}") from exc
    sig_container = find_one(root, "edoc/signatures")
    signatures = tuple(
        sigcrypt.block_from_element(c)
        for c in (sig_container.children if sig_container else ())
        if c.kind == "element"
    )
    return EDoc(header=header, content=inner[0], signatures=signatures)


def edoc_to_bytes(doc: EDoc) -> bytes:
    return a_canon(edoc_to_element(doc))


def parse_edoc(data: bytes) -> EDoc:
    from .xmlcore import parse

    return edoc_from_element(parse(data))


def compute_doc_id(doc: EDoc) -> str:
    """Content-addressed id: digest over header (sans id), content and
    the signatures present at store time."""
    return sha256_hex(a_canon(edoc_to_element(doc, include_doc_id=False)))


def finalize_signed(doc: EDoc, block: SignatureBlock) -> EDoc:
    signed = replace(doc, signatures=doc.signatures + (block,))
    return replace(signed, header=replace(signed.header, doc_id=compute_doc_id(signed)))


def content_digest(doc: EDoc) -> str:
    return sha256_hex(a_canon(doc.content))


# ---------------------------------------------------------------------------
# Attributes and status lifecycle
# ---------------------------------------------------------------------------

STATUS_ATTR = "status"


@dataclass(frozen=True)
class AttributeSet:
    static: tuple[tuple[str, str], ...] = ()
    dynamic: tuple[tuple[str, str], ...] = ()

    def get(self, name: str) -> str | None:
        for k, v in self.static + self.dynamic:
            if k == name:
                return v
        return None

    def is_static(self, name: str) -> bool:
        return any(k == name for k, _ in self.static)

    def is_dynamic(self, name: str) -> bool:
        return any(k == name for k, _ in self.dynamic)

    @property
    def status(self) -> str:
        return self.get(STATUS_ATTR) or ""

    def with_dynamic(self, name: str, value: str) -> "AttributeSet":
        updated = tuple(
            (k, value if k == name else v) for k, v in self.dynamic
        )
        if not self.is_dynamic(name):
            updated = self.dynamic + ((name, value),)
        return replace(self, dynamic=updated)


@dataclass(frozen=True)
class TransitionTable:
    edges: frozenset[tuple[str, str]]

    def states(self) -> frozenset[str]:
        return frozenset(s for edge in self.edges for s in edge)

    def allows(self, current: str, to: str) -> bool:
        return (current, to) in self.edges


def transition_status(attrs: AttributeSet, to: str, table: TransitionTable) -> AttributeSet:
    current = attrs.status
    if not table.allows(current, to):
        raise IllegalTransition(current, to)
    return attrs.with_dynamic(STATUS_ATTR, to)


def attrs_to_element(attrs: AttributeSet) -> XNode:
    def entries(pairs):
        return [elem("entry", attrs=[("name", k)], text=v) for k, v in pairs]

    return elem(
        "attributes",
        children=[
            elem("static", children=entries(attrs.static)),
            elem("dynamic", children=entries(attrs.dynamic)),
        ],
    )


def attrs_from_element(root: XNode) -> AttributeSet:
    def read(container_name):
        container = find_one(root, f"attributes/{container_name}")
        return tuple(
            (dict(c.attrs)["name"], element_text(c))
            for c in (container.children if container else ())
            if c.kind == "element"
        )

    return AttributeSet(static=read("static"), dynamic=read("dynamic"))


# ---------------------------------------------------------------------------
# Processing rules (the "properties file" of a definition bundle)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CopyRule:
    from_path: str
    to_path: str


@dataclass(frozen=True)
class ConstRule:
    to_path: str
    value: str


@dataclass(frozen=True)
class ManualRule:
    to_path: str
    label: str


Rule = CopyRule | ConstRule | ManualRule


@dataclass(frozen=True)
class ProcessingRules:
    input_type: str
    output_type: str
    rules: tuple[Rule, ...]

    def manual_rules(self) -> tuple[ManualRule, ...]:
        return tuple(r for r in self.rules if isinstance(r, ManualRule))


def rules_to_element(rules: ProcessingRules) -> XNode:
    steps = []
    for r in rules.rules:
        if isinstance(r, CopyRule):
            steps.append(elem("copy", children=[elem("from", text=r.from_path), elem("to", text=r.to_path)]))
        elif isinstance(r, ConstRule):
            steps.append(elem("const", children=[elem("to", text=r.to_path), elem("value", text=r.value)]))
        else:
            steps.append(elem("manual", children=[elem("to", text=r.to_path), elem("label", text=r.label)]))
    return elem(
        "rules",
        children=[
            elem("inputType", text=rules.input_type),
            elem("outputType", text=rules.output_type),
            elem("steps", children=steps),
        ],
    )


def rules_from_element(root: XNode) -> ProcessingRules:
    steps_el = find_one(root, "rules/steps")
    rules: list[Rule] = []
    for step in (steps_el.children if steps_el else ()):
        if step.kind != "element":
            continue
        fields = {c.name: element_text(c) for c in step.children if c.kind == "element"}
        if step.name == "copy":
            rules.append(CopyRule(from_path=fields["from"], to_path=fields["to"]))
        elif step.name == "const":
            rules.append(ConstRule(to_path=fields["to"], value=fields["value"]))
        elif step.name == "manual":
            rules.append(ManualRule(to_path=fields["to"], label=fields["label"]))
        else:
            raise EdocError(f"unknown rule kind {step.name!r}")
    return ProcessingRules(
        input_type=find_text(root, "rules/inputType") or "",
        output_type=find_text(root, "rules/outputType") or "",
        rules=tuple(rules),
    )


def check_rules(rules: ProcessingRules, input_def: TypeDef, output_def: TypeDef) -> None:
    """Bundle consistency: sources exist, every required output field is
    produced by exactly one rule."""
    if rules.input_type != input_def.type_id or rules.output_type != output_def.type_id:
        raise EdocError("rules bound to the wrong type definitions")
    targets: list[str] = []
    for r in rules.rules:
        if isinstance(r, CopyRule):
            spec = input_def.elements.get(r.from_path)
            if spec is None or not spec.text_allowed:
                raise EdocError(f"copy source {r.from_path!r} not a text field of {input_def.type_id}")
        to_spec = output_def.elements.get(r.to_path)
        if to_spec is None or not to_spec.text_allowed:
            raise EdocError(f"rule target {r.to_path!r} not a text field of {output_def.type_id}")
        targets.append(r.to_path)
    if len(targets) != len(set(targets)):
        raise EdocError("several rules write the same output field")
    missing = set(output_def.required_text_paths()) - set(targets)
    if missing:
        raise EdocError(f"required output fields not covered by rules: {sorted(missing)}")


def apply_rules(
    rules: ProcessingRules,
    input_doc: EDoc,
    manual_values: dict[str, str],
    output_def: TypeDef,
) -> XNode:
    """Derive draft output content from an input e-doc plus manual values.

    Copy fields come from the input verbatim, Const fields from the rule
    set, Manual fields from `manual_values` keyed by target path. A
    missing manual value raises ManualFieldMissing so a UI can prompt.
    """
    if input_doc.header.type_id != rules.input_type:
        raise InputTypeMismatch(
            f"rules take {rules.input_type!r}, got {input_doc.header.type_id!r}"
        )
    if rules.output_type != output_def.type_id:
        raise EdocError("output definition does not match the rule set")
    manual_paths = {r.to_path for r in rules.manual_rules()}
    for path in manual_values:
        if path not in manual_paths:
            raise UnknownField(path)
    values: dict[str, str] = {}
    for r in rules.rules:
        if isinstance(r, CopyRule):
            value = find_text(input_doc.content, r.from_path)
            if value is None:
                raise MissingField(r.from_path)
            values[r.to_path] = value
        elif isinstance(r, ConstRule):
            values[r.to_path] = r.value
        else:
            if r.to_path not in manual_values:
                raise ManualFieldMissing(r.label, r.to_path)
            values[r.to_path] = manual_values[r.to_path]
    return assemble(output_def, values)


# ---------------------------------------------------------------------------
# Revocation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RevocationRecord:
    doc_id: str
    reason: str
    revoked_at: datetime
    signed: SignedDoc


def make_revocation(
    doc_id: str, reason: str, key, cert, *, at=None
) -> RevocationRecord:
    at = at or utcnow()
    content = elem(
        "revocation",
        children=[
            elem("docId", text=doc_id),
            elem("reason", text=reason),
            elem("revokedAt", text=fmt_ts(at)),
        ],
    )
    signed = sigcrypt.sign_envelope(content, key, cert, "platform", at=at)
    return RevocationRecord(doc_id=doc_id, reason=reason, revoked_at=at, signed=signed)


def revocation_from_signed(signed: SignedDoc) -> RevocationRecord:
    content = signed.content
    if content.name != "revocation":
        raise EdocError("not a revocation record")
    return RevocationRecord(
        doc_id=find_text(content, "revocation/docId") or "",
        reason=find_text(content, "revocation/reason") or "",
        revoked_at=parse_ts(find_text(content, "revocation/revokedAt") or ""),
        signed=signed,
    )


# ---------------------------------------------------------------------------
# Validity report
# ---------------------------------------------------------------------------

DIM_PASS = "ok"
DIM_FAIL = "fail"
DIM_NA = "none"


@dataclass(frozen=True)
class ValidityReport:
    structure: str
    def_binding: str
    signatures: str
    status: str
    revoked: bool
    within_validity_period: str
    details: tuple[str, ...] = ()

    @property
    def valid(self) -> bool:
        dims = (self.structure, self.def_binding, self.signatures, self.status,
                self.within_validity_period)
        return all(d != DIM_FAIL for d in dims) and not self.revoked

    def lines(self) -> tuple[str, ...]:
        return (
            f"structure: {self.structure}",
            f"definition-binding: {self.def_binding}",
            f"signatures: {self.signatures}",
            f"status: {self.status}",
            f"revoked: {'true' if self.revoked else 'false'}",
            f"validity-period: {self.within_validity_period}",
            f"valid: {'true' if self.valid else 'false'}",
        )


def report_to_element(report: ValidityReport) -> XNode:
    return elem(
        "validity",
        children=[
            elem("structure", text=report.structure),
            elem("defBinding", text=report.def_binding),
            elem("signatures", text=report.signatures),
            elem("status", text=report.status),
            elem("revoked", text="true" if report.revoked else "false"),
            elem("withinValidityPeriod", text=report.within_validity_period),
            elem("valid", text="true" if report.valid else "false"),
            elem("details", children=[elem("d", text=d) for d in report.details]),
        ],
    )


def report_from_element(root: XNode) -> ValidityReport:
    details_el = find_one(root, "validity/details")
    return ValidityReport(
        structure=find_text(root, "validity/structure") or DIM_FAIL,
        def_binding=find_text(root, "validity/defBinding") or DIM_FAIL,
        signatures=find_text(root, "validity/signatures") or DIM_FAIL,
        status=find_text(root, "validity/status") or DIM_FAIL,
        revoked=(find_text(root, "validity/revoked") == "true"),
        within_validity_period=find_text(root, "validity/withinValidityPeriod") or DIM_FAIL,
        details=tuple(
            element_text(c) for c in (details_el.children if details_el else ())
            if c.kind == "element"
        ),
    )


def validate_edoc(
    doc: EDoc,
    *,
    bundle,
    trust: TrustStore,
    at: datetime,
    revocation: RevocationRecord | None = None,
    attributes: AttributeSet | None = None,
) -> ValidityReport:
    """Independent per-dimension validity check of a signed e-doc.

    `bundle` is the registered DefinitionBundle for the doc's type.
    Each dimension is reported on its own; `valid` requires all of them.
    """
    details: list[str] = []

    sreport = validate_structure(doc.content, bundle.typedef)
    structure = DIM_PASS if sreport.ok else DIM_FAIL
    details.extend(str(v) for v in sreport.violations)

    binding_ok = (
        doc.header.type_id == bundle.typedef.type_id
        and doc.header.version == bundle.typedef.version
        and doc.header.def_digest == bundle.def_digest
    )
    if not binding_ok:
        details.append("header does not bind to the registered definition")

    if doc.signatures:
        sig_ok = True
        for block in doc.signatures:
            signed = SignedDoc(content=doc.content, signature=block)
            env = sigcrypt.verify_envelope(signed, trust, at=at)
            if not env.fully_valid:
                sig_ok = False
                details.append(
                    f"signature by {block.signer_cert.subject!r}: "
                    f"valid={env.signature_valid} chain={env.chain_status}"
                )
        signatures = DIM_PASS if sig_ok else DIM_FAIL
    else:
        signatures = DIM_FAIL
        details.append("document carries no signature")

    if attributes is None:
        status = DIM_NA
    elif attributes.status in bundle.transitions.states():
        status = DIM_PASS
    else:
        status = DIM_FAIL
        details.append(f"status {attributes.status!r} unknown to the transition table")

    revoked = revocation is not None
    if revocation is not None:
        if revocation.doc_id != doc.header.doc_id:
            details.append("revocation record bound to a different document")
        env = sigcrypt.verify_envelope(revocation.signed, trust, at=at)
        if not env.signature_valid:
            details.append("revocation record signature does not verify")

    if bundle.validity_paths is None:
        within = DIM_NA
    else:
        nb_path, na_path = bundle.validity_paths
        nb_text, na_text = find_text(doc.content, nb_path), find_text(doc.content, na_path)
        try:
            nb, na = parse_ts(nb_text or ""), parse_ts(na_text or "")
            within = DIM_PASS if nb <= at <= na else DIM_FAIL
            if within == DIM_FAIL:
                details.append(f"not valid at {fmt_ts(at)} (window {nb_text} .. {na_text})")
        except ValueError:
            within = DIM_FAIL
            details.append("validity fields unreadable")

    return ValidityReport(
        structure=structure,
        def_binding=DIM_PASS if binding_ok else DIM_FAIL,
        signatures=signatures,
        status=status,
        revoked=revoked,
        within_validity_period=within,
        details=tuple(details),
    )
