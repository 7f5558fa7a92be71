"""The platform server: role-map authorization, command dispatch, the
definitions repository, the document directory, search, attribute
control, revocation, receipts, an append-only log and port control.

State lives in plain files under one data root so the whole platform is
auditable: `docs/<docId>/` holds the canonical signed bytes plus
attributes, receipt and any revocation; `defs/<typeId>/<version>/`
holds definition bundles; `rolemap.xml` and `log.txt` sit at the top.
Document ids are content-addressed, so a restart can re-verify every
stored byte against its directory name.
"""

from __future__ import annotations

import os
import socketserver
import threading
from dataclasses import dataclass, replace
from pathlib import Path

from . import aprotocol, commands, edoc as edoc_mod, sigcrypt
from .aprotocol import AMessage, PortConfig
from .bundles import (
    BundleError,
    DefinitionBundle,
    DefinitionRepository,
    bundle_from_element,
    bundle_to_element,
    load_bundle,
    save_bundle,
)
from .clock import Clock, fmt_ts, parse_ts, utcnow
from .commands import COMMANDS, TYPE_FROM_ARGS, TYPE_FROM_DOC
from .edoc import AttributeSet, EDoc, RevocationRecord
from .sigcrypt import SignedDoc, TrustStore
from .xmlcore import (
    XNode,
    XmlError,
    a_canon,
    elem,
    element_text,
    find_one,
    find_text,
    parse,
)

DATA_ROOT_ENV = "AIDA_DATA_ROOT"
SKEW_SECONDS = 300
NONCE_HORIZON_SECONDS = 2 * SKEW_SECONDS


class PlatformError(Exception):
    pass


# ---------------------------------------------------------------------------
# Role map
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RoleEntry:
    label: str
    commands: frozenset[str]
    edoc_types: frozenset[str]


RoleMap = dict[str, RoleEntry]


def rolemap_to_element(entries) -> XNode:
    roles = []
    for key in sorted(entries):
        entry = entries[key]
        label = entry["label"] if isinstance(entry, dict) else entry.label
        cmds = entry["commands"] if isinstance(entry, dict) else entry.commands
        types = entry["edocTypes"] if isinstance(entry, dict) else entry.edoc_types
        roles.append(
            elem(
                "role",
                children=[
                    elem("key", text=key),
                    elem("label", text=label),
                    elem("commands", children=[elem("c", text=c) for c in sorted(cmds)]),
                    elem("edocTypes", children=[elem("t", text=t) for t in sorted(types)]),
                ],
            )
        )
    return elem("rolemap", children=roles)


def rolemap_from_element(root: XNode) -> RoleMap:
    if root.name != "rolemap":
        raise PlatformError("not a role map")
    entries: RoleMap = {}
    for role_el in root.children:
        if role_el.kind != "element":
            continue
        cmds_el = find_one(role_el, "role/commands")
        types_el = find_one(role_el, "role/edocTypes")
        entries[find_text(role_el, "role/key") or ""] = RoleEntry(
            label=find_text(role_el, "role/label") or "",
            commands=frozenset(
                element_text(c) for c in (cmds_el.children if cmds_el else ()) if c.kind == "element"
            ),
            edoc_types=frozenset(
                element_text(t) for t in (types_el.children if types_el else ()) if t.kind == "element"
            ),
        )
    return entries


def usermap_to_element(mapping: dict[str, str]) -> XNode:
    return elem(
        "usermap",
        children=[
            elem("entry", children=[elem("key", text=k), elem("orgId", text=v)])
            for k, v in sorted(mapping.items())
        ],
    )


def usermap_from_element(root: XNode) -> dict[str, str]:
    out = {}
    for entry in root.children:
        if entry.kind == "element":
            out[find_text(entry, "entry/key") or ""] = find_text(entry, "entry/orgId") or ""
    return out


# ---------------------------------------------------------------------------
# Authorization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AuthResult:
    ok: bool
    code: str | None = None
    role_key: str = ""
    detail: str = ""


def authorize(
    msg: AMessage, role_map: RoleMap, trust: TrustStore, *, at=None, doc_type: str | None = None
) -> AuthResult:
    """Gate a command: valid role signature, role chain, command and
    e-doc type membership in the role map entry."""
    at = at or utcnow()
    cert = msg.signature.signer_cert
    role_key = cert.key_digest()
    report = aprotocol.verify_message(msg, trust, at=at)
    if not report.signature_valid:
        return AuthResult(False, commands.BAD_SIGNATURE, role_key, "signature does not verify")
    if "role" not in cert.purposes:
        return AuthResult(False, commands.BAD_SIGNATURE, role_key, "certificate lacks role purpose")
    if report.chain_status != sigcrypt.CHAIN_OK:
        return AuthResult(False, commands.BAD_SIGNATURE, role_key, f"chain {report.chain_status}")
    entry = role_map.get(role_key)
    if entry is None:
        return AuthResult(False, commands.UNKNOWN_ROLE, role_key)
    name = msg.body.name
    if name not in entry.commands:
        return AuthResult(False, commands.DENIED_COMMAND, role_key, name)
    spec = COMMANDS.get(name)
    if doc_type is None and spec is not None and spec.type_source == TYPE_FROM_ARGS:
        doc_type = commands.doc_type_from_args(name, msg.body.args)
    if doc_type is not None and spec is not None and spec.type_source in (TYPE_FROM_ARGS, TYPE_FROM_DOC):
        if doc_type not in entry.edoc_types:
            return AuthResult(False, commands.DENIED_DOCTYPE, role_key, doc_type)
    return AuthResult(True, role_key=role_key)


# ---------------------------------------------------------------------------
# Log
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LogEntry:
    seq: int
    timestamp: str
    role_key: str
    command: str
    doc_id: str
    outcome: str


def log_entry_to_element(entry: LogEntry) -> XNode:
    kids = [
        elem("seq", text=str(entry.seq)),
        elem("timestamp", text=entry.timestamp),
        elem("roleKey", text=entry.role_key),
        elem("command", text=entry.command),
    ]
    if entry.doc_id:
        kids.append(elem("docId", text=entry.doc_id))
    kids.append(elem("outcome", text=entry.outcome))
    return elem("logEntry", children=kids)


def log_entry_from_element(root: XNode) -> LogEntry:
    return LogEntry(
        seq=int(find_text(root, "logEntry/seq") or "0"),
        timestamp=find_text(root, "logEntry/timestamp") or "",
        role_key=find_text(root, "logEntry/roleKey") or "",
        command=find_text(root, "logEntry/command") or "",
        doc_id=find_text(root, "logEntry/docId") or "",
        outcome=find_text(root, "logEntry/outcome") or "",
    )


# ---------------------------------------------------------------------------
# Document records
# ---------------------------------------------------------------------------

@dataclass
class DocRecord:
    doc: EDoc
    attrs: AttributeSet
    receipt: SignedDoc
    revocation: RevocationRecord | None = None


@dataclass(frozen=True)
class IntegrityReport:
    ok: bool
    doc_count: int
    log_length: int
    problems: tuple[str, ...] = ()


def _write_atomic(path: Path, data: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Platform
# ---------------------------------------------------------------------------

class Platform:
    def __init__(self, data_root, *, passphrase: str, clock: Clock = utcnow,
                 frame_cap: int = aprotocol.FRAME_CAP_DEFAULT):
        self.root = Path(data_root)
        self.clock = clock
        self.frame_cap = frame_cap
        self._lock = threading.RLock()
        self._doc_locks: dict[str, threading.Lock] = {}
        self._log_lock = threading.Lock()
        self._nonce_cache: dict[bytes, float] = {}
        self._servers: dict[str, "_PortServer"] = {}

        platform_dir = self.root / "platform"
        self.key = sigcrypt.load_keystore(platform_dir / "platform.ks", passphrase)
        self.cert = sigcrypt.load_cert(platform_dir / "platform.cert.xml")
        self.trust = sigcrypt.load_truststore(platform_dir / "trust.xml")
        self.usermap = usermap_from_element(parse((platform_dir / "usermap.xml").read_bytes()))
        self.ports = aprotocol.ports_from_element(parse((platform_dir / "ports.xml").read_bytes()))
        self.role_map = rolemap_from_element(parse((self.root / "rolemap.xml").read_bytes()))

        self.repo = DefinitionRepository()
        defs_dir = self.root / "defs"
        if defs_dir.is_dir():
            for type_dir in sorted(defs_dir.iterdir()):
                for version_dir in sorted(type_dir.iterdir(), key=lambda p: int(p.name)):
                    self.repo.put(load_bundle(version_dir))

        self.records: dict[str, DocRecord] = {}
        docs_dir = self.root / "docs"
        if docs_dir.is_dir():
            for doc_dir in sorted(docs_dir.iterdir()):
                self.records[doc_dir.name] = self._load_record(doc_dir)

        self.log: list[LogEntry] = []
        log_path = self.root / "log.txt"
        if log_path.exists():
            for line in log_path.read_bytes().splitlines():
                if line.strip():
                    self.log.append(log_entry_from_element(parse(line)))
        self._next_seq = (self.log[-1].seq + 1) if self.log else 1

    # -- storage ------------------------------------------------------------

    def _doc_dir(self, doc_id: str) -> Path:
        return self.root / "docs" / doc_id

    def _load_record(self, doc_dir: Path) -> DocRecord:
        doc = edoc_mod.parse_edoc((doc_dir / "doc.xml").read_bytes())
        attrs = edoc_mod.attrs_from_element(parse((doc_dir / "attrs.xml").read_bytes()))
        receipt = sigcrypt.signed_doc_from_element(parse((doc_dir / "receipt.xml").read_bytes()))
        revocation = None
        rev_path = doc_dir / "revocation.xml"
        if rev_path.exists():
            revocation = edoc_mod.revocation_from_signed(
                sigcrypt.signed_doc_from_element(parse(rev_path.read_bytes()))
            )
        return DocRecord(doc=doc, attrs=attrs, receipt=receipt, revocation=revocation)

    def _doc_lock(self, doc_id: str) -> threading.Lock:
        with self._lock:
            return self._doc_locks.setdefault(doc_id, threading.Lock())

    def _append_log(self, role_key: str, command: str, doc_id: str, outcome: str) -> None:
        with self._log_lock:
            entry = LogEntry(
                seq=self._next_seq,
                timestamp=fmt_ts(self.clock()),
                role_key=role_key,
                command=command,
                doc_id=doc_id,
                outcome=outcome,
            )
            self._next_seq += 1
            self.log.append(entry)
            with open(self.root / "log.txt", "ab") as fh:
                fh.write(a_canon(log_entry_to_element(entry)) + b"\n")

    def verify_integrity(self) -> IntegrityReport:
        """Re-verify every stored document against its content address and
        the log against gapless numbering."""
        problems = []
        docs_dir = self.root / "docs"
        count = 0
        if docs_dir.is_dir():
            for doc_dir in sorted(docs_dir.iterdir()):
                count += 1
                stored = edoc_mod.parse_edoc((doc_dir / "doc.xml").read_bytes())
                recomputed = edoc_mod.compute_doc_id(stored)
                if recomputed != doc_dir.name or stored.header.doc_id != doc_dir.name:
                    problems.append(f"doc {doc_dir.name} does not match its bytes")
        for i, entry in enumerate(self.log, start=1):
            if entry.seq != i:
                problems.append(f"log gap at position {i} (seq {entry.seq})")
                break
        return IntegrityReport(
            ok=not problems, doc_count=count, log_length=len(self.log), problems=tuple(problems)
        )

    # -- frame handling -----------------------------------------------------

    def handle_frame(self, data: bytes, port: PortConfig) -> bytes | None:
        """One command frame in, one signed response frame body out.

        Returns None when no trustworthy response can be formed (the
        connection is then closed)."""
        try:
            msg = aprotocol.message_from_bytes(data)
        except aprotocol.ProtocolError:
            return None
        if msg.direction != aprotocol.DIRECTION_COMMAND:
            return None
        now = self.clock()
        name = msg.body.name
        role_key = msg.signature.signer_cert.key_digest()

        def respond(status, payload=None, doc_id=""):
            self._append_log(role_key, name, doc_id, status)
            response = aprotocol.new_response(msg, status, payload, self.key, self.cert, at=now)
            return aprotocol.message_to_bytes(response)

        if name not in COMMANDS:
            return respond(commands.BAD_REQUEST, aprotocol.error_payload(f"unknown command {name!r}"))
        if not port.accepts_command(name):
            return respond(commands.DENIED_PORT, aprotocol.error_payload(f"port {port.name} refuses {name}"))

        auth = authorize(msg, self.role_map, self.trust, at=now, doc_type=self._resolved_type(msg))
        if not auth.ok:
            return respond(auth.code, aprotocol.error_payload(auth.detail))

        skew = abs((now - msg.timestamp).total_seconds())
        if skew > SKEW_SECONDS:
            return respond(
                commands.REPLAY_SUSPECT,
                aprotocol.error_payload(f"timestamp {skew:.0f}s outside the {SKEW_SECONDS}s window"),
            )
        if not self._nonce_fresh(msg.nonce, now):
            return respond(commands.REPLAY, aprotocol.error_payload("nonce already seen"))

        handler = getattr(self, f"_cmd_{_snake(name)}")
        try:
            status, payload, doc_id = handler(msg.body.args, role_key)
        except _CommandFailure as failure:
            status, payload, doc_id = failure.status, aprotocol.error_payload(str(failure)), failure.doc_id
        except (XmlError, edoc_mod.EdocError, BundleError, sigcrypt.SigError, ValueError) as exc:
            status, payload, doc_id = commands.BAD_REQUEST, aprotocol.error_payload(str(exc)), ""
        except Exception as exc:  # pragma: no cover - defensive
            status, payload, doc_id = commands.INTERNAL, aprotocol.error_payload(str(exc)), ""
        return respond(status, payload, doc_id)

    def _nonce_fresh(self, nonce: bytes, now) -> bool:
        stamp = now.timestamp()
        with self._lock:
            for seen, when in list(self._nonce_cache.items()):
                if stamp - when > NONCE_HORIZON_SECONDS:
                    del self._nonce_cache[seen]
            if nonce in self._nonce_cache:
                return False
            self._nonce_cache[nonce] = stamp
            return True

    def _resolved_type(self, msg: AMessage) -> str | None:
        """E-doc type for authorization: from the arguments when carried,
        otherwise from the stored document a docId command points at."""
        spec = COMMANDS.get(msg.body.name)
        if spec is None:
            return None
        carried = commands.doc_type_from_args(msg.body.name, msg.body.args)
        if carried:
            return carried
        if spec.type_source in (TYPE_FROM_ARGS, TYPE_FROM_DOC):
            doc_id = commands.arg_doc_id(msg.body.args)
            if doc_id:
                record = self.records.get(doc_id)
                if record is not None:
                    return record.doc.header.type_id
        return None

    # -- command handlers ---------------------------------------------------

    def _bundle_or_fail(self, type_id: str, version: int | None = None) -> DefinitionBundle:
        bundle = (
            self.repo.latest(type_id) if version is None else self.repo.get(type_id, version)
        )
        if bundle is None:
            raise _CommandFailure(commands.UNKNOWN_TYPE, f"no definition for {type_id!r}")
        return bundle

    def _record_or_fail(self, doc_id: str) -> DocRecord:
        record = self.records.get(doc_id)
        if record is None:
            raise _CommandFailure(commands.NOT_FOUND, f"no document {doc_id!r}")
        return record

    def _cmd_create_edoc(self, args, role_key):
        type_id = find_text(args, "args/typeId") or ""
        version = int(find_text(args, "args/version") or "0") or None
        bundle = self._bundle_or_fail(type_id, version)
        fields = {}
        fields_el = find_one(args, "args/fields")
        for field_el in (fields_el.children if fields_el else ()):
            if field_el.kind == "element":
                fields[find_text(field_el, "field/path") or ""] = find_text(field_el, "field/value") or ""
        try:
            content = edoc_mod.assemble(bundle.typedef, fields)
        except edoc_mod.EdocError as exc:
            raise _CommandFailure(commands.BAD_REQUEST, str(exc))
        draft = edoc_mod.new_unsigned(
            bundle.type_id, bundle.version, bundle.def_digest, content, at=self.clock()
        )
        return commands.OK, edoc_mod.edoc_to_element(draft), ""

    def _cmd_store_edoc(self, args, role_key):
        edoc_el = find_one(args, "args/edoc")
        if edoc_el is None:
            raise _CommandFailure(commands.BAD_REQUEST, "no edoc in arguments")
        try:
            doc = edoc_mod.edoc_from_element(edoc_el)
        except (edoc_mod.EdocError, sigcrypt.SigError, ValueError) as exc:
            raise _CommandFailure(commands.INVALID_DOC, f"unreadable document: {exc}")
        bundle = self._bundle_or_fail(doc.header.type_id, doc.header.version)
        now = self.clock()
        report = edoc_mod.validate_edoc(doc, bundle=bundle, trust=self.trust, at=now)
        if report.structure != "ok" or report.def_binding != "ok" or report.signatures != "ok":
            raise _CommandFailure(
                commands.INVALID_DOC, "; ".join(report.details) or "document does not validate"
            )
        doc_id = edoc_mod.compute_doc_id(doc)
        if doc.header.doc_id != doc_id:
            raise _CommandFailure(commands.INVALID_DOC, "document id does not match its bytes")
        with self._lock:
            if doc_id in self.records:
                raise _CommandFailure(commands.DUPLICATE, f"document {doc_id} already stored", doc_id)
            attrs = AttributeSet(static=bundle.static_attrs, dynamic=bundle.initial_dynamic)
            receipt_content = elem(
                "receipt",
                children=[
                    elem("docId", text=doc_id),
                    elem("contentDigest", text=edoc_mod.content_digest(doc)),
                    elem("timestamp", text=fmt_ts(now)),
                ],
            )
            receipt = sigcrypt.sign_envelope(receipt_content, self.key, self.cert, "platform", at=now)
            doc_dir = self._doc_dir(doc_id)
            doc_dir.mkdir(parents=True, exist_ok=True)
            _write_atomic(doc_dir / "doc.xml", edoc_mod.edoc_to_bytes(doc))
            _write_atomic(doc_dir / "attrs.xml", a_canon(edoc_mod.attrs_to_element(attrs)))
            _write_atomic(doc_dir / "receipt.xml", a_canon(sigcrypt.signed_doc_to_element(receipt)))
            self.records[doc_id] = DocRecord(doc=doc, attrs=attrs, receipt=receipt)
        payload = elem(
            "stored",
            children=[elem("docId", text=doc_id), sigcrypt.signed_doc_to_element(receipt)],
        )
        return commands.OK, payload, doc_id

    def _record_element(self, doc_id: str, record: DocRecord) -> XNode:
        kids = [
            edoc_mod.edoc_to_element(record.doc),
            edoc_mod.attrs_to_element(record.attrs),
        ]
        if record.revocation is not None:
            kids.append(sigcrypt.signed_doc_to_element(record.revocation.signed))
        return elem("record", children=kids)

    def _cmd_get_edoc(self, args, role_key):
        doc_id = commands.arg_doc_id(args) or ""
        record = self._record_or_fail(doc_id)
        return commands.OK, self._record_element(doc_id, record), doc_id

    def _cmd_search_edocs(self, args, role_key):
        type_id = find_text(args, "args/typeId") or ""
        bundle = self._bundle_or_fail(type_id)
        attr_preds: list[tuple[str, str]] = []
        field_preds: list[tuple[str, str]] = []
        where_el = find_one(args, "args/where")
        for pred in (where_el.children if where_el else ()):
            if pred.kind != "element":
                continue
            if pred.name == "attr":
                attr_preds.append((find_text(pred, "attr/name") or "", find_text(pred, "attr/value") or ""))
            elif pred.name == "field":
                field_preds.append((find_text(pred, "field/path") or "", find_text(pred, "field/value") or ""))
            else:
                raise _CommandFailure(commands.BAD_REQUEST, f"unknown predicate {pred.name!r}")
        known_attrs = {k for k, _ in bundle.static_attrs} | {k for k, _ in bundle.initial_dynamic}
        for name, _ in attr_preds:
            if name not in known_attrs:
                raise _CommandFailure(commands.UNKNOWN_ATTRIBUTE, f"attribute {name!r} unknown for {type_id}")
        for path, _ in field_preds:
            spec = bundle.typedef.elements.get(path)
            if spec is None or not spec.text_allowed:
                raise _CommandFailure(commands.UNKNOWN_ATTRIBUTE, f"field {path!r} unknown for {type_id}")

        hits = []
        for doc_id in sorted(self.records):
            record = self.records[doc_id]
            if record.doc.header.type_id != type_id:
                continue
            if any(record.attrs.get(k) != v for k, v in attr_preds):
                continue
            if any(find_text(record.doc.content, p) != v for p, v in field_preds):
                continue
            fields = []
            for entry in bundle.display.entries:
                value = find_text(record.doc.content, entry.path)
                if value is not None:
                    fields.append(
                        elem(
                            "entry",
                            children=[
                                elem("label", text=entry.label),
                                elem("path", text=entry.path),
                                elem("value", text=value),
                            ],
                        )
                    )
            hits.append(
                elem(
                    "hit",
                    children=[
                        elem("docId", text=doc_id),
                        elem("fields", children=fields),
                        edoc_mod.attrs_to_element(record.attrs),
                    ],
                )
            )
        return commands.OK, elem("results", children=hits), ""

    def _cmd_set_attribute(self, args, role_key):
        doc_id = commands.arg_doc_id(args) or ""
        name = find_text(args, "args/name") or ""
        value = find_text(args, "args/value") or ""
        record = self._record_or_fail(doc_id)
        bundle = self._bundle_or_fail(record.doc.header.type_id, record.doc.header.version)
        with self._doc_lock(doc_id):
            record = self._record_or_fail(doc_id)
            if record.attrs.is_static(name):
                raise _CommandFailure(commands.STATIC_ATTRIBUTE, f"{name!r} is fixed at start-up", doc_id)
            if not record.attrs.is_dynamic(name):
                raise _CommandFailure(commands.UNKNOWN_ATTRIBUTE, f"{name!r} not a dynamic attribute", doc_id)
            if name == edoc_mod.STATUS_ATTR:
                try:
                    updated = edoc_mod.transition_status(record.attrs, value, bundle.transitions)
                except edoc_mod.IllegalTransition as exc:
                    raise _CommandFailure(commands.ILLEGAL_TRANSITION, str(exc), doc_id)
            else:
                updated = record.attrs.with_dynamic(name, value)
            record.attrs = updated
            _write_atomic(
                self._doc_dir(doc_id) / "attrs.xml", a_canon(edoc_mod.attrs_to_element(updated))
            )
        return commands.OK, edoc_mod.attrs_to_element(updated), doc_id

    def _cmd_revoke_edoc(self, args, role_key):
        doc_id = commands.arg_doc_id(args) or ""
        reason = find_text(args, "args/reason") or ""
        record = self._record_or_fail(doc_id)
        bundle = self._bundle_or_fail(record.doc.header.type_id, record.doc.header.version)
        with self._doc_lock(doc_id):
            if record.revocation is None:
                revocation = edoc_mod.make_revocation(
                    doc_id, reason, self.key, self.cert, at=self.clock()
                )
                record.revocation = revocation
                _write_atomic(
                    self._doc_dir(doc_id) / "revocation.xml",
                    a_canon(sigcrypt.signed_doc_to_element(revocation.signed)),
                )
                if bundle.transitions.allows(record.attrs.status, "revoked"):
                    record.attrs = record.attrs.with_dynamic(edoc_mod.STATUS_ATTR, "revoked")
                    _write_atomic(
                        self._doc_dir(doc_id) / "attrs.xml",
                        a_canon(edoc_mod.attrs_to_element(record.attrs)),
                    )
        return commands.OK, sigcrypt.signed_doc_to_element(record.revocation.signed), doc_id

    def _cmd_validate_edoc(self, args, role_key):
        at_text = find_text(args, "args/at")
        at = parse_ts(at_text) if at_text else self.clock()
        doc_id = commands.arg_doc_id(args)
        inline = find_one(args, "args/edoc")
        if doc_id:
            record = self._record_or_fail(doc_id)
            doc, attrs, revocation = record.doc, record.attrs, record.revocation
        elif inline is not None:
            try:
                doc = edoc_mod.edoc_from_element(inline)
            except (edoc_mod.EdocError, sigcrypt.SigError, ValueError) as exc:
                raise _CommandFailure(commands.INVALID_DOC, f"unreadable document: {exc}")
            attrs, revocation = None, None
        else:
            raise _CommandFailure(commands.BAD_REQUEST, "validate needs a docId or an inline edoc")
        bundle = self._bundle_or_fail(doc.header.type_id, doc.header.version)
        report = edoc_mod.validate_edoc(
            doc, bundle=bundle, trust=self.trust, at=at, attributes=attrs, revocation=revocation
        )
        return commands.OK, edoc_mod.report_to_element(report), doc_id or ""

    def _cmd_counter_sign(self, args, role_key):
        doc_id = commands.arg_doc_id(args) or ""
        record = self._record_or_fail(doc_id)
        doc = record.doc
        if not doc.signatures:
            raise _CommandFailure(commands.INVALID_DOC, "document carries no signature", doc_id)
        signed = SignedDoc(content=doc.content, signature=doc.signatures[0])
        try:
            countered = sigcrypt.counter_sign(signed, self.key, self.cert, at=self.clock())
        except sigcrypt.OriginalInvalid as exc:
            raise _CommandFailure(commands.INVALID_DOC, str(exc), doc_id)
        updated = replace(doc, signatures=(countered.signature,) + doc.signatures[1:])
        # The stored doc.xml stays untouched so the content address keeps
        # matching; the strengthened envelope lives beside it.
        _write_atomic(
            self._doc_dir(doc_id) / "countersigned.xml", edoc_mod.edoc_to_bytes(updated)
        )
        return commands.OK, edoc_mod.edoc_to_element(updated), doc_id

    def _cmd_get_definition(self, args, role_key):
        type_id = find_text(args, "args/typeId") or ""
        version_text = find_text(args, "args/version")
        bundle = self._bundle_or_fail(type_id, int(version_text) if version_text else None)
        return commands.OK, bundle_to_element(bundle), ""

    def _cmd_acknowledge(self, args, role_key):
        doc_id = commands.arg_doc_id(args) or ""
        record = self._record_or_fail(doc_id)
        return commands.OK, sigcrypt.signed_doc_to_element(record.receipt), doc_id

    def _cmd_put_definition(self, args, role_key):
        bundle_el = find_one(args, "args/bundle")
        if bundle_el is None:
            raise _CommandFailure(commands.BAD_REQUEST, "no bundle in arguments")
        bundle = bundle_from_element(bundle_el)
        with self._lock:
            if self.repo.get(bundle.type_id, bundle.version) is not None:
                raise _CommandFailure(
                    commands.VERSION_EXISTS, f"{bundle.type_id} v{bundle.version} already registered"
                )
            self.repo.put(bundle)
            save_bundle(self.root / "defs" / bundle.type_id / str(bundle.version), bundle)
        payload = elem(
            "stored",
            children=[elem("typeId", text=bundle.type_id), elem("version", text=str(bundle.version))],
        )
        return commands.OK, payload, ""

    def _cmd_set_role_map(self, args, role_key):
        rolemap_el = find_one(args, "args/rolemap")
        if rolemap_el is None:
            raise _CommandFailure(commands.BAD_REQUEST, "no rolemap in arguments")
        entries = rolemap_from_element(rolemap_el)
        with self._lock:
            _write_atomic(self.root / "rolemap.xml", a_canon(rolemap_to_element(entries)))
            self.role_map = entries
        return commands.OK, elem("ok", children=[elem("roles", text=str(len(entries)))]), ""

    def _cmd_port_control(self, args, role_key):
        port_name = find_text(args, "args/port") or ""
        action = find_text(args, "args/action") or ""
        if action not in ("start", "stop"):
            raise _CommandFailure(commands.BAD_REQUEST, f"bad action {action!r}")
        if port_name == "admin":
            raise _CommandFailure(commands.CANNOT_STOP_ADMIN, "the admin port is not controllable")
        config = next((p for p in self.ports if p.name == port_name), None)
        if config is None:
            raise _CommandFailure(commands.NOT_FOUND, f"no port {port_name!r}")
        if action == "stop":
            self._stop_port(port_name)
            state = "stopped"
        else:
            self._start_port(config)
            state = "started"
        payload = elem("ok", children=[elem("port", text=port_name), elem("state", text=state)])
        return commands.OK, payload, ""

    def _cmd_get_log(self, args, role_key):
        from_seq = int(find_text(args, "args/from") or "1")
        to_text = find_text(args, "args/to")
        to_seq = int(to_text) if to_text else None
        entries = [
            log_entry_to_element(e)
            for e in self.log
            if e.seq >= from_seq and (to_seq is None or e.seq <= to_seq)
        ]
        return commands.OK, elem("logEntries", children=entries), ""

    # -- port servers ---------------------------------------------------------

    def _start_port(self, config: PortConfig) -> None:
        with self._lock:
            if config.name in self._servers:
                return
            server = _PortServer(("127.0.0.1" if config.visibility == ("loopback",) else "0.0.0.0",
                                  config.tcp_port), self, config)
            self._servers[config.name] = server
            thread = threading.Thread(
                target=lambda: server.serve_forever(poll_interval=0.05), daemon=True
            )
            server.thread = thread
            thread.start()

    def _stop_port(self, name: str) -> None:
        with self._lock:
            server = self._servers.pop(name, None)
        if server is not None:
            server.shutdown()
            server.server_close()

    def start(self) -> None:
        for config in self.ports:
            self._start_port(config)

    def stop(self) -> None:
        for name in list(self._servers):
            self._stop_port(name)

    def port_number(self, name: str) -> int:
        server = self._servers.get(name)
        if server is None:
            raise PlatformError(f"port {name!r} is not running")
        return server.server_address[1]

    def endpoint(self, name: str) -> str:
        return f"tcp://127.0.0.1:{self.port_number(name)}"


class _CommandFailure(Exception):
    def __init__(self, status: str, message: str, doc_id: str = ""):
        super().__init__(message)
        self.status = status
        self.doc_id = doc_id


def _snake(name: str) -> str:
    out = []
    for i, ch in enumerate(name):
        if ch.isupper() and i:
            out.append("_")
        out.append(ch.lower())
    return "".join(out)


class _PortServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, platform: Platform, config: PortConfig):
        self.platform = platform
        self.config = config
        self.thread: threading.Thread | None = None
        super().__init__(address, _PortHandler)


class _PortHandler(socketserver.BaseRequestHandler):
    def handle(self):
        server: _PortServer = self.server  # type: ignore[assignment]
        config = server.config
        if not config.allows_peer(self.client_address[0]):
            return
        self.request.settimeout(30)
        while True:
            try:
                frame = aprotocol.read_frame(self.request, server.platform.frame_cap)
            except aprotocol.ProtocolError:
                return
            response = server.platform.handle_frame(frame, config)
            if response is None:
                return
            try:
                self.request.sendall(aprotocol.encode_frame(response, server.platform.frame_cap))
            except OSError:
                return


# ---------------------------------------------------------------------------
# Data root initialization
# ---------------------------------------------------------------------------

def default_ports(*, scenario_port=0, service_port=0, admin_port=0) -> tuple[PortConfig, ...]:
    user = frozenset(commands.USER_COMMANDS)
    return (
        PortConfig("scenario", scenario_port, "restricted", user, ("loopback",)),
        PortConfig("service", service_port, "restricted", user, ("loopback",)),
        PortConfig("admin", admin_port, "full", frozenset(), ("loopback",)),
    )


def init_data_root(data_root, fixtures_root, ports=None) -> Path:
    """Lay out a platform data root from a fixture tree."""
    import shutil

    data_root = Path(data_root)
    fixtures_root = Path(fixtures_root)
    platform_dir = data_root / "platform"
    platform_dir.mkdir(parents=True, exist_ok=True)
    shutil.copy(fixtures_root / "identities" / "platform" / "platform.ks", platform_dir)
    shutil.copy(fixtures_root / "identities" / "platform" / "platform.cert.xml", platform_dir)
    shutil.copy(fixtures_root / "trust.xml", platform_dir / "trust.xml")
    shutil.copy(fixtures_root / "usermap.xml", platform_dir / "usermap.xml")
    (platform_dir / "ports.xml").write_bytes(
        a_canon(aprotocol.ports_to_element(ports or default_ports()))
    )
    shutil.copy(fixtures_root / "rolemap.xml", data_root / "rolemap.xml")
    if (data_root / "defs").exists():
        shutil.rmtree(data_root / "defs")
    shutil.copytree(fixtures_root / "defs", data_root / "defs")
    (data_root / "docs").mkdir(exist_ok=True)
    return data_root
