"""High-level client session: one role identity against one endpoint.

Wraps the wire protocol into typed calls; an error status from the
platform surfaces as PlatformRefused carrying the status code.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import aprotocol, commands, edoc as edoc_mod, sigcrypt
from .aplatform import LogEntry, log_entry_from_element, rolemap_to_element
from .aprotocol import AMessage, PlatformClient
from .bundles import DefinitionBundle, bundle_from_element, bundle_to_element
from .clock import fmt_ts, utcnow
from .edoc import AttributeSet, EDoc, ValidityReport
from .sigcrypt import MiniCert, PrivateKey, SignedDoc
from .xmlcore import XNode, find_one, find_text


class PlatformRefused(Exception):
    def __init__(self, status: str, message: str = ""):
        super().__init__(f"{status}: {message}" if message else status)
        self.status = status
        self.message = message


@dataclass(frozen=True)
class SearchHit:
    doc_id: str
    fields: tuple[tuple[str, str, str], ...]  # (label, path, value)
    attrs: AttributeSet

    @property
    def status(self) -> str:
        return self.attrs.status


class Session:
    def __init__(self, client: PlatformClient, role_key: PrivateKey, role_cert: MiniCert,
                 *, clock=utcnow):
        self.client = client
        self.role_key = role_key
        self.role_cert = role_cert
        self.clock = clock

    def command(self, name: str, args: XNode) -> AMessage:
        return aprotocol.new_command(name, args, self.role_key, self.role_cert, at=self.clock())

    def call(self, name: str, args: XNode) -> XNode:
        response = self.client.call(self.command(name, args))
        body = response.body
        if body.status != commands.OK:
            raise PlatformRefused(body.status, find_text(body.payload, "error/message") or "")
        return body.payload

    # -- typed wrappers ------------------------------------------------------

    def create_edoc(self, type_id: str, fields: dict[str, str], version: int = 1) -> EDoc:
        payload = self.call("CreateEdoc", commands.create_edoc_args(type_id, version, fields))
        return edoc_mod.edoc_from_element(payload)

    def store_edoc(self, doc: EDoc) -> tuple[str, SignedDoc]:
        payload = self.call("StoreEdoc", commands.store_edoc_args(edoc_mod.edoc_to_element(doc)))
        receipt_el = find_one(payload, "stored/signedDoc")
        return (
            find_text(payload, "stored/docId") or "",
            sigcrypt.signed_doc_from_element(receipt_el),
        )

    def get_edoc(self, doc_id: str):
        payload = self.call("GetEdoc", commands.get_edoc_args(doc_id))
        doc = edoc_mod.edoc_from_element(find_one(payload, "record/edoc"))
        attrs = edoc_mod.attrs_from_element(find_one(payload, "record/attributes"))
        revocation = None
        rev_el = find_one(payload, "record/signedDoc")
        if rev_el is not None:
            revocation = edoc_mod.revocation_from_signed(sigcrypt.signed_doc_from_element(rev_el))
        return doc, attrs, revocation

    def search(self, type_id: str, attrs=(), fields=()) -> list[SearchHit]:
        payload = self.call("SearchEdocs", commands.search_args(type_id, attrs, fields))
        hits = []
        for hit_el in payload.children:
            if hit_el.kind != "element":
                continue
            fields_el = find_one(hit_el, "hit/fields")
            parsed_fields = tuple(
                (
                    find_text(f, "entry/label") or "",
                    find_text(f, "entry/path") or "",
                    find_text(f, "entry/value") or "",
                )
                for f in (fields_el.children if fields_el else ())
                if f.kind == "element"
            )
            hits.append(
                SearchHit(
                    doc_id=find_text(hit_el, "hit/docId") or "",
                    fields=parsed_fields,
                    attrs=edoc_mod.attrs_from_element(find_one(hit_el, "hit/attributes")),
                )
            )
        return hits

    def set_attribute(self, doc_id: str, name: str, value: str) -> AttributeSet:
        payload = self.call("SetAttribute", commands.set_attribute_args(doc_id, name, value))
        return edoc_mod.attrs_from_element(payload)

    def set_status(self, doc_id: str, value: str) -> AttributeSet:
        return self.set_attribute(doc_id, edoc_mod.STATUS_ATTR, value)

    def revoke(self, doc_id: str, reason: str):
        payload = self.call("RevokeEdoc", commands.revoke_args(doc_id, reason))
        return edoc_mod.revocation_from_signed(sigcrypt.signed_doc_from_element(payload))

    def validate(self, doc_id: str | None = None, doc: EDoc | None = None, at=None) -> ValidityReport:
        payload = self.call(
            "ValidateEdoc",
            commands.validate_args(
                doc_id,
                edoc_mod.edoc_to_element(doc) if doc is not None else None,
                fmt_ts(at) if at is not None else None,
            ),
        )
        return edoc_mod.report_from_element(payload)

    def counter_sign(self, doc_id: str) -> EDoc:
        return edoc_mod.edoc_from_element(
            self.call("CounterSign", commands.counter_sign_args(doc_id))
        )

    def get_definition(self, type_id: str, version: int | None = None) -> DefinitionBundle:
        return bundle_from_element(
            self.call("GetDefinition", commands.get_definition_args(type_id, version))
        )

    def acknowledge(self, doc_id: str) -> SignedDoc:
        return sigcrypt.signed_doc_from_element(
            self.call("Acknowledge", commands.acknowledge_args(doc_id))
        )

    def put_definition(self, bundle: DefinitionBundle) -> None:
        self.call("PutDefinition", commands.put_definition_args(bundle_to_element(bundle)))

    def set_role_map(self, entries) -> None:
        self.call("SetRoleMap", commands.set_role_map_args(rolemap_to_element(entries)))

    def port_control(self, port: str, action: str) -> None:
        self.call("PortControl", commands.port_control_args(port, action))

    def get_log(self, from_seq: int | None = None, to_seq: int | None = None) -> list[LogEntry]:
        payload = self.call("GetLog", commands.get_log_args(from_seq, to_seq))
        return [
            log_entry_from_element(c) for c in payload.children if c.kind == "element"
        ]
