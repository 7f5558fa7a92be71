"""Desk agent: the local trusted process behind the referent's browser.

The browser is untrusted chrome: it only displays what this agent
rendered and echoes the render digest back when the user confirms.
Keys never leave the agent; every signing request recomputes the
display form server-side and refuses on any digest mismatch, so no UI
can obtain a signature over bytes that were not rendered first. Binds
to loopback only; requests must carry the session token printed at
startup.
"""

from __future__ import annotations

import secrets
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit
from pathlib import Path

from . import eas, edoc as edoc_mod, wysiwys
from .bundles import DefinitionBundle
from .clock import Clock, utcnow
from .edoc import EdocError
from .session import PlatformRefused, Session
from .sigcrypt import MiniCert, PrivateKey, TrustStore
from .wysiwys import DisplayError
from .xmlcore import (
    XNode,
    XmlError,
    a_canon,
    element_text,
    elem,
    find_one,
    find_text,
    parse,
    sha256_hex,
)

TOKEN_HEADER = "X-Agent-Token"

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
}


class _AgentRefusal(Exception):
    def __init__(self, http_status: int, code: str, message: str, label: str = ""):
        super().__init__(message)
        self.http_status = http_status
        self.code = code
        self.label = label


class DeskAgent:
    def __init__(
        self,
        session: Session,
        sign_key: PrivateKey,
        sign_cert: MiniCert,
        trust: TrustStore,
        *,
        listen_port: int = 0,
        token: str | None = None,
        ui_dir=None,
        clock: Clock = utcnow,
    ):
        self.session = session
        self.sign_key = sign_key
        self.sign_cert = sign_cert
        self.trust = trust
        self.token = token or secrets.token_hex(16)
        self.ui_dir = Path(ui_dir) if ui_dir else None
        self.clock = clock
        self._bundles: dict[str, DefinitionBundle] = {}
        self._sign_lock = threading.Lock()
        agent = self

        class Handler(BaseHTTPRequestHandler):
            def do_GET(self):  # noqa: N802
                agent._handle(self, "GET")

            def do_POST(self):  # noqa: N802
                agent._handle(self, "POST")

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", listen_port), Handler)
        self._server.daemon_threads = True
        self._thread: threading.Thread | None = None

    # -- lifecycle -----------------------------------------------------------

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def start(self) -> None:
        self._thread = threading.Thread(
            target=lambda: self._server.serve_forever(poll_interval=0.05), daemon=True
        )
        self._thread.start()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread:
            self._thread.join(timeout=5)

    # -- helpers ---------------------------------------------------------------

    def _bundle(self, type_id: str) -> DefinitionBundle:
        if type_id not in self._bundles:
            self._bundles[type_id] = self.session.get_definition(type_id)
        return self._bundles[type_id]

    def _form_element(self, form: wysiwys.DisplayForm, extra=()) -> XNode:
        return elem(
            "form",
            children=[
                elem("renderDigest", text=form.render_digest),
                elem("lines", text=form.serialize()),
                *extra,
            ],
        )

    def _manual_values(self, container: XNode | None) -> dict[str, str]:
        if container is None:
            return {}
        return {
            dict(c.attrs).get("name", ""): element_text(c)
            for c in container.children
            if c.kind == "element"
        }

    # -- request handling --------------------------------------------------------

    def _handle(self, http, method: str) -> None:
        url = urlsplit(http.path)
        segments = [s for s in url.path.split("/") if s]
        try:
            if segments[:1] == ["api"]:
                query = parse_qs(url.query)
                token = http.headers.get(TOKEN_HEADER) or (query.get("token") or [""])[0]
                if token != self.token:
                    raise _AgentRefusal(401, "BadToken", "missing or wrong session token")
                body = None
                if method == "POST":
                    length = int(http.headers.get("Content-Length", "0"))
                    body = parse(http.rfile.read(length))
                payload = self._route(method, segments[1:], query, body)
                data = a_canon(payload)
                http.send_response(200)
                http.send_header("Content-Type", "application/xml; charset=utf-8")
                http.send_header("Content-Length", str(len(data)))
                http.end_headers()
                http.wfile.write(data)
            elif method == "GET":
                self._static(http, segments)
            else:
                raise _AgentRefusal(404, "NotFound", http.path)
        except _AgentRefusal as refusal:
            self._send_error(http, refusal)
        except (XmlError, DisplayError, EdocError, eas.EasError) as exc:
            self._send_error(http, _AgentRefusal(400, type(exc).__name__, str(exc),
                                                 getattr(exc, "label", "")))
        except PlatformRefused as exc:
            status = 409 if exc.status == "ILLEGAL_TRANSITION" else 502
            self._send_error(http, _AgentRefusal(status, exc.status, exc.message))
        except Exception as exc:  # pragma: no cover - defensive
            self._send_error(http, _AgentRefusal(500, "Internal", str(exc)))

    def _send_error(self, http, refusal: _AgentRefusal) -> None:
        kids = [elem("code", text=refusal.code), elem("message", text=str(refusal))]
        if refusal.label:
            kids.append(elem("label", text=refusal.label))
        data = a_canon(elem("agentError", children=kids))
        http.send_response(refusal.http_status)
        http.send_header("Content-Type", "application/xml; charset=utf-8")
        http.send_header("Content-Length", str(len(data)))
        http.end_headers()
        http.wfile.write(data)

    def _static(self, http, segments) -> None:
        if self.ui_dir is None:
            raise _AgentRefusal(404, "NoUi", "agent started without a UI directory")
        name = "/".join(segments) or "index.html"
        target = (self.ui_dir / name).resolve()
        if not str(target).startswith(str(self.ui_dir.resolve())) or not target.is_file():
            raise _AgentRefusal(404, "NotFound", name)
        data = target.read_bytes()
        http.send_response(200)
        http.send_header("Content-Type", _CONTENT_TYPES.get(target.suffix, "application/octet-stream"))
        http.send_header("Content-Length", str(len(data)))
        http.end_headers()
        http.wfile.write(data)

    def _route(self, method: str, parts: list[str], query, body: XNode | None) -> XNode:
        if method == "GET" and parts == ["ping"]:
            return elem("pong")
        if method == "GET" and parts == ["work"]:
            return self.work_list(
                (query.get("type") or ["eEAC"])[0], (query.get("exam") or [None])[0]
            )
        if method == "GET" and parts == ["manual-fields"]:
            return self.manual_fields((query.get("type") or ["eEAC"])[0])
        if len(parts) == 3 and parts[0] == "doc":
            doc_id = parts[1]
            if method == "GET" and parts[2] == "form":
                return self.doc_form(doc_id)
            if method == "POST" and parts[2] == "preview":
                return self.preview(doc_id, body)
            if method == "POST" and parts[2] == "sign":
                return self.sign_and_submit(doc_id, body)
        if method == "POST" and parts == ["sign-edoc"]:
            return self.sign_draft_edoc(body)
        raise _AgentRefusal(404, "NotFound", "/".join(parts))

    # -- operations ---------------------------------------------------------------

    def work_list(self, type_id: str, exam_code: str | None) -> XNode:
        bundle = self._bundle(type_id)
        fields = []
        if exam_code:
            fields.append((f"{bundle.typedef.root}/exam/code", exam_code))
        hits = self.session.search(type_id, fields=fields)
        items = []
        for hit in hits:
            items.append(
                elem(
                    "item",
                    children=[
                        elem("docId", text=hit.doc_id),
                        elem("status", text=hit.status),
                        elem(
                            "fields",
                            children=[
                                elem(
                                    "entry",
                                    children=[
                                        elem("label", text=label),
                                        elem("path", text=path),
                                        elem("value", text=value),
                                    ],
                                )
                                for label, path, value in hit.fields
                            ],
                        ),
                    ],
                )
            )
        return elem("workList", children=items)

    def doc_form(self, doc_id: str) -> XNode:
        doc, attrs, revocation = self.session.get_edoc(doc_id)
        bundle = self._bundle(doc.header.type_id)
        form, report = wysiwys.verify_and_render(
            doc, bundle, self.trust, at=self.clock(), attributes=attrs, revocation=revocation
        )
        return self._form_element(
            form, extra=[elem("valid", text="true" if report.valid else "false")]
        )

    def manual_fields(self, input_type: str) -> XNode:
        bundle = self._bundle(input_type)
        if bundle.rules is None:
            raise _AgentRefusal(404, "NoRules", f"{input_type} has no processing rules")
        out_def = self._bundle(bundle.rules.output_type).typedef
        fields = []
        for rule in bundle.rules.manual_rules():
            pattern = out_def.elements[rule.to_path].text_pattern or ""
            fields.append(
                elem(
                    "field",
                    children=[
                        elem("path", text=rule.to_path),
                        elem("label", text=rule.label),
                        elem("pattern", text=pattern),
                    ],
                )
            )
        return elem(
            "manualFields",
            children=[elem("outputType", text=bundle.rules.output_type), *fields],
        )

    def _derive_and_render(self, doc_id: str, manual: dict[str, str]):
        doc, attrs, revocation = self.session.get_edoc(doc_id)
        in_bundle = self._bundle(doc.header.type_id)
        # The input must render and verify before anything is derived from
        # it; a card that fails its own display check signs nothing.
        _input_form, input_report = wysiwys.verify_and_render(
            doc, in_bundle, self.trust, at=self.clock(), attributes=attrs, revocation=revocation
        )
        if not input_report.valid:
            raise _AgentRefusal(
                409, "InputInvalid", "; ".join(input_report.details) or "input does not verify"
            )
        if in_bundle.rules is None:
            raise _AgentRefusal(400, "NoRules", f"{doc.header.type_id} has no processing rules")
        out_bundle = self._bundle(in_bundle.rules.output_type)
        draft = eas.derive_ticket_draft(doc, in_bundle, out_bundle, manual, at=self.clock())
        form, _payload = wysiwys.prepare_edoc_signing(draft, out_bundle)
        return draft, out_bundle, form

    def preview(self, doc_id: str, body: XNode | None) -> XNode:
        manual = self._manual_values(body)
        _draft, _bundle, form = self._derive_and_render(doc_id, manual)
        return self._form_element(form)

    def sign_and_submit(self, doc_id: str, body: XNode | None) -> XNode:
        if body is None or body.name != "signRequest":
            raise _AgentRefusal(400, "BadRequest", "body must be a signRequest")
        ack_digest = find_text(body, "signRequest/renderDigest") or ""
        if not ack_digest:
            raise _AgentRefusal(400, "MissingRenderDigest", "no renderDigest acknowledged")
        manual = self._manual_values(find_one(body, "signRequest/manualValues"))
        with self._sign_lock:
            draft, out_bundle, form = self._derive_and_render(doc_id, manual)
            if form.render_digest != ack_digest:
                raise _AgentRefusal(
                    409, "RenderDigestMismatch",
                    "the acknowledged render does not match the draft being signed",
                )
            signed, signed_form = wysiwys.sign_edoc(
                draft, out_bundle, self.sign_key, self.sign_cert, at=self.clock()
            )
            eeet_id, receipt = eas.issue_ticket(self.session, signed, doc_id)
        return elem(
            "signResult",
            children=[
                elem("newDocId", text=eeet_id),
                elem("inputDocId", text=doc_id),
                elem("inputStatus", text="processed"),
                elem("outputStatus", text=out_bundle.initial_status),
                elem("renderDigest", text=signed_form.render_digest),
                elem("receiptDigest", text=sha256_hex(a_canon(receipt.content))),
            ],
        )

    def sign_draft_edoc(self, body: XNode | None) -> XNode:
        """Render-then-sign an uploaded unsigned e-doc; no storing."""
        if body is None:
            raise _AgentRefusal(400, "BadRequest", "no document supplied")
        draft = edoc_mod.edoc_from_element(body)
        if draft.signatures:
            raise _AgentRefusal(400, "AlreadySigned", "document already carries a signature")
        bundle = self._bundle(draft.header.type_id)
        with self._sign_lock:
            signed, _form = wysiwys.sign_edoc(
                draft, bundle, self.sign_key, self.sign_cert, at=self.clock()
            )
        return edoc_mod.edoc_to_element(signed)
