"""Wire protocol: signed XML message envelopes, length-prefixed TCP
framing, the client library and the HTTP tunnel gateway.

Every message is a signed XML structure: a header (id, nonce,
timestamp, direction), a command or response body, and a signature
block over the canonical bytes of header plus body. Commands are signed
with a role certificate, responses with the platform certificate.
Frames are 4-byte big-endian length plus the canonical message bytes;
the gateway forwards frames verbatim and never inspects or re-signs.
"""

from __future__ import annotations

import http.client
import os
import re
import socket
import threading
import urllib.parse
from dataclasses import dataclass, replace
from datetime import datetime
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from ipaddress import ip_address, ip_network

from . import sigcrypt
from .clock import fmt_ts, parse_ts, utcnow
from .sigcrypt import MiniCert, PrivateKey, SignatureBlock, TrustStore
from .xmlcore import XNode, a_canon, elem, element_text, find_one, find_text, parse

FRAME_CAP_DEFAULT = 1 << 20  # 1 MiB
TUNNEL_PATH = "/aida/tunnel"
NONCE_BYTES = 16

DIRECTION_COMMAND = "command"
DIRECTION_RESPONSE = "response"

_NAME_RE = re.compile(r"[A-Za-z][A-Za-z0-9]*\Z")


class ProtocolError(Exception):
    pass


class FrameTooLarge(ProtocolError):
    pass


class MalformedFrame(ProtocolError):
    pass


class SchemaViolation(ProtocolError):
    pass


class Timeout(ProtocolError):
    pass


class ConnectionClosed(ProtocolError):
    pass


class BadResponseSignature(ProtocolError):
    pass


class GatewayError(ProtocolError):
    pass


# ---------------------------------------------------------------------------
# Framing
# ---------------------------------------------------------------------------

def encode_frame(payload: bytes, cap: int = FRAME_CAP_DEFAULT) -> bytes:
    if len(payload) > cap:
        raise FrameTooLarge(f"{len(payload)} bytes exceeds cap {cap}")
    return len(payload).to_bytes(4, "big") + payload


def _recv_exact(sock: socket.socket, length: int) -> bytes:
    chunks = []
    got = 0
    while got < length:
        try:
            chunk = sock.recv(length - got)
        except socket.timeout as exc:
            raise Timeout("read timed out") from exc
        if not chunk:
            raise ConnectionClosed("peer closed the connection")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket, cap: int = FRAME_CAP_DEFAULT) -> bytes:
    header = _recv_exact(sock, 4)
    length = int.from_bytes(header, "big")
    if length > cap:
        raise FrameTooLarge(f"declared length {length} exceeds cap {cap}")
    try:
        return _recv_exact(sock, length)
    except ConnectionClosed as exc:
        raise MalformedFrame("frame truncated") from exc


def decode_frame(data: bytes, cap: int = FRAME_CAP_DEFAULT) -> bytes:
    if len(data) < 4:
        raise MalformedFrame("frame shorter than its length prefix")
    length = int.from_bytes(data[:4], "big")
    if length > cap:
        raise FrameTooLarge(f"declared length {length} exceeds cap {cap}")
    if len(data) != 4 + length:
        raise MalformedFrame("frame length prefix does not match body")
    return data[4:]


# ---------------------------------------------------------------------------
# Messages
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Command:
    name: str
    args: XNode


@dataclass(frozen=True)
class ResponseBody:
    status: str
    payload: XNode


@dataclass(frozen=True)
class AMessage:
    msg_id: str
    nonce: bytes
    timestamp: datetime
    direction: str
    body: Command | ResponseBody
    signature: SignatureBlock


def _header_element(msg_id: str, nonce: bytes, timestamp: datetime, direction: str) -> XNode:
    return elem(
        "header",
        children=[
            elem("msgId", text=msg_id),
            elem("nonce", text=nonce.hex()),
            elem("timestamp", text=fmt_ts(timestamp)),
            elem("direction", text=direction),
        ],
    )


def _body_element(body: Command | ResponseBody) -> XNode:
    if isinstance(body, Command):
        inner = elem("command", children=[elem("name", text=body.name), body.args])
    else:
        inner = elem(
            "response",
            children=[elem("status", text=body.status), elem("payload", children=[body.payload])],
        )
    return elem("body", children=[inner])


def signed_part_bytes(msg: AMessage) -> bytes:
    """Canonical bytes the message signature covers: header plus body."""
    return a_canon(
        elem(
            "amessage",
            children=[
                _header_element(msg.msg_id, msg.nonce, msg.timestamp, msg.direction),
                _body_element(msg.body),
            ],
        )
    )


def message_to_element(msg: AMessage) -> XNode:
    return elem(
        "amessage",
        children=[
            _header_element(msg.msg_id, msg.nonce, msg.timestamp, msg.direction),
            _body_element(msg.body),
            sigcrypt.block_to_element(msg.signature),
        ],
    )


def message_to_bytes(msg: AMessage) -> bytes:
    return a_canon(message_to_element(msg))


def message_from_element(root: XNode) -> AMessage:
    if root.name != "amessage":
        raise SchemaViolation("not a protocol message")
    parts = [c.name for c in root.children if c.kind == "element"]
    if parts != ["header", "body", "signature"]:
        raise SchemaViolation(f"message must hold header, body, signature; got {parts}")
    msg_id = find_text(root, "amessage/header/msgId") or ""
    nonce_hex = find_text(root, "amessage/header/nonce") or ""
    direction = find_text(root, "amessage/header/direction") or ""
    if not msg_id:
        raise SchemaViolation("empty msgId")
    try:
        nonce = bytes.fromhex(nonce_hex)
    except ValueError as exc:
        raise SchemaViolation("nonce is not hex") from exc
    if len(nonce) < NONCE_BYTES:
        raise SchemaViolation("nonce shorter than 128 bits")
    if direction not in (DIRECTION_COMMAND, DIRECTION_RESPONSE):
        raise SchemaViolation(f"bad direction {direction!r}")
    try:
        timestamp = parse_ts(find_text(root, "amessage/header/timestamp") or "")
    except ValueError as exc:
        raise SchemaViolation(str(exc)) from exc

    body_el = find_one(root, "amessage/body")
    inner = [c for c in body_el.children if c.kind == "element"]
    if len(inner) != 1:
        raise SchemaViolation("body must hold exactly one element")
    kind = inner[0]
    body: Command | ResponseBody
    if kind.name == "command":
        if direction != DIRECTION_COMMAND:
            raise SchemaViolation("command body in a response message")
        name = find_text(kind, "command/name") or ""
        if not _NAME_RE.match(name):
            raise SchemaViolation(f"bad command name {name!r}")
        args = find_one(kind, "command/args")
        if args is None:
            raise SchemaViolation("command has no args element")
        body = Command(name=name, args=args)
    elif kind.name == "response":
        if direction != DIRECTION_RESPONSE:
            raise SchemaViolation("response body in a command message")
        status = find_text(kind, "response/status") or ""
        if not status:
            raise SchemaViolation("response has no status")
        payload_el = find_one(kind, "response/payload")
        if payload_el is None:
            raise SchemaViolation("response has no payload element")
        payload_inner = [c for c in payload_el.children if c.kind == "element"]
        if len(payload_inner) > 1:
            raise SchemaViolation("payload must hold at most one element")
        payload = payload_inner[0] if payload_inner else elem("empty")
        body = ResponseBody(status=status, payload=payload)
    else:
        raise SchemaViolation(f"unknown body element {kind.name!r}")

    sig_el = find_one(root, "amessage/signature")
    try:
        signature = sigcrypt.block_from_element(sig_el)
    except (sigcrypt.SigError, ValueError) as exc:
        raise SchemaViolation(f"unreadable signature block: {exc}") from exc
    expected_purpose = "role" if direction == DIRECTION_COMMAND else "platform"
    if signature.purpose != expected_purpose:
        raise SchemaViolation(
            f"{direction} must be signed for purpose {expected_purpose!r}, "
            f"got {signature.purpose!r}"
        )
    return AMessage(
        msg_id=msg_id,
        nonce=nonce,
        timestamp=timestamp,
        direction=direction,
        body=body,
        signature=signature,
    )


def message_from_bytes(data: bytes) -> AMessage:
    try:
        root = parse(data)
    except Exception as exc:
        raise SchemaViolation(f"unparseable message: {exc}") from exc
    return message_from_element(root)


def _sign_message(unsigned: AMessage, key: PrivateKey, cert: MiniCert, purpose: str) -> AMessage:
    block = sigcrypt.sign_detached(
        signed_part_bytes(unsigned), key, cert, purpose, at=unsigned.timestamp
    )
    return replace(unsigned, signature=block)


def new_command(
    name: str, args: XNode, key: PrivateKey, role_cert: MiniCert, *, at=None
) -> AMessage:
    at = at or utcnow()
    unsigned = AMessage(
        msg_id=os.urandom(12).hex(),
        nonce=os.urandom(NONCE_BYTES),
        timestamp=at,
        direction=DIRECTION_COMMAND,
        body=Command(name=name, args=args),
        signature=None,  # type: ignore[arg-type]
    )
    return _sign_message(unsigned, key, role_cert, "role")


def new_response(
    request: AMessage,
    status: str,
    payload: XNode | None,
    key: PrivateKey,
    platform_cert: MiniCert,
    *,
    at=None,
) -> AMessage:
    at = at or utcnow()
    unsigned = AMessage(
        msg_id=request.msg_id,
        nonce=os.urandom(NONCE_BYTES),
        timestamp=at,
        direction=DIRECTION_RESPONSE,
        body=ResponseBody(status=status, payload=payload if payload is not None else elem("empty")),
        signature=None,  # type: ignore[arg-type]
    )
    return _sign_message(unsigned, key, platform_cert, "platform")


def verify_message(msg: AMessage, trust: TrustStore, at=None) -> sigcrypt.EnvelopeReport:
    at = at or utcnow()
    block = msg.signature
    valid = sigcrypt.verify_detached(block, signed_part_bytes(msg))
    chain = sigcrypt.verify_chain(block.signer_cert, at, trust)
    return sigcrypt.EnvelopeReport(
        signature_valid=valid,
        chain_status=chain.status,
        signer=block.signer_cert.subject,
        timestamp=block.timestamp,
    )


def error_payload(message: str) -> XNode:
    return elem("error", children=[elem("message", text=message)])


# ---------------------------------------------------------------------------
# Port configuration
# ---------------------------------------------------------------------------

PORT_NAMES = ("scenario", "service", "admin")


@dataclass(frozen=True)
class PortConfig:
    name: str
    tcp_port: int
    command_policy: str = "full"  # or "restricted"
    allowed_commands: frozenset[str] = frozenset()
    visibility: tuple[str, ...] = ("loopback",)

    def accepts_command(self, name: str) -> bool:
        return self.command_policy == "full" or name in self.allowed_commands

    def allows_peer(self, host: str) -> bool:
        try:
            ip = ip_address(host)
        except ValueError:
            return False
        for rule in self.visibility:
            if rule == "any":
                return True
            if rule == "loopback":
                if ip.is_loopback:
                    return True
            else:
                if ip in ip_network(rule, strict=False):
                    return True
        return False


def ports_to_element(ports) -> XNode:
    port_els = []
    for p in ports:
        kids = [
            elem("name", text=p.name),
            elem("tcpPort", text=str(p.tcp_port)),
            elem("policy", text=p.command_policy),
        ]
        if p.command_policy == "restricted":
            kids.append(elem("commands", children=[elem("c", text=c) for c in sorted(p.allowed_commands)]))
        kids.append(elem("visibility", children=[elem("v", text=v) for v in p.visibility]))
        port_els.append(elem("port", children=kids))
    return elem("ports", children=port_els)


def ports_from_element(root: XNode) -> tuple[PortConfig, ...]:
    out = []
    for port_el in root.children:
        if port_el.kind != "element":
            continue
        commands_el = find_one(port_el, "port/commands")
        vis_el = find_one(port_el, "port/visibility")
        out.append(
            PortConfig(
                name=find_text(port_el, "port/name") or "",
                tcp_port=int(find_text(port_el, "port/tcpPort") or "0"),
                command_policy=find_text(port_el, "port/policy") or "full",
                allowed_commands=frozenset(
                    element_text(c)
                    for c in (commands_el.children if commands_el else ())
                    if c.kind == "element"
                ),
                visibility=tuple(
                    element_text(v)
                    for v in (vis_el.children if vis_el else ())
                    if v.kind == "element"
                )
                or ("loopback",),
            )
        )
    return tuple(out)


# ---------------------------------------------------------------------------
# Client
# ---------------------------------------------------------------------------

class PlatformClient:
    """One platform endpoint, reached directly over TCP or via a gateway.

    Endpoints: `tcp://host:port` or `http(s)://host:port/aida/tunnel`.
    One in-flight command per call; not shareable across threads without
    external serialization.
    """

    def __init__(self, endpoint: str, trust: TrustStore, *, timeout: float = 10.0,
                 frame_cap: int = FRAME_CAP_DEFAULT, clock=utcnow):
        self.endpoint = endpoint
        self.trust = trust
        self.timeout = timeout
        self.frame_cap = frame_cap
        self.clock = clock

    def call_bytes(self, frame: bytes) -> bytes:
        """Send one pre-encoded frame, return the raw response frame body."""
        url = urllib.parse.urlsplit(self.endpoint)
        if url.scheme == "tcp":
            return self._call_tcp(url.hostname, url.port, frame)
        if url.scheme in ("http", "https"):
            return self._call_gateway(url, frame)
        raise ProtocolError(f"unsupported endpoint {self.endpoint!r}")

    def _call_tcp(self, host: str, port: int, frame: bytes) -> bytes:
        try:
            with socket.create_connection((host, port), timeout=self.timeout) as sock:
                sock.sendall(frame)
                return read_frame(sock, self.frame_cap)
        except socket.timeout as exc:
            raise Timeout(str(exc)) from exc
        except OSError as exc:
            raise ConnectionClosed(str(exc)) from exc

    def _call_gateway(self, url, frame: bytes) -> bytes:
        conn_cls = http.client.HTTPSConnection if url.scheme == "https" else http.client.HTTPConnection
        conn = conn_cls(url.hostname, url.port, timeout=self.timeout)
        try:
            conn.request(
                "POST",
                url.path or TUNNEL_PATH,
                body=frame,
                headers={"Content-Type": "application/octet-stream"},
            )
            resp = conn.getresponse()
            data = resp.read()
            if resp.status != 200:
                raise ConnectionClosed(f"gateway answered {resp.status}")
            return decode_frame(data, self.frame_cap)
        except socket.timeout as exc:
            raise Timeout(str(exc)) from exc
        except (http.client.HTTPException, OSError) as exc:
            raise ConnectionClosed(str(exc)) from exc
        finally:
            conn.close()

    def call(self, command: AMessage) -> AMessage:
        """Send a signed command, verify and return the platform response."""
        raw = self.call_bytes(encode_frame(message_to_bytes(command), self.frame_cap))
        response = message_from_bytes(raw)
        if response.direction != DIRECTION_RESPONSE:
            raise SchemaViolation("platform answered with a non-response")
        if response.msg_id != command.msg_id:
            raise BadResponseSignature("response does not echo the command id")
        report = verify_message(response, self.trust, at=self.clock())
        if not report.fully_valid:
            raise BadResponseSignature(
                f"platform signature invalid ({report.chain_status})"
            )
        if "platform" not in response.signature.signer_cert.purposes:
            raise BadResponseSignature("responder certificate lacks platform purpose")
        return response


# ---------------------------------------------------------------------------
# Gateway
# ---------------------------------------------------------------------------

class Gateway:
    """HTTP tunnel: forwards frames to one platform port, byte for byte."""

    def __init__(self, upstream_host: str, upstream_port: int, *, listen_host="127.0.0.1",
                 listen_port=0, body_cap: int = FRAME_CAP_DEFAULT + 4, timeout: float = 10.0):
        gateway = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):  # noqa: N802 (http.server API)
                if self.path != TUNNEL_PATH:
                    self.send_error(404)
                    return
                length = int(self.headers.get("Content-Length", "0"))
                if length > gateway.body_cap:
                    self.send_error(413)
                    return
                body = self.rfile.read(length)
                try:
                    upstream_response = gateway._forward(body)
                except Exception:
                    self.send_error(502)
                    return
                self.send_response(200)
                self.send_header("Content-Type", "application/octet-stream")
                self.send_header("Content-Length", str(len(upstream_response)))
                self.end_headers()
                self.wfile.write(upstream_response)

            def log_message(self, *args):  # silence default stderr noise
                pass

        self.upstream_host = upstream_host
        self.upstream_port = upstream_port
        self.body_cap = body_cap
        self.timeout = timeout
        self._server = ThreadingHTTPServer((listen_host, listen_port), Handler)
        self._server.daemon_threads = True
        self._thread: threading.Thread | None = None

    def _forward(self, body: bytes) -> bytes:
        with socket.create_connection(
            (self.upstream_host, self.upstream_port), timeout=self.timeout
        ) as sock:
            sock.sendall(body)
            payload = read_frame(sock, self.body_cap)
        return encode_frame(payload, self.body_cap)

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    @property
    def endpoint(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}{TUNNEL_PATH}"

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
