import socket
import threading
import urllib.request
from dataclasses import replace
from datetime import timedelta

import pytest

from aida import aprotocol, commands, sigcrypt
from aida.aprotocol import (
    AMessage,
    BadResponseSignature,
    FrameTooLarge,
    Gateway,
    MalformedFrame,
    SchemaViolation,
    decode_frame,
    encode_frame,
    message_from_bytes,
    message_to_bytes,
    new_command,
    verify_message,
)
from aida.clock import utcnow
from aida.xmlcore import a_canon

def _role_identity(env):
    return env.identity("prof-rossi")


def _search_command(env, at=None):
    prof = _role_identity(env)
    return new_command(
        "SearchEdocs",
        commands.search_args("eEAC"),
        prof.key("role"),
        prof.cert("role"),
        at=at,
    )


def test_frame_round_trip():
    payload = b"<x></x>"
    assert decode_frame(encode_frame(payload)) == payload


def test_frame_too_large_before_body():
    huge_header = (10 * 1024 * 1024).to_bytes(4, "big") + b"x"
    with pytest.raises(FrameTooLarge):
        decode_frame(huge_header)


def test_frame_truncated():
    frame = encode_frame(b"abcdef")
    with pytest.raises(MalformedFrame):
        decode_frame(frame[:-2])


def test_message_round_trip(env):
    msg = _search_command(env)
    again = message_from_bytes(message_to_bytes(msg))
    assert again == msg
    assert verify_message(again, env.trust).signature_valid


def test_message_schema_rejects_wrong_purpose(env):
    sso = env.identity("sso")
    # Signing a command with a sign-purpose cert cannot even be built; a
    # hand-mangled purpose is refused by the schema check.
    msg = _search_command(env)
    data = message_to_bytes(msg)
    mangled = data.replace(b"<purpose>role</purpose>", b"<purpose>sign</purpose>")
    with pytest.raises(SchemaViolation):
        message_from_bytes(mangled)
    with pytest.raises(sigcrypt.PurposeMismatch):
        new_command("SearchEdocs", commands.search_args("eEAC"), sso.key("sign"), sso.cert("sign"))


def test_message_schema_rejects_short_nonce(env):
    data = message_to_bytes(_search_command(env))
    msg = message_from_bytes(data)
    short = replace(msg, nonce=b"tiny")
    with pytest.raises(SchemaViolation):
        message_from_bytes(message_to_bytes(short))


def test_call_round_trip_and_platform_signature(env):
    session = env.session("prof-rossi")
    payload = session.call("SearchEdocs", commands.search_args("eEAC"))
    assert payload.name == "results"


def test_response_echoes_msg_id(env):
    client = env.client()
    msg = _search_command(env)
    response = client.call(msg)
    assert response.msg_id == msg.msg_id
    assert "platform" in response.signature.signer_cert.purposes


def test_stale_timestamp_rejected(env):
    client = env.client()
    stale = _search_command(env, at=utcnow() - timedelta(seconds=1000))
    response = client.call(stale)
    assert response.body.status == commands.REPLAY_SUSPECT


def test_exact_resend_rejected_fresh_reissue_accepted(env):
    client = env.client()
    msg = _search_command(env)
    first = client.call(msg)
    assert first.body.status == commands.OK
    replayed = client.call(msg)
    assert replayed.body.status == commands.REPLAY
    fresh = client.call(_search_command(env))
    assert fresh.body.status == commands.OK


def test_admin_command_refused_on_scenario_port(env):
    admin = env.session("admin", port="scenario")
    from aida.session import PlatformRefused

    with pytest.raises(PlatformRefused) as err:
        admin.get_log()
    assert err.value.status == commands.DENIED_PORT


def test_admin_command_allowed_on_admin_port(env):
    admin = env.session("admin", port="admin")
    assert isinstance(admin.get_log(), list)


def test_gateway_transparency_payloads_match(env):
    gateway = Gateway("127.0.0.1", env.platform.port_number("scenario"))
    gateway.start()
    try:
        direct = env.session("prof-rossi", port="scenario")
        tunneled = env.session("prof-rossi", endpoint=gateway.endpoint)
        a = direct.call("SearchEdocs", commands.search_args("eEAC"))
        b = tunneled.call("SearchEdocs", commands.search_args("eEAC"))
        assert a_canon(a) == a_canon(b)
    finally:
        gateway.stop()


def test_gateway_forwards_bytes_verbatim():
    # echo upstream: whatever frame arrives comes back unchanged
    received = []

    def echo_server(server_sock):
        conn, _ = server_sock.accept()
        with conn:
            frame = aprotocol.read_frame(conn)
            received.append(frame)
            conn.sendall(encode_frame(frame))

    server_sock = socket.socket()
    server_sock.bind(("127.0.0.1", 0))
    server_sock.listen(1)
    threading.Thread(target=echo_server, args=(server_sock,), daemon=True).start()
    gateway = Gateway("127.0.0.1", server_sock.getsockname()[1])
    gateway.start()
    try:
        blob = b"<ping>payload</ping>"
        request = urllib.request.Request(
            gateway.endpoint, data=encode_frame(blob),
            headers={"Content-Type": "application/octet-stream"}, method="POST",
        )
        with urllib.request.urlopen(request, timeout=5) as resp:
            assert decode_frame(resp.read()) == blob
        assert received == [blob]
    finally:
        gateway.stop()
        server_sock.close()


def test_gateway_oversized_body_413():
    import http.client

    gateway = Gateway("127.0.0.1", 1)  # upstream irrelevant
    gateway.start()
    try:
        conn = http.client.HTTPConnection("127.0.0.1", gateway.port, timeout=5)
        try:
            # the gateway refuses before reading the body, so the send may
            # break mid-way; the 413 is still on the wire
            conn.request(
                "POST", aprotocol.TUNNEL_PATH, body=b"x" * (2 << 20),
                headers={"Content-Type": "application/octet-stream"},
            )
        except (BrokenPipeError, ConnectionResetError):
            pass
        assert conn.getresponse().status == 413
    finally:
        conn.close()
        gateway.stop()


def test_gateway_upstream_down_502():
    # a closed port: bind then close to reserve a dead target
    probe = socket.socket()
    probe.bind(("127.0.0.1", 0))
    dead_port = probe.getsockname()[1]
    probe.close()
    gateway = Gateway("127.0.0.1", dead_port)
    gateway.start()
    try:
        request = urllib.request.Request(
            gateway.endpoint, data=encode_frame(b"<x></x>"),
            headers={"Content-Type": "application/octet-stream"}, method="POST",
        )
        with pytest.raises(urllib.error.HTTPError) as err:
            urllib.request.urlopen(request, timeout=5)
        assert err.value.code == 502
    finally:
        gateway.stop()


def test_client_rejects_tampered_response_signature(env, monkeypatch):
    client = env.client()
    real_call_bytes = client.call_bytes

    def tamper(frame):
        raw = real_call_bytes(frame)
        return raw.replace(b"<status>OK</status>", b"<status>DENIED_COMMAND</status>")

    monkeypatch.setattr(client, "call_bytes", tamper)
    with pytest.raises(BadResponseSignature):
        client.call(_search_command(env))
