import urllib.error
import urllib.request
from dataclasses import replace

import pytest

from aida import edoc, fixtures
from aida.agent import DeskAgent, TOKEN_HEADER
from aida.eas import AdmissionService, RegistryStub, load_usermap
from aida.xmlcore import element_text, find_one, find_text, parse


@pytest.fixture()
def agent_env(env):
    prof = env.identity("prof-rossi")
    agent = DeskAgent(
        env.session("prof-rossi"),
        prof.key("sign"),
        prof.cert("sign"),
        env.trust,
    )
    agent.start()
    yield env, agent
    agent.stop()


def _admit(env, student_id="s1000001"):
    sso = env.identity("sso")
    service = AdmissionService(
        env.session("sso"), sso.key("sign"), sso.cert("sign"),
        RegistryStub.load(env.fixture_dir / "registry.xml"),
        load_usermap(env.fixture_dir / "usermap.xml"),
    )
    digest = env.identity(student_id).cert("auth").key_digest()
    return service.request_admission(digest, "01ABC")


def _request(agent, method, path, body=None, token=None, headers=None):
    request = urllib.request.Request(
        agent.base_url + path,
        data=body,
        method=method,
        headers={TOKEN_HEADER: agent.token if token is None else token, **(headers or {})},
    )
    with urllib.request.urlopen(request, timeout=10) as resp:
        return resp.status, parse(resp.read())


def _request_error(agent, method, path, body=None, token=None):
    try:
        _request(agent, method, path, body, token)
    except urllib.error.HTTPError as err:
        return err.code, parse(err.read())
    raise AssertionError("expected an HTTP error")


MANUAL_XML = (
    b'<manualValues>'
    b'<entry name="eEET/exam/date">2026-06-10</entry>'
    b'<entry name="eEET/exam/mark">28</entry>'
    b'<entry name="eEET/exam/questions">q1; q2</entry>'
    b'</manualValues>'
)


def test_token_required(agent_env):
    _env, agent = agent_env
    code, payload = _request_error(agent, "GET", "/api/ping", token="wrong")
    assert code == 401
    assert find_text(payload, "agentError/code") == "BadToken"
    status, pong = _request(agent, "GET", "/api/ping")
    assert status == 200 and pong.name == "pong"


def test_work_list_matches_platform(agent_env):
    env, agent = agent_env
    admitted = {_admit(env, s).doc_id for s in ("s1000001", "s1000002", "s1000003")}
    _status, payload = _request(agent, "GET", "/api/work?type=eEAC&exam=01ABC")
    items = [c for c in payload.children if c.kind == "element"]
    assert {find_text(i, "item/docId") for i in items} == admitted
    assert all(find_text(i, "item/status") == "pending" for i in items)
    labels = {
        element_text(find_one(e, "entry/label"))
        for i in items
        for e in find_one(i, "item/fields").children
    }
    assert "Student ID" in labels


def test_doc_form_returns_render_and_digest(agent_env):
    env, agent = agent_env
    doc_id = _admit(env).doc_id
    _status, payload = _request(agent, "GET", f"/api/doc/{doc_id}/form")
    lines = find_text(payload, "form/lines")
    digest = find_text(payload, "form/renderDigest")
    assert "Signature: VALID" in lines
    assert find_text(payload, "form/valid") == "true"
    from aida.xmlcore import sha256_hex

    assert sha256_hex(lines.encode()) == digest


def test_manual_fields_listed_with_patterns(agent_env):
    _env, agent = agent_env
    _status, payload = _request(agent, "GET", "/api/manual-fields?type=eEAC")
    assert find_text(payload, "manualFields/outputType") == "eEET"
    fields = {
        find_text(f, "field/label"): find_text(f, "field/pattern")
        for f in payload.children
        if f.kind == "element" and f.name == "field"
    }
    assert set(fields) == {"Exam date", "Mark", "Questions"}
    assert fields["Mark"]  # pattern hint present


def test_preview_then_sign_updates_both_statuses(agent_env):
    env, agent = agent_env
    doc_id = _admit(env).doc_id
    _status, preview = _request(agent, "POST", f"/api/doc/{doc_id}/preview", MANUAL_XML)
    digest = find_text(preview, "form/renderDigest")
    lines = find_text(preview, "form/lines")
    assert "Mark: 28" in lines
    body = (
        b"<signRequest><renderDigest>" + digest.encode() + b"</renderDigest>"
        + MANUAL_XML + b"</signRequest>"
    )
    _status, result = _request(agent, "POST", f"/api/doc/{doc_id}/sign", body)
    eeet_id = find_text(result, "signResult/newDocId")
    assert find_text(result, "signResult/inputStatus") == "processed"
    assert find_text(result, "signResult/outputStatus") == "issued"
    assert env.platform.records[doc_id].attrs.status == "processed"
    assert env.platform.records[eeet_id].attrs.status == "issued"
    assert find_text(result, "signResult/receiptDigest")


def test_preview_missing_mark_reports_label(agent_env):
    env, agent = agent_env
    doc_id = _admit(env).doc_id
    partial = MANUAL_XML.replace(b'<entry name="eEET/exam/mark">28</entry>', b"")
    code, payload = _request_error(agent, "POST", f"/api/doc/{doc_id}/preview", partial)
    assert code == 400
    assert find_text(payload, "agentError/code") == "ManualFieldMissing"
    assert find_text(payload, "agentError/label") == "Mark"


def test_sign_without_render_digest_rejected(agent_env):
    env, agent = agent_env
    doc_id = _admit(env).doc_id
    body = b"<signRequest>" + MANUAL_XML + b"</signRequest>"
    code, payload = _request_error(agent, "POST", f"/api/doc/{doc_id}/sign", body)
    assert code == 400
    assert find_text(payload, "agentError/code") == "MissingRenderDigest"
    assert env.platform.records[doc_id].attrs.status == "pending"


def test_sign_with_stale_render_digest_rejected(agent_env):
    env, agent = agent_env
    doc_id = _admit(env).doc_id
    body = (
        b"<signRequest><renderDigest>" + b"0" * 64 + b"</renderDigest>"
        + MANUAL_XML + b"</signRequest>"
    )
    code, payload = _request_error(agent, "POST", f"/api/doc/{doc_id}/sign", body)
    assert code == 409
    assert find_text(payload, "agentError/code") == "RenderDigestMismatch"
    assert env.platform.records[doc_id].attrs.status == "pending"


def test_sign_refused_when_input_render_rejected(agent_env):
    env, agent = agent_env
    doc_id = _admit(env).doc_id
    # corrupt the stored card in memory: hidden field the display refuses
    record = env.platform.records[doc_id]
    from aida.xmlcore import elem

    hacked = replace(
        record.doc,
        content=replace(
            record.doc.content,
            children=record.doc.content.children + (elem("remarks", text="pay bearer"),),
        ),
    )
    record.doc = hacked
    _status, preview_error = _request_error(
        agent, "POST", f"/api/doc/{doc_id}/preview", MANUAL_XML
    )
    assert find_text(preview_error, "agentError/code") == "Unmapped"
    body = (
        b"<signRequest><renderDigest>" + b"1" * 64 + b"</renderDigest>"
        + MANUAL_XML + b"</signRequest>"
    )
    code, payload = _request_error(agent, "POST", f"/api/doc/{doc_id}/sign", body)
    assert find_text(payload, "agentError/code") == "Unmapped"
    assert env.platform.records[doc_id].attrs.status == "pending"
    assert not any(
        r.doc.header.type_id == "eEET" for r in env.platform.records.values()
    )


def test_sign_refused_for_tampered_input_signature(agent_env):
    env, agent = agent_env
    doc_id = _admit(env).doc_id
    record = env.platform.records[doc_id]
    from aida.xmlcore import elem, text_node

    # swap a displayed value: still renders, but the signature breaks
    def rewrite(node):
        if node.kind == "text" and node.text == "Ada Bianchi":
            return text_node("Eva Mallory")
        if node.kind == "element":
            return replace(node, children=tuple(rewrite(c) for c in node.children))
        return node

    record.doc = replace(record.doc, content=rewrite(record.doc.content))
    code, payload = _request_error(agent, "POST", f"/api/doc/{doc_id}/preview", MANUAL_XML)
    assert code == 409
    assert find_text(payload, "agentError/code") == "InputInvalid"


def test_attack_corpus_through_agent_sign_entry(agent_env):
    env, agent = agent_env
    corpus_dir = env.fixture_dir / "attacks"
    before = set(env.platform.records)
    for filename, expected in fixtures.load_attack_manifest(corpus_dir):
        data = (corpus_dir / filename).read_bytes()
        code, payload = _request_error(agent, "POST", "/api/sign-edoc", data)
        assert code in (400, 409), filename
        assert find_text(payload, "agentError/code") == expected, filename
    assert set(env.platform.records) == before  # nothing stored, nothing signed


def test_sign_edoc_endpoint_happy_path(agent_env):
    env, agent = agent_env
    bundle = env.bundle("eEET")
    from aida.edoc import assemble, new_unsigned

    values = {
        "eEET/student/id": "s1000001", "eEET/student/name": "Ada Bianchi",
        "eEET/student/placeOfBirth": "Torino", "eEET/faculty/name": "Information Engineering",
        "eEET/exam/code": "01ABC", "eEET/exam/name": "Computer Security",
        "eEET/exam/date": "2026-06-10", "eEET/exam/mark": "28",
        "eEET/exam/questions": "q",
        "eEET/validity/notBefore": "2026-05-04T09:00:00Z",
        "eEET/validity/notAfter": "2026-06-15T09:00:00Z",
    }
    draft = new_unsigned("eEET", 1, bundle.def_digest, assemble(bundle.typedef, values))
    _status, payload = _request(agent, "POST", "/api/sign-edoc", edoc.edoc_to_bytes(draft))
    signed = edoc.edoc_from_element(payload)
    assert signed.signatures and signed.header.doc_id
    from aida import sigcrypt

    block = signed.signatures[0]
    assert sigcrypt.verify_envelope(
        sigcrypt.SignedDoc(signed.content, block), env.trust
    ).fully_valid


def test_static_ui_404_without_ui_dir(agent_env):
    _env, agent = agent_env
    try:
        urllib.request.urlopen(agent.base_url + "/", timeout=5)
    except urllib.error.HTTPError as err:
        assert err.code == 404
    else:
        raise AssertionError("expected 404 without a UI directory")
