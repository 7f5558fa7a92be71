import pytest

from aida import edoc, fixtures
from aida.aprotocol import Gateway
from aida.cli import EXIT_INVALID, EXIT_OK, EXIT_PLATFORM, EXIT_REFUSED, main
from aida.clock import utcnow
from aida.xmlcore import parse


@pytest.fixture(autouse=True)
def _passphrase_env(monkeypatch):
    monkeypatch.setenv("AIDA_PASSPHRASE", fixtures.DEMO_PASSPHRASE)


def _profile_args(env, port="scenario", endpoint=None, identity="prof-rossi"):
    return [
        "--endpoint", endpoint or env.platform.endpoint(port),
        "--identity-dir", str(env.fixture_dir / "identities" / identity),
        "--trust", str(env.fixture_dir / "trust.xml"),
    ]


def test_doc_create_view_sign_verify_round_trip(tmp_path, env, capsys):
    from datetime import timedelta

    defs = str(env.fixture_dir / "defs")
    now = env.clock()
    values = fixtures.eeac_field_values(
        fixtures.DEMO_STUDENTS[0], fixtures.DEMO_EXAMS[0], now, now + timedelta(days=42)
    )
    draft = tmp_path / "draft.xml"
    create_argv = ["doc-create", "--defs", defs, "--type", "eEAC", "--out", str(draft)]
    for path, value in values.items():
        create_argv += ["--field", f"{path}={value}"]
    assert main(create_argv) == EXIT_OK

    assert main(["doc-view", str(draft), "--defs", defs]) == EXIT_OK
    viewed = capsys.readouterr().out
    assert "Signature: UNSIGNED DRAFT" in viewed
    assert "Student ID: s1000001" in viewed

    signed = tmp_path / "signed.xml"
    sso_dir = env.fixture_dir / "identities" / "sso"
    assert main([
        "doc-sign", str(draft), "--defs", defs,
        "--keystore", str(sso_dir / "sign.ks"), "--cert", str(sso_dir / "sign.cert.xml"),
        "--out", str(signed),
    ]) == EXIT_OK
    out = capsys.readouterr().out
    assert "doc-id:" in out

    assert main([
        "doc-verify", str(signed), "--defs", defs,
        "--trust", str(env.fixture_dir / "trust.xml"),
    ]) == EXIT_OK
    assert "Signature: VALID" in capsys.readouterr().out


def test_doc_verify_tampered_exits_invalid(tmp_path, env, capsys):
    signed_doc = env.make_signed_eeac()
    data = edoc.edoc_to_bytes(signed_doc).replace(b"Ada Bianchi", b"Eva Mallory")
    target = tmp_path / "tampered.xml"
    target.write_bytes(data)
    code = main([
        "doc-verify", str(target), "--defs", str(env.fixture_dir / "defs"),
        "--trust", str(env.fixture_dir / "trust.xml"),
    ])
    assert code == EXIT_INVALID
    assert "Signature: INVALID" in capsys.readouterr().out


def test_doc_sign_refuses_attack_corpus(tmp_path, env, capsys):
    corpus = env.fixture_dir / "attacks"
    sso_dir = env.fixture_dir / "identities" / "sso"
    for filename, expected in fixtures.load_attack_manifest(corpus):
        out = tmp_path / f"signed-{filename}"
        code = main([
            "doc-sign", str(corpus / filename), "--defs", str(env.fixture_dir / "defs"),
            "--keystore", str(sso_dir / "sign.ks"), "--cert", str(sso_dir / "sign.cert.xml"),
            "--out", str(out),
        ])
        captured = capsys.readouterr()
        assert code == EXIT_REFUSED, filename
        assert expected in captured.err, filename
        assert not out.exists(), filename


def test_submit_search_set_status_validate(tmp_path, env, capsys):
    signed_doc = env.make_signed_eeac()
    doc_file = tmp_path / "card.xml"
    doc_file.write_bytes(edoc.edoc_to_bytes(signed_doc))
    sso = _profile_args(env, identity="sso")
    assert main(["submit", str(doc_file), *sso]) == EXIT_OK
    submit_out = capsys.readouterr().out
    assert signed_doc.header.doc_id in submit_out

    prof = _profile_args(env)
    assert main(["search", "--type", "eEAC", "--attr", "status=pending", *prof]) == EXIT_OK
    search_out = capsys.readouterr().out
    assert signed_doc.header.doc_id in search_out

    assert main(["set-status", signed_doc.header.doc_id, "processed", *prof]) == EXIT_OK
    capsys.readouterr()
    assert main(["validate", signed_doc.header.doc_id, *prof]) == EXIT_OK
    assert "valid: true" in capsys.readouterr().out

    late = "2099-01-01T00:00:00Z"
    assert main(["validate", signed_doc.header.doc_id, "--at", late, *prof]) == EXIT_INVALID


def test_search_gateway_matches_direct(tmp_path, env, capsys):
    signed_doc = env.make_signed_eeac()
    doc_file = tmp_path / "card.xml"
    doc_file.write_bytes(edoc.edoc_to_bytes(signed_doc))
    assert main(["submit", str(doc_file), *_profile_args(env, identity="sso")]) == EXIT_OK
    capsys.readouterr()

    gateway = Gateway("127.0.0.1", env.platform.port_number("scenario"))
    gateway.start()
    try:
        assert main(["search", "--type", "eEAC", *_profile_args(env)]) == EXIT_OK
        direct_out = capsys.readouterr().out
        assert main([
            "search", "--type", "eEAC",
            *_profile_args(env, endpoint=gateway.endpoint),
        ]) == EXIT_OK
        tunneled_out = capsys.readouterr().out
        assert direct_out == tunneled_out
    finally:
        gateway.stop()


def test_search_xml_output_round_trips(tmp_path, env, capsys):
    signed_doc = env.make_signed_eeac()
    doc_file = tmp_path / "card.xml"
    doc_file.write_bytes(edoc.edoc_to_bytes(signed_doc))
    main(["submit", str(doc_file), *_profile_args(env, identity="sso")])
    capsys.readouterr()
    assert main(["--xml", "search", "--type", "eEAC", *_profile_args(env)]) == EXIT_OK
    out = capsys.readouterr().out
    root = parse(out.strip().encode())
    assert root.name == "results"


def test_platform_error_exit_code(env, capsys):
    code = main(["set-status", "f" * 64, "processed", *_profile_args(env)])
    assert code == EXIT_PLATFORM
    assert "NOT_FOUND" in capsys.readouterr().err


def test_revoke_and_admin_log(tmp_path, env, capsys):
    signed_doc = env.make_signed_eeac()
    doc_file = tmp_path / "card.xml"
    doc_file.write_bytes(edoc.edoc_to_bytes(signed_doc))
    main(["submit", str(doc_file), *_profile_args(env, identity="sso")])
    capsys.readouterr()
    admin = _profile_args(env, port="admin", identity="admin")
    assert main(["revoke", signed_doc.header.doc_id, "--reason", "test", *admin]) == EXIT_OK
    capsys.readouterr()
    assert main(["admin", "log", *admin]) == EXIT_OK
    log_out = capsys.readouterr().out
    assert "RevokeEdoc" in log_out and "StoreEdoc" in log_out


def test_keygen_and_cert_issue(tmp_path, capsys):
    ks = tmp_path / "new.ks"
    assert main(["keygen", "--keystore", str(ks), "--subject", "tester"]) == EXIT_OK
    assert ks.exists()
    capsys.readouterr()
    anchor = tmp_path / "anchor.cert.xml"
    assert main([
        "cert-issue", "--subject", "tester", "--subject-keystore", str(ks),
        "--purposes", "issuer", "--serial", "1", "--self-signed", "--out", str(anchor),
    ]) == EXIT_OK
    from aida import sigcrypt

    cert = sigcrypt.load_cert(anchor)
    assert cert.is_self_signed()
    user_ks = tmp_path / "user.ks"
    main(["keygen", "--keystore", str(user_ks), "--subject", "user"])
    capsys.readouterr()
    user_cert_path = tmp_path / "user.cert.xml"
    assert main([
        "cert-issue", "--subject", "user", "--subject-keystore", str(user_ks),
        "--purposes", "sign,role", "--serial", "2",
        "--issuer-keystore", str(ks), "--issuer-cert", str(anchor),
        "--out", str(user_cert_path),
    ]) == EXIT_OK
    user_cert = sigcrypt.load_cert(user_cert_path)
    trust = sigcrypt.TrustStore(anchors=(cert,))
    assert sigcrypt.verify_chain(user_cert, utcnow(), trust).ok
