"""Command-line tools for operators, signers and referents.

Exit codes: 0 success, 2 usage, 3 display/signing refusal, 4 failed
verification, 5 platform refusal, 6 connection or protocol trouble,
1 anything else. Human output prints display forms and summaries;
`--xml` switches to canonical XML on stdout for scripting.
"""

from __future__ import annotations

import argparse
import getpass
import os
import sys
import time
from datetime import timedelta
from pathlib import Path

from . import aplatform, edoc as edoc_mod, eas, fixtures as fixtures_mod
from . import sigcrypt, wysiwys
from .agent import DeskAgent
from .aprotocol import Gateway, PlatformClient, ProtocolError
from .bundles import load_bundle
from .clock import parse_ts, utcnow
from .edoc import EdocError
from .session import PlatformRefused, Session
from .wysiwys import DisplayError
from .xmlcore import XmlError, a_canon, parse

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_REFUSED = 3
EXIT_INVALID = 4
EXIT_PLATFORM = 5
EXIT_CONNECTION = 6

PASSPHRASE_ENV = "AIDA_PASSPHRASE"


def _passphrase(args) -> str:
    value = os.environ.get(args.passphrase_env)
    if value is None:
        value = getpass.getpass("key store passphrase: ")
    return value


def _emit_xml(element) -> None:
    sys.stdout.buffer.write(a_canon(element) + b"\n")
    sys.stdout.buffer.flush()


def _load_profile(args) -> dict:
    profile = {}
    if args.profile:
        root = parse(Path(args.profile).read_bytes())
        base = Path(args.profile).parent
        from .xmlcore import element_text

        for child in root.children:
            if child.kind != "element":
                continue
            value = element_text(child)
            if child.name in ("identityDir", "trust", "defs"):
                value = str((base / value).resolve())
            profile[child.name] = value
    for key, flag in (
        ("endpoint", args.endpoint),
        ("identityDir", args.identity_dir),
        ("trust", args.trust),
        ("defs", getattr(args, "defs", None)),
    ):
        if flag:
            profile[key] = flag
    return profile


def _session(args) -> Session:
    profile = _load_profile(args)
    for required in ("endpoint", "identityDir", "trust"):
        if required not in profile:
            raise SystemExit(f"missing --{required.replace('identityDir', 'identity-dir')}")
    trust = sigcrypt.load_truststore(profile["trust"])
    identity = fixtures_mod.load_identity(profile["identityDir"], _passphrase(args))
    client = PlatformClient(profile["endpoint"], trust)
    return Session(client, identity.key("role"), identity.cert("role"))


def _bundle_for(args, doc) -> "object":
    defs_dir = getattr(args, "defs", None) or _load_profile(args).get("defs")
    if not defs_dir:
        raise SystemExit("missing --defs directory")
    return load_bundle(Path(defs_dir) / doc.header.type_id / str(doc.header.version))


def _print_form(form) -> None:
    sys.stdout.write(form.serialize())
    sys.stdout.write(f"render-digest: {form.render_digest}\n")


# ---------------------------------------------------------------------------
# key and certificate management
# ---------------------------------------------------------------------------

def cmd_keygen(args) -> int:
    key, public = sigcrypt.keygen()
    sigcrypt.save_keystore(args.keystore, key, args.subject, _passphrase(args))
    print(f"keystore written: {args.keystore}")
    print(f"public-key: {public.hex()}")
    return EXIT_OK


def cmd_cert_issue(args) -> int:
    passphrase = _passphrase(args)
    if args.subject_keystore:
        subject_key = sigcrypt.load_keystore(args.subject_keystore, passphrase).public_bytes()
    elif args.subject_key_hex:
        subject_key = bytes.fromhex(args.subject_key_hex)
    else:
        raise SystemExit("need --subject-keystore or --subject-key-hex")
    now = utcnow()
    extensions = tuple(e.split("=", 1) for e in args.extension)
    body = sigcrypt.make_cert_body(
        subject=args.subject,
        subject_key=subject_key,
        purposes=args.purposes.split(","),
        not_before=now - timedelta(days=1),
        not_after=now + timedelta(days=args.days),
        issuer=args.subject,
        serial=args.serial,
        extensions=extensions,
    )
    if args.self_signed:
        signer = sigcrypt.load_keystore(args.subject_keystore, passphrase)
        from dataclasses import replace

        cert = replace(body, issuer_signature=signer.sign(sigcrypt.cert_body_bytes(body)))
    else:
        issuer_key = sigcrypt.load_keystore(args.issuer_keystore, passphrase)
        issuer_cert = sigcrypt.load_cert(args.issuer_cert)
        cert = sigcrypt.issue_cert(body, issuer_key, issuer_cert)
    sigcrypt.save_cert(args.out, cert)
    print(f"certificate written: {args.out} (serial {cert.serial})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# document commands
# ---------------------------------------------------------------------------

def cmd_doc_create(args) -> int:
    bundle = load_bundle(Path(args.defs) / args.type / str(args.version))
    fields = dict(f.split("=", 1) for f in args.field)
    content = edoc_mod.assemble(bundle.typedef, fields)
    draft = edoc_mod.new_unsigned(bundle.type_id, bundle.version, bundle.def_digest, content)
    Path(args.out).write_bytes(edoc_mod.edoc_to_bytes(draft))
    print(f"draft written: {args.out}")
    return EXIT_OK


def cmd_doc_view(args) -> int:
    doc = edoc_mod.parse_edoc(Path(args.file).read_bytes())
    bundle = _bundle_for(args, doc)
    if doc.signatures and args.trust:
        trust = sigcrypt.load_truststore(args.trust)
        form, report = wysiwys.verify_and_render(doc, bundle, trust)
        _print_form(form)
        return EXIT_OK if report.valid else EXIT_INVALID
    form, _payload = wysiwys.prepare_edoc_signing(doc, bundle)
    _print_form(form)
    return EXIT_OK


def cmd_doc_sign(args) -> int:
    doc = edoc_mod.parse_edoc(Path(args.file).read_bytes())
    bundle = _bundle_for(args, doc)
    key = sigcrypt.load_keystore(args.keystore, _passphrase(args))
    cert = sigcrypt.load_cert(args.cert)
    signed, form = wysiwys.sign_edoc(doc, bundle, key, cert)
    Path(args.out).write_bytes(edoc_mod.edoc_to_bytes(signed))
    _print_form(form)
    print(f"signed: {args.out}")
    print(f"doc-id: {signed.header.doc_id}")
    return EXIT_OK


def cmd_doc_verify(args) -> int:
    doc = edoc_mod.parse_edoc(Path(args.file).read_bytes())
    bundle = _bundle_for(args, doc)
    trust = sigcrypt.load_truststore(args.trust)
    at = parse_ts(args.at) if args.at else None
    form, report = wysiwys.verify_and_render(doc, bundle, trust, at=at)
    if args.xml:
        _emit_xml(edoc_mod.report_to_element(report))
    else:
        _print_form(form)
    return EXIT_OK if report.valid else EXIT_INVALID


# ---------------------------------------------------------------------------
# networked commands
# ---------------------------------------------------------------------------

def cmd_submit(args) -> int:
    session = _session(args)
    doc = edoc_mod.parse_edoc(Path(args.file).read_bytes())
    doc_id, receipt = session.store_edoc(doc)
    if args.xml:
        _emit_xml(sigcrypt.signed_doc_to_element(receipt))
    else:
        print(f"stored: {doc_id}")
        print(f"receipt-signer: {receipt.signature.signer_cert.subject}")
    return EXIT_OK


def cmd_search(args) -> int:
    session = _session(args)
    attrs = [a.split("=", 1) for a in args.attr]
    fields = [f.split("=", 1) for f in args.field]
    hits = session.search(args.type, attrs=attrs, fields=fields)
    if args.xml:
        from . import commands as commands_mod
        from .xmlcore import elem

        payload = session.call(
            "SearchEdocs", commands_mod.search_args(args.type, attrs, fields)
        )
        _emit_xml(payload)
        return EXIT_OK
    for hit in hits:
        summary = "; ".join(f"{label}: {value}" for label, _, value in hit.fields)
        print(f"{hit.doc_id}  [{hit.status}]  {summary}")
    print(f"{len(hits)} document(s)")
    return EXIT_OK


def cmd_set_status(args) -> int:
    session = _session(args)
    attrs = session.set_status(args.doc_id, args.status)
    print(f"{args.doc_id}: status={attrs.status}")
    return EXIT_OK


def cmd_revoke(args) -> int:
    session = _session(args)
    record = session.revoke(args.doc_id, args.reason)
    print(f"revoked {record.doc_id} at {record.revoked_at.isoformat()}")
    return EXIT_OK


def cmd_validate(args) -> int:
    session = _session(args)
    at = parse_ts(args.at) if args.at else None
    if args.file:
        doc = edoc_mod.parse_edoc(Path(args.file).read_bytes())
        report = session.validate(doc=doc, at=at)
    else:
        report = session.validate(args.doc_id, at=at)
    if args.xml:
        _emit_xml(edoc_mod.report_to_element(report))
    else:
        for line in report.lines():
            print(line)
    return EXIT_OK if report.valid else EXIT_INVALID


def cmd_admin(args) -> int:
    session = _session(args)
    if args.admin_cmd == "put-def":
        session.put_definition(load_bundle(args.bundle_dir))
        print("definition registered")
    elif args.admin_cmd == "set-rolemap":
        entries = aplatform.rolemap_from_element(parse(Path(args.file).read_bytes()))
        session.set_role_map(entries)
        print(f"role map replaced ({len(entries)} roles)")
    elif args.admin_cmd == "port":
        session.port_control(args.port_name, args.action)
        print(f"port {args.port_name}: {args.action}")
    elif args.admin_cmd == "log":
        entries = session.get_log(args.from_seq, args.to_seq)
        if args.xml:
            from .xmlcore import elem

            _emit_xml(elem("logEntries", children=[
                aplatform.log_entry_to_element(e) for e in entries
            ]))
        else:
            for e in entries:
                doc_part = f" doc={e.doc_id[:12]}" if e.doc_id else ""
                print(f"{e.seq:>5}  {e.timestamp}  {e.command:<14} {e.outcome}{doc_part}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# long-running processes
# ---------------------------------------------------------------------------

def cmd_platform(args) -> int:
    data_root = args.data_root or os.environ.get(aplatform.DATA_ROOT_ENV)
    if not data_root:
        raise SystemExit(f"--data-root or ${aplatform.DATA_ROOT_ENV} required")
    platform = aplatform.Platform(data_root, passphrase=_passphrase(args))
    platform.start()
    for config in platform.ports:
        print(f"{config.name}: {platform.endpoint(config.name)}", flush=True)
    try:
        while True:
            time.sleep(1)
    except KeyboardInterrupt:
        platform.stop()
    return EXIT_OK


def cmd_gateway(args) -> int:
    listen_host, listen_port = args.listen.rsplit(":", 1)
    upstream_host, upstream_port = args.upstream.rsplit(":", 1)
    gateway = Gateway(
        upstream_host, int(upstream_port),
        listen_host=listen_host, listen_port=int(listen_port),
    )
    gateway.start()
    print(f"tunnel: {gateway.endpoint} -> tcp://{args.upstream}", flush=True)
    try:
        while True:
            time.sleep(1)
    except KeyboardInterrupt:
        gateway.stop()
    return EXIT_OK


def cmd_agent(args) -> int:
    session = _session(args)
    profile = _load_profile(args)
    identity = fixtures_mod.load_identity(profile["identityDir"], _passphrase(args))
    trust = sigcrypt.load_truststore(profile["trust"])
    agent = DeskAgent(
        session,
        identity.key("sign"),
        identity.cert("sign"),
        trust,
        listen_port=args.port,
        token=os.environ.get("AIDA_AGENT_TOKEN"),
        ui_dir=args.ui_dir,
    )
    agent.start()
    print(f"desk agent: {agent.base_url}", flush=True)
    print(f"session token: {agent.token}", flush=True)
    try:
        while True:
            time.sleep(1)
    except KeyboardInterrupt:
        agent.stop()
    return EXIT_OK


def cmd_fixtures(args) -> int:
    fixtures_mod.build_demo_fixtures(args.dir)
    print(f"fixtures written under {args.dir}")
    return EXIT_OK


def cmd_demo(args) -> int:
    from .demo import run_demo

    report = run_demo(args.dir, verbose=True)
    return EXIT_OK if report.ok else EXIT_ERROR


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_profile_flags(p) -> None:
    p.add_argument("--profile", help="profile XML with endpoint/identityDir/trust/defs")
    p.add_argument("--endpoint", help="tcp://host:port or http://host:port/aida/tunnel")
    p.add_argument("--identity-dir", help="directory with role.ks / role.cert.xml")
    p.add_argument("--trust", help="trust store file")
    p.add_argument("--passphrase-env", default=PASSPHRASE_ENV,
                   help=f"env var holding the key store passphrase (default {PASSPHRASE_ENV})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aida", description=__doc__)
    parser.add_argument("--xml", action="store_true", help="machine-readable canonical XML output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="create an encrypted key store")
    p.add_argument("--keystore", required=True)
    p.add_argument("--subject", required=True)
    p.add_argument("--passphrase-env", default=PASSPHRASE_ENV)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("cert-issue", help="issue a certificate")
    p.add_argument("--subject", required=True)
    p.add_argument("--subject-keystore")
    p.add_argument("--subject-key-hex")
    p.add_argument("--purposes", required=True, help="comma list: auth,sign,role,platform,issuer")
    p.add_argument("--days", type=int, default=365)
    p.add_argument("--serial", type=int, required=True)
    p.add_argument("--extension", action="append", default=[], help="name=value")
    p.add_argument("--issuer-keystore")
    p.add_argument("--issuer-cert")
    p.add_argument("--self-signed", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--passphrase-env", default=PASSPHRASE_ENV)
    p.set_defaults(func=cmd_cert_issue)

    p = sub.add_parser("doc-create", help="assemble an unsigned draft from field values")
    p.add_argument("--defs", required=True)
    p.add_argument("--type", required=True)
    p.add_argument("--version", type=int, default=1)
    p.add_argument("--field", action="append", default=[], help="path=value")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_doc_create)

    p = sub.add_parser("doc-view", help="render a document through the trusted display")
    p.add_argument("file")
    p.add_argument("--defs", required=True)
    p.add_argument("--trust")
    p.set_defaults(func=cmd_doc_view)

    p = sub.add_parser("doc-sign", help="render, then sign exactly the rendered bytes")
    p.add_argument("file")
    p.add_argument("--defs", required=True)
    p.add_argument("--keystore", required=True)
    p.add_argument("--cert", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--passphrase-env", default=PASSPHRASE_ENV)
    p.set_defaults(func=cmd_doc_sign)

    p = sub.add_parser("doc-verify", help="verify a signed document and show the form")
    p.add_argument("file")
    p.add_argument("--defs", required=True)
    p.add_argument("--trust", required=True)
    p.add_argument("--at")
    p.set_defaults(func=cmd_doc_verify)

    p = sub.add_parser("submit", help="store a signed document on the platform")
    p.add_argument("file")
    _add_profile_flags(p)
    p.set_defaults(func=cmd_submit)

    p = sub.add_parser("search", help="search stored documents")
    p.add_argument("--type", required=True)
    p.add_argument("--attr", action="append", default=[], help="name=value")
    p.add_argument("--field", action="append", default=[], help="path=value")
    _add_profile_flags(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("set-status", help="move a document through its lifecycle")
    p.add_argument("doc_id")
    p.add_argument("status")
    _add_profile_flags(p)
    p.set_defaults(func=cmd_set_status)

    p = sub.add_parser("revoke", help="revoke a stored document")
    p.add_argument("doc_id")
    p.add_argument("--reason", default="")
    _add_profile_flags(p)
    p.set_defaults(func=cmd_revoke)

    p = sub.add_parser("validate", help="full validity report for a document")
    p.add_argument("doc_id", nargs="?")
    p.add_argument("--file")
    p.add_argument("--at")
    _add_profile_flags(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("admin", help="administration commands (admin port)")
    admin_sub = p.add_subparsers(dest="admin_cmd", required=True)
    q = admin_sub.add_parser("put-def")
    q.add_argument("bundle_dir")
    _add_profile_flags(q)
    q.set_defaults(func=cmd_admin)
    q = admin_sub.add_parser("set-rolemap")
    q.add_argument("file")
    _add_profile_flags(q)
    q.set_defaults(func=cmd_admin)
    q = admin_sub.add_parser("port")
    q.add_argument("port_name", choices=("scenario", "service", "admin"))
    q.add_argument("action", choices=("start", "stop"))
    _add_profile_flags(q)
    q.set_defaults(func=cmd_admin)
    q = admin_sub.add_parser("log")
    q.add_argument("--from", dest="from_seq", type=int)
    q.add_argument("--to", dest="to_seq", type=int)
    _add_profile_flags(q)
    q.set_defaults(func=cmd_admin)

    p = sub.add_parser("platform", help="run the platform server")
    p.add_argument("--data-root")
    p.add_argument("--passphrase-env", default=PASSPHRASE_ENV)
    p.set_defaults(func=cmd_platform)

    p = sub.add_parser("gateway", help="run the HTTP tunnel gateway")
    p.add_argument("--listen", required=True, help="host:port")
    p.add_argument("--upstream", required=True, help="host:port of a platform port")
    p.set_defaults(func=cmd_gateway)

    p = sub.add_parser("agent", help="run the desk agent for the referent UI")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--ui-dir")
    _add_profile_flags(p)
    p.set_defaults(func=cmd_agent)

    p = sub.add_parser("fixtures", help="materialize the demo fixture tree")
    p.add_argument("--dir", required=True)
    p.set_defaults(func=cmd_fixtures)

    p = sub.add_parser("demo", help="run the full exam-admission demo")
    p.add_argument("--dir", help="working directory (default: temporary)")
    p.set_defaults(func=cmd_demo)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DisplayError, XmlError, EdocError) as exc:
        print(f"refused: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except PlatformRefused as exc:
        print(f"platform: {exc}", file=sys.stderr)
        return EXIT_PLATFORM
    except (ProtocolError, ConnectionError) as exc:
        print(f"connection: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONNECTION
    except sigcrypt.SigError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except eas.EasError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
