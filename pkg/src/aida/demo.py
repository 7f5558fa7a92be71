"""One-command exam-admission demo.

Builds fixtures, starts a platform and a gateway, admits three students
(pending cards, 42-day validity), lets the professor process them
through the gateway (tickets issued, cards processed), verifies all
receipts, shows the expiry check failing at day 43, restarts the
platform and re-verifies every stored byte and the log numbering.
"""

from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass, field
from datetime import timedelta
from pathlib import Path

from . import fixtures, sigcrypt
from .aplatform import Platform, init_data_root
from .aprotocol import Gateway, PlatformClient
from .clock import parse_ts, utcnow
from .eas import AdmissionService, ExamProcessor, RegistryStub, check_admission, load_usermap
from .session import Session
from .xmlcore import find_text

DEMO_EXAM = "01ABC"
DEMO_STUDENT_IDS = ("s1000001", "s1000002", "s1000003")

DEMO_MARKS = {
    "s1000001": {"eEET/exam/date": "2026-06-10", "eEET/exam/mark": "28",
                 "eEET/exam/questions": "canonical forms; replay defenses"},
    "s1000002": {"eEET/exam/date": "2026-06-10", "eEET/exam/mark": "30L",
                 "eEET/exam/questions": "certificate chains"},
    "s1000003": {"eEET/exam/date": "2026-06-10", "eEET/exam/mark": "24",
                 "eEET/exam/questions": "trusted display"},
}


@dataclass
class DemoReport:
    ok: bool = False
    admitted: dict = field(default_factory=dict)       # student id -> eEAC doc id
    issued: dict = field(default_factory=dict)         # student id -> eEET doc id
    receipts_verified: int = 0
    validity_days: int = 0
    expired_check_failed_as_expected: bool = False
    admission_check_ok: bool = False
    integrity_ok: bool = False
    log_gapless: bool = False
    elapsed_seconds: float = 0.0
    lines: list = field(default_factory=list)


def run_demo(base_dir=None, *, verbose: bool = False) -> DemoReport:
    started = time.monotonic()
    report = DemoReport()

    def note(line: str) -> None:
        report.lines.append(line)
        if verbose:
            print(line, flush=True)

    base = Path(base_dir) if base_dir else Path(tempfile.mkdtemp(prefix="aida-demo-"))
    base.mkdir(parents=True, exist_ok=True)
    note(f"demo directory: {base}")

    fx = fixtures.build_demo_fixtures(base / "fixtures", passphrase=fixtures.DEMO_PASSPHRASE)
    note("fixtures built: identities, definitions, role map, registry, attack corpus")

    data_root = init_data_root(base / "data", fx.root)
    platform = Platform(data_root, passphrase=fixtures.DEMO_PASSPHRASE)
    platform.start()
    gateway = Gateway("127.0.0.1", platform.port_number("scenario"))
    gateway.start()
    note(f"platform up: scenario={platform.endpoint('scenario')} "
         f"service={platform.endpoint('service')} admin={platform.endpoint('admin')}")
    note(f"gateway up: {gateway.endpoint}")

    try:
        trust = fx.trust
        registry = RegistryStub.load(fx.root / "registry.xml")
        usermap = load_usermap(fx.root / "usermap.xml")

        def session_for(name: str, endpoint: str) -> Session:
            identity = fixtures.load_identity(
                fx.root / "identities" / name, fixtures.DEMO_PASSPHRASE
            )
            return Session(PlatformClient(endpoint, trust), identity.key("role"),
                           identity.cert("role"))

        sso_identity = fixtures.load_identity(
            fx.root / "identities" / "sso", fixtures.DEMO_PASSPHRASE
        )
        admissions = AdmissionService(
            session_for("sso", platform.endpoint("scenario")),
            sso_identity.key("sign"), sso_identity.cert("sign"), registry, usermap,
        )
        for student_id in DEMO_STUDENT_IDS:
            auth_digest = (
                fixtures.load_identity(fx.root / "identities" / student_id,
                                       fixtures.DEMO_PASSPHRASE)
                .cert("auth").key_digest()
            )
            result = admissions.request_admission(auth_digest, DEMO_EXAM)
            report.admitted[student_id] = result.doc_id
            record = platform.records[result.doc_id]
            nb = parse_ts(find_text(record.doc.content, "eEAC/validity/notBefore"))
            na = parse_ts(find_text(record.doc.content, "eEAC/validity/notAfter"))
            report.validity_days = (na - nb).days
            if sigcrypt.verify_envelope(result.receipt, trust).fully_valid:
                report.receipts_verified += 1
            note(f"admitted {student_id}: {result.doc_id[:16]}... "
                 f"status={record.attrs.status} validity={report.validity_days}d")

        prof_identity = fixtures.load_identity(
            fx.root / "identities" / "prof-rossi", fixtures.DEMO_PASSPHRASE
        )
        professor = ExamProcessor(
            session_for("prof-rossi", gateway.endpoint),
            prof_identity.key("sign"), prof_identity.cert("sign"), registry,
            outbox=base / "outbox",
        )
        outcome = professor.process_exam(DEMO_EXAM, DEMO_MARKS)
        for item in outcome.items:
            if item.ok:
                report.issued[item.student_id] = item.eeet_id
                receipt = platform.records[item.eeet_id].receipt
                if sigcrypt.verify_envelope(receipt, trust).fully_valid:
                    report.receipts_verified += 1
            note(f"processed {item.student_id}: ticket {item.eeet_id[:16]}... "
                 f"({'ok' if item.ok else item.error})")

        check = check_admission(
            professor.session, trust,
            student_id=DEMO_STUDENT_IDS[0], exam_code=DEMO_EXAM,
        )
        report.admission_check_ok = check.report.valid and not check.admissible
        note(f"admission re-check after processing: valid={check.report.valid} "
             f"admissible={check.admissible} (already processed)")

        late = utcnow() + timedelta(days=43)
        late_report = professor.session.validate(
            report.admitted[DEMO_STUDENT_IDS[0]], at=late
        )
        report.expired_check_failed_as_expected = (
            late_report.within_validity_period == "fail" and not late_report.valid
        )
        note(f"validity at +43 days: within-period={late_report.within_validity_period} "
             f"valid={late_report.valid}")
    finally:
        gateway.stop()
        platform.stop()

    reborn = Platform(data_root, passphrase=fixtures.DEMO_PASSPHRASE)
    integrity = reborn.verify_integrity()
    report.integrity_ok = integrity.ok
    report.log_gapless = all(e.seq == i for i, e in enumerate(reborn.log, start=1))
    note(f"restart: {integrity.doc_count} documents re-verified, "
         f"log entries={integrity.log_length} gapless={report.log_gapless}")

    report.elapsed_seconds = time.monotonic() - started
    report.ok = (
        len(report.admitted) == 3
        and len(report.issued) == 3
        and report.receipts_verified == 6
        and report.validity_days == 42
        and report.expired_check_failed_as_expected
        and report.admission_check_ok
        and report.integrity_ok
        and report.log_gapless
    )
    note(f"demo {'PASSED' if report.ok else 'FAILED'} in {report.elapsed_seconds:.1f}s")
    return report
