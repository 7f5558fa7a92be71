"""Exam admission service: the student and professor workflows on top of
the platform, with a stub registry standing in for the student records
system.

The admission side checks enrollment, exam rights and payments against
the registry, then assembles, renders, signs and stores an admission
card valid for the whole exam session. The professor side turns each
pending admission card into an evaluation ticket: processing rules copy
the student data, the professor fills date, mark and questions, the
rendered draft is signed and stored, and the source card is marked
processed. The status claim happens before the ticket is stored, so a
concurrent session loses the compare-and-set and leaves the pair
untouched.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import timedelta
from pathlib import Path

from . import edoc as edoc_mod, wysiwys
from .bundles import DefinitionBundle
from .clock import Clock, utcnow
from .edoc import EDoc, ManualFieldMissing, ValidityReport
from .fixtures import ADMISSION_VALIDITY_DAYS, eeac_field_values
from .session import PlatformRefused, SearchHit, Session
from .sigcrypt import MiniCert, PrivateKey, SignedDoc
from .wysiwys import DisplayForm
from .xmlcore import element_text, find_one, find_text, parse


class EasError(Exception):
    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code


NOT_ENROLLED = "NOT_ENROLLED"
NO_EXAM_RIGHTS = "NO_EXAM_RIGHTS"
PAYMENT_DUE = "PAYMENT_DUE"
UNKNOWN_EXAM = "UNKNOWN_EXAM"
UNKNOWN_USER = "UNKNOWN_USER"
NOT_RESPONSIBLE = "NOT_RESPONSIBLE"


# ---------------------------------------------------------------------------
# Registry stub
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegistryStub:
    students: dict[str, dict]
    exams: dict[str, dict]

    @classmethod
    def load(cls, path) -> "RegistryStub":
        root = parse(Path(path).read_bytes())
        students = {}
        for s in (find_one(root, "registry/students") or _EMPTY).children:
            if s.kind != "element":
                continue
            rights_el = find_one(s, "student/examRights")
            students[find_text(s, "student/id") or ""] = {
                "id": find_text(s, "student/id") or "",
                "name": find_text(s, "student/name") or "",
                "placeOfBirth": find_text(s, "student/placeOfBirth") or "",
                "enrolled": find_text(s, "student/enrolled") == "true",
                "paymentsOk": find_text(s, "student/paymentsOk") == "true",
                "examRights": tuple(
                    element_text(c) for c in (rights_el.children if rights_el else ())
                    if c.kind == "element"
                ),
            }
        exams = {}
        for e in (find_one(root, "registry/exams") or _EMPTY).children:
            if e.kind != "element":
                continue
            exams[find_text(e, "exam/code") or ""] = {
                "code": find_text(e, "exam/code") or "",
                "name": find_text(e, "exam/name") or "",
                "faculty": find_text(e, "exam/faculty") or "",
                "professorId": find_text(e, "exam/professorId") or "",
            }
        return cls(students=students, exams=exams)


_EMPTY = parse(b"<none></none>")


def load_usermap(path) -> dict[str, str]:
    from .aplatform import usermap_from_element

    return usermap_from_element(parse(Path(path).read_bytes()))


# ---------------------------------------------------------------------------
# Student side: admission requests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdmissionResult:
    doc_id: str
    receipt: SignedDoc | None
    created: bool


class AdmissionService:
    """SSO-side service: transparent checks, then issue a signed card."""

    def __init__(self, session: Session, sign_key: PrivateKey, sign_cert: MiniCert,
                 registry: RegistryStub, usermap: dict[str, str], *, clock: Clock = utcnow):
        self.session = session
        self.sign_key = sign_key
        self.sign_cert = sign_cert
        self.registry = registry
        self.usermap = usermap
        self.clock = clock
        self._bundle: DefinitionBundle | None = None

    def _eeac_bundle(self) -> DefinitionBundle:
        if self._bundle is None:
            self._bundle = self.session.get_definition("eEAC")
        return self._bundle

    def resolve_student(self, auth_cert_or_digest) -> str:
        digest = (
            auth_cert_or_digest.key_digest()
            if isinstance(auth_cert_or_digest, MiniCert)
            else auth_cert_or_digest
        )
        student_id = self.usermap.get(digest)
        if student_id is None:
            raise EasError(UNKNOWN_USER, "certificate not mapped to a student")
        return student_id

    def request_admission(self, auth_identity, exam_code: str) -> AdmissionResult:
        student_id = self.resolve_student(auth_identity)
        exam = self.registry.exams.get(exam_code)
        if exam is None:
            raise EasError(UNKNOWN_EXAM, exam_code)
        student = self.registry.students.get(student_id)
        if student is None or not student["enrolled"]:
            raise EasError(NOT_ENROLLED, student_id)
        if exam_code not in student["examRights"]:
            raise EasError(NO_EXAM_RIGHTS, f"{student_id} has no right to {exam_code}")
        if not student["paymentsOk"]:
            raise EasError(PAYMENT_DUE, student_id)

        existing = self.session.search(
            "eEAC",
            attrs=[("status", "pending")],
            fields=[("eEAC/student/id", student_id), ("eEAC/exam/code", exam_code)],
        )
        if existing:
            return AdmissionResult(doc_id=existing[0].doc_id, receipt=None, created=False)

        bundle = self._eeac_bundle()
        now = self.clock()
        values = eeac_field_values(
            student, exam, now, now + timedelta(days=ADMISSION_VALIDITY_DAYS)
        )
        content = edoc_mod.assemble(bundle.typedef, values)
        draft = edoc_mod.new_unsigned(bundle.type_id, bundle.version, bundle.def_digest, content, at=now)
        signed, _form = wysiwys.sign_edoc(draft, bundle, self.sign_key, self.sign_cert, at=now)
        doc_id, receipt = self.session.store_edoc(signed)
        return AdmissionResult(doc_id=doc_id, receipt=receipt, created=True)


# ---------------------------------------------------------------------------
# Professor side: processing pending cards into evaluation tickets
# ---------------------------------------------------------------------------

def derive_ticket_draft(
    input_doc: EDoc,
    eeac_bundle: DefinitionBundle,
    eeet_bundle: DefinitionBundle,
    manual_values: dict[str, str],
    *,
    at=None,
) -> EDoc:
    """Unsigned evaluation ticket derived from an admission card."""
    if eeac_bundle.rules is None:
        raise EasError(UNKNOWN_EXAM, "admission card type has no processing rules")
    content = edoc_mod.apply_rules(eeac_bundle.rules, input_doc, manual_values, eeet_bundle.typedef)
    return edoc_mod.new_unsigned(
        eeet_bundle.type_id, eeet_bundle.version, eeet_bundle.def_digest, content, at=at or utcnow()
    )


def issue_ticket(session: Session, signed_ticket: EDoc, source_doc_id: str) -> tuple[str, SignedDoc]:
    """Claim the source card (compare-and-set to processed), then store the
    signed ticket. The claim runs first so concurrent sessions cannot
    double-issue; the loser sees the failed transition and stops."""
    session.set_status(source_doc_id, "processed")
    return session.store_edoc(signed_ticket)


@dataclass(frozen=True)
class ProcessedItem:
    eeac_id: str
    student_id: str
    ok: bool
    eeet_id: str = ""
    error: str = ""


@dataclass(frozen=True)
class ProcessReport:
    exam_code: str
    items: tuple[ProcessedItem, ...] = ()

    @property
    def issued(self) -> int:
        return sum(1 for i in self.items if i.ok)


class ExamProcessor:
    def __init__(self, session: Session, sign_key: PrivateKey, sign_cert: MiniCert,
                 registry: RegistryStub, *, clock: Clock = utcnow, outbox=None):
        self.session = session
        self.sign_key = sign_key
        self.sign_cert = sign_cert
        self.registry = registry
        self.clock = clock
        self.outbox = Path(outbox) if outbox else None

    def _check_responsibility(self, exam_code: str) -> dict:
        exam = self.registry.exams.get(exam_code)
        if exam is None:
            raise EasError(UNKNOWN_EXAM, exam_code)
        org_id = self.sign_cert.extension("orgId")
        if org_id != exam["professorId"]:
            raise EasError(
                NOT_RESPONSIBLE, f"{org_id!r} is not responsible for {exam_code}"
            )
        return exam

    def pending_cards(self, exam_code: str) -> list[SearchHit]:
        self._check_responsibility(exam_code)
        return self.session.search(
            "eEAC", attrs=[("status", "pending")], fields=[("eEAC/exam/code", exam_code)]
        )

    def process_exam(self, exam_code: str, manual_by_student: dict[str, dict[str, str]]) -> ProcessReport:
        self._check_responsibility(exam_code)
        eeac_bundle = self.session.get_definition("eEAC")
        eeet_bundle = self.session.get_definition("eEET")
        items: list[ProcessedItem] = []
        for hit in self.pending_cards(exam_code):
            student_id = next((v for _, p, v in hit.fields if p == "eEAC/student/id"), "")
            try:
                manual = manual_by_student.get(student_id, {})
                doc, _attrs, _rev = self.session.get_edoc(hit.doc_id)
                draft = derive_ticket_draft(
                    doc, eeac_bundle, eeet_bundle, manual, at=self.clock()
                )
                signed, _form = wysiwys.sign_edoc(
                    draft, eeet_bundle, self.sign_key, self.sign_cert, at=self.clock()
                )
                eeet_id, _receipt = issue_ticket(self.session, signed, hit.doc_id)
                if self.outbox is not None:
                    self.outbox.mkdir(parents=True, exist_ok=True)
                    (self.outbox / f"{eeet_id}.xml").write_bytes(edoc_mod.edoc_to_bytes(signed))
                items.append(ProcessedItem(hit.doc_id, student_id, True, eeet_id))
            except (ManualFieldMissing, edoc_mod.EdocError, wysiwys.DisplayError,
                    PlatformRefused) as exc:
                items.append(ProcessedItem(hit.doc_id, student_id, False, error=str(exc)))
        return ProcessReport(exam_code=exam_code, items=tuple(items))


# ---------------------------------------------------------------------------
# Checking an admission card (file or lookup)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CheckResult:
    doc_id: str
    report: ValidityReport
    form: DisplayForm
    admissible: bool

    def lines(self) -> tuple[str, ...]:
        verdict = "ADMISSIBLE" if self.admissible else "NOT ADMISSIBLE"
        return (f"Admission: {verdict}",) + tuple(self.form.serialize().splitlines())


def check_admission(
    session: Session,
    trust,
    *,
    file_bytes: bytes | None = None,
    student_id: str | None = None,
    exam_code: str | None = None,
    at=None,
) -> CheckResult:
    """Check a card brought on a file, or look it up on the platform.

    Both paths converge on the stored record when one exists, so they
    produce identical reports for the same document.
    """
    bundle = session.get_definition("eEAC")
    if file_bytes is not None:
        doc = edoc_mod.parse_edoc(file_bytes)
        doc_id = doc.header.doc_id
    else:
        if not (student_id and exam_code):
            raise EasError(UNKNOWN_USER, "lookup needs a student id and an exam code")
        hits = session.search(
            "eEAC",
            fields=[("eEAC/student/id", student_id), ("eEAC/exam/code", exam_code)],
        )
        if not hits:
            raise PlatformRefused("NOT_FOUND", f"no card for {student_id} / {exam_code}")
        pending = [h for h in hits if h.status == "pending"]
        doc_id = (pending[0] if pending else hits[-1]).doc_id
        doc = None

    attrs = revocation = None
    try:
        stored_doc, attrs, revocation = session.get_edoc(doc_id)
        doc = stored_doc
        report = session.validate(doc_id, at=at)
    except PlatformRefused as refusal:
        if refusal.status != "NOT_FOUND" or doc is None:
            raise
        report = session.validate(doc=doc, at=at)

    form, _local = wysiwys.verify_and_render(
        doc, bundle, trust, at=at, attributes=attrs, revocation=revocation
    )
    admissible = report.valid and (attrs is not None and attrs.status == "pending")
    return CheckResult(doc_id=doc_id, report=report, form=form, admissible=admissible)
