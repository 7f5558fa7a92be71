from datetime import timedelta

import pytest

from aida import commands, edoc, eas, sigcrypt
from aida.clock import parse_ts, utcnow
from aida.eas import (
    AdmissionService,
    EasError,
    ExamProcessor,
    RegistryStub,
    check_admission,
    load_usermap,
)
from aida.session import PlatformRefused
from aida.xmlcore import find_text


@pytest.fixture()
def sso_service(env):
    sso = env.identity("sso")
    registry = RegistryStub.load(env.fixture_dir / "registry.xml")
    usermap = load_usermap(env.fixture_dir / "usermap.xml")
    return AdmissionService(
        env.session("sso"), sso.key("sign"), sso.cert("sign"), registry, usermap
    )


@pytest.fixture()
def professor(env, tmp_path):
    prof = env.identity("prof-rossi")
    registry = RegistryStub.load(env.fixture_dir / "registry.xml")
    return ExamProcessor(
        env.session("prof-rossi"), prof.key("sign"), prof.cert("sign"), registry,
        outbox=tmp_path / "outbox",
    )


def _auth_digest(env, student_id):
    return env.identity(student_id).cert("auth").key_digest()


MARKS = {
    "s1000001": {"eEET/exam/date": "2026-06-10", "eEET/exam/mark": "28",
                 "eEET/exam/questions": "routing; signatures"},
    "s1000002": {"eEET/exam/date": "2026-06-10", "eEET/exam/mark": "30L",
                 "eEET/exam/questions": "protocol design"},
    "s1000003": {"eEET/exam/date": "2026-06-10", "eEET/exam/mark": "21",
                 "eEET/exam/questions": "access control"},
}


def _admit_all(env, sso_service, students=("s1000001", "s1000002", "s1000003")):
    return {
        s: sso_service.request_admission(_auth_digest(env, s), "01ABC") for s in students
    }


def test_request_admission_eligible(env, sso_service):
    result = sso_service.request_admission(_auth_digest(env, "s1000001"), "01ABC")
    assert result.created
    record = env.platform.records[result.doc_id]
    assert record.attrs.status == "pending"
    nb = parse_ts(find_text(record.doc.content, "eEAC/validity/notBefore"))
    na = parse_ts(find_text(record.doc.content, "eEAC/validity/notAfter"))
    assert na - nb == timedelta(days=42)
    assert sigcrypt.verify_envelope(result.receipt, env.trust).fully_valid


def test_request_admission_payment_due(sso_service):
    sso_service.usermap["debtor-digest"] = "s1000004"
    with pytest.raises(EasError) as err:
        sso_service.request_admission("debtor-digest", "01ABC")
    assert err.value.code == eas.PAYMENT_DUE


def test_request_admission_not_enrolled(sso_service):
    sso_service.usermap["ghost-digest"] = "s1000005"
    with pytest.raises(EasError) as err:
        sso_service.request_admission("ghost-digest", "01ABC")
    assert err.value.code == eas.NOT_ENROLLED


def test_request_admission_no_rights(sso_service):
    sso_service.usermap["wrong-digest"] = "s1000006"
    with pytest.raises(EasError) as err:
        sso_service.request_admission("wrong-digest", "01ABC")
    assert err.value.code == eas.NO_EXAM_RIGHTS


def test_request_admission_unknown_exam(env, sso_service):
    with pytest.raises(EasError) as err:
        sso_service.request_admission(_auth_digest(env, "s1000001"), "99ZZZ")
    assert err.value.code == eas.UNKNOWN_EXAM


def test_request_admission_unknown_user(sso_service):
    with pytest.raises(EasError) as err:
        sso_service.request_admission("unmapped-digest", "01ABC")
    assert err.value.code == eas.UNKNOWN_USER


def test_duplicate_request_is_idempotent(env, sso_service):
    first = sso_service.request_admission(_auth_digest(env, "s1000001"), "01ABC")
    second = sso_service.request_admission(_auth_digest(env, "s1000001"), "01ABC")
    assert not second.created
    assert second.doc_id == first.doc_id
    assert len([r for r in env.platform.records.values()
                if r.doc.header.type_id == "eEAC"]) == 1


def test_process_exam_full_batch(env, sso_service, professor):
    admitted = _admit_all(env, sso_service)
    report = professor.process_exam("01ABC", MARKS)
    assert report.issued == 3
    for item in report.items:
        assert item.ok
        eeac = env.platform.records[item.eeac_id]
        eeet = env.platform.records[item.eeet_id]
        assert eeac.attrs.status == "processed"
        assert eeet.attrs.status == "issued"
        # provenance: student fields byte-equal between card and ticket
        for path in ("student/id", "student/name", "student/placeOfBirth"):
            assert find_text(eeet.doc.content, f"eEET/{path}") == find_text(
                eeac.doc.content, f"eEAC/{path}"
            )
        assert (professor.outbox / f"{item.eeet_id}.xml").exists()
    assert {i.eeac_id for i in report.items} == {r.doc_id for r in admitted.values()}


def test_process_exam_conservation(env, sso_service, professor):
    _admit_all(env, sso_service)
    professor.process_exam("01ABC", MARKS)
    professor.process_exam("01ABC", MARKS)  # second run sees nothing pending
    eeacs = [r for r in env.platform.records.values() if r.doc.header.type_id == "eEAC"]
    eeets = [r for r in env.platform.records.values() if r.doc.header.type_id == "eEET"]
    processed = [r for r in eeacs if r.attrs.status == "processed"]
    assert len(eeets) == len(processed) == 3


def test_process_exam_missing_mark_isolates_that_pair(env, sso_service, professor):
    _admit_all(env, sso_service)
    partial = {k: dict(v) for k, v in MARKS.items()}
    del partial["s1000002"]["eEET/exam/mark"]
    report = professor.process_exam("01ABC", partial)
    by_student = {i.student_id: i for i in report.items}
    assert not by_student["s1000002"].ok
    assert "Mark" in by_student["s1000002"].error
    assert by_student["s1000001"].ok and by_student["s1000003"].ok
    statuses = {
        find_text(r.doc.content, "eEAC/student/id"): r.attrs.status
        for r in env.platform.records.values()
        if r.doc.header.type_id == "eEAC"
    }
    assert statuses["s1000002"] == "pending"
    assert statuses["s1000001"] == statuses["s1000003"] == "processed"


def test_process_exam_not_responsible(env, sso_service):
    _admit_all(env, sso_service)
    verdi = env.identity("prof-verdi")
    registry = RegistryStub.load(env.fixture_dir / "registry.xml")
    interloper = ExamProcessor(
        env.session("prof-rossi"), verdi.key("sign"), verdi.cert("sign"), registry
    )
    with pytest.raises(EasError) as err:
        interloper.process_exam("01ABC", MARKS)
    assert err.value.code == eas.NOT_RESPONSIBLE


def test_process_exam_role_without_eeac_type_stores_nothing(env, sso_service, professor):
    from aida.aplatform import RoleEntry

    _admit_all(env, sso_service)
    admin = env.session("admin", port="admin")
    entries = dict(env.platform.role_map)
    prof_key = env.identity("prof-rossi").cert("role").key_digest()
    entries[prof_key] = RoleEntry(
        label="professor",
        commands=entries[prof_key].commands,
        edoc_types=frozenset({"eEET"}),
    )
    admin.set_role_map(entries)
    before = set(env.platform.records)
    with pytest.raises(PlatformRefused) as err:
        professor.process_exam("01ABC", MARKS)
    assert err.value.status == commands.DENIED_DOCTYPE
    assert set(env.platform.records) == before


def test_authorization_isolation_professor_cannot_admin(env):
    prof = env.session("prof-rossi", port="admin")
    with pytest.raises(PlatformRefused) as err:
        prof.get_log()
    assert err.value.status == commands.DENIED_COMMAND
    with pytest.raises(PlatformRefused) as err:
        prof.set_role_map({})
    assert err.value.status == commands.DENIED_COMMAND


def test_check_admission_lookup_pending(env, sso_service, professor):
    _admit_all(env, sso_service, students=("s1000001",))
    result = check_admission(
        professor.session, env.trust, student_id="s1000001", exam_code="01ABC"
    )
    assert result.admissible
    assert result.report.valid
    assert "Signature: VALID" in result.form.header_lines


def test_check_admission_file_and_lookup_agree(env, sso_service, professor):
    admitted = _admit_all(env, sso_service, students=("s1000001",))["s1000001"]
    file_bytes = edoc.edoc_to_bytes(env.platform.records[admitted.doc_id].doc)
    by_file = check_admission(professor.session, env.trust, file_bytes=file_bytes)
    by_lookup = check_admission(
        professor.session, env.trust, student_id="s1000001", exam_code="01ABC"
    )
    assert by_file.doc_id == by_lookup.doc_id
    assert by_file.report == by_lookup.report
    assert by_file.admissible and by_lookup.admissible


def test_check_admission_expired(env, sso_service, professor):
    admitted = _admit_all(env, sso_service, students=("s1000001",))["s1000001"]
    late = utcnow() + timedelta(days=43)
    result = check_admission(
        professor.session, env.trust, student_id="s1000001", exam_code="01ABC", at=late
    )
    assert result.report.within_validity_period == "fail"
    assert not result.admissible
    assert admitted.doc_id == result.doc_id


def test_check_admission_processed_card_not_admissible(env, sso_service, professor):
    _admit_all(env, sso_service, students=("s1000001",))
    professor.process_exam("01ABC", {"s1000001": MARKS["s1000001"]})
    result = check_admission(
        professor.session, env.trust, student_id="s1000001", exam_code="01ABC"
    )
    assert result.report.valid  # the card itself is intact
    assert not result.admissible  # but no longer pending


def test_registry_stub_loads_fixture(env):
    registry = RegistryStub.load(env.fixture_dir / "registry.xml")
    assert registry.students["s1000001"]["enrolled"]
    assert registry.exams["01ABC"]["professorId"] == "prof-rossi"
    assert "01ABC" in registry.students["s1000001"]["examRights"]
