"""Demo fixture builder: exam-admission definitions, identities, trust,
role map, registry stub and the display-attack corpus.

Everything the one-command demo and the test suite need is generated
into a fixtures directory; key material is created fresh so digests and
certificates are always mutually consistent.
"""

from __future__ import annotations

from dataclasses import replace
from datetime import timedelta
from pathlib import Path

from . import sigcrypt
from .bundles import DefinitionBundle, save_bundle
from .clock import Clock, utcnow
from .commands import ADMIN_COMMANDS, USER_COMMANDS
from .edoc import CopyRule, ManualRule, ProcessingRules, TransitionTable
from .sigcrypt import MiniCert, PrivateKey, TrustStore
from .wysiwys import DisplayMapping, MappingEntry
from .xmlcore import ElementSpec, TypeDef, a_canon, elem, element_text, find_one, parse

DEMO_PASSPHRASE = "demo"

_TS_PATTERN = r"\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}Z"


# ---------------------------------------------------------------------------
# Exam-admission document definitions
# ---------------------------------------------------------------------------

def eeac_typedef() -> TypeDef:
    td = TypeDef(
        type_id="eEAC",
        version=1,
        root="eEAC",
        elements={
            "eEAC": ElementSpec(required=True, allowed_children=("student", "faculty", "exam", "validity", "remarks")),
            "eEAC/student": ElementSpec(required=True, allowed_children=("id", "name", "placeOfBirth")),
            "eEAC/student/id": ElementSpec(required=True, text_allowed=True, text_pattern=r"s[0-9]{6,7}"),
            "eEAC/student/name": ElementSpec(required=True, text_allowed=True, text_pattern=r".{1,120}"),
            "eEAC/student/placeOfBirth": ElementSpec(required=True, text_allowed=True, text_pattern=r".{1,120}"),
            "eEAC/faculty": ElementSpec(required=True, allowed_children=("name",)),
            "eEAC/faculty/name": ElementSpec(required=True, text_allowed=True, text_pattern=r".{1,120}"),
            "eEAC/exam": ElementSpec(required=True, allowed_children=("code", "name")),
            "eEAC/exam/code": ElementSpec(required=True, text_allowed=True, text_pattern=r"[0-9]{2}[A-Z]{3}"),
            "eEAC/exam/name": ElementSpec(required=True, text_allowed=True, text_pattern=r".{1,120}"),
            "eEAC/validity": ElementSpec(required=True, allowed_children=("notBefore", "notAfter")),
            "eEAC/validity/notBefore": ElementSpec(required=True, text_allowed=True, text_pattern=_TS_PATTERN),
            "eEAC/validity/notAfter": ElementSpec(required=True, text_allowed=True, text_pattern=_TS_PATTERN),
            # Optional free-text field deliberately left out of the display
            # mapping: any document carrying it is refused by the renderer.
            "eEAC/remarks": ElementSpec(text_allowed=True, text_pattern=r".{0,500}"),
        },
    )
    td.check()
    return td


def eeet_typedef() -> TypeDef:
    td = TypeDef(
        type_id="eEET",
        version=1,
        root="eEET",
        elements={
            "eEET": ElementSpec(required=True, allowed_children=("student", "faculty", "exam", "validity")),
            "eEET/student": ElementSpec(required=True, allowed_children=("id", "name", "placeOfBirth")),
            "eEET/student/id": ElementSpec(required=True, text_allowed=True, text_pattern=r"s[0-9]{6,7}"),
            "eEET/student/name": ElementSpec(required=True, text_allowed=True, text_pattern=r".{1,120}"),
            "eEET/student/placeOfBirth": ElementSpec(required=True, text_allowed=True, text_pattern=r".{1,120}"),
            "eEET/faculty": ElementSpec(required=True, allowed_children=("name",)),
            "eEET/faculty/name": ElementSpec(required=True, text_allowed=True, text_pattern=r".{1,120}"),
            "eEET/exam": ElementSpec(required=True, allowed_children=("code", "name", "date", "mark", "questions")),
            "eEET/exam/code": ElementSpec(required=True, text_allowed=True, text_pattern=r"[0-9]{2}[A-Z]{3}"),
            "eEET/exam/name": ElementSpec(required=True, text_allowed=True, text_pattern=r".{1,120}"),
            "eEET/exam/date": ElementSpec(required=True, text_allowed=True, text_pattern=r"\d{4}-\d{2}-\d{2}"),
            "eEET/exam/mark": ElementSpec(required=True, text_allowed=True, text_pattern=r"(1[89]|2[0-9]|30)L?|RIT"),
            "eEET/exam/questions": ElementSpec(required=True, text_allowed=True, text_pattern=r".{1,500}"),
            "eEET/validity": ElementSpec(required=True, allowed_children=("notBefore", "notAfter")),
            "eEET/validity/notBefore": ElementSpec(required=True, text_allowed=True, text_pattern=_TS_PATTERN),
            "eEET/validity/notAfter": ElementSpec(required=True, text_allowed=True, text_pattern=_TS_PATTERN),
        },
    )
    td.check()
    return td


def eeac_mapping() -> DisplayMapping:
    return DisplayMapping(
        entries=(
            MappingEntry("eEAC/student/id", "Student ID"),
            MappingEntry("eEAC/student/name", "Student name"),
            MappingEntry("eEAC/student/placeOfBirth", "Place of birth"),
            MappingEntry("eEAC/faculty/name", "Faculty"),
            MappingEntry("eEAC/exam/code", "Exam code"),
            MappingEntry("eEAC/exam/name", "Exam name"),
            MappingEntry("eEAC/validity/notBefore", "Valid from", "date"),
            MappingEntry("eEAC/validity/notAfter", "Valid until", "date"),
        )
    )


def eeet_mapping() -> DisplayMapping:
    return DisplayMapping(
        entries=(
            MappingEntry("eEET/student/id", "Student ID"),
            MappingEntry("eEET/student/name", "Student name"),
            MappingEntry("eEET/student/placeOfBirth", "Place of birth"),
            MappingEntry("eEET/faculty/name", "Faculty"),
            MappingEntry("eEET/exam/code", "Exam code"),
            MappingEntry("eEET/exam/name", "Exam name"),
            MappingEntry("eEET/exam/date", "Exam date", "date"),
            MappingEntry("eEET/exam/mark", "Mark"),
            MappingEntry("eEET/exam/questions", "Questions"),
            MappingEntry("eEET/validity/notBefore", "Valid from", "date"),
            MappingEntry("eEET/validity/notAfter", "Valid until", "date"),
        )
    )


def eeac_to_eeet_rules() -> ProcessingRules:
    copies = (
        ("eEAC/student/id", "eEET/student/id"),
        ("eEAC/student/name", "eEET/student/name"),
        ("eEAC/student/placeOfBirth", "eEET/student/placeOfBirth"),
        ("eEAC/faculty/name", "eEET/faculty/name"),
        ("eEAC/exam/code", "eEET/exam/code"),
        ("eEAC/exam/name", "eEET/exam/name"),
        ("eEAC/validity/notBefore", "eEET/validity/notBefore"),
        ("eEAC/validity/notAfter", "eEET/validity/notAfter"),
    )
    manual = (
        ("eEET/exam/date", "Exam date"),
        ("eEET/exam/mark", "Mark"),
        ("eEET/exam/questions", "Questions"),
    )
    return ProcessingRules(
        input_type="eEAC",
        output_type="eEET",
        rules=tuple(CopyRule(f, t) for f, t in copies) + tuple(ManualRule(t, l) for t, l in manual),
    )


def eeac_bundle() -> DefinitionBundle:
    return DefinitionBundle(
        typedef=eeac_typedef(),
        display=eeac_mapping(),
        rules=eeac_to_eeet_rules(),
        transitions=TransitionTable(frozenset({("pending", "processed"), ("pending", "revoked")})),
        initial_dynamic=(("status", "pending"),),
        static_attrs=(("docClass", "input"),),
        validity_paths=("eEAC/validity/notBefore", "eEAC/validity/notAfter"),
    )


def eeet_bundle() -> DefinitionBundle:
    return DefinitionBundle(
        typedef=eeet_typedef(),
        display=eeet_mapping(),
        rules=None,
        transitions=TransitionTable(frozenset({("issued", "revoked")})),
        initial_dynamic=(("status", "issued"),),
        static_attrs=(("docClass", "output"),),
        validity_paths=None,
    )


ADMISSION_VALIDITY_DAYS = 42


def eeac_field_values(student: dict, exam: dict, not_before, not_after) -> dict[str, str]:
    from .clock import fmt_ts

    return {
        "eEAC/student/id": student["id"],
        "eEAC/student/name": student["name"],
        "eEAC/student/placeOfBirth": student["placeOfBirth"],
        "eEAC/faculty/name": exam["faculty"],
        "eEAC/exam/code": exam["code"],
        "eEAC/exam/name": exam["name"],
        "eEAC/validity/notBefore": fmt_ts(not_before),
        "eEAC/validity/notAfter": fmt_ts(not_after),
    }


# ---------------------------------------------------------------------------
# Registry stub data
# ---------------------------------------------------------------------------

DEMO_STUDENTS = (
    {"id": "s1000001", "name": "Ada Bianchi", "placeOfBirth": "Torino",
     "enrolled": True, "paymentsOk": True, "examRights": ("01ABC", "02DEF")},
    {"id": "s1000002", "name": "Bruno Conti", "placeOfBirth": "Milano",
     "enrolled": True, "paymentsOk": True, "examRights": ("01ABC",)},
    {"id": "s1000003", "name": "Carla Degiorgi", "placeOfBirth": "Genova",
     "enrolled": True, "paymentsOk": True, "examRights": ("01ABC", "02DEF")},
    {"id": "s1000004", "name": "Dario Esposito", "placeOfBirth": "Napoli",
     "enrolled": True, "paymentsOk": False, "examRights": ("01ABC",)},
    {"id": "s1000005", "name": "Elena Fabbri", "placeOfBirth": "Bologna",
     "enrolled": False, "paymentsOk": True, "examRights": ("01ABC",)},
    {"id": "s1000006", "name": "Franco Galli", "placeOfBirth": "Roma",
     "enrolled": True, "paymentsOk": True, "examRights": ("02DEF",)},
)

DEMO_EXAMS = (
    {"code": "01ABC", "name": "Computer Security", "faculty": "Information Engineering",
     "professorId": "prof-rossi"},
    {"code": "02DEF", "name": "Operating Systems", "faculty": "Information Engineering",
     "professorId": "prof-verdi"},
)


def registry_to_element(students, exams) -> "XNode":
    def bool_str(b):
        return "true" if b else "false"

    student_els = [
        elem(
            "student",
            children=[
                elem("id", text=s["id"]),
                elem("name", text=s["name"]),
                elem("placeOfBirth", text=s["placeOfBirth"]),
                elem("enrolled", text=bool_str(s["enrolled"])),
                elem("paymentsOk", text=bool_str(s["paymentsOk"])),
                elem("examRights", children=[elem("c", text=c) for c in s["examRights"]]),
            ],
        )
        for s in students
    ]
    exam_els = [
        elem(
            "exam",
            children=[
                elem("code", text=e["code"]),
                elem("name", text=e["name"]),
                elem("faculty", text=e["faculty"]),
                elem("professorId", text=e["professorId"]),
            ],
        )
        for e in exams
    ]
    return elem(
        "registry",
        children=[elem("students", children=student_els), elem("exams", children=exam_els)],
    )


# ---------------------------------------------------------------------------
# Identities and trust
# ---------------------------------------------------------------------------

class Identity:
    """Key material of one actor: separate pairs per purpose."""

    def __init__(self, name: str):
        self.name = name
        self.keys: dict[str, PrivateKey] = {}
        self.certs: dict[str, MiniCert] = {}

    def key(self, purpose: str) -> PrivateKey:
        return self.keys[purpose]

    def cert(self, purpose: str) -> MiniCert:
        return self.certs[purpose]


def save_identity(directory, identity: Identity, passphrase: str) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for purpose, key in identity.keys.items():
        sigcrypt.save_keystore(directory / f"{purpose}.ks", key, identity.name, passphrase)
        sigcrypt.save_cert(directory / f"{purpose}.cert.xml", identity.certs[purpose])


def load_identity(directory, passphrase: str) -> Identity:
    directory = Path(directory)
    identity = Identity(directory.name)
    for ks in sorted(directory.glob("*.ks")):
        purpose = ks.stem
        identity.keys[purpose] = sigcrypt.load_keystore(ks, passphrase)
        identity.certs[purpose] = sigcrypt.load_cert(directory / f"{purpose}.cert.xml")
    return identity


# ---------------------------------------------------------------------------
# Role map fixture (serialization lives in aplatform; data defined here)
# ---------------------------------------------------------------------------

ALL_COMMANDS = ADMIN_COMMANDS | USER_COMMANDS


def demo_role_entries(identities: dict[str, Identity]) -> dict[str, dict]:
    def role_key(name):
        return identities[name].cert("role").key_digest()

    return {
        role_key("admin"): {
            "label": "admin",
            "commands": frozenset(ALL_COMMANDS),
            "edocTypes": frozenset({"eEAC", "eEET"}),
        },
        role_key("sso"): {
            "label": "sso",
            "commands": frozenset(
                {"CreateEdoc", "StoreEdoc", "GetEdoc", "SearchEdocs", "GetDefinition",
                 "ValidateEdoc", "Acknowledge"}
            ),
            "edocTypes": frozenset({"eEAC"}),
        },
        role_key("prof-rossi"): {
            "label": "professor",
            "commands": frozenset(
                {"SearchEdocs", "GetEdoc", "StoreEdoc", "SetAttribute", "GetDefinition",
                 "ValidateEdoc", "Acknowledge"}
            ),
            "edocTypes": frozenset({"eEAC", "eEET"}),
        },
        role_key("student-desk"): {
            "label": "student-desk",
            "commands": frozenset({"SearchEdocs", "ValidateEdoc", "GetDefinition"}),
            "edocTypes": frozenset({"eEAC"}),
        },
    }


# ---------------------------------------------------------------------------
# Attack corpus
# ---------------------------------------------------------------------------

def _unsigned_eeac_bytes(def_digest: str, values: dict[str, str], created_at) -> bytes:
    from .edoc import assemble, edoc_to_element, new_unsigned

    content = assemble(eeac_typedef(), values)
    doc = new_unsigned("eEAC", 1, def_digest, content, at=created_at)
    return a_canon(edoc_to_element(doc))


def build_attack_corpus(directory, *, clock: Clock = utcnow) -> list[tuple[str, str]]:
    """Write the display-attack corpus; returns (filename, expected error
    family) pairs. Every file must be refused by the render-to-sign path
    of every entry point."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    now = clock()
    digest = eeac_bundle().def_digest
    values = eeac_field_values(
        DEMO_STUDENTS[0], DEMO_EXAMS[0], now, now + timedelta(days=ADMISSION_VALIDITY_DAYS)
    )
    base = _unsigned_eeac_bytes(digest, values, now)
    assert b"<exam>" in base

    cases: list[tuple[str, bytes, str]] = []
    cases.append(
        ("comment.xml", base.replace(b"<exam>", b"<exam><!--do not show this-->"), "ForbiddenConstruct")
    )
    cases.append(
        ("procinst.xml", base.replace(b"<exam>", b"<exam><?app run-macro?>"), "ForbiddenConstruct")
    )
    cases.append(("doctype.xml", b"<!DOCTYPE edoc [<!ENTITY x 'y'>]>" + base, "ForbiddenConstruct"))
    cases.append(
        ("unknown-element.xml", base.replace(b"</student>", b"<ssn>123-45-6789</ssn></student>"),
         "StructureInvalid")
    )
    remarks = _unsigned_eeac_bytes(
        digest, dict(values, **{"eEAC/remarks": "payable to bearer"}), now
    )
    cases.append(("unmapped-path.xml", remarks, "Unmapped"))
    cases.append(
        ("zero-width.xml", base.replace(b"Ada Bianchi", "Ada​Bianchi".encode("utf-8")),
         "ForbiddenChar")
    )
    cases.append(
        ("bidi-override.xml",
         base.replace(b"Computer Security", "Computer ‮ytiruceS".encode("utf-8")),
         "ForbiddenChar")
    )
    stale = _unsigned_eeac_bytes("0" * 64, values, now)
    cases.append(("def-mismatch.xml", stale, "DefinitionMismatch"))

    manifest_children = []
    for filename, data, expected in cases:
        (directory / filename).write_bytes(data)
        manifest_children.append(
            elem("case", children=[elem("file", text=filename), elem("expect", text=expected)])
        )
    (directory / "manifest.xml").write_bytes(
        a_canon(elem("attackCorpus", children=manifest_children))
    )
    return [(f, e) for f, _, e in cases]


def load_attack_manifest(directory) -> list[tuple[str, str]]:
    root = parse((Path(directory) / "manifest.xml").read_bytes())
    out = []
    for case in root.children:
        if case.kind != "element":
            continue
        file_el = find_one(case, "case/file")
        expect_el = find_one(case, "case/expect")
        out.append((element_text(file_el), element_text(expect_el)))
    return out


# ---------------------------------------------------------------------------
# Full fixture tree
# ---------------------------------------------------------------------------

class FixtureSet:
    def __init__(self, root: Path, identities: dict[str, Identity], trust: TrustStore):
        self.root = root
        self.identities = identities
        self.trust = trust

    @property
    def defs_dir(self) -> Path:
        return self.root / "defs"

    @property
    def trust_path(self) -> Path:
        return self.root / "trust.xml"


def build_demo_fixtures(root, *, clock: Clock = utcnow, passphrase: str = DEMO_PASSPHRASE) -> FixtureSet:
    """Materialize the whole fixture tree used by the demo and the tests."""
    from .aplatform import rolemap_to_element, usermap_to_element

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    now = clock()
    nb, na = now - timedelta(days=1), now + timedelta(days=3650)

    root_ca_key, _ = sigcrypt.keygen()
    root_ca = sigcrypt.make_anchor("Root CA", root_ca_key, not_before=nb, not_after=na)
    role_ca_key, _ = sigcrypt.keygen()
    role_ca = sigcrypt.make_anchor("Role CA", role_ca_key, not_before=nb, not_after=na, serial=2)
    trust = TrustStore(anchors=(root_ca, role_ca))
    sigcrypt.save_truststore(root / "trust.xml", trust)

    serial = 10

    def issue(subject, purposes, *, role_chain=False, extensions=()):
        nonlocal serial
        serial += 1
        key, _ = sigcrypt.keygen()
        body = sigcrypt.make_cert_body(
            subject=subject,
            subject_key=key.public_bytes(),
            purposes=purposes,
            not_before=nb,
            not_after=na,
            issuer=(role_ca if role_chain else root_ca).subject,
            serial=serial,
            extensions=extensions,
        )
        cert = sigcrypt.issue_cert(
            body,
            role_ca_key if role_chain else root_ca_key,
            role_ca if role_chain else root_ca,
            at=now,
        )
        return key, cert

    def make_identity(name, purposes_map, extensions=()):
        identity = Identity(name)
        for purpose, role_chain in purposes_map.items():
            key, cert = issue(name, (purpose,), role_chain=role_chain, extensions=extensions)
            identity.keys[purpose] = key
            identity.certs[purpose] = cert
        save_identity(root / "identities" / name, identity, passphrase)
        return identity

    identities: dict[str, Identity] = {}
    platform = Identity("platform")
    key, cert = issue("platform", ("platform", "sign"))
    platform.keys["platform"] = key
    platform.certs["platform"] = cert
    save_identity(root / "identities" / "platform", platform, passphrase)
    identities["platform"] = platform

    identities["admin"] = make_identity("admin", {"role": True})
    identities["sso"] = make_identity("sso", {"sign": False, "role": True}, (("orgId", "sso-office"),))
    identities["prof-rossi"] = make_identity(
        "prof-rossi", {"sign": False, "role": True}, (("orgId", "prof-rossi"),)
    )
    identities["prof-verdi"] = make_identity(
        "prof-verdi", {"sign": False, "role": True}, (("orgId", "prof-verdi"),)
    )
    identities["student-desk"] = make_identity("student-desk", {"role": True})
    for student in DEMO_STUDENTS[:3]:
        identities[student["id"]] = make_identity(
            student["id"], {"auth": False}, (("orgId", student["id"]),)
        )

    save_bundle(root / "defs" / "eEAC" / "1", eeac_bundle())
    save_bundle(root / "defs" / "eEET" / "1", eeet_bundle())

    (root / "rolemap.xml").write_bytes(a_canon(rolemap_to_element(demo_role_entries(identities))))
    usermap = {
        identities[s["id"]].cert("auth").key_digest(): s["id"] for s in DEMO_STUDENTS[:3]
    }
    (root / "usermap.xml").write_bytes(a_canon(usermap_to_element(usermap)))
    (root / "registry.xml").write_bytes(a_canon(registry_to_element(DEMO_STUDENTS, DEMO_EXAMS)))

    build_attack_corpus(root / "attacks", clock=clock)
    return FixtureSet(root=root, identities=identities, trust=trust)
