from dataclasses import replace
from datetime import timedelta

import pytest

from aida import edoc, fixtures, sigcrypt
from aida.edoc import (
    AttributeSet,
    IllegalTransition,
    InputTypeMismatch,
    ManualFieldMissing,
    MissingField,
    PatternViolation,
    TransitionTable,
    UnknownField,
    apply_rules,
    assemble,
    transition_status,
    validate_edoc,
)
from aida.xmlcore import a_canon, find_text, parse, validate_structure

from conftest import T0

VALID_DAYS = timedelta(days=fixtures.ADMISSION_VALIDITY_DAYS)


def eeac_values(**overrides):
    values = fixtures.eeac_field_values(
        fixtures.DEMO_STUDENTS[0], fixtures.DEMO_EXAMS[0], T0, T0 + VALID_DAYS
    )
    values.update(overrides)
    return values


@pytest.fixture(scope="module")
def bundle():
    return fixtures.eeac_bundle()


@pytest.fixture(scope="module")
def out_bundle():
    return fixtures.eeet_bundle()


@pytest.fixture(scope="module")
def signed_eeac(pki, bundle):
    key, cert = pki.issue("SSO Office", ("sign",))
    content = assemble(bundle.typedef, eeac_values())
    doc = edoc.new_unsigned("eEAC", 1, bundle.def_digest, content, at=T0)
    block = sigcrypt.sign_envelope(content, key, cert, "sign", at=T0).signature
    return edoc.finalize_signed(doc, block)


def test_assemble_valid_eeac(bundle):
    content = assemble(bundle.typedef, eeac_values())
    assert validate_structure(content, bundle.typedef).ok
    assert find_text(content, "eEAC/student/id") == "s1000001"
    assert find_text(content, "eEAC/exam/code") == "01ABC"


def test_assemble_missing_field(bundle):
    values = eeac_values()
    del values["eEAC/exam/code"]
    with pytest.raises(MissingField):
        assemble(bundle.typedef, values)


def test_assemble_unknown_field(bundle):
    with pytest.raises(UnknownField):
        assemble(bundle.typedef, eeac_values(**{"eEAC/student/ssn": "123"}))


def test_assemble_pattern_violation(bundle):
    with pytest.raises(PatternViolation):
        assemble(bundle.typedef, eeac_values(**{"eEAC/exam/code": "nope"}))


def test_assemble_skips_optional_paths(bundle):
    content = assemble(bundle.typedef, eeac_values())
    assert find_text(content, "eEAC/remarks") is None
    with_remarks = assemble(bundle.typedef, eeac_values(**{"eEAC/remarks": "left out"}))
    assert find_text(with_remarks, "eEAC/remarks") == "left out"


MANUAL = {
    "eEET/exam/date": "2026-06-10",
    "eEET/exam/mark": "28",
    "eEET/exam/questions": "q1 q2",
}


def test_apply_rules_builds_eeet_draft(bundle, out_bundle, signed_eeac):
    draft = apply_rules(bundle.rules, signed_eeac, dict(MANUAL), out_bundle.typedef)
    assert validate_structure(draft, out_bundle.typedef).ok
    # provenance: every copied field byte-equals its source
    for rule in bundle.rules.rules:
        if isinstance(rule, edoc.CopyRule):
            assert find_text(draft, rule.to_path) == find_text(signed_eeac.content, rule.from_path)
    assert find_text(draft, "eEET/exam/mark") == "28"


def test_apply_rules_manual_missing(bundle, out_bundle, signed_eeac):
    partial = {k: v for k, v in MANUAL.items() if k != "eEET/exam/mark"}
    with pytest.raises(ManualFieldMissing) as err:
        apply_rules(bundle.rules, signed_eeac, partial, out_bundle.typedef)
    assert err.value.label == "Mark"


def test_apply_rules_input_type_mismatch(bundle, out_bundle, signed_eeac):
    wrong = replace(signed_eeac, header=replace(signed_eeac.header, type_id="eEET"))
    with pytest.raises(InputTypeMismatch):
        apply_rules(bundle.rules, wrong, dict(MANUAL), out_bundle.typedef)


def test_apply_rules_rejects_stray_manual_value(bundle, out_bundle, signed_eeac):
    values = dict(MANUAL, **{"eEET/student/id": "s9999999"})
    with pytest.raises(UnknownField):
        apply_rules(bundle.rules, signed_eeac, values, out_bundle.typedef)


def test_apply_rules_output_provenance_is_total(bundle, out_bundle, signed_eeac):
    draft = apply_rules(bundle.rules, signed_eeac, dict(MANUAL), out_bundle.typedef)
    by_target = {}
    for rule in bundle.rules.rules:
        if isinstance(rule, edoc.CopyRule):
            by_target[rule.to_path] = find_text(signed_eeac.content, rule.from_path)
        elif isinstance(rule, edoc.ConstRule):
            by_target[rule.to_path] = rule.value
        else:
            by_target[rule.to_path] = MANUAL[rule.to_path]
    from aida.xmlcore import text_instances

    for path, value in text_instances(draft):
        assert by_target[path] == value


def test_const_rule_applies():
    from aida.xmlcore import ElementSpec, TypeDef

    src_def = TypeDef(
        "src", 1, "src",
        {"src": ElementSpec(required=True, allowed_children=("a",)),
         "src/a": ElementSpec(required=True, text_allowed=True)},
    )
    dst_def = TypeDef(
        "dst", 1, "dst",
        {"dst": ElementSpec(required=True, allowed_children=("a", "b")),
         "dst/a": ElementSpec(required=True, text_allowed=True),
         "dst/b": ElementSpec(required=True, text_allowed=True)},
    )
    rules = edoc.ProcessingRules(
        "src", "dst",
        (edoc.CopyRule("src/a", "dst/a"), edoc.ConstRule("dst/b", "fixed")),
    )
    edoc.check_rules(rules, src_def, dst_def)
    src = edoc.new_unsigned("src", 1, "d" * 64, assemble(src_def, {"src/a": "x"}), at=T0)
    draft = apply_rules(rules, src, {}, dst_def)
    assert find_text(draft, "dst/b") == "fixed"


EEAC_TABLE = TransitionTable(frozenset({("pending", "processed"), ("pending", "revoked")}))


def test_transition_pending_to_processed():
    attrs = AttributeSet(dynamic=(("status", "pending"), ("note", "n")))
    moved = transition_status(attrs, "processed", EEAC_TABLE)
    assert moved.status == "processed"
    assert moved.get("note") == "n"


def test_transition_reverse_is_illegal():
    attrs = AttributeSet(dynamic=(("status", "processed"),))
    with pytest.raises(IllegalTransition):
        transition_status(attrs, "pending", EEAC_TABLE)


def test_transition_pending_to_revoked():
    attrs = AttributeSet(dynamic=(("status", "pending"),))
    assert transition_status(attrs, "revoked", EEAC_TABLE).status == "revoked"


def test_transition_table_is_acyclic_by_exhaustion():
    # brute-force: no sequence of allowed transitions revisits a state
    for table in (EEAC_TABLE, TransitionTable(frozenset({("issued", "revoked")}))):
        for start in table.states():
            frontier = [(start, {start})]
            while frontier:
                state, seen = frontier.pop()
                for frm, to in table.edges:
                    if frm != state:
                        continue
                    assert to not in seen, f"cycle through {to}"
                    frontier.append((to, seen | {to}))


def test_edoc_xml_round_trip(signed_eeac):
    data = edoc.edoc_to_bytes(signed_eeac)
    again = edoc.parse_edoc(data)
    assert again == signed_eeac
    assert edoc.compute_doc_id(again) == signed_eeac.header.doc_id


def test_doc_id_stability(signed_eeac):
    data = edoc.edoc_to_bytes(signed_eeac)
    assert edoc.compute_doc_id(edoc.parse_edoc(data)) == signed_eeac.header.doc_id
    tampered = data.replace(b"Ada", b"Eva")
    assert edoc.compute_doc_id(edoc.parse_edoc(tampered)) != signed_eeac.header.doc_id


def test_validate_edoc_fresh_doc_passes(pki, bundle, signed_eeac):
    report = validate_edoc(
        signed_eeac, bundle=bundle, trust=pki.trust, at=T0 + timedelta(days=1),
        attributes=AttributeSet(dynamic=(("status", "pending"),)),
    )
    assert report.valid
    assert report.within_validity_period == "ok"


def test_validate_edoc_expired_window(pki, bundle, signed_eeac):
    report = validate_edoc(
        signed_eeac, bundle=bundle, trust=pki.trust, at=T0 + timedelta(days=43)
    )
    assert report.within_validity_period == "fail"
    assert not report.valid


def test_validate_edoc_revoked(pki, bundle, signed_eeac):
    platform_key, platform_cert = pki.issue("platform", ("platform", "sign"))
    record = edoc.make_revocation(
        signed_eeac.header.doc_id, "issued in error", platform_key, platform_cert, at=T0
    )
    report = validate_edoc(
        signed_eeac, bundle=bundle, trust=pki.trust, at=T0 + timedelta(days=1),
        revocation=record,
    )
    assert report.revoked and not report.valid


def test_validate_edoc_monotone_under_revocation(pki, bundle, signed_eeac):
    platform_key, platform_cert = pki.issue("platform2", ("platform", "sign"))
    at = T0 + timedelta(days=1)
    without = validate_edoc(signed_eeac, bundle=bundle, trust=pki.trust, at=at)
    record = edoc.make_revocation(signed_eeac.header.doc_id, "r", platform_key, platform_cert, at=at)
    with_rev = validate_edoc(signed_eeac, bundle=bundle, trust=pki.trust, at=at, revocation=record)
    assert not (with_rev.valid and not without.valid)
    assert not with_rev.valid


def test_validate_edoc_def_binding_failure(pki, bundle, signed_eeac):
    stale = replace(signed_eeac, header=replace(signed_eeac.header, def_digest="0" * 64))
    report = validate_edoc(stale, bundle=bundle, trust=pki.trust, at=T0 + timedelta(days=1))
    assert report.def_binding == "fail" and not report.valid


def test_validity_report_xml_round_trip(pki, bundle, signed_eeac):
    report = validate_edoc(signed_eeac, bundle=bundle, trust=pki.trust, at=T0 + timedelta(days=1))
    again = edoc.report_from_element(parse(a_canon(edoc.report_to_element(report))))
    assert again == report


def test_attrs_xml_round_trip():
    attrs = AttributeSet(static=(("docClass", "input"),), dynamic=(("status", "pending"),))
    again = edoc.attrs_from_element(parse(a_canon(edoc.attrs_to_element(attrs))))
    assert again == attrs
