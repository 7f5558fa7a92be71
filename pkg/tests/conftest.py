"""Shared certificate, fixture and platform scaffolding for the suite."""

from datetime import timedelta

import pytest

from aida import edoc, fixtures, sigcrypt, wysiwys
from aida.aplatform import Platform, init_data_root
from aida.aprotocol import PlatformClient
from aida.clock import parse_ts, utcnow
from aida.session import Session

T0 = parse_ts("2026-05-04T09:00:00Z")
YEAR = timedelta(days=365)


class Pki:
    """A small certification setup: one main anchor, one role anchor."""

    def __init__(self):
        self.root_key, _ = sigcrypt.keygen()
        self.root_cert = sigcrypt.make_anchor(
            "Root CA", self.root_key, not_before=T0 - YEAR, not_after=T0 + 10 * YEAR
        )
        self.role_ca_key, _ = sigcrypt.keygen()
        self.role_ca_cert = sigcrypt.make_anchor(
            "Role CA", self.role_ca_key, not_before=T0 - YEAR, not_after=T0 + 10 * YEAR
        )
        self.trust = sigcrypt.TrustStore(anchors=(self.root_cert, self.role_ca_cert))
        self._serial = 100

    def issue(self, subject, purposes, *, key=None, issuer=None, not_before=None,
              not_after=None, extensions=()):
        if key is None:
            key, _ = sigcrypt.keygen()
        issuer_key, issuer_cert = issuer or (self.root_key, self.root_cert)
        self._serial += 1
        body = sigcrypt.make_cert_body(
            subject=subject,
            subject_key=key.public_bytes(),
            purposes=purposes,
            not_before=not_before or (T0 - YEAR),
            not_after=not_after or (T0 + 5 * YEAR),
            issuer=issuer_cert.subject,
            serial=self._serial,
            extensions=extensions,
        )
        cert = sigcrypt.issue_cert(body, issuer_key, issuer_cert, at=T0)
        return key, cert

    def issue_role(self, subject, *, extensions=()):
        return self.issue(
            subject, ("role",), issuer=(self.role_ca_key, self.role_ca_cert),
            extensions=extensions,
        )


@pytest.fixture(scope="session")
def pki():
    return Pki()


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    base = tmp_path_factory.mktemp("fixtures")
    fixtures.build_demo_fixtures(base)
    return base


_identity_cache: dict = {}


def load_identity_cached(fixture_dir, name):
    key = (str(fixture_dir), name)
    if key not in _identity_cache:
        _identity_cache[key] = fixtures.load_identity(
            fixture_dir / "identities" / name, fixtures.DEMO_PASSPHRASE
        )
    return _identity_cache[key]


class PlatformEnv:
    """A running platform plus helpers bound to one fixture tree."""

    def __init__(self, base_dir, fixture_dir, ports=None, clock=utcnow):
        self.fixture_dir = fixture_dir
        self.data_root = init_data_root(base_dir / "data", fixture_dir, ports)
        self.platform = Platform(self.data_root, passphrase=fixtures.DEMO_PASSPHRASE, clock=clock)
        self.platform.start()
        self.trust = sigcrypt.load_truststore(fixture_dir / "trust.xml")
        self.clock = clock

    def identity(self, name):
        return load_identity_cached(self.fixture_dir, name)

    def client(self, port="scenario", endpoint=None) -> PlatformClient:
        return PlatformClient(
            endpoint or self.platform.endpoint(port), self.trust, clock=self.clock
        )

    def session(self, name, port="scenario", endpoint=None) -> Session:
        identity = self.identity(name)
        return Session(
            self.client(port, endpoint), identity.key("role"), identity.cert("role"),
            clock=self.clock,
        )

    def bundle(self, type_id):
        return self.platform.repo.latest(type_id)

    def make_signed_eeac(self, student_idx=0, exam_idx=0, at=None):
        at = at or self.clock()
        bundle = self.bundle("eEAC")
        values = fixtures.eeac_field_values(
            fixtures.DEMO_STUDENTS[student_idx],
            fixtures.DEMO_EXAMS[exam_idx],
            at,
            at + timedelta(days=fixtures.ADMISSION_VALIDITY_DAYS),
        )
        content = edoc.assemble(bundle.typedef, values)
        draft = edoc.new_unsigned("eEAC", 1, bundle.def_digest, content, at=at)
        sso = self.identity("sso")
        signed, _ = wysiwys.sign_edoc(draft, bundle, sso.key("sign"), sso.cert("sign"), at=at)
        return signed

    def stop(self):
        self.platform.stop()


@pytest.fixture()
def env(fixture_dir, tmp_path):
    environment = PlatformEnv(tmp_path, fixture_dir)
    yield environment
    environment.stop()
