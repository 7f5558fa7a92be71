"""Keys, minimal certificates, signature envelopes and chain verification.

Certificates here are deliberately small: a subject, one public key, a
set of purposes (auth, sign, role, platform, issuer), a validity window
and the issuer's signature over the canonical certificate body. Purpose
separation is enforced everywhere a key is used. Signature envelopes
cover the canonical bytes of the signed content; counter-signatures
extend coverage to content plus every earlier block without touching
the originals.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field, replace
from datetime import datetime

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .clock import fmt_ts, parse_ts, utcnow
from .xmlcore import XNode, a_canon, elem, element_text, find_one, find_text, parse

PURPOSES = frozenset({"auth", "sign", "role", "platform", "issuer"})

SIGNATURE_ALG = "ed25519"
DIGEST_ALG = "sha256"

CHAIN_OK = "ok"
CHAIN_UNTRUSTED = "UntrustedRoot"
CHAIN_EXPIRED = "Expired"
CHAIN_REVOKED = "Revoked"
CHAIN_BAD_SIGNATURE = "BadSignature"


class SigError(Exception):
    pass


class UnsupportedAlgorithm(SigError):
    pass


class IssuerNotAuthorized(SigError):
    pass


class IssuerExpired(SigError):
    pass


class PurposeMismatch(SigError):
    pass


class KeyCertMismatch(SigError):
    pass


class OriginalInvalid(SigError):
    pass


class KeystoreError(SigError):
    pass


class WrongPassphrase(KeystoreError):
    pass


# ---------------------------------------------------------------------------
# Keys
# ---------------------------------------------------------------------------

class PrivateKey:
    """Handle over a signing key; the raw seed never leaves the keystore."""

    def __init__(self, algorithm: str, impl: Ed25519PrivateKey):
        if algorithm != SIGNATURE_ALG:
            raise UnsupportedAlgorithm(algorithm)
        self.algorithm = algorithm
        self._impl = impl

    def sign(self, data: bytes) -> bytes:
        return self._impl.sign(data)

    def public_bytes(self) -> bytes:
        return self._impl.public_key().public_bytes_raw()

    def seed_bytes(self) -> bytes:
        return self._impl.private_bytes_raw()


def keygen(algorithm: str = SIGNATURE_ALG) -> tuple[PrivateKey, bytes]:
    if algorithm != SIGNATURE_ALG:
        raise UnsupportedAlgorithm(algorithm)
    key = PrivateKey(algorithm, Ed25519PrivateKey.generate())
    return key, key.public_bytes()


def private_key_from_seed(seed: bytes, algorithm: str = SIGNATURE_ALG) -> PrivateKey:
    if algorithm != SIGNATURE_ALG:
        raise UnsupportedAlgorithm(algorithm)
    return PrivateKey(algorithm, Ed25519PrivateKey.from_private_bytes(seed))


def verify_raw(algorithm: str, public: bytes, signature: bytes, data: bytes) -> bool:
    if algorithm != SIGNATURE_ALG:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, data)
        return True
    except (InvalidSignature, ValueError):
        return False


def digest_bytes(data: bytes, algorithm: str = DIGEST_ALG) -> bytes:
    if algorithm != DIGEST_ALG:
        raise UnsupportedAlgorithm(algorithm)
    return hashlib.sha256(data).digest()


def key_digest(public: bytes) -> str:
    """Hex fingerprint of a public key; role map entries key on this."""
    return hashlib.sha256(public).hexdigest()


# ---------------------------------------------------------------------------
# Encrypted key store (one file per identity)
# ---------------------------------------------------------------------------

_SCRYPT_N, _SCRYPT_R, _SCRYPT_P = 2**14, 8, 1
_KEYSTORE_AAD = b"aida-keystore-v1"


def save_keystore(path, key: PrivateKey, subject: str, passphrase: str) -> None:
    salt = os.urandom(16)
    nonce = os.urandom(12)
    kek = hashlib.scrypt(
        passphrase.encode("utf-8"), salt=salt, n=_SCRYPT_N, r=_SCRYPT_R, p=_SCRYPT_P, dklen=32
    )
    sealed = AESGCM(kek).encrypt(nonce, key.seed_bytes(), _KEYSTORE_AAD)
    doc = elem(
        "keystore",
        children=[
            elem("version", text="1"),
            elem("subject", text=subject),
            elem("keyAlg", text=key.algorithm),
            elem(
                "kdf",
                children=[
                    elem("alg", text="scrypt"),
                    elem("n", text=str(_SCRYPT_N)),
                    elem("r", text=str(_SCRYPT_R)),
                    elem("p", text=str(_SCRYPT_P)),
                    elem("salt", text=salt.hex()),
                ],
            ),
            elem(
                "cipher",
                children=[
                    elem("alg", text="aes256gcm"),
                    elem("nonce", text=nonce.hex()),
                    elem("data", text=sealed.hex()),
                ],
            ),
        ],
    )
    with open(path, "wb") as fh:
        fh.write(a_canon(doc))


def load_keystore(path, passphrase: str) -> PrivateKey:
    try:
        root = parse(open(path, "rb").read())
        if root.name != "keystore" or find_text(root, "keystore/version") != "1":
            raise KeystoreError("unrecognized keystore file")
        alg = find_text(root, "keystore/keyAlg") or ""
        salt = bytes.fromhex(find_text(root, "keystore/kdf/salt") or "")
        n = int(find_text(root, "keystore/kdf/n") or "0")
        r = int(find_text(root, "keystore/kdf/r") or "0")
        p = int(find_text(root, "keystore/kdf/p") or "0")
        nonce = bytes.fromhex(find_text(root, "keystore/cipher/nonce") or "")
        sealed = bytes.fromhex(find_text(root, "keystore/cipher/data") or "")
    except KeystoreError:
        raise
    except Exception as exc:
        raise KeystoreError(f"unreadable keystore: {exc}") from exc
    kek = hashlib.scrypt(passphrase.encode("utf-8"), salt=salt, n=n, r=r, p=p, dklen=32)
    try:
        seed = AESGCM(kek).decrypt(nonce, sealed, _KEYSTORE_AAD)
    except Exception as exc:
        raise WrongPassphrase("keystore decryption failed") from exc
    return private_key_from_seed(seed, alg)


# ---------------------------------------------------------------------------
# Certificates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MiniCert:
    subject: str
    key_algorithm: str
    subject_key: bytes
    purposes: frozenset[str]
    not_before: datetime
    not_after: datetime
    issuer: str
    serial: int
    extensions: tuple[tuple[str, str], ...] = ()
    issuer_signature: bytes = b""

    def key_digest(self) -> str:
        return key_digest(self.subject_key)

    def extension(self, name: str) -> str | None:
        for k, v in self.extensions:
            if k == name:
                return v
        return None

    def within_validity(self, at: datetime) -> bool:
        return self.not_before <= at <= self.not_after

    def is_self_signed(self) -> bool:
        return self.subject == self.issuer and verify_raw(
            self.key_algorithm, self.subject_key, self.issuer_signature, cert_body_bytes(self)
        )


def cert_body_element(cert: MiniCert) -> XNode:
    return elem(
        "certBody",
        children=[
            elem("subject", text=cert.subject),
            elem(
                "key",
                children=[
                    elem("alg", text=cert.key_algorithm),
                    elem("value", text=cert.subject_key.hex()),
                ],
            ),
            elem("purposes", children=[elem("p", text=p) for p in sorted(cert.purposes)]),
            elem(
                "validity",
                children=[
                    elem("notBefore", text=fmt_ts(cert.not_before)),
                    elem("notAfter", text=fmt_ts(cert.not_after)),
                ],
            ),
            elem("issuer", text=cert.issuer),
            elem("serial", text=str(cert.serial)),
            elem(
                "extensions",
                children=[
                    elem("entry", attrs=[("name", k)], text=v)
                    for k, v in sorted(cert.extensions)
                ],
            ),
        ],
    )


def cert_body_bytes(cert: MiniCert) -> bytes:
    return a_canon(cert_body_element(cert))


def cert_to_element(cert: MiniCert) -> XNode:
    return elem(
        "minicert",
        children=[
            cert_body_element(cert),
            elem("issuerSignature", text=cert.issuer_signature.hex()),
        ],
    )


def cert_from_element(root: XNode) -> MiniCert:
    if root.name != "minicert":
        raise SigError("not a certificate element")
    body = find_one(root, "minicert/certBody")
    if body is None:
        raise SigError("certificate has no body")
    purposes_el = find_one(root, "minicert/certBody/purposes")
    purposes = frozenset(
        element_text(c) for c in (purposes_el.children if purposes_el else ()) if c.kind == "element"
    )
    if not purposes or not purposes <= PURPOSES:
        raise SigError(f"bad certificate purposes {sorted(purposes)}")
    ext_el = find_one(root, "minicert/certBody/extensions")
    extensions = tuple(
        (dict(c.attrs)["name"], element_text(c))
        for c in (ext_el.children if ext_el else ())
        if c.kind == "element"
    )
    nb = parse_ts(find_text(root, "minicert/certBody/validity/notBefore") or "")
    na = parse_ts(find_text(root, "minicert/certBody/validity/notAfter") or "")
    if not nb < na:
        raise SigError("certificate validity window is empty")
    return MiniCert(
        subject=find_text(root, "minicert/certBody/subject") or "",
        key_algorithm=find_text(root, "minicert/certBody/key/alg") or "",
        subject_key=bytes.fromhex(find_text(root, "minicert/certBody/key/value") or ""),
        purposes=purposes,
        not_before=nb,
        not_after=na,
        issuer=find_text(root, "minicert/certBody/issuer") or "",
        serial=int(find_text(root, "minicert/certBody/serial") or "0"),
        extensions=extensions,
        issuer_signature=bytes.fromhex(find_text(root, "minicert/issuerSignature") or ""),
    )


def save_cert(path, cert: MiniCert) -> None:
    with open(path, "wb") as fh:
        fh.write(a_canon(cert_to_element(cert)))


def load_cert(path) -> MiniCert:
    return cert_from_element(parse(open(path, "rb").read()))


def make_cert_body(
    *,
    subject: str,
    subject_key: bytes,
    purposes,
    not_before: datetime,
    not_after: datetime,
    issuer: str,
    serial: int,
    key_algorithm: str = SIGNATURE_ALG,
    extensions=(),
) -> MiniCert:
    purposes = frozenset(purposes)
    if not purposes or not purposes <= PURPOSES:
        raise SigError(f"bad purposes {sorted(purposes)}")
    if not not_before < not_after:
        raise SigError("notBefore must precede notAfter")
    return MiniCert(
        subject=subject,
        key_algorithm=key_algorithm,
        subject_key=subject_key,
        purposes=purposes,
        not_before=not_before,
        not_after=not_after,
        issuer=issuer,
        serial=serial,
        extensions=tuple(sorted(tuple(extensions))),
    )


def issue_cert(body: MiniCert, issuer_key: PrivateKey, issuer_cert: MiniCert, *, at=None) -> MiniCert:
    at = at or utcnow()
    if "issuer" not in issuer_cert.purposes:
        raise IssuerNotAuthorized(f"{issuer_cert.subject} has no issuer purpose")
    if not issuer_cert.within_validity(at):
        raise IssuerExpired(f"{issuer_cert.subject} not valid at {fmt_ts(at)}")
    if issuer_key.public_bytes() != issuer_cert.subject_key:
        raise KeyCertMismatch("issuer key does not match issuer certificate")
    body = replace(body, issuer=issuer_cert.subject)
    return replace(body, issuer_signature=issuer_key.sign(cert_body_bytes(body)))


def make_anchor(
    subject: str,
    key: PrivateKey,
    *,
    not_before: datetime,
    not_after: datetime,
    serial: int = 1,
    purposes=("issuer",),
) -> MiniCert:
    body = make_cert_body(
        subject=subject,
        subject_key=key.public_bytes(),
        purposes=purposes,
        not_before=not_before,
        not_after=not_after,
        issuer=subject,
        serial=serial,
    )
    return replace(body, issuer_signature=key.sign(cert_body_bytes(body)))


# ---------------------------------------------------------------------------
# Trust store and chain verification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrustStore:
    anchors: tuple[MiniCert, ...] = ()
    revoked: frozenset[tuple[str, int]] = field(default_factory=frozenset)

    def __post_init__(self):
        for a in self.anchors:
            if "issuer" not in a.purposes:
                raise SigError(f"anchor {a.subject} lacks issuer purpose")
            if not a.is_self_signed():
                raise SigError(f"anchor {a.subject} is not validly self-signed")


def truststore_to_element(trust: TrustStore) -> XNode:
    return elem(
        "truststore",
        children=[
            elem("anchors", children=[cert_to_element(a) for a in trust.anchors]),
            elem(
                "revokedCerts",
                children=[
                    elem("rc", children=[elem("issuer", text=i), elem("serial", text=str(s))])
                    for i, s in sorted(trust.revoked)
                ],
            ),
        ],
    )


def truststore_from_element(root: XNode) -> TrustStore:
    anchors_el = find_one(root, "truststore/anchors")
    anchors = tuple(
        cert_from_element(c) for c in (anchors_el.children if anchors_el else ()) if c.kind == "element"
    )
    revoked = set()
    rc_el = find_one(root, "truststore/revokedCerts")
    for rc in (rc_el.children if rc_el else ()):
        if rc.kind == "element":
            revoked.add(
                (
                    element_text(find_one(rc, "rc/issuer") or elem("x")),
                    int(element_text(find_one(rc, "rc/serial") or elem("x")) or "0"),
                )
            )
    return TrustStore(anchors=anchors, revoked=frozenset(revoked))


def save_truststore(path, trust: TrustStore) -> None:
    with open(path, "wb") as fh:
        fh.write(a_canon(truststore_to_element(trust)))


def load_truststore(path) -> TrustStore:
    return truststore_from_element(parse(open(path, "rb").read()))


@dataclass(frozen=True)
class ChainResult:
    status: str
    detail: str = ""
    subjects: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return self.status == CHAIN_OK


def verify_chain(cert: MiniCert, at: datetime, trust: TrustStore, intermediates=()) -> ChainResult:
    """Walk issuer links from `cert` to a trust anchor.

    Every link must be inside its validity window at `at`, unrevoked and
    carry a verifiable issuer signature; non-anchor issuers must appear
    in `intermediates`.
    """
    pool = list(intermediates) + list(trust.anchors)
    chain: list[str] = []
    cur = cert
    seen: set[tuple[str, int]] = set()
    while True:
        link_id = (cur.issuer, cur.serial)
        if link_id in trust.revoked:
            return ChainResult(CHAIN_REVOKED, f"{cur.subject} serial {cur.serial}", tuple(chain))
        if not cur.within_validity(at):
            return ChainResult(CHAIN_EXPIRED, f"{cur.subject} outside validity", tuple(chain))
        chain.append(cur.subject)
        if cur in trust.anchors:
            if not cur.is_self_signed():
                return ChainResult(CHAIN_BAD_SIGNATURE, f"anchor {cur.subject}", tuple(chain))
            return ChainResult(CHAIN_OK, subjects=tuple(chain))
        if (cur.subject, cur.serial) in seen:
            return ChainResult(CHAIN_UNTRUSTED, "certification loop", tuple(chain))
        seen.add((cur.subject, cur.serial))
        candidates = [c for c in pool if c.subject == cur.issuer]
        if not candidates:
            return ChainResult(CHAIN_UNTRUSTED, f"no issuer {cur.issuer!r}", tuple(chain))
        nxt = None
        for cand in candidates:
            if "issuer" not in cand.purposes:
                continue
            if verify_raw(cand.key_algorithm, cand.subject_key, cur.issuer_signature, cert_body_bytes(cur)):
                nxt = cand
                break
        if nxt is None:
            return ChainResult(
                CHAIN_BAD_SIGNATURE, f"no valid certification of {cur.subject}", tuple(chain)
            )
        cur = nxt


# ---------------------------------------------------------------------------
# Signature envelopes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SignatureBlock:
    digest_alg: str
    digest_value: bytes
    signer_cert: MiniCert
    timestamp: datetime
    purpose: str
    signature_alg: str
    signature_value: bytes
    counter_signatures: tuple["SignatureBlock", ...] = ()


@dataclass(frozen=True)
class SignedDoc:
    content: XNode
    signature: SignatureBlock


def _signed_info_element(block: SignatureBlock) -> XNode:
    return elem(
        "signedInfo",
        children=[
            elem(
                "digest",
                children=[
                    elem("alg", text=block.digest_alg),
                    elem("value", text=block.digest_value.hex()),
                ],
            ),
            elem("timestamp", text=fmt_ts(block.timestamp)),
            elem("purpose", text=block.purpose),
            elem("signerCert", children=[cert_to_element(block.signer_cert)]),
        ],
    )


def block_to_element(block: SignatureBlock, *, include_counters: bool = True) -> XNode:
    kids = [
        _signed_info_element(block),
        elem(
            "signatureValue",
            children=[
                elem("alg", text=block.signature_alg),
                elem("value", text=block.signature_value.hex()),
            ],
        ),
    ]
    if include_counters and block.counter_signatures:
        kids.append(
            elem(
                "counterSignatures",
                children=[block_to_element(b) for b in block.counter_signatures],
            )
        )
    return elem("signature", children=kids)


def block_core_bytes(block: SignatureBlock) -> bytes:
    """Canonical bytes of a block without its counter-signature list."""
    return a_canon(block_to_element(block, include_counters=False))


def block_from_element(root: XNode) -> SignatureBlock:
    if root.name != "signature":
        raise SigError("not a signature element")
    cert_el = find_one(root, "signature/signedInfo/signerCert/minicert")
    if cert_el is None:
        raise SigError("signature block has no signer certificate")
    counters_el = find_one(root, "signature/counterSignatures")
    counters = tuple(
        block_from_element(c)
        for c in (counters_el.children if counters_el else ())
        if c.kind == "element"
    )
    purpose = find_text(root, "signature/signedInfo/purpose") or ""
    if purpose not in PURPOSES:
        raise SigError(f"bad signature purpose {purpose!r}")
    return SignatureBlock(
        digest_alg=find_text(root, "signature/signedInfo/digest/alg") or "",
        digest_value=bytes.fromhex(find_text(root, "signature/signedInfo/digest/value") or ""),
        signer_cert=cert_from_element(cert_el),
        timestamp=parse_ts(find_text(root, "signature/signedInfo/timestamp") or ""),
        purpose=purpose,
        signature_alg=find_text(root, "signature/signatureValue/alg") or "",
        signature_value=bytes.fromhex(find_text(root, "signature/signatureValue/value") or ""),
        counter_signatures=counters,
    )


def _make_block(
    basis: bytes, key: PrivateKey, cert: MiniCert, purpose: str, at: datetime
) -> SignatureBlock:
    if purpose not in cert.purposes:
        raise PurposeMismatch(
            f"certificate {cert.subject!r} not usable for purpose {purpose!r}"
        )
    if key.public_bytes() != cert.subject_key:
        raise KeyCertMismatch(f"key does not match certificate {cert.subject!r}")
    draft = SignatureBlock(
        digest_alg=DIGEST_ALG,
        digest_value=digest_bytes(basis),
        signer_cert=cert,
        timestamp=at,
        purpose=purpose,
        signature_alg=key.algorithm,
        signature_value=b"",
    )
    signature = key.sign(a_canon(_signed_info_element(draft)))
    return replace(draft, signature_value=signature)


def sign_envelope(
    content: XNode, key: PrivateKey, cert: MiniCert, purpose: str, *, at=None
) -> SignedDoc:
    """Sign the canonical bytes of `content` under a purpose-checked cert."""
    at = at or utcnow()
    return SignedDoc(content=content, signature=_make_block(a_canon(content), key, cert, purpose, at))


def sign_detached(basis: bytes, key: PrivateKey, cert: MiniCert, purpose: str, *, at=None) -> SignatureBlock:
    """Signature block over an arbitrary byte basis (no content attached);
    the protocol layer uses this for message envelopes."""
    return _make_block(basis, key, cert, purpose, at or utcnow())


def verify_detached(block: SignatureBlock, basis: bytes) -> bool:
    return _verify_block_math(block, basis)


def _verify_block_math(block: SignatureBlock, basis: bytes) -> bool:
    if block.digest_value != digest_bytes(basis):
        return False
    return verify_raw(
        block.signature_alg,
        block.signer_cert.subject_key,
        block.signature_value,
        a_canon(_signed_info_element(replace(block, signature_value=b"", counter_signatures=()))),
    )


def _block_bases(content_canon: bytes, primary: SignatureBlock):
    """(block, digest basis) pairs: primary over content, counters over
    content plus all earlier block cores."""
    pairs = [(primary, content_canon)]
    accumulated = content_canon + block_core_bytes(primary)
    for counter in primary.counter_signatures:
        pairs.append((counter, accumulated))
        accumulated += block_core_bytes(counter)
    return pairs


@dataclass(frozen=True)
class BlockReport:
    signer: str
    purpose: str
    timestamp: datetime
    signature_valid: bool
    chain: ChainResult


@dataclass(frozen=True)
class EnvelopeReport:
    signature_valid: bool
    chain_status: str
    signer: str
    timestamp: datetime | None
    blocks: tuple[BlockReport, ...] = ()
    detail: str = ""

    @property
    def fully_valid(self) -> bool:
        return self.signature_valid and self.chain_status == CHAIN_OK


def verify_envelope(
    signed: SignedDoc, trust: TrustStore, at=None, intermediates=()
) -> EnvelopeReport:
    """Check digest, signature and chain of every block; never raises on
    structurally bad input, it reports instead."""
    at = at or utcnow()
    primary = signed.signature
    try:
        content_canon = a_canon(signed.content)
    except Exception as exc:
        return EnvelopeReport(
            signature_valid=False,
            chain_status=CHAIN_BAD_SIGNATURE,
            signer=primary.signer_cert.subject,
            timestamp=primary.timestamp,
            detail=f"content not canonicalizable: {exc}",
        )
    reports = []
    all_valid = True
    for block, basis in _block_bases(content_canon, primary):
        valid = _verify_block_math(block, basis)
        chain = verify_chain(block.signer_cert, at, trust, intermediates)
        reports.append(
            BlockReport(
                signer=block.signer_cert.subject,
                purpose=block.purpose,
                timestamp=block.timestamp,
                signature_valid=valid,
                chain=chain,
            )
        )
        all_valid = all_valid and valid
    return EnvelopeReport(
        signature_valid=all_valid,
        chain_status=reports[0].chain.status,
        signer=primary.signer_cert.subject,
        timestamp=primary.timestamp,
        blocks=tuple(reports),
    )


def counter_sign(signed: SignedDoc, key: PrivateKey, cert: MiniCert, *, at=None) -> SignedDoc:
    """Add a counter-signature covering content plus all earlier blocks.

    The original blocks are left byte-identical and stay independently
    verifiable.
    """
    at = at or utcnow()
    content_canon = a_canon(signed.content)
    bases = _block_bases(content_canon, signed.signature)
    for block, basis in bases:
        if not _verify_block_math(block, basis):
            raise OriginalInvalid(f"existing signature by {block.signer_cert.subject} is invalid")
    _, last_basis = bases[-1]
    new_basis = last_basis + block_core_bytes(bases[-1][0])
    new_block = _make_block(new_basis, key, cert, "sign", at)
    primary = signed.signature
    return SignedDoc(
        content=signed.content,
        signature=replace(
            primary, counter_signatures=primary.counter_signatures + (new_block,)
        ),
    )


def signed_doc_to_element(signed: SignedDoc) -> XNode:
    return elem(
        "signedDoc",
        children=[
            elem("content", children=[signed.content]),
            elem("signatures", children=[block_to_element(signed.signature)]),
        ],
    )


def signed_doc_from_element(root: XNode) -> SignedDoc:
    if root.name != "signedDoc":
        raise SigError("not a signedDoc element")
    content_el = find_one(root, "signedDoc/content")
    inner = [c for c in (content_el.children if content_el else ()) if c.kind == "element"]
    sig_el = find_one(root, "signedDoc/signatures/signature")
    if len(inner) != 1 or sig_el is None:
        raise SigError("signedDoc must hold one content element and one signature")
    return SignedDoc(content=inner[0], signature=block_from_element(sig_el))
