"""In-process model of a TEE: install, resume, attest, plus compromise.

Attestation is modelled by a vendor authority whose signing key never leaves
this module; a quote verifies iff the authority endorsed (eid, prog_hash,
public_key, platform). Compromise is static and only affects key
confidentiality and program integrity, never the attestation itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Protocol

from . import encoding as enc
from .crypto import Digest, KeyPair, PublicKey, Signature, gen_keypair, hash, sign, verify


class EnclaveError(Exception):
    pass


class EnclaveUnavailable(EnclaveError):
    """The host crashed or suspended the enclave."""


class ConfidentialityError(EnclaveError):
    """Secret material requested from an uncompromised enclave."""


class Output(Protocol):
    def digest(self) -> Digest: ...


Program = Callable[[Any], Output]

_PROGRAMS: dict[Digest, Program] = {}


def register_program(prog_hash: Digest, program: Program) -> None:
    _PROGRAMS[prog_hash] = program


@dataclass(frozen=True)
class AttestationQuote:
    eid: bytes
    prog_hash: Digest
    public_key: PublicKey
    platform: str
    endorsement: bytes = b""

    def body(self) -> bytes:
        return b"".join(
            [
                b"teerollup/quote",
                enc.varbytes(self.eid),
                self.prog_hash,
                self.public_key,
                enc.varbytes(self.platform.encode()),
            ]
        )


class AttestationAuthority:
    """Stand-in for the hardware vendors' attestation roots."""

    def __init__(self, seed: bytes = hash(b"teerollup/attestation-root")):
        self._key = gen_keypair(seed)

    @property
    def public_key(self) -> PublicKey:
        return self._key.public_key

    def endorse(self, eid: bytes, prog_hash: Digest, public_key: PublicKey, platform: str) -> AttestationQuote:
        q = AttestationQuote(eid, prog_hash, public_key, platform)
        sig = sign(hash(q.body()), self._key)
        return AttestationQuote(eid, prog_hash, public_key, platform, sig.value)

    def verify(self, quote: AttestationQuote) -> bool:
        return verify(hash(quote.body()), quote.endorsement, self._key.public_key)


DEFAULT_AUTHORITY = AttestationAuthority()


@dataclass(eq=False)
class Enclave:
    eid: bytes
    prog_hash: Digest
    platform: str
    _keypair: KeyPair = field(repr=False)
    _authority: AttestationAuthority = field(repr=False, default=DEFAULT_AUTHORITY)
    compromised: bool = False
    crashed: bool = False

    @property
    def public_key(self) -> PublicKey:
        return self._keypair.public_key


def install(
    prog_hash: Digest,
    seed: bytes,
    platform: str = "sgx",
    authority: AttestationAuthority = DEFAULT_AUTHORITY,
    compromised: bool = False,
) -> Enclave:
    """Create an enclave running ``prog_hash``; the keypair is born inside it."""
    keypair = gen_keypair(hash(b"teerollup/enclave-key" + seed))
    eid = hash(b"teerollup/eid" + seed)[:16]
    return Enclave(eid, prog_hash, platform, keypair, authority, compromised=compromised)


def resume(enclave: Enclave, inp: Any) -> tuple[Output, Signature]:
    """Run the installed program on ``inp`` and endorse its output digest."""
    if enclave.crashed:
        raise EnclaveUnavailable(f"enclave {enclave.eid.hex()} is not running")
    try:
        program = _PROGRAMS[enclave.prog_hash]
    except KeyError:
        raise EnclaveError("no program installed under this hash") from None
    out = program(inp)
    return out, sign(out.digest(), enclave._keypair)


def attest(enclave: Enclave) -> AttestationQuote:
    return enclave._authority.endorse(enclave.eid, enclave.prog_hash, enclave.public_key, enclave.platform)


def verify_quote(quote: AttestationQuote, authority: AttestationAuthority = DEFAULT_AUTHORITY) -> bool:
    return authority.verify(quote)


def leak_secret(enclave: Enclave) -> KeyPair:
    if not enclave.compromised:
        raise ConfidentialityError("enclave is not compromised")
    return enclave._keypair
