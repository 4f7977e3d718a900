import pytest

from teerollup import tee
from teerollup.core import PROGRAM_HASH
from teerollup.crypto import gen_keypair, hash, verify


def test_quote_verifies_and_binds_fields():
    e = tee.install(PROGRAM_HASH, b"\x01" * 32)
    q = tee.attest(e)
    assert tee.verify_quote(q)
    assert q.public_key == e.public_key
    for bad in (
        tee.AttestationQuote(q.eid, hash(b"other"), q.public_key, q.platform, q.endorsement),
        tee.AttestationQuote(q.eid, q.prog_hash, gen_keypair(b"x" * 32).public_key, q.platform, q.endorsement),
        tee.AttestationQuote(q.eid, q.prog_hash, q.public_key, "tdx", q.endorsement),
    ):
        assert not tee.verify_quote(bad)


def test_quote_from_foreign_authority_rejected():
    rogue = tee.AttestationAuthority(b"\x05" * 32)
    e = tee.install(PROGRAM_HASH, b"\x02" * 32, authority=rogue)
    assert tee.verify_quote(tee.attest(e), rogue)
    assert not tee.verify_quote(tee.attest(e))


def test_compromise_keeps_attestation_valid():
    e = tee.install(PROGRAM_HASH, b"\x03" * 32, compromised=True)
    assert tee.verify_quote(tee.attest(e))
    assert tee.leak_secret(e).public_key == e.public_key


def test_resume_signs_program_output():
    class Out:
        def __init__(self, v):
            self.v = v

        def digest(self):
            return hash(self.v)

    prog = hash(b"echo-program")
    tee.register_program(prog, Out)
    e = tee.install(prog, b"\x04" * 32)
    out, sig = tee.resume(e, b"hello")
    assert verify(hash(b"hello"), sig, e.public_key)
    e.crashed = True
    with pytest.raises(tee.EnclaveUnavailable):
        tee.resume(e, b"hello")
    with pytest.raises(tee.EnclaveError):
        tee.resume(tee.install(hash(b"nothing"), b"\x05" * 32), b"")


def test_install_is_deterministic_per_seed():
    a = tee.install(PROGRAM_HASH, b"s" * 32)
    b = tee.install(PROGRAM_HASH, b"s" * 32)
    c = tee.install(PROGRAM_HASH, b"t" * 32)
    assert a.public_key == b.public_key != c.public_key
