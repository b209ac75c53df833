import random

import pytest

from secure_skyline import paillier as ph
from secure_skyline.keyholder import KeyHolder
from secure_skyline.subprotocols import TwoPartyContext
from secure_skyline.transport import LoopbackChannel


@pytest.fixture(scope="session")
def keypair():
    return ph.keygen(512, random.Random(20240501))


@pytest.fixture(scope="session")
def pk(keypair):
    return keypair.public_key


@pytest.fixture(scope="session")
def sk(keypair):
    return keypair.private_key


@pytest.fixture
def keyholder(sk):
    return KeyHolder(sk, record=True)


@pytest.fixture
def make_ctx(pk, keyholder):
    """Build a C1 context talking to the test's key holder over loopback."""

    def make(l=20, d=None, n=4, m=2, **kw):
        params = ph.ProtocolParams(l=l, d=d, n=n, m=m)
        return TwoPartyContext(pk, params, LoopbackChannel(keyholder), **kw)

    return make


@pytest.fixture
def dec(sk):
    def d(c):
        if isinstance(c, (list, tuple)):
            return [ph.decrypt(sk, x) for x in c]
        if hasattr(c, "attrs"):
            return tuple(ph.decrypt(sk, x) for x in c.attrs)
        if hasattr(c, "bits"):
            return [ph.decrypt(sk, x) for x in c.bits]
        return ph.decrypt(sk, c)

    return d


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
