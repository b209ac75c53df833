import random

import pytest

from secure_skyline import paillier as ph
from secure_skyline import subprotocols as sp
from secure_skyline.transport import MsgType


@pytest.fixture
def ctx(make_ctx):
    return make_ctx(l=20, n=4)


@pytest.fixture
def enc(pk):
    return lambda v: ph.encrypt(pk, v % int(pk.N))


SAMPLE = [(0, 0), (0, 1), (1, 0), (5, 5), (5, 7), (7, 5), (31, 0), (0, 31), (31, 31), (17, 18)]


def test_sm_including_zero_and_large(ctx, enc, dec):
    cases = [(0, 0), (0, 9), (9, 0), (123, 456), (2**20 - 1, 2**20 - 1)]
    out = sp.sm_many(ctx, [(enc(a), enc(b)) for a, b in cases])
    assert dec(out) == [a * b for a, b in cases]


def test_sm_of_a_value_with_itself(ctx, enc, dec):
    Ea = enc(77)
    assert dec(sp.sm(ctx, Ea, Ea)) == 77 * 77


@pytest.mark.parametrize("chunk", [1, 2, 3, 4])
def test_sbd_roundtrip_for_every_chunk(make_ctx, enc, dec, pk, chunk):
    ctx = make_ctx(sbd_chunk=chunk)
    rng = random.Random(chunk)
    values = [0, 1, 2**13 - 1] + [rng.randrange(2**13) for _ in range(10)]
    vecs = sp.sbd_many(ctx, [enc(v) for v in values], 13)
    for v, vec in zip(values, vecs):
        assert vec.width == 13
        assert dec(vec) == [int(b) for b in format(v, "013b")]
        assert dec(sp.recompose(pk, vec)) == v


def test_sbd_rejects_widths_that_wrap(ctx, enc):
    with pytest.raises(sp.ParameterError):
        sp.sbd(ctx, enc(1), 500)
    with pytest.raises(sp.ParameterError):
        sp.sbd(ctx, enc(1), 0)


def test_comparisons_on_sample(ctx, enc, dec):
    pairs = [(enc(a), enc(b)) for a, b in SAMPLE]
    assert dec(sp.sleq_many(ctx, pairs, 5)) == [int(a <= b) for a, b in SAMPLE]
    assert dec(sp.seq_many(ctx, pairs, 5)) == [int(a == b) for a, b in SAMPLE]
    assert dec(sp.sless_many(ctx, pairs, 5)) == [int(a < b) for a, b in SAMPLE]
    assert dec(sp.smin2_many(ctx, pairs, 5)) == [min(a, b) for a, b in SAMPLE]


def test_fast_and_canonical_sless_agree(ctx, enc, dec):
    pairs = [(enc(a), enc(b)) for a, b in SAMPLE]
    assert dec(sp.sless_many(ctx, pairs, 5, fast=True)) == dec(sp.sless_many(ctx, pairs, 5, fast=False))


def test_boolean_gates(ctx, pk, enc, dec):
    bits = [(0, 0), (0, 1), (1, 0), (1, 1)]
    pairs = [(enc(a), enc(b)) for a, b in bits]
    assert dec(sp.sand_many(ctx, pairs)) == [a & b for a, b in bits]
    assert dec(sp.sor_many(ctx, pairs)) == [a | b for a, b in bits]
    assert [dec(sp.snot(pk, enc(a))) for a in (0, 1)] == [1, 0]


@pytest.mark.parametrize("strategy", ["linear", "tree"])
def test_smin_n(ctx, enc, dec, strategy):
    rng = random.Random(9)
    for n in (1, 2, 3, 5, 8):
        vals = [rng.randrange(2**10) for _ in range(n)]
        assert dec(sp.smin_n(ctx, [enc(v) for v in vals], 10, strategy)) == min(vals)


def test_smin_n_rejects_empty_and_unknown(ctx, enc):
    with pytest.raises(ValueError):
        sp.smin_n(ctx, [], 5)
    with pytest.raises(ValueError):
        sp.smin_n(ctx, [enc(1), enc(2)], 5, "bogus")


def test_outputs_are_fresh_ciphertexts(ctx, enc):
    Ea, Eb = enc(3), enc(4)
    first = sp.sm(ctx, Ea, Eb).value
    assert sp.sm(ctx, Ea, Eb).value != first
    assert sp.sleq(ctx, Ea, Eb, 5).value != sp.sleq(ctx, Ea, Eb, 5).value


def test_c2_sees_only_blinded_values(ctx, enc, keyholder):
    # values C2 decrypts during SM and SBD are statistically far from the inputs
    sp.sm(ctx, enc(5), enc(7))
    sp.sbd(ctx, enc(11), 6)
    seen = [v for t, v in keyholder.observed if t in (MsgType.SM_BLINDED_PAIR, MsgType.SBD_MASKED)]
    assert seen and all(v > 2**40 for v in seen)


def test_operation_counters(ctx, enc):
    sp.sm(ctx, enc(2), enc(3))
    assert ctx.calls["sm"] == 1
    assert ctx.counter.encryptions == 2  # one blind per distinct operand
