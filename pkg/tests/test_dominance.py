import itertools

import pytest

from secure_skyline import paillier as ph
from secure_skyline.dominance import DimensionError, EncryptedTuple, sdom, sdom_many
from secure_skyline.oracle import dominates


@pytest.fixture
def enc_tuple(pk):
    return lambda t, w=5: EncryptedTuple([ph.encrypt(pk, v) for v in t], w)


def test_grid_against_oracle(make_ctx, enc_tuple, dec):
    ctx = make_ctx(l=6, n=4, m=2)
    grid = [(a, b) for a in range(0, 4) for b in range(0, 4)]
    pairs = list(itertools.product(grid[::3], grid))
    out = sdom_many(ctx, [(enc_tuple(a), enc_tuple(b)) for a, b in pairs])
    assert dec(out) == [int(dominates(a, b)) for a, b in pairs]


def test_duplicates_do_not_dominate(make_ctx, enc_tuple, dec):
    ctx = make_ctx(l=6)
    t = enc_tuple((3, 3))
    assert dec(sdom(ctx, t, enc_tuple((3, 3)))) == 0


def test_antisymmetry(make_ctx, enc_tuple, dec):
    ctx = make_ctx(l=7, m=3)
    a, b = (1, 2, 3), (1, 2, 4)
    Ea, Eb = enc_tuple(a), enc_tuple(b)
    ab, ba = dec(sdom_many(ctx, [(Ea, Eb), (Eb, Ea)]))
    assert (ab, ba) == (1, 0)


@pytest.mark.parametrize("m", [1, 3, 4])
def test_higher_dimensions(make_ctx, enc_tuple, dec, m):
    ctx = make_ctx(l=9, m=m)
    cases = [((0,) * m, (1,) * m), ((1,) * m, (0,) * m), ((2,) * m, (2,) * m), ((0,) * (m - 1) + (5,), (1,) * m)]
    out = sdom_many(ctx, [(enc_tuple(a, 7), enc_tuple(b, 7)) for a, b in cases])
    assert dec(out) == [int(dominates(a, b)) for a, b in cases]


def test_dimension_mismatch(make_ctx, enc_tuple):
    with pytest.raises(DimensionError):
        sdom(make_ctx(), enc_tuple((1, 2)), enc_tuple((1, 2, 3)))
