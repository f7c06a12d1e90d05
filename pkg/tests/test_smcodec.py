import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smdetect.corrmodel import SystemConfig
from smdetect.errors import BadLength, NotInConstellation, SearchSpaceTooLarge, ShapeMismatch, UnsupportedOrder
from smdetect.smcodec import (
    block_bits,
    build_constellation,
    decompose,
    demap_block,
    enumerate_candidates,
    hamming_payload_distance,
    map_bits,
    pilot_block,
)


def cfg(nt=2, m=2, b=2, kind="PSK", signal="SM", eps=1.0):
    return SystemConfig(nt, 2, b, 5, m, kind, symbol_power=eps, signal=signal)


def popcount_diff(a, b):
    return bin(a ^ b).count("1")


def test_bpsk_points():
    c = build_constellation("PSK", 2)
    assert sorted(c.points.real) == [-1.0, 1.0]


def test_qpsk_qam4_points():
    c = build_constellation("QAM", 4)
    expected = {complex(a, b) / math.sqrt(2) for a in (-1, 1) for b in (-1, 1)}
    assert all(min(abs(p - e) for e in expected) < 1e-15 for p in c.points)


def test_qam16_grid_and_power():
    c = build_constellation("QAM", 16)
    scaled = c.points * math.sqrt(10)
    assert set(np.round(scaled.real).astype(int)) == {-3, -1, 1, 3}
    assert np.allclose(scaled, np.round(scaled.real) + 1j * np.round(scaled.imag))
    assert np.mean(np.abs(c.points) ** 2) == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("order", [2, 4, 8, 16])
def test_psk_gray_neighbours(order):
    c = build_constellation("PSK", order, energy=2.0)
    assert np.allclose(np.abs(c.points), math.sqrt(2.0))
    assert sorted(c.bit_labels) == list(range(order))
    for i in range(order):
        assert popcount_diff(c.bit_labels[i], c.bit_labels[(i + 1) % order]) == 1


@pytest.mark.parametrize("order", [4, 16, 64])
def test_qam_gray_per_axis(order):
    c = build_constellation("QAM", order)
    pts = c.points
    d_min = min(abs(a - b) for a, b in itertools.combinations(pts, 2))
    for i, j in itertools.combinations(range(order), 2):
        if abs(abs(pts[i] - pts[j]) - d_min) < 1e-9:
            assert popcount_diff(c.bit_labels[i], c.bit_labels[j]) == 1


def test_unsupported_orders():
    with pytest.raises(UnsupportedOrder):
        build_constellation("QAM", 8)
    with pytest.raises(UnsupportedOrder):
        build_constellation("PSK", 6)


def test_map_examples():
    c = cfg(nt=4, m=4, b=1)
    blk = map_bits([0, 0, 0, 0], c)
    const = build_constellation("PSK", 4)
    assert blk.antenna_idx[0] == 0
    assert blk.symbols[0] == const.by_label[0]
    blk = map_bits([0, 0, 1, 1], cfg())
    assert list(blk.antenna_idx) == [0, 1]
    assert np.allclose(blk.symbols, [1, -1])


def test_map_bad_length():
    with pytest.raises(BadLength):
        map_bits([0, 1, 1], cfg())


@pytest.mark.parametrize("nt,m,b,kind", [(2, 2, 2, "PSK"), (4, 4, 4, "PSK"), (2, 16, 2, "QAM"), (8, 2, 1, "PSK")])
def test_roundtrip_random(nt, m, b, kind):
    c = cfg(nt, m, b, kind)
    rng = np.random.default_rng(0)
    for bits in rng.integers(0, 2, size=(10_000, c.bits_per_block)):
        blk = map_bits(bits, c)
        assert np.array_equal(demap_block(blk.antenna_idx, blk.symbols, c), bits)


@pytest.mark.parametrize("nt,m,b", [(2, 2, 2), (2, 4, 2), (4, 2, 2), (4, 4, 1), (2, 8, 2)])
def test_roundtrip_exhaustive(nt, m, b):
    c = cfg(nt, m, b)
    n = c.bits_per_block
    for value in range(2**n):
        bits = np.array([(value >> (n - 1 - i)) & 1 for i in range(n)], dtype=np.uint8)
        blk = map_bits(bits, c)
        X = blk.X
        assert np.array_equal(np.count_nonzero(X, axis=0), np.ones(b))
        assert np.allclose(X, blk.L @ blk.S)
        assert np.array_equal(block_bits(decompose(X, c), c), bits)


@settings(max_examples=50)
@given(st.integers(0, 2**31 - 1), st.sampled_from([2, 4]), st.sampled_from([2, 4, 8]))
def test_block_properties(seed, nt, m):
    c = cfg(nt, m, nt)
    bits = np.random.default_rng(seed).integers(0, 2, c.bits_per_block)
    blk = map_bits(bits, c)
    assert np.linalg.norm(blk.X) ** 2 == pytest.approx(c.block_len * c.symbol_power)
    LL = blk.L @ blk.L.T
    assert np.count_nonzero(LL - np.diag(np.diag(LL))) == 0
    assert np.trace(LL) == c.block_len
    assert np.array_equal(LL, np.eye(nt)) == (len(set(blk.antenna_idx)) == nt)


def test_qam_average_block_energy():
    c = cfg(2, 16, 2, "QAM")
    rng = np.random.default_rng(3)
    e = [np.linalg.norm(map_bits(b, c).X) ** 2 for b in rng.integers(0, 2, (100_000, c.bits_per_block))]
    assert np.mean(e) == pytest.approx(c.block_len, rel=0.01)


def test_demap_rejects_off_grid():
    with pytest.raises(NotInConstellation):
        demap_block([0, 1], [1.0, 0.5], cfg())


def test_hamming_examples():
    c = cfg()
    a = map_bits([0, 0, 1, 1], c).X
    assert hamming_payload_distance(a, a, c) == 0
    b = map_bits([1, 0, 1, 1], c).X
    assert hamming_payload_distance(a, b, c) == 1


def test_hamming_exhaustive():
    c = cfg(2, 2, 1)
    payloads = [np.array([(v >> 1) & 1, v & 1], dtype=np.uint8) for v in range(4)]
    blocks = [map_bits(p, c).X for p in payloads]
    for (pa, xa), (pb, xb) in itertools.product(zip(payloads, blocks), repeat=2):
        assert hamming_payload_distance(xa, xb, c) == int(np.count_nonzero(pa != pb))
    assert len(payloads) ** 2 == 16


@pytest.mark.parametrize("nt", [2, 4, 8])
def test_pilot_block(nt):
    c = SystemConfig(nt, 2, nt, 5, 2, pilot_power=1.0)
    xp = pilot_block(c)
    assert np.array_equal(xp, np.eye(nt))
    assert np.allclose(xp @ xp.conj().T, c.pilot_power * np.eye(nt))
    with pytest.raises(ShapeMismatch):
        pilot_block(SystemConfig(nt, 2, nt + 1, 5, 2))


def test_candidate_counts():
    assert len(enumerate_candidates(cfg(2, 2, 1))) == 4
    assert len(enumerate_candidates(SystemConfig(4, 2, 4, 5, 2, signal="SSK"))) == 256
    assert len(enumerate_candidates(cfg(2, 4, 2, signal="SMX"))) == 4 ** 4
    with pytest.raises(SearchSpaceTooLarge):
        enumerate_candidates(cfg(2, 4, 2, signal="SMX"), cap=100)


def test_candidates_match_brute_force():
    c = cfg(2, 4, 2)
    cands = enumerate_candidates(c)
    const = build_constellation("PSK", 4)
    brute = set()
    for a0, a1, s0, s1 in itertools.product(range(2), range(2), const.points, const.points):
        X = np.zeros((2, 2), complex)
        X[a0, 0], X[a1, 1] = s0, s1
        brute.add(tuple(np.round(X.ravel(), 12)))
    got = {tuple(np.round(x.ravel(), 12)) for x in cands.X}
    assert len(cands) == 64 == len(got) and got == brute


def test_candidate_order_and_index():
    c = cfg(4, 4, 4)
    cands = enumerate_candidates(c)
    rng = np.random.default_rng(1)
    for i in rng.integers(0, len(cands), 50):
        blk = cands.block(int(i))
        assert cands.index_of(blk) == i
        assert np.array_equal(cands.bits[i], block_bits(blk, c))
    assert list(cands.antenna_idx[0]) == [0, 0, 0, 0]
    assert list(cands.labels[1]) == [0, 0, 0, 1]
