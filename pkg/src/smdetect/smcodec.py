"""Constellations, SM bit mapping, pilot blocks and candidate enumeration.

Antenna indices are 0-based throughout (antenna 1 of the usual notation is
index 0).  Bits are handled as ``uint8`` arrays, most significant bit first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .corrmodel import SystemConfig
from .errors import (
    BadLength,
    NotInConstellation,
    SearchSpaceTooLarge,
    ShapeMismatch,
    UnsupportedOrder,
)

__all__ = [
    "Constellation",
    "SMBlock",
    "CandidateSet",
    "build_constellation",
    "constellation_for",
    "map_bits",
    "demap_block",
    "decompose",
    "hamming_payload_distance",
    "pilot_block",
    "enumerate_candidates",
    "gray",
    "DEFAULT_CANDIDATE_CAP",
]

DEFAULT_CANDIDATE_CAP = 2**20
MEMBERSHIP_TOL = 1e-9


def gray(n):
    """Binary-reflected Gray code of ``n`` (works on arrays)."""
    n = np.asarray(n)
    return n ^ (n >> 1)


def _int_to_bits(values, width: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.int64)
    shifts = np.arange(width - 1, -1, -1)
    return ((values[..., None] >> shifts) & 1).astype(np.uint8)


def _bits_to_int(bits) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64)
    width = bits.shape[-1]
    weights = 1 << np.arange(width - 1, -1, -1)
    return bits @ weights if width else np.zeros(bits.shape[:-1], dtype=np.int64)


@dataclass(frozen=True)
class Constellation:
    """A symbol alphabet with Gray bit labels.

    ``points[i]`` carries the label ``bit_labels[i]``; ``by_label[b]`` is
    the point labelled ``b``.
    """

    kind: str
    order: int
    points: np.ndarray = field(repr=False)
    bit_labels: np.ndarray = field(repr=False)
    energy: float = 1.0

    @cached_property
    def by_label(self) -> np.ndarray:
        out = np.empty(self.order, dtype=complex)
        out[self.bit_labels] = self.points
        return out

    @property
    def bits_per_symbol(self) -> int:
        return int(round(math.log2(self.order)))

    @property
    def constant_modulus(self) -> bool:
        mags = np.abs(self.points)
        return bool(np.allclose(mags, mags[0], rtol=0, atol=1e-12))

    def label_of(self, symbols) -> np.ndarray:
        """Labels of constellation points; raises if a symbol is off-grid."""
        symbols = np.asarray(symbols, dtype=complex)
        dist = np.abs(symbols[..., None] - self.by_label)
        labels = np.argmin(dist, axis=-1)
        scale = math.sqrt(self.energy)
        if np.any(np.take_along_axis(dist, labels[..., None], -1) > MEMBERSHIP_TOL * max(scale, 1.0)):
            raise NotInConstellation("symbol is not a constellation point")
        return labels

    def quantize(self, z) -> np.ndarray:
        """Nearest constellation point to each entry of ``z``."""
        z = np.asarray(z, dtype=complex)
        idx = np.argmin(np.abs(z[..., None] - self.by_label), axis=-1)
        return self.by_label[idx]


def build_constellation(kind: str, order: int, energy: float = 1.0) -> Constellation:
    """Gray-labelled PSK or square QAM alphabet with average energy ``energy``.

    PSK points are ``sqrt(energy) * exp(2j pi i / M)`` with label ``gray(i)``.
    Square QAM uses Gray labels per axis (in-phase bits first) and the unit
    average-power scaling, e.g. ``1/sqrt(10)`` for 16-QAM.
    """
    kind = kind.upper()
    if order < 2 or order & (order - 1):
        raise UnsupportedOrder(f"constellation order {order} is not a power of two >= 2")
    if kind == "PSK":
        i = np.arange(order)
        points = np.exp(2j * np.pi * i / order)
        if order == 2:
            points = points.real.astype(complex)
        labels = gray(i)
    elif kind == "QAM":
        side = int(round(math.sqrt(order)))
        if side * side != order or order < 4:
            raise UnsupportedOrder(f"QAM order {order} is not a square power of two")
        k = int(round(math.log2(side)))
        levels = 2 * np.arange(side) - (side - 1)
        ii, qq = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
        points = (levels[ii] + 1j * levels[qq]).ravel()
        points = points / math.sqrt(2 * (order - 1) / 3)
        labels = ((gray(ii) << k) | gray(qq)).ravel()
    else:
        raise UnsupportedOrder(f"unknown constellation kind {kind!r}")
    points = points * math.sqrt(energy)
    return Constellation(kind, order, points, labels.astype(np.int64), float(energy))


def _single_point(energy: float) -> Constellation:
    return Constellation("SSK", 1, np.array([math.sqrt(energy)], dtype=complex), np.array([0]), float(energy))


def constellation_for(cfg: SystemConfig) -> Constellation:
    """The alphabet used by ``cfg`` (a single point for SSK)."""
    if cfg.signal == "SSK":
        return _single_point(cfg.symbol_power)
    return build_constellation(cfg.mod_kind, cfg.mod_order, cfg.symbol_power)


@dataclass(frozen=True)
class SMBlock:
    """One transmitted block.

    For SM/SSK ``antenna_idx`` and ``labels`` have length ``B`` and
    ``X = L @ diag(symbols)``.  For SMX ``antenna_idx`` is ``None`` and
    ``labels`` is an ``N_T x B`` label matrix.
    """

    X: np.ndarray = field(repr=False)
    labels: np.ndarray
    antenna_idx: Optional[np.ndarray] = None

    @property
    def symbols(self) -> np.ndarray:
        if self.antenna_idx is None:
            return self.X
        return self.X[self.antenna_idx, np.arange(self.X.shape[1])]

    @property
    def L(self) -> np.ndarray:
        if self.antenna_idx is None:
            raise ValueError("SMX blocks have no SSK matrix")
        out = np.zeros(self.X.shape)
        out[self.antenna_idx, np.arange(self.X.shape[1])] = 1.0
        return out

    @property
    def S(self) -> np.ndarray:
        return np.diag(self.symbols)


def _split_bits(bits, cfg: SystemConfig) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    if bits.size != cfg.bits_per_block:
        raise BadLength(f"expected {cfg.bits_per_block} bits, got {bits.size}")
    return bits.reshape(cfg.block_len, cfg.bits_per_slot)


def map_bits(bits, cfg: SystemConfig, const: Optional[Constellation] = None) -> SMBlock:
    """Map one block of payload bits to a transmitted block.

    Per symbol slot the first ``log2 N_T`` bits pick the antenna (natural
    binary) and the remaining bits select the Gray-labelled symbol.  SMX
    slots carry one label per antenna, antenna 0 first.
    """
    const = const or constellation_for(cfg)
    slots = _split_bits(bits, cfg)
    n_ant_bits = int(round(math.log2(cfg.n_tx)))
    X = np.zeros((cfg.n_tx, cfg.block_len), dtype=complex)
    cols = np.arange(cfg.block_len)
    if cfg.signal == "SMX":
        k = const.bits_per_symbol
        labels = _bits_to_int(slots.reshape(cfg.block_len, cfg.n_tx, k)).T
        X[:] = const.by_label[labels]
        return SMBlock(X, labels)
    ant = _bits_to_int(slots[:, :n_ant_bits])
    labels = _bits_to_int(slots[:, n_ant_bits:])
    X[ant, cols] = const.by_label[labels]
    return SMBlock(X, labels, ant)


def decompose(X, cfg: SystemConfig, const: Optional[Constellation] = None) -> SMBlock:
    """Recover antenna indices and labels from a block matrix."""
    const = const or constellation_for(cfg)
    X = np.asarray(X, dtype=complex)
    if X.shape != (cfg.n_tx, cfg.block_len):
        raise ShapeMismatch(f"block must be {cfg.n_tx}x{cfg.block_len}")
    if cfg.signal == "SMX":
        return SMBlock(X, const.label_of(X))
    nonzero = np.abs(X) > MEMBERSHIP_TOL
    if np.any(nonzero.sum(axis=0) != 1):
        raise NotInConstellation("each column of an SM block needs exactly one active antenna")
    ant = np.argmax(nonzero, axis=0)
    sym = X[ant, np.arange(cfg.block_len)]
    return SMBlock(X, const.label_of(sym), ant)


def demap_block(antenna_idx, symbols, cfg: SystemConfig, const: Optional[Constellation] = None) -> np.ndarray:
    """Inverse of :func:`map_bits` for SM/SSK blocks."""
    const = const or constellation_for(cfg)
    ant = np.asarray(antenna_idx, dtype=np.int64)
    if ant.shape != (cfg.block_len,) or np.any((ant < 0) | (ant >= cfg.n_tx)):
        raise NotInConstellation("antenna indices out of range")
    labels = const.label_of(symbols)
    return _labels_to_bits(ant, labels, cfg)


def _labels_to_bits(ant, labels, cfg: SystemConfig) -> np.ndarray:
    n_ant_bits = int(round(math.log2(cfg.n_tx)))
    if cfg.signal == "SMX":
        k = int(round(math.log2(cfg.mod_order)))
        labels = np.asarray(labels)
        return _int_to_bits(np.swapaxes(labels, -1, -2), k).reshape(labels.shape[:-2] + (-1,))
    sym_bits = cfg.bits_per_slot - n_ant_bits
    parts = [_int_to_bits(ant, n_ant_bits)]
    if sym_bits:
        parts.append(_int_to_bits(labels, sym_bits))
    slots = np.concatenate(parts, axis=-1)
    return slots.reshape(slots.shape[:-2] + (-1,))


def block_bits(block: SMBlock, cfg: SystemConfig) -> np.ndarray:
    return _labels_to_bits(block.antenna_idx, block.labels, cfg)


def hamming_payload_distance(X, X2, cfg: SystemConfig, const: Optional[Constellation] = None) -> int:
    """Number of differing payload bits between two blocks."""
    const = const or constellation_for(cfg)
    a = block_bits(decompose(X, cfg, const), cfg)
    b = block_bits(decompose(X2, cfg, const), cfg)
    return int(np.count_nonzero(a != b))


def pilot_block(cfg: SystemConfig) -> np.ndarray:
    """Scaled identity pilot ``sqrt(pilot_power) * I``; needs ``B == N_T``."""
    if cfg.block_len != cfg.n_tx:
        raise ShapeMismatch("pilot blocks need block_len == n_tx")
    return math.sqrt(cfg.pilot_power) * np.eye(cfg.n_tx, dtype=complex)


@dataclass(frozen=True)
class CandidateSet:
    """Every block the detector may decide on, in lexicographic order.

    SM/SSK candidates are ordered antenna-index vector first and label
    vector second, so candidate ``c`` has pattern ``c // n_labelvecs`` and
    label vector ``c % n_labelvecs``.  SMX candidates are ordered by the
    column-major label matrix.
    """

    mode: str
    cfg: SystemConfig = field(repr=False)
    const: Constellation = field(repr=False)
    patterns: Optional[np.ndarray] = field(default=None, repr=False)
    label_vectors: np.ndarray = field(default=None, repr=False)

    @property
    def n_patterns(self) -> int:
        return 1 if self.patterns is None else self.patterns.shape[0]

    @property
    def n_labelvecs(self) -> int:
        return self.label_vectors.shape[0]

    def __len__(self) -> int:
        return self.n_patterns * self.n_labelvecs

    @cached_property
    def antenna_idx(self) -> np.ndarray:
        """``(n, B)`` antenna indices (SM/SSK only)."""
        return np.repeat(self.patterns, self.n_labelvecs, axis=0)

    @cached_property
    def labels(self) -> np.ndarray:
        reps = self.n_patterns
        return np.tile(self.label_vectors, (reps,) + (1,) * (self.label_vectors.ndim - 1))

    @cached_property
    def symbol_vectors(self) -> np.ndarray:
        """Symbols of each label vector (without antenna pattern)."""
        return self.const.by_label[self.label_vectors]

    @cached_property
    def X(self) -> np.ndarray:
        """All candidate matrices, shape ``(n, N_T, B)``."""
        cfg = self.cfg
        if self.mode == "SMX":
            return self.symbol_vectors.astype(complex)
        X = np.zeros((len(self), cfg.n_tx, cfg.block_len), dtype=complex)
        rows = np.arange(len(self))[:, None]
        cols = np.arange(cfg.block_len)[None, :]
        X[rows, self.antenna_idx, cols] = self.const.by_label[self.labels]
        return X

    @cached_property
    def bits(self) -> np.ndarray:
        if self.mode == "SMX":
            return _labels_to_bits(None, self.labels, self.cfg)
        return _labels_to_bits(self.antenna_idx, self.labels, self.cfg)

    def block(self, c: int) -> SMBlock:
        if self.mode == "SMX":
            return SMBlock(self.X[c], self.labels[c])
        return SMBlock(self.X[c], self.labels[c], self.antenna_idx[c])

    def index_of(self, block: SMBlock) -> int:
        if self.mode == "SMX":
            digits = np.swapaxes(block.labels, -1, -2).ravel()
            return int(_mixed_radix(digits, self.const.order))
        li = _mixed_radix(block.labels, self.const.order)
        pi = _mixed_radix(block.antenna_idx, self.cfg.n_tx)
        return int(pi * self.n_labelvecs + li)


def _mixed_radix(digits, base: int) -> int:
    out = 0
    for d in np.asarray(digits).ravel():
        out = out * base + int(d)
    return out


def _lex_product(base: int, length: int) -> np.ndarray:
    if length == 0:
        return np.zeros((1, 0), dtype=np.int64)
    grids = np.indices((base,) * length).reshape(length, -1).T
    return grids.astype(np.int64)


def enumerate_candidates(cfg: SystemConfig, mode: Optional[str] = None, cap: int = DEFAULT_CANDIDATE_CAP) -> CandidateSet:
    """Enumerate the SM, SSK or SMX search set of ``cfg``.

    Cardinalities are ``(M N_T)^B``, ``N_T^B`` and ``M^(N_T B)``.
    """
    mode = (mode or cfg.signal).upper()
    if mode != cfg.signal:
        from dataclasses import replace

        cfg = replace(cfg, signal=mode)
    const = constellation_for(cfg)
    B, nt, M = cfg.block_len, cfg.n_tx, const.order
    if mode == "SM":
        size = (M * nt) ** B
    elif mode == "SSK":
        size = nt**B
    elif mode == "SMX":
        size = M ** (nt * B)
    else:
        raise ValueError(f"unknown candidate mode {mode!r}")
    if size > cap:
        raise SearchSpaceTooLarge(f"{size} candidates exceed the cap of {cap}")
    if mode == "SMX":
        flat = _lex_product(M, nt * B)
        label_vectors = np.swapaxes(flat.reshape(-1, B, nt), 1, 2)
        return CandidateSet(mode, cfg, const, None, label_vectors)
    patterns = _lex_product(nt, B)
    label_vectors = _lex_product(M, B)
    return CandidateSet(mode, cfg, const, patterns, label_vectors)
