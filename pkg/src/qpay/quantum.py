"""Polarization-qubit simulation for conjugate-basis payment tokens.

Each token position carries one of the four states {|0>, |1>, |+>, |->},
identified by (bit, basis) with HV = {|0>,|1>} (linear) and DA = {|+>,|->}
(diagonal). Polarization angles are fixed by convention:

    (bit=0, HV) -> 0 deg     (bit=1, HV) -> 90 deg
    (bit=0, DA) -> 45 deg    (bit=1, DA) -> 135 deg

Basis bits use 0 = DA, 1 = HV everywhere (sampling, serialization, and the
interpretation of MAC tags as analyzer settings), so the bit/basis string
pair "0101"/"0011" encodes |+>|->|0>|1>.

The issuing hardware remote-prepares these states by projecting one half of
a polarization singlet; the marginal of that procedure is uniform over the
four states with the anticorrelated outcome absorbed into a fixed bit
relabeling, so the simulation samples (bit, basis) directly. Bit-flip noise
(visibility error) is realized at measurement time, conditional on the
analyzer matching the preparation basis; the issuer's stored classical
description is never mutated by channel effects.

Tokens are array-backed (one uint8 per position) so million-position runs
stay vectorized; `TransmittedPhoton` provides the equivalent single-position
view used by scalar measurement and by tests.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum

import numpy as np

BIT_DA = 0
BIT_HV = 1

DESCRIPTION_MAGIC = b"QTKD"
TOKEN_MAGIC = b"QTKQ"
FORMAT_VERSION = 1


class Basis(Enum):
    """One of the two mutually unbiased polarization bases."""

    HV = "HV"
    DA = "DA"

    @property
    def bit(self) -> int:
        return BIT_HV if self is Basis.HV else BIT_DA

    @classmethod
    def from_bit(cls, b: int) -> "Basis":
        return Basis.HV if b else Basis.DA

    def conjugate(self) -> "Basis":
        return Basis.DA if self is Basis.HV else Basis.HV


class MeasurementOutcome(IntEnum):
    ZERO = 0
    ONE = 1
    NO_CLICK = 2


# uint8 codes used in outcome arrays; identical to MeasurementOutcome values.
OUTCOME_ZERO = 0
OUTCOME_ONE = 1
OUTCOME_NO_CLICK = 2


def polarization_deg(bit, basis_bit):
    """Polarization angle in degrees; accepts scalars or numpy arrays."""
    return 90.0 * np.asarray(bit) + 45.0 * (1 - np.asarray(basis_bit))


@dataclass(frozen=True)
class Bb84State:
    bit: int
    basis: Basis

    def __post_init__(self):
        if self.bit not in (0, 1):
            raise ValueError("bit must be 0 or 1")

    @property
    def polarization(self) -> float:
        return float(polarization_deg(self.bit, self.basis.bit))

    @property
    def ket_label(self) -> str:
        if self.basis is Basis.HV:
            return "0" if self.bit == 0 else "1"
        return "+" if self.bit == 0 else "-"


@dataclass(frozen=True)
class TransmittedPhoton:
    """One token position after the channel.

    photons: 0 = vacuum, 1 = single photon, k >= 2 = k identically polarized
    copies (no coherence between photon-number states). flip_prob is the
    accumulated probability that an analyzer aligned with the preparation
    basis reads the wrong bit.
    """

    photons: int
    state: Bb84State | None = None
    flip_prob: float = 0.0

    def __post_init__(self):
        if self.photons < 0:
            raise ValueError("photon count must be >= 0")
        if self.photons > 0 and self.state is None:
            raise ValueError("non-vacuum photon needs a state")

    @property
    def is_vacuum(self) -> bool:
        return self.photons == 0


@dataclass(frozen=True)
class ChannelModel:
    """Per-position channel: loss, basis-dependent bit flips, multiphoton."""

    loss_prob: float = 0.0
    flip_prob_hv: float = 0.0
    flip_prob_da: float = 0.0
    multi_prob: float = 0.0
    multi_count_cap: int = 2

    def __post_init__(self):
        for name in ("loss_prob", "flip_prob_hv", "flip_prob_da", "multi_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.loss_prob + self.multi_prob > 1.0:
            raise ValueError("loss_prob + multi_prob must not exceed 1")
        if self.multi_count_cap < 2:
            raise ValueError("multi_count_cap must be >= 2")

    def flip_for_basis_bits(self, basis_bits: np.ndarray) -> np.ndarray:
        return np.where(np.asarray(basis_bits) == BIT_HV, self.flip_prob_hv, self.flip_prob_da)


@dataclass
class ClassicalDescription:
    """The issuer's secret record of a token: bit string and basis string."""

    bits: np.ndarray
    bases: np.ndarray
    token_id: str = ""
    client_id: str = ""

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        self.bases = np.asarray(self.bases, dtype=np.uint8)
        if self.bits.shape != self.bases.shape or self.bits.ndim != 1:
            raise ValueError("bit and basis strings must be 1-d and equal length")

    def __len__(self) -> int:
        return self.bits.size

    @classmethod
    def from_strings(cls, bits: str, bases: str, token_id: str = "", client_id: str = "") -> "ClassicalDescription":
        """Build from '0'/'1' text, e.g. ("0101", "0011") -> |+>|->|0>|1>."""
        return cls(
            bits=np.frombuffer(bits.encode(), dtype=np.uint8) - ord("0"),
            bases=np.frombuffer(bases.encode(), dtype=np.uint8) - ord("0"),
            token_id=token_id,
            client_id=client_id,
        )

    def state(self, j: int) -> Bb84State:
        return Bb84State(int(self.bits[j]), Basis.from_bit(int(self.bases[j])))

    def ket_labels(self) -> str:
        return "".join(self.state(j).ket_label for j in range(len(self)))


@dataclass
class QuantumToken:
    """Array-backed sequence of transmitted photons.

    bits/bases describe the encoded polarization per position; photons holds
    the photon count (0 = vacuum). flip_hv/flip_da are the accumulated
    same-basis flip probabilities contributed by every channel traversed.
    """

    token_id: str
    bits: np.ndarray
    bases: np.ndarray
    photons: np.ndarray = field(default=None)  # type: ignore[assignment]
    flip_hv: float = 0.0
    flip_da: float = 0.0

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        self.bases = np.asarray(self.bases, dtype=np.uint8)
        if self.photons is None:
            self.photons = np.ones(self.bits.size, dtype=np.uint8)
        self.photons = np.asarray(self.photons, dtype=np.uint8)
        if not (self.bits.size == self.bases.size == self.photons.size):
            raise ValueError("token arrays must share one length")

    def __len__(self) -> int:
        return self.bits.size

    def flip_probs(self) -> np.ndarray:
        return np.where(self.bases == BIT_HV, self.flip_hv, self.flip_da)

    def position(self, j: int) -> TransmittedPhoton:
        n = int(self.photons[j])
        if n == 0:
            return TransmittedPhoton(0)
        state = Bb84State(int(self.bits[j]), Basis.from_bit(int(self.bases[j])))
        return TransmittedPhoton(n, state, float(self.flip_probs()[j]))


def generate_token(
    length: int,
    rng: np.random.Generator,
    token_id: str = "",
    client_id: str = "",
) -> tuple[ClassicalDescription, QuantumToken]:
    """Sample a fresh token: independent fair bits and bases per position.

    Statistically equivalent to the singlet remote-preparation procedure
    (projecting one half of |Psi-> in a randomly chosen basis and relabeling
    the anticorrelated outcome); sampled directly for speed.
    """
    if length < 1:
        raise ValueError("token length must be >= 1")
    bits = rng.integers(0, 2, size=length, dtype=np.uint8)
    bases = rng.integers(0, 2, size=length, dtype=np.uint8)
    desc = ClassicalDescription(bits=bits, bases=bases, token_id=token_id, client_id=client_id)
    token = QuantumToken(token_id=token_id, bits=bits.copy(), bases=bases.copy())
    return desc, token


def transmit(token: QuantumToken, channel: ChannelModel, rng: np.random.Generator) -> QuantumToken:
    """Send a token through a channel; per position independently.

    A surviving position becomes multiphoton with multi_prob (count capped at
    channel.multi_count_cap), vacuum with loss_prob, otherwise stays as is.
    Flip noise is not applied here: the channel's flip probabilities compose
    into the token and are realized at measurement time.
    """
    n = len(token)
    u = rng.random(n)
    photons = token.photons.copy()
    lost = u < channel.loss_prob
    multi = (~lost) & (u < channel.loss_prob + channel.multi_prob)
    photons[lost] = 0
    alive = photons > 0
    photons[multi & alive] = channel.multi_count_cap
    # independent flips compose: p (+) q = p(1-q) + q(1-p)
    flip_hv = token.flip_hv * (1 - channel.flip_prob_hv) + channel.flip_prob_hv * (1 - token.flip_hv)
    flip_da = token.flip_da * (1 - channel.flip_prob_da) + channel.flip_prob_da * (1 - token.flip_da)
    return QuantumToken(
        token_id=token.token_id,
        bits=token.bits.copy(),
        bases=token.bases.copy(),
        photons=photons,
        flip_hv=flip_hv,
        flip_da=flip_da,
    )


def measure_token(token: QuantumToken, analyzer_bits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Projective measurement of every position in the given basis bits.

    Same-basis positions return the encoded bit, flipped with the token's
    accumulated flip probability; cross-basis positions return a fair coin;
    vacuum returns NO_CLICK. Multiphoton positions behave like a single
    photon here (one copy analyzed); exploiting the extra copies is the
    adversary module's business.
    """
    analyzer_bits = np.asarray(analyzer_bits, dtype=np.uint8)
    if analyzer_bits.size != len(token):
        raise ValueError("analyzer length must match token length")
    n = len(token)
    out = np.full(n, OUTCOME_NO_CLICK, dtype=np.uint8)
    alive = token.photons > 0
    same = alive & (analyzer_bits == token.bases)
    flipped = token.bits ^ (rng.random(n) < token.flip_probs()).astype(np.uint8)
    out[same] = flipped[same]
    cross = alive & ~same
    coins = (rng.random(n) < 0.5).astype(np.uint8)
    out[cross] = coins[cross]
    return out


def measure_token_at_angle(token: QuantumToken, angle_deg, rng: np.random.Generator) -> np.ndarray:
    """Analyze every position at an arbitrary angle (scalar or per-position).

    The outcome is ZERO with probability cos^2(angle - polarization); flip
    noise is realized first as a 90 degree rotation of the encoded state.
    """
    angle = np.asarray(angle_deg, dtype=np.float64)
    if np.any(angle < 0) or np.any(angle >= 180):
        raise ValueError("analyzer angle must lie in [0, 180) degrees")
    n = len(token)
    eff_bits = token.bits ^ (rng.random(n) < token.flip_probs()).astype(np.uint8)
    phi = polarization_deg(eff_bits, token.bases)
    p_zero = np.cos(np.radians(angle - phi)) ** 2
    out = (rng.random(n) >= p_zero).astype(np.uint8)
    out[token.photons == 0] = OUTCOME_NO_CLICK
    return out


def measure(photon: TransmittedPhoton, basis: Basis, rng: np.random.Generator) -> MeasurementOutcome:
    """Single-position basis measurement; see measure_token for semantics."""
    if photon.is_vacuum:
        return MeasurementOutcome.NO_CLICK
    state = photon.state
    assert state is not None
    if basis is state.basis:
        flip = rng.random() < photon.flip_prob
        return MeasurementOutcome(state.bit ^ int(flip))
    return MeasurementOutcome(int(rng.random() < 0.5))


def measure_at_angle(photon: TransmittedPhoton, angle_deg: float, rng: np.random.Generator) -> MeasurementOutcome:
    """Single-position analyzer at an arbitrary angle (Born rule)."""
    if not 0.0 <= angle_deg < 180.0:
        raise ValueError("analyzer angle must lie in [0, 180) degrees")
    if photon.is_vacuum:
        return MeasurementOutcome.NO_CLICK
    state = photon.state
    assert state is not None
    bit = state.bit ^ int(rng.random() < photon.flip_prob)
    phi = polarization_deg(bit, state.basis.bit)
    p_zero = float(np.cos(np.radians(angle_deg - phi)) ** 2)
    return MeasurementOutcome(int(rng.random() >= p_zero))


def degrade_to_single(token: QuantumToken) -> QuantumToken:
    """Copy of the token with multiphoton positions clamped to one photon."""
    photons = np.minimum(token.photons, 1)
    return replace(token, bits=token.bits.copy(), bases=token.bases.copy(), photons=photons)


# ---------------------------------------------------------------------------
# Serialization: bit-packed little-endian arrays.
#
# Description file: magic "QTKD", u8 version, u64 LE length, then 2 bits per
# position, code = (bit << 1) | basis_bit, four positions per byte with
# position j at bit offset 2*(j mod 4) of byte j//4.
#
# Token file: magic "QTKQ", u8 version, u64 LE length, f64 LE flip_hv,
# f64 LE flip_da, the same 2-bit state codes, then 2 bits per position of
# photon count clamped to 3.
# ---------------------------------------------------------------------------


def _pack_2bit(values: np.ndarray) -> bytes:
    v = np.asarray(values, dtype=np.uint8)
    padded = np.zeros((v.size + 3) // 4 * 4, dtype=np.uint8)
    padded[: v.size] = v & 0b11
    quads = padded.reshape(-1, 4)
    packed = quads[:, 0] | (quads[:, 1] << 2) | (quads[:, 2] << 4) | (quads[:, 3] << 6)
    return packed.astype(np.uint8).tobytes()


def _unpack_2bit(buf: bytes, count: int) -> np.ndarray:
    packed = np.frombuffer(buf, dtype=np.uint8)
    out = np.empty(packed.size * 4, dtype=np.uint8)
    out[0::4] = packed & 0b11
    out[1::4] = (packed >> 2) & 0b11
    out[2::4] = (packed >> 4) & 0b11
    out[3::4] = (packed >> 6) & 0b11
    return out[:count]


def _packed_len(count: int) -> int:
    return (count + 3) // 4


def pack_description(desc: ClassicalDescription) -> bytes:
    header = DESCRIPTION_MAGIC + struct.pack("<BQ", FORMAT_VERSION, len(desc))
    codes = (desc.bits << 1) | desc.bases
    return header + _pack_2bit(codes)


def unpack_description(buf: bytes) -> ClassicalDescription:
    if buf[:4] != DESCRIPTION_MAGIC:
        raise ValueError("bad description magic")
    version, length = struct.unpack_from("<BQ", buf, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported description version {version}")
    codes = _unpack_2bit(buf[13 : 13 + _packed_len(length)], length)
    return ClassicalDescription(bits=(codes >> 1) & 1, bases=codes & 1)


def pack_token(token: QuantumToken) -> bytes:
    header = TOKEN_MAGIC + struct.pack("<BQdd", FORMAT_VERSION, len(token), token.flip_hv, token.flip_da)
    codes = (token.bits << 1) | token.bases
    counts = np.minimum(token.photons, 3)
    return header + _pack_2bit(codes) + _pack_2bit(counts)


def unpack_token(buf: bytes, token_id: str = "") -> QuantumToken:
    if buf[:4] != TOKEN_MAGIC:
        raise ValueError("bad token magic")
    version, length, flip_hv, flip_da = struct.unpack_from("<BQdd", buf, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported token version {version}")
    off = 4 + struct.calcsize("<BQdd")
    n = _packed_len(length)
    codes = _unpack_2bit(buf[off : off + n], length)
    counts = _unpack_2bit(buf[off + n : off + 2 * n], length)
    return QuantumToken(
        token_id=token_id,
        bits=(codes >> 1) & 1,
        bases=codes & 1,
        photons=counts,
        flip_hv=flip_hv,
        flip_da=flip_da,
    )
