"""n-time information-theoretically secure MAC over GF(2^t).

A key holds n independent slots, each a uniformly random pair (a, b) of
field elements. The tag of message M under slot (a, b) is the polynomial
evaluation

    tag = c_1*a^1 + c_2*a^2 + ... + c_d*a^d + b

where c_1..c_d are the message octets split into big-endian t-bit chunks
(zero-padded at the end) and d = ceil(8*len(M)/t). Over the key draw, two
distinct messages of equal chunk count collide with probability at most
d/2^t, independent of attacker compute. Each slot authenticates exactly one
message; re-tagging the same message returns the cached tag, a different
message raises SlotConflictError.

Keys optionally carry one-time-pad material so a consumed key can transport
its own uniformly random replacement: refresh_key XORs the serialized new
key against unused pad bytes, which are then marked consumed.

Key file format: magic "QMK1", u8 version, u16 LE tag bits, u32 LE slot
count, u32 LE pad length, then per slot a and b as big-endian t/8-byte
integers, then the pad bytes. Tags serialize big-endian; bit s of a tag
(counting from the most significant) controls segment s when the tag is
read as an analyzer basis string.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .gf2 import SUPPORTED_TAG_BITS, field as gf_field

KEY_MAGIC = b"QMK1"
KEY_VERSION = 1
MERCHANT_ID_MAX = 64


class SlotConflictError(ValueError):
    """A used slot was asked to authenticate a different message."""


class PadExhaustedError(ValueError):
    """Not enough unused one-time-pad material for a key refresh."""


@dataclass(frozen=True)
class MerchantId:
    octets: bytes

    def __post_init__(self):
        if not self.octets:
            raise ValueError("merchant id must be nonempty")
        if len(self.octets) > MERCHANT_ID_MAX:
            raise ValueError(f"merchant id longer than {MERCHANT_ID_MAX} octets")

    @classmethod
    def from_text(cls, text: str) -> "MerchantId":
        return cls(text.encode("utf-8"))


@dataclass(frozen=True)
class BasisString:
    """A tag interpreted as analyzer settings, one bit per segment."""

    bits: tuple[int, ...]

    @classmethod
    def from_int(cls, value: int, width: int) -> "BasisString":
        return cls(tuple((value >> (width - 1 - i)) & 1 for i in range(width)))

    def __len__(self) -> int:
        return len(self.bits)

    def to_int(self) -> int:
        v = 0
        for b in self.bits:
            v = (v << 1) | b
        return v

    def to_array(self) -> np.ndarray:
        return np.asarray(self.bits, dtype=np.uint8)

    def to_bytes(self) -> bytes:
        return self.to_int().to_bytes(len(self.bits) // 8, "big")


@dataclass
class MacSlot:
    a: int
    b: int
    used: bool = False
    message: bytes | None = None


@dataclass
class MacKey:
    tag_bits: int
    slots: list[MacSlot]
    pad: bytes = b""
    pad_used: int = 0

    @property
    def n_slots(self) -> int:
        return len(self.slots)

    @property
    def pad_available(self) -> int:
        return len(self.pad) - self.pad_used

    def unused_slots(self) -> int:
        return sum(1 for s in self.slots if not s.used)

    def next_unused_slot(self) -> int:
        for i, s in enumerate(self.slots):
            if not s.used:
                return i
        raise ValueError("all MAC slots consumed; refresh the key")


def keygen(tag_bits: int, slots: int, rng: np.random.Generator, pad_bytes: int = 0) -> MacKey:
    """Fresh uniform key with the given tag width and slot count."""
    if tag_bits not in SUPPORTED_TAG_BITS:
        raise ValueError(f"unsupported tag width {tag_bits}; choose from {SUPPORTED_TAG_BITS}")
    if slots < 1:
        raise ValueError("slot count must be >= 1")
    if pad_bytes < 0:
        raise ValueError("pad_bytes must be >= 0")
    width = tag_bits // 8
    slot_list = [
        MacSlot(
            a=int.from_bytes(rng.bytes(width), "big"),
            b=int.from_bytes(rng.bytes(width), "big"),
        )
        for _ in range(slots)
    ]
    pad = rng.bytes(pad_bytes) if pad_bytes else b""
    return MacKey(tag_bits=tag_bits, slots=slot_list, pad=pad)


def message_chunks(message: bytes, tag_bits: int) -> list[int]:
    """Split octets into big-endian t-bit coefficients, zero-padded."""
    width = tag_bits // 8
    padded = message + b"\x00" * (-len(message) % width)
    return [int.from_bytes(padded[i : i + width], "big") for i in range(0, len(padded), width)] or [0]


def evaluate_tag(tag_bits: int, a, b, message: bytes):
    """Tag value for explicit key material; a and b may be numpy arrays.

    Scalar ints go through exact big-int arithmetic; arrays (t <= 32) go
    through the vectorized field ops, as used by the forgery Monte Carlo.
    """
    f = gf_field(tag_bits)
    chunks = message_chunks(message, tag_bits)
    if isinstance(a, (int, np.integer)):
        acc = 0
        for c in reversed(chunks):  # Horner on sum_{i>=1} c_i a^i
            acc = f.mul(acc ^ c, int(a))
        return acc ^ int(b)
    a = np.asarray(a, dtype=np.uint64)
    acc = np.zeros_like(a)
    for c in reversed(chunks):
        acc = f.mul_vec(acc ^ np.uint64(c), a)
    return acc ^ np.asarray(b, dtype=np.uint64)


def tag(key: MacKey, slot: int, merchant: MerchantId | bytes) -> BasisString:
    """Authenticate a message in one slot; marks the slot used."""
    if not 0 <= slot < key.n_slots:
        raise IndexError(f"slot {slot} out of range for {key.n_slots}-slot key")
    message = merchant.octets if isinstance(merchant, MerchantId) else bytes(merchant)
    s = key.slots[slot]
    if s.used:
        if s.message != message:
            raise SlotConflictError(f"slot {slot} already bound to a different message")
    else:
        s.used = True
        s.message = message
    value = evaluate_tag(key.tag_bits, s.a, s.b, message)
    return BasisString.from_int(int(value), key.tag_bits)


def forgery_bound(key: MacKey, message_len: int) -> float:
    """Upper bound d/2^t on guessing the tag of an unseen message."""
    if message_len < 1:
        raise ValueError("message length must be >= 1")
    d = -(-message_len * 8 // key.tag_bits)
    return d / float(1 << key.tag_bits)


def _slot_material(key: MacKey) -> bytes:
    width = key.tag_bits // 8
    parts = []
    for s in key.slots:
        parts.append(s.a.to_bytes(width, "big"))
        parts.append(s.b.to_bytes(width, "big"))
    return b"".join(parts)


def _key_from_material(tag_bits: int, n_slots: int, material: bytes, pad: bytes = b"") -> MacKey:
    width = tag_bits // 8
    slots = []
    for i in range(n_slots):
        off = i * 2 * width
        slots.append(
            MacSlot(
                a=int.from_bytes(material[off : off + width], "big"),
                b=int.from_bytes(material[off + width : off + 2 * width], "big"),
            )
        )
    return MacKey(tag_bits=tag_bits, slots=slots, pad=pad)


def refresh_key(old: MacKey, rng: np.random.Generator, new_pad_bytes: int = 0) -> tuple[MacKey, bytes]:
    """Draw a replacement key and encrypt it under the old key's pad.

    The ciphertext covers the new key's slot material plus new_pad_bytes of
    fresh pad; it consumes the same number of unused pad bytes from the old
    key. decrypt_refresh(ciphertext, old) reconstructs the new key.
    """
    new = keygen(old.tag_bits, old.n_slots, rng, pad_bytes=new_pad_bytes)
    plain = _slot_material(new) + new.pad
    if old.pad_available < len(plain):
        raise PadExhaustedError(
            f"refresh needs {len(plain)} pad bytes, {old.pad_available} available"
        )
    window = old.pad[old.pad_used : old.pad_used + len(plain)]
    cipher = bytes(p ^ k for p, k in zip(plain, window))
    old.pad_used += len(plain)
    return new, cipher


def decrypt_refresh(ciphertext: bytes, old: MacKey, consume: bool = True) -> MacKey:
    """Invert refresh_key given the receiving side's copy of the old key."""
    if old.pad_available < len(ciphertext):
        raise PadExhaustedError("old key lacks pad material for this ciphertext")
    window = old.pad[old.pad_used : old.pad_used + len(ciphertext)]
    plain = bytes(c ^ k for c, k in zip(ciphertext, window))
    if consume:
        old.pad_used += len(ciphertext)
    width = old.tag_bits // 8
    material_len = old.n_slots * 2 * width
    return _key_from_material(old.tag_bits, old.n_slots, plain[:material_len], plain[material_len:])


def save_key(key: MacKey, path) -> None:
    header = KEY_MAGIC + struct.pack("<BHII", KEY_VERSION, key.tag_bits, key.n_slots, len(key.pad))
    with open(path, "wb") as fh:
        fh.write(header + _slot_material(key) + key.pad)


def load_key(path) -> MacKey:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != KEY_MAGIC:
        raise ValueError("bad key file magic")
    version, tag_bits, n_slots, pad_len = struct.unpack_from("<BHII", buf, 4)
    if version != KEY_VERSION:
        raise ValueError(f"unsupported key file version {version}")
    off = 4 + struct.calcsize("<BHII")
    width = tag_bits // 8
    material = buf[off : off + n_slots * 2 * width]
    pad = buf[off + n_slots * 2 * width : off + n_slots * 2 * width + pad_len]
    return _key_from_material(tag_bits, n_slots, material, pad)
