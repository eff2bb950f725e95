"""Three-party payment protocol: issuer (TTP), client, merchant.

The trusted token provider (TTP) issues one-time quantum tokens and keeps
their classical descriptions. The client turns a received token into a
cryptogram by measuring every position in a basis string derived from its
secret MAC key and the chosen merchant's public ID; segment s of the token
(positions [s*N, (s+1)*N)) is analyzed in the basis given by bit s of the
tag. The merchant forwards the cryptogram for verification. The TTP
recomputes the tag, compares outcomes only at checked positions (analyzer
basis equals preparation basis), and accepts iff the error rate over
checked-and-clicked positions and the no-click rate over checked positions
both stay within the policy thresholds.

Loss is measured within the checked set only, which is conservative: the
unchecked half of the token never influences a decision. Tokens are marked
spent on first verification regardless of outcome, so a rejected cryptogram
cannot be probed again; repayment uses a fresh token. Verification is
serialized through an atomic claim on the spent flag, so concurrent
double-spend attempts cannot both be accepted.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from . import itmac, quantum
from .itmac import BasisString, MacKey, MerchantId
from .quantum import (
    OUTCOME_NO_CLICK,
    ChannelModel,
    ClassicalDescription,
    QuantumToken,
)

# Decision reason codes.
REASON_ACCEPTED = "accepted"
REASON_ERROR_EXCEEDED = "error-above-threshold"
REASON_LOSS_EXCEEDED = "loss-above-threshold"
REASON_UNKNOWN_TOKEN = "unknown-token"
REASON_ALREADY_SPENT = "already-spent"  # double-spend alarm
REASON_MAC_SLOT_CONFLICT = "mac-slot-conflict"
REASON_NO_CHECKED = "no-checked-positions"


@dataclass(frozen=True)
class VerificationPolicy:
    """Acceptance thresholds and token sizing (length = n_per_bit * tag_bits)."""

    error_threshold: float
    loss_threshold: float
    n_per_bit: int
    tag_bits: int

    def __post_init__(self):
        if not 0.0 <= self.error_threshold < 0.5:
            raise ValueError("error threshold must lie in [0, 0.5)")
        if not 0.0 <= self.loss_threshold < 1.0:
            raise ValueError("loss threshold must lie in [0, 1)")
        if self.n_per_bit < 1 or self.tag_bits < 1:
            raise ValueError("n_per_bit and tag_bits must be >= 1")

    @property
    def token_length(self) -> int:
        return self.n_per_bit * self.tag_bits


@dataclass
class Cryptogram:
    """Per-position measurement outcomes bound to a merchant and token."""

    token_id: str
    merchant: bytes
    outcomes: np.ndarray

    def __post_init__(self):
        self.outcomes = np.asarray(self.outcomes, dtype=np.uint8)

    def __len__(self) -> int:
        return self.outcomes.size


@dataclass
class VerifyRequest:
    """What the merchant forwards to the TTP: the cryptogram, unmodified."""

    token_id: str
    merchant: bytes
    outcomes: np.ndarray

    def __post_init__(self):
        self.outcomes = np.asarray(self.outcomes, dtype=np.uint8)


@dataclass(frozen=True)
class Decision:
    accepted: bool
    measured_error: float
    measured_loss: float
    checked_count: int
    reason: str

    def __post_init__(self):
        if self.accepted and self.reason != REASON_ACCEPTED:
            raise ValueError("accepted decision must carry the accepted reason")


@dataclass
class IssuedToken:
    description: ClassicalDescription
    slot: int
    spent: bool = False


@dataclass
class ClientRecord:
    client_id: str
    mac_key: MacKey
    issued: dict[str, IssuedToken] = field(default_factory=dict)
    issue_count: int = 0


def segment_analyzer_bits(basis_string: BasisString, n_per_bit: int) -> np.ndarray:
    """Expand a tag to per-position analyzer basis bits (segment layout)."""
    return np.repeat(basis_string.to_array(), n_per_bit)


def client_cryptogram(
    key: MacKey,
    slot: int,
    merchant: MerchantId,
    token: QuantumToken,
    policy: VerificationPolicy,
    rng: np.random.Generator,
) -> Cryptogram:
    """Measure a received token in the MAC-derived basis string.

    The basis string never leaves this function; only outcomes are emitted.
    """
    if len(token) != policy.token_length:
        raise ValueError(
            f"token length {len(token)} does not match policy {policy.token_length}"
        )
    m = itmac.tag(key, slot, merchant)
    analyzer = segment_analyzer_bits(m, policy.n_per_bit)
    outcomes = quantum.measure_token(token, analyzer, rng)
    return Cryptogram(token_id=token.token_id, merchant=merchant.octets, outcomes=outcomes)


def merchant_forward(crypt: Cryptogram, merchant: MerchantId) -> VerifyRequest:
    """Wrap a cryptogram for verification; rejects a foreign merchant ID."""
    if crypt.merchant != merchant.octets:
        raise ValueError("cryptogram committed to a different merchant")
    return VerifyRequest(token_id=crypt.token_id, merchant=crypt.merchant, outcomes=crypt.outcomes)


def evaluate_cryptogram(
    description: ClassicalDescription,
    analyzer_bits: np.ndarray,
    outcomes: np.ndarray,
    policy: VerificationPolicy,
) -> Decision:
    """Pure acceptance rule: compare outcomes at checked positions only."""
    outcomes = np.asarray(outcomes, dtype=np.uint8)
    if outcomes.size != len(description):
        raise ValueError("cryptogram length does not match issued token")
    checked = analyzer_bits == description.bases
    n_checked = int(np.count_nonzero(checked))
    if n_checked == 0:
        return Decision(False, 0.0, 1.0, 0, REASON_NO_CHECKED)
    noclick = outcomes == OUTCOME_NO_CLICK
    loss = float(np.count_nonzero(noclick & checked)) / n_checked
    compared = checked & ~noclick
    n_compared = int(np.count_nonzero(compared))
    if n_compared == 0:
        error = 0.0
    else:
        error = float(np.count_nonzero((outcomes != description.bits) & compared)) / n_compared
    if error > policy.error_threshold:
        return Decision(False, error, loss, n_checked, REASON_ERROR_EXCEEDED)
    if loss > policy.loss_threshold:
        return Decision(False, error, loss, n_checked, REASON_LOSS_EXCEEDED)
    return Decision(True, error, loss, n_checked, REASON_ACCEPTED)


class TrustedTokenProvider:
    """Issuer and verifier; the only honest party.

    Holds one record per enrolled client (MAC key copy plus issued-token
    descriptions). The spent flag is claimed under a lock before any
    evaluation, so at most one verification of a token can ever succeed.
    """

    def __init__(self, policy: VerificationPolicy, channel: ChannelModel | None = None):
        self.policy = policy
        self.channel = channel or ChannelModel()
        self.records: dict[str, ClientRecord] = {}
        self._lock = threading.Lock()

    def enroll(self, client_id: str, mac_key: MacKey) -> ClientRecord:
        record = ClientRecord(client_id=client_id, mac_key=mac_key)
        self.records[client_id] = record
        return record

    def issue(self, client_id: str, rng: np.random.Generator) -> tuple[ClassicalDescription, QuantumToken]:
        """Issue a fresh token: persist the description, then release the token.

        The returned token has already traversed the configured channel.
        Slot assignment is implicit: the i-th issued token uses MAC slot i.
        """
        with self._lock:
            record = self.records.get(client_id)
            if record is None:
                raise KeyError(f"unknown client {client_id!r}")
            if record.issue_count >= record.mac_key.n_slots:
                raise ValueError("client MAC key exhausted; refresh before issuing")
            slot = record.issue_count
            record.issue_count += 1
            token_id = f"{client_id}-{slot:04d}-{int(rng.integers(0, 2**63)):016x}"
            desc, token = quantum.generate_token(
                self.policy.token_length, rng, token_id=token_id, client_id=client_id
            )
            record.issued[token_id] = IssuedToken(description=desc, slot=slot)
        sent = quantum.transmit(token, self.channel, rng)
        return desc, sent

    def _claim(self, token_id: str) -> tuple[ClientRecord | None, IssuedToken | None, str | None]:
        """Atomically look up a token and mark it spent; reports prior state."""
        with self._lock:
            for record in self.records.values():
                issued = record.issued.get(token_id)
                if issued is not None:
                    if issued.spent:
                        return record, issued, REASON_ALREADY_SPENT
                    issued.spent = True
                    return record, issued, None
        return None, None, REASON_UNKNOWN_TOKEN

    def verify(self, request: VerifyRequest) -> Decision:
        """Decide one verification request; the token is spent regardless."""
        record, issued, failure = self._claim(request.token_id)
        if failure is not None:
            return Decision(False, 0.0, 0.0, 0, failure)
        assert record is not None and issued is not None
        try:
            m = itmac.tag(record.mac_key, issued.slot, request.merchant)
        except itmac.SlotConflictError:
            return Decision(False, 0.0, 0.0, 0, REASON_MAC_SLOT_CONFLICT)
        analyzer = segment_analyzer_bits(m, self.policy.n_per_bit)
        return evaluate_cryptogram(issued.description, analyzer, request.outcomes, self.policy)
