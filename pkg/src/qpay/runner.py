"""End-to-end protocol runs: three roles wired over framed transports.

One run executes the full payment: the client requests a token, the issuer
persists the classical description and streams the (channel-degraded) token,
the client commits to a merchant by measuring in its MAC-derived bases, the
merchant forwards the cryptogram, the issuer verifies and answers with a
decision. The issuer and merchant run on their own threads; the same role
code drives either in-process queues or loopback TCP sockets, and every
message passes through the binary frame codec in both modes.

Randomness is split into fixed per-purpose streams of the master seed, so a
run is reproducible and mode-independent: reports from the two transport
modes are byte-identical up to timing fields, which is what stable_hash
checks.
"""

from __future__ import annotations

import socket
import threading
import time
import hashlib
from dataclasses import dataclass, field


from . import itmac, wire
from .adversary import Knowledge, parse_strategy, run_double_spend
from .config import RunConfig
from .itmac import MacKey, MacSlot, MerchantId
from .protocol import (
    Cryptogram,
    Decision,
    TrustedTokenProvider,
    VerifyRequest,
    client_cryptogram,
    evaluate_cryptogram,
    merchant_forward,
    segment_analyzer_bits,
)
from .seeding import (
    STREAM_ATTACK,
    STREAM_KEYGEN,
    STREAM_MEASURE,
    STREAM_TOKEN,
    make_rng,
)
from .wire import (
    CryptogramMsg,
    DecisionMsg,
    IssueMsg,
    QueueTransport,
    SocketTransport,
    Transport,
    TransportError,
    VerifyReqMsg,
)

REPORT_VOLATILE_KEYS = ("mode", "timing_s", "config_hash")


def copy_key(key: MacKey) -> MacKey:
    """Independent copy; issuer and client each consume their own slots."""
    return MacKey(
        tag_bits=key.tag_bits,
        slots=[MacSlot(s.a, s.b, s.used, s.message) for s in key.slots],
        pad=key.pad,
        pad_used=key.pad_used,
    )


@dataclass
class RunReport:
    config_hash: str
    seed: int
    mode: str
    token_id: str
    token_length: int
    accepted: bool
    reason: str
    measured_error: float
    measured_loss: float
    checked_count: int
    message_counts: dict[str, int]
    timing_s: float
    extras: dict[str, object] = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "mode": self.mode,
            "token_id": self.token_id,
            "token_length": self.token_length,
            "accepted": self.accepted,
            "reason": self.reason,
            "measured_error": repr(self.measured_error),
            "measured_loss": repr(self.measured_loss),
            "checked_count": self.checked_count,
            "timing_s": repr(self.timing_s),
        }
        for k, v in self.message_counts.items():
            out[f"messages_{k}"] = v
        for k, v in self.extras.items():
            out[f"x_{k}"] = repr(v) if isinstance(v, float) else v
        return [f"{k}={out[k]}" for k in sorted(out)]

    def to_text(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def stable_hash(self) -> str:
        """Decision-equivalence hash: everything except transport mode,
        timing, and the mode-bearing config hash (which stays in the report
        for exact input binding)."""
        keep = [
            ln
            for ln in self.lines()
            if not any(ln.startswith(f"{k}=") for k in REPORT_VOLATILE_KEYS)
        ]
        return hashlib.sha256("\n".join(keep).encode()).hexdigest()[:16]


class _CountingTransport(Transport):
    def __init__(self, inner: Transport, counts: dict[str, int], lock: threading.Lock):
        self._inner = inner
        self._counts = counts
        self._lock = lock

    def send(self, msg: wire.Message) -> None:
        with self._lock:
            name = type(msg).__name__.removesuffix("Msg").upper()
            self._counts[name] = self._counts.get(name, 0) + 1
        self._inner.send(msg)

    def recv(self) -> wire.Message:
        return self._inner.recv()

    def close(self) -> None:
        self._inner.close()


def _socket_pair() -> tuple[SocketTransport, SocketTransport]:
    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.bind(("127.0.0.1", 0))
    listener.listen(1)
    port = listener.getsockname()[1]
    left = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    left.connect(("127.0.0.1", port))
    right, _ = listener.accept()
    listener.close()
    return SocketTransport(left), SocketTransport(right)


def _make_links(mode: str):
    """Three bidirectional links: client-ttp, client-merchant, merchant-ttp."""
    if mode == "inproc":
        return [QueueTransport.pair() for _ in range(3)]
    if mode == "socket":
        return [_socket_pair() for _ in range(3)]
    raise ValueError(f"unknown mode {mode!r}")


def _ttp_role(ttp: TrustedTokenProvider, t_client: Transport, t_merchant: Transport, rng) -> Decision:
    msg = t_client.recv()
    if not isinstance(msg, IssueMsg):
        raise TransportError(f"expected ISSUE, got {type(msg).__name__}")
    if msg.token_length != ttp.policy.token_length:
        raise TransportError("requested token length disagrees with policy")
    _, token = ttp.issue(msg.client_id, rng)
    for chunk in wire.token_to_chunks(token):
        t_client.send(chunk)
    req_msg = t_merchant.recv()
    if not isinstance(req_msg, VerifyReqMsg):
        raise TransportError(f"expected VERIFY_REQ, got {type(req_msg).__name__}")
    request = VerifyRequest(
        token_id=req_msg.token_id,
        merchant=req_msg.merchant,
        outcomes=wire.unpack_outcomes(req_msg.outcomes, req_msg.length),
    )
    decision = ttp.verify(request)
    t_merchant.send(
        DecisionMsg(
            token_id=req_msg.token_id,
            accepted=decision.accepted,
            measured_error=decision.measured_error,
            measured_loss=decision.measured_loss,
            checked_count=decision.checked_count,
            reason=decision.reason,
        )
    )
    return decision


def _client_role(cfg: RunConfig, key: MacKey, t_ttp: Transport, t_merchant: Transport, rng) -> str:
    policy = cfg.policy()
    t_ttp.send(IssueMsg(client_id=cfg.client_id, token_length=policy.token_length))
    chunks = []
    while True:
        msg = t_ttp.recv()
        if not isinstance(msg, wire.TokenChunkMsg):
            raise TransportError(f"expected TOKEN_CHUNK, got {type(msg).__name__}")
        chunks.append(msg)
        if len(chunks) == msg.chunk_count:
            break
    token = wire.token_from_chunks(chunks)
    crypt = client_cryptogram(
        key, key.next_unused_slot(), MerchantId.from_text(cfg.merchant_0), token, policy, rng
    )
    t_merchant.send(
        CryptogramMsg(
            token_id=crypt.token_id,
            merchant=crypt.merchant,
            outcomes=wire.pack_outcomes(crypt.outcomes),
            length=len(crypt),
        )
    )
    return token.token_id


def _merchant_role(cfg: RunConfig, t_client: Transport, t_ttp: Transport) -> DecisionMsg:
    msg = t_client.recv()
    if not isinstance(msg, CryptogramMsg):
        raise TransportError(f"expected CRYPTOGRAM, got {type(msg).__name__}")
    crypt = Cryptogram(
        token_id=msg.token_id,
        merchant=msg.merchant,
        outcomes=wire.unpack_outcomes(msg.outcomes, msg.length),
    )
    request = merchant_forward(crypt, MerchantId.from_text(cfg.merchant_0))
    t_ttp.send(
        VerifyReqMsg(
            token_id=request.token_id,
            merchant=request.merchant,
            outcomes=wire.pack_outcomes(request.outcomes),
            length=request.outcomes.size,
        )
    )
    reply = t_ttp.recv()
    if not isinstance(reply, DecisionMsg):
        raise TransportError(f"expected DECISION, got {type(reply).__name__}")
    return reply


def build_parties(cfg: RunConfig) -> tuple[TrustedTokenProvider, MacKey]:
    """Enrollment (out of band): one key, independent copies on both sides."""
    key_rng = make_rng(cfg.seed, STREAM_KEYGEN)
    master = itmac.keygen(cfg.tag_bits, cfg.mac_slots, key_rng, pad_bytes=cfg.pad_bytes)
    ttp = TrustedTokenProvider(cfg.policy(), cfg.channel())
    ttp.enroll(cfg.client_id, copy_key(master))
    return ttp, copy_key(master)


def run_protocol(cfg: RunConfig, mode: str | None = None) -> RunReport:
    """Execute steps 1-5 once and report the decision."""
    mode = mode or cfg.mode
    started = time.perf_counter()
    ttp, client_key = build_parties(cfg)
    links = _make_links(mode)
    (ct_client, ct_ttp), (cm_client, cm_merchant), (mt_merchant, mt_ttp) = links
    counts: dict[str, int] = {}
    lock = threading.Lock()
    ct_client, ct_ttp = _CountingTransport(ct_client, counts, lock), _CountingTransport(ct_ttp, counts, lock)
    cm_client, cm_merchant = _CountingTransport(cm_client, counts, lock), _CountingTransport(cm_merchant, counts, lock)
    mt_merchant, mt_ttp = _CountingTransport(mt_merchant, counts, lock), _CountingTransport(mt_ttp, counts, lock)

    token_rng = make_rng(cfg.seed, STREAM_TOKEN)
    measure_rng = make_rng(cfg.seed, STREAM_MEASURE)
    results: dict[str, object] = {}
    errors: list[BaseException] = []

    def guard(name, fn, *args):
        try:
            results[name] = fn(*args)
        except BaseException as exc:  # surfaced to the caller below
            errors.append(exc)

    t_ttp = threading.Thread(target=guard, args=("ttp", _ttp_role, ttp, ct_ttp, mt_ttp, token_rng))
    t_merchant = threading.Thread(target=guard, args=("merchant", _merchant_role, cfg, cm_merchant, mt_merchant))
    t_ttp.start()
    t_merchant.start()
    try:
        token_id = _client_role(cfg, client_key, ct_client, cm_client, measure_rng)
    finally:
        t_ttp.join(timeout=120)
        t_merchant.join(timeout=120)
        for t in links:
            for end in t:
                end.close()
    if errors:
        raise errors[0]
    decision_msg = results["merchant"]
    assert isinstance(decision_msg, DecisionMsg)
    return RunReport(
        config_hash=cfg.config_hash(),
        seed=cfg.seed,
        mode=mode,
        token_id=token_id,
        token_length=cfg.token_length,
        accepted=decision_msg.accepted,
        reason=decision_msg.reason,
        measured_error=decision_msg.measured_error,
        measured_loss=decision_msg.measured_loss,
        checked_count=decision_msg.checked_count,
        message_counts=counts,
        timing_s=time.perf_counter() - started,
    )


def run_attack(cfg: RunConfig) -> tuple[RunReport, RunReport]:
    """Issue one real token, double-spend it, verify both cryptograms.

    The live verifications go through the issuer's token store (the second
    one trips the double-spend alarm whatever its content); each report also
    carries the pure merits evaluation of its cryptogram against the stored
    description, which is what the attack's success probability is about.
    """
    started = time.perf_counter()
    ttp, client_key = build_parties(cfg)
    token_rng = make_rng(cfg.seed, STREAM_TOKEN)
    desc, token = ttp.issue(cfg.client_id, token_rng)
    slot = 0
    m0 = itmac.BasisString.from_int(
        int(itmac.evaluate_tag(cfg.tag_bits, client_key.slots[slot].a, client_key.slots[slot].b,
                               MerchantId.from_text(cfg.merchant_0).octets)),
        cfg.tag_bits,
    )
    m1 = itmac.BasisString.from_int(
        int(itmac.evaluate_tag(cfg.tag_bits, client_key.slots[slot].a, client_key.slots[slot].b,
                               MerchantId.from_text(cfg.merchant_1).octets)),
        cfg.tag_bits,
    )
    if m0.bits == m1.bits:
        raise ValueError("degenerate seed: both merchants map to one basis string")
    strategy = parse_strategy(cfg.strategy)
    knowledge = Knowledge.parse(cfg.knowledge)
    attack_rng = make_rng(cfg.seed, STREAM_ATTACK)
    result = run_double_spend(
        strategy,
        knowledge,
        token,
        m0,
        m1,
        attack_rng,
        merchant_0=MerchantId.from_text(cfg.merchant_0).octets,
        merchant_1=MerchantId.from_text(cfg.merchant_1).octets,
    )
    policy = cfg.policy()
    reports = []
    for which, crypt, m in ((0, result.crypt_0, m0), (1, result.crypt_1, m1)):
        live = ttp.verify(
            VerifyRequest(token_id=crypt.token_id, merchant=crypt.merchant, outcomes=crypt.outcomes)
        )
        merits = evaluate_cryptogram(
            desc, segment_analyzer_bits(m, cfg.n_per_bit), crypt.outcomes, policy
        )
        err, loss = result.rates(which)
        reports.append(
            RunReport(
                config_hash=cfg.config_hash(),
                seed=cfg.seed,
                mode="attack",
                token_id=crypt.token_id,
                token_length=cfg.token_length,
                accepted=live.accepted,
                reason=live.reason,
                measured_error=live.measured_error,
                measured_loss=live.measured_loss,
                checked_count=live.checked_count,
                message_counts={},
                timing_s=time.perf_counter() - started,
                extras={
                    "merchant": cfg.merchant_0 if which == 0 else cfg.merchant_1,
                    "merits_accepted": merits.accepted,
                    "merits_reason": merits.reason,
                    "claimed_loss": loss,
                    "realized_error": err,
                    "strategy": cfg.strategy,
                    "knowledge": cfg.knowledge,
                },
            )
        )
    return reports[0], reports[1]
