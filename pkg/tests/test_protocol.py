"""Issue/commit/verify flow, thresholds, one-time semantics."""

import math
import threading

import numpy as np
import pytest

from qpay import itmac, quantum
from qpay.itmac import MerchantId
from qpay.protocol import (
    REASON_ACCEPTED,
    REASON_ALREADY_SPENT,
    REASON_ERROR_EXCEEDED,
    REASON_LOSS_EXCEEDED,
    REASON_UNKNOWN_TOKEN,
    Cryptogram,
    Decision,
    TrustedTokenProvider,
    VerificationPolicy,
    VerifyRequest,
    client_cryptogram,
    evaluate_cryptogram,
    merchant_forward,
    segment_analyzer_bits,
)
from qpay.quantum import OUTCOME_NO_CLICK, ChannelModel
from qpay.runner import copy_key
from qpay.seeding import make_rng


def make_ttp(n_per_bit=8, tag_bits=16, e_t=0.05, l_t=0.3, channel=None, slots=4, seed=1):
    policy = VerificationPolicy(e_t, l_t, n_per_bit, tag_bits)
    ttp = TrustedTokenProvider(policy, channel)
    master = itmac.keygen(tag_bits, slots, make_rng(seed, 3))
    ttp.enroll("alice", copy_key(master))
    return ttp, copy_key(master), policy


def all_da_key(tag_bits: int) -> itmac.MacKey:
    # a=0, b=0 tags every message to 0 = all-DA segments (basis bit 0 = DA)
    key = itmac.keygen(tag_bits, 1, make_rng(99))
    key.slots[0].a = 0
    key.slots[0].b = 0
    return key


class TestIssue:
    def test_unknown_client_rejected(self):
        ttp, _, _ = make_ttp()
        with pytest.raises(KeyError):
            ttp.issue("mallory", make_rng(0))

    def test_fresh_token_ids(self):
        ttp, _, _ = make_ttp()
        rng = make_rng(1)
        d1, _ = ttp.issue("alice", rng)
        d2, _ = ttp.issue("alice", rng)
        assert d1.token_id != d2.token_id

    def test_description_persisted_before_release(self):
        ttp, _, _ = make_ttp()
        desc, token = ttp.issue("alice", make_rng(2))
        stored = ttp.records["alice"].issued[desc.token_id].description
        assert np.array_equal(stored.bits, desc.bits)
        assert np.array_equal(stored.bases, desc.bases)
        assert len(token) == ttp.policy.token_length

    def test_sizing_formula(self):
        policy = VerificationPolicy(0.035, 0.3, 100, 32)
        assert policy.token_length == 3200

    def test_key_exhaustion(self):
        ttp, _, _ = make_ttp(slots=1)
        ttp.issue("alice", make_rng(3))
        with pytest.raises(ValueError):
            ttp.issue("alice", make_rng(4))


class TestCryptogram:
    def test_all_vacuum_token_gives_all_noclick(self):
        ttp, key, policy = make_ttp(channel=ChannelModel(loss_prob=1.0))
        _, token = ttp.issue("alice", make_rng(5))
        crypt = client_cryptogram(key, 0, MerchantId.from_text("M0"), token, policy, make_rng(6))
        assert np.all(crypt.outcomes == OUTCOME_NO_CLICK)

    def test_noiseless_checked_positions_exact(self):
        ttp, key, policy = make_ttp()
        desc, token = ttp.issue("alice", make_rng(7))
        crypt = client_cryptogram(key, 0, MerchantId.from_text("M0"), token, policy, make_rng(8))
        m = itmac.tag(copy_key(key), 0, b"M0")
        analyzer = segment_analyzer_bits(m, policy.n_per_bit)
        checked = analyzer == desc.bases
        assert np.array_equal(crypt.outcomes[checked], desc.bits[checked])

    def test_length_mismatch_rejected(self):
        ttp, key, policy = make_ttp()
        _, token = quantum.generate_token(7, make_rng(9))
        with pytest.raises(ValueError):
            client_cryptogram(key, 0, MerchantId.from_text("M0"), token, policy, make_rng(10))

    def test_da_flip_rate_on_forced_da_segments(self):
        # error on checked positions tracks the DA flip when every segment is DA
        n_per_bit, tag_bits = 31250, 32  # one-million-position token
        policy = VerificationPolicy(0.05, 0.3, n_per_bit, tag_bits)
        ttp = TrustedTokenProvider(policy, ChannelModel(flip_prob_da=0.0328))
        key = all_da_key(tag_bits)
        ttp.enroll("alice", copy_key(key))
        desc, token = ttp.issue("alice", make_rng(11))
        crypt = client_cryptogram(copy_key(key), 0, MerchantId.from_text("M0"), token, policy, make_rng(12))
        checked = desc.bases == 0  # all segments DA
        rate = (crypt.outcomes[checked] != desc.bits[checked]).mean()
        assert abs(rate - 0.0328) < 0.002


class TestForward:
    def test_passthrough(self):
        crypt = Cryptogram("tok", b"M0", np.array([0, 1, 2], dtype=np.uint8))
        req = merchant_forward(crypt, MerchantId(b"M0"))
        assert req.token_id == "tok" and req.merchant == b"M0"
        assert np.array_equal(req.outcomes, crypt.outcomes)

    def test_foreign_merchant_rejected(self):
        crypt = Cryptogram("tok", b"M0", np.array([0], dtype=np.uint8))
        with pytest.raises(ValueError):
            merchant_forward(crypt, MerchantId(b"M1"))


def run_honest(ttp, key, policy, merchant=b"M0", seed=20):
    desc, token = ttp.issue("alice", make_rng(seed))
    slot = ttp.records["alice"].issued[desc.token_id].slot
    crypt = client_cryptogram(key, slot, MerchantId(merchant), token, policy, make_rng(seed + 1))
    req = merchant_forward(crypt, MerchantId(merchant))
    return desc, req


class TestVerify:
    def test_honest_noiseless_accepts_with_zero_rates(self):
        ttp, key, policy = make_ttp()
        _, req = run_honest(ttp, key, policy)
        decision = ttp.verify(req)
        assert decision.accepted
        assert decision.measured_error == 0.0
        assert decision.measured_loss == 0.0
        assert decision.reason == REASON_ACCEPTED

    def test_reference_rates_accept_at_megatoken(self):
        n_per_bit, tag_bits = 31250, 32
        policy = VerificationPolicy(0.035, 0.30, n_per_bit, tag_bits)
        channel = ChannelModel(loss_prob=0.224, flip_prob_da=0.0328, multi_prob=0.0)
        ttp = TrustedTokenProvider(policy, channel)
        key = all_da_key(tag_bits)  # forces every checked position into DA
        ttp.enroll("alice", copy_key(key))
        desc, token = ttp.issue("alice", make_rng(30))
        crypt = client_cryptogram(copy_key(key), 0, MerchantId(b"M0"), token, policy, make_rng(31))
        decision = ttp.verify(merchant_forward(crypt, MerchantId(b"M0")))
        assert decision.accepted
        assert abs(decision.measured_error - 0.0328) < 0.003
        assert abs(decision.measured_loss - 0.224) < 0.005

    def test_unknown_token(self):
        ttp, _, _ = make_ttp()
        req = VerifyRequest("ghost", b"M0", np.zeros(128, dtype=np.uint8))
        decision = ttp.verify(req)
        assert not decision.accepted and decision.reason == REASON_UNKNOWN_TOKEN

    def test_double_verify_flags_already_spent(self):
        ttp, key, policy = make_ttp()
        _, req = run_honest(ttp, key, policy)
        first = ttp.verify(req)
        second = ttp.verify(req)
        assert first.accepted
        assert not second.accepted and second.reason == REASON_ALREADY_SPENT

    def test_spent_even_on_rejection(self):
        ttp, key, policy = make_ttp()
        desc, req = run_honest(ttp, key, policy)
        garbage = VerifyRequest(req.token_id, req.merchant, 1 - (req.outcomes == 1).astype(np.uint8))
        first = ttp.verify(garbage)
        assert not first.accepted and first.reason == REASON_ERROR_EXCEEDED
        again = ttp.verify(req)
        assert again.reason == REASON_ALREADY_SPENT

    def test_loss_threshold_enforced(self):
        ttp, key, policy = make_ttp(l_t=0.1, channel=ChannelModel(loss_prob=0.5))
        _, req = run_honest(ttp, key, policy)
        decision = ttp.verify(req)
        assert not decision.accepted and decision.reason == REASON_LOSS_EXCEEDED

    def test_concurrent_double_spend_race_accepts_at_most_one(self):
        for seed in range(10):
            ttp, key, policy = make_ttp(seed=seed)
            _, req = run_honest(ttp, key, policy, seed=40 + seed)
            decisions: list[Decision] = []
            barrier = threading.Barrier(2)

            def racer():
                barrier.wait()
                decisions.append(ttp.verify(req))

            threads = [threading.Thread(target=racer) for _ in range(2)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            assert sum(d.accepted for d in decisions) <= 1

    def test_accept_implies_rates_within_thresholds(self):
        ttp, key, policy = make_ttp(channel=ChannelModel(loss_prob=0.2, flip_prob_da=0.02), slots=8)
        for seed in range(5):
            _, req = run_honest(ttp, key, policy, seed=60 + 2 * seed)
            d = ttp.verify(req)
            if d.accepted:
                assert d.measured_error <= policy.error_threshold
                assert d.measured_loss <= policy.loss_threshold


class TestUncheckedIndependence:
    def test_flipping_unchecked_bits_never_changes_decision(self):
        # fuzz: exactly assertable because the pure evaluator is reusable
        for seed in range(25):
            ttp, key, policy = make_ttp(seed=seed, channel=ChannelModel(loss_prob=0.2, flip_prob_hv=0.05))
            desc, req = run_honest(ttp, key, policy, seed=100 + 3 * seed)
            m = itmac.tag(copy_key(key), 0, b"M0")
            analyzer = segment_analyzer_bits(m, policy.n_per_bit)
            base = evaluate_cryptogram(desc, analyzer, req.outcomes, policy)
            unchecked = analyzer != desc.bases
            mutated = req.outcomes.copy()
            flips = (mutated == 0) & unchecked
            mutated[unchecked & (mutated == 1)] = 0
            mutated[flips] = 1
            after = evaluate_cryptogram(desc, analyzer, mutated, policy)
            assert base == after

    def test_randomizing_unchecked_outcomes_never_changes_decision(self):
        rng = make_rng(123)
        for seed in range(10):
            ttp, key, policy = make_ttp(seed=seed)
            desc, req = run_honest(ttp, key, policy, seed=200 + 3 * seed)
            m = itmac.tag(copy_key(key), 0, b"M0")
            analyzer = segment_analyzer_bits(m, policy.n_per_bit)
            base = evaluate_cryptogram(desc, analyzer, req.outcomes, policy)
            unchecked = analyzer != desc.bases
            mutated = req.outcomes.copy()
            mutated[unchecked] = rng.integers(0, 3, size=int(unchecked.sum()), dtype=np.uint8)
            after = evaluate_cryptogram(desc, analyzer, mutated, policy)
            assert base == after


class TestPolicy:
    def test_threshold_ranges(self):
        with pytest.raises(ValueError):
            VerificationPolicy(0.6, 0.3, 4, 8)
        with pytest.raises(ValueError):
            VerificationPolicy(0.03, 1.0, 4, 8)

    def test_accepted_decision_requires_accept_reason(self):
        with pytest.raises(ValueError):
            Decision(True, 0.0, 0.0, 1, REASON_ERROR_EXCEEDED)


def test_honest_completeness_with_margined_thresholds():
    # thresholds three sigma above the honest rates accept nearly always
    e_h, l_h = 0.02365, 0.224
    n_per_bit, tag_bits = 32, 16
    nt = n_per_bit * tag_bits
    e_t = e_h + 3 * math.sqrt(e_h / nt) + 0.01
    l_t = l_h + 3 * math.sqrt(l_h / nt)
    policy = VerificationPolicy(e_t, l_t, n_per_bit, tag_bits)
    channel = ChannelModel(loss_prob=l_h, flip_prob_hv=0.0145, flip_prob_da=0.0328)
    accepted = 0
    for seed in range(100):
        ttp = TrustedTokenProvider(policy, channel)
        master = itmac.keygen(tag_bits, 1, make_rng(seed, 3))
        ttp.enroll("alice", copy_key(master))
        desc, token = ttp.issue("alice", make_rng(seed, 0))
        crypt = client_cryptogram(copy_key(master), 0, MerchantId(b"M0"), token, policy, make_rng(seed, 2))
        if ttp.verify(merchant_forward(crypt, MerchantId(b"M0"))).accepted:
            accepted += 1
    assert accepted >= 99
