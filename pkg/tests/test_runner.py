"""Three-role orchestration over both transports."""


from qpay.config import RunConfig
from qpay.runner import run_attack, run_protocol


def small_cfg(**kw):
    base = dict(seed=11, n_per_bit=10, tag_bits=16)
    base.update(kw)
    return RunConfig(**base)


class TestRunProtocol:
    def test_honest_default_accepts(self):
        report = run_protocol(small_cfg())
        assert report.accepted
        assert report.reason == "accepted"
        assert report.measured_loss < 0.30

    def test_noiseless_run_zero_rates(self):
        cfg = small_cfg(channel_loss=0.0, channel_flip_hv=0.0, channel_flip_da=0.0, channel_multi=0.0)
        report = run_protocol(cfg)
        assert report.accepted
        assert report.measured_error == 0.0
        assert report.measured_loss == 0.0

    def test_message_counts(self):
        report = run_protocol(small_cfg())
        assert report.message_counts["ISSUE"] == 1
        assert report.message_counts["CRYPTOGRAM"] == 1
        assert report.message_counts["VERIFYREQ"] == 1
        assert report.message_counts["DECISION"] == 1
        assert report.message_counts["TOKENCHUNK"] >= 1

    def test_same_seed_identical_reports_modulo_timing(self):
        r1 = run_protocol(small_cfg())
        r2 = run_protocol(small_cfg())
        strip = lambda rep: [ln for ln in rep.lines() if not ln.startswith("timing_s=")]
        assert strip(r1) == strip(r2)

    def test_cross_mode_equivalence(self):
        r_inproc = run_protocol(small_cfg(), mode="inproc")
        r_socket = run_protocol(small_cfg(), mode="socket")
        assert r_inproc.accepted == r_socket.accepted
        assert r_inproc.measured_error == r_socket.measured_error
        assert r_inproc.measured_loss == r_socket.measured_loss
        assert r_inproc.stable_hash() == r_socket.stable_hash()

    def test_large_token_chunked_over_socket(self):
        cfg = small_cfg(n_per_bit=5000, tag_bits=16)  # 80k positions, 2 chunks
        r = run_protocol(cfg, mode="socket")
        assert r.accepted
        assert r.message_counts["TOKENCHUNK"] == 2

    def test_report_text_shape(self):
        report = run_protocol(small_cfg())
        text = report.to_text()
        assert "config_hash=" in text
        assert "accepted=True" in text
        assert text == "\n".join(report.lines()) + "\n"


class TestRunAttack:
    def test_split_attack_rejected_on_loss(self):
        cfg = small_cfg(
            n_per_bit=2000,
            strategy="split(q=1)",
            knowledge="insider",
            channel_loss=0.0,
            channel_flip_hv=0.0,
            channel_flip_da=0.0,
            channel_multi=0.0,
        )
        r0, r1 = run_attack(cfg)
        # claimed loss ~50% > 30% threshold: neither cryptogram passes on merits
        assert r0.extras["merits_accepted"] is False
        assert r1.extras["merits_accepted"] is False
        assert not (r0.accepted or r1.accepted)

    def test_second_verification_trips_double_spend_alarm(self):
        cfg = small_cfg(strategy="intermediate(angle=22.5)", knowledge="insider")
        r0, r1 = run_attack(cfg)
        assert r1.reason == "already-spent"

    def test_intermediate_attack_rates(self):
        cfg = small_cfg(
            n_per_bit=30000,
            tag_bits=16,
            strategy="intermediate(angle=22.5)",
            knowledge="insider",
            channel_loss=0.0,
            channel_flip_hv=0.0,
            channel_flip_da=0.0,
            channel_multi=0.0,
        )
        r0, r1 = run_attack(cfg)
        for r in (r0, r1):
            assert abs(r.extras["realized_error"] - 0.1464) < 0.01
            assert r.extras["claimed_loss"] < 0.01
        # merits rejection comes from the error threshold
        assert r0.extras["merits_reason"] == "error-above-threshold"

    def test_deterministic(self):
        cfg = small_cfg(strategy="conflict(alpha=0.5,fill=drop)", knowledge="insider")
        a = run_attack(cfg)
        b = run_attack(cfg)
        assert a[0].extras["claimed_loss"] == b[0].extras["claimed_loss"]
        assert a[1].extras["realized_error"] == b[1].extras["realized_error"]
