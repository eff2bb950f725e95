"""Secure region optimizer, Chernoff bounds, oracle cross-checks."""

import math

import numpy as np
import pytest

from qpay.adversary import (
    ConflictAware,
    Intermediate,
    Knowledge,
    Split,
    expected_rates,
)
from qpay.security import (
    ChernoffParams,
    PerQubitGame,
    argmin_attack_strategy,
    binary_kl,
    chernoff_csv_lines,
    chernoff_dishonest,
    chernoff_dishonest_log10,
    chernoff_honest,
    midpoint_threshold,
    optimal_attack_error,
    region_csv_lines,
    secure_region,
    token_length,
)

OUTSIDER = PerQubitGame(knowledge=Knowledge.OUTSIDER)
INSIDER = PerQubitGame(knowledge=Knowledge.INSIDER)
SIN2_22_5 = math.sin(math.radians(22.5)) ** 2


def brute_force_zero_loss_error(step=0.05):
    """Independent oracle: scan analyzer angles, explicit four-state average."""
    best = 1.0
    states = [(0, 0.0), (1, 90.0), (0, 45.0), (1, 135.0)]  # (bit, polarization)
    theta = 0.0
    while theta < 90.0:
        err = 0.0
        for bit, phi in states:
            p_zero = math.cos(math.radians(theta - phi)) ** 2
            p_report_wrong = p_zero if bit == 1 else 1.0 - p_zero
            err += p_report_wrong / 4.0
        best = min(best, err, 1.0 - err)
        theta += step
    return best


class TestOptimizerAnchors:
    def test_outsider_zero_loss_matches_brute_force(self):
        oracle = brute_force_zero_loss_error()
        point = optimal_attack_error(0.0, OUTSIDER)
        assert abs(point.min_error - oracle) < 1e-3
        assert abs(point.min_error - 0.14645) < 1e-3

    def test_insider_full_loss_budget_error_free(self):
        assert optimal_attack_error(0.5, INSIDER).min_error <= 1e-3

    def test_insider_quarter_loss_already_error_free(self):
        assert optimal_attack_error(0.25, INSIDER).min_error <= 1e-6

    def test_outsider_flat_without_multi(self):
        values = [optimal_attack_error(l, OUTSIDER).min_error for l in (0.0, 0.2, 0.5)]
        assert max(values) - min(values) < 1e-9

    def test_insider_zero_loss_halves_outsider_error(self):
        # agreement positions are free for an insider, so only conflicting
        # halves pay the intermediate-angle error
        point = optimal_attack_error(0.0, INSIDER)
        assert point.min_error == pytest.approx(SIN2_22_5 / 2, abs=1e-6)

    def test_negative_budget_rejected(self):
        with pytest.raises(ValueError):
            optimal_attack_error(-0.01, OUTSIDER)

    def test_resolution_capped_at_half_degree(self):
        with pytest.raises(ValueError):
            optimal_attack_error(0.0, OUTSIDER, angle_step_deg=1.0)

    def test_multiphoton_gives_outsider_some_loss_leverage(self):
        game = PerQubitGame(knowledge=Knowledge.OUTSIDER, multi_prob=0.0676)
        at_zero = optimal_attack_error(0.0, game).min_error
        at_budget = optimal_attack_error(0.10, game).min_error
        assert at_zero == pytest.approx(0.14645, abs=1e-3)
        assert at_budget < at_zero


class TestRegion:
    def test_boundary_nonincreasing_11_points(self):
        grid = np.linspace(0.0, 0.5, 11)
        for game in (OUTSIDER, INSIDER, PerQubitGame(Knowledge.INSIDER, multi_prob=0.0676)):
            region = secure_region(grid, game)
            errors = [p.min_error for p in region.points]
            assert all(a >= b - 1e-12 for a, b in zip(errors, errors[1:]))

    def test_is_secure_noiseless_origin(self):
        region = secure_region(np.linspace(0, 0.5, 11), OUTSIDER)
        assert region.is_secure(0.0, 0.0)

    def test_is_secure_rejects_high_error(self):
        region = secure_region(np.linspace(0, 0.5, 11), OUTSIDER)
        assert not region.is_secure(0.2, 0.0)  # 0.2 > 0.1464

    def test_honest_point_secure_under_outsider(self):
        game = PerQubitGame(Knowledge.OUTSIDER, multi_prob=0.0676)
        region = secure_region(np.linspace(0, 0.5, 11), game)
        assert region.is_secure(0.0328, 0.224)

    def test_honest_point_not_secure_under_insider(self):
        # the conflict-aware family undercuts the honest error at this loss;
        # the published richer-model boundary sits between the two curves
        region = secure_region(np.linspace(0, 0.5, 11), INSIDER)
        assert not region.is_secure(0.0328, 0.224)

    def test_csv_contains_reference_row_and_hash(self):
        region = secure_region(np.linspace(0, 0.5, 3), OUTSIDER, angle_step_deg=0.5)
        lines = region_csv_lines(region, config_hash="cafebabe")
        assert lines[0] == "# config_hash=cafebabe"
        assert lines[1].startswith("kind,loss,")
        ref = [ln for ln in lines if ln.startswith("published-reference")]
        ours = [ln for ln in lines if ln.startswith("computed-at-reference-loss")]
        assert len(ref) == 1 and "0.0379" in ref[0] and "0.224" in ref[0]
        assert len(ours) == 1


class TestOracleConsistency:
    """The optimizer may only improve on the named families, and matches them
    exactly where its action space reduces to the family parameterization."""

    @pytest.mark.parametrize("loss", np.linspace(0.0, 0.5, 11).tolist())
    def test_optimizer_never_worse_than_families_insider(self, loss):
        e_opt = optimal_attack_error(loss, INSIDER).min_error
        best_family = min(
            err
            for err, l in (
                expected_rates(ConflictAware(a, "drop"), Knowledge.INSIDER)
                for a in np.linspace(0, 1, 201)
            )
            if l <= loss + 1e-12
        )
        assert e_opt <= best_family + 1e-9

    @pytest.mark.parametrize("loss", np.linspace(0.0, 0.5, 11).tolist())
    def test_optimizer_equals_family_minimum_insider(self, loss):
        # dual route: envelope arithmetic vs the adversary module's closed
        # forms over the same parameterization
        e_opt = optimal_attack_error(loss, INSIDER).min_error
        candidates = []
        for a in np.linspace(0, 1, 2001):
            err, l = expected_rates(ConflictAware(a, "drop"), Knowledge.INSIDER)
            if l <= loss + 1e-12:
                candidates.append(err)
        err_split, l_split = expected_rates(Split(1.0), Knowledge.INSIDER)
        if l_split <= loss + 1e-12:
            candidates.append(err_split)
        assert abs(e_opt - min(candidates)) < 1e-3

    @pytest.mark.parametrize("loss", [0.0, 0.1, 0.3, 0.5])
    def test_optimizer_equals_intermediate_outsider(self, loss):
        e_opt = optimal_attack_error(loss, OUTSIDER).min_error
        err, _ = expected_rates(Intermediate(22.5), Knowledge.OUTSIDER)
        assert abs(e_opt - err) < 1e-9

    def test_argmin_strategy_achieves_the_optimum(self):
        for loss in (0.0, 0.1, 0.2):
            point = optimal_attack_error(loss, INSIDER)
            strat = argmin_attack_strategy(loss, INSIDER)
            err, l = expected_rates(strat, Knowledge.INSIDER)
            assert l <= loss + 1e-9
            assert abs(err - point.min_error) < 1e-6


class TestBinaryKl:
    def test_zero_at_equality(self):
        assert binary_kl(0.3, 0.3) == 0.0

    def test_infinite_at_impossible(self):
        assert binary_kl(0.5, 0.0) == math.inf
        assert binary_kl(0.5, 1.0) == math.inf

    def test_endpoint_conventions(self):
        assert binary_kl(0.0, 0.2) == pytest.approx(-math.log(0.8))
        assert binary_kl(1.0, 0.2) == pytest.approx(-math.log(0.2))

    def test_domain(self):
        with pytest.raises(ValueError):
            binary_kl(1.2, 0.5)


BASE = dict(e_h=0.0328, l_h=0.224, e_t=0.035, l_t=0.30)


class TestChernoffHonest:
    def test_zero_when_thresholds_at_rates(self):
        p = ChernoffParams(n_per_bit=1000, e_h=0.03, l_h=0.2, e_t=0.03, l_t=0.2, e_d=0.14)
        assert chernoff_honest(p) == 0.0  # KL vanishes at equality

    def test_zero_when_ordering_fails(self):
        p = ChernoffParams(n_per_bit=1000, e_h=0.05, l_h=0.2, e_t=0.03, l_t=0.3, e_d=0.14)
        assert chernoff_honest(p) == 0.0

    def test_monotone_to_one_in_n(self):
        values = [
            chernoff_honest(ChernoffParams(n_per_bit=n, e_d=0.14, **BASE))
            for n in (10_000, 40_000, 160_000, 640_000)
        ]
        assert all(a <= b for a, b in zip(values, values[1:]))
        assert values[-1] > 0.9999

    def test_regression_locked_value(self):
        # frozen via the stated formula with n = 1e5/2 checked comparisons
        p = ChernoffParams(n_per_bit=100_000, e_d=0.14, **BASE)
        assert p.n_checked == 50_000
        n = 50_000
        expect = (
            1.0
            - math.exp(-n * binary_kl(0.035, 0.0328))
            - math.exp(-n * binary_kl(0.30, 0.224))
        )
        assert expect == pytest.approx(0.9761125969193909, abs=1e-12)
        assert chernoff_honest(p) == pytest.approx(expect, abs=1e-15)


class TestChernoffDishonest:
    def test_no_security_when_threshold_above_floor(self):
        p = ChernoffParams(n_per_bit=1000, e_d=0.03, **BASE)
        assert chernoff_dishonest(p) == 1.0
        assert chernoff_dishonest_log10(p) == 0.0

    def test_zero_threshold_reduces_to_power_law(self):
        # e_T = 0: bound collapses to (1 - e_d)^n
        e_d = 0.1464
        p = ChernoffParams(n_per_bit=100, e_h=0.0, l_h=0.0, e_t=0.0, l_t=0.3, e_d=e_d, check_fraction=1.0)
        assert chernoff_dishonest(p) == pytest.approx((1 - e_d) ** 100, rel=1e-12)

    def test_log_linear_in_n(self):
        ns = np.array([1_000, 2_000, 5_000, 10_000, 50_000, 100_000])
        logs = np.array(
            [
                chernoff_dishonest_log10(ChernoffParams(n_per_bit=int(n), e_d=0.1464, **BASE))
                for n in ns
            ]
        )
        slope, intercept = np.polyfit(ns, logs, 1)
        pred = slope * ns + intercept
        ss_res = float(((logs - pred) ** 2).sum())
        ss_tot = float(((logs - logs.mean()) ** 2).sum())
        assert 1 - ss_res / ss_tot > 0.999

    def test_reference_scale_token_far_below_target(self):
        # a 4.2e6-state, one-bit token: our bound must land at or below 1e-20
        game = PerQubitGame(Knowledge.OUTSIDER, multi_prob=0.0676)
        e_d = optimal_attack_error(0.30, game).min_error
        e_t = midpoint_threshold(0.0328, e_d)
        p = ChernoffParams(n_per_bit=4_200_000, e_h=0.0328, l_h=0.224, e_t=e_t, l_t=0.30, e_d=e_d, tag_bits=1)
        assert chernoff_dishonest_log10(p) <= -20.0
        assert chernoff_dishonest_log10(p) == pytest.approx(-12245.613693090256, abs=1e-6)


class TestTokenLength:
    def test_values(self):
        assert token_length(100, 32) == 3200
        assert token_length(1, 1) == 1
        assert token_length(4_200_000, 1) == 4_200_000

    def test_validation(self):
        with pytest.raises(ValueError):
            token_length(0, 8)


def test_chernoff_csv_shape():
    base = ChernoffParams(n_per_bit=10, e_d=0.1464, **BASE)
    lines = chernoff_csv_lines([10, 100, 1000], base, config_hash="deadbeef")
    assert lines[0] == "# config_hash=deadbeef"
    assert lines[1] == "n_per_bit,p_h_lower,p_d_upper,log10_p_d_upper"
    assert len(lines) == 5
    assert lines[2].startswith("10,")
