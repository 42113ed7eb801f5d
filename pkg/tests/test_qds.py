import json

import numpy as np
import pytest

from qkdnet.netsim import MessageBus
from qkdnet.qds import (
    Holding,
    InsecureChannelError,
    QdsParams,
    QdsReport,
    SignatureBlock,
    abort_and_forge,
    distill_report,
    eve_error_floor,
    extract_blocks,
    min_feasible_acquisition,
    n_blocks,
    qber_upper,
    repudiation_bound,
    run_signing_session,
    sign_and_verify,
    signature_length,
    symmetrise,
    thresholds,
    timing_report,
)

# Published reference chain (relay link / point-to-point link)
MDI = dict(s1=666_345, c_sig=2_500_000, eph=0.053, e_test=0.005, c_test=1_714_426)
QKD = dict(s1=86_563, c_sig=150_000, eph=0.0237, e_test=0.0017, c_test=46_979_354)
EPS_H = 2e-11
P_REP = 0.5e-10


class TestEveErrorFloor:
    def test_relay_reference_point(self):
        assert eve_error_floor(MDI["s1"], MDI["c_sig"], MDI["eph"]) == pytest.approx(
            0.0286, abs=5e-4
        )

    def test_point_to_point_reference(self):
        assert eve_error_floor(QKD["s1"], QKD["c_sig"], QKD["eph"]) == pytest.approx(
            0.105, abs=1e-3
        )

    def test_no_single_photons_no_guarantee(self):
        assert eve_error_floor(0, 1000, 0.1) == 0.0

    def test_domain(self):
        with pytest.raises(ValueError):
            eve_error_floor(1001, 1000, 0.1)
        with pytest.raises(ValueError):
            eve_error_floor(100, 1000, 0.6)


class TestQberUpper:
    def test_relay_reference_point(self):
        value = qber_upper(MDI["e_test"], MDI["c_test"], MDI["c_sig"], EPS_H)
        assert value == pytest.approx(0.0085, abs=1e-4)

    def test_point_to_point_reference(self):
        value = qber_upper(QKD["e_test"], QKD["c_test"], QKD["c_sig"], EPS_H)
        assert value == pytest.approx(0.0108, abs=1e-4)

    def test_eps_one_adds_nothing(self):
        assert qber_upper(0.017, 1000, 2000, 1.0) == 0.017


class TestThresholds:
    def test_relay_reference_point(self):
        s_auth, s_ver = thresholds(0.0085, 0.0286)
        assert s_auth == pytest.approx(0.0152, abs=1e-4)
        assert s_ver == pytest.approx(0.0219, abs=1e-4)

    def test_point_to_point_reference(self):
        s_auth, s_ver = thresholds(0.0108, 0.105)
        assert s_auth == pytest.approx(0.0421, abs=3e-4)
        assert s_ver == pytest.approx(0.0734, abs=3e-4)

    def test_linear_in_gap(self):
        eps = 3e-3
        s_auth, s_ver = thresholds(0.01, 0.01 + eps)
        assert s_auth == pytest.approx(0.01 + eps / 3, rel=1e-9)
        assert s_ver == pytest.approx(0.01 + 2 * eps / 3, rel=1e-9)

    def test_no_gap_is_insecure(self):
        with pytest.raises(InsecureChannelError):
            thresholds(0.03, 0.03)
        with pytest.raises(InsecureChannelError):
            thresholds(0.05, 0.03)


class TestSignatureLength:
    def test_relay_reference_point(self):
        s_auth, s_ver = thresholds(0.0085, 0.0286)
        l_sig = signature_length(s_auth, s_ver, P_REP)
        assert l_sig == 2_113_522  # frozen
        assert l_sig == pytest.approx(2.11e6, rel=0.02)

    def test_point_to_point_reference_discrepancy(self):
        # Inverting with the published thresholds lands about 7% below the
        # published 103,336 (unrounded intermediates on the reference side);
        # the documented gate is agreement within 10%.
        s_auth, s_ver = thresholds(0.0108, 0.105)
        l_sig = signature_length(s_auth, s_ver, P_REP)
        assert l_sig == 96_228  # frozen
        assert abs(l_sig - 103_336) / 103_336 < 0.10

    def test_trivial_budget_one(self):
        assert signature_length(0.01, 0.02, 1.0) == 0

    def test_round_trip_with_repudiation_bound(self):
        s_auth, s_ver = thresholds(0.0085, 0.0286)
        l_sig = signature_length(s_auth, s_ver, P_REP)
        assert repudiation_bound(s_auth, s_ver, l_sig) <= P_REP
        assert repudiation_bound(s_auth, s_ver, l_sig - 1) > P_REP

    def test_zero_gap_rejected(self):
        with pytest.raises(ValueError):
            signature_length(0.02, 0.02, P_REP)


class TestAbortAndForge:
    def test_far_below_threshold_at_reference_point(self):
        s_auth, s_ver = thresholds(0.0085, 0.0286)
        p_e = eve_error_floor(MDI["s1"], MDI["c_sig"], MDI["eph"])
        p_hab, p_for = abort_and_forge(0.0085, s_auth, s_ver, p_e, 2_500_000)
        assert p_hab < 1e-90
        assert p_for < 1e-90

    def test_zero_gap_gives_probability_one(self):
        assert abort_and_forge(0.01, 0.01, 0.01, 0.01, 1000) == (1.0, 1.0)

    def test_doubling_length_squares_the_bound(self):
        p_hab, _ = abort_and_forge(0.01, 0.02, 0.03, 0.04, 1000)
        p_hab2, _ = abort_and_forge(0.01, 0.02, 0.03, 0.04, 2000)
        assert p_hab2 == pytest.approx(p_hab**2, rel=1e-9)

    def test_ordering_violation_rejected(self):
        with pytest.raises(ValueError):
            abort_and_forge(0.05, 0.02, 0.03, 0.04, 1000)


class TestBlocks:
    def test_relay_pool_block_count(self):
        assert n_blocks(4_936_714_426, 1_714_426, 2_500_000) == 1974

    def test_point_to_point_pool_block_count(self):
        assert n_blocks(422_879_354, 46_979_354, 150_000) == 2506

    def test_minimal_pool_single_block(self):
        assert n_blocks(1000 + 300, 300, 1000) == 1

    def test_extract_matches_count_and_is_disjoint(self):
        rng = np.random.default_rng(0)
        pool = rng.integers(0, 2, size=10_000, dtype=np.int8)
        (test_idx, test_bits), blocks = extract_blocks(pool, 1_000, 2_500, seed=5)
        assert len(blocks) == n_blocks(10_000, 1_000, 2_500) == 3
        seen = set(test_idx.tolist())
        assert len(seen) == 1_000
        for block in blocks:
            idx = set(block.origin_indices.tolist())
            assert len(idx) == 2_500
            assert not idx & seen
            seen |= idx
            assert np.all(np.diff(block.origin_indices) > 0)
            assert np.array_equal(block.bit_values, pool[block.origin_indices])

    def test_deterministic(self):
        pool = np.arange(5000) % 2
        first = extract_blocks(pool, 100, 1000, seed=9)
        second = extract_blocks(pool, 100, 1000, seed=9)
        assert np.array_equal(first[0][0], second[0][0])
        assert all(
            np.array_equal(a.origin_indices, b.origin_indices)
            for a, b in zip(first[1], second[1])
        )

    def test_pool_too_small(self):
        with pytest.raises(ValueError):
            extract_blocks(np.zeros(100, dtype=np.int8), 80, 30, seed=1)


class TestTimingReport:
    def test_relay_average(self):
        value = timing_report(90_000, 500 / 502, 1974)
        assert value == pytest.approx(45.0, rel=0.02)

    def test_point_to_point_average(self):
        value = timing_report(90_000, 1 / 502, 2506)
        assert value == pytest.approx(0.072, rel=0.02)

    def test_trivial(self):
        assert timing_report(123.0, 1.0, 1) == 123.0

    def test_zero_signatures_rejected(self):
        with pytest.raises(ValueError):
            timing_report(10.0, 0.5, 0)


def make_block(link, bits, start=0):
    bits = np.asarray(bits, dtype=np.int8)
    return SignatureBlock(
        link=link, bit_values=bits, origin_indices=np.arange(start, start + len(bits))
    )


class TestSymmetrise:
    def test_zero_length_blocks(self):
        result = symmetrise(
            make_block("AB", []), make_block("AC", []), np.zeros(0, dtype=np.int8), seed=1
        )
        for holdings in result.final_holdings.values():
            assert sum(len(h.positions) for h in holdings) == 0

    def test_mask_round_trip_and_counting(self):
        rng = np.random.default_rng(3)
        c_sig = 400
        block_b = make_block("AB", rng.integers(0, 2, c_sig))
        block_c = make_block("AC", rng.integers(0, 2, c_sig))
        otp = rng.integers(0, 2, c_sig, dtype=np.int8)
        result = symmetrise(block_b, block_c, otp, seed=7)

        # transcripts are masked: they differ from the plaintext bits
        for sender, _, link, positions, masked in result.transcripts:
            src = block_b if link == "AB" else block_c
            assert not np.array_equal(masked, src.bit_values[positions])

        # each recipient ends with exactly c_sig positions: half kept, half
        # forwarded; forwarded bits decode to the peer's originals
        for name, peer_block, own_block in (("B", block_c, block_b), ("C", block_b, block_c)):
            holdings = result.final_holdings[name]
            assert sum(len(h.positions) for h in holdings) == c_sig
            for h in holdings:
                src = own_block if h.link == own_block.link else peer_block
                assert np.array_equal(h.bits, src.bit_values[h.positions])

    def test_insufficient_key_material(self):
        block = make_block("AB", np.ones(100))
        with pytest.raises(ValueError):
            symmetrise(block, block, np.zeros(99, dtype=np.int8), seed=1)

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        block_b = make_block("AB", rng.integers(0, 2, 100))
        block_c = make_block("AC", rng.integers(0, 2, 100))
        otp = rng.integers(0, 2, 100, dtype=np.int8)
        r1 = symmetrise(block_b, block_c, otp, seed=2)
        r2 = symmetrise(block_b, block_c, otp, seed=2)
        for name in ("B", "C"):
            for h1, h2 in zip(r1.final_holdings[name], r2.final_holdings[name]):
                assert np.array_equal(h1.positions, h2.positions)
                assert np.array_equal(h1.bits, h2.bits)


class TestSignAndVerify:
    def setup_method(self):
        rng = np.random.default_rng(11)
        self.l = 1000
        self.keys = {"AB": rng.integers(0, 2, self.l, dtype=np.int8)}
        self.positions = np.arange(self.l)

    def holdings(self, bits):
        return {"direct": [Holding("AB", self.positions, bits)],
                "forwarded": [Holding("AB", self.positions, bits)]}

    def test_zero_mismatches_both_accept(self):
        verdicts = sign_and_verify(
            0, self.keys, self.holdings(self.keys["AB"].copy()), 0.02, 0.05, self.l
        )
        assert verdicts["direct"].accepted
        assert verdicts["forwarded"].accepted

    def test_forger_at_error_floor_rejected(self):
        p_e = 0.10
        rng = np.random.default_rng(5)
        bits = self.keys["AB"].copy()
        flip = rng.random(self.l) < p_e
        bits = np.bitwise_xor(bits, flip.astype(np.int8))
        verdicts = sign_and_verify(0, self.keys, self.holdings(bits), 0.02, 0.05, self.l)
        assert not verdicts["forwarded"].accepted

    def test_exact_threshold_rejects(self):
        bits = self.keys["AB"].copy()
        bits[:20] = 1 - bits[:20]  # mismatch fraction exactly 0.02
        verdicts = sign_and_verify(0, self.keys, self.holdings(bits), 0.02, 0.05, self.l)
        assert not verdicts["direct"].accepted  # strict inequality
        assert verdicts["forwarded"].accepted  # 0.02 < 0.05

    def test_malformed_declaration_rejected_with_reason(self):
        holdings = {"direct": [Holding("XX", self.positions, self.keys["AB"])]}
        verdicts = sign_and_verify(0, self.keys, holdings, 0.02, 0.05, self.l)
        assert not verdicts["direct"].accepted
        assert "missing link" in verdicts["direct"].reason

    def test_short_block_rejected(self):
        holdings = {"direct": [Holding("AB", self.positions[:10], self.keys["AB"][:10])]}
        verdicts = sign_and_verify(0, self.keys, holdings, 0.02, 0.05, self.l)
        assert not verdicts["direct"].accepted
        assert "fewer than" in verdicts["direct"].reason


class TestSigningSession:
    def test_session_over_bus_matches_direct_verification(self):
        rng = np.random.default_rng(21)
        l = 500
        keys = {"AB": rng.integers(0, 2, l, dtype=np.int8),
                "AC": rng.integers(0, 2, l, dtype=np.int8)}
        half = np.arange(0, l, 2)
        holdings = {
            "direct": [Holding("AB", half, keys["AB"][half])],
            "forwarded": [Holding("AC", half, keys["AC"][half])],
        }
        bus = MessageBus()
        verdicts = run_signing_session(
            bus, "alice", "bob", "charlie", 1, keys, holdings, 0.02, 0.05, len(half)
        )
        assert verdicts["direct"].accepted
        assert verdicts["forwarded"].accepted
        assert len(bus.log) == 2  # declaration + transfer


class TestHonestAcceptanceFrequency:
    def test_honest_runs_accept_at_reduced_length(self):
        # honest channel errs at the test rate; acceptance frequency over
        # 10^4 seeded trials must beat 1 - 2*p_hab at the reduced length
        e_true, e_sig = 0.005, 0.0085
        s_auth, s_ver = thresholds(e_sig, 0.0286)
        l = 20_000
        p_hab, _ = abort_and_forge(e_sig, s_auth, s_ver, 0.0286, l)
        rng = np.random.default_rng(123)
        mism = rng.binomial(l, e_true, size=10_000)
        accepted = (mism < s_auth * l).mean()
        assert accepted >= 1 - 2 * p_hab


class TestDistillReport:
    def relay_report(self):
        params = QdsParams(c_sig=MDI["c_sig"], c_test=MDI["c_test"])
        return distill_report(
            s1_sig_lower=MDI["s1"],
            eph_sig_upper=MDI["eph"],
            e_test=MDI["e_test"],
            pool_size=4_936_714_426,
            params=params,
            total_time_s=90_000.0,
            duty_fraction=500 / 502,
        )

    def test_full_relay_chain(self):
        report = self.relay_report()
        assert report.p_e == pytest.approx(0.0286, abs=5e-4)
        assert report.e_sig_upper == pytest.approx(0.0085, abs=1e-4)
        assert report.s_auth == pytest.approx(0.0152, abs=1e-4)
        assert report.s_ver == pytest.approx(0.0219, abs=1e-4)
        assert report.l_sig == pytest.approx(2.11e6, rel=0.02)
        assert report.n_signatures == 1974
        assert report.avg_time_per_signature_s == pytest.approx(45.0, rel=0.02)
        assert report.secure

    def test_failure_budget_composition(self):
        report = self.relay_report()
        total = report.p_rep + report.p_hab + report.p_for + report.epsilon_spent
        assert total <= 1e-10

    def test_ordering_invariant(self):
        report = self.relay_report()
        assert (
            report.e_test
            <= report.e_sig_upper
            < report.s_auth
            < report.s_ver
            < report.p_e
        )

    def test_json_round_trip(self):
        report = self.relay_report()
        clone = QdsReport.from_json(report.to_json())
        assert clone == report
        doc = json.loads(report.to_json())
        assert doc["secure"] is True
        assert doc["params"]["c_sig"] == MDI["c_sig"]

    def test_insecure_channel_raises(self):
        params = QdsParams(c_sig=10_000, c_test=10_000, eps_h=1e-10)
        with pytest.raises(InsecureChannelError):
            distill_report(
                s1_sig_lower=100,  # nearly no certified single photons
                eph_sig_upper=0.49,
                e_test=0.2,
                pool_size=100_000,
                params=params,
                total_time_s=100.0,
                duty_fraction=0.5,
            )


class TestMinFeasibleAcquisition:
    def test_bisection_finds_boundary(self):
        assert min_feasible_acquisition(lambda n: n >= 1234, 1, 10_000) == 1234

    def test_infeasible_everywhere(self):
        assert min_feasible_acquisition(lambda n: False, 1, 100) is None

    def test_feasible_at_floor(self):
        assert min_feasible_acquisition(lambda n: True, 7, 100) == 7
