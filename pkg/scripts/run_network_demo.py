#!/usr/bin/env python3
"""End-to-end demo: simulate the three-party network, distil a key and a
signature report from the relay link, and run one honest signing session."""

import argparse

import numpy as np

from qkdnet.channel import ChannelParams, IntensitySet, mdi_yield_model, qkd_yield_model
from qkdnet.decoy import estimate_bounds, restrict_to_block
from qkdnet.keyrate import SecurityParams, secure_key_length
from qkdnet.netsim import MessageBus, run_plan, schedule
from qkdnet.qds import (
    Holding,
    InsecureChannelError,
    QdsParams,
    distill_report,
    extract_blocks,
    run_signing_session,
)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--slots", type=int, default=10**7)
    parser.add_argument("--seed", type=int, default=505)
    args = parser.parse_args()

    side = ChannelParams(
        distance_km=0.0, detector_efficiency=0.95, dark_count_prob=1e-7, misalignment=0.002
    )
    intensities = IntensitySet(
        s=0.8, u=0.5, v=0.15, w=0.0, z_basis_prob=0.65, x_weights=(0.6, 0.25, 0.15)
    )
    models = {
        "AB": mdi_yield_model(side, side, bell_success=1.0, x_multiphoton_floor=0.02),
        "AC": qkd_yield_model(side),
        "BC": qkd_yield_model(side),
    }

    plan = schedule(args.slots, (500, 1, 1), 0.65, intensities, args.seed)
    result = run_plan(plan, models, seed=args.seed)
    for link, table in sorted(result.tables.items()):
        detected = sum(r.detected for r in table.entries.values())
        print(f"link {link}: {len(table.entries)} entries, {detected} detections, "
              f"z-pool {len(result.z_pools[link])}")

    table = result.tables["AB"]
    pool = result.z_pools["AB"]
    eps = 1e-4
    bounds = estimate_bounds(table, intensities, eps, "MDI")
    z_rec = table.z_entry()
    key = secure_key_length(
        bounds, z_rec.detected, z_rec.errors / z_rec.detected,
        SecurityParams(eps_sec=eps, eps_cor=1e-6), elapsed_s=args.slots / 1e9,
    )
    print(f"relay key: {key.secure_bits} bits ({key.rate_bps:.3g} bps in-session)")

    n_z = len(pool)
    c_sig = int(n_z * 0.55)
    c_test = n_z - c_sig - 10
    block_bounds = restrict_to_block(bounds, c_sig, z_rec.detected, eps)
    (test_idx, _), blocks = extract_blocks(np.asarray(pool.bits), c_test, c_sig, seed=args.seed)
    e_test = float(pool.error_flags[test_idx].mean())
    try:
        report = distill_report(
            block_bounds.s1_lower, block_bounds.eph_upper, e_test, pool_size=n_z,
            params=QdsParams(c_sig=c_sig, c_test=c_test, eps_h=eps, p_rep_budget=0.01,
                             p_fail_total=0.1),
            total_time_s=args.slots / 1e9 / (500 / 502), duty_fraction=500 / 502,
            epsilon_inherited=bounds.epsilon_spent + 2 * eps,
        )
    except InsecureChannelError as exc:
        print(f"no positive QDS rate at this acquisition size: {exc}")
        return
    print(f"signature report: p_e={report.p_e:.4f} E_sig={report.e_sig_upper:.4f} "
          f"thresholds=({report.s_auth:.4f}, {report.s_ver:.4f}) l_sig={report.l_sig} "
          f"secure={report.secure}")

    block = blocks[0]
    bob_bits = np.bitwise_xor(
        block.bit_values.astype(np.int8),
        pool.error_flags[block.origin_indices].astype(np.int8),
    )
    positions = np.arange(len(block))
    holdings = {
        "direct": [Holding("AB", positions, bob_bits)],
        "forwarded": [Holding("AB", positions, bob_bits)],
    }
    verdicts = run_signing_session(
        MessageBus(), "alice", "bob", "charlie", 0, {"AB": block.bit_values},
        holdings, report.s_auth, report.s_ver, report.l_sig,
    )
    for role, verdict in verdicts.items():
        print(f"{role} recipient: accepted={verdict.accepted} "
              f"({verdict.mismatches}/{verdict.checked} mismatches, "
              f"threshold {verdict.threshold:.4f})")


if __name__ == "__main__":
    main()
