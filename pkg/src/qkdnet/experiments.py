"""Experiment harnesses built on the analysis stack.

The centrepiece compares the multi-signature-per-block protocol against the
classical one-signature-per-acquisition baseline on the same synthetic pool
and equal per-signature failure budgets: the baseline pays the full
statistical fluctuation (decoy widening plus QBER sampling) once per
signature, the multi-block protocol pays it once per acquisition and only a
Serfling sampling penalty per block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .channel import CountRecord, IntensitySet, expected_gain_and_qber
from .decoy import CountTable, estimate_bounds, restrict_to_block
from .qds import (
    InsecureChannelError,
    QdsParams,
    distill_report,
    min_feasible_acquisition,
    n_blocks,
)

__all__ = ["MultisigComparison", "expected_table", "multisig_comparison"]

X_LABELS = ("u", "v", "w")


def expected_table(model, intensities: IntensitySet, n_pulses: int, mode: str, link: str) -> CountTable:
    """Deterministic count table at the expected values (no sampling noise).

    Smooth in the pulse budget, which the baseline's bisection over
    acquisition sizes relies on.
    """
    table = CountTable(link=link)
    z = intensities.z_basis_prob
    xp = intensities.x_probs()
    if mode == "QKD":
        shares = {(("s",), "Z"): z}
        shares.update(
            {((l,), "X"): (1.0 - z) * p for l, p in zip(X_LABELS, xp)}
        )
    else:
        shares = {(("s", "s"), "Z"): z * z}
        shares.update(
            {
                ((la, lb), "X"): (1.0 - z) ** 2 * pa * pb
                for la, pa in zip(X_LABELS, xp)
                for lb, pb in zip(X_LABELS, xp)
            }
        )
    for (key, basis), share in shares.items():
        sent = round(n_pulses * share)
        if mode == "QKD":
            gain, qber = expected_gain_and_qber(model, intensities.mu(key[0]), basis=basis)
            gain *= 0.5  # passive analyzer
        else:
            gain, qber = expected_gain_and_qber(
                model, intensities.mu(key[0]), intensities.mu(key[1]), basis=basis
            )
        detected = round(sent * gain)
        table.add(key, basis, CountRecord(sent, detected, round(detected * qber)))
    return table


@dataclass(frozen=True)
class MultisigComparison:
    n_multi: int
    n_baseline: int
    c_sig_multi: int
    min_acquisition_pulses: int | None
    ratio: float


def _distill(table, intensities, mode, c_sig, eps_decoy, eps_h, p_rep, p_fail):
    """One full per-block analysis; None when the block is not signable."""
    bounds = estimate_bounds(table, intensities, eps_decoy, mode)
    z_rec = table.z_entry()
    n_z = z_rec.detected
    if c_sig >= n_z:
        return None
    c_test = n_z - c_sig
    block = restrict_to_block(bounds, c_sig, n_z, eps_h)
    e_test = z_rec.errors / z_rec.detected
    params = QdsParams(
        c_sig=c_sig, c_test=c_test, eps_h=eps_h, p_rep_budget=p_rep, p_fail_total=p_fail
    )
    try:
        report = distill_report(
            block.s1_lower,
            block.eph_upper,
            e_test,
            pool_size=n_z,
            params=params,
            total_time_s=1.0,
            duty_fraction=1.0,
            epsilon_inherited=bounds.epsilon_spent + 2.0 * eps_h,
        )
    except (InsecureChannelError, ValueError):
        return None
    return report if report.secure else None


def multisig_comparison(
    model,
    intensities: IntensitySet,
    mode: str,
    n_pulses_total: int,
    test_fraction: float = 0.1,
    eps_decoy: float = 1e-11,
    eps_h: float = 2e-11,
    p_rep: float = 0.5e-10,
    p_fail: float = 1e-10,
) -> MultisigComparison:
    """Signatures from one acquisition: multi-block protocol vs baseline.

    Both protocols get identical per-signature budgets; the multi-block
    side conservatively charges its shared decoy and test estimates in full
    against every signature.  The baseline's acquisition size is the
    smallest one whose own single block is signable, found by bisection
    (expected-value tables keep feasibility monotone).
    """
    link = "AB" if mode == "MDI" else "AC"
    table = expected_table(model, intensities, n_pulses_total, mode, link)
    z_rec = table.z_entry()
    n_z = z_rec.detected
    bounds = estimate_bounds(table, intensities, eps_decoy, mode)
    e_test = z_rec.errors / z_rec.detected
    c_test = int(n_z * test_fraction)

    def block_signable(c_sig: int) -> bool:
        if c_sig < 1 or c_sig > n_z - c_test:
            return False
        block = restrict_to_block(bounds, c_sig, n_z, eps_h)
        params = QdsParams(
            c_sig=c_sig, c_test=c_test, eps_h=eps_h, p_rep_budget=p_rep, p_fail_total=p_fail
        )
        try:
            report = distill_report(
                block.s1_lower,
                block.eph_upper,
                e_test,
                pool_size=n_z,
                params=params,
                total_time_s=1.0,
                duty_fraction=1.0,
                epsilon_inherited=bounds.epsilon_spent + 2.0 * eps_h,
            )
        except (InsecureChannelError, ValueError):
            return False
        return report.secure

    c_sig_min = min_feasible_acquisition(block_signable, 1, n_z - c_test)
    if c_sig_min is None:
        return MultisigComparison(0, 0, 0, None, 0.0)
    n_multi = n_blocks(n_z, c_test, c_sig_min)

    def acquisition_signable(n_pulses: int) -> bool:
        sub = expected_table(model, intensities, n_pulses, mode, link)
        sub_z = sub.z_entry().detected
        c_sig = sub_z - int(sub_z * test_fraction)
        try:
            return (
                _distill(sub, intensities, mode, c_sig, eps_decoy, eps_h, p_rep, p_fail)
                is not None
            )
        except (InsecureChannelError, ValueError, KeyError):
            return False

    b_min = min_feasible_acquisition(acquisition_signable, 1000, n_pulses_total)
    n_baseline = n_pulses_total // b_min if b_min else 0
    ratio = n_multi / n_baseline if n_baseline else math.inf
    return MultisigComparison(
        n_multi=n_multi,
        n_baseline=n_baseline,
        c_sig_multi=c_sig_min,
        min_acquisition_pulses=b_min,
        ratio=ratio,
    )
