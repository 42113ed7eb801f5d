"""Quantum digital signature distillation and use.

One undisclosed Z-basis data block of c_sig bits signs one 1-bit message.
A single decoy estimation and a single QBER test sample serve the whole
acquisition, and every signature block drawn from the remainder inherits
the pool-level bounds through Serfling sampling penalties; that is what
lets many signatures share one acquisition instead of paying the full
statistical fluctuation per signature.

Security quantities per block: the minimum error rate an attacker must
cause (from the single-photon bounds), the QBER upper bound (test sample
plus Serfling), authentication/verification thresholds splitting that gap,
the signature length that meets the repudiation budget, and Hoeffding
bounds on honest abort and forging.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .mathkit import (
    binary_entropy,
    check_probability,
    hoeffding_exponent_bound,
    hoeffding_exponent_log,
    inv_binary_entropy,
    serfling_deviation,
)
from .netsim import MessageBus

__all__ = [
    "QdsParams",
    "QdsReport",
    "SignatureBlock",
    "Holding",
    "Verdict",
    "SymmetriseResult",
    "InsecureChannelError",
    "eve_error_floor",
    "qber_upper",
    "thresholds",
    "signature_length",
    "abort_and_forge",
    "n_blocks",
    "extract_blocks",
    "timing_report",
    "symmetrise",
    "sign_and_verify",
    "distill_report",
    "run_signing_session",
    "min_feasible_acquisition",
]

#: refuse to materialise block indices above this pool size
MAX_MATERIALISED_POOL = 200_000_000

#: default gap fractions for the authentication/verification thresholds
THIRDS = (1.0 / 3.0, 2.0 / 3.0)


class InsecureChannelError(ValueError):
    """The channel error bound leaves no gap below the attacker floor."""


@dataclass(frozen=True)
class QdsParams:
    """Block sizes and failure budgets for one signature distillation."""

    c_sig: int
    c_test: int
    eps_h: float = 2e-11
    p_rep_budget: float = 0.5e-10
    p_fail_total: float = 1e-10

    def __post_init__(self):
        if self.c_sig < 1 or self.c_test < 1:
            raise ValueError("c_sig and c_test must be >= 1")
        if not 0.0 < self.eps_h < 1.0:
            raise ValueError("eps_h must be in (0, 1)")
        if not 0.0 < self.p_rep_budget < 1.0:
            raise ValueError("p_rep_budget must be in (0, 1)")


@dataclass(frozen=True)
class QdsReport:
    """Self-contained record of one signature-security analysis."""

    p_e: float
    e_test: float
    e_sig_upper: float
    s_auth: float
    s_ver: float
    l_sig: int
    p_rep: float
    p_hab: float
    p_for: float
    log10_p_hab: float
    log10_p_for: float
    n_signatures: int
    avg_time_per_signature_s: float
    epsilon_spent: float
    params: dict = field(default_factory=dict)

    @property
    def secure(self) -> bool:
        """Ordering gap, block feasibility and total failure budget all hold."""
        ordered = (
            self.e_test <= self.e_sig_upper < self.s_auth < self.s_ver < self.p_e
        )
        total = self.p_rep + self.p_hab + self.p_for + self.epsilon_spent
        fits = self.l_sig <= self.params.get("c_sig", self.l_sig)
        return ordered and fits and total <= self.params.get("p_fail_total", 1.0)

    def to_json(self) -> str:
        doc = asdict(self)
        doc["secure"] = self.secure
        return json.dumps(doc, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "QdsReport":
        doc = json.loads(text)
        doc.pop("secure", None)
        return cls(**doc)


@dataclass(frozen=True)
class SignatureBlock:
    """One message's worth of undisclosed key bits drawn from a Z pool."""

    link: str
    bit_values: np.ndarray
    origin_indices: np.ndarray

    def __post_init__(self):
        if len(self.bit_values) != len(self.origin_indices):
            raise ValueError("bit_values and origin_indices must have equal length")
        if len(self.origin_indices) > 1 and not np.all(np.diff(self.origin_indices) > 0):
            raise ValueError("origin_indices must be strictly increasing")

    def __len__(self):
        return len(self.bit_values)


def eve_error_floor(s1_sig_lower: int, c_sig: int, eph_sig_upper: float) -> float:
    """Minimum error rate an attacker must cause on the signature block.

    Inverts h(p_E) = (S1/C_sig) (1 - h(e_ph)); with no certified
    single-photon counts there is no guarantee and the floor is zero.
    """
    if not 0 <= s1_sig_lower <= c_sig:
        raise ValueError("need 0 <= s1_sig_lower <= c_sig")
    if not 0.0 <= eph_sig_upper <= 0.5:
        raise ValueError("eph_sig_upper must be in [0, 0.5]")
    if s1_sig_lower == 0:
        return 0.0
    rhs = (s1_sig_lower / c_sig) * (1.0 - binary_entropy(eph_sig_upper))
    if rhs > 1.0:
        raise ValueError(f"entropy rate {rhs} > 1 is impossible")
    return inv_binary_entropy(rhs)


def qber_upper(e_test: float, c_test: int, c_sig: int, eps_h: float) -> float:
    """QBER bound for a signature block: test rate plus the Serfling term."""
    check_probability(e_test, "e_test")
    return min(1.0, e_test + serfling_deviation(c_sig, c_test, eps_h))


def thresholds(
    e_sig_upper: float, p_e: float, fractions: tuple = THIRDS
) -> tuple[float, float]:
    """Authentication and verification thresholds inside the (QBER, p_E) gap.

    Defaults to equal thirds: s_auth one third above the QBER bound and
    s_ver one third below the attacker floor.
    """
    f_auth, f_ver = fractions
    if not 0.0 < f_auth < f_ver < 1.0:
        raise ValueError("threshold fractions must satisfy 0 < f_auth < f_ver < 1")
    gap = p_e - e_sig_upper
    if gap <= 0.0:
        raise InsecureChannelError(
            f"no threshold gap: QBER bound {e_sig_upper} >= attacker floor {p_e}"
        )
    return e_sig_upper + f_auth * gap, e_sig_upper + f_ver * gap


def signature_length(s_auth: float, s_ver: float, p_rep_budget: float) -> int:
    """Smallest length meeting the repudiation budget.

    Inverts exp(-(s_ver - s_auth)^2 L / 4) <= p_rep_budget, so
    L = ceil(4 ln(1/p_rep_budget) / (s_ver - s_auth)^2).
    """
    if s_ver <= s_auth:
        raise ValueError("need s_ver > s_auth (zero threshold gap)")
    if not 0.0 < p_rep_budget <= 1.0:
        raise ValueError("p_rep_budget must be in (0, 1]")
    return int(math.ceil(4.0 * math.log(1.0 / p_rep_budget) / (s_ver - s_auth) ** 2))


def repudiation_bound(s_auth: float, s_ver: float, l: int) -> float:
    """Repudiation probability bound exp(-(s_ver - s_auth)^2 l / 4)."""
    if s_ver <= s_auth:
        raise ValueError("need s_ver > s_auth")
    log_p = -((s_ver - s_auth) ** 2) * l / 4.0
    return 0.0 if log_p < -745.0 else math.exp(log_p)


def abort_and_forge(
    e_sig_upper: float, s_auth: float, s_ver: float, p_e: float, l: int
) -> tuple[float, float]:
    """Hoeffding bounds on honest abort and forging over an l-bit signature.

    p_hab = exp(-2 (s_auth - e_sig)^2 l): an honest run errs at most at the
    QBER bound yet crosses the authentication threshold.
    p_for = exp(-2 (p_e - s_ver)^2 l): a forger forced to the error floor
    still lands under the verification threshold.
    """
    if not e_sig_upper <= s_auth <= s_ver <= p_e:
        raise ValueError("need e_sig_upper <= s_auth <= s_ver <= p_e")
    p_hab = hoeffding_exponent_bound(s_auth - e_sig_upper, l)
    p_for = hoeffding_exponent_bound(p_e - s_ver, l)
    return p_hab, p_for


def n_blocks(pool_len: int, c_test: int, c_sig: int) -> int:
    """Disjoint signature blocks a pool supports after the test sample."""
    if pool_len < c_test + c_sig:
        raise ValueError(
            f"pool of {pool_len} cannot supply a {c_test}-bit test set and one {c_sig}-bit block"
        )
    return (pool_len - c_test) // c_sig


def extract_blocks(
    z_pool: np.ndarray, c_test: int, c_sig: int, seed: int = 0, link: str = "AB"
) -> tuple[tuple[np.ndarray, np.ndarray], list[SignatureBlock]]:
    """Randomly split a pool into a test sample and disjoint signature blocks.

    Returns ((test_indices, test_bits), blocks).  Uniform without
    replacement, deterministic under ``seed``; block count equals
    :func:`n_blocks` exactly.  Pools beyond ``MAX_MATERIALISED_POOL`` must
    use :func:`n_blocks` for the count arithmetic instead of materialising
    indices.
    """
    pool = np.asarray(z_pool)
    count = n_blocks(len(pool), c_test, c_sig)
    if len(pool) > MAX_MATERIALISED_POOL:
        raise ValueError(
            f"pool of {len(pool)} is too large to materialise; use n_blocks()"
        )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(pool))
    test_idx = np.sort(perm[:c_test])
    blocks = []
    for i in range(count):
        idx = np.sort(perm[c_test + i * c_sig : c_test + (i + 1) * c_sig])
        blocks.append(
            SignatureBlock(link=link, bit_values=pool[idx], origin_indices=idx)
        )
    return (test_idx, pool[test_idx]), blocks


def timing_report(total_time_s: float, duty_fraction: float, n_signatures: int) -> float:
    """Average wall-clock share spent per signature."""
    if n_signatures < 1:
        raise ValueError("n_signatures must be >= 1")
    if total_time_s < 0 or not 0.0 < duty_fraction <= 1.0:
        raise ValueError("need total_time_s >= 0 and duty_fraction in (0, 1]")
    return total_time_s * duty_fraction / n_signatures


@dataclass(frozen=True)
class Holding:
    """Key bits a recipient can check against a declaration for one link."""

    link: str
    positions: np.ndarray  # block-local indices into the link's declaration
    bits: np.ndarray


@dataclass(frozen=True)
class SymmetriseResult:
    final_holdings: dict  # recipient -> list[Holding]
    transcripts: list  # (sender, receiver, link, positions, masked_bits)


def symmetrise(
    block_b: SignatureBlock,
    block_c: SignatureBlock,
    otp_key: np.ndarray,
    seed: int = 0,
) -> SymmetriseResult:
    """Recipients secretly swap random halves of their received key bits.

    Each recipient keeps a random half of its block positions and forwards
    the other half as (position, bit) pairs with the bits XOR-masked by
    disjoint segments of ``otp_key``, so the signer cannot tell which
    recipient holds which position.  Afterwards each recipient knows
    exactly one block's worth of positions: half original, half forwarded.
    """
    otp = np.asarray(otp_key, dtype=np.int8)
    h_b, h_c = len(block_b) // 2, len(block_c) // 2
    if len(otp) < h_b + h_c:
        raise ValueError(f"one-time-pad of {len(otp)} bits cannot mask {h_b + h_c} bits")
    rng = np.random.default_rng(seed)

    def split(block, n_forward):
        perm = rng.permutation(len(block))
        fwd = np.sort(perm[:n_forward])
        keep = np.sort(perm[n_forward:])
        return keep, fwd

    keep_b, fwd_b = split(block_b, h_b)
    keep_c, fwd_c = split(block_c, h_c)
    mask_b = otp[:h_b]
    mask_c = otp[h_b : h_b + h_c]
    masked_b = np.bitwise_xor(block_b.bit_values[fwd_b].astype(np.int8), mask_b)
    masked_c = np.bitwise_xor(block_c.bit_values[fwd_c].astype(np.int8), mask_c)

    final = {
        "B": [
            Holding(block_b.link, keep_b, block_b.bit_values[keep_b]),
            Holding(block_c.link, fwd_c, np.bitwise_xor(masked_c, mask_c)),
        ],
        "C": [
            Holding(block_c.link, keep_c, block_c.bit_values[keep_c]),
            Holding(block_b.link, fwd_b, np.bitwise_xor(masked_b, mask_b)),
        ],
    }
    transcripts = [
        ("B", "C", block_b.link, fwd_b, masked_b),
        ("C", "B", block_c.link, fwd_c, masked_c),
    ]
    return SymmetriseResult(final_holdings=final, transcripts=transcripts)


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    mismatches: int
    checked: int
    threshold: float
    reason: str = ""


def _verify(declaration: dict, holdings, threshold: float) -> Verdict:
    mismatches = 0
    checked = 0
    for holding in holdings:
        if holding.link not in declaration:
            return Verdict(False, 0, 0, threshold, f"declaration missing link {holding.link}")
        declared = np.asarray(declaration[holding.link])
        if len(holding.positions) and holding.positions.max() >= len(declared):
            return Verdict(False, 0, 0, threshold, f"declaration too short for link {holding.link}")
        mismatches += int((declared[holding.positions] != holding.bits).sum())
        checked += len(holding.positions)
    if checked == 0:
        return Verdict(False, 0, 0, threshold, "no positions to check")
    # Strict inequality: a mismatch fraction exactly at threshold rejects.
    accepted = mismatches < threshold * checked
    return Verdict(accepted, mismatches, checked, threshold)


def sign_and_verify(
    message_bit: int,
    alice_keys: dict,
    recipient_blocks: dict,
    s_auth: float,
    s_ver: float,
    l: int,
) -> dict:
    """Check a declaration against each recipient's known positions.

    ``alice_keys`` maps link -> declared bit string for ``message_bit``;
    ``recipient_blocks`` maps "direct"/"forwarded" to lists of
    :class:`Holding`.  The direct recipient accepts below the
    authentication threshold, the forwarded recipient below the (laxer)
    verification threshold; both comparisons are strict.
    """
    if message_bit not in (0, 1):
        raise ValueError("message_bit must be 0 or 1")
    verdicts = {}
    for role, threshold in (("direct", s_auth), ("forwarded", s_ver)):
        holdings = recipient_blocks.get(role, [])
        total = sum(len(h.positions) for h in holdings)
        if total < l:
            verdicts[role] = Verdict(False, 0, total, threshold, f"fewer than {l} positions held")
            continue
        verdicts[role] = _verify(alice_keys, holdings, threshold)
    return verdicts


def run_signing_session(
    bus: MessageBus,
    signer: str,
    direct: str,
    forwarded: str,
    message_bit: int,
    alice_keys: dict,
    holdings: dict,
    s_auth: float,
    s_ver: float,
    l: int,
) -> dict:
    """Drive sign -> check -> transfer -> verify over the classical channel.

    The signer declares to the direct recipient, who checks against the
    authentication threshold and, when satisfied, relays the declaration to
    the second recipient for verification.  Returns per-recipient verdicts.
    """
    for party in (signer, direct, forwarded):
        bus.register(party)
    bus.send(signer, direct, {"type": "declare", "bit": message_bit, "keys": alice_keys})
    declaration = bus.receive(direct, signer)
    direct_verdict = _verify(declaration["keys"], holdings.get("direct", []), s_auth)
    result = {"direct": direct_verdict}
    bus.send(direct, forwarded, {"type": "transfer", "declaration": declaration, "accepted": direct_verdict.accepted})
    relayed = bus.receive(forwarded, direct)
    result["forwarded"] = _verify(
        relayed["declaration"]["keys"], holdings.get("forwarded", []), s_ver
    )
    return result


def distill_report(
    s1_sig_lower: int,
    eph_sig_upper: float,
    e_test: float,
    pool_size: int,
    params: QdsParams,
    total_time_s: float,
    duty_fraction: float,
    epsilon_inherited: float = 0.0,
    threshold_fractions: tuple = THIRDS,
) -> QdsReport:
    """Run the full per-block security chain and assemble the report.

    The operating signature length is the full block (c_sig bits), so the
    reported repudiation/abort/forging probabilities are evaluated at
    c_sig; ``l_sig`` records the minimum length that would already meet
    the repudiation budget and must not exceed c_sig for a secure report.

    Raises :class:`InsecureChannelError` when the QBER bound reaches the
    attacker floor (no positive signature rate).
    """
    c_sig, c_test = params.c_sig, params.c_test
    p_e = eve_error_floor(s1_sig_lower, c_sig, eph_sig_upper)
    e_sig = qber_upper(e_test, c_test, c_sig, params.eps_h)
    s_auth, s_ver = thresholds(e_sig, p_e, threshold_fractions)
    l_sig = signature_length(s_auth, s_ver, params.p_rep_budget)
    p_rep = repudiation_bound(s_auth, s_ver, c_sig)
    p_hab, p_for = abort_and_forge(e_sig, s_auth, s_ver, p_e, c_sig)
    count = n_blocks(pool_size, c_test, c_sig)
    avg_time = timing_report(total_time_s, duty_fraction, count)
    return QdsReport(
        p_e=p_e,
        e_test=e_test,
        e_sig_upper=e_sig,
        s_auth=s_auth,
        s_ver=s_ver,
        l_sig=l_sig,
        p_rep=p_rep,
        p_hab=p_hab,
        p_for=p_for,
        log10_p_hab=hoeffding_exponent_log(s_auth - e_sig, c_sig) / math.log(10.0),
        log10_p_for=hoeffding_exponent_log(p_e - s_ver, c_sig) / math.log(10.0),
        n_signatures=count,
        avg_time_per_signature_s=avg_time,
        epsilon_spent=epsilon_inherited + params.eps_h,
        params={
            "c_sig": c_sig,
            "c_test": c_test,
            "eps_h": params.eps_h,
            "p_rep_budget": params.p_rep_budget,
            "p_fail_total": params.p_fail_total,
            "pool_size": pool_size,
            "total_time_s": total_time_s,
            "duty_fraction": duty_fraction,
            "threshold_fractions": list(threshold_fractions),
            "s1_sig_lower": s1_sig_lower,
            "eph_sig_upper": eph_sig_upper,
        },
    )


def min_feasible_acquisition(feasible, lo: int, hi: int) -> int | None:
    """Smallest acquisition size in [lo, hi] accepted by ``feasible``.

    ``feasible`` must be monotone (once an acquisition is large enough it
    stays feasible).  Returns None when even ``hi`` fails.  Backs the
    single-signature-per-acquisition baseline against which the
    multi-signature protocol is compared.
    """
    if not feasible(hi):
        return None
    if feasible(lo):
        return lo
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi
