"""Decoy-state estimation from X-basis count tables.

Lower-bounds the single-photon contribution and upper-bounds the
single-photon (phase) error rate via small linear programs over widened
Poisson-mixture constraints, then carries the X-basis bounds into the
Z basis: proportional single-photon counting plus a Serfling
random-sampling penalty on the error rate.

Finite-size widening uses a two-sided Hoeffding interval with the total
failure budget split evenly across every widened quantity; the reported
``epsilon_spent`` is the sum of everything consumed.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import CountRecord, IntensitySet, DEFAULT_N_CUT
from .mathkit import (
    LpInfeasibleError,
    poisson_pmf,
    serfling_deviation,
    solve_bounded_lp,
)

__all__ = [
    "CountTable",
    "DecoyBounds",
    "InconsistentCountsError",
    "TableFormatError",
    "widen_counts",
    "estimate_bounds",
    "restrict_to_block",
]

X_LABELS = ("u", "v", "w")


class InconsistentCountsError(ValueError):
    """Observed counts admit no photon-number model (infeasible LP)."""


class TableFormatError(ValueError):
    """A serialized count table violates the schema."""


def _label_key(label) -> tuple:
    """Normalise an intensity label to a hashable key."""
    if isinstance(label, str):
        return (label,)
    return tuple(label)


def _check_entry(label_key: tuple, basis: str):
    if basis not in ("Z", "X"):
        raise ValueError(f"basis must be 'Z' or 'X', got {basis!r}")
    if basis == "Z":
        if any(l != "s" for l in label_key):
            raise ValueError(f"Z-basis entries carry only the signal class, got {label_key}")
    else:
        if any(l not in X_LABELS for l in label_key):
            raise ValueError(f"X-basis entries carry only u/v/w, got {label_key}")


@dataclass
class CountTable:
    """Per-link tallies keyed by (intensity label(s), basis).

    Labels are single strings for a point-to-point link and ordered pairs
    for the relay link.  Z-basis entries exist only for the signal class.
    """

    link: str  # AB | AC | BC
    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.link not in ("AB", "AC", "BC"):
            raise ValueError(f"link must be AB, AC or BC, got {self.link!r}")
        normalised = {}
        for (label, basis), rec in self.entries.items():
            key = _label_key(label)
            _check_entry(key, basis)
            normalised[(key, basis)] = rec
        self.entries = normalised

    def add(self, label, basis: str, record: CountRecord):
        key = _label_key(label)
        _check_entry(key, basis)
        self.entries[(key, basis)] = record

    def get(self, label, basis: str) -> CountRecord:
        return self.entries[(_label_key(label), basis)]

    @property
    def is_pair(self) -> bool:
        return any(len(key) == 2 for key, _ in self.entries)

    def z_entry(self) -> CountRecord:
        for (key, basis), rec in self.entries.items():
            if basis == "Z":
                return rec
        raise KeyError("table has no Z-basis entry")

    def x_entries(self) -> dict:
        return {key: rec for (key, basis), rec in self.entries.items() if basis == "X"}

    # -- serialization ----------------------------------------------------

    def to_json(self) -> str:
        rows = []
        for (key, basis), rec in sorted(self.entries.items()):
            intensity = key[0] if len(key) == 1 else list(key)
            rows.append(
                {
                    "intensity": intensity,
                    "basis": basis,
                    "sent": rec.sent,
                    "detected": rec.detected,
                    "errors": rec.errors,
                }
            )
        return json.dumps({"link": self.link, "entries": rows}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CountTable":
        try:
            doc = json.loads(text)
            table = cls(link=doc["link"])
            for row in doc["entries"]:
                table.add(
                    row["intensity"],
                    row["basis"],
                    CountRecord(int(row["sent"]), int(row["detected"]), int(row["errors"])),
                )
        except (KeyError, TypeError, ValueError) as exc:
            raise TableFormatError(f"bad count-table JSON: {exc}") from exc
        return table

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["link", "intensity", "basis", "sent", "detected", "errors"])
        for (key, basis), rec in sorted(self.entries.items()):
            writer.writerow([self.link, ":".join(key), basis, rec.sent, rec.detected, rec.errors])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "CountTable":
        reader = csv.DictReader(io.StringIO(text))
        table = None
        for i, row in enumerate(reader, start=2):  # row 1 is the header
            try:
                link = row["link"]
                label = tuple(row["intensity"].split(":"))
                rec = CountRecord(int(row["sent"]), int(row["detected"]), int(row["errors"]))
                if table is None:
                    table = cls(link=link)
                elif link != table.link:
                    raise ValueError(f"mixed links {table.link!r} and {link!r}")
                table.add(label, row["basis"], rec)
            except (KeyError, TypeError, ValueError) as exc:
                raise TableFormatError(f"bad count-table CSV at row {i}: {exc}") from exc
        if table is None:
            raise TableFormatError("empty count-table CSV")
        return table


@dataclass(frozen=True)
class DecoyBounds:
    """Single-photon bounds and the failure probability they carry."""

    s1_lower: int
    eph_upper: float
    y1_lower: float
    epsilon_spent: float
    mode: str  # "QKD" | "MDI"

    def __post_init__(self):
        if self.s1_lower < 0:
            raise ValueError("s1_lower must be >= 0")
        if not 0.0 <= self.eph_upper <= 0.5:
            raise ValueError("eph_upper must be in [0, 0.5]")


def widen_counts(record: CountRecord, eps: float, numerator: str = "detected") -> tuple[float, float]:
    """Two-sided Hoeffding interval for a per-pulse rate.

    Returns ``observed/sent -/+ sqrt(ln(2/eps) / (2 sent))`` clamped to
    [0, 1].  ``numerator`` selects the detection or the error tally.
    ``eps`` up to 2 is accepted; eps = 2 degenerates to a zero-width
    interval.
    """
    if record.sent < 1:
        raise ValueError("cannot widen a record with zero sent pulses")
    if not 0.0 < eps <= 2.0:
        raise ValueError(f"eps must be in (0, 2], got {eps!r}")
    count = getattr(record, numerator)
    p_hat = count / record.sent
    delta = math.sqrt(math.log(2.0 / eps) / (2.0 * record.sent))
    return max(0.0, p_hat - delta), min(1.0, p_hat + delta)


def _pair_weights(mu_a: float, mu_b: float, n_cut: int) -> tuple[np.ndarray, float]:
    """Poisson product weights on the simplex n+m <= n_cut, plus tail mass."""
    pa = np.array([poisson_pmf(mu_a, k) for k in range(n_cut + 1)])
    pb = np.array([poisson_pmf(mu_b, k) for k in range(n_cut + 1)])
    w = np.outer(pa, pb)
    nn, mm = np.indices(w.shape)
    w = np.where(nn + mm <= n_cut, w, 0.0)
    return w, max(0.0, 1.0 - w.sum())


def _single_weights(mu: float, n_cut: int) -> tuple[np.ndarray, float]:
    p = np.array([poisson_pmf(mu, k) for k in range(n_cut + 1)])
    return p, max(0.0, 1.0 - p.sum())


def estimate_bounds(
    table: CountTable,
    intensities: IntensitySet,
    eps_total: float,
    mode: str,
    n_cut: int = DEFAULT_N_CUT,
) -> DecoyBounds:
    """Decoy-state bounds for the Z-basis signal class of one link.

    Widens every X-basis gain and error rate (even epsilon split), solves
    the yield-minimisation and error-maximisation LPs over the widened
    Poisson-mixture constraints, converts the single-photon yield to a
    Z-basis count, and transfers the X-basis error bound to Z with a
    Serfling penalty over the two single-photon sample sizes.
    """
    if mode not in ("QKD", "MDI"):
        raise ValueError(f"mode must be 'QKD' or 'MDI', got {mode!r}")
    if mode == "MDI":
        x_keys = [(a, b) for a in X_LABELS for b in X_LABELS]
    else:
        x_keys = [(l,) for l in X_LABELS]
    x_records = {}
    for key in x_keys:
        try:
            x_records[key] = table.entries[(key, "X")]
        except KeyError:
            raise KeyError(f"table is missing the X-basis entry for {key}") from None
    z_key = ("s", "s") if mode == "MDI" else ("s",)
    try:
        z_record = table.entries[(z_key, "Z")]
    except KeyError:
        raise KeyError("table is missing the Z-basis signal entry") from None

    n_shares = 2 * len(x_keys) + 1  # gain + error per entry, + the Z transfer
    eps_each = eps_total / n_shares
    if not 0.0 < eps_each <= 2.0:
        raise ValueError(f"per-quantity budget {eps_each} outside (0, 2]")
    # eps_each = 2 degenerates every interval to zero width (exact-statistics
    # diagnostics); the Serfling share is capped at its own domain.
    eps_serf = min(1.0, eps_each)

    # Per-variable index maps and Poisson coefficient rows.
    if mode == "MDI":
        mask = np.add.outer(np.arange(n_cut + 1), np.arange(n_cut + 1)) <= n_cut
        pairs = [(int(n), int(m)) for n, m in zip(*np.nonzero(mask))]
        var_index = {pair: i for i, pair in enumerate(pairs)}
        n_vars = len(var_index)
        single_var = var_index[(1, 1)]
        rows = {}
        tails = {}
        for key in x_keys:
            w, tail = _pair_weights(intensities.mu(key[0]), intensities.mu(key[1]), n_cut)
            coeffs = np.zeros(n_vars)
            for (n, m), i in var_index.items():
                coeffs[i] = w[n, m]
            rows[key] = coeffs
            tails[key] = tail
    else:
        n_vars = n_cut + 1
        single_var = 1
        rows = {}
        tails = {}
        for key in x_keys:
            p, tail = _single_weights(intensities.mu(key[0]), n_cut)
            rows[key] = p
            tails[key] = tail

    gain_constraints = []
    error_constraints = []
    for key in x_keys:
        rec = x_records[key]
        g_lo, g_hi = widen_counts(rec, eps_each)
        e_lo, e_hi = widen_counts(rec, eps_each, numerator="errors")
        coeffs = rows[key]
        tail = tails[key]
        gain_constraints.append((coeffs, ">=", max(0.0, g_lo - tail)))
        gain_constraints.append((coeffs, "<=", g_hi))
        error_constraints.append((coeffs, ">=", max(0.0, e_lo - tail)))
        error_constraints.append((coeffs, "<=", e_hi))

    # Threshold detection never clicks less when more photons arrive, so the
    # true yields are monotone in each photon-number index; the rows tighten
    # the yield LP considerably in the low-count regime.  Error gains carry
    # no such guarantee and stay unconstrained.
    if mode == "MDI":
        for (n, m), i in var_index.items():
            for nb in ((n + 1, m), (n, m + 1)):
                if nb in var_index:
                    row = np.zeros(n_vars)
                    row[i] = 1.0
                    row[var_index[nb]] = -1.0
                    gain_constraints.append((row, "<=", 0.0))
    else:
        for n in range(n_cut):
            row = np.zeros(n_vars)
            row[n] = 1.0
            row[n + 1] = -1.0
            gain_constraints.append((row, "<=", 0.0))

    bounds01 = [(0.0, 1.0)] * n_vars
    objective = np.zeros(n_vars)
    objective[single_var] = 1.0
    try:
        y_res = solve_bounded_lp(
            objective, gain_constraints, bounds01, sense="min", refine_assignment=False
        )
        z_res = solve_bounded_lp(
            objective, error_constraints, bounds01, sense="max", refine_assignment=False
        )
    except LpInfeasibleError as exc:
        raise InconsistentCountsError(
            f"counts inconsistent with any photon-number model on link {table.link}"
        ) from exc

    y1_lower = min(1.0, max(0.0, y_res.optimum))
    z1_upper = min(1.0, max(0.0, z_res.optimum))

    s_mu = intensities.mu("s")
    if mode == "MDI":
        p1_z = poisson_pmf(s_mu, 1) ** 2
        p1_x = {key: poisson_pmf(intensities.mu(key[0]), 1) * poisson_pmf(intensities.mu(key[1]), 1) for key in x_keys}
    else:
        p1_z = poisson_pmf(s_mu, 1)
        p1_x = {key: poisson_pmf(intensities.mu(key[0]), 1) for key in x_keys}

    s1_lower = int(math.floor(z_record.sent * p1_z * y1_lower))
    s1_lower = min(s1_lower, z_record.detected)
    n_x1 = int(math.floor(sum(x_records[k].sent * p1_x[k] for k in x_keys) * y1_lower))

    if y1_lower <= 0.0 or s1_lower < 1 or n_x1 < 1:
        eph_upper = 0.5
    else:
        e1_x = min(0.5, z1_upper / y1_lower)
        eph_upper = min(0.5, e1_x + serfling_deviation(s1_lower, n_x1, eps_serf))

    return DecoyBounds(
        s1_lower=s1_lower,
        eph_upper=eph_upper,
        y1_lower=y1_lower,
        epsilon_spent=eps_total,
        mode=mode,
    )


def restrict_to_block(
    bounds: DecoyBounds, block_size: int, z_total: int, eps: float
) -> DecoyBounds:
    """Carry pool-level bounds into one randomly drawn signature block.

    The single-photon count scales proportionally minus a Serfling sampling
    deviation; the phase-error bound widens by the matching term.  Each of
    the two applications consumes ``eps``.
    """
    if block_size > z_total:
        raise ValueError(f"block of {block_size} exceeds the pool of {z_total}")
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    if block_size == z_total:
        return bounds
    dev = serfling_deviation(block_size, z_total - block_size, eps)
    ratio = block_size / z_total
    s1 = max(0, int(math.floor(bounds.s1_lower * ratio - block_size * dev)))
    eph = min(0.5, bounds.eph_upper + dev)
    return DecoyBounds(
        s1_lower=s1,
        eph_upper=eph,
        y1_lower=bounds.y1_lower,
        epsilon_spent=bounds.epsilon_spent + 2.0 * eps,
        mode=bounds.mode,
    )
