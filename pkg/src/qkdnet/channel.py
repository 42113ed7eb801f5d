"""Ground-truth yield/error models and finite-sample count synthesis.

The models here are phenomenological: per-photon-number detection and error
probabilities are explicit, documented formulas, so every downstream bound
can be tested against an exact oracle.  Phase-randomised coherent pulses
make the observed gain of an intensity class an exact Poisson mixture of the
per-photon-number yields.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .mathkit import check_probability, poisson_pmf

__all__ = [
    "ChannelParams",
    "IntensitySet",
    "YieldModel",
    "CountRecord",
    "TailBoundError",
    "qkd_yield_model",
    "mdi_yield_model",
    "expected_gain_and_qber",
    "sample_counts",
]

#: Poisson mass allowed beyond the photon-number cutoff before we refuse
TAIL_LIMIT = 1e-10

#: default photon-number cutoff
DEFAULT_N_CUT = 12


class TailBoundError(ValueError):
    """Mean photon number too large for the model's photon-number cutoff."""


@dataclass(frozen=True)
class ChannelParams:
    """Optical channel and detector parameters for one link."""

    distance_km: float
    attenuation_db_per_km: float = 0.2
    detector_efficiency: float = 0.209
    dark_count_prob: float = 1e-6
    misalignment: float = 0.005
    clock_rate_hz: float = 1e9

    def __post_init__(self):
        if self.distance_km < 0:
            raise ValueError("distance_km must be >= 0")
        if self.attenuation_db_per_km < 0:
            raise ValueError("attenuation_db_per_km must be >= 0")
        if self.clock_rate_hz <= 0:
            raise ValueError("clock_rate_hz must be > 0")
        check_probability(self.detector_efficiency, "detector_efficiency")
        check_probability(self.dark_count_prob, "dark_count_prob")
        check_probability(self.misalignment, "misalignment")

    @property
    def transmittance(self) -> float:
        """End-to-end single-photon transfer probability, detector included."""
        loss = 10.0 ** (-self.attenuation_db_per_km * self.distance_km / 10.0)
        return loss * self.detector_efficiency


@dataclass(frozen=True)
class IntensitySet:
    """The four mean photon numbers and the transmitter basis bias.

    The signal class ``s`` is the only one prepared in the Z basis; ``u``,
    ``v`` and ``w`` are prepared in X, drawn with weights ``x_weights``.
    """

    s: float = 0.5
    u: float = 0.1
    v: float = 0.02
    w: float = 0.0
    z_basis_prob: float = 0.8
    x_weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)

    def __post_init__(self):
        if not self.s > self.u > self.v > self.w >= 0:
            raise ValueError("intensities must satisfy s > u > v > w >= 0")
        if not 0.0 < self.z_basis_prob < 1.0:
            raise ValueError("z_basis_prob must be in (0, 1)")
        if len(self.x_weights) != 3 or min(self.x_weights) < 0 or sum(self.x_weights) <= 0:
            raise ValueError("x_weights must be three non-negative weights")

    @property
    def labels(self) -> tuple[str, ...]:
        return ("s", "u", "v", "w")

    def mu(self, label: str) -> float:
        try:
            return {"s": self.s, "u": self.u, "v": self.v, "w": self.w}[label]
        except KeyError:
            raise ValueError(f"unknown intensity label {label!r}") from None

    def x_probs(self) -> np.ndarray:
        w = np.asarray(self.x_weights, dtype=float)
        return w / w.sum()


@dataclass(frozen=True)
class CountRecord:
    """Tallies for one (intensity, basis) configuration."""

    sent: int
    detected: int
    errors: int

    def __post_init__(self):
        if not 0 <= self.errors <= self.detected <= self.sent:
            raise ValueError(
                f"need errors <= detected <= sent, got {self.errors}/{self.detected}/{self.sent}"
            )


@dataclass(frozen=True)
class YieldModel:
    """Per-photon-number detection and error probabilities.

    ``yields`` and the error maps are 1-D arrays indexed by photon number n
    for a point-to-point (QKD) link, or 2-D arrays indexed by the photon
    pair (n, m) for the relay (MDI) link, with n, m in 0..n_cut.

    ``error_rates`` is the test-basis (X) error map consumed by the decoy
    estimation; ``z_error_rates`` is the key-basis map used when sampling
    Z-basis data.  They coincide for QKD, where both bases behave alike;
    for MDI the X map carries the multi-photon error floor while Z errors
    stay misalignment-driven at every photon number.
    """

    kind: str  # "QKD" | "MDI"
    yields: np.ndarray
    error_rates: np.ndarray
    z_error_rates: np.ndarray = None
    n_cut: int = DEFAULT_N_CUT

    def __post_init__(self):
        if self.kind not in ("QKD", "MDI"):
            raise ValueError(f"kind must be 'QKD' or 'MDI', got {self.kind!r}")
        if self.z_error_rates is None:
            object.__setattr__(self, "z_error_rates", self.error_rates)
        for name in ("yields", "error_rates", "z_error_rates"):
            arr = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arr)
            expected = (self.n_cut + 1,) if self.kind == "QKD" else (self.n_cut + 1,) * 2
            if arr.shape != expected:
                raise ValueError(f"{name} must have shape {expected}, got {arr.shape}")
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise ValueError(f"{name} entries must be probabilities")

    def errors_for_basis(self, basis: str) -> np.ndarray:
        if basis == "X":
            return self.error_rates
        if basis == "Z":
            return self.z_error_rates
        raise ValueError(f"basis must be 'Z' or 'X', got {basis!r}")

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": self.kind,
                "n_cut": self.n_cut,
                "yields": self.yields.tolist(),
                "error_rates": self.error_rates.tolist(),
                "z_error_rates": self.z_error_rates.tolist(),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "YieldModel":
        doc = json.loads(text)
        return cls(
            kind=doc["kind"],
            yields=np.array(doc["yields"], dtype=float),
            error_rates=np.array(doc["error_rates"], dtype=float),
            z_error_rates=np.array(doc["z_error_rates"], dtype=float),
            n_cut=int(doc["n_cut"]),
        )


def _eta_n(eta: float, n: np.ndarray) -> np.ndarray:
    """P(at least one of n photons survives), 1 - (1-eta)^n."""
    return 1.0 - (1.0 - eta) ** n


def qkd_yield_model(params: ChannelParams, n_cut: int = DEFAULT_N_CUT) -> YieldModel:
    """Point-to-point yield model.

    With eta the end-to-end transmittance and Y0 = 2 * dark_count_prob the
    two-detector dark floor:

        yields(n) = Y0 + eta_n - Y0 * eta_n
        errors(n) = (0.5 * Y0 + misalignment * eta_n * (1 - Y0)) / yields(n)

    where eta_n = 1 - (1-eta)^n.  Dark clicks land on a random detector,
    signal clicks err with the misalignment probability.
    """
    eta = params.transmittance
    y0 = min(1.0, 2.0 * params.dark_count_prob)
    n = np.arange(n_cut + 1)
    eta_n = _eta_n(eta, n)
    yields = y0 + eta_n - y0 * eta_n
    with np.errstate(invalid="ignore"):
        errors = np.where(
            yields > 0.0,
            (0.5 * y0 + params.misalignment * eta_n * (1.0 - y0)) / np.where(yields > 0, yields, 1.0),
            0.0,
        )
    return YieldModel(kind="QKD", yields=yields, error_rates=np.clip(errors, 0, 1), n_cut=n_cut)


def mdi_yield_model(
    params_a: ChannelParams,
    params_b: ChannelParams,
    hom_visibility: float = 1.0,
    bell_success: float = 0.5,
    x_multiphoton_floor: float = 0.25,
    n_cut: int = DEFAULT_N_CUT,
) -> YieldModel:
    """Relay (two-sender) yield model.

    Accepted-coincidence probability for a photon pair (n, m):

        yields(n, m) = bell_success * eta_a,n * eta_b,m + 2 * d_a * d_b

    with eta_x,k = 1 - (1-eta_x)^k and the additive term the two-detector
    dark-coincidence floor.  Error rates are detection-weighted mixes of a
    random 0.5 on dark coincidences and a signal error e(n, m):

        X basis: e(1,1) = mis_eff + (1 - hom_visibility)/2,
                 e(n,m) = x_multiphoton_floor for n+m > 2,
        Z basis: e(n,m) = mis_eff for all n, m >= 1,

    where mis_eff combines the two senders' misalignment probabilities.
    Interference physics is intentionally absent; the matrix itself is the
    ground truth that downstream bounds are tested against.
    """
    check_probability(hom_visibility, "hom_visibility")
    check_probability(bell_success, "bell_success")
    check_probability(x_multiphoton_floor, "x_multiphoton_floor")
    eta_a, eta_b = params_a.transmittance, params_b.transmittance
    n = np.arange(n_cut + 1)
    eta_an = _eta_n(eta_a, n)[:, None]
    eta_bm = _eta_n(eta_b, n)[None, :]
    signal = bell_success * eta_an * eta_bm
    dark_floor = 2.0 * params_a.dark_count_prob * params_b.dark_count_prob
    yields = np.clip(signal + dark_floor, 0.0, 1.0)

    mis_eff = 1.0 - (1.0 - params_a.misalignment) * (1.0 - params_b.misalignment)
    nn, mm = np.meshgrid(n, n, indexing="ij")
    e11 = min(0.5, mis_eff + (1.0 - hom_visibility) / 2.0)
    e_x = np.where((nn + mm) > 2, x_multiphoton_floor, e11)
    e_z = np.full_like(e_x, mis_eff, dtype=float)

    def mix(e_signal):
        with np.errstate(invalid="ignore"):
            return np.where(
                yields > 0.0,
                (0.5 * dark_floor + e_signal * signal) / np.where(yields > 0, yields, 1.0),
                0.0,
            )

    return YieldModel(
        kind="MDI",
        yields=yields,
        error_rates=np.clip(mix(e_x), 0, 1),
        z_error_rates=np.clip(mix(e_z), 0, 1),
        n_cut=n_cut,
    )


def _poisson_weights(mu: float, n_cut: int) -> tuple[np.ndarray, float]:
    pmf = np.array([poisson_pmf(mu, k) for k in range(n_cut + 1)])
    tail = max(0.0, 1.0 - pmf.sum())
    return pmf, tail


def expected_gain_and_qber(
    model: YieldModel,
    mu: float,
    nu: float | None = None,
    basis: str = "X",
) -> tuple[float, float]:
    """Poisson-mixture gain and QBER of an intensity (pair) under the model.

    Raises :class:`TailBoundError` when the Poisson mass beyond the model's
    photon-number cutoff exceeds ``TAIL_LIMIT``; below that, the truncation
    error is folded into nothing larger than 1e-10 absolute on the gain.
    """
    if (nu is None) != (model.kind == "QKD"):
        raise ValueError("nu must be given exactly when the model kind is MDI")
    errors = model.errors_for_basis(basis)
    if model.kind == "QKD":
        p, tail = _poisson_weights(mu, model.n_cut)
        if tail > TAIL_LIMIT:
            raise TailBoundError(f"Poisson tail {tail:.2e} beyond n_cut={model.n_cut} for mu={mu}")
        gain = float(p @ model.yields)
        err_gain = float(p @ (errors * model.yields))
    else:
        pa, tail_a = _poisson_weights(mu, model.n_cut)
        pb, tail_b = _poisson_weights(nu, model.n_cut)
        tail = tail_a + tail_b
        if tail > TAIL_LIMIT:
            raise TailBoundError(
                f"Poisson tail {tail:.2e} beyond n_cut={model.n_cut} for mu={mu}, nu={nu}"
            )
        w = np.outer(pa, pb)
        gain = float((w * model.yields).sum())
        err_gain = float((w * errors * model.yields).sum())
    qber = err_gain / gain if gain > 0.0 else 0.0
    return gain, min(1.0, qber)


def sample_counts(
    model: YieldModel,
    mu: float,
    nu: float | None = None,
    n_pulses: int = 0,
    seed: int = 0,
    basis: str = "X",
    gain_factor: float = 1.0,
) -> CountRecord:
    """Draw a finitely-sampled :class:`CountRecord` for one configuration.

    detected ~ Binomial(n_pulses, gain_factor * gain) and
    errors ~ Binomial(detected, qber), from a generator seeded with ``seed``
    (same seed, same record).  ``gain_factor`` scales the acceptance
    probability for receiver-side sifting (e.g. a passive 50:50 basis
    choice) without touching the model.
    """
    if n_pulses < 0:
        raise ValueError("n_pulses must be >= 0")
    check_probability(gain_factor, "gain_factor")
    gain, qber = expected_gain_and_qber(model, mu, nu, basis=basis)
    if n_pulses == 0:
        return CountRecord(0, 0, 0)
    rng = np.random.default_rng(seed)
    detected = int(rng.binomial(n_pulses, gain_factor * gain))
    errors = int(rng.binomial(detected, qber)) if detected else 0
    return CountRecord(sent=int(n_pulses), detected=detected, errors=errors)
