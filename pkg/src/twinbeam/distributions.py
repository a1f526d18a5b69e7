"""Closed-form counting distributions for a lossy twin-beam source.

The three laws implemented here are the single-mode thermal (geometric)
occupation law, the negative-binomial law for a detection volume containing
``M`` independent thermal modes (``M`` is Mandel's degeneracy parameter and
need not be an integer), and the Poisson law they approach as ``M`` grows.
A lossy single-atom detector acts on any of them by binomial thinning,
which maps a thermal law of mean ``nu`` onto a thermal law of mean
``eta * nu``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln
from scipy.stats import binom as _binom
from scipy.stats import nbinom as _nbinom
from scipy.stats import poisson as _poisson

__all__ = [
    "TAIL_TOLERANCE",
    "TmsvParams",
    "DetectorModel",
    "Pmf",
    "thermal_pmf",
    "multimode_pmf",
    "multimode_log_pmf",
    "poisson_pmf",
    "detected_mean",
    "binomial_thin",
    "pmf_moments",
]

# Default bound on the analytic probability mass allowed beyond n_max.
TAIL_TOLERANCE = 1e-10


@dataclass(frozen=True)
class TmsvParams:
    """Source parameters of a two-mode squeezed vacuum.

    Either the mean occupation per mode ``nu`` or the pair amplitude
    magnitude ``alpha_mag`` may be given; the other is derived from
    ``nu = alpha_mag**2 / (1 - alpha_mag**2)``.
    """

    nu: float = None
    alpha_mag: float = None

    def __post_init__(self):
        nu, alpha = self.nu, self.alpha_mag
        if nu is None and alpha is None:
            raise ValueError("provide nu or alpha_mag")
        if alpha is None:
            if nu < 0:
                raise ValueError(f"nu must be >= 0, got {nu}")
            alpha = math.sqrt(nu / (1.0 + nu))
            object.__setattr__(self, "alpha_mag", alpha)
        elif nu is None:
            if not 0.0 <= alpha < 1.0:
                raise ValueError(f"alpha_mag must be in [0, 1), got {alpha}")
            object.__setattr__(self, "nu", alpha**2 / (1.0 - alpha**2))
        else:
            if not 0.0 <= alpha < 1.0:
                raise ValueError(f"alpha_mag must be in [0, 1), got {alpha}")
            expected = alpha**2 / (1.0 - alpha**2)
            if abs(nu - expected) > 1e-12 * max(1.0, abs(nu)):
                raise ValueError(
                    f"inconsistent parameters: nu={nu} but alpha_mag implies {expected}"
                )


@dataclass(frozen=True)
class DetectorModel:
    """Single-atom detector with efficiency ``eta`` in [0, 1]."""

    eta: float

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must be in [0, 1], got {self.eta}")


@dataclass(frozen=True)
class Pmf:
    """Probability mass function over counts ``n = 0 .. n_max``.

    ``tail_tolerance`` records the analytic tail-mass bound used when the
    support was truncated, so normalization stays testable: the entries sum
    to at least ``1 - tail_tolerance`` whenever the distribution was built
    by one of the generators in this module.
    """

    probs: np.ndarray
    n_max: int
    tail_tolerance: float = TAIL_TOLERANCE

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1:
            raise ValueError("probs must be one-dimensional")
        if len(probs) != self.n_max + 1:
            raise ValueError(
                f"probs has {len(probs)} entries but n_max={self.n_max}"
            )
        if np.any(probs < 0.0) or np.any(probs > 1.0):
            raise ValueError("probabilities must lie in [0, 1]")
        if probs.sum() > 1.0 + 1e-9:
            raise ValueError(f"probabilities sum to {probs.sum()} > 1")
        probs = probs.copy()
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)

    @property
    def total(self) -> float:
        return float(self.probs.sum())

    def to_csv(self, path) -> None:
        """Write ``n,probability`` rows with metadata comment lines."""
        with open(path, "w") as fh:
            fh.write(f"# n_max={self.n_max}\n")
            fh.write(f"# tail_tolerance={self.tail_tolerance!r}\n")
            fh.write("n,probability\n")
            for n, p in enumerate(self.probs):
                fh.write(f"{n},{float(p)!r}\n")

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(
                {
                    "n_max": self.n_max,
                    "tail_tolerance": self.tail_tolerance,
                    "probs": [float(p) for p in self.probs],
                },
                fh,
                indent=2,
            )
            fh.write("\n")

    @classmethod
    def from_csv(cls, path) -> "Pmf":
        meta = {}
        probs = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line.startswith("#"):
                    key, _, value = line[1:].strip().partition("=")
                    meta[key.strip()] = value.strip()
                elif line and not line.startswith("n,"):
                    _, _, p = line.partition(",")
                    probs.append(float(p))
        return cls(
            probs=np.array(probs),
            n_max=int(meta["n_max"]),
            tail_tolerance=float(meta["tail_tolerance"]),
        )

    @classmethod
    def from_json(cls, path) -> "Pmf":
        with open(path) as fh:
            doc = json.load(fh)
        return cls(
            probs=np.array(doc["probs"]),
            n_max=int(doc["n_max"]),
            tail_tolerance=float(doc["tail_tolerance"]),
        )


def _thermal_tail_n_max(nu: float, tol: float) -> int:
    # Thermal tail mass beyond n is (nu/(1+nu))**(n+1).
    if nu <= 0.0:
        return 0
    x = nu / (1.0 + nu)
    return max(0, math.ceil(math.log(tol) / math.log(x)) - 1)


def thermal_pmf(nu: float, n_max: int = None) -> Pmf:
    """Thermal (geometric) occupation law ``P(n) = nu^n / (1+nu)^(n+1)``.

    Args:
        nu: mean occupation, >= 0.
        n_max: truncation count; defaults to the smallest support whose
            analytic tail mass is below ``TAIL_TOLERANCE``.
    """
    if nu < 0.0:
        raise ValueError(f"nu must be >= 0, got {nu}")
    if n_max is None:
        n_max = _thermal_tail_n_max(nu, TAIL_TOLERANCE)
    if n_max < 0:
        raise ValueError(f"n_max must be >= 0, got {n_max}")
    n = np.arange(n_max + 1)
    if nu == 0.0:
        probs = np.zeros(n_max + 1)
        probs[0] = 1.0
    else:
        log_p = n * math.log(nu) - (n + 1) * math.log1p(nu)
        probs = np.exp(log_p)
    return Pmf(probs=probs, n_max=n_max)


def multimode_log_pmf(nu: float, big_m: float, ns: np.ndarray) -> np.ndarray:
    """Log of the M-mode thermal counting law, evaluated in log space.

    ``P_M(n) = Gamma(n+M) / (Gamma(n+1) Gamma(M)) (1+M/nu)^-n (1+nu/M)^-M``.
    Log-gamma keeps the evaluation finite where the gamma function itself
    overflows (n + M > 170 in double precision).
    """
    if big_m <= 0.0:
        raise ValueError(f"degeneracy parameter must be > 0, got {big_m}")
    if nu < 0.0:
        raise ValueError(f"nu must be >= 0, got {nu}")
    ns = np.asarray(ns)
    if nu == 0.0:
        return np.where(ns == 0, 0.0, -np.inf)
    return (
        gammaln(ns + big_m)
        - gammaln(ns + 1.0)
        - gammaln(big_m)
        - ns * math.log1p(big_m / nu)
        - big_m * math.log1p(nu / big_m)
    )


def multimode_pmf(nu: float, big_m: float, n_max: int = None) -> Pmf:
    """Counting law for a volume holding ``big_m`` independent thermal modes.

    Reduces to :func:`thermal_pmf` at ``big_m = 1`` and approaches
    :func:`poisson_pmf` as ``big_m`` grows. ``big_m`` may be non-integral.
    For ``nu = 0`` the zero-count point mass is returned (the formula is
    indeterminate there).
    """
    if big_m <= 0.0:
        raise ValueError(f"degeneracy parameter must be > 0, got {big_m}")
    if nu < 0.0:
        raise ValueError(f"nu must be >= 0, got {nu}")
    if n_max is None:
        if nu == 0.0:
            n_max = 0
        else:
            # Same law as a negative binomial with size M, success M/(M+nu).
            p = big_m / (big_m + nu)
            n_max = int(_nbinom.isf(TAIL_TOLERANCE, big_m, p)) + 2
    if n_max < 0:
        raise ValueError(f"n_max must be >= 0, got {n_max}")
    ns = np.arange(n_max + 1)
    probs = np.exp(multimode_log_pmf(nu, big_m, ns))
    return Pmf(probs=probs, n_max=n_max)


def poisson_pmf(mean: float, n_max: int = None) -> Pmf:
    """Poisson law ``P(n) = mean^n exp(-mean) / n!``."""
    if mean < 0.0:
        raise ValueError(f"mean must be >= 0, got {mean}")
    if n_max is None:
        n_max = 0 if mean == 0.0 else int(_poisson.isf(TAIL_TOLERANCE, mean)) + 2
    if n_max < 0:
        raise ValueError(f"n_max must be >= 0, got {n_max}")
    n = np.arange(n_max + 1)
    if mean == 0.0:
        probs = np.zeros(n_max + 1)
        probs[0] = 1.0
    else:
        probs = np.exp(n * math.log(mean) - mean - gammaln(n + 1.0))
    return Pmf(probs=probs, n_max=n_max)


def detected_mean(nu: float, det: DetectorModel) -> float:
    """Mean detected count for true mean ``nu`` and efficiency ``det.eta``."""
    if nu < 0.0:
        raise ValueError(f"nu must be >= 0, got {nu}")
    return det.eta * nu


def binomial_thin(pmf: Pmf, det: DetectorModel) -> Pmf:
    """Count law after each atom survives detection with probability eta.

    ``P'(k) = sum_n P(n) C(n, k) eta^k (1-eta)^(n-k)``.  Thinning cannot
    move mass upward, so the support and the truncation tail bound carry
    over unchanged.
    """
    eta = det.eta
    n = np.arange(pmf.n_max + 1)
    # loss_matrix[k, m] = P(Binomial(m, eta) = k)
    loss_matrix = _binom.pmf(n[:, None], n[None, :], eta)
    return Pmf(
        probs=np.clip(loss_matrix @ pmf.probs, 0.0, 1.0),
        n_max=pmf.n_max,
        tail_tolerance=pmf.tail_tolerance,
    )


def pmf_moments(pmf: Pmf) -> tuple[float, float]:
    """Mean and variance of the truncated distribution as stored."""
    n = np.arange(pmf.n_max + 1)
    mean = float(n @ pmf.probs)
    var = float(((n - mean) ** 2) @ pmf.probs)
    return mean, var
