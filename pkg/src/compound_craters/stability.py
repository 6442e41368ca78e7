"""Linear stability of the coupled height / concentration equations.

The perturbations ``u`` (height) and ``phi`` (concentration of species A)
obey::

    u_t   = -A phi  + B lap(phi)  + C lap(u)  - D lap^2(u)
    phi_t = -A' phi + B' lap(phi) + C' lap(u) - D' lap^2(u)

A Fourier mode ``exp(i k x + sigma t)`` therefore evolves with the matrix

    -[[C k^2 + D k^4,   A + B k^2],
      [C' k^2 + D' k^4, A' + B' k^2]]

whose eigenvalues solve ``sigma^2 + tau sigma + Delta = 0`` with
``tau = A' + (C + B') k^2 + D k^4`` and
``Delta = (C A' - A C') k^2 + (C B' - C' B + D A' - D' A) k^4 + (D B' - D' B) k^6``.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .coefficients import FLUX_SCALED
from .errors import ConfigError, TruncatedBandError

DEFAULT_K_RANGE = (1e-4, 10.0)
DEFAULT_N_SAMPLES = 400


@dataclass(frozen=True)
class LinearModel:
    """Absolute rates (flux already applied) of the coupled linear equations."""

    A: float
    B: float
    C: float
    D: float
    A_prime: float
    B_prime: float
    C_prime: float
    D_prime: float

    def __post_init__(self):
        for name in ("A", "B", "C", "D", "A_prime", "B_prime", "C_prime", "D_prime"):
            val = float(getattr(self, name))
            if not math.isfinite(val):
                raise ConfigError(f"{name} must be finite")
            object.__setattr__(self, name, val)
        if self.D < 0:
            raise ConfigError(f"D must be >= 0, got {self.D}")
        if not self.A_prime > 0:
            raise ConfigError(f"A' must be > 0, got {self.A_prime}")
        if self.B_prime < 0:
            raise ConfigError(f"B' must be >= 0, got {self.B_prime}")

    @classmethod
    def from_bs(cls, bs, flux=1.0, D=None, B_prime=None):
        """Apply ion flux ``I0`` to per-flux BS parameters.

        ``D`` and ``B_prime`` override the values stored in ``bs``; one of
        the two sources must supply each.
        """
        D = bs.D if D is None else D
        B_prime = bs.B_prime if B_prime is None else B_prime
        if D is None:
            raise ConfigError("missing required parameter D (surface relaxation, nm^4/s)")
        if B_prime is None:
            raise ConfigError("missing required parameter B_prime (film diffusion, nm^2/s)")
        if not flux > 0:
            raise ConfigError(f"flux must be positive, got {flux}")
        vals = {name: getattr(bs, name) * (flux if name in FLUX_SCALED else 1.0)
                for name in ("A", "B", "C", "A_prime", "C_prime", "D_prime")}
        return cls(D=D, B_prime=B_prime, **vals)

    def scaled(self, factor):
        return LinearModel(*(factor * getattr(self, n) for n in self.__dataclass_fields__))

    def matrix(self, k):
        """Evolution matrix ``M`` of ``d/dt [u1, phi1] = M [u1, phi1]``."""
        k2 = k * k
        k4 = k2 * k2
        return -np.array([
            [self.C * k2 + self.D * k4, self.A + self.B * k2],
            [self.C_prime * k2 + self.D_prime * k4, self.A_prime + self.B_prime * k2],
        ])

    def tau(self, k):
        k2 = k * k
        return self.A_prime + (self.C + self.B_prime) * k2 + self.D * k2 * k2

    def delta(self, k):
        k2 = k * k
        return ((self.C * self.A_prime - self.A * self.C_prime) * k2
                + (self.C * self.B_prime - self.C_prime * self.B
                   + self.D * self.A_prime - self.D_prime * self.A) * k2 * k2
                + (self.D * self.B_prime - self.D_prime * self.B) * k2 * k2 * k2)


@dataclass(frozen=True)
class DispersionSample:
    k: float
    sigma_plus_real: float
    sigma_plus_imag: float
    tau: float
    delta_det: float
    eigvec: tuple

    @property
    def sigma_plus(self):
        return complex(self.sigma_plus_real, self.sigma_plus_imag)

    @property
    def oscillatory(self):
        return self.sigma_plus_imag != 0.0

    @property
    def eigvec_ratio(self):
        """``u1 / phi1``; infinite for a pure height mode."""
        u, phi = self.eigvec
        if phi == 0:
            return complex(math.inf, 0.0)
        return u / phi


def _sigma_roots(tau, delta):
    """Roots of ``s^2 + tau s + delta``: (sigma_plus, sigma_minus), complex.

    The larger-magnitude real root comes from the stable branch of the
    quadratic formula and the other from ``delta / root``.
    """
    disc = tau * tau - 4.0 * delta
    if disc < 0.0:
        re = -0.5 * tau
        im = 0.5 * math.sqrt(-disc)
        return complex(re, im), complex(re, -im)
    sq = math.sqrt(disc)
    if tau == 0.0 and sq == 0.0:
        return 0j, 0j
    q = -0.5 * (tau + math.copysign(sq, tau))
    r1 = q
    r2 = delta / q
    hi, lo = (r1, r2) if r1 >= r2 else (r2, r1)
    return complex(hi + 0.0, 0.0), complex(lo, 0.0)


def _null_vector(model, k, sigma):
    n = model.matrix(k).astype(complex)
    n = -n  # rows of (sigma I - M)
    n[0, 0] += sigma
    n[1, 1] += sigma
    row = n[0] if abs(n[0, 0]) + abs(n[0, 1]) >= abs(n[1, 0]) + abs(n[1, 1]) else n[1]
    vec = np.array([row[1], -row[0]])
    norm = np.linalg.norm(vec)
    if norm == 0:
        return (1.0 + 0j, 0j)
    vec = vec / norm
    return (complex(vec[0]), complex(vec[1]))


def dispersion_sigma_plus(model, k):
    """Growth rate of the faster branch at wavenumber ``k`` (nm^-1)."""
    if k < 0:
        raise ValueError("wavenumber must be non-negative")
    tau = model.tau(k)
    delta = model.delta(k)
    sp, _ = _sigma_roots(tau, delta)
    return DispersionSample(float(k), sp.real, sp.imag, tau, delta, _null_vector(model, k, sp))


def sigma_plus_real(model, k):
    return _sigma_roots(model.tau(k), model.delta(k))[0].real


def longwave_coefficient(model):
    """``(G, -G / A')``: the long-wave group and the small-k curvature of sigma_plus."""
    g = model.A_prime * model.C - model.C_prime * model.A
    return g, -g / model.A_prime


class Classification(str, enum.Enum):
    STABLE = "Stable"
    LONG_WAVE = "LongWaveUnstable"
    FINITE_BAND = "FiniteWavelengthBand"


@dataclass
class StabilityReport:
    classification: Classification
    band_edges: tuple
    bands: list
    k_star: float
    sigma_star: float
    longwave_group: float
    small_k_curvature: float
    oscillatory: bool
    samples: list = field(repr=False, default_factory=list)

    def to_dict(self):
        return {
            "classification": self.classification.value,
            "band_edges": list(self.band_edges) if self.band_edges else None,
            "bands": [list(b) for b in self.bands],
            "k_star": self.k_star,
            "sigma_star": self.sigma_star,
            "longwave_group": self.longwave_group,
            "small_k_curvature": self.small_k_curvature,
            "oscillatory": self.oscillatory,
            "units": {"k": "1/nm", "sigma": "1/s", "longwave_group": "nm^2/s^2",
                      "small_k_curvature": "nm^2/s"},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _refine_edge(model, k_lo, k_hi, rtol):
    f = lambda k: sigma_plus_real(model, k)  # noqa: E731
    return brentq(f, k_lo, k_hi, xtol=1e-300, rtol=max(rtol, 4 * np.finfo(float).eps),
                  maxiter=500)


def classify_stability(model, k_range=DEFAULT_K_RANGE, n_samples=DEFAULT_N_SAMPLES,
                       rtol=1e-10):
    """Sample sigma_plus on a log grid, locate unstable bands and classify.

    A band starting at the bottom of the grid counts as long-wave when the
    long-wave group ``G`` is negative.  Any other band touching an end of
    the grid raises :class:`TruncatedBandError`.
    """
    k_min, k_max = map(float, k_range)
    if not 0 < k_min < k_max:
        raise ValueError("k_range must satisfy 0 < k_min < k_max")
    if n_samples < 2:
        raise ValueError("need at least two samples")
    ks = np.geomspace(k_min, k_max, n_samples)
    samples = [dispersion_sigma_plus(model, k) for k in ks]
    sig = np.array([s.sigma_plus_real for s in samples])
    unstable = sig > 0
    g, curvature = longwave_coefficient(model)

    bands = []
    i = 0
    while i < n_samples:
        if not unstable[i]:
            i += 1
            continue
        j = i
        while j + 1 < n_samples and unstable[j + 1]:
            j += 1
        lo = 0.0 if i == 0 else _refine_edge(model, ks[i - 1], ks[i], rtol)
        hi = math.inf if j == n_samples - 1 else _refine_edge(model, ks[j], ks[j + 1], rtol)
        bands.append((lo, hi))
        i = j + 1

    for lo, hi in bands:
        if math.isinf(hi):
            raise TruncatedBandError(f"unstable band extends past k_max = {k_max}")
        if lo == 0.0 and not g < 0:
            raise TruncatedBandError(f"unstable band extends below k_min = {k_min}")

    if not bands:
        cls_ = Classification.STABLE
        imax = int(np.argmax(sig))
        k_star, s_star = float(ks[imax]), float(sig[imax])
        edges = None
    else:
        cls_ = Classification.LONG_WAVE if bands[0][0] == 0.0 else Classification.FINITE_BAND
        best = None
        for lo, hi in bands:
            a = max(lo, k_min)
            res = minimize_scalar(lambda lk: -sigma_plus_real(model, math.exp(lk)),
                                  bounds=(math.log(a), math.log(hi)), method="bounded",
                                  options={"xatol": 1e-10})
            cand = (float(math.exp(res.x)), float(-res.fun))
            if best is None or cand[1] > best[1]:
                best, edges = cand, (lo, hi)
        k_star, s_star = best

    return StabilityReport(
        classification=cls_,
        band_edges=edges,
        bands=bands,
        k_star=k_star,
        sigma_star=s_star,
        longwave_group=g,
        small_k_curvature=curvature,
        oscillatory=any(s.oscillatory for s in samples),
        samples=samples,
    )


def write_dispersion(samples):
    if not samples:
        raise ValueError("empty dispersion")
    out = io.StringIO()
    out.write("# units: k 1/nm; sigma 1/s; tau 1/s; delta 1/s^2\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["k", "re_sigma_plus", "im_sigma_plus", "tau", "delta"])
    for s in samples:
        w.writerow([format(v, ".17g") for v in
                    (s.k, s.sigma_plus_real, s.sigma_plus_imag, s.tau, s.delta_det)])
    return out.getvalue()


# ---------------------------------------------------------------------------
# Time integration oracle


@dataclass(frozen=True)
class EvolutionResult:
    growth_rate: float
    frequency: float
    converged: bool
    n_steps: int
    slope_residual: float


def _rk4_step_matrix(m, dt):
    # Classical RK4 applied to a constant linear system x' = M x.
    z = m * dt
    z2 = z @ z
    z3 = z2 @ z
    z4 = z3 @ z
    return np.eye(2) + z + z2 / 2.0 + z3 / 6.0 + z4 / 24.0


def evolve_mode(model, k, t_final, dt, x0=(1.0, 0.7), residual_tol=1e-6,
                max_steps=50_000_000):
    """Integrate one Fourier mode with RK4 and measure its growth.

    The growth rate is the least-squares slope of ``log |x|`` over the
    second half of the run.  When the height component changes sign at
    least four times in that window the mode is treated as oscillatory.
    Crossings are located on a local cubic interpolant; the frequency
    comes from their mean spacing and the growth rate from the slope of
    ``log |p|`` at the crossings, where the state is always a multiple of
    the same vector.

    Returns
    -------
    EvolutionResult
        ``converged`` is False (rate indeterminate) when the log-amplitude
        residual about the fitted line exceeds ``residual_tol``.
    """
    m = model.matrix(k)
    lam_max = float(np.max(np.abs(np.linalg.eigvals(m))))
    if dt <= 0 or t_final <= 0:
        raise ValueError("dt and t_final must be positive")
    if dt * lam_max >= 0.1:
        raise ValueError(f"dt * max|eigenvalue| = {dt * lam_max:.3g} must be < 0.1")
    n = int(math.ceil(t_final / dt))
    if n > max_steps:
        raise ValueError(f"{n} steps requested, more than max_steps={max_steps}")
    step = _rk4_step_matrix(m, dt)
    s00, s01, s10, s11 = step[0, 0], step[0, 1], step[1, 0], step[1, 1]

    u, p = float(x0[0]), float(x0[1])
    log_scale = 0.0
    half = n // 2
    times = np.arange(half, n + 1) * dt
    log_amp = np.empty(n - half + 1)
    u_rec = np.empty(n - half + 1)
    p_rec = np.empty(n - half + 1)
    for i in range(1, n + 1):
        u, p = s00 * u + s01 * p, s10 * u + s11 * p
        amp = math.hypot(u, p)
        if amp > 1e100 or (0 < amp < 1e-100):
            log_scale += math.log(amp)
            u, p = u / amp, p / amp
            amp = 1.0
        if i >= half:
            log_amp[i - half] = log_scale + (math.log(amp) if amp > 0 else -math.inf)
            scale = math.exp(log_scale - log_amp[i - half]) if amp > 0 else 0.0
            u_rec[i - half] = u * scale
            p_rec[i - half] = p * scale

    # u_rec, p_rec hold x / |x| (the phase); sign changes are scale-free.
    sgn = np.signbit(u_rec)
    crossings = np.nonzero(sgn[1:] != sgn[:-1])[0]
    crossings = crossings[(crossings >= 1) & (crossings + 2 < u_rec.size)]
    if crossings.size >= 4:
        tc, log_p = [], []
        for a in crossings:
            idx = np.arange(a - 1, a + 3)
            w = np.exp(log_amp[idx] - log_amp[a])
            h = idx - a  # time offsets in steps
            cu = np.polyfit(h, u_rec[idx] * w, 3)
            cp = np.polyfit(h, p_rec[idx] * w, 3)
            roots = np.roots(cu)
            roots = roots[(np.abs(roots.imag) < 1e-9) & (roots.real >= -1e-9)
                          & (roots.real <= 1 + 1e-9)].real
            if roots.size != 1:
                continue
            tc.append(times[a] + roots[0] * dt)
            log_p.append(log_amp[a] + math.log(abs(np.polyval(cp, roots[0]))))
        if len(tc) >= 4:
            tc, log_p = np.array(tc), np.array(log_p)
            freq = math.pi / float(np.mean(np.diff(tc)))
            rate, resid = _slope(tc, log_p)
            return EvolutionResult(rate, freq, resid <= residual_tol, n, resid)

    rate, resid = _slope(times, log_amp)
    return EvolutionResult(rate, 0.0, resid <= residual_tol, n, resid)


def _slope(t, y):
    tc = t - t.mean()
    slope = float(tc @ (y - y.mean()) / (tc @ tc))
    resid = y - y.mean() - slope * tc
    return slope, float(np.sqrt(np.mean(resid**2)))
