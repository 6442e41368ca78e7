"""Synthetic impact generator with closed-form moment expectations.

Each species follows a :class:`SpeciesCraterLaw` whose angle dependence is
written in the same parity-constrained trigonometric series used by the
angle fits:

* mean sputtered count per impact ``lambda(theta) = sum a_n cos((2n-1) theta)``
* mean beam-direction offset of a sputtered atom ``m(theta) = sum e_n sin(2 n theta)``
* mean beam-direction displacement of a redistributed atom
  ``d(theta) = sum b_n sin(2 n theta)``

The expected moments per impact are then

* ``M0 = -Omega * E[count]``
* ``M1_eros = (-Omega * E[count] * m(theta), 0)``
* ``M1_redist = (Omega * N_redist * d(theta), 0)``

In deterministic mode the count is ``round(lambda)`` and atoms are laid out
in patterns whose offsets cancel, so these expressions hold to rounding.
In random mode counts are Poisson, positions and displacements Gaussian,
and impact points and azimuths uniform.

Every impact also carries rings of undisplaced background atoms at
0.40 and 0.45 of the smaller cell extent, at two depths, so that the
annulus noise filter has material to measure drift and shear on.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .geometry import from_beam_frame
from .impact_model import ImpactRecord, ImpactSet, SpeciesId
from .moments import MomentSample, MomentVector

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _cos_series(coeffs, theta):
    return sum(c * math.cos((2 * n - 1) * theta) for n, c in enumerate(coeffs, start=1))


def _sin_series(coeffs, theta):
    return sum(c * math.sin(2 * n * theta) for n, c in enumerate(coeffs, start=1))


@dataclass(frozen=True)
class SpeciesCraterLaw:
    sputter_yield: tuple = ()
    sputter_offset: tuple = ()
    redist_count: int = 0
    redist_shift: tuple = ()

    def __post_init__(self):
        for name in ("sputter_yield", "sputter_offset", "redist_shift"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if int(self.redist_count) != self.redist_count or self.redist_count < 0:
            raise ValueError("redist_count must be a non-negative integer")
        object.__setattr__(self, "redist_count", int(self.redist_count))

    def mean_count(self, theta):
        return _cos_series(self.sputter_yield, theta)

    def offset(self, theta):
        return _sin_series(self.sputter_offset, theta)

    def shift(self, theta):
        return _sin_series(self.redist_shift, theta)


@dataclass(frozen=True)
class SyntheticCraterSpec:
    """Parameters of the synthetic crater generator.

    ``drift`` (nm) and ``shear`` (nm per nm of depth, lab frame) contaminate
    the final positions of every retained atom; sputtered atoms are left
    alone.  Set them to zero for a clean dataset.
    """

    species: tuple = (SpeciesId("A", 0.02), SpeciesId("B", 0.02))
    laws: tuple = (SpeciesCraterLaw(), SpeciesCraterLaw())
    placement_spread: float = 0.5
    displacement_spread: float = 0.3
    crater_radius: float = 2.0
    cell: tuple = (20.0, 20.0)
    surface_z: float = 0.0
    n_background: int = 24
    drift: tuple = (0.0, 0.0, 0.0)
    shear: tuple = (0.0, 0.0)
    deterministic: bool = True
    seed: int = 0

    def __post_init__(self):
        if len(self.species) != 2 or len(self.laws) != 2:
            raise ValueError("need exactly two species and two laws")
        if self.placement_spread < 0 or self.displacement_spread < 0:
            raise ValueError("spreads must be non-negative")
        if self.crater_radius <= 0 or min(self.cell) <= 0:
            raise ValueError("crater radius and cell extents must be positive")
        if self.crater_radius >= 0.3 * min(self.cell):
            raise ValueError("crater must stay well inside the filter annulus")
        if self.n_background < 0:
            raise ValueError("n_background must be non-negative")
        if len(self.drift) != 3 or len(self.shear) != 2:
            raise ValueError("drift is a 3-vector and shear a 2-vector")

    def to_dict(self):
        """JSON-compatible representation (tuples become lists)."""
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "species" in d:
            d["species"] = tuple(
                s if isinstance(s, SpeciesId) else SpeciesId(s["label"], s["atomic_volume"])
                for s in d["species"]
            )
        if "laws" in d:
            d["laws"] = tuple(
                law if isinstance(law, SpeciesCraterLaw) else SpeciesCraterLaw(**law)
                for law in d["laws"]
            )
        for key in ("cell", "drift", "shear"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _ring(n, radius, phase=0.0):
    a = phase + 2.0 * math.pi * np.arange(n) / max(n, 1)
    return np.column_stack([radius * np.cos(a), radius * np.sin(a)])


def _count(spec, law, theta, rng):
    lam = law.mean_count(theta)
    if lam < -1e-12:
        raise ValueError(f"negative mean sputter count {lam} at theta={math.degrees(theta)}")
    lam = max(lam, 0.0)
    if spec.deterministic:
        return int(round(lam))
    return int(rng.poisson(lam))


def _build_impact(spec, theta_deg, impact_id, index, rng):
    theta = math.radians(theta_deg)
    lx, ly = spec.cell
    if spec.deterministic:
        point = np.array([(index * GOLDEN) % 1.0 * lx, (index * GOLDEN**2) % 1.0 * ly])
        azimuth = (index * 137.5) % 360.0
    else:
        point = rng.uniform(0.0, 1.0, size=2) * np.array(spec.cell)
        azimuth = float(rng.uniform(0.0, 360.0))

    ids, species, pi_beam, pf_beam = [], [], [], []
    sputtered = []

    def emit(z, start, end, sput):
        ids.append(len(ids) + 1)
        species.append(z)
        pi_beam.append(start)
        pf_beam.append(end)
        sputtered.append(sput)

    for z, law in enumerate(spec.laws):
        depth_shift = -0.05 * z
        n_sput = _count(spec, law, theta, rng)
        m = law.offset(theta)
        if n_sput:
            if spec.deterministic:
                # Symmetric pairs about (m, 0); an odd count puts one atom on it.
                offs = np.zeros((n_sput, 2))
                half = n_sput // 2
                ring = _ring(max(half, 1), spec.placement_spread, phase=0.3)[:half]
                offs[:half] = ring
                offs[half:2 * half] = -ring
                xy = offs + np.array([m, 0.0])
            else:
                xy = rng.normal(0.0, spec.placement_spread, size=(n_sput, 2)) + np.array([m, 0.0])
            for k in range(n_sput):
                start = (xy[k, 0], xy[k, 1], spec.surface_z - 0.1 + depth_shift)
                end = (xy[k, 0], xy[k, 1], spec.surface_z + 5.0)
                emit(z, start, end, True)

        n_red = law.redist_count
        d = law.shift(theta)
        if n_red:
            if spec.deterministic:
                xy = _ring(n_red, 0.5 * spec.crater_radius, phase=0.1)
                depths = spec.surface_z - 0.3 - 0.2 * (np.arange(n_red) % 4) + depth_shift
                dd = np.tile([d, 0.0, 0.0], (n_red, 1))
            else:
                rr = spec.crater_radius * np.sqrt(rng.uniform(0.0, 1.0, n_red))
                aa = rng.uniform(0.0, 2.0 * math.pi, n_red)
                xy = np.column_stack([rr * np.cos(aa), rr * np.sin(aa)])
                depths = spec.surface_z - rng.uniform(0.2, 1.5, n_red)
                dd = rng.normal(0.0, spec.displacement_spread, size=(n_red, 3))
                dd[:, 0] += d
            for k in range(n_red):
                start = (xy[k, 0], xy[k, 1], depths[k])
                end = (xy[k, 0] + dd[k, 0], xy[k, 1] + dd[k, 1], depths[k] + dd[k, 2])
                emit(z, start, end, False)

    nb = spec.n_background
    lmin = min(spec.cell)
    for j in range(nb):
        radius = (0.40 if j % 2 == 0 else 0.45) * lmin
        a = 2.0 * math.pi * j / nb
        start = (radius * math.cos(a), radius * math.sin(a),
                 spec.surface_z - (1.0 if (j // 2) % 2 == 0 else 3.0))
        emit(j % 2, start, start, False)

    pi_beam = np.array(pi_beam, dtype=float)
    pf_beam = np.array(pf_beam, dtype=float)
    pi_lab = pi_beam.copy()
    pf_lab = pf_beam.copy()
    pi_lab[:, :2] = from_beam_frame(pi_beam[:, :2], azimuth)
    pf_lab[:, :2] = from_beam_frame(pf_beam[:, :2], azimuth)
    pi_lab[:, :2] += point
    pf_lab[:, :2] += point

    retained = ~np.array(sputtered)
    drift = np.array(spec.drift, dtype=float)
    shear = np.array(spec.shear, dtype=float)
    pf_lab[retained] += drift
    pf_lab[retained, :2] += np.outer(pi_lab[retained, 2], shear)

    cell = np.array(spec.cell)
    pi_lab[:, :2] = np.mod(pi_lab[:, :2], cell)
    pf_lab[:, :2] = np.mod(pf_lab[:, :2], cell)

    record = ImpactRecord(
        impact_id=impact_id, theta_deg=theta_deg, azimuth_deg=azimuth,
        impact_point=point, cell=cell, surface_z=spec.surface_z,
        atom_ids=ids, species=species, pos_initial=pi_lab, pos_final=pf_lab,
        sputtered=sputtered,
    )
    return record


def expected_moments(spec, theta_deg, impacts_per_angle=1):
    """Closed-form expectation (and standard error of an n-impact mean)."""
    theta = math.radians(theta_deg)
    mean = np.zeros(10)
    var = np.zeros(10)
    sp, sd = spec.placement_spread, spec.displacement_spread
    for z, (law, sid) in enumerate(zip(spec.laws, spec.species)):
        om = sid.atomic_volume
        lam = max(law.mean_count(theta), 0.0)
        count = float(round(lam)) if spec.deterministic else lam
        m = law.offset(theta)
        d = law.shift(theta)
        mean[z] = -om * count
        mean[2 + 2 * z] = -om * count * m
        mean[6 + 2 * z] = om * law.redist_count * d
        if not spec.deterministic:
            # Compound Poisson: Var(sum X) = lambda * E[X^2].
            var[z] = om**2 * lam
            var[2 + 2 * z] = om**2 * lam * (m**2 + sp**2)
            var[3 + 2 * z] = om**2 * lam * sp**2
            var[6 + 2 * z] = om**2 * law.redist_count * sd**2
            var[7 + 2 * z] = om**2 * law.redist_count * sd**2
    return MomentSample(
        theta_deg, impacts_per_angle,
        MomentVector.from_array(mean),
        MomentVector.from_array(np.sqrt(var / impacts_per_angle)),
    )


def generate_synthetic_impacts(spec, angles, impacts_per_angle):
    """Generate an impact set and the analytic moment expectation per angle.

    Parameters
    ----------
    spec : SyntheticCraterSpec
    angles : sequence of float
        Incidence angles in degrees.
    impacts_per_angle : int

    Returns
    -------
    (ImpactSet, list of MomentSample)
        The expectations are sorted by angle; their ``stderr`` is the
        analytic standard error of an ``impacts_per_angle`` mean (zero in
        deterministic mode).
    """
    if impacts_per_angle < 1:
        raise ValueError("impacts_per_angle must be >= 1")
    angles = [float(a) for a in angles]
    if len(set(angles)) != len(angles):
        raise ValueError("angles must be distinct")
    rng = np.random.default_rng(spec.seed)
    impacts = []
    for theta_deg in angles:
        for j in range(impacts_per_angle):
            impacts.append(_build_impact(spec, theta_deg, len(impacts), j, rng))
    metadata = {"generator": "synthetic", "spec": spec.to_dict()}
    impact_set = ImpactSet(species=spec.species, impacts=impacts, metadata=metadata)
    expected = [expected_moments(spec, a, impacts_per_angle) for a in sorted(angles)]
    return impact_set, expected
