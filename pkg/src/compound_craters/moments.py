"""Crater-function moments from per-impact displacement data.

Per impact, each species contributes a zeroth moment (eroded volume), an
erosive first moment (volume-weighted initial positions of sputtered
atoms) and a redistributive first moment (volume-weighted displacements of
retained atoms).  First moments are 2-vectors in the surface plane with +x
along the projected beam direction.

Before the moments are taken, :func:`filter_noise` removes displacement
that is not caused by the impact: a uniform drift from residual stress and
a cell-scale shear linear in depth, both measured on an annulus of atoms
far from the impact point.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import FilterError, ImpactDataError
from .geometry import from_beam_frame, minimal_image, to_beam_frame

MIN_ANNULUS_ATOMS = 10

CHANNEL_KINDS = ("m0", "m1_eros_x", "m1_eros_y", "m1_redist_x", "m1_redist_y")
CHANNEL_UNITS = {"m0": "nm^3", "m1": "nm^4"}


@dataclass(frozen=True)
class FilterConfig:
    """Annulus radii are fractions of ``min(L_x, L_y)``."""

    annulus_inner: float = 0.35
    annulus_outer: float = 0.5
    shear_correction: bool = True

    def __post_init__(self):
        if not 0.0 < self.annulus_inner < self.annulus_outer <= 0.5:
            raise ValueError(
                "annulus fractions must satisfy 0 < inner < outer <= 0.5, got "
                f"{self.annulus_inner}, {self.annulus_outer}"
            )


@dataclass(frozen=True, eq=False)
class MomentVector:
    """Moments of one impact (or averages over many).

    Attributes
    ----------
    m0 : ndarray, shape (2,)
        Zeroth moment per species, nm^3.
    m1_eros, m1_redist : ndarray, shape (2, 2)
        First moments, indexed ``[species, component]``, nm^4.
    """

    m0: np.ndarray
    m1_eros: np.ndarray
    m1_redist: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "m0", np.asarray(self.m0, dtype=float).reshape(2))
        object.__setattr__(self, "m1_eros", np.asarray(self.m1_eros, dtype=float).reshape(2, 2))
        object.__setattr__(self, "m1_redist", np.asarray(self.m1_redist, dtype=float).reshape(2, 2))

    def as_array(self):
        """Flatten to the 10 channels in :func:`channel_names` order."""
        return np.array([
            self.m0[0], self.m0[1],
            *self.m1_eros[0], *self.m1_eros[1],
            *self.m1_redist[0], *self.m1_redist[1],
        ])

    @classmethod
    def from_array(cls, values):
        v = np.asarray(values, dtype=float)
        return cls(v[0:2], v[2:6].reshape(2, 2), v[6:10].reshape(2, 2))

    @classmethod
    def zeros(cls):
        return cls.from_array(np.zeros(10))

    def __eq__(self, other):
        if not isinstance(other, MomentVector):
            return NotImplemented
        return np.array_equal(self.as_array(), other.as_array())

    __hash__ = None


@dataclass(frozen=True, eq=False)
class MomentSample:
    theta_deg: float
    n_impacts: int
    mean: MomentVector
    stderr: MomentVector

    def __post_init__(self):
        if self.n_impacts < 1:
            raise ValueError("n_impacts must be >= 1")
        if np.any(self.stderr.as_array() < 0):
            raise ValueError("standard errors must be non-negative")

    @property
    def theta(self):
        return math.radians(self.theta_deg)

    def __eq__(self, other):
        if not isinstance(other, MomentSample):
            return NotImplemented
        return (self.theta_deg == other.theta_deg and self.n_impacts == other.n_impacts
                and self.mean == other.mean and self.stderr == other.stderr)

    __hash__ = None


def channel_names(labels=("A", "B")):
    a, b = labels
    return [
        f"m0_{a}", f"m0_{b}",
        f"m1_eros_x_{a}", f"m1_eros_y_{a}", f"m1_eros_x_{b}", f"m1_eros_y_{b}",
        f"m1_redist_x_{a}", f"m1_redist_y_{a}", f"m1_redist_x_{b}", f"m1_redist_y_{b}",
    ]


def _displacements(impact):
    disp = impact.pos_final - impact.pos_initial
    disp[:, :2] = minimal_image(disp[:, :2], impact.cell)
    return disp


def filter_noise(impact, cfg=FilterConfig()):
    """Remove annulus-measured drift and depth-linear shear from an impact.

    The mean lab-frame displacement of retained atoms inside the annulus is
    subtracted from every retained atom.  With ``cfg.shear_correction`` a
    profile ``d(z) = s * (z - zbar)`` is then fitted by least squares to the
    in-plane displacements of the annulus atoms (in the beam-aligned frame,
    ``z`` the initial depth) and subtracted from every retained atom.
    Sputtered atoms are returned unchanged.

    Raises
    ------
    FilterError
        Fewer than ``MIN_ANNULUS_ATOMS`` retained atoms in the annulus, or all
        annulus atoms at one depth while shear correction is on.
    """
    retained = ~impact.sputtered
    rel = minimal_image(impact.pos_initial[:, :2] - impact.impact_point, impact.cell)
    r = np.hypot(rel[:, 0], rel[:, 1])
    lmin = float(np.min(impact.cell))
    ann = retained & (r >= cfg.annulus_inner * lmin) & (r <= cfg.annulus_outer * lmin)
    n_ann = int(np.count_nonzero(ann))
    if n_ann < MIN_ANNULUS_ATOMS:
        raise FilterError(
            f"annulus holds {n_ann} retained atoms, need at least {MIN_ANNULUS_ATOMS}",
            record=impact.impact_id,
        )

    # Sort by atom id so the averages do not depend on storage order.
    order = np.argsort(impact.atom_ids, kind="stable")
    ann_idx = order[ann[order]]
    disp = _displacements(impact)
    drift = np.array([math.fsum(disp[ann_idx, c]) / n_ann for c in range(3)])
    correction = np.zeros_like(disp)
    correction[retained] = drift

    if cfg.shear_correction:
        z = impact.pos_initial[:, 2]
        zbar = math.fsum(z[ann_idx]) / n_ann
        zc = z - zbar
        szz = math.fsum(zc[ann_idx] ** 2)
        if szz <= (1e-12 * max(1.0, abs(zbar))) ** 2 * n_ann:
            raise FilterError(
                "annulus atoms share a single depth; shear is undetermined",
                record=impact.impact_id,
            )
        d_beam = to_beam_frame(disp[:, :2] - drift[:2], impact.azimuth_deg)
        slope = np.array(
            [math.fsum(zc[ann_idx] * d_beam[ann_idx, c]) / szz for c in range(2)]
        )
        shear = from_beam_frame(np.outer(zc, slope), impact.azimuth_deg)
        correction[retained, :2] += shear[retained]

    return impact.with_final_positions(impact.pos_final - correction)


def impact_moments(impact, species):
    """Zeroth and first moments of a single impact.

    ``species`` is the (A, B) pair of :class:`SpeciesId` whose atomic
    volumes weight each atom.  In-plane positions are taken relative to the
    impact point under the minimal-image convention and rotated so +x lies
    along the projected beam.
    """
    omega = np.array([species[0].atomic_volume, species[1].atomic_volume])
    order = np.argsort(impact.atom_ids, kind="stable")
    rel = minimal_image(impact.pos_initial[order, :2] - impact.impact_point, impact.cell)
    rel = to_beam_frame(rel, impact.azimuth_deg)
    disp = to_beam_frame(_displacements(impact)[order, :2], impact.azimuth_deg)
    spec = impact.species[order]
    sput = impact.sputtered[order]

    m0 = np.zeros(2)
    m1_eros = np.zeros((2, 2))
    m1_redist = np.zeros((2, 2))
    for z in (0, 1):
        eroded = sput & (spec == z)
        moved = ~sput & (spec == z)
        m0[z] = -omega[z] * np.count_nonzero(eroded)
        for c in (0, 1):
            m1_eros[z, c] = -omega[z] * math.fsum(rel[eroded, c])
            m1_redist[z, c] = omega[z] * math.fsum(disp[moved, c])
    return MomentVector(m0, m1_eros, m1_redist)


def _moments_worker(args):
    impact, species, cfg = args
    if cfg is not None:
        impact = filter_noise(impact, cfg)
    return impact_moments(impact, species).as_array()


def _summarize(theta_deg, rows):
    n = len(rows)
    data = np.array(rows)
    mean = np.array([math.fsum(data[:, c]) / n for c in range(data.shape[1])])
    if n > 1:
        var = np.array(
            [math.fsum((data[:, c] - mean[c]) ** 2) / (n - 1) for c in range(data.shape[1])]
        )
        se = np.sqrt(var / n)
    else:
        se = np.zeros_like(mean)
    return MomentSample(theta_deg, n, MomentVector.from_array(mean), MomentVector.from_array(se))


def aggregate_moments(impact_set, cfg=FilterConfig(), n_jobs=1):
    """Per-angle mean moments and standard errors of the mean.

    Parameters
    ----------
    impact_set : ImpactSet
    cfg : FilterConfig or None
        Noise filter applied to every impact; ``None`` skips filtering.
    n_jobs : int
        Worker processes for the per-impact stage.  Results are identical
        for any value: impacts are processed in id order and all sums are
        exactly rounded.

    Returns
    -------
    list of MomentSample
        Sorted by angle.  A single-impact angle gets zero standard error.
    """
    groups = impact_set.angle_groups()
    tasks = [(imp, impact_set.species, cfg) for theta in groups for imp in groups[theta]]
    if n_jobs and n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            rows = list(pool.map(_moments_worker, tasks, chunksize=max(1, len(tasks) // (4 * n_jobs))))
    else:
        rows = [_moments_worker(t) for t in tasks]

    samples = []
    start = 0
    for theta, members in groups.items():
        samples.append(_summarize(theta, rows[start:start + len(members)]))
        start += len(members)
    return samples


# ---------------------------------------------------------------------------
# CSV moment table


def write_moment_table(samples, labels):
    names = channel_names(labels)
    out = io.StringIO()
    out.write("# crater-function moments per incidence angle\n")
    out.write("# units: theta_deg degrees; m0 nm^3; m1 nm^4; x along projected beam\n")
    out.write(f"# species: {labels[0]} {labels[1]}\n")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["theta_deg", "n_impacts"]
                    + [f"mean_{c}" for c in names] + [f"stderr_{c}" for c in names])
    for s in samples:
        writer.writerow(
            [format(s.theta_deg, ".17g"), s.n_impacts]
            + [format(v, ".17g") for v in s.mean.as_array()]
            + [format(v, ".17g") for v in s.stderr.as_array()]
        )
    return out.getvalue()


def read_moment_table(text):
    """Inverse of :func:`write_moment_table`; returns ``(samples, labels)``."""
    lines = text.splitlines()
    labels = None
    body = []
    for ln in lines:
        if ln.startswith("#"):
            if ln.startswith("# species:"):
                labels = tuple(ln.split(":", 1)[1].split())
            continue
        if ln.strip():
            body.append(ln)
    if labels is None or len(labels) != 2:
        raise ImpactDataError("moment table lacks a '# species:' header")
    reader = csv.reader(body)
    header = next(reader, None)
    names = channel_names(labels)
    expected = ["theta_deg", "n_impacts"] + [f"mean_{c}" for c in names] + [f"stderr_{c}" for c in names]
    if header != expected:
        raise ImpactDataError("moment table columns do not match the expected layout", line=1)
    samples = []
    for lineno, row in enumerate(reader, start=2):
        try:
            vals = [float(v) for v in row]
        except ValueError:
            raise ImpactDataError("non-numeric entry in moment table", record=lineno) from None
        if len(vals) != 22:
            raise ImpactDataError("wrong number of columns", record=lineno)
        samples.append(MomentSample(vals[0], int(vals[1]),
                                    MomentVector.from_array(vals[2:12]),
                                    MomentVector.from_array(vals[12:22])))
    return samples, labels
