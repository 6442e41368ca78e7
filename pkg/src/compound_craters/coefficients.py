"""From fitted moments to height-equation and coupled-PDE coefficients.

Stage 1, :func:`compute_height_coefficients`, turns moment fits into the
coefficients of the pure height equation ``h_t = (Y^A + Y^B) + S_X h_xx +
S_Y h_yy`` at one incidence angle::

    Y^Z          = I0 cos(theta) M0_Z
    S_X^{Z,type} = d/dtheta [I0 cos(theta) M1_{Z,type}]
    S_Y^{Z,type} = I0 cos(theta) cot(theta) M1_{Z,type}

All values are stored per unit flux ``I0`` (ions / nm^2 / s through a plane
perpendicular to the beam).

Stage 2, :func:`steady_concentration`, assumes every coefficient scales
linearly with the concentration of its species (zero at ``c = 0``, the
measured value at the reference concentration) and finds the film
composition whose sputtered flux has the bulk composition.

Stage 3, :func:`map_to_bs_parameters`, produces the coupled-PDE parameters
``A, C, A', C'`` of the coupled height/composition (BS) model at normal incidence::

    A  = -([Y^A]' - [Y^B]')
    C  = sum_Z S^{Z,eros}(c_Z0) + S^{Z,redist}(c_Z0)
    A' = -(c_Ab [Y^B]' + c_Bb [Y^A]') / film_thickness
    C' = (c_Bb S^{A,redist}(c_A0) - c_Ab S^{B,redist}(c_B0)) / film_thickness

where ``[Y^Z]'`` is the concentration derivative of the yield.  Under the
linear model ``[Y^Z]' = Y^Z(c_ref) / c_ref`` and
``S(c) = S(c_ref) * c / c_ref``.  ``convention="literal"`` instead uses the
bare concentration prefactors ``c_Z0 * S^{Z,type}(c_ref)`` for comparison.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .angle_fit import channel_key, eval_fit, eval_fit_derivative
from .errors import ConfigError, ParameterSignError

CONVENTIONS = ("linear", "literal")

BS_UNITS = {
    "A": "nm/s per unit flux",
    "B": "nm^3/s per unit flux",
    "C": "nm^2/s per unit flux",
    "D": "nm^4/s",
    "A_prime": "1/s per unit flux",
    "B_prime": "nm^2/s",
    "C_prime": "nm/s per unit flux",
    "D_prime": "nm^3/s",
}

# Parameters that scale with the ion flux when building a LinearModel.
FLUX_SCALED = ("A", "B", "C", "A_prime", "C_prime")


@dataclass(frozen=True)
class CoefficientSet:
    """Height-equation coefficients at one angle and reference concentration.

    Per-species tuples are ordered like ``labels``.  ``Y`` is in nm/s and
    the ``S_*`` entries in nm^2/s, all per unit flux.
    """

    labels: tuple
    theta: float
    reference_concentration: tuple
    Y: tuple
    S_X_eros: tuple
    S_X_redist: tuple
    S_Y_eros: tuple
    S_Y_redist: tuple

    def __post_init__(self):
        for name in ("labels", "reference_concentration", "Y", "S_X_eros",
                     "S_X_redist", "S_Y_eros", "S_Y_redist"):
            val = tuple(getattr(self, name))
            if len(val) != 2:
                raise ValueError(f"{name} needs one entry per species")
            object.__setattr__(self, name, val)
        c = self.reference_concentration
        if not all(0.0 < ci <= 1.0 for ci in c) or abs(sum(c) - 1.0) > 1e-12:
            raise ValueError(f"invalid reference concentration {c}")

    @property
    def recession_speed(self):
        return -(self.Y[0] + self.Y[1])

    @property
    def S_X(self):
        return tuple(e + r for e, r in zip(self.S_X_eros, self.S_X_redist))

    @property
    def S_Y(self):
        return tuple(e + r for e, r in zip(self.S_Y_eros, self.S_Y_redist))

    def to_dict(self):
        return {
            "labels": list(self.labels),
            "theta": self.theta,
            "reference_concentration": list(self.reference_concentration),
            "units": {"Y": "nm/s per unit flux", "S": "nm^2/s per unit flux", "theta": "rad"},
            **{k: list(getattr(self, k)) for k in
               ("Y", "S_X_eros", "S_X_redist", "S_Y_eros", "S_Y_redist")},
        }

    @classmethod
    def from_dict(cls, d):
        d = {k: v for k, v in d.items() if k != "units"}
        return cls(**d)


def gasb_reference_coefficients():
    """Ar -> GaSb coefficients at normal incidence and 50/50 composition.

    Published MD-derived values (250 eV Ar), per unit flux.
    """
    return CoefficientSet(
        labels=("Ga", "Sb"),
        theta=0.0,
        reference_concentration=(0.5, 0.5),
        Y=(-0.0172, -0.0102),
        S_X_eros=(-0.269, -0.176),
        S_X_redist=(1.11, 1.22),
        S_Y_eros=(-0.269, -0.176),
        S_Y_redist=(1.11, 1.22),
    )


def _s_pair(m1_fit, theta):
    """(S_X, S_Y) per unit flux from a first-moment fit."""
    if m1_fit.basis.parity != "odd":
        raise ValueError(f"first-moment channel {m1_fit.channel} needs an odd-parity fit")
    m1 = eval_fit(m1_fit, theta)
    dm1 = eval_fit_derivative(m1_fit, theta)
    c, s = math.cos(theta), math.sin(theta)
    s_x = -s * m1 + c * dm1
    if theta == 0.0:
        # cot(theta) M1 -> M1'(0) as theta -> 0 because M1(0) = 0.
        s_y = dm1
    else:
        s_y = c * c / s * m1
    return s_x, s_y


def compute_height_coefficients(fits, theta=0.0, labels=None,
                                reference_concentration=(0.5, 0.5)):
    """Height-equation coefficients per unit flux at ``theta`` (radians).

    ``fits`` maps channel names (see :func:`~compound_craters.angle_fit.channel_key`)
    to fits; ``labels`` defaults to the species of the ``m0`` channels in
    the order they appear.
    """
    if labels is None:
        labels = tuple(k.split(":", 1)[1] for k in fits if k.startswith("m0:"))
    if len(labels) != 2:
        raise ValueError("cannot determine the two species from the fit channels")
    for label in labels:
        for kind in ("m0", "m1_eros", "m1_redist"):
            if channel_key(kind, label) not in fits:
                raise ValueError(f"missing fit channel {channel_key(kind, label)}")
    cos_t = math.cos(theta)
    Y, sxe, sxr, sye, syr = [], [], [], [], []
    for label in labels:
        Y.append(cos_t * eval_fit(fits[channel_key("m0", label)], theta))
        x, y = _s_pair(fits[channel_key("m1_eros", label)], theta)
        sxe.append(x)
        sye.append(y)
        x, y = _s_pair(fits[channel_key("m1_redist", label)], theta)
        sxr.append(x)
        syr.append(y)
    return CoefficientSet(tuple(labels), float(theta), tuple(reference_concentration),
                          Y, sxe, sxr, sye, syr)


@dataclass(frozen=True)
class ConcentrationModel:
    bulk: tuple
    steady: tuple
    film_thickness: float
    assumption: str = "linear: coefficient(c) = coefficient(c_ref) * c / c_ref"

    def __post_init__(self):
        for name in ("bulk", "steady"):
            pair = tuple(float(v) for v in getattr(self, name))
            if len(pair) != 2 or not all(0.0 <= v <= 1.0 for v in pair):
                raise ValueError(f"{name} concentrations must be two fractions in [0, 1]")
            if abs(sum(pair) - 1.0) > 1e-12:
                raise ValueError(f"{name} concentrations must sum to 1")
            object.__setattr__(self, name, pair)
        if not self.film_thickness > 0:
            raise ValueError("film thickness must be positive")


def steady_concentration(coeffs, bulk=(0.5, 0.5), film_thickness=3.0):
    """Steady film composition under linear-in-concentration sputtering.

    With ``Y^Z(c) = Y^Z(c_ref) c / c_ref`` the sputtered flux has the bulk
    composition when::

        c_A0 = c_Ab r_B / (c_Ab r_B + c_Bb r_A),   r_Z = |Y^Z(c_ref)| / c_Zref
    """
    ya, yb = coeffs.Y
    if ya == 0.0 and yb == 0.0:
        raise ValueError("total sputter yield is zero; no steady state")
    if not (ya < 0.0 and yb < 0.0):
        raise ValueError(f"both yields must be negative (erosive), got {coeffs.Y}")
    bulk = tuple(float(b) for b in bulk)
    if len(bulk) != 2 or not all(0.0 <= b <= 1.0 for b in bulk) or abs(sum(bulk) - 1.0) > 1e-12:
        raise ValueError(f"invalid bulk concentrations {bulk}")
    ra = abs(ya) / coeffs.reference_concentration[0]
    rb = abs(yb) / coeffs.reference_concentration[1]
    denom = bulk[0] * rb + bulk[1] * ra
    # Both fractions directly: 1 - c_A cancels when c_A is close to 1.
    steady = (bulk[0] * rb / denom, bulk[1] * ra / denom)
    return ConcentrationModel(bulk=bulk, steady=steady, film_thickness=film_thickness)


@dataclass(frozen=True)
class BsParameters:
    """Coupled-PDE parameters of the height/composition (BS) model.

    Crater-derived entries are per unit flux; ``D`` and ``B_prime`` are
    user supplied absolute rates (``None`` when not given).
    """

    A: float
    C: float
    A_prime: float
    C_prime: float
    B: float = 0.0
    D_prime: float = 0.0
    D: float = None
    B_prime: float = None
    concentration: ConcentrationModel = None
    labels: tuple = ("A", "B")
    convention: str = "linear"
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.D is not None and self.D < 0:
            raise ConfigError(f"D must be non-negative, got {self.D}")
        if self.B_prime is not None and self.B_prime < 0:
            raise ConfigError(f"B' must be non-negative, got {self.B_prime}")
        prov = {
            "A": "extrapolated", "C": "extrapolated",
            "A_prime": "extrapolated", "C_prime": "extrapolated",
            "B": "model (zero)", "D_prime": "model (zero)",
            "D": "user-supplied" if self.D is not None else "missing",
            "B_prime": "user-supplied" if self.B_prime is not None else "missing",
        }
        prov.update(self.provenance)
        object.__setattr__(self, "provenance", prov)

    @property
    def longwave_group(self):
        """``G = A' C - C' A``; positive means stable long waves."""
        return self.A_prime * self.C - self.C_prime * self.A

    def to_dict(self):
        params = {
            name: {"value": getattr(self, name), "units": BS_UNITS[name],
                   "provenance": self.provenance[name]}
            for name in BS_UNITS
        }
        out = {"labels": list(self.labels), "convention": self.convention,
               "parameters": params,
               "longwave_group": {"value": self.longwave_group,
                                  "units": "nm^2/s^2 per unit flux squared"}}
        if self.concentration is not None:
            out["concentration"] = {
                "bulk": list(self.concentration.bulk),
                "steady": list(self.concentration.steady),
                "film_thickness": self.concentration.film_thickness,
                "film_thickness_units": "nm",
                "assumption": self.concentration.assumption,
            }
        return out

    @classmethod
    def from_dict(cls, d):
        p = {k: v["value"] for k, v in d["parameters"].items()}
        conc = d.get("concentration")
        if conc is not None:
            conc = ConcentrationModel(tuple(conc["bulk"]), tuple(conc["steady"]),
                                      conc["film_thickness"], conc["assumption"])
        return cls(concentration=conc, labels=tuple(d["labels"]),
                   convention=d["convention"],
                   provenance={k: v["provenance"] for k, v in d["parameters"].items()},
                   **p)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"


def map_to_bs_parameters(coeffs, conc, D=None, B_prime=None, convention="linear",
                         rtol=1e-12):
    """Coupled-model ``A, C, A', C'`` from normal-incidence coefficients.

    Raises
    ------
    ValueError
        ``coeffs`` not at normal incidence, or ``S_X != S_Y`` there.
    ParameterSignError
        The resulting ``A'`` is not positive.
    """
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}")
    if coeffs.theta != 0.0:
        raise ValueError("BS mapping needs coefficients at normal incidence (theta = 0)")
    for sx, sy in ((coeffs.S_X_eros, coeffs.S_Y_eros), (coeffs.S_X_redist, coeffs.S_Y_redist)):
        for a, b in zip(sx, sy):
            if abs(a - b) > rtol * max(abs(a), abs(b)):
                raise ValueError(f"S_X and S_Y differ at normal incidence ({a} vs {b})")

    c_ref = coeffs.reference_concentration
    c0 = conc.steady
    cb = conc.bulk
    dY = [coeffs.Y[z] / c_ref[z] for z in (0, 1)]
    if convention == "linear":
        scale = [c0[z] / c_ref[z] for z in (0, 1)]
    else:
        scale = list(c0)
    s_eros = [scale[z] * coeffs.S_X_eros[z] for z in (0, 1)]
    s_redist = [scale[z] * coeffs.S_X_redist[z] for z in (0, 1)]
    delta = conc.film_thickness

    A = -(dY[0] - dY[1])
    C = s_eros[0] + s_eros[1] + s_redist[0] + s_redist[1]
    A_prime = -(cb[0] * dY[1] + cb[1] * dY[0]) / delta
    C_prime = (cb[1] * s_redist[0] - cb[0] * s_redist[1]) / delta
    if not A_prime > 0:
        raise ParameterSignError(f"A' = {A_prime} is not positive; resupply term must damp")
    return BsParameters(A=A, C=C, A_prime=A_prime, C_prime=C_prime, D=D, B_prime=B_prime,
                        concentration=conc, labels=coeffs.labels, convention=convention)
