"""Parity-constrained trigonometric fits of moments versus incidence angle.

Two bases are used::

    even:  cos((2n - 1) theta),  n = 1..N   (vanishes at 90 degrees)
    odd:   sin(2 n theta),       n = 1..N   (vanishes at 0 and 90 degrees)

Zeroth moments are even in theta and vanish at grazing incidence; first
moments along the beam are odd and vanish at both normal and grazing
incidence.

:class:`ParityFourierRegressor` is a scikit-learn compatible estimator
(``fit`` / ``predict`` / ``get_params``) so the fit composes with model
selection tooling.  :func:`fit_moment_curves` applies it to every channel
of a list of :class:`~compound_craters.moments.MomentSample`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import RankDeficientFitError

PARITIES = ("even", "odd")


@dataclass(frozen=True)
class FitBasis:
    parity: str = "even"
    n_terms: int = 3

    def __post_init__(self):
        if self.parity not in PARITIES:
            raise ValueError(f"parity must be one of {PARITIES}, got {self.parity!r}")
        if int(self.n_terms) != self.n_terms or self.n_terms < 1:
            raise ValueError("n_terms must be a positive integer")

    def frequencies(self):
        n = np.arange(1, self.n_terms + 1)
        return 2 * n - 1 if self.parity == "even" else 2 * n

    def design(self, theta):
        """Basis functions evaluated at ``theta`` (radians); shape (len, n_terms)."""
        t = np.asarray(theta, dtype=float).reshape(-1, 1)
        w = self.frequencies()
        return np.cos(w * t) if self.parity == "even" else np.sin(w * t)

    def design_derivative(self, theta):
        t = np.asarray(theta, dtype=float).reshape(-1, 1)
        w = self.frequencies()
        return -w * np.sin(w * t) if self.parity == "even" else w * np.cos(w * t)


@dataclass(frozen=True)
class FourierFit:
    """A fitted channel.  ``coefficients`` carry the channel's units."""

    channel: str
    basis: FitBasis
    coefficients: tuple
    residual_rms: float = 0.0
    n_points: int = 0
    coef_stderr: tuple = field(default=None, compare=False)

    def __post_init__(self):
        coefs = tuple(float(c) for c in self.coefficients)
        if len(coefs) != self.basis.n_terms:
            raise ValueError("coefficient count does not match the basis")
        object.__setattr__(self, "coefficients", coefs)
        if self.coef_stderr is not None:
            object.__setattr__(self, "coef_stderr", tuple(float(c) for c in self.coef_stderr))

    def to_dict(self):
        return {
            "basis": {"parity": self.basis.parity, "n_terms": self.basis.n_terms},
            "coefficients": list(self.coefficients),
            "residual_rms": self.residual_rms,
            "n_points": self.n_points,
        }

    @classmethod
    def from_dict(cls, channel, d):
        return cls(channel, FitBasis(**d["basis"]), d["coefficients"],
                   float(d["residual_rms"]), int(d["n_points"]))


def eval_fit(fit, theta):
    """Evaluate a fit at ``theta`` (radians, scalar or array)."""
    vals = fit.basis.design(theta) @ np.asarray(fit.coefficients)
    return float(vals[0]) if np.ndim(theta) == 0 else vals


def eval_fit_derivative(fit, theta):
    """Analytic d/dtheta of the fit, channel units per radian."""
    vals = fit.basis.design_derivative(theta) @ np.asarray(fit.coefficients)
    return float(vals[0]) if np.ndim(theta) == 0 else vals


class ParityFourierRegressor(BaseEstimator, RegressorMixin):
    """Least-squares fit of a parity-constrained trigonometric series.

    Parameters
    ----------
    parity : {'even', 'odd'}
    n_terms : int

    Attributes
    ----------
    coef_ : ndarray of shape (n_terms,)
    coef_stderr_ : ndarray of shape (n_terms,)
        Standard errors of the coefficients.  With ``sample_weight`` given
        as inverse variances they follow from ``(X^T W X)^-1``; without
        weights the residual variance is used (NaN when there are no
        degrees of freedom left).
    residual_rms_ : float
    n_points_ : int

    Notes
    -----
    ``X`` holds angles in radians, either 1-d or a single column.
    """

    def __init__(self, parity="even", n_terms=3):
        self.parity = parity
        self.n_terms = n_terms

    def _basis(self):
        return FitBasis(self.parity, self.n_terms)

    @staticmethod
    def _angles(X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 2 and X.shape[1] != 1:
            raise ValueError("X must be a single column of angles")
        return X.reshape(-1)

    def fit(self, X, y, sample_weight=None):
        X, y = check_X_y(self._angles(X).reshape(-1, 1), y, y_numeric=True)
        theta = X[:, 0]
        basis = self._basis()
        if np.unique(theta).size < basis.n_terms:
            raise RankDeficientFitError(
                f"{np.unique(theta).size} distinct angles cannot determine {basis.n_terms} terms"
            )
        design = basis.design(theta)
        if sample_weight is None:
            w = np.ones_like(y)
        else:
            w = np.asarray(sample_weight, dtype=float)
            if w.shape != y.shape or np.any(~np.isfinite(w)) or np.any(w <= 0):
                raise ValueError("sample_weight must be positive and finite, one per sample")
        sw = np.sqrt(w)
        a = design * sw[:, None]
        if np.linalg.matrix_rank(a) < basis.n_terms:
            raise RankDeficientFitError("design matrix is rank deficient for these angles")
        coef, *_ = np.linalg.lstsq(a, y * sw, rcond=None)
        resid = y - design @ coef
        normal_inv = np.linalg.inv(a.T @ a)
        if sample_weight is not None:
            cov = normal_inv
        else:
            dof = y.size - basis.n_terms
            cov = normal_inv * (resid @ resid / dof) if dof > 0 else np.full_like(normal_inv, np.nan)
        self.coef_ = coef
        self.coef_stderr_ = np.sqrt(np.diag(cov))
        self.residual_rms_ = float(np.sqrt(np.mean(resid**2)))
        self.n_points_ = int(y.size)
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        theta = check_array(self._angles(X).reshape(-1, 1))[:, 0]
        return self._basis().design(theta) @ self.coef_

    def predict_derivative(self, X):
        check_is_fitted(self, "coef_")
        theta = check_array(self._angles(X).reshape(-1, 1))[:, 0]
        return self._basis().design_derivative(theta) @ self.coef_

    def to_fit(self, channel):
        check_is_fitted(self, "coef_")
        return FourierFit(channel, self._basis(), self.coef_, self.residual_rms_,
                          self.n_points_, self.coef_stderr_)


def channel_key(kind, label):
    """Fit channel name, e.g. ``channel_key('m1_redist', 'Ga') == 'm1_redist:Ga'``."""
    return f"{kind}:{label}"


# (kind, index into the flat moment vector for species 0, parity)
_FIT_CHANNELS = (("m0", 0, 1, "even"), ("m1_eros", 2, 4, "odd"), ("m1_redist", 6, 8, "odd"))


def fit_moment_curves(samples, labels=("A", "B"), n_terms=3, weighted=False):
    """Fit the six channels needed downstream: m0, m1_eros_x, m1_redist_x per species.

    Parameters
    ----------
    samples : list of MomentSample
    labels : pair of str
        Species labels used in the channel names.
    n_terms : int
    weighted : bool
        Weight points by ``1 / stderr**2``.  Requires non-zero standard
        errors everywhere.

    Returns
    -------
    dict
        Channel name -> :class:`FourierFit`, species-major order.
    """
    theta = np.array([s.theta for s in samples])
    means = np.array([s.mean.as_array() for s in samples])
    errs = np.array([s.stderr.as_array() for s in samples])
    fits = {}
    for z, label in enumerate(labels):
        for kind, idx_a, idx_b, parity in _FIT_CHANNELS:
            col = idx_a if z == 0 else idx_b
            sw = None
            if weighted:
                if np.any(errs[:, col] <= 0):
                    raise ValueError(f"weighted fit needs positive stderr for {kind}:{label}")
                sw = 1.0 / errs[:, col] ** 2
            reg = ParityFourierRegressor(parity, n_terms).fit(theta, means[:, col], sample_weight=sw)
            key = channel_key(kind, label)
            fits[key] = reg.to_fit(key)
    return fits


def write_fits(fits):
    return json.dumps({k: f.to_dict() for k, f in fits.items()}, indent=2) + "\n"


def read_fits(text):
    return {k: FourierFit.from_dict(k, d) for k, d in json.loads(text).items()}
