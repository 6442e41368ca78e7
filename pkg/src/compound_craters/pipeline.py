"""Staged pipeline: impacts -> moments -> fits -> coefficients -> BS -> stability.

Every stage reads and writes plain interchange files, so a stage rerun
from its persisted predecessor reproduces the full run byte for byte.

=====================  ==========================  =========================
stage                  reads                       writes
=====================  ==========================  =========================
synth                  synthetic spec              impacts.cfi, expected_moments.csv
moments                impacts (CFI / JSON)        moments.csv (or .json)
fit                    moments                     fits.json
coeffs                 fits.json                   coefficients.json
bs                     coefficients.json           bs_parameters.json
stability              bs_parameters.json          stability_report.json, dispersion.csv
report                 output directory            moments_vs_angle.csv,
                                                   coefficients_vs_angle.csv,
                                                   dispersion.csv, summary.txt
=====================  ==========================  =========================
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from importlib import resources

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .angle_fit import (
    channel_key, eval_fit, fit_moment_curves, read_fits, write_fits,
)
from .coefficients import (
    CONVENTIONS, BsParameters, CoefficientSet, compute_height_coefficients,
    gasb_reference_coefficients, map_to_bs_parameters, steady_concentration,
)
from .errors import ConfigError, CraterError, ImpactDataError
from .impact_model import SpeciesId, read_impact_set, save_impact_set
from .moments import (
    FilterConfig, MomentSample, MomentVector, aggregate_moments, channel_names,
    read_moment_table, write_moment_table,
)
from .stability import LinearModel, classify_stability, evolve_mode, write_dispersion
from .synthetic import SyntheticCraterSpec, generate_synthetic_impacts

log = logging.getLogger(__name__)


class StageError(CraterError):
    """An error raised inside a named pipeline stage."""

    def __init__(self, stage, exc):
        self.stage = stage
        self.cause = exc
        self.exit_code = getattr(exc, "exit_code", 1)
        super().__init__(f"[{stage}] {exc}")


def load_bundled(name):
    return resources.files("compound_craters").joinpath("data", name).read_text("utf-8")


def bundled_synthetic_spec():
    d = json.loads(load_bundled("synthetic_default.json"))
    return SyntheticCraterSpec.from_dict(d["spec"]), d["angles"], d["impacts_per_angle"]


@dataclass
class PipelineConfig:
    """All settings of a pipeline run; mirrors the CLI flags one to one.

    Exactly one data source is used, checked in this order:
    ``coefficients`` (``"gasb"`` or a coefficients JSON path), ``input``
    (impact file), ``synthetic`` (spec dict, or ``"bundled"``).
    """

    output_dir: str = "pipeline_out"
    input: str = None
    input_format: str = None
    synthetic: object = None
    angles: list = None
    impacts_per_angle: int = None
    seed: int = None
    coefficients: str = None
    atomic_volumes: list = None
    annulus_inner: float = 0.35
    annulus_outer: float = 0.5
    shear_correction: bool = True
    apply_filter: bool = True
    n_terms: int = 3
    weighted: bool = False
    theta_deg: float = 0.0
    bulk: list = field(default_factory=lambda: [0.5, 0.5])
    film_thickness: float = 3.0
    convention: str = "linear"
    flux: float = 1.0
    D: float = None
    B_prime: float = None
    k_min: float = 1e-4
    k_max: float = 10.0
    n_samples: int = 400
    format: str = "csv"
    n_jobs: int = 1

    @classmethod
    def from_mapping(cls, mapping):
        known = {f.name for f in fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        cfg = cls(**mapping)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        """Read a JSON (``.json``) or TOML (anything else) configuration file."""
        try:
            with open(path, "rb") as fh:
                raw = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            if str(path).endswith(".json"):
                data = json.loads(raw)
            else:
                data = tomllib.loads(raw.decode("utf-8"))
        except Exception as exc:  # noqa: BLE001 - any parse failure is a config error
            raise ConfigError(f"cannot parse config {path}: {exc}") from None
        return cls.from_mapping(data)

    def to_dict(self):
        return asdict(self)

    def filter_config(self):
        if not self.apply_filter:
            return None
        try:
            return FilterConfig(self.annulus_inner, self.annulus_outer, self.shear_correction)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def validate(self, need_stability=True):
        self.filter_config()
        if self.format not in ("csv", "json"):
            raise ConfigError(f"format must be 'csv' or 'json', got {self.format!r}")
        if self.convention not in CONVENTIONS:
            raise ConfigError(f"convention must be one of {CONVENTIONS}")
        for name in ("film_thickness", "flux", "k_min", "k_max"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not self.k_min < self.k_max:
            raise ConfigError("k_min must be smaller than k_max")
        if len(self.bulk) != 2 or abs(sum(self.bulk) - 1.0) > 1e-12 or min(self.bulk) < 0:
            raise ConfigError(f"bulk must be two fractions summing to 1, got {self.bulk}")
        if self.atomic_volumes is not None and (
            len(self.atomic_volumes) != 2 or min(self.atomic_volumes) <= 0
        ):
            raise ConfigError("atomic_volumes must be two positive numbers (nm^3)")
        if self.coefficients is None and self.input is None and self.synthetic is None:
            raise ConfigError("no data source: set one of coefficients, input, synthetic")
        if need_stability:
            for name in ("D", "B_prime"):
                val = getattr(self, name)
                if val is None:
                    raise ConfigError(f"missing required parameter {name}")
                if val < 0:
                    raise ConfigError(f"{name} must be non-negative")

    def synthetic_spec(self):
        if self.synthetic in (None, "bundled"):
            spec, angles, n = bundled_synthetic_spec()
        else:
            try:
                spec = SyntheticCraterSpec.from_dict(self.synthetic)
            except (TypeError, ValueError, KeyError) as exc:
                raise ConfigError(f"invalid synthetic spec: {exc}") from None
            angles, n = None, None
        changes = {}
        if self.atomic_volumes is not None:
            changes["species"] = tuple(
                SpeciesId(s.label, v) for s, v in zip(spec.species, self.atomic_volumes)
            )
        if self.seed is not None:
            changes["seed"] = int(self.seed)
        if changes:
            spec = SyntheticCraterSpec.from_dict({**spec.to_dict(), **changes})
        angles = self.angles if self.angles is not None else angles
        n = self.impacts_per_angle if self.impacts_per_angle is not None else n
        if angles is None or n is None:
            raise ConfigError("synthetic runs need 'angles' and 'impacts_per_angle'")
        return spec, angles, n


# ---------------------------------------------------------------------------
# File helpers


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _read_text(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise ImpactDataError(f"cannot read {path}: {exc}") from None


def moments_to_json(samples, labels):
    names = channel_names(labels)
    doc = {
        "species": list(labels),
        "units": {"theta_deg": "degrees", "m0": "nm^3", "m1": "nm^4"},
        "samples": [
            {"theta_deg": s.theta_deg, "n_impacts": s.n_impacts,
             "mean": dict(zip(names, s.mean.as_array().tolist())),
             "stderr": dict(zip(names, s.stderr.as_array().tolist()))}
            for s in samples
        ],
    }
    return json.dumps(doc, indent=1) + "\n"


def moments_from_json(text):
    doc = json.loads(text)
    labels = tuple(doc["species"])
    names = channel_names(labels)
    samples = [
        MomentSample(s["theta_deg"], s["n_impacts"],
                     MomentVector.from_array([s["mean"][n] for n in names]),
                     MomentVector.from_array([s["stderr"][n] for n in names]))
        for s in doc["samples"]
    ]
    return samples, labels


def write_moments_file(samples, labels, path):
    text = moments_to_json(samples, labels) if path.endswith(".json") else write_moment_table(samples, labels)
    _write_text(path, text)


def read_moments_file(path):
    text = _read_text(path)
    return moments_from_json(text) if path.endswith(".json") else read_moment_table(text)


def read_coefficients(source):
    if source == "gasb":
        return gasb_reference_coefficients()
    return CoefficientSet.from_dict(json.loads(_read_text(source)))


def read_bs(path):
    return BsParameters.from_dict(json.loads(_read_text(path)))


# ---------------------------------------------------------------------------
# Stages


def stage_synth(spec, angles, impacts_per_angle, impacts_path, expected_path=None):
    impact_set, expected = generate_synthetic_impacts(spec, angles, impacts_per_angle)
    save_impact_set(impact_set, impacts_path)
    if expected_path:
        write_moments_file(expected, impact_set.labels, expected_path)
    return impact_set, expected


def stage_moments(impacts_path, moments_path, filter_cfg, input_format=None, n_jobs=1):
    impact_set = read_impact_set(impacts_path, input_format)
    samples = aggregate_moments(impact_set, filter_cfg, n_jobs=n_jobs)
    write_moments_file(samples, impact_set.labels, moments_path)
    return samples, impact_set.labels


def stage_fit(moments_path, fits_path, n_terms=3, weighted=False):
    samples, labels = read_moments_file(moments_path)
    fits = fit_moment_curves(samples, labels, n_terms=n_terms, weighted=weighted)
    _write_text(fits_path, write_fits(fits))
    return fits


def stage_coeffs(fits_path, coeffs_path, theta_deg=0.0):
    fits = read_fits(_read_text(fits_path))
    coeffs = compute_height_coefficients(fits, math.radians(theta_deg))
    _write_text(coeffs_path, json.dumps(coeffs.to_dict(), indent=2) + "\n")
    return coeffs


def stage_bs(coeffs_source, bs_path, bulk, film_thickness, D=None, B_prime=None,
             convention="linear"):
    coeffs = read_coefficients(coeffs_source)
    conc = steady_concentration(coeffs, tuple(bulk), film_thickness)
    bs = map_to_bs_parameters(coeffs, conc, D=D, B_prime=B_prime, convention=convention)
    _write_text(bs_path, bs.to_json())
    return bs


def stage_stability(bs_path, report_path, dispersion_path, flux=1.0, D=None, B_prime=None,
                    k_range=(1e-4, 10.0), n_samples=400):
    bs = read_bs(bs_path)
    model = LinearModel.from_bs(bs, flux=flux, D=D, B_prime=B_prime)
    report = classify_stability(model, k_range, n_samples)
    _write_text(report_path, report.to_json())
    if dispersion_path:
        if dispersion_path.endswith(".json"):
            rows = [{"k": s.k, "re_sigma_plus": s.sigma_plus_real,
                     "im_sigma_plus": s.sigma_plus_imag, "tau": s.tau, "delta": s.delta_det}
                    for s in report.samples]
            _write_text(dispersion_path, json.dumps(rows, indent=1) + "\n")
        else:
            _write_text(dispersion_path, write_dispersion(report.samples))
    return report


def stage_evolve(bs_path, k, t_final, dt, flux=1.0, D=None, B_prime=None):
    bs = read_bs(bs_path)
    model = LinearModel.from_bs(bs, flux=flux, D=D, B_prime=B_prime)
    return evolve_mode(model, k, t_final, dt)


def _run(stage, func, *args, **kwargs):
    log.info("stage %s", stage)
    try:
        return func(*args, **kwargs)
    except StageError:
        raise
    except (CraterError, ValueError, KeyError, OSError) as exc:
        raise StageError(stage, exc) from exc


def run_pipeline(config):
    """Run every stage described by ``config``; return ``(report, artifacts)``.

    ``artifacts`` maps artifact names to the written file paths.
    """
    config.validate()
    out = config.output_dir
    os.makedirs(out, exist_ok=True)
    ext = "json" if config.format == "json" else "csv"
    paths = {
        "config": os.path.join(out, "config.json"),
        "coefficients": os.path.join(out, "coefficients.json"),
        "bs_parameters": os.path.join(out, "bs_parameters.json"),
        "stability_report": os.path.join(out, "stability_report.json"),
        "dispersion": os.path.join(out, f"dispersion.{ext}"),
    }
    _write_text(paths["config"], json.dumps(config.to_dict(), indent=2) + "\n")

    if config.coefficients is not None:
        coeffs = _run("coeffs", read_coefficients, config.coefficients)
        _write_text(paths["coefficients"], json.dumps(coeffs.to_dict(), indent=2) + "\n")
    else:
        if config.input is not None:
            impacts_path = config.input
            _run("validate", read_impact_set, impacts_path, config.input_format)
        else:
            spec, angles, n = config.synthetic_spec()
            impacts_path = paths["impacts"] = os.path.join(out, "impacts.cfi")
            paths["expected_moments"] = os.path.join(out, f"expected_moments.{ext}")
            _run("synth", stage_synth, spec, angles, n, impacts_path, paths["expected_moments"])
        paths["moments"] = os.path.join(out, f"moments.{ext}")
        paths["fits"] = os.path.join(out, "fits.json")
        _run("moments", stage_moments, impacts_path, paths["moments"], config.filter_config(),
             config.input_format, config.n_jobs)
        _run("fit", stage_fit, paths["moments"], paths["fits"], config.n_terms, config.weighted)
        _run("coeffs", stage_coeffs, paths["fits"], paths["coefficients"], config.theta_deg)

    _run("bs", stage_bs, paths["coefficients"], paths["bs_parameters"], config.bulk,
         config.film_thickness, config.D, config.B_prime, config.convention)
    report = _run("stability", stage_stability, paths["bs_parameters"],
                  paths["stability_report"], paths["dispersion"], config.flux,
                  k_range=(config.k_min, config.k_max), n_samples=config.n_samples)
    paths.update(_run("report", emit_report, out))
    return report, paths


# ---------------------------------------------------------------------------
# Report


def _fmt(v):
    return format(float(v), ".17g")


def emit_report(out_dir, coeff_grid_deg=None):
    """Write plot-ready tables and a human summary from an output directory.

    Returns a dict of the files written.  Raises ``ValueError`` when the
    directory holds no dispersion data.
    """
    disp_path = os.path.join(out_dir, "dispersion.csv")
    disp_json = os.path.join(out_dir, "dispersion.json")
    if os.path.exists(disp_path):
        rows = [r for r in csv.reader(ln for ln in _read_text(disp_path).splitlines()
                                      if ln and not ln.startswith("#"))][1:]
        dispersion = [[float(v) for v in r] for r in rows]
    elif os.path.exists(disp_json):
        dispersion = [[d["k"], d["re_sigma_plus"], d["im_sigma_plus"], d["tau"], d["delta"]]
                      for d in json.loads(_read_text(disp_json))]
    else:
        dispersion = []
    if not dispersion:
        raise ValueError(f"no dispersion data in {out_dir}")

    written = {}
    # sigma_plus versus k
    sig_path = os.path.join(out_dir, "sigma_vs_k.csv")
    buf = io.StringIO()
    buf.write("# growth rate of the faster branch; k 1/nm, sigma 1/s\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "re_sigma_plus", "im_sigma_plus"])
    for row in dispersion:
        w.writerow([_fmt(row[0]), _fmt(row[1]), _fmt(row[2])])
    _write_text(sig_path, buf.getvalue())
    written["sigma_vs_k"] = sig_path

    # moments versus angle, with fitted values where fits exist
    moments_file = next((os.path.join(out_dir, f) for f in ("moments.csv", "moments.json")
                         if os.path.exists(os.path.join(out_dir, f))), None)
    fits_file = os.path.join(out_dir, "fits.json")
    fits = read_fits(_read_text(fits_file)) if os.path.exists(fits_file) else {}
    samples, labels = read_moments_file(moments_file) if moments_file else ([], None)
    coeffs_json = json.loads(_read_text(os.path.join(out_dir, "coefficients.json")))
    if labels is None:
        labels = tuple(coeffs_json["labels"])
    names = channel_names(labels)
    fit_cols = [channel_key(kind, lab) for lab in labels for kind in ("m0", "m1_eros", "m1_redist")]
    mom_path = os.path.join(out_dir, "moments_vs_angle.csv")
    buf = io.StringIO()
    buf.write("# theta degrees; m0 nm^3; m1 nm^4; fit_* are fitted curve values\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["theta_deg"] + [f"mean_{n}" for n in names] + [f"stderr_{n}" for n in names]
               + [f"fit_{c}" for c in fit_cols])
    for s in samples:
        fitted = [_fmt(eval_fit(fits[c], s.theta)) if c in fits else "" for c in fit_cols]
        w.writerow([_fmt(s.theta_deg)] + [_fmt(v) for v in s.mean.as_array()]
                   + [_fmt(v) for v in s.stderr.as_array()] + fitted)
    _write_text(mom_path, buf.getvalue())
    written["moments_vs_angle"] = mom_path

    # coefficients versus angle
    coef_path = os.path.join(out_dir, "coefficients_vs_angle.csv")
    buf = io.StringIO()
    buf.write("# theta degrees; Y nm/s and S nm^2/s, per unit flux\n")
    w = csv.writer(buf, lineterminator="\n")
    cols = []
    for lab in labels:
        cols += [f"Y_{lab}", f"S_X_eros_{lab}", f"S_X_redist_{lab}",
                 f"S_Y_eros_{lab}", f"S_Y_redist_{lab}"]
    w.writerow(["theta_deg"] + cols)
    if fits:
        grid = coeff_grid_deg if coeff_grid_deg is not None else np.linspace(0.0, 90.0, 91)
        coeff_rows = [compute_height_coefficients(fits, math.radians(t), labels) for t in grid]
    else:
        coeff_rows = [CoefficientSet.from_dict(coeffs_json)]
    for cs in coeff_rows:
        vals = []
        for z in (0, 1):
            vals += [cs.Y[z], cs.S_X_eros[z], cs.S_X_redist[z], cs.S_Y_eros[z], cs.S_Y_redist[z]]
        w.writerow([_fmt(math.degrees(cs.theta))] + [_fmt(v) for v in vals])
    _write_text(coef_path, buf.getvalue())
    written["coefficients_vs_angle"] = coef_path

    summary_path = os.path.join(out_dir, "summary.txt")
    _write_text(summary_path, summary_text(out_dir))
    written["summary"] = summary_path
    return written


def summary_lines_bs(bs):
    """Display-rounded BS parameters, one per line."""
    lines = []
    if bs.concentration is not None:
        a, b = bs.labels
        lines.append(
            f"steady concentration: c_{a},0 = {bs.concentration.steady[0]:.3f}, "
            f"c_{b},0 = {bs.concentration.steady[1]:.3f}"
        )
    lines.append(f"A  = {bs.A:.4g} nm/s   (per unit flux)")
    lines.append(f"C  = {bs.C:.4g} nm^2/s (per unit flux)")
    lines.append(f"A' = {bs.A_prime:.4g} 1/s    (per unit flux)")
    lines.append(f"C' = {bs.C_prime:.4g} nm/s   (per unit flux)")
    lines.append(f"G = A'C - C'A = {bs.longwave_group:.4g}")
    return "\n".join(lines)


def summary_text(out_dir):
    lines = []
    bs_path = os.path.join(out_dir, "bs_parameters.json")
    if os.path.exists(bs_path):
        lines.append(summary_lines_bs(read_bs(bs_path)))
    rep_path = os.path.join(out_dir, "stability_report.json")
    if os.path.exists(rep_path):
        rep = json.loads(_read_text(rep_path))
        lines.append(f"classification: {rep['classification']}")
        if rep["band_edges"]:
            lo, hi = rep["band_edges"]
            lines.append(f"unstable band: {lo:.6g} < k < {hi:.6g} 1/nm")
        lines.append(f"fastest mode: k* = {rep['k_star']:.6g} 1/nm, sigma = {rep['sigma_star']:.6g} 1/s")
    return "\n".join(lines) + "\n"
