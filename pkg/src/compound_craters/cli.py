"""Command-line interface: ``compound-craters <subcommand> ...``.

Exit codes: 0 success, 1 data or validation error, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline as pl
from .errors import ConfigError, CraterError
from .impact_model import read_impact_set

log = logging.getLogger("compound_craters")


def _floats(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _pair(text):
    vals = _floats(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}")
    return vals


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def _add_filter(p):
    p.add_argument("--annulus-inner", type=float, default=0.35)
    p.add_argument("--annulus-outer", type=float, default=0.5)
    p.add_argument("--no-shear-correction", dest="shear_correction", action="store_false")
    p.add_argument("--no-filter", dest="apply_filter", action="store_false")
    p.add_argument("--jobs", dest="n_jobs", type=int, default=1)


def _add_bs(p):
    p.add_argument("--bulk", type=_pair, default=[0.5, 0.5], help="bulk fractions, e.g. 0.5,0.5")
    p.add_argument("--film-thickness", type=float, default=3.0, help="amorphous film thickness (nm)")
    p.add_argument("--convention", choices=("linear", "literal"), default="linear")


def _add_model(p):
    p.add_argument("--flux", type=float, default=1.0, help="ion flux (ions/nm^2/s)")
    p.add_argument("--D", dest="D", type=float, default=None, help="nm^4/s")
    p.add_argument("--B-prime", dest="B_prime", type=float, default=None, help="nm^2/s")


def build_parser():
    parser = _Parser(prog="compound-craters", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic impact set")
    p.add_argument("--spec", help="JSON synthetic spec (default: bundled)")
    p.add_argument("--angles", type=_floats)
    p.add_argument("--impacts-per-angle", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--random", action="store_true", help="random rather than deterministic mode")
    p.add_argument("-o", "--output", required=True, help="impact file (.cfi or .json)")
    p.add_argument("--expected", help="write analytic expected moments here")

    p = sub.add_parser("validate", help="parse and check an impact file")
    p.add_argument("input")
    p.add_argument("--format", choices=("cfi", "json"))

    p = sub.add_parser("moments", help="filtered per-angle moments from impacts")
    p.add_argument("input")
    p.add_argument("--format", choices=("cfi", "json"))
    p.add_argument("-o", "--output", required=True, help="moments table (.csv or .json)")
    _add_filter(p)

    p = sub.add_parser("fit", help="parity-constrained fits of moments versus angle")
    p.add_argument("input", help="moments table")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--n-terms", type=int, default=3)
    p.add_argument("--weighted", action="store_true")

    p = sub.add_parser("coeffs", help="height-equation coefficients from fits")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--fits")
    src.add_argument("--gasb", action="store_true", help="bundled Ar->GaSb reference values")
    p.add_argument("--theta", dest="theta_deg", type=float, default=0.0, help="degrees")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("bs", help="steady concentration and coupled-PDE parameters")
    p.add_argument("coefficients", help="coefficients JSON, or 'gasb'")
    p.add_argument("-o", "--output", required=True)
    _add_bs(p)
    p.add_argument("--D", dest="D", type=float, default=None)
    p.add_argument("--B-prime", dest="B_prime", type=float, default=None)

    p = sub.add_parser("stability", help="dispersion relation and classification")
    p.add_argument("bs_parameters")
    p.add_argument("-o", "--output", required=True, help="stability report JSON")
    p.add_argument("--dispersion", help="dispersion table (.csv or .json)")
    _add_model(p)
    p.add_argument("--k-min", type=float, default=1e-4)
    p.add_argument("--k-max", type=float, default=10.0)
    p.add_argument("--n-samples", type=int, default=400)

    p = sub.add_parser("evolve", help="integrate one Fourier mode and measure its growth")
    p.add_argument("bs_parameters")
    p.add_argument("--k", type=float, required=True)
    p.add_argument("--t-final", type=float, required=True)
    p.add_argument("--dt", type=float, required=True)
    _add_model(p)

    p = sub.add_parser("report", help="plot-ready tables and summary from an output directory")
    p.add_argument("directory")

    p = sub.add_parser("pipeline", help="run every stage")
    p.add_argument("--config", help="TOML or JSON configuration file")
    p.add_argument("--input")
    p.add_argument("--input-format", choices=("cfi", "json"))
    p.add_argument("--synthetic", help="JSON synthetic spec, or 'bundled'")
    p.add_argument("--coefficients", help="coefficients JSON, or 'gasb'")
    p.add_argument("--gasb", action="store_true", help="same as --coefficients gasb")
    p.add_argument("--angles", type=_floats)
    p.add_argument("--impacts-per-angle", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--atomic-volumes", type=_pair)
    p.add_argument("--annulus-inner", type=float)
    p.add_argument("--annulus-outer", type=float)
    p.add_argument("--no-shear-correction", dest="shear_correction", action="store_const", const=False)
    p.add_argument("--no-filter", dest="apply_filter", action="store_const", const=False)
    p.add_argument("--n-terms", type=int)
    p.add_argument("--weighted", action="store_const", const=True)
    p.add_argument("--theta", dest="theta_deg", type=float)
    p.add_argument("--bulk", type=_pair)
    p.add_argument("--film-thickness", type=float)
    p.add_argument("--convention", choices=("linear", "literal"))
    p.add_argument("--flux", type=float)
    p.add_argument("--D", dest="D", type=float)
    p.add_argument("--B-prime", dest="B_prime", type=float)
    p.add_argument("--k-min", type=float)
    p.add_argument("--k-max", type=float)
    p.add_argument("--n-samples", type=int)
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--jobs", dest="n_jobs", type=int)
    p.add_argument("-o", "--output-dir")
    return parser


def _filter_config(args):
    if not args.apply_filter:
        return None
    try:
        return pl.FilterConfig(args.annulus_inner, args.annulus_outer, args.shear_correction)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None


def cmd_synth(args):
    overrides = {"synthetic": _load_json(args.spec) if args.spec else "bundled",
                 "angles": args.angles, "impacts_per_angle": args.impacts_per_angle,
                 "seed": args.seed}
    cfg = pl.PipelineConfig(**overrides)
    spec, angles, n = cfg.synthetic_spec()
    if args.random:
        spec = pl.SyntheticCraterSpec.from_dict({**spec.to_dict(), "deterministic": False})
    impact_set, _ = pl._run("synth", pl.stage_synth, spec, angles, n, args.output, args.expected)
    print(f"wrote {len(impact_set.impacts)} impacts to {args.output}")


def cmd_validate(args):
    impact_set = pl._run("validate", read_impact_set, args.input, args.format)
    groups = impact_set.angle_groups()
    n_atoms = sum(len(i.atom_ids) for i in impact_set.impacts)
    print(f"ok: {len(impact_set.impacts)} impacts, {n_atoms} atom records, "
          f"{len(groups)} angles, species {' '.join(impact_set.labels)}")


def cmd_moments(args):
    samples, _ = pl._run("moments", pl.stage_moments, args.input, args.output,
                         _filter_config(args), args.format, args.n_jobs)
    print(f"wrote moments at {len(samples)} angles to {args.output}")


def cmd_fit(args):
    fits = pl._run("fit", pl.stage_fit, args.input, args.output, args.n_terms, args.weighted)
    for key, f in fits.items():
        print(f"{key}: rms residual {f.residual_rms:.3g}")


def cmd_coeffs(args):
    if args.gasb:
        coeffs = pl.gasb_reference_coefficients()
        pl._write_text(args.output, json.dumps(coeffs.to_dict(), indent=2) + "\n")
    else:
        coeffs = pl._run("coeffs", pl.stage_coeffs, args.fits, args.output, args.theta_deg)
    for z, lab in enumerate(coeffs.labels):
        print(f"{lab}: Y = {coeffs.Y[z]:.4g} nm/s, S_X = {coeffs.S_X[z]:.4g}, "
              f"S_Y = {coeffs.S_Y[z]:.4g} nm^2/s (per unit flux)")


def cmd_bs(args):
    bs = pl._run("bs", pl.stage_bs, args.coefficients, args.output, args.bulk,
                 args.film_thickness, args.D, args.B_prime, args.convention)
    print(pl.summary_lines_bs(bs))


def cmd_stability(args):
    report = pl._run("stability", pl.stage_stability, args.bs_parameters, args.output,
                     args.dispersion, args.flux, args.D, args.B_prime,
                     (args.k_min, args.k_max), args.n_samples)
    print(f"classification: {report.classification.value}")
    print(f"fastest mode: k* = {report.k_star:.6g} 1/nm, sigma = {report.sigma_star:.6g} 1/s")


def cmd_evolve(args):
    res = pl._run("evolve", pl.stage_evolve, args.bs_parameters, args.k, args.t_final,
                  args.dt, args.flux, args.D, args.B_prime)
    print(json.dumps({"growth_rate": res.growth_rate, "frequency": res.frequency,
                      "converged": res.converged, "n_steps": res.n_steps}))


def cmd_report(args):
    written = pl._run("report", pl.emit_report, args.directory)
    sys.stdout.write(pl.summary_text(args.directory))
    for path in written.values():
        print(f"wrote {path}")


_PIPELINE_KEYS = (
    "input", "input_format", "angles", "impacts_per_angle", "seed", "atomic_volumes",
    "annulus_inner", "annulus_outer", "shear_correction", "apply_filter", "n_terms",
    "weighted", "theta_deg", "bulk", "film_thickness", "convention", "flux", "D",
    "B_prime", "k_min", "k_max", "n_samples", "format", "n_jobs",
)


def cmd_pipeline(args):
    data = {}
    if args.config:
        data = pl.PipelineConfig.load(args.config).to_dict()
    for key in _PIPELINE_KEYS:
        val = getattr(args, key)
        if val is not None:
            data[key] = val
    if args.output_dir:
        data["output_dir"] = args.output_dir
    if args.gasb:
        data["coefficients"] = "gasb"
    elif args.coefficients:
        data["coefficients"] = args.coefficients
    if args.synthetic:
        data["synthetic"] = args.synthetic if args.synthetic == "bundled" else _load_json(args.synthetic)
    cfg = pl.PipelineConfig.from_mapping(data)
    report, _ = pl.run_pipeline(cfg)
    sys.stdout.write(pl.summary_text(cfg.output_dir))
    return report


COMMANDS = {
    "synth": cmd_synth, "validate": cmd_validate, "moments": cmd_moments, "fit": cmd_fit,
    "coeffs": cmd_coeffs, "bs": cmd_bs, "stability": cmd_stability, "evolve": cmd_evolve,
    "report": cmd_report, "pipeline": cmd_pipeline,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command](args)
    except CraterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
