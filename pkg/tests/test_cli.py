import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from compound_craters.cli import main
from compound_craters.coefficients import BsParameters
from compound_craters.pipeline import (
    PipelineConfig, bundled_synthetic_spec, emit_report, read_moments_file, run_pipeline,
)
from compound_craters.errors import ConfigError

from conftest import FIXTURE_CFI

STAGE_FILES = ("impacts.cfi", "expected_moments.csv", "moments.csv", "fits.json",
               "coefficients.json", "bs_parameters.json", "stability_report.json",
               "dispersion.csv")


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


def test_gasb_pipeline_prints_parameters(tmp_path, capsys):
    code, out, _ = run(["pipeline", "--gasb", "--D", 1, "--B-prime", 1, "--flux", 1,
                        "-o", tmp_path], capsys)
    assert code == 0
    for text in ("A  = 0.014 ", "C  = 1.937", "A' = 0.009133", "C' = -0.1175",
                 "c_Ga,0 = 0.372", "classification: Stable"):
        assert text in out
    bs = BsParameters.from_dict(json.loads(read(tmp_path / "bs_parameters.json")))
    assert bs.D == 1.0 and bs.B_prime == 1.0


@pytest.mark.parametrize("args, name", [(["--B-prime", "1"], "D"), (["--D", "1"], "B_prime")])
def test_missing_model_parameter_exits_2(tmp_path, capsys, args, name):
    code, _, err = run(["pipeline", "--gasb", *args, "-o", tmp_path], capsys)
    assert code == 2
    assert f"missing required parameter {name}" in err


def test_stability_stage_needs_d(tmp_path, capsys):
    assert run(["bs", "gasb", "-o", tmp_path / "bs.json"], capsys)[0] == 0
    code, _, err = run(["stability", tmp_path / "bs.json", "-o", tmp_path / "r.json",
                        "--B-prime", 1], capsys)
    assert code == 2 and "parameter D" in err


def test_bad_flags_exit_2(capsys):
    assert run(["pipeline", "--bulk", "0.5"], capsys)[0] == 2
    assert run(["nonsense"], capsys)[0] == 2


def test_validate(tmp_path, capsys):
    good = tmp_path / "ok.cfi"
    good.write_text(FIXTURE_CFI)
    code, out, _ = run(["validate", good], capsys)
    assert code == 0 and "1 impacts" in out
    bad = tmp_path / "bad.cfi"
    bad.write_text(FIXTURE_CFI.replace("ATOM 2", "ATOM 1"))
    code, _, err = run(["validate", bad], capsys)
    assert code == 1 and "line 5" in err and "[validate]" in err


def test_truncated_band_exits_3(tmp_path, capsys):
    bs = BsParameters(A=0.0, C=-1.0, A_prime=1.0, C_prime=0.0, D=1e-6, B_prime=1.0)
    (tmp_path / "bs.json").write_text(bs.to_json())
    code, _, err = run(["stability", tmp_path / "bs.json", "-o", tmp_path / "r.json"], capsys)
    assert code == 3 and "k_max" in err


def test_evolve_subcommand(tmp_path, capsys):
    run(["bs", "gasb", "-o", tmp_path / "bs.json", "--D", 1, "--B-prime", 1], capsys)
    code, out, _ = run(["evolve", tmp_path / "bs.json", "--k", 0.3, "--t-final", 4000,
                        "--dt", 0.5], capsys)
    assert code == 0
    res = json.loads(out)
    assert res["growth_rate"] < 0 and res["converged"]


def independent_bs_oracle():
    """BS parameters of the bundled synthetic set from its analytic moments alone."""
    spec, angles, _ = bundled_synthetic_spec()
    theta = np.radians(angles)
    out = {}
    Y, S_eros, S_redist = [], [], []
    for sid, law in zip(spec.species, spec.laws):
        om = sid.atomic_volume
        lam = np.array([max(law.mean_count(t), 0.0) for t in theta])
        count = np.round(lam)  # deterministic mode emits round(lambda) atoms
        m0 = -om * count
        m1e = m0 * np.array([law.offset(t) for t in theta])
        m1r = om * law.redist_count * np.array([law.shift(t) for t in theta])
        n = np.arange(1, 4)
        even = np.cos(np.outer(theta, 2 * n - 1))
        odd = np.sin(np.outer(theta, 2 * n))
        a = np.linalg.lstsq(even, m0, rcond=None)[0]
        be = np.linalg.lstsq(odd, m1e, rcond=None)[0]
        br = np.linalg.lstsq(odd, m1r, rcond=None)[0]
        # at normal incidence: Y = M0(0) = sum a_n; S = dM1/dtheta(0) = sum 2 n b_n
        Y.append(a.sum())
        S_eros.append((2 * n * be).sum())
        S_redist.append((2 * n * br).sum())
    ca = 0.5 * abs(Y[1]) / (0.5 * abs(Y[1]) + 0.5 * abs(Y[0]))
    c0 = (ca, 1 - ca)
    out["A"] = -(2 * Y[0] - 2 * Y[1])
    out["C"] = sum(2 * c0[z] * (S_eros[z] + S_redist[z]) for z in (0, 1))
    out["A_prime"] = -(0.5 * 2 * Y[1] + 0.5 * 2 * Y[0]) / 3.0
    out["C_prime"] = (0.5 * 2 * c0[0] * S_redist[0] - 0.5 * 2 * c0[1] * S_redist[1]) / 3.0
    return out


def test_bundled_synthetic_matches_oracle(tmp_path, capsys):
    code, _, _ = run(["pipeline", "--synthetic", "bundled", "--D", 1, "--B-prime", 1,
                      "-o", tmp_path], capsys)
    assert code == 0
    bs = BsParameters.from_dict(json.loads(read(tmp_path / "bs_parameters.json")))
    for name, want in independent_bs_oracle().items():
        assert getattr(bs, name) == pytest.approx(want, rel=1e-9, abs=1e-12), name


def test_determinism_across_workers(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    base = ["pipeline", "--synthetic", "bundled", "--D", 1, "--B-prime", 1, "--seed", 3]
    assert run(base + ["--jobs", 1, "-o", a], capsys)[0] == 0
    assert run(base + ["--jobs", 3, "-o", b], capsys)[0] == 0
    for name in STAGE_FILES + ("summary.txt", "moments_vs_angle.csv", "coefficients_vs_angle.csv"):
        assert read(a / name) == read(b / name), name


def test_stage_isolation(tmp_path, capsys):
    full = tmp_path / "full"
    assert run(["pipeline", "--synthetic", "bundled", "--D", 1, "--B-prime", 1,
                "-o", full], capsys)[0] == 0
    s = tmp_path / "stages"
    s.mkdir()
    steps = [
        ["synth", "-o", s / "impacts.cfi", "--expected", s / "expected_moments.csv"],
        ["moments", s / "impacts.cfi", "-o", s / "moments.csv"],
        ["fit", s / "moments.csv", "-o", s / "fits.json"],
        ["coeffs", "--fits", s / "fits.json", "-o", s / "coefficients.json"],
        ["bs", s / "coefficients.json", "-o", s / "bs_parameters.json"],
        ["stability", s / "bs_parameters.json", "-o", s / "stability_report.json",
         "--dispersion", s / "dispersion.csv", "--D", 1, "--B-prime", 1],
    ]
    for argv in steps:
        assert run(argv, capsys)[0] == 0, argv
    for name in STAGE_FILES:
        if name == "bs_parameters.json":
            # the full run records D and B' in the parameter file; the bs stage alone did not
            want = json.loads(read(full / name))
            got = json.loads(read(s / name))
            for key in ("D", "B_prime"):
                del want["parameters"][key], got["parameters"][key]
            assert got == want
        else:
            assert read(s / name) == read(full / name), name


def test_rerun_from_persisted_fits(tmp_path, capsys):
    full = tmp_path / "full"
    run(["pipeline", "--synthetic", "bundled", "--D", 1, "--B-prime", 1, "-o", full], capsys)
    assert run(["coeffs", "--fits", full / "fits.json", "-o", tmp_path / "c.json"], capsys)[0] == 0
    assert read(tmp_path / "c.json") == read(full / "coefficients.json")


def test_json_output_format(tmp_path, capsys):
    code, _, _ = run(["pipeline", "--synthetic", "bundled", "--D", 1, "--B-prime", 1,
                      "--format", "json", "-o", tmp_path], capsys)
    assert code == 0
    samples, labels = read_moments_file(str(tmp_path / "moments.json"))
    assert labels == ("Ga", "Sb") and len(samples) == 9
    disp = json.loads(read(tmp_path / "dispersion.json"))
    assert set(disp[0]) == {"k", "re_sigma_plus", "im_sigma_plus", "tau", "delta"}


def test_config_files(tmp_path, capsys):
    toml = tmp_path / "run.toml"
    toml.write_text(f'coefficients = "gasb"\nD = 1.0\nB_prime = 1.0\noutput_dir = "{tmp_path / "t"}"\n'
                    'bulk = [0.5, 0.5]\nfilm_thickness = 3.0\n')
    code, out, _ = run(["pipeline", "--config", toml], capsys)
    assert code == 0 and "Stable" in out
    js = tmp_path / "run.json"
    js.write_text(json.dumps({"coefficients": "gasb", "D": 1.0, "B_prime": 1.0,
                              "output_dir": str(tmp_path / "j")}))
    assert run(["pipeline", "--config", js], capsys)[0] == 0
    assert read(tmp_path / "t" / "bs_parameters.json") == read(tmp_path / "j" / "bs_parameters.json")
    saved = json.loads(read(tmp_path / "j" / "config.json"))
    assert PipelineConfig.from_mapping(saved).to_dict() == saved
    bad = tmp_path / "bad.toml"
    bad.write_text('coefficients = "gasb"\nwavelength = 3\n')
    code, _, err = run(["pipeline", "--config", bad], capsys)
    assert code == 2 and "wavelength" in err


@pytest.mark.parametrize("change", [
    {"film_thickness": 0.0}, {"flux": -1.0}, {"k_min": 5.0, "k_max": 1.0},
    {"bulk": [0.6, 0.6]}, {"annulus_inner": 0.6}, {"format": "xml"}, {"D": -1.0},
])
def test_config_validation(change):
    base = {"coefficients": "gasb", "D": 1.0, "B_prime": 1.0}
    with pytest.raises(ConfigError):
        PipelineConfig.from_mapping({**base, **change})


def test_report_outputs(tmp_path, capsys):
    run(["pipeline", "--gasb", "--D", 1, "--B-prime", 1, "-o", tmp_path], capsys)
    code, out, _ = run(["report", tmp_path], capsys)
    assert code == 0 and "classification: Stable" in out
    for name, ncols in (("moments_vs_angle.csv", 1 + 10 + 10 + 6),
                        ("coefficients_vs_angle.csv", 1 + 10),
                        ("sigma_vs_k.csv", 3)):
        lines = (tmp_path / name).read_text().splitlines()
        assert lines[0].startswith("# ") and ("nm" in lines[0] or "1/s" in lines[0])
        assert len(lines[1].split(",")) == ncols
        assert all(len(ln.split(",")) == ncols for ln in lines[2:])


def test_report_synthetic_tables(tmp_path, capsys):
    run(["pipeline", "--synthetic", "bundled", "--D", 1, "--B-prime", 1, "-o", tmp_path], capsys)
    rows = (tmp_path / "moments_vs_angle.csv").read_text().splitlines()[2:]
    assert len(rows) == 9 and all(r.split(",")[-1] for r in rows)
    coef_rows = (tmp_path / "coefficients_vs_angle.csv").read_text().splitlines()[2:]
    assert len(coef_rows) == 91
    first = [float(v) for v in coef_rows[0].split(",")]
    # at normal incidence S_X equals S_Y per channel
    assert first[2] == first[4] and first[3] == first[5]


def test_report_rejects_empty_dispersion(tmp_path, capsys):
    run(["pipeline", "--gasb", "--D", 1, "--B-prime", 1, "-o", tmp_path], capsys)
    (tmp_path / "dispersion.csv").write_text("# nothing\nk,re_sigma_plus,im_sigma_plus,tau,delta\n")
    with pytest.raises(ValueError, match="dispersion"):
        emit_report(str(tmp_path))
    assert run(["report", tmp_path], capsys)[0] == 1


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "compound_craters", "coeffs", "--gasb",
                          "-o", str(tmp_path / "c.json")], capture_output=True, text=True)
    assert res.returncode == 0
    assert "Ga: Y = -0.0172 nm/s" in res.stdout


def test_run_pipeline_api(tmp_path):
    cfg = PipelineConfig(coefficients="gasb", D=1.0, B_prime=1.0, output_dir=str(tmp_path))
    report, paths = run_pipeline(cfg)
    assert report.classification.value == "Stable"
    assert all(os.path.exists(p) for p in paths.values())
    assert math.isclose(report.longwave_group, 0.0193356, rel_tol=1e-5)
