import numpy as np
import pytest

from compound_craters.impact_model import ImpactRecord, ImpactSet, SpeciesId
from compound_craters.synthetic import SpeciesCraterLaw, SyntheticCraterSpec

FIXTURE_CFI = (
    "CFI 1\n"
    "SPECIES Ga 0.0339 Sb 0.0339\n"
    "IMPACT 0 theta=0 azimuth=0 impact=0 0 cell=10 10 zsurf=0\n"
    "ATOM 1 Ga 0 0 0 0 0 5 S\n"
    "ATOM 2 Sb 0 0 -0.3 1 0 -0.3 R\n"
)

AB = (SpeciesId("A", 0.02), SpeciesId("B", 0.03))


def make_impact(atoms, theta=0.0, azimuth=0.0, point=(0.0, 0.0), cell=(10.0, 10.0),
                impact_id=0, surface_z=0.0):
    """``atoms``: iterable of (id, species_index, pos_initial, pos_final, sputtered)."""
    ids, spec, pi, pf, sp = zip(*atoms)
    return ImpactRecord(impact_id=impact_id, theta_deg=theta, azimuth_deg=azimuth,
                        impact_point=point, cell=cell, surface_z=surface_z,
                        atom_ids=ids, species=spec, pos_initial=pi, pos_final=pf,
                        sputtered=sp)


def make_set(impacts, species=AB, metadata=None):
    return ImpactSet(species=species, impacts=impacts, metadata=metadata or {})


def crater_laws():
    return (
        SpeciesCraterLaw((3.0, 0.6), (0.8, 0.1), 12, (0.35, -0.05)),
        SpeciesCraterLaw((2.0, 0.4), (0.6, 0.05), 10, (0.4, -0.04)),
    )


@pytest.fixture
def crater_spec():
    return SyntheticCraterSpec(species=AB, laws=crater_laws())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- stability helpers ----------------------------------------------------

def _mag(rng, lo=-3, hi=1):
    return 10 ** rng.uniform(lo, hi)


def random_model(rng):
    """A random valid LinearModel with coefficients spanning four decades."""
    from compound_craters.stability import LinearModel

    def signed():
        return rng.choice([-1.0, 1.0]) * _mag(rng)

    return LinearModel(
        A=signed(), B=signed() if rng.random() < 0.5 else 0.0, C=signed(), D=_mag(rng),
        A_prime=_mag(rng), B_prime=_mag(rng), C_prime=signed(),
        D_prime=signed() if rng.random() < 0.5 else 0.0,
    )


def random_k(rng):
    return _mag(rng, -3, 1)


def exact_sigma_plus(model, k, dps=50):
    """Larger-real-part eigenvalue of the evolution matrix, via mpmath's generic solver."""
    import mpmath as mp

    with mp.workdps(dps):
        k2 = mp.mpf(k) ** 2
        k4 = k2 * k2
        m = -mp.matrix([
            [model.C * k2 + model.D * k4, model.A + model.B * k2],
            [model.C_prime * k2 + model.D_prime * k4, model.A_prime + model.B_prime * k2],
        ])
        ev = mp.eig(m, left=False, right=False)
        top = complex(max(ev, key=lambda z: mp.re(z)))
    # the positive-imaginary member of a complex pair, as sigma_plus reports it
    return complex(top.real, abs(top.imag))


def evolve_settings(model, k, decay=36.0, periods=30):
    """dt and t_final for evolve_mode: dt*max|lambda| = 0.05; transients decay by e^-decay."""
    lam = np.linalg.eigvals(model.matrix(k))
    dt = 0.05 / np.max(np.abs(lam))
    gap = abs(lam[0].real - lam[1].real)
    if abs(lam[0].imag) > 0:
        t_final = 2 * periods * 2 * np.pi / abs(lam[0].imag)
    else:
        t_final = 2 * decay / gap
    return dt, t_final


# --- acceptance summary ---------------------------------------------------

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        number, title = mark.args
        _ACCEPTANCE[number] = (title, report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, outcome = _ACCEPTANCE[number]
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number:2d}: {title}")
