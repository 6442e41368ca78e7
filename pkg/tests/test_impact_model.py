import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compound_craters.errors import ImpactDataError
from compound_craters.geometry import from_beam_frame, minimal_image, to_beam_frame
from compound_craters.impact_model import (
    GASB_ATOMIC_VOLUME, ImpactRecord, ImpactSet, SpeciesId, parse_impact_set,
    read_impact_set, save_impact_set, tag_sputtered, write_impact_set,
)

from conftest import FIXTURE_CFI, make_impact, make_set


def test_fixture_parses():
    s = parse_impact_set(FIXTURE_CFI.encode())
    assert s.labels == ("Ga", "Sb")
    assert [sp.atomic_volume for sp in s.species] == [0.0339, 0.0339]
    assert len(s.impacts) == 1
    imp = s.impacts[0]
    assert imp.n_atoms == 2
    ga, sb = imp.atoms
    assert ga.sputtered and ga.pos_final == (0.0, 0.0, 5.0)
    assert not sb.sputtered and sb.pos_final == (1.0, 0.0, -0.3)


def test_fixture_roundtrip_is_identical():
    s = parse_impact_set(FIXTURE_CFI)
    assert parse_impact_set(write_impact_set(s)) == s
    assert parse_impact_set(write_impact_set(s, "json"), "json") == s


def test_stream_input():
    import io
    assert parse_impact_set(io.BytesIO(FIXTURE_CFI.encode())) == parse_impact_set(FIXTURE_CFI)


def test_comments_and_blank_lines_ignored():
    text = "# leading comment\n\n" + FIXTURE_CFI.replace("ATOM 1", "ATOM 1") + "# tail\n"
    text = text.replace("zsurf=0\n", "zsurf=0   # the impact\n")
    assert parse_impact_set(text) == parse_impact_set(FIXTURE_CFI)


def test_duplicate_atom_id_is_located():
    text = FIXTURE_CFI.replace("ATOM 1 ", "ATOM 7 ").replace("ATOM 2 ", "ATOM 7 ")
    with pytest.raises(ImpactDataError) as err:
        parse_impact_set(text)
    assert err.value.line == 5
    assert err.value.record == 0
    assert "duplicate atom_id 7" in str(err.value)
    assert "line 5" in str(err.value) and "record 0" in str(err.value)


@pytest.mark.parametrize("mutate, line", [
    (lambda t: t.replace("CFI 1", "CFX 1"), 1),
    (lambda t: t.replace("ATOM 2 Sb", "ATOM 2 In"), 5),
    (lambda t: t.replace("-0.3 1 0", "-0.3 nan 0"), 5),
    (lambda t: t.replace("-0.3 1 0", "-0.3 inf 0"), 5),
    (lambda t: t.replace("theta=0", "theta=91"), 3),
    (lambda t: t.replace("theta=0", "theta=-1"), 3),
    (lambda t: t.replace(" S\n", " X\n"), 4),
    (lambda t: t.replace("cell=10 10", "cell=0 10"), 3),
    (lambda t: t.replace("SPECIES Ga 0.0339", "SPECIES Ga -1"), 2),
    (lambda t: t + "BOGUS 1\n", 6),
])
def test_invalid_inputs_rejected_with_line(mutate, line):
    with pytest.raises(ImpactDataError) as err:
        parse_impact_set(mutate(FIXTURE_CFI))
    assert err.value.line == line


def test_impact_without_atoms_rejected():
    text = FIXTURE_CFI + "IMPACT 1 theta=0 azimuth=0 impact=0 0 cell=10 10 zsurf=0\n"
    with pytest.raises(ImpactDataError, match="no atoms"):
        parse_impact_set(text)
    with pytest.raises(ImpactDataError, match="no atoms"):
        ImpactRecord(0, 0.0, 0.0, (0, 0), (1, 1), 0.0, [], [], [], [], [])


def test_json_errors_are_located():
    doc = json.loads(write_impact_set(parse_impact_set(FIXTURE_CFI), "json"))
    doc["impacts"][0]["atoms"][1][1] = "In"
    with pytest.raises(ImpactDataError) as err:
        parse_impact_set(json.dumps(doc), "json")
    assert err.value.record == "impacts[0].atoms[1]"
    with pytest.raises(ImpactDataError):
        parse_impact_set('{"format": "XYZ"}', "json")


def test_species_and_set_invariants():
    with pytest.raises(ImpactDataError):
        SpeciesId("Ga", 0.0)
    with pytest.raises(ImpactDataError):
        SpeciesId("G a", 0.1)
    imp = make_impact([(1, 0, (0, 0, 0), (0, 0, 0), False)])
    with pytest.raises(ImpactDataError):
        ImpactSet((SpeciesId("A", 1), SpeciesId("A", 1)), [imp])
    with pytest.raises(ImpactDataError):
        ImpactSet((SpeciesId("A", 1),), [imp])
    with pytest.raises(ImpactDataError, match="duplicate impact id"):
        make_set([imp, imp])
    with pytest.raises(ImpactDataError, match="species index"):
        make_impact([(1, 2, (0, 0, 0), (0, 0, 0), False)])


def test_records_are_read_only():
    imp = parse_impact_set(FIXTURE_CFI).impacts[0]
    with pytest.raises(ValueError):
        imp.pos_final[0, 0] = 1.0


def test_angle_groups_sorted():
    atoms = [(1, 0, (0, 0, 0), (0, 0, 0), False)]
    s = make_set([make_impact(atoms, theta=t, impact_id=i)
                  for i, t in enumerate([40.0, 0.0, 40.0, 20.0])])
    groups = s.angle_groups()
    assert list(groups) == [0.0, 20.0, 40.0]
    assert [r.impact_id for r in groups[40.0]] == [0, 2]


def test_tag_sputtered():
    imp = make_impact([(1, 0, (0, 0, 0), (0, 0, 0.6), False),
                       (2, 1, (0, 0, 0), (0, 0, 0.4), True)])
    assert tag_sputtered(imp).sputtered.tolist() == [True, False]
    assert tag_sputtered(imp, cutoff=0.3).sputtered.tolist() == [True, True]


def test_default_atomic_volume_matches_gasb_density():
    # zincblende: 8 atoms per cubic cell of edge 0.6096 nm; density 5.61 g/cm^3
    molar = (69.723 + 121.760) / 2
    from_density = molar / (5.61 * 6.02214076e23) * 1e21
    assert GASB_ATOMIC_VOLUME == pytest.approx(from_density, rel=0.01)


def test_file_roundtrip(tmp_path):
    s = parse_impact_set(FIXTURE_CFI)
    for name in ("a.cfi", "a.json"):
        save_impact_set(s, tmp_path / name)
        assert read_impact_set(tmp_path / name) == s


def test_minimal_image_and_beam_frame():
    cell = np.array([10.0, 4.0])
    d = minimal_image(np.array([[6.0, -3.0], [-5.0, 2.0], [0.5, 0.0]]), cell)
    assert np.allclose(np.abs(d[:, 0]) <= 5.0, True)
    np.testing.assert_allclose(d[0], [-4.0, 1.0])
    np.testing.assert_allclose(d[2], [0.5, 0.0])
    xy = np.array([[1.0, 0.0]])
    np.testing.assert_allclose(to_beam_frame(xy, 90.0), [[0.0, -1.0]], atol=1e-15)
    np.testing.assert_allclose(from_beam_frame(to_beam_frame(xy, 33.0), 33.0), xy)


# --- property tests -------------------------------------------------------

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False)
positive = st.floats(min_value=1e-6, max_value=1e6, allow_nan=False)
labels = st.text(alphabet="ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz_0123456789",
                 min_size=1, max_size=4)


@st.composite
def impact_sets(draw):
    la = draw(labels)
    lb = draw(labels.filter(lambda s: s != la))
    species = (SpeciesId(la, draw(positive)), SpeciesId(lb, draw(positive)))
    impacts = []
    for n in range(draw(st.integers(1, 4))):
        n_atoms = draw(st.integers(1, 6))
        ids = draw(st.lists(st.integers(-10**9, 10**9), min_size=n_atoms,
                            max_size=n_atoms, unique=True))
        impacts.append(ImpactRecord(
            impact_id=n * 3 + draw(st.integers(0, 2)),
            theta_deg=draw(st.floats(0, 90)),
            azimuth_deg=draw(finite),
            impact_point=(draw(finite), draw(finite)),
            cell=(draw(positive), draw(positive)),
            surface_z=draw(finite),
            atom_ids=ids,
            species=draw(st.lists(st.integers(0, 1), min_size=n_atoms, max_size=n_atoms)),
            pos_initial=draw(st.lists(st.tuples(finite, finite, finite),
                                      min_size=n_atoms, max_size=n_atoms)),
            pos_final=draw(st.lists(st.tuples(finite, finite, finite),
                                    min_size=n_atoms, max_size=n_atoms)),
            sputtered=draw(st.lists(st.booleans(), min_size=n_atoms, max_size=n_atoms)),
        ))
    metadata = draw(st.dictionaries(labels, st.one_of(finite, st.text(max_size=8),
                                                      st.booleans(), st.none()),
                                    max_size=3))
    return ImpactSet(species, impacts, metadata)


@settings(max_examples=150, deadline=None)
@given(impact_sets())
def test_roundtrip_property(s):
    assert parse_impact_set(write_impact_set(s, "cfi"), "cfi") == s
    assert parse_impact_set(write_impact_set(s, "json"), "json") == s


@settings(max_examples=100, deadline=None)
@given(impact_sets())
def test_json_cfi_json_roundtrip(s):
    j1 = write_impact_set(s, "json")
    via_cfi = parse_impact_set(write_impact_set(parse_impact_set(j1, "json"), "cfi"), "cfi")
    assert write_impact_set(via_cfi, "json") == j1


@settings(max_examples=50, deadline=None)
@given(impact_sets())
def test_serialization_is_deterministic(s):
    assert write_impact_set(s) == write_impact_set(parse_impact_set(write_impact_set(s)))
    assert all(math.isfinite(v) for imp in s.impacts for v in imp.pos_final.ravel())
