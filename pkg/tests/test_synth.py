import json

import numpy as np
import pytest

from sargdv.raster import DataCube
from sargdv.synth import SynthError, SynthSpec, acquisition_dates, generate, load_spec, positive_fraction, spec_to_json, synth_boreholes

SMALL = SynthSpec(width=64, height=48, blob_count=3, blob_radius=(4.0, 7.0), seed=3)


def test_no_blobs():
    vv, vh, cc, truth = generate(SynthSpec(width=32, height=32, blob_count=0, blob_radius=(2, 3)))
    assert not truth.values.any()
    assert (vv.n_bands, vh.n_bands, cc.n_bands) == (30, 30, 29)


def test_bit_identical_for_same_seed():
    a = generate(SMALL)
    b = generate(SMALL)
    for x, y in zip(a, b):
        assert x == y
    c = generate(SynthSpec(**{**json.loads(spec_to_json(SMALL)), "seed": 4}))
    assert c[1] != a[1]


def test_cube_invariants():
    vv, vh, cc, truth = generate(SMALL)
    assert cc.bands.min() >= 0 and cc.bands.max() <= 1
    assert vv.acquisition_dates == acquisition_dates(30)
    assert cc.acquisition_dates == acquisition_dates(30)[1:]
    assert acquisition_dates(2) == ("2017-01-04", "2017-01-16")
    for cube in (vv, vh, cc):
        assert isinstance(cube, DataCube) and cube.geometry == truth.geometry


def test_planted_signature():
    vv, vh, cc, truth = generate()
    gdv = truth.values.astype(bool)
    amp = vh.bands.std(axis=0)
    assert amp[gdv].mean() < amp[~gdv].mean()
    assert cc.bands.mean(axis=0)[gdv].mean() > cc.bands.mean(axis=0)[~gdv].mean()
    assert cc.bands.std(axis=0)[gdv].mean() < cc.bands.std(axis=0)[~gdv].mean()


def test_default_positive_fraction_near_ten_percent():
    assert 0.05 <= positive_fraction(generate()[3]) <= 0.15


def test_spec_validation(tmp_path):
    with pytest.raises(SynthError):
        SynthSpec(width=4)
    with pytest.raises(SynthError):
        SynthSpec(width=20, height=20, blob_radius=(5, 10))
    with pytest.raises(SynthError):
        SynthSpec(gdv_cc_mean=1.5)
    with pytest.raises(SynthError):
        SynthSpec.from_dict({"colour": 1})
    path = tmp_path / "spec.json"
    path.write_text(spec_to_json(SMALL))
    assert load_spec(path) == SMALL


def test_boreholes():
    truth = generate(SMALL)[3]
    recs = synth_boreholes(SMALL, truth)
    assert len(recs) == 46
    assert sum(r.obs_date < "2019-01-01" for r in recs) == 2
    assert all(-16.8 <= r.dtw_m <= 7.68 for r in recs)
