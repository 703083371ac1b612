import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from petsynth import phantoms
from petsynth.errors import InvalidGrid, InvalidSpec
from petsynth.sliceio import read_manifest, sha256_file


def spec(**kw):
    defaults = dict(seed=0, grid=(64, 64), paired=True)
    defaults.update(kw)
    return phantoms.PhantomSpec(**defaults)


def test_generate_subject_invariants():
    t = phantoms.generate_subject(spec())
    assert t.pet is not None
    for sl in (t.asl, t.t1, t.pet):
        assert sl.pixels.shape == (64, 64)
        assert sl.pixels.min() >= 0.0 and sl.pixels.max() <= 1.0
        assert np.all(np.isfinite(sl.pixels))


def test_pet_absent_iff_unpaired():
    assert phantoms.generate_subject(spec(paired=False)).pet is None


def test_determinism_bit_identical():
    a = phantoms.generate_subject(spec())
    b = phantoms.generate_subject(spec())
    assert np.array_equal(a.asl.pixels, b.asl.pixels)
    assert np.array_equal(a.t1.pixels, b.t1.pixels)
    assert np.array_equal(a.pet.pixels, b.pet.pixels)


def test_hotspot_changes_are_local_and_skip_t1():
    rest = phantoms.generate_subject(spec())
    hot = phantoms.generate_subject(
        spec(
            activation=phantoms.ACTIVATION_HOTSPOT,
            hotspot=phantoms.Hotspot(center=(16, 16), radius=4, amplitude=0.5),
        )
    )
    assert np.array_equal(rest.t1.pixels, hot.t1.pixels)

    for rest_px, hot_px in ((rest.asl.pixels, hot.asl.pixels), (rest.pet.pixels, hot.pet.pixels)):
        diff = np.abs(hot_px.astype(np.float64) - rest_px.astype(np.float64))
        changed = np.argwhere(diff > 0)
        assert len(changed) > 0, "hotspot must change the channel"
        dist = np.hypot(changed[:, 0] - 16.0, changed[:, 1] - 16.0)
        allowed = 4 + phantoms.PET_BLUR_RADIUS
        within = np.count_nonzero(dist <= allowed)
        assert within / len(changed) >= 0.99


def test_uptake_is_monotone_and_fixed_point():
    x = np.linspace(0.0, 1.0, 101)
    y = phantoms.uptake(x)
    assert np.all(np.diff(y) > 0)
    assert abs(y[-1] - 1.0) < 1e-12
    assert y[0] == 0.0


def test_invalid_specs():
    with pytest.raises(InvalidGrid):
        spec(grid=(30, 64))
    with pytest.raises(InvalidSpec):
        spec(grid=(0, 64))
    with pytest.raises(InvalidSpec):
        spec(seed=-1)
    with pytest.raises(InvalidSpec):
        spec(activation="local_hotspot")  # missing hotspot params
    with pytest.raises(InvalidSpec):
        spec(tissue_classes=5)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=15, deadline=None)
def test_subject_values_in_range_for_any_seed(seed):
    t = phantoms.generate_subject(phantoms.PhantomSpec(seed=seed, grid=(16, 16)))
    for sl in (t.asl, t.t1, t.pet):
        assert sl.pixels.min() >= 0.0 and sl.pixels.max() <= 1.0


def test_corpus_counts_and_flags(tmp_path):
    m = phantoms.generate_corpus(4, 8, base_seed=7, out_dir=tmp_path, grid=(16, 16))
    assert len(m.entries) == 12
    assert sum(e.paired for e in m.entries) == 4
    loaded = read_manifest(m.path)
    assert len(loaded.entries) == 12
    assert loaded.n_paired == 4 and loaded.n_unpaired == 8


def test_corpus_empty_is_valid(tmp_path):
    m = phantoms.generate_corpus(0, 0, base_seed=1, out_dir=tmp_path, grid=(16, 16))
    assert m.entries == ()
    assert read_manifest(m.path).entries == ()


def test_corpus_regeneration_identical_checksums(tmp_path):
    m1 = phantoms.generate_corpus(2, 2, base_seed=5, out_dir=tmp_path / "a", grid=(16, 16))
    m2 = phantoms.generate_corpus(2, 2, base_seed=5, out_dir=tmp_path / "b", grid=(16, 16))
    assert [e.checksums for e in m1.entries] == [e.checksums for e in m2.entries]
    assert sha256_file(m1.path) == sha256_file(m2.path)


def test_corpus_mixes_conditions(tmp_path):
    m = phantoms.generate_corpus(4, 4, base_seed=2, out_dir=tmp_path, grid=(16, 16))
    conditions = {e.condition for e in m.entries}
    assert conditions == {"resting", "activated"}
    for e in m.entries:
        assert (e.subject_id % 2 == 1) == (e.condition == "activated")
