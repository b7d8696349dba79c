import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mosearch.valuemap import (
    PRODUCT,
    SUM_NORM,
    DecayParams,
    ValueLayer,
    aggregate_layers,
    cell_confidence,
    cone_confidence,
    decay_factor,
    decay_layer,
    dump_layer,
    fuse_cell,
    ingest_observation,
    load_layer_dump,
)
from mosearch.world import RobotPose, SensorSpec, Visibility, raycast_visibility, scene_from_rows

FOV = math.radians(79)
RES = 0.25
unit = st.floats(0.0, 1.0)


def vis_of(cells, shape):
    rows = np.array([c[0] for c in cells], dtype=np.int64)
    cols = np.array([c[1] for c in cells], dtype=np.int64)
    return Visibility(rows, cols, np.zeros(len(cells), dtype=bool), shape)


# --- cone confidence ----------------------------------------------------------


def test_cone_on_axis():
    assert cone_confidence(0.0, FOV) == 1.0


def test_cone_at_fov_edge():
    assert cone_confidence(FOV / 2, FOV) == pytest.approx(0.0, abs=1e-15)


def test_cone_at_quarter_fov():
    assert cone_confidence(FOV / 4, FOV) == pytest.approx(0.5, abs=1e-12)


def test_cone_outside_fov_is_zero():
    assert cone_confidence(FOV, FOV) == 0.0


def test_cell_confidence_matches_bearing():
    pose = RobotPose(0.125, 0.125, 0.0)
    # cell directly ahead
    assert cell_confidence(pose, SensorSpec(fov=FOV), (0, 4), RES) == pytest.approx(1.0)
    # own cell
    assert cell_confidence(pose, SensorSpec(fov=FOV), (0, 0), RES) == 1.0


@settings(max_examples=1000, deadline=None)
@given(theta=st.floats(-math.pi, math.pi), fov=st.floats(0.1, 2 * math.pi))
def test_cone_in_unit_interval(theta, fov):
    c = cone_confidence(theta, fov)
    assert 0.0 <= c <= 1.0
    expected = math.cos(abs(theta) / (fov / 2) * math.pi / 2) ** 2 if abs(theta) <= fov / 2 else 0.0
    assert c == pytest.approx(expected, abs=1e-12)


# --- fusion -------------------------------------------------------------------


def test_fuse_symmetric():
    v, c = fuse_cell(1.0, 0.5, 0.0, 0.5)
    assert (v, c) == (pytest.approx(0.5), pytest.approx(0.5))


def test_fuse_first_observation():
    assert fuse_cell(0.37, 0.81, 0.0, 0.0) == (pytest.approx(0.37), pytest.approx(0.81))


def test_fuse_worked_example():
    v, c = fuse_cell(0.9, 0.8, 0.3, 0.4)
    assert v == pytest.approx(0.7, abs=1e-9)
    assert c == pytest.approx(0.8 / 1.2, abs=1e-9)


def test_fuse_no_information_keeps_cell():
    assert fuse_cell(0.9, 0.0, 0.3, 0.0) == (0.3, 0.0)


@settings(max_examples=1000, deadline=None)
@given(vc=unit, cc=unit, vp=unit, cp=unit)
def test_fuse_bounds_and_bias(vc, cc, vp, cp):
    v, c = fuse_cell(vc, cc, vp, cp)
    assert 0.0 <= v <= 1.0 and 0.0 <= c <= 1.0
    if cc + cp == 0:
        return
    assert min(vc, vp) - 1e-12 <= v <= max(vc, vp) + 1e-12
    assert min(cc, cp) - 1e-12 <= c <= max(cc, cp) + 1e-12
    assert c >= (cc + cp) / 2 - 1e-12


# --- ingest -------------------------------------------------------------------


def test_ingest_empty_visible_set_is_noop():
    layer = ValueLayer.empty("bed", (5, 5))
    out = ingest_observation(layer, RobotPose(0.6, 0.6), SensorSpec(), 0.7, vis_of([], (5, 5)), RES)
    assert np.array_equal(out.value, layer.value)
    assert np.array_equal(out.confidence, layer.confidence)
    assert np.array_equal(out.update_count, layer.update_count)


def _fixture():
    scene = scene_from_rows(["." * 15] * 15, RES)
    pose = RobotPose(7.5 * RES, 7.5 * RES, 0.0)
    sensor = SensorSpec(fov=FOV, max_range=3.0)
    return scene, pose, sensor, raycast_visibility(scene, pose, sensor)


def test_ingest_first_observation():
    scene, pose, sensor, vis = _fixture()
    out = ingest_observation(ValueLayer.empty("bed", scene.shape), pose, sensor, 0.6, vis, RES)
    mask = vis.mask()
    for r, c in vis.cells():
        conf = cell_confidence(pose, sensor, (r, c), RES)
        assert out.confidence[r, c] == pytest.approx(conf)
        assert out.update_count[r, c] == 1
        if conf > 0:
            assert out.value[r, c] == pytest.approx(0.6)
    assert (out.update_count[~mask] == 0).all()
    assert (out.confidence[~mask] == 0).all()


def test_ingest_twice_is_fixed_point_on_axis():
    scene, pose, sensor, vis = _fixture()
    once = ingest_observation(ValueLayer.empty("bed", scene.shape), pose, sensor, 0.6, vis, RES)
    twice = ingest_observation(once, pose, sensor, 0.6, vis, RES)
    axis = (7, 10)
    assert twice.value[axis] == pytest.approx(0.6)
    assert twice.confidence[axis] == pytest.approx(1.0)
    assert twice.update_count[axis] == 2
    assert np.allclose(twice.value, once.value)


def test_ingest_rejects_bad_score():
    scene, pose, sensor, vis = _fixture()
    with pytest.raises(ValueError):
        ingest_observation(ValueLayer.empty("bed", scene.shape), pose, sensor, 1.5, vis, RES)


_SCENE = scene_from_rows(
    ["..........", "....#.....", "....#.....", "..........", "......##..", "..........", ".........."], RES
)
views = st.lists(
    st.tuples(st.floats(0, 0.999), st.floats(0, 0.999), st.floats(-math.pi, math.pi), unit), min_size=1, max_size=8
)


@settings(max_examples=1000, deadline=None)
@given(seq=views)
def test_rasters_stay_in_unit_interval(seq):
    layer = ValueLayer.empty("bed", _SCENE.shape)
    sensor = SensorSpec(fov=FOV, max_range=2.0, ray_count=16)
    prev_counts = layer.update_count.copy()
    for fx, fy, phi, score in seq:
        pose = RobotPose(fx * _SCENE.width * RES, fy * _SCENE.height * RES, phi)
        if not _SCENE.is_free(pose.x, pose.y):
            continue
        vis = raycast_visibility(_SCENE, pose, sensor)
        layer = ingest_observation(layer, pose, sensor, score, vis, RES)
        assert (layer.update_count >= prev_counts).all()
        prev_counts = layer.update_count.copy()
    for raster in (layer.value, layer.confidence, decay_layer(layer, DecayParams())):
        assert ((raster >= 0) & (raster <= 1)).all()
    assert (layer.confidence[layer.update_count == 0] == 0).all()


# --- decay --------------------------------------------------------------------


def test_decay_midpoint():
    assert decay_factor(15, DecayParams(15, 3)) == pytest.approx(0.5)
    layer = ValueLayer.empty("bed", (2, 2))
    layer.value[:] = 0.8
    layer.update_count[:] = 15
    assert np.allclose(decay_layer(layer, DecayParams(15, 3)), 0.4)


def test_decay_fresh_cell():
    f = decay_factor(0, DecayParams(tau=20, kappa=1))
    assert abs(f - 1.0) <= 1e-8
    assert f == pytest.approx(1.0 / (1.0 + math.exp(-20)), abs=1e-15)


def test_decay_of_zero_map():
    layer = ValueLayer.empty("bed", (3, 4))
    layer.update_count[:] = np.arange(12).reshape(3, 4)
    assert (decay_layer(layer, DecayParams()) == 0).all()


def test_decay_params_validated():
    with pytest.raises(ValueError):
        DecayParams(tau=1, kappa=0)
    with pytest.raises(ValueError):
        DecayParams(tau=-1, kappa=1)


@settings(max_examples=1000, deadline=None)
@given(u1=st.integers(0, 10_000), u2=st.integers(0, 10_000), tau=st.floats(0, 100), kappa=st.floats(0.01, 50))
def test_decay_monotone(u1, u2, tau, kappa):
    p = DecayParams(tau, kappa)
    lo, hi = sorted((u1, u2))
    assert decay_factor(lo, p) >= decay_factor(hi, p)
    assert 0.0 <= decay_factor(hi, p) <= 1.0
    ref = 1.0 / (1.0 + math.exp(min(700.0, (lo - tau) / kappa)))
    assert decay_factor(lo, p) == pytest.approx(ref, abs=1e-12)


# --- aggregation --------------------------------------------------------------


def _layer(values, target="t"):
    v = np.asarray(values, dtype=float)
    lay = ValueLayer.empty(target, v.shape)
    lay.value[:] = v
    return lay


def test_aggregate_single_layer_rescaled():
    agg = aggregate_layers([_layer([[0.1, 0.4], [0.2, 0.0]])])
    assert np.allclose(agg.value, [[0.25, 1.0], [0.5, 0.0]])
    assert (aggregate_layers([_layer(np.zeros((2, 2)))]).value == 0).all()


def test_aggregate_two_layers_sum_norm():
    a = _layer([[0.4, 0.1]], "bed")
    b = _layer([[0.6, 0.2]], "tv")
    agg = aggregate_layers([a, b], SUM_NORM)
    assert agg.value[0, 0] == pytest.approx(1.0)
    assert agg.value[0, 1] == pytest.approx(0.3)
    assert agg.contributing_targets == ["bed", "tv"]


def test_aggregate_product_annihilates():
    agg = aggregate_layers([_layer([[0.5, 0.9]]), _layer([[0.0, 0.5]])], PRODUCT)
    assert agg.value[0, 0] == 0.0
    assert agg.value[0, 1] == pytest.approx(0.45)


def test_aggregate_errors():
    with pytest.raises(ValueError):
        aggregate_layers([])
    with pytest.raises(ValueError):
        aggregate_layers([_layer(np.zeros((2, 2))), _layer(np.zeros((3, 2)))])
    with pytest.raises(ValueError):
        aggregate_layers([_layer(np.zeros((2, 2)))], "max")


@settings(max_examples=1000, deadline=None)
@given(data=st.lists(st.lists(unit, min_size=6, max_size=6), min_size=1, max_size=4),
       mode=st.sampled_from([SUM_NORM, PRODUCT]))
def test_aggregate_in_unit_interval(data, mode):
    layers = [_layer(np.reshape(v, (2, 3))) for v in data]
    agg = aggregate_layers(layers, mode, DecayParams())
    assert ((agg.value >= 0) & (agg.value <= 1)).all()
    if mode == SUM_NORM and agg.value.any():
        assert agg.value.max() == pytest.approx(1.0)


# --- dumps --------------------------------------------------------------------


def test_layer_dump_roundtrip(tmp_path):
    lay = _layer([[0.12345, 1.0], [0.0, 0.5]], "bed")
    lay.update_count[0, 0] = 4
    dump_layer(lay, tmp_path / "bed", DecayParams(15, 3), step=7)
    raster, meta = load_layer_dump(tmp_path / "bed")
    assert np.allclose(raster, [[0.1235, 1.0], [0.0, 0.5]])
    assert meta["target"] == "bed" and meta["tau"] == 15 and meta["kappa"] == 3 and meta["step"] == 7
    assert (tmp_path / "bed.txt").read_text().splitlines()[0] == "0.1235 1.0000"
