import numpy as np
import pytest

from beamprint.errors import ConfigurationError, DataError, FeatureExtractionError
from beamprint.features import (
    SKIP_NEIGHBORS,
    SKIP_SERVING,
    TOPOLOGY_CELL,
    TOPOLOGY_NETWORK,
    FeatureConfig,
    apply,
    apply_labels,
    extract,
    extract_features,
    feature_config_from_dict,
    feature_config_to_dict,
    feature_length,
    fit_normalizer,
    invert_labels,
    normalizer_from_dict,
    normalizer_to_dict,
)
from beamprint.fingerprint import Dataset, FingerprintRecord


def make_record(serving=5, x=1.0, y=2.0, los=True, measurements=None):
    if measurements is None:
        measurements = (
            (5, 2, -50.0),
            (3, 4, -52.0),
            (5, 7, -55.0),
            (9, 0, -58.0),
            (5, 1, -60.0),
            (3, 6, -61.0),
            (9, 8, -70.0),
        )
    return FingerprintRecord(
        x=x, y=y, serving_cell_id=serving, los_to_serving=los, measurements=measurements
    )


# ---------------------------------------------------------------------------
# vector layout


def test_feature_length_oracles():
    # 2 per serving beam + 1 cell id + 3 per neighbor
    assert feature_length(FeatureConfig(n_serving_beams=3, n_neighbor_beams=0)) == 7
    assert feature_length(FeatureConfig(n_serving_beams=4, n_neighbor_beams=0)) == 9
    assert feature_length(FeatureConfig(n_serving_beams=3, n_neighbor_beams=2)) == 13
    assert (
        feature_length(
            FeatureConfig(
                n_serving_beams=3,
                n_neighbor_beams=2,
                include_serving_cell_id=False,
                topology=TOPOLOGY_CELL,
            )
        )
        == 12
    )


def test_feature_length_one_hot():
    cfg = FeatureConfig(
        n_serving_beams=2,
        n_neighbor_beams=1,
        one_hot_ids=True,
        cell_id_vocab=24,
        beam_id_vocab=32,
    )
    # serving: 2*(32+1), cell id: 24, neighbor: 24+32+1
    assert feature_length(cfg) == 2 * 33 + 24 + 57


def test_extract_layout():
    cfg = FeatureConfig(n_serving_beams=2, n_neighbor_beams=2)
    fv = extract(make_record(), cfg)
    expect = [2.0, -50.0, 7.0, -55.0, 5.0, 3.0, 4.0, -52.0, 9.0, 0.0, -58.0]
    assert fv.values.tolist() == expect
    assert fv.label == (1.0, 2.0)


def test_extract_without_cell_id():
    cfg = FeatureConfig(
        n_serving_beams=2,
        n_neighbor_beams=1,
        include_serving_cell_id=False,
        topology=TOPOLOGY_CELL,
    )
    fv = extract(make_record(), cfg)
    assert fv.values.tolist() == [2.0, -50.0, 7.0, -55.0, 3.0, 4.0, -52.0]


def test_extract_neighbor_order_is_strongest_first():
    # neighbors ranked by their best beam, strongest first
    cfg = FeatureConfig(n_serving_beams=1, n_neighbor_beams=2)
    fv = extract(make_record(), cfg)
    # cell 3 best -52 comes before cell 9 best -58
    assert fv.values.tolist()[3:] == [3.0, 4.0, -52.0, 9.0, 0.0, -58.0]


def test_extract_one_neighbor_entry_per_cell():
    # second-best beam of a strong neighbor must not displace another cell
    cfg = FeatureConfig(n_serving_beams=1, n_neighbor_beams=2)
    measurements = (
        (5, 2, -50.0),
        (3, 4, -52.0),
        (3, 6, -53.0),
        (9, 0, -58.0),
    )
    fv = extract(make_record(measurements=measurements), cfg)
    assert fv.values.tolist()[3:] == [3.0, 4.0, -52.0, 9.0, 0.0, -58.0]


def test_extract_skip_reasons():
    cfg = FeatureConfig(n_serving_beams=4, n_neighbor_beams=0)
    with pytest.raises(FeatureExtractionError) as e:
        extract(make_record(), cfg)
    assert e.value.reason == SKIP_SERVING

    cfg = FeatureConfig(n_serving_beams=1, n_neighbor_beams=3)
    with pytest.raises(FeatureExtractionError) as e:
        extract(make_record(), cfg)
    assert e.value.reason == SKIP_NEIGHBORS


def test_extract_one_hot():
    cfg = FeatureConfig(
        n_serving_beams=1,
        n_neighbor_beams=1,
        one_hot_ids=True,
        cell_id_vocab=10,
        beam_id_vocab=8,
    )
    fv = extract(make_record(), cfg)
    assert fv.values.shape == (feature_length(cfg),)
    # serving beam 2 one-hot, then rsrp
    assert fv.values[2] == 1.0
    assert fv.values[:8].sum() == 1.0
    assert fv.values[8] == -50.0
    # serving cell 5 one-hot
    assert fv.values[9 + 5] == 1.0


def test_extract_one_hot_rejects_out_of_vocab():
    cfg = FeatureConfig(
        n_serving_beams=1,
        n_neighbor_beams=0,
        one_hot_ids=True,
        cell_id_vocab=4,  # serving cell is 5
        beam_id_vocab=8,
    )
    with pytest.raises(ConfigurationError):
        extract(make_record(), cfg)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        feature_length(FeatureConfig(n_serving_beams=0))
    with pytest.raises(ConfigurationError):
        feature_length(FeatureConfig(n_neighbor_beams=4))
    with pytest.raises(ConfigurationError):
        feature_length(FeatureConfig(topology="urban"))
    with pytest.raises(ConfigurationError):
        feature_length(FeatureConfig(topology=TOPOLOGY_CELL, include_serving_cell_id=True))
    with pytest.raises(ConfigurationError):
        feature_length(FeatureConfig(one_hot_ids=True))


# ---------------------------------------------------------------------------
# batch extraction


def test_extract_features_matches_per_record(small_dataset):
    for cfg in (
        FeatureConfig(n_serving_beams=3, n_neighbor_beams=0),
        FeatureConfig(n_serving_beams=3, n_neighbor_beams=2),
        FeatureConfig(n_serving_beams=1, n_neighbor_beams=3),
        FeatureConfig(
            n_serving_beams=2,
            n_neighbor_beams=1,
            include_serving_cell_id=False,
            topology=TOPOLOGY_CELL,
        ),
    ):
        fs = extract_features(small_dataset, cfg)
        kept = 0
        for i in range(len(small_dataset)):
            try:
                fv = extract(small_dataset.record(i), cfg)
            except FeatureExtractionError:
                continue
            row = np.searchsorted(fs.indices, i)
            assert fs.indices[row] == i
            assert np.allclose(fs.values[row], fv.values, atol=1e-12)
            assert tuple(fs.labels[row]) == fv.label
            kept += 1
        assert kept == len(fs)
        assert len(fs) + sum(fs.skipped.values()) == len(small_dataset)


def irregular_dataset():
    # hand-rolled rows without the full per-cell sweep, forcing the
    # record-by-record fallback
    xs = np.array([0.0, 1.0, 2.0])
    ys = np.array([0.0, 0.0, 0.0])
    serving = np.array([0, 1, 0], dtype=np.int32)
    los = np.array([True, True, False])
    meas_cells = np.array([[0, 1, 0], [1, 0, 1], [0, 0, 1]], dtype=np.int32)
    meas_beams = np.array([[3, 1, 2], [0, 5, 4], [2, 3, 0]], dtype=np.int32)
    meas_rsrp = np.array(
        [[-50.0, -55.0, -60.0], [-40.0, -48.0, -52.0], [-45.0, -50.0, -58.0]]
    )
    return Dataset(
        xs=xs,
        ys=ys,
        serving=serving,
        los=los,
        meas_cells=meas_cells,
        meas_beams=meas_beams,
        meas_rsrp=meas_rsrp,
        cells=(0, 1),
        n_beams=8,
        scenario_hash="x" * 64,
        seed=0,
    )


def test_extract_features_irregular_rows():
    ds = irregular_dataset()
    cfg = FeatureConfig(n_serving_beams=2, n_neighbor_beams=1)
    fs = extract_features(ds, cfg)
    assert len(fs) == 3
    assert fs.values[0].tolist() == [3.0, -50.0, 2.0, -60.0, 0.0, 1.0, 1.0, -55.0]
    cfg3 = FeatureConfig(n_serving_beams=3, n_neighbor_beams=0)
    fs3 = extract_features(ds, cfg3)
    assert len(fs3) == 0
    assert fs3.skipped == {SKIP_SERVING: 3}


def test_extract_features_counts_skips(single_site_dataset):
    # one cell in the scenario: neighbor features are unobtainable
    cfg = FeatureConfig(n_serving_beams=2, n_neighbor_beams=1)
    fs = extract_features(single_site_dataset, cfg)
    assert len(fs) == 0
    assert fs.skipped[SKIP_NEIGHBORS] == len(single_site_dataset)


# ---------------------------------------------------------------------------
# normalization


def test_normalizer_oracle():
    # hand-computed: column (0, 2) has mean 1 and population std 1
    values = np.array([[0.0, 5.0], [2.0, 5.0]])
    labels = np.array([[0.0, 10.0], [4.0, 10.0]])
    stats = fit_normalizer(values, labels)
    assert stats.feature_mean.tolist() == [1.0, 5.0]
    assert stats.feature_std.tolist() == [1.0, 1.0]  # constant column keeps std 1
    assert stats.label_mean.tolist() == [2.0, 10.0]
    assert stats.label_std.tolist() == [2.0, 1.0]
    assert stats.fit_on_train


def test_normalizer_population_std():
    values = np.array([[1.0], [2.0], [3.0], [4.0]])
    labels = np.zeros((4, 2))
    stats = fit_normalizer(values, labels)
    # population (1/N) convention, not the n-1 sample one
    assert stats.feature_std[0] == pytest.approx(np.sqrt(1.25))


def test_apply_and_invert():
    values = np.array([[0.0, 5.0], [2.0, 7.0]])
    labels = np.array([[0.0, 10.0], [4.0, 30.0]])
    stats = fit_normalizer(values, labels)
    z = apply(stats, values)
    assert np.allclose(z.mean(axis=0), 0.0)
    assert np.allclose(z.std(axis=0), 1.0)
    zl = apply_labels(stats, labels)
    assert np.allclose(invert_labels(stats, zl), labels)
    # single-vector path
    assert np.allclose(apply(stats, values[0]), z[0])


def test_apply_rejects_width_mismatch():
    stats = fit_normalizer(np.zeros((2, 3)), np.zeros((2, 2)))
    with pytest.raises(DataError):
        apply(stats, np.zeros((4, 5)))


def test_fit_normalizer_validation():
    with pytest.raises(DataError):
        fit_normalizer(np.zeros((1, 3)), np.zeros((1, 2)))
    with pytest.raises(DataError):
        fit_normalizer(np.zeros((4, 3)), np.zeros((4, 3)))
    with pytest.raises(DataError):
        fit_normalizer(np.zeros((4, 3)))


def test_normalizer_dict_round_trip():
    stats = fit_normalizer(np.arange(12.0).reshape(4, 3), np.arange(8.0).reshape(4, 2))
    back = normalizer_from_dict(normalizer_to_dict(stats))
    assert np.array_equal(back.feature_mean, stats.feature_mean)
    assert np.array_equal(back.label_std, stats.label_std)
    assert back.fit_on_train == stats.fit_on_train


# ---------------------------------------------------------------------------
# config round trip


def test_feature_config_round_trip():
    cfg = FeatureConfig(
        n_serving_beams=2,
        n_neighbor_beams=3,
        include_serving_cell_id=False,
        topology=TOPOLOGY_CELL,
    )
    assert feature_config_from_dict(feature_config_to_dict(cfg)) == cfg


def test_feature_config_unknown_key():
    d = feature_config_to_dict(FeatureConfig())
    d["extras"] = True
    with pytest.raises(ConfigurationError):
        feature_config_from_dict(d)
