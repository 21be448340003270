import io

import numpy as np
import pytest
from scipy.stats import kstest

from twinloop import datagen
from twinloop.datagen import Dataset, EventType, GenConfig, SystemState


@pytest.fixture(scope="module")
def seeded_5k():
    return datagen.generate(GenConfig(n_samples=5000, event_rate=0.05, seed=42))


def test_generate_sample_count_and_event_band(seeded_5k):
    assert len(seeded_5k) == 5000
    assert 200 <= int(seeded_5k.key_event.sum()) <= 300


def test_generate_empty_dataset_has_valid_schema():
    d = datagen.generate(GenConfig(n_samples=0))
    assert len(d) == 0
    assert d.column_names() == tuple(datagen.CSV_HEADER.split(","))
    assert d.to_csv_text() == datagen.CSV_HEADER + "\n"


def test_generate_large_run_correlation_band():
    d = datagen.generate(GenConfig(n_samples=50000, event_rate=0.05, seed=7))
    # Sample-correlation oracle straight over the generated columns.
    corr = np.corrcoef(d.temperature, d.vibration)[0, 1]
    assert 0.25 <= corr <= 0.55


def test_generate_is_deterministic(seeded_5k):
    again = datagen.generate(GenConfig(n_samples=5000, event_rate=0.05, seed=42))
    assert seeded_5k.to_csv_text() == again.to_csv_text()


def test_generate_different_seeds_differ():
    a = datagen.generate(GenConfig(n_samples=200, seed=1))
    b = datagen.generate(GenConfig(n_samples=200, seed=2))
    assert not np.array_equal(a.temperature, b.temperature)


def test_event_labels_match_event_types(seeded_5k):
    assert np.array_equal(
        seeded_5k.key_event == 1, seeded_5k.event_type != EventType.NONE.value
    )
    assert set(np.unique(seeded_5k.event_type)) > {EventType.NONE.value}


def test_dataset_invariants(seeded_5k):
    dt = np.diff(seeded_5k.timestamp)
    assert np.all(dt == datagen.SAMPLE_INTERVAL_S)
    assert np.all(seeded_5k.efficiency_index >= 0) and np.all(seeded_5k.efficiency_index <= 1)
    assert np.all(np.diff(seeded_5k.operational_hours) >= 0)
    assert np.all(seeded_5k.performance_score >= 0)
    assert set(np.unique(seeded_5k.system_state)) <= {s.value for s in SystemState}


def test_csv_round_trip(seeded_5k):
    text = seeded_5k.to_csv_text()
    back = Dataset.from_csv(io.StringIO(text))
    assert back == seeded_5k


def test_validate_ks_pvalues(seeded_5k):
    cfg = GenConfig(n_samples=5000, event_rate=0.05, seed=42)
    report = datagen.validate(seeded_5k, cfg)
    for name in datagen.SENSOR_NAMES:
        assert report.ks_pvalues[name] > 0.01
    # KS oracle: rerun the reference implementation on the same prepared arrays.
    nominal = seeded_5k.key_event == 0
    col = seeded_5k.pressure[nominal]
    z = (col - col.mean()) / col.std()
    expected = kstest(z[:: cfg.smoothing_window], "norm")
    assert report.ks_statistics["pressure"] == pytest.approx(expected.statistic, abs=1e-12)
    assert report.ks_pvalues["pressure"] == pytest.approx(expected.pvalue, abs=1e-12)


def test_validate_constant_dataset_rejected_by_ks(seeded_5k):
    d = seeded_5k.take(slice(0, 500))
    for name in datagen.SENSOR_NAMES:
        getattr(d, name)[:] = 3.14
    report = datagen.validate(d, GenConfig(n_samples=500, seed=0))
    for name in datagen.SENSOR_NAMES:
        assert report.ks_pvalues[name] < 1e-6


def test_validate_event_rate(seeded_5k):
    report = datagen.validate(seeded_5k, GenConfig(n_samples=5000, event_rate=0.05, seed=42))
    assert 0.04 <= report.empirical_event_rate <= 0.06
    # Counting oracle.
    assert report.empirical_event_rate == seeded_5k.key_event.sum() / len(seeded_5k)
    assert sum(report.event_type_counts.values()) == int(seeded_5k.key_event.sum())


def test_validate_rejects_empty():
    with pytest.raises(ValueError):
        datagen.validate(Dataset.empty(), GenConfig())


def test_split_paper_ratios(seeded_5k):
    train, val, test = datagen.split(seeded_5k, (0.6, 0.2, 0.2))
    assert (len(train), len(val), len(test)) == (3000, 1000, 1000)


def test_split_degenerate_all_train():
    d = datagen.generate(GenConfig(n_samples=50, seed=3)).take(slice(0, 10))
    train, val, test = datagen.split(d, (1.0, 0.0, 0.0))
    assert (len(train), len(val), len(test)) == (10, 0, 0)


def test_split_largest_remainder_rounding():
    d = datagen.generate(GenConfig(n_samples=5001, event_rate=0.05, seed=9))
    parts = datagen.split(d, (0.6, 0.2, 0.2))
    sizes = tuple(len(p) for p in parts)
    # Quotas 3000.6/1000.2/1000.2: the largest fractional remainder takes the
    # leftover row.
    assert sizes == (3001, 1000, 1000)
    assert sum(sizes) == 5001


def test_split_is_partition(seeded_5k):
    parts = datagen.split(seeded_5k, (0.6, 0.2, 0.2))
    assert Dataset.concat(parts) == seeded_5k


def test_split_rejects_bad_ratios(seeded_5k):
    with pytest.raises(ValueError):
        datagen.split(seeded_5k, (0.6, 0.2, 0.1))


def test_config_validation_errors():
    bad = np.array([[1.0, 0.4, 0.35], [0.4, 1.0, 0.45], [0.9, 0.45, 1.0]])
    with pytest.raises(ValueError, match="symmetric"):
        datagen.generate(GenConfig(n_samples=100, correlation_matrix=bad))
    out_of_band = np.array([[1.0, 0.9, 0.4], [0.9, 1.0, 0.4], [0.4, 0.4, 1.0]])
    with pytest.raises(ValueError, match="0.3"):
        datagen.generate(GenConfig(n_samples=100, correlation_matrix=out_of_band))
    with pytest.raises(ValueError, match="smoothing window"):
        datagen.generate(GenConfig(n_samples=10, smoothing_window=11))
    with pytest.raises(ValueError, match="odd"):
        datagen.generate(GenConfig(n_samples=100, smoothing_window=10))
    with pytest.raises(ValueError, match="order"):
        datagen.generate(GenConfig(n_samples=100, smoothing_window=11, smoothing_order=11))
    with pytest.raises(ValueError, match="event_rate"):
        datagen.generate(GenConfig(n_samples=100, event_rate=1.5))


def test_all_event_types_present_on_long_run():
    d = datagen.generate(GenConfig(n_samples=20000, event_rate=0.05, seed=11))
    seen = set(np.unique(d.event_type))
    assert {e.value for e in datagen.INJECTED_EVENT_TYPES} <= seen
