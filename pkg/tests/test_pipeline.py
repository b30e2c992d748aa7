import json

import numpy as np
import pytest

from nafvdetect import baseline as bl
from nafvdetect.detector import DetectorConfig, EventKind
from nafvdetect.features import WeightVector, score_window
from nafvdetect.generator import gen_scenario, preset
from nafvdetect.ingest import FlowTable, SamplingConfig, window_stream
from nafvdetect.metrics import evaluate
from nafvdetect.pipeline import (
    FEATURE_COLUMNS,
    detect,
    read_events,
    read_series_csv,
    score,
    source_counts,
    train_baseline,
    write_events,
    write_features_csv,
)
from nafvdetect.prefilter import SourceTable, filter_window


@pytest.fixture(scope="module")
def small():
    cfg = preset("mixed", duration=120.0)
    cfg.flashcrowd.onset, cfg.flashcrowd.end = 20.0, 40.0
    cfg.bursts[0].onset, cfg.bursts[0].end = 50.0, 60.0
    cfg.attack.onset = 90.0
    return gen_scenario(cfg, seed=4)


@pytest.mark.parametrize("filtered", [True, False])
def test_object_and_columnar_paths_agree(small, filtered):
    unit = small.config.unit_time
    windows = window_stream(small.table.records(), SamplingConfig(unit))
    prepared = [filter_window(w) if filtered else w for w in windows]
    slow = bl.train(prepared[:40], unit, filtered=filtered)
    cut = 40 * SamplingConfig(unit).unit_us
    head = small.table
    mask = head.ts_us < cut
    fast = train_baseline(FlowTable(head.ts_us[mask], head.src[mask], head.dst[mask], head.port[mask]), unit,
                          filtered=filtered)
    assert (fast.max_old_users, fast.window_count) == (slow.max_old_users, slow.window_count)
    assert fast.mean_new_users == pytest.approx(slow.mean_new_users)
    assert fast.old_users == slow.old_users

    ft = score(small.table, fast)
    points = [score_window(w, fast) for w in prepared]
    assert len(ft) == len(points)
    assert np.allclose(ft.nafv, [p.value for p in points], rtol=1e-12, atol=1e-12)
    assert np.allclose(ft.weighted, [p.weighted for p in points], rtol=1e-12, atol=1e-15)
    assert np.allclose(ft.rows(), [p.features.as_tuple() for p in points], rtol=1e-12)


def test_source_counts_window_bound(small):
    with pytest.raises(ValueError):
        source_counts(small.table, small.config.unit_time, n_windows=3)
    st = source_counts(small.table, small.config.unit_time, n_windows=200)
    assert st.n_windows == 200


def test_training_replay_stays_quiet(train_scenario, trained):
    ft = score(train_scenario.table, trained)
    assert np.mean(np.abs(ft.nafv) < 25) >= 0.95


def test_prequential_rows_match_retraining_oracle(small):
    unit = small.config.unit_time
    windows = [filter_window(w) for w in window_stream(small.table.records(), SamplingConfig(unit))][:30]
    st = source_counts(small.table, unit)
    keep = st.k < 30
    st = SourceTable(st.k[keep], st.src[keep], st.count[keep], 30)
    rows = bl.prequential_features(st, unit)
    assert rows.shape == (28, 4)
    for j in range(2, 30):
        prior = bl.train(windows[:j], unit)
        expected = score_window(windows[j], prior).features.as_tuple()
        assert np.allclose(rows[j - 2], expected, rtol=1e-12, atol=1e-12)


def test_pca_weights_from_training(train_scenario, recwarn):
    b = train_baseline(train_scenario.table, train_scenario.config.unit_time, weights="pca")
    assert not [w for w in recwarn if "equal weights" in str(w.message)]
    assert sum(b.weights.as_tuple()) == pytest.approx(1.0)
    assert b.weights != WeightVector()
    with pytest.raises(ValueError):
        train_baseline(train_scenario.table, 0.8, weights="bogus")


def test_flood_end_to_end(trained):
    sc = gen_scenario(preset("flood"), seed=3)
    result = detect(sc.table, trained)
    alarms = [e.k for e in result.events if e.kind == EventKind.DDOS_ALARM]
    onset = sc.labels.index("Attack")
    assert len(alarms) == 1 and 0 <= alarms[0] - onset <= 3
    m = evaluate(result.events, sc.labels)
    assert m.dr >= 0.99 and m.fr <= 0.01


def test_weighted_score_detects_with_scaled_alpha(trained):
    sc = gen_scenario(preset("flood"), seed=3)
    w = trained.weights.scale
    result = detect(sc.table, trained, DetectorConfig(alpha=25 * w), use_weighted=True)
    assert any(e.kind == EventKind.DDOS_ALARM for e in result.events)


def test_artifacts_round_trip(tmp_path, small, trained):
    result = detect(small.table, trained.with_weights(WeightVector(0.4, 0.3, 0.2, 0.1)))
    write_features_csv(result.features, 0.8, tmp_path / "f.csv")
    header = (tmp_path / "f.csv").read_text().splitlines()[0]
    assert header == ",".join(FEATURE_COLUMNS)
    assert np.allclose(read_series_csv(tmp_path / "f.csv"), result.features.nafv, rtol=0, atol=0)
    assert np.array_equal(read_series_csv(tmp_path / "f.csv", "nafv_weighted"), result.features.weighted)
    with pytest.raises(ValueError):
        read_series_csv(tmp_path / "f.csv", "missing")

    config = DetectorConfig()
    write_events(tmp_path / "e.jsonl", result.events, result.n_windows, config)
    head, events = read_events(tmp_path / "e.jsonl")
    assert head["format"] == "nafv-events/1" and head["windows"] == result.n_windows
    assert events == result.events
    lines = (tmp_path / "e.jsonl").read_text().splitlines()
    assert all({"k", "kind", "nafv", "y", "w", "forecast"} <= json.loads(x).keys() for x in lines[1:])


def test_event_log_format_checked(tmp_path):
    (tmp_path / "e.jsonl").write_text(json.dumps({"format": "other"}) + "\n")
    with pytest.raises(ValueError):
        read_events(tmp_path / "e.jsonl")
    (tmp_path / "empty.jsonl").write_text("")
    with pytest.raises(ValueError):
        read_events(tmp_path / "empty.jsonl")
