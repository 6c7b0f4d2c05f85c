import json
import os

import numpy as np
import pytest
from sklearn.base import clone

from grasp.bundle import bundle_fingerprint, load_bundle, read_manifest, save_bundle
from grasp.detector import run_inference
from grasp.errors import ConfigError, DataError
from grasp.estimator import GraspDetector, check_event_log
from grasp.events import serialize_events
from grasp.trainer import TrainConfig, fit

FAST = dict(location_mode="disabled", epochs=2)


def test_save_load_round_trip(small, tmp_path):
    sc, model = small
    bid = save_bundle(model, tmp_path / "b")
    back = load_bundle(tmp_path / "b")
    assert back.bundle_id == bid
    assert back.config == model.config
    assert back.vocab.to_json() == model.vocab.to_json()
    assert back.clusters == model.clusters
    assert back.report == model.report
    for name in model.params:
        np.testing.assert_array_equal(back.params[name], model.params[name])
    a = run_inference(model, sc.split.test)
    b = run_inference(back, sc.split.test)
    assert [v.to_dict() for v in a.verdicts] == [v.to_dict() for v in b.verdicts]


def test_manifest_contents(small, tmp_path):
    _, model = small
    save_bundle(model, tmp_path, extra={"note": 1})
    m = read_manifest(tmp_path)
    assert m["seed"] == model.config.seed
    assert m["config_hash"] == model.config.config_hash()
    assert m["extra"] == {"note": 1}
    assert set(m["artifacts"]) == {"params", "vocab", "location", "clusters", "train_report"}


def test_identical_runs_give_identical_bundles(small, tmp_path):
    sc, _ = small
    fps = []
    for i in range(2):
        model = fit(sc.split.train, TrainConfig(seed=3, **FAST))
        save_bundle(model, tmp_path / f"r{i}")
        fps.append(bundle_fingerprint(tmp_path / f"r{i}"))
    assert fps[0] == fps[1]


def test_different_seed_changes_bundle_id(small, tmp_path):
    sc, _ = small
    ids = {save_bundle(fit(sc.split.train, TrainConfig(seed=s, **FAST)), tmp_path / str(s))
           for s in (1, 2)}
    assert len(ids) == 2


def test_tampered_artifact_is_rejected(small, tmp_path):
    _, model = small
    save_bundle(model, tmp_path)
    path = tmp_path / "clusters.json"
    path.write_text(path.read_text().replace("}", ' , "x": []}', 1) if "}" in path.read_text() else "{}")
    with pytest.raises(ConfigError, match="digest"):
        load_bundle(tmp_path)


def test_missing_bundle_pieces(tmp_path):
    with pytest.raises(ConfigError, match="not a model bundle"):
        load_bundle(tmp_path)
    (tmp_path / "manifest.json").write_text(json.dumps({"format_version": 99}))
    with pytest.raises(ConfigError, match="format"):
        load_bundle(tmp_path)


def test_check_event_log_inputs(small, tmp_path):
    sc, _ = small
    text = serialize_events(sc.split.test)
    p = tmp_path / "e.jsonl"
    p.write_text(text)
    assert check_event_log(str(p)).events == sc.split.test.events
    assert check_event_log(text).events == sc.split.test.events
    test = sc.split.test
    assert check_event_log(test) is test
    with pytest.raises(DataError, match="not found"):
        check_event_log(str(tmp_path / "nope.jsonl"))
    with pytest.raises(DataError):
        check_event_log(42)
    with pytest.raises(DataError, match="schema"):
        check_event_log(sc.split.test, schema="OpTC")


def test_estimator_params_and_clone():
    det = GraspDetector(epochs=3, random_state=5)
    params = det.get_params()
    assert params["epochs"] == 3 and params["random_state"] == 5
    twin = clone(det)
    assert twin.get_params() == params and twin is not det
    keys = set(params) - {"random_state"}
    assert keys <= set(TrainConfig.__dataclass_fields__)


def test_estimator_fit_predict_score(small):
    sc, _ = small
    det = GraspDetector(random_state=0, **FAST)
    with pytest.raises(Exception):
        det.predict(sc.split.test)
    det.fit(sc.split.train)
    assert det.train_report_.n_targets > 0
    assert det.predict(sc.split.train).time_alarms == 0
    assert det.predict(sc.split.test, jobs=2).summary() == det.predict(sc.split.test).summary()


def test_estimator_score_is_attack_recall(cache):
    sc = cache.scenario("NovelExecutable", seed=0, days=3, train_days=2)
    det = GraspDetector(random_state=0, **FAST).fit(sc.split.train)
    assert det.score(sc.split.test, sc.gt) == 1.0
