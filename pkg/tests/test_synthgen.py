import io

import pytest

from grasp.encode import build_vocab
from grasp.errors import ConfigError, DataError
from grasp.events import parse_events, serialize_events, split_dataset
from grasp.synthgen import (
    START_TS, NS_PER_DAY, AttackScript, BehaviorProfile, build_scenario, default_profiles,
    generate, inject_attack, lotl_script, novel_executable_script,
)
from grasp.trainer import TrainConfig, fit
from grasp.detector import run_inference

from oracles import nearest_pool, neighbor_attrs

MIN = 60 * 10**9


def key(e):
    return (e.ts, e.src_id, e.dst_id, e.op)


def single(rate=10):
    p = default_profiles()[0]
    return BehaviorProfile(p.executable, p.files, p.file_ops, p.netflows, p.net_ops,
                           processes_per_window=1, events_per_process=rate)


def test_fixed_count_bookkeeping():
    log = generate([single(10)], days=6 / 24, seed=0)  # three two-hour slots
    assert len(log) == 30
    assert set(log.subjects().values()) == {"/usr/sbin/sshd"}


def test_same_seed_same_log():
    a = generate(default_profiles(), days=0.5, seed=4)
    b = generate(default_profiles(), days=0.5, seed=4)
    assert serialize_events(a) == serialize_events(b)
    assert serialize_events(a) != serialize_events(generate(default_profiles(), days=0.5, seed=5))


def test_stochastic_mode_is_seeded():
    a = generate(default_profiles(), days=0.5, seed=1, mode="stochastic")
    b = generate(default_profiles(), days=0.5, seed=1, mode="stochastic")
    assert a.events == b.events
    assert len(a) != len(generate(default_profiles(), days=0.5, seed=1))


def test_empty_profiles_rejected():
    with pytest.raises(ConfigError):
        generate([], days=1)
    with pytest.raises(ConfigError):
        generate(default_profiles(), days=0)


def test_shared_pool_rejected_when_separable():
    p = default_profiles()
    clone = BehaviorProfile("/bin/other", p[0].files, p[0].file_ops, p[0].netflows, p[0].net_ops)
    with pytest.raises(ConfigError, match="shared"):
        generate([p[0], clone], days=1)


def test_invalid_profile():
    with pytest.raises(ConfigError):
        BehaviorProfile("/bin/x", (), ("read",), (("1.1.1.1:1", 1.0),), ("connect",))
    with pytest.raises(ConfigError):
        BehaviorProfile("/bin/x", (("/a", -1.0),), ("read",), (("1.1.1.1:1", 1.0),), ("connect",))


def test_profile_json_round_trip():
    for p in default_profiles():
        assert BehaviorProfile.from_json(p.to_json()) == p


def test_round_trip_through_ingest_without_drops():
    log = generate(default_profiles(), days=1, seed=3)
    back = parse_events(io.StringIO(serialize_events(log)))
    s = back.stats
    assert back.events == log.events
    assert (s.dropped_unknown_op, s.dropped_unknown_kind, s.skipped_invalid, s.skipped_malformed,
            s.attr_conflicts, s.kind_conflicts) == (0, 0, 0, 0, 0, 0)


def test_corpus_size_and_spread():
    log = generate(default_profiles(), days=14, seed=0)
    n = len(log.subjects())
    assert 4500 <= n <= 5500
    assert log.first_ts >= START_TS and log.last_ts < START_TS + 14 * NS_PER_DAY


def test_nearest_pool_oracle_separates_profiles():
    profiles = default_profiles()
    log = generate(profiles, days=1, seed=0)
    pools = {p.executable: p.pool for p in profiles}
    hits = [nearest_pool(neighbor_attrs(log, pid), pools) == exe for pid, exe in log.subjects().items()]
    assert all(hits) and len(hits) > 100


def _base():
    return generate(default_profiles(), days=2, seed=0)


def test_novel_executable_bookkeeping():
    log = _base()
    script = novel_executable_script(START_TS + NS_PER_DAY + 30 * MIN)
    out, gt = inject_attack(log, script, seed=0, profiles=default_profiles())
    assert len(out) == len(log) + len(script.steps) == len(log) + 7
    assert gt.k == 1
    assert gt.all_nodes <= set(out.entity_table)
    assert {out.entity_table[n][0] for n in gt.all_nodes} == {"Subject"}
    novel = script.roles["dropper"]
    assert all(novel in (e.src_attr, e.dst_attr) for e in out.events
               if novel in (e.src_attr, e.dst_attr))
    before = {key(e) for e in log.events}
    outside = [e for e in out.events if key(e) not in before]
    assert sum(1 for e in out.events if novel in (e.src_attr, e.dst_attr)) == \
        sum(1 for e in outside if novel in (e.src_attr, e.dst_attr))
    clean_vocab = build_vocab(split_dataset(log, START_TS + NS_PER_DAY).train)
    assert novel not in clean_vocab


def test_injection_leaves_existing_events_alone():
    log = _base()
    out, _ = inject_attack(log, novel_executable_script(START_TS + NS_PER_DAY), seed=0)
    kept = {key(e): e for e in out.events}
    assert all(kept[key(e)] == e for e in log.events)
    for eid, entry in log.entity_table.items():
        assert out.entity_table[eid] == entry


def test_injection_window_out_of_range():
    log = _base()
    with pytest.raises(DataError, match="outside"):
        inject_attack(log, novel_executable_script(START_TS + 10 * NS_PER_DAY))
    with pytest.raises(DataError):
        inject_attack(log, novel_executable_script(START_TS - 1))


def test_lotl_requires_known_executables():
    p = default_profiles()
    script = lotl_script(START_TS + NS_PER_DAY, p[1], p[2])
    bad = AttackScript("LOTL", "x", script.start_ts, {**script.roles, "actor": "/opt/unknown"},
                       script.steps, targets=("actor",))
    with pytest.raises(ConfigError):
        inject_attack(_base(), bad, profiles=p)
    with pytest.raises(ConfigError):
        lotl_script(START_TS, p[0], p[0])


def test_novel_script_must_add_an_executable():
    p = default_profiles()
    s = novel_executable_script(START_TS + NS_PER_DAY, dropper="/usr/sbin/sshd")
    with pytest.raises(ConfigError, match="no new executable"):
        inject_attack(_base(), s, profiles=p)


def test_lotl_actor_context_looks_like_victim():
    p = default_profiles()
    actor, victim = p[1], p[2]
    log = _base()
    out, gt = inject_attack(log, lotl_script(START_TS + NS_PER_DAY + 30 * MIN, actor, victim), seed=0,
                            profiles=p)
    (node,) = gt.all_nodes
    assert out.entity_table[node] == ("Subject", actor.executable)
    pools = {q.executable: q.pool for q in p}
    assert nearest_pool(neighbor_attrs(out, node), pools) == victim.executable


def test_scenario_training_split_is_attack_free():
    clean = build_scenario(None, days=3, train_days=2, seed=1)
    attacked = build_scenario("NovelExecutable", days=3, train_days=2, seed=1)
    assert clean.split.train.events == attacked.split.train.events
    assert attacked.gt.all_nodes.isdisjoint(attacked.split.train.entity_table)


def test_script_json_round_trip():
    s = novel_executable_script(START_TS)
    assert AttackScript.from_json(s.to_json()) == s


def test_attack_in_training_becomes_benign():
    log = generate(default_profiles(), days=1, seed=6)
    script = novel_executable_script(START_TS + 6 * 60 * MIN)
    poisoned, gt = inject_attack(log, script, seed=6)
    model = fit(poisoned, TrainConfig(location_mode="disabled", epochs=2, seed=6))
    report = run_inference(model, poisoned)
    assert report.alarmed_nodes.isdisjoint(gt.all_nodes)
    assert report.time_alarms == 0
