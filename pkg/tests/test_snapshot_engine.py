import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowmine.errors import CorruptState
from flowmine.packet_model import EventClass as E
from flowmine.snapshot_engine import (
    AttackEntry,
    AttackTable,
    EngineConfig,
    SnapshotEngine,
    TransitionBuffer,
    brute_force_recount,
    label_for,
)
from flowmine.synth import ACK, FIN, SYN, Kind, SynthProfile, generate

from conftest import pkt

A, B = "10.0.0.1:1000", "10.0.0.2:80"


def handshake(start=1, client=A, server=B):
    return [
        pkt(start, client, server, SYN),
        pkt(start + 1, server, client, SYN | ACK),
        pkt(start + 2, client, server, ACK),
        pkt(start + 3, client, server, ACK | FIN),
    ]


def test_warmup_emits_nothing():
    eng = SnapshotEngine(EngineConfig(window=2))
    assert eng.push_transition((E.START, E.SYN_C), pkt(1, A, B, SYN)) is None
    assert eng.stats.snapshots == 0


def test_first_full_window():
    eng = SnapshotEngine(EngineConfig(window=2))
    eng.push_transition((E.START, E.SYN_C), pkt(1, A, B, SYN))
    snap = eng.push_transition((E.SYN_C, E.ACK_SYN_S), pkt(2, B, A, SYN | ACK))
    expected = np.zeros((26, 26))
    expected[23, 0] = 0.5
    expected[0, 1] = 0.5
    assert np.array_equal(snap.matrix, expected)
    assert snap.matrix.sum() == 1.0
    assert snap.packet_index == 2


def test_slide_drops_oldest():
    eng = SnapshotEngine(EngineConfig(window=2))
    eng.push_transition((E.START, E.SYN_C), pkt(1, A, B, SYN))
    eng.push_transition((E.SYN_C, E.ACK_SYN_S), pkt(2, B, A, SYN | ACK))
    snap = eng.push_transition((E.ACK_SYN_S, E.ACK_C), pkt(3, A, B, ACK))
    expected = np.zeros((26, 26))
    expected[0, 1] = 0.5
    expected[1, 2] = 0.5
    assert np.array_equal(snap.matrix, expected)
    assert np.array_equal(eng.counts, brute_force_recount(eng.buffer))


def test_end_transition_rejected():
    eng = SnapshotEngine(EngineConfig(window=2))
    with pytest.raises(ValueError):
        eng.push_transition((E.ACK_C, E.END), pkt(1, A, B, ACK))


def test_corrupt_state_detected():
    eng = SnapshotEngine(EngineConfig(window=1))
    eng.push_transition((E.START, E.SYN_C), pkt(1, A, B, SYN))
    eng._counts[23 * 26] = 0  # simulate a bookkeeping bug
    with pytest.raises(CorruptState):
        eng.push_transition((E.SYN_C, E.ACK_SYN_S), pkt(2, B, A, SYN | ACK))


def test_one_flow_window_four():
    eng = SnapshotEngine(EngineConfig(window=4))
    snaps = list(eng.run(handshake()))
    assert len(snaps) == 1
    m = snaps[0].matrix
    cells = {(23, 0), (0, 1), (1, 2), (2, 5)}  # START>SYN|C>ACK.SYN|S>ACK|C>ACK.FIN|C
    assert {tuple(map(int, ij)) for ij in zip(*np.nonzero(m))} == cells
    assert all(m[i, j] == 0.25 for i, j in cells)


def test_ignored_packet_changes_nothing():
    eng = SnapshotEngine(EngineConfig(window=2))
    eng.process_packet(pkt(1, A, B, SYN))
    before = eng.counts.copy()
    assert eng.process_packet(pkt(2, "9.9.9.9:9", B, ACK)) is None
    assert np.array_equal(eng.counts, before)
    assert len(eng.buffer) == 1
    assert eng.stats.ignored == 1 and eng.stats.snapshots == 0


@pytest.mark.parametrize("n,l", [(4, 4), (5, 4), (8, 1), (12, 5), (400, 37)])
def test_snapshot_count_law(n, l):
    stream = itertools.islice(generate(SynthProfile(flow_count=10**6, stray_fraction=0.2), seed=n), 10**6)
    eng = SnapshotEngine(EngineConfig(window=l))
    count = 0
    for p in stream:
        if eng.process_packet(p) is not None:
            count += 1
        if eng.stats.accepted == n:
            break
    assert count == n - l + 1


def test_buffer_iterates_oldest_first():
    buf = TransitionBuffer(3)
    for cell in (1, 2, 3, 4):
        buf.push(cell)
    assert list(buf) == [(0, 2), (0, 3), (0, 4)]
    assert sorted(buf.cells().tolist()) == [2, 3, 4]


def test_recount_examples():
    assert not brute_force_recount(TransitionBuffer(3)).any()
    buf = TransitionBuffer(3)
    buf.push(5 * 26 + 7)
    m = brute_force_recount(buf)
    assert m[5, 7] == 1 and m.sum() == 1
    assert np.array_equal(brute_force_recount([(5, 7)]), m)


@given(st.integers(1, 40), st.integers(0, 2**32 - 1), st.sampled_from(list(Kind)))
@settings(max_examples=40, deadline=None)
def test_incremental_matches_recount(window, seed, kind):
    prof = SynthProfile(kind=kind, flow_count=200, background=0.5, stray_fraction=0.1)
    eng = SnapshotEngine(EngineConfig(window=window))
    prev = eng.counts.copy()
    for p in generate(prof, seed):
        snap = eng.process_packet(p)
        counts = eng.counts
        assert np.array_equal(counts, brute_force_recount(eng.buffer))
        changed = np.count_nonzero(counts != prev)
        if snap is None and eng.stats.accepted < window:
            assert changed <= 1
        else:
            assert changed <= 2  # 0 when the same cell leaves and enters
        if snap is not None:
            assert abs(snap.matrix.sum() - 1.0) < 1e-9
            assert not snap.matrix[24].any() and not snap.matrix[:, 24].any()
            assert not snap.matrix[:, 23].any()
            assert np.allclose(snap.matrix * window, np.round(snap.matrix * window), atol=1e-12 * window)
        prev = counts.copy()


def test_labels_follow_latest_packet():
    table = AttackTable([AttackEntry("6.6.6.6", "Botnet")])
    eng = SnapshotEngine(EngineConfig(window=1, attack_table=table))
    s1 = eng.process_packet(pkt(1, A, B, SYN))
    s2 = eng.process_packet(pkt(2, "6.6.6.6:5", B, SYN))
    s3 = eng.process_packet(pkt(3, B, "6.6.6.6:5", SYN | ACK))
    assert [s1.label, s2.label, s3.label] == ["Normal", "Botnet", "Botnet"]


def test_label_for():
    table = AttackTable([
        AttackEntry("6.6.6.6", "Botnet"),
        AttackEntry("7.7.7.7", "DoS-Hulk", 100.0, 200.0),
    ])
    assert label_for(pkt(1, "6.6.6.6:1", B, SYN), table) == "Botnet"
    assert label_for(pkt(1, A, B, SYN), table) == "Normal"
    assert label_for(pkt(1, A, "7.7.7.7:80", SYN, ts=50.0), table) == "Normal"
    assert label_for(pkt(1, A, "7.7.7.7:80", SYN, ts=150.0), table) == "DoS-Hulk"
    assert label_for(pkt(1, A, B, SYN), None) == "Normal"


def test_attack_table_csv(tmp_path):
    path = tmp_path / "attacks.csv"
    path.write_text("ip,attack_type,start_ts,end_ts\n6.6.6.6,Botnet\n7.7.7.7,DoS-Hulk,100,200\n")
    table = AttackTable.from_csv(path)
    assert [(e.ip, e.attack_type, e.start, e.end) for e in table.entries] == [
        ("6.6.6.6", "Botnet", None, None), ("7.7.7.7", "DoS-Hulk", 100.0, 200.0)]
    out = tmp_path / "again.csv"
    table.to_csv(out)
    assert AttackTable.from_csv(out).entries == table.entries


def test_eviction_through_engine():
    eng = SnapshotEngine(EngineConfig(window=1, evict_timeout=10.0))
    eng.process_packet(pkt(1, A, B, SYN, ts=0.0))
    eng.process_packet(pkt(2, "8.8.8.8:8", B, SYN, ts=50.0))
    assert eng.stats.flows_evicted == 1
    assert eng.process_packet(pkt(3, B, A, SYN | ACK, ts=51.0)) is None


def test_window_validation():
    with pytest.raises(ValueError):
        EngineConfig(window=0)
