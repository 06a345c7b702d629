
from hypothesis import given, settings, strategies as st

from flowmine.flow_tracker import FlowKey, FlowStateTable, Outcome
from flowmine.packet_model import Direction, EventClass, event_class
from flowmine.synth import ACK, FIN, PSH, RST, SYN

from conftest import pkt

A, B = "10.0.0.1:1000", "10.0.0.2:80"
KEY = FlowKey(("10.0.0.1", 1000), ("10.0.0.2", 80))


def test_syn_opens_flow():
    t = FlowStateTable()
    out = t.observe(pkt(1, A, B, SYN))
    assert out.kind is Outcome.NEW_FLOW
    assert out.transition == (EventClass.START, EventClass.SYN_C)
    assert dict(t.items()) == {KEY: EventClass.SYN_C}


def test_synack_continues_from_server():
    t = FlowStateTable()
    t.observe(pkt(1, A, B, SYN))
    out = t.observe(pkt(2, B, A, SYN | ACK))
    assert out.kind is Outcome.CONTINUATION
    assert out.transition == (EventClass.SYN_C, EventClass.ACK_SYN_S)


def test_unknown_non_syn_is_ignored():
    t = FlowStateTable()
    out = t.observe(pkt(1, A, B, ACK))
    assert out.kind is Outcome.IGNORED and out.transition is None
    assert len(t) == 0
    # SYN+ACK never starts a flow either
    assert t.observe(pkt(2, A, B, SYN | ACK)).kind is Outcome.IGNORED


def test_fin_terminates():
    t = FlowStateTable()
    t.observe(pkt(1, A, B, SYN))
    t.observe(pkt(2, B, A, SYN | ACK))
    t.observe(pkt(3, B, A, ACK))
    out = t.observe(pkt(4, A, B, ACK | FIN))
    assert out.kind is Outcome.TERMINAL
    assert out.transition == (EventClass.ACK_S, EventClass.ACK_FIN_C)
    assert KEY not in t
    # nothing more until a fresh SYN
    assert t.observe(pkt(5, B, A, ACK | FIN)).kind is Outcome.IGNORED
    assert t.observe(pkt(6, A, B, SYN)).kind is Outcome.NEW_FLOW


def test_rst_terminates():
    t = FlowStateTable()
    t.observe(pkt(1, A, B, SYN))
    out = t.observe(pkt(2, B, A, RST))
    assert out.kind is Outcome.TERMINAL
    assert out.transition == (EventClass.SYN_C, EventClass.RST_S)
    assert len(t) == 0


def test_syn_retransmission_is_continuation():
    t = FlowStateTable()
    t.observe(pkt(1, A, B, SYN))
    out = t.observe(pkt(2, A, B, SYN))
    assert out.kind is Outcome.CONTINUATION
    assert out.transition == (EventClass.SYN_C, EventClass.SYN_C)
    assert t.opened == 1


def test_interleaved_traces():
    # t1 = <p1, p3, p5>, t2 = <p2, p6>, p4 belongs to neither
    t = FlowStateTable()
    c1, s1 = "1.1.1.1:1111", "9.9.9.9:80"
    c2, s2 = "2.2.2.2:2222", "9.9.9.9:80"
    stream = [
        pkt(1, c1, s1, SYN),
        pkt(2, c2, s2, SYN),
        pkt(3, s1, c1, SYN | ACK),
        pkt(4, "3.3.3.3:3", s1, ACK),
        pkt(5, c1, s1, ACK),
        pkt(6, s2, c2, SYN | ACK),
    ]
    pairs = []
    last = {}
    for p in stream:
        out = t.observe(p)
        if out.kind in (Outcome.CONTINUATION, Outcome.TERMINAL):
            pairs.append((last[out.key], p.index))
        if out.accepted:
            last[out.key] = p.index
    assert pairs == [(1, 3), (3, 5), (2, 6)]


def test_state_outlives_any_window():
    t = FlowStateTable()
    t.observe(pkt(1, A, B, SYN))
    for i in range(2, 2000):
        t.observe(pkt(i, f"5.5.5.5:{i}", B, ACK))  # ignored noise
    out = t.observe(pkt(2000, B, A, SYN | ACK))
    assert out.transition == (EventClass.SYN_C, EventClass.ACK_SYN_S)


def test_evict_idle():
    t = FlowStateTable()
    t.observe(pkt(1, A, B, SYN, ts=0.0))
    assert t.evict_idle(now=400.0, timeout=None) == 0
    assert len(t) == 1
    assert t.evict_idle(now=400.0, timeout=300.0) == 1
    assert len(t) == 0
    assert t.evict_idle(now=1000.0, timeout=300.0) == 0


def test_evict_keeps_recent():
    t = FlowStateTable()
    t.observe(pkt(1, A, B, SYN, ts=0.0))
    t.observe(pkt(2, "7.7.7.7:7", B, SYN, ts=200.0))
    t.observe(pkt(3, B, A, SYN | ACK, ts=250.0))  # refreshes A-B
    assert t.evict_idle(now=520.0, timeout=300.0) == 1
    assert KEY in t


_flow_packets = st.lists(
    st.tuples(st.integers(0, 3), st.booleans(),
              st.sampled_from([SYN, SYN | ACK, ACK, ACK | PSH, ACK | FIN, RST, ACK | RST, 0x20])),
    max_size=200)


@given(_flow_packets)
@settings(max_examples=200)
def test_table_tracks_last_nonterminal_class(events):
    """Compare against a per-flow model that replays the rules independently."""
    t = FlowStateTable()
    model = {}
    for i, (flow, from_client, flags) in enumerate(events, start=1):
        client, server = ("c", 1000 + flow), ("s", 80)
        src, dst = (client, server) if from_client else (server, client)
        t.observe(pkt(i, f"{src[0]}:{src[1]}", f"{dst[0]}:{dst[1]}", flags))
        key = FlowKey(client, server)
        rev = FlowKey(server, client)
        if key in model or rev in model:
            k = key if key in model else rev
            d = Direction.CLIENT if (src == k.initiator) else Direction.SERVER
            if flags & (FIN | RST):
                del model[k]
            else:
                model[k] = event_class(flags, d)
        elif flags & SYN and not flags & ACK:
            model[FlowKey(src, dst)] = event_class(flags, Direction.CLIENT)
    assert dict(t.items()) == model
    assert all(v not in (EventClass.START, EventClass.END) for v in model.values())
