from collections import Counter

import networkx as nx
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_scenario, run
from pmipmih.analytics import DeliveryRecord
from pmipmih.engine import ScenarioError, US_PER_S
from pmipmih.traffic import (CbrFlowSpec, LossReport, TcpLiteState, cbr_generate, classify_losses,
                             decodable_frames, frame_references, tcp_lite_step, video_generate)

SIZES = {"I": 8192, "P": 3072, "B": 1024}


# --- CBR ---------------------------------------------------------------------

def test_cbr_counts():
    assert len(cbr_generate(CbrFlowSpec("f", "cn", "mh", interval_us=1000, start=0, stop=US_PER_S))) == 1001
    assert cbr_generate(CbrFlowSpec("f", "cn", "mh", start=500, stop=500)) == [500]
    with pytest.raises(ScenarioError):
        CbrFlowSpec("f", "cn", "mh", interval_us=0)


def test_cbr_sent_matches_generated_and_closes_over_handover():
    res = run(make_scenario(), "pmipv6")
    sc = res.scenario
    f = sc.flows[0].options
    expected = len(cbr_generate(CbrFlowSpec("cbr1", "cn", "mh", f["packet_size_bytes"],
                                            f["interval_us"], f["start"], sc.duration_us)))
    cons = res.conservation["cbr1"]
    assert cons.sent == expected
    assert cons.delivered + sum(cons.drops.values()) == expected
    assert sum(1 for r in res.traces["cbr1"] if r.lost) == cons.lost > 0


# --- TCP-lite ----------------------------------------------------------------

def _state(**kw):
    base = dict(cwnd=1.0, max_cwnd=20, rto_us=200_000)
    base.update(kw)
    return TcpLiteState(**base)


def test_slow_start_doubles_per_round_trip_until_cap():
    s = _state()
    outstanding = [a[1] for a in tcp_lite_step(s, "send_opportunity") if a[0] == "send"]
    windows = []
    for _ in range(7):
        windows.append(len(outstanding))
        nxt = []
        for seq in outstanding:
            nxt += [a[1] for a in tcp_lite_step(s, "ack", ack=seq + 1) if a[0] == "send"]
        outstanding = nxt
    assert windows == [1, 2, 4, 8, 16, 20, 20]


def test_timeout_collapses_once_and_holds_ssthresh_on_repeat():
    s = _state(cwnd=16.0, snd_una=5, snd_nxt=21)
    acts = tcp_lite_step(s, "timeout", now=1)
    assert (s.cwnd, s.ssthresh, s.collapses) == (1, 8.0, 1)
    assert acts[0] == ("send", 5) and ("arm_rto", 400_000) in acts
    tcp_lite_step(s, "timeout", now=2)
    assert (s.cwnd, s.ssthresh, s.collapses, s.current_rto) == (1, 8.0, 1, 800_000)


def test_congestion_avoidance_above_ssthresh():
    s = _state(cwnd=4.0, ssthresh=4.0, snd_nxt=4)
    tcp_lite_step(s, "ack", ack=1)
    assert s.cwnd == pytest.approx(4.25)


def test_stale_ack_is_ignored():
    s = _state(cwnd=3.0, snd_una=4, snd_nxt=7)
    assert tcp_lite_step(s, "ack", ack=3) == []
    with pytest.raises(ValueError):
        tcp_lite_step(s, "dupack")


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["ack", "timeout", "send_opportunity"]),
                          st.integers(0, 6)), max_size=80))
def test_never_sends_beyond_cumulative_ack_plus_window(events):
    s = _state()
    tcp_lite_step(s, "send_opportunity")
    for kind, jump in events:
        ack = s.snd_una + jump if kind == "ack" else None
        if ack is not None:
            ack = min(ack, s.snd_nxt)
        acts = tcp_lite_step(s, kind, ack=ack, now=0)
        for a in acts:
            if a[0] == "send":
                assert a[1] < s.snd_una + int(s.cwnd)
        assert 1 <= s.cwnd <= s.max_cwnd
        assert s.snd_una <= s.snd_nxt <= s.snd_una + int(s.cwnd)


def _tcp_run(rto_ms, extra=()):
    flows = [dict(id="tcp1", type="tcp", rto_ms=rto_ms, start_s=0.5), *extra]
    sc = make_scenario(flows=flows, run={"duration_s": 12.0})
    return run(sc, "pmipv6")


def test_gap_longer_than_rto_gives_exactly_one_collapse():
    res = _tcp_run(40.0)
    sender, _ = res.tcp["tcp1"]
    assert res.first_handover().signaling_latency > sender.spec.rto_us
    assert sender.state.collapses == 1
    assert res.flows_balanced and res.links_balanced


def test_tcp_stall_outlasts_udp_loss_window():
    res = _tcp_run(40.0, [dict(id="cbr1", type="cbr", start_s=0.5)])
    h = res.first_handover()
    udp_window = h.latency
    _, receiver = res.tcp["tcp1"]
    times = [t for t, _ in receiver.in_order_times]
    stall = max(b - a for a, b in zip(times, times[1:]) if a <= h.t_detach + 200_000)
    assert stall > udp_window


# --- video -------------------------------------------------------------------

def test_thirty_fps_for_ten_seconds():
    sched = video_generate("IBBPBBPBBPBB", SIZES, 30.0, 300)
    kinds = Counter(f.kind for f in sched.frames)
    assert len(sched.frames) == 300 and kinds == {"I": 25, "P": 75, "B": 200}
    per_kind = {f.kind: f.packets for f in sched.frames}
    assert per_kind == {"I": 8, "P": 3, "B": 1}
    assert len(sched.packets) == 25 * 8 + 75 * 3 + 200
    assert [s for _, _, s in sched.packets] == list(range(len(sched.packets)))


@pytest.mark.parametrize("gop", ["", "PBB", "IXB"])
def test_bad_gop_rejected(gop):
    with pytest.raises(ScenarioError):
        video_generate(gop, SIZES, 30.0, 10)


def test_lost_b_frame_does_not_propagate():
    sched = video_generate("IBBPBBPBBPBB", SIZES, 30.0, 24)
    complete = [True] * 24
    complete[4] = False
    ok = decodable_frames(sched, complete)
    assert [i for i, d in enumerate(ok) if not d] == [4]


def test_lost_i_frame_breaks_its_gop_only():
    sched = video_generate("IBBPBBPBBPBB", SIZES, 30.0, 24)
    complete = [True] * 24
    complete[12] = False
    ok = decodable_frames(sched, complete)
    assert [i for i, d in enumerate(ok) if not d] == list(range(12, 24))


def _dag_oracle(frames, complete, strict):
    g = nx.DiGraph()
    g.add_nodes_from(f.index for f in frames)
    for n, refs in frame_references(frames, strict).items():
        g.add_edges_from((r, n) for r in refs)
    return [complete[n] and all(complete[a] for a in nx.ancestors(g, n)) for n in g.nodes]


@settings(max_examples=100, deadline=None)
@given(data=st.data(), strict=st.booleans(), gop=st.sampled_from(["IBBPBBPBBPBB", "IPPP", "IBPB", "I"]))
def test_decodability_matches_dag_oracle(data, strict, gop):
    n = data.draw(st.integers(1, 40))
    sched = video_generate(gop, SIZES, 30.0, n, strict_b_refs=strict)
    complete = data.draw(st.lists(st.booleans(), min_size=n, max_size=n))
    assert decodable_frames(sched, complete) == _dag_oracle(sched.frames, complete, strict)


@settings(max_examples=100, deadline=None)
@given(data=st.data(), strict=st.booleans())
def test_more_delivered_never_less_decodable(data, strict):
    sched = video_generate("IBBPBBPBBPBB", SIZES, 30.0, 36, strict_b_refs=strict)
    fewer = data.draw(st.lists(st.booleans(), min_size=36, max_size=36))
    extra = data.draw(st.lists(st.booleans(), min_size=36, max_size=36))
    more = [a or b for a, b in zip(fewer, extra)]
    before, after = decodable_frames(sched, fewer), decodable_frames(sched, more)
    assert all(a or not b for b, a in zip(before, after))


def _trace(sched, lost_seqs):
    return [DeliveryRecord("v", seq, t, None if seq in lost_seqs else t + 1, "mag1", 1028, fi)
            for t, fi, seq in sched.packets]


@settings(max_examples=100, deadline=None)
@given(lost=st.sets(st.integers(0, 120), max_size=30))
def test_report_totals_add_up(lost):
    sched = video_generate("IBBPBBPBBPBB", SIZES, 30.0, 36)
    rep = classify_losses(_trace(sched, lost), sched)
    for c in (rep.packets_sent, rep.packets_lost, rep.frames_sent, rep.frames_lost):
        assert c["A"] == c["I"] + c["P"] + c["B"]
    for k in "AIPB":
        assert rep.packets_lost[k] <= rep.packets_sent[k]
        assert rep.frames_lost[k] <= rep.frames_sent[k]
    assert rep.packets_lost["A"] == len(lost & {s for _, _, s in sched.packets})


def test_no_packet_loss_means_no_frame_loss():
    sched = video_generate("IBBPBBPBBPBB", SIZES, 30.0, 36)
    rep = classify_losses(_trace(sched, set()), sched)
    assert all(rep.packets_lost[k] == 0 and rep.frames_lost[k] == 0 for k in "AIPB")


def test_report_layout():
    rep = LossReport(Counter(A=4651, I=1106, P=1459, B=2085), Counter(A=3, I=1, P=1, B=1),
                     Counter(A=10, I=1, P=3, B=6), Counter(A=0, I=0, P=0, B=0))
    assert rep.format() == (
        "Packet sent:p->nA:4651, p->nI:1106, p->nP:1459, p->nB:2085\n"
        " Packet lost:p->lA:3, p->lI:1, p->lP:1, p->lB:1\n"
        "\n"
        "Frame sent:f->nA:10, f->nI:1, f->nP:3, f->nB:6\n"
        " Frame lost:f->lA:0, f->lI:0, f->lP:0, f->lB:0\n")
