import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsosim.detection import (ACK, CENTRALIZED, CLOSED, DATA, FIN, IN_NETWORK,
                              IGNORED, NEWLY_ELEPHANT, PRESUMED_MICE, SEQ_MOD,
                              STILL_MICE, SYNACK, DetectorConfig, FlowDetector,
                              FlowKey, FlowTable, PacketEvent, classify_ack,
                              collector_ingest, detection_metrics, edge_filter,
                              preclassify, read_packet_csv, sampling_baseline_classify,
                              write_packet_csv)
from fsosim.errors import TraceFormatError
from fsosim.flowclass import ELEPHANT, MICE

MIB = 1 << 20

CLIENT = ("10.0.0.1", 33000)
SERVER = ("10.1.0.9", 5001)
DATA_KEY = FlowKey(CLIENT[0], CLIENT[1], SERVER[0], SERVER[1])


def synack(ts=0, isn=1000, server_isn=7777):
    return PacketEvent(ts_ns=ts, src=SERVER[0], sport=SERVER[1], dst=CLIENT[0],
                       dport=CLIENT[1], flags=SYNACK, seq=server_isn, ack=isn,
                       observer="es1")


def ack(number, ts=10):
    return PacketEvent(ts_ns=ts, src=SERVER[0], sport=SERVER[1], dst=CLIENT[0],
                       dport=CLIENT[1], flags=ACK, ack=number % SEQ_MOD, observer="es1")


def fin(ts=20):
    return PacketEvent(ts_ns=ts, src=CLIENT[0], sport=CLIENT[1], dst=SERVER[0],
                       dport=SERVER[1], flags=FIN, observer="es0")


def config(**kwargs):
    kwargs.setdefault("threshold_bytes", MIB)
    kwargs.setdefault("mode", IN_NETWORK)
    return DetectorConfig(**kwargs)


# -- collector ----------------------------------------------------------------


def test_synack_creates_presumed_mice_record():
    table = FlowTable()
    record = collector_ingest(table, synack(isn=1000))
    assert record.key == DATA_KEY
    assert record.isn == 1000
    assert record.state == PRESUMED_MICE


def test_synack_also_tracks_reverse_direction():
    table = FlowTable()
    collector_ingest(table, synack(server_isn=4242))
    reverse = table.get(DATA_KEY.reversed())
    assert reverse is not None
    assert reverse.isn == 4242


def test_duplicate_synack_is_idempotent():
    table = FlowTable()
    first = collector_ingest(table, synack(isn=1000))
    again = collector_ingest(table, synack(isn=9999, ts=5))
    assert again is first
    assert first.isn == 1000
    assert first.duplicates == 1


def test_fin_closes_and_evicts():
    table = FlowTable()
    collector_ingest(table, synack())
    assert table.live_count() == 2  # both directions tracked
    record = collector_ingest(table, fin())
    assert record.state == CLOSED
    assert table.get(DATA_KEY) is None
    assert table.live_count() == 1


def test_fin_for_unknown_flow_counts_orphan():
    table = FlowTable()
    assert collector_ingest(table, fin()) is None
    assert table.orphans == 1


# -- classifier ---------------------------------------------------------------


def test_ack_crossing_threshold_is_newly_elephant():
    table = FlowTable()
    collector_ingest(table, synack(isn=1000))
    outcome = classify_ack(table, ack(1000 + MIB + 1, ts=500), config())
    assert outcome == NEWLY_ELEPHANT
    record = table.get(DATA_KEY)
    assert record.bytes_acked == MIB + 1
    assert record.classified_ts_ns == 500


def test_ack_below_threshold_stays_mice():
    table = FlowTable()
    collector_ingest(table, synack(isn=1000))
    assert classify_ack(table, ack(501_000), config()) == STILL_MICE


def test_threshold_is_strict():
    table = FlowTable()
    collector_ingest(table, synack(isn=0))
    assert classify_ack(table, ack(MIB), config()) == STILL_MICE
    assert classify_ack(table, ack(MIB + 1), config()) == NEWLY_ELEPHANT


def test_wraparound_classification():
    table = FlowTable()
    collector_ingest(table, synack(isn=SEQ_MOD - 100))
    outcome = classify_ack(table, ack(400), config(threshold_bytes=256))
    assert outcome == NEWLY_ELEPHANT
    assert table.get(DATA_KEY).bytes_acked == 500


def test_out_of_order_ack_keeps_maximum():
    table = FlowTable()
    collector_ingest(table, synack(isn=0))
    classify_ack(table, ack(600), config())
    classify_ack(table, ack(400), config())
    assert table.get(DATA_KEY).bytes_acked == 600


def test_ack_for_unknown_flow_is_ignored_with_miss():
    table = FlowTable()
    assert classify_ack(table, ack(1234), config()) == IGNORED
    assert table.misses == 1


def test_already_classified_flow_is_ignored():
    table = FlowTable()
    collector_ingest(table, synack(isn=0))
    classify_ack(table, ack(MIB + 1), config())
    assert classify_ack(table, ack(2 * MIB), config()) == IGNORED


def test_centralized_classification_timestamp_adds_delay():
    table = FlowTable()
    collector_ingest(table, synack(isn=0))
    cfg = config(mode=CENTRALIZED, notification_delay_ns=250_000)
    classify_ack(table, ack(MIB + 1, ts=1_000), cfg)
    assert table.get(DATA_KEY).classified_ts_ns == 251_000


@settings(max_examples=100, deadline=None)
@given(shift=st.integers(min_value=0, max_value=SEQ_MOD - 1),
       isn=st.integers(min_value=0, max_value=SEQ_MOD - 1),
       increments=st.lists(st.integers(min_value=0, max_value=2 * MIB), min_size=1, max_size=8))
def test_classification_invariant_under_sequence_shift(shift, isn, increments):
    def classify(base):
        table = FlowTable()
        collector_ingest(table, synack(isn=base))
        outcomes = []
        for cum in increments:
            outcomes.append(classify_ack(table, ack(base + cum), config()))
        return outcomes

    assert classify(isn) == classify((isn + shift) % SEQ_MOD)


# -- pre-classification ---------------------------------------------------------


def test_preclassify_default_ports():
    cfg = config()
    assert preclassify(FlowKey("a", 1, "b", 20), cfg) == ELEPHANT
    assert preclassify(FlowKey("a", 1, "b", 123), cfg) == MICE
    assert preclassify(FlowKey("a", 1, "b", 514), cfg) == MICE
    assert preclassify(FlowKey("a", 1, "b", 50123), cfg) is None


def test_preclassify_respects_flag():
    cfg = config(preclassify_enabled=False)
    assert preclassify(FlowKey("a", 1, "b", 20), cfg) is None


def test_preclassified_flow_generates_no_further_outcomes():
    table = FlowTable()
    ftp = PacketEvent(ts_ns=0, src=SERVER[0], sport=20, dst=CLIENT[0],
                      dport=CLIENT[1], flags=SYNACK, seq=1, ack=100, observer="es1")
    record = collector_ingest(table, ftp, config())
    assert record.state == "pre-classified"
    assert record.result_class == ELEPHANT
    reply = PacketEvent(ts_ns=5, src=CLIENT[0], sport=CLIENT[1], dst=SERVER[0],
                        dport=20, flags=ACK, ack=100 + 2 * MIB, observer="es0")
    assert classify_ack(table, reply, config()) == IGNORED


# -- edge filter ----------------------------------------------------------------


def make_stream(ack_count, isn=0, step=1000):
    events = [synack(ts=0, isn=isn)]
    for i in range(ack_count):
        events.append(ack(isn + i + 1, ts=(i + 1) * step))
    return events


def test_filter_forwards_every_ack_at_rate_one_and_never_data():
    cfg = config(mode=CENTRALIZED, ack_sample_rate=1,
                 stop_useless_notifications=False, preclassify_enabled=False)
    data = PacketEvent(ts_ns=3, src=CLIENT[0], sport=CLIENT[1], dst=SERVER[0],
                       dport=SERVER[1], flags=DATA, seq=1, payload_len=100, observer="es0")
    stream = make_stream(5)
    stream.insert(2, data)
    table = FlowTable()
    forwarded = list(edge_filter(stream, table, cfg))
    assert len(forwarded) == 6  # SYNACK + 5 ACKs
    assert all(e.flags != DATA for e in forwarded)


def test_filter_counter_samples_exactly_one_in_s():
    cfg = config(mode=CENTRALIZED, ack_sample_rate=100,
                 stop_useless_notifications=False, preclassify_enabled=False,
                 threshold_bytes=10 * MIB)
    table = FlowTable()
    forwarded = list(edge_filter(make_stream(10_000), table, cfg))
    acks = [e for e in forwarded if e.flags == ACK]
    assert len(acks) == 100


def test_filter_suppresses_after_reconfiguration_instant():
    delay = 1_000
    cfg = config(mode=CENTRALIZED, ack_sample_rate=1, notification_delay_ns=delay,
                 stop_useless_notifications=True, preclassify_enabled=False,
                 threshold_bytes=1000)
    events = [synack(ts=0, isn=0)]
    # classification at first ACK; suppression applies after its CU timestamp + delay
    events.append(ack(5000, ts=10))          # classified at CU: 10 + delay
    events.append(ack(6000, ts=10 + delay))  # before reconfig instant -> forwarded
    events.append(ack(7000, ts=10 + 2 * delay + 1))  # after -> suppressed
    table = FlowTable()
    forwarded = list(edge_filter(events, table, cfg))
    acks = [e.ack for e in forwarded if e.flags == ACK]
    assert acks == [5000, 6000]


def test_filter_monotone_overhead_per_technique():
    # one elephant flow plus one FTP-data flow (pre-classifiable)
    events = make_stream(2000, isn=0)
    ftp_synack = PacketEvent(ts_ns=1, src=SERVER[0], sport=20, dst="10.0.0.2",
                             dport=40000, flags=SYNACK, seq=9, ack=50, observer="es1")
    events.insert(1, ftp_synack)
    for i in range(100):
        events.insert(10 + i, PacketEvent(
            ts_ns=500 + i, src=SERVER[0], sport=20, dst="10.0.0.2", dport=40000,
            flags=ACK, ack=50 + i, observer="es1"))

    def captured(**overrides):
        base = dict(mode=CENTRALIZED, ack_sample_rate=1,
                    stop_useless_notifications=False, preclassify_enabled=False,
                    threshold_bytes=1000)
        base.update(overrides)
        detector = FlowDetector(config(**base))
        detector.observe_all(events)
        return detector.packets_captured, detector.notifications_sent

    baseline = captured()
    sampled = captured(ack_sample_rate=100)
    suppressed = captured(ack_sample_rate=100, stop_useless_notifications=True)
    preclassified = captured(ack_sample_rate=100, stop_useless_notifications=True,
                             preclassify_enabled=True)
    assert sampled <= baseline
    assert suppressed <= sampled
    assert preclassified <= suppressed


# -- detector pipeline ----------------------------------------------------------


def test_in_network_not_slower_than_centralized():
    events = make_stream(2000)
    truth = {DATA_KEY: ELEPHANT}
    innet = FlowDetector(config(threshold_bytes=1000)).observe_all(events)
    central = FlowDetector(config(mode=CENTRALIZED, ack_sample_rate=1,
                                  threshold_bytes=1000,
                                  notification_delay_ns=200_000)).observe_all(events)
    m_in = detection_metrics(innet, truth)
    m_c = detection_metrics(central, truth)
    assert m_in.true_negatives == m_c.true_negatives == 0
    assert m_in.latencies_ns[DATA_KEY] < m_c.latencies_ns[DATA_KEY]


def test_piggyback_directions_are_independent():
    cfg = config(threshold_bytes=1000)
    table = FlowTable()
    collector_ingest(table, synack(isn=100, server_isn=5_000_000))
    # forward direction crosses the threshold
    classify_ack(table, ack(100 + 5000, ts=50), cfg)
    forward = table.get(DATA_KEY)
    reverse = table.get(DATA_KEY.reversed())
    assert forward.state == "classified-elephant"
    assert reverse.state == PRESUMED_MICE
    assert reverse.bytes_acked == 0
    # reverse direction classified by its own ACKs only
    reverse_ack = PacketEvent(ts_ns=60, src=CLIENT[0], sport=CLIENT[1],
                              dst=SERVER[0], dport=SERVER[1], flags=ACK,
                              ack=5_000_000 + 2000, observer="es0")
    assert classify_ack(table, reverse_ack, cfg) == NEWLY_ELEPHANT
    assert forward.bytes_acked == 5000


# -- sampling baseline ------------------------------------------------------------


def data_packet(ts, payload, seq=0, key=DATA_KEY):
    return PacketEvent(ts_ns=ts, src=key.src, sport=key.sport, dst=key.dst,
                       dport=key.dport, flags=DATA, seq=seq, payload_len=payload,
                       observer="es0")


def test_sampling_rate_one_reproduces_exact_sizes():
    events = [synack()]
    total = 0
    for i in range(50):
        events.append(data_packet(ts=i, payload=1460, seq=total))
        total += 1460
    sizes, classes, samples = sampling_baseline_classify(events, 1, MIB)
    assert sizes[DATA_KEY] == total
    assert classes[DATA_KEY] == MICE
    assert samples == len(events)


def test_sampling_undersamples_short_flows():
    events = [data_packet(ts=i, payload=1460) for i in range(3)]
    sizes, classes, _ = sampling_baseline_classify(events, 1000, MIB, seed=0)
    assert DATA_KEY not in classes or classes[DATA_KEY] == MICE


def test_sampling_misses_elephants_with_few_large_segments():
    # 64 aggregated segments of 1 MiB: at 1-in-1000 most seeds sample none
    events = []
    for flow in range(50):
        key = FlowKey(f"10.2.0.{flow}", 30000, SERVER[0], SERVER[1])
        for i in range(64):
            events.append(data_packet(ts=flow * 100 + i, payload=MIB, key=key))
    sizes, classes, _ = sampling_baseline_classify(events, 1000, MIB, seed=3)
    missed = 50 - sum(1 for cls in classes.values() if cls == ELEPHANT)
    assert missed > 0


# -- metrics and CSV ------------------------------------------------------------


def test_detection_metrics_zero_errors_when_all_classified():
    events = make_stream(2000)
    detector = FlowDetector(config(threshold_bytes=1000)).observe_all(events)
    metrics = detection_metrics(detector, {DATA_KEY: ELEPHANT})
    assert metrics.true_negatives == 0
    assert metrics.false_positives == 0
    assert metrics.true_negative_rate == 0.0


def test_detection_metrics_counts_missed_elephant():
    events = [synack(isn=0), ack(100, ts=5)]  # never crosses threshold
    detector = FlowDetector(config()).observe_all(events)
    metrics = detection_metrics(detector, {DATA_KEY: ELEPHANT})
    assert metrics.true_negatives == 1
    assert metrics.true_negative_rate == 1.0


def test_packet_csv_round_trip(tmp_path):
    events = make_stream(5)
    path = tmp_path / "trace.csv"
    write_packet_csv(path, events)
    back = read_packet_csv(path)
    assert len(back) == len(events)
    assert back[0].flags == SYNACK
    assert back[1].ack == events[1].ack


def test_packet_csv_rejects_bad_rows(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("ts_ns,src,sport,dst,dport,flags,seq,ack,len\n1,a,1,b,2,ACK,0\n")
    with pytest.raises(TraceFormatError, match="row 2"):
        read_packet_csv(path)


def test_packet_csv_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("nope\n")
    with pytest.raises(TraceFormatError):
        read_packet_csv(path)
