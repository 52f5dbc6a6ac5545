import pytest

from fsosim.detection import ACK, DATA, FIN, SYN, SYNACK
from fsosim.errors import ConfigurationError
from fsosim.flowclass import ELEPHANT, MICE
from fsosim.grooming import FlowDescriptor
from fsosim.traffic import (ScenarioConfig, assign_flow_keys, flows_to_packet_events,
                            generate_flows, shuffle_pattern, truth_map)

MIB = 1 << 20


def mix_config(**kwargs):
    kwargs.setdefault("kind", "mix")
    kwargs.setdefault("flow_count", 1000)
    kwargs.setdefault("mice_fraction", 0.9)
    kwargs.setdefault("seed", 7)
    return ScenarioConfig(**kwargs)


# -- scenario validation -------------------------------------------------------


def test_mix_respects_exact_class_counts():
    flows = generate_flows(mix_config())
    assert sum(1 for f in flows if f.flow_class == MICE) == 900
    assert sum(1 for f in flows if f.flow_class == ELEPHANT) == 100


def test_pure_mice_all_below_threshold():
    flows = generate_flows(mix_config(kind="pure-mf", flow_count=500))
    assert len(flows) == 500
    assert all(f.flow_class == MICE and f.size_bytes <= MIB for f in flows)


def test_same_seed_reproduces_flow_list():
    assert generate_flows(mix_config()) == generate_flows(mix_config())


def test_ground_truth_matches_threshold_rule():
    config = mix_config(mice_size_bytes=[10_000, 1_000_000],
                        elephant_size_bytes=[10_000_000, 128_000_000])
    for flow in generate_flows(config):
        assert flow.flow_class == (ELEPHANT if flow.size_bytes > MIB else MICE)


def test_endpoints_always_cross_racks():
    config = mix_config(flow_count=300)
    for flow in generate_flows(config):
        assert flow.src_server // config.hosts_per_rack != flow.dst_server // config.hosts_per_rack


def test_mice_sizes_crossing_threshold_rejected():
    with pytest.raises(ConfigurationError, match="threshold"):
        mix_config(mice_size_bytes=[10_000, 2 * MIB])


def test_elephant_sizes_below_threshold_rejected():
    with pytest.raises(ConfigurationError, match="threshold"):
        mix_config(elephant_size_bytes=500_000)


def test_unknown_kind_rejected():
    with pytest.raises(ConfigurationError):
        ScenarioConfig(kind="bursty")


def test_scenario_json_round_trip():
    config = mix_config(flow_count=42, elephant_fraction=0.2)
    clone = ScenarioConfig.from_json(config.to_json())
    assert clone == config


# -- shuffle pattern -------------------------------------------------------------


def shuffle_config(**kwargs):
    kwargs.setdefault("kind", "shuffle")
    kwargs.setdefault("shuffle_fanout", 20)
    kwargs.setdefault("elephant_fraction", 0.1)
    kwargs.setdefault("mice_size_bytes", 50_000)
    kwargs.setdefault("elephant_size_bytes", 128_000_000)
    kwargs.setdefault("seed", 3)
    return ScenarioConfig(**kwargs)


def test_shuffle_counts_per_rack_pair():
    config = shuffle_config()
    flows = shuffle_pattern(config)
    assert len(flows) == config.leaf_count * 20
    for rack in range(config.leaf_count):
        pair = [f for f in flows if f.src_server // 40 == rack]
        assert len(pair) == 20
        elephants = [f for f in pair if f.flow_class == ELEPHANT]
        assert len(elephants) == 2  # round(0.10 * 20)
        assert all(f.dst_server // 40 == (rack + 1) % config.leaf_count for f in pair)


def test_shuffle_sender_and_receiver_sets_disjoint():
    config = shuffle_config()
    for flow in shuffle_pattern(config):
        assert flow.src_server % 40 < 20
        assert 20 <= flow.dst_server % 40 < 40


def test_shuffle_group_size_five_gives_one_elephant_per_group():
    config = shuffle_config(elephant_fraction=0.2, shuffle_group_size=5)
    flows = shuffle_pattern(config)
    for rack in range(config.leaf_count):
        pair = [f for f in flows if f.src_server // 40 == rack]
        for start in range(0, 20, 5):
            group = pair[start:start + 5]
            assert sum(1 for f in group if f.flow_class == ELEPHANT) == 1


def test_shuffle_fanout_one():
    config = shuffle_config(shuffle_fanout=1, elephant_fraction=0.0)
    flows = shuffle_pattern(config)
    assert len(flows) == config.leaf_count
    assert all(f.flow_class == MICE for f in flows)


def test_shuffle_fanout_too_large_rejected():
    with pytest.raises(ConfigurationError, match="fanout"):
        shuffle_config(shuffle_fanout=21)


# -- packet stream ----------------------------------------------------------------


def stream_for(flow, mss=1460, ack_every=1):
    keys = assign_flow_keys([flow], hosts_per_rack=40, seed=0)
    events = flows_to_packet_events([flow], keys, hosts_per_rack=40,
                                    mss_bytes=mss, ack_every=ack_every)
    return events, keys[flow.flow_id]


def descriptor(size, fid=0):
    return FlowDescriptor(flow_id=fid, flow_class=MICE if size <= MIB else ELEPHANT,
                          src_server=0, dst_server=45, size_bytes=size, arrival_s=0.0)


def test_segment_and_ack_counts():
    events, _ = stream_for(descriptor(3000), mss=1460, ack_every=1)
    flags = [e.flags for e in events]
    assert flags.count(DATA) == 3
    assert flags.count(ACK) == 4  # handshake ACK + one per segment
    assert flags.count(SYN) == 1
    assert flags.count(SYNACK) == 1
    assert flags.count(FIN) == 1


def test_zero_payload_flow_is_handshake_and_fin_only():
    events, _ = stream_for(descriptor(0))
    flags = [e.flags for e in events]
    assert flags == [SYN, SYNACK, ACK, FIN]


def test_final_ack_acknowledges_exact_flow_size():
    size = 987_654
    events, key = stream_for(descriptor(size), mss=1460, ack_every=2)
    synack_evt = next(e for e in events if e.flags == SYNACK)
    isn = synack_evt.ack
    final_ack = [e for e in events if e.flags == ACK and e.key() == key.reversed()][-1]
    assert (final_ack.ack - isn) % (1 << 32) == size


def test_sequence_numbers_monotone_per_flow():
    events, key = stream_for(descriptor(100_000), mss=1460, ack_every=2)
    data_seqs = [e.seq for e in events if e.flags == DATA]
    assert data_seqs == sorted(data_seqs)
    acks = [e.ack for e in events if e.flags == ACK and e.key() == key.reversed()]
    assert acks == sorted(acks)


def test_timestamps_sorted_and_deterministic():
    flows = generate_flows(mix_config(flow_count=50))
    keys = assign_flow_keys(flows, 40, seed=1)
    events = flows_to_packet_events(flows, keys, 40, mss_bytes=65536, ack_every=2)
    assert all(events[i].ts_ns <= events[i + 1].ts_ns for i in range(len(events) - 1))
    again = flows_to_packet_events(flows, keys, 40, mss_bytes=65536, ack_every=2)
    assert events == again


def test_truth_map_covers_every_flow():
    flows = generate_flows(mix_config(flow_count=20))
    keys = assign_flow_keys(flows, 40, seed=2)
    truth = truth_map(flows, keys)
    assert len(truth) == 20
    assert set(truth.values()) <= {MICE, ELEPHANT}
