import json
import random

import pytest

from bruteforce import make_view, widest_paths_oracle
from fsosim.errors import FeasibilityError, InfeasibleDemandError
from fsosim.flowclass import ELEPHANT, MICE
from fsosim.optics import wavelength_capacity
from fsosim.provisioning import (DemandMatrix, k_widest_paths, provision_all,
                                 provision_lightpath, required_capacity)
from fsosim.topology import build_spine_leaf, residual_view

BANDWIDTH = 2.5e9


def uniform_demands(racks, rate=1.0):
    matrix = DemandMatrix(
        rack_count=racks,
        mice_size_bits=8e5, mice_deadline_s=1e-3,
        elephant_size_bits=1.024e9, elephant_deadline_s=1.0,
    )
    for src in range(racks):
        for dst in range(racks):
            if src != dst:
                matrix.set_rate(src, dst, MICE, rate)
                matrix.set_rate(src, dst, ELEPHANT, rate)
    return matrix


# -- required_capacity --------------------------------------------------------


def test_required_capacity_examples():
    assert required_capacity(10.0, 1e6, 1.0) == 1e7
    assert required_capacity(0.0, 1e6, 1.0) == 0.0
    assert required_capacity(1000.0, 8e5, 1e-3) == 8e11


def test_required_capacity_rejects_zero_deadline():
    with pytest.raises(ValueError):
        required_capacity(1.0, 1e6, 0.0)


# -- k_widest_paths -----------------------------------------------------------


def test_single_path_mesh():
    view = make_view({(0, 2): 5.0, (2, 1): 5.0, (1, 2): 5.0, (2, 0): 5.0})
    paths = k_widest_paths(view, 0, 1, k=4)
    assert paths == [((0, 2, 1), 5.0)]


def test_two_spines_ordered_by_width():
    # spine 2 links carry width 5, spine 3 links width 3
    view = make_view({(0, 2): 5.0, (2, 1): 5.0, (0, 3): 3.0, (3, 1): 3.0})
    paths = k_widest_paths(view, 0, 1, k=2)
    assert paths == [((0, 2, 1), 5.0), ((0, 3, 1), 3.0)]


def test_no_path_gives_empty_list():
    view = make_view({(0, 2): 5.0})
    assert k_widest_paths(view, 0, 1, k=3) == []


def test_k_must_be_positive_and_endpoints_distinct():
    view = make_view({(0, 2): 5.0, (2, 1): 5.0})
    with pytest.raises(ValueError):
        k_widest_paths(view, 0, 1, k=0)
    with pytest.raises(ValueError):
        k_widest_paths(view, 0, 0, k=1)


def random_graph(rng):
    n = rng.randint(2, 8)
    edges = {}
    for u in range(n):
        for v in range(n):
            if u != v and rng.random() < 0.45:
                # small integer widths force plenty of ties
                edges[(u, v)] = float(rng.randint(1, 5))
    return n, edges


def test_matches_bruteforce_oracle_on_random_graphs():
    rng = random.Random(7)
    checked = 0
    for _ in range(200):
        n, edges = random_graph(rng)
        if not edges:
            continue
        src, dst = rng.sample(range(n), 2)
        view = make_view(edges)
        got = k_widest_paths(view, src, dst, k=4)
        expected = widest_paths_oracle(edges, src, dst, k=4)
        assert got == expected, f"graph={edges} src={src} dst={dst}"
        checked += 1
    assert checked > 150


# -- provision_lightpath ------------------------------------------------------


def test_forced_choice_single_wavelength():
    topo = build_spine_leaf(2, 0.5, 1, intensity_budget=100.0)
    view = residual_view(topo, MICE)
    rng = random.Random(0)
    lp = provision_lightpath(topo, view, 0, 1, MICE, demand_bps=1e9,
                             bandwidth_hz=BANDWIDTH, k=4, rng=rng, lightpath_id=0)
    assert lp.path == (0, 2, 1)
    assert lp.wavelength == 0
    assert lp.capacity_bps == pytest.approx(1e9, rel=1e-9)


def test_scoring_prefers_more_common_wavelengths():
    # two spines with equal residual intensity; spine 2 has both wavelengths free,
    # spine 3 only one -> score 2*width beats 1*width
    topo = build_spine_leaf(2, 1.0, 2, intensity_budget=100.0)
    topo.reserve((0, 3), 0, 1e-6, owner=99)
    view = residual_view(topo, MICE)
    rng = random.Random(1)
    lp = provision_lightpath(topo, view, 0, 1, MICE, demand_bps=1e8,
                             bandwidth_hz=BANDWIDTH, k=4, rng=rng, lightpath_id=0)
    assert lp.path == (0, 2, 1)


def test_infeasible_demand_leaves_topology_untouched():
    topo = build_spine_leaf(2, 0.5, 1, intensity_budget=1.0)
    before = topo.to_json()
    view = residual_view(topo, MICE)
    with pytest.raises(InfeasibleDemandError) as excinfo:
        provision_lightpath(topo, view, 0, 1, MICE, demand_bps=1e12,
                            bandwidth_hz=BANDWIDTH, k=4, rng=random.Random(0),
                            lightpath_id=0)
    assert excinfo.value.src == 0
    assert excinfo.value.dst == 1
    assert excinfo.value.flow_class == MICE
    assert topo.to_json() == before


def test_wavelength_drawn_from_common_free_set():
    topo = build_spine_leaf(2, 0.5, 4, intensity_budget=100.0)
    # occupy wavelength 0 on the uplink and wavelength 3 on the downlink:
    # the continuity-feasible set is {1, 2}
    topo.reserve((0, 2), 0, 1e-6, owner=50)
    topo.reserve((2, 1), 3, 1e-6, owner=51)
    seen = set()
    for seed in range(20):
        probe = build_spine_leaf(2, 0.5, 4, intensity_budget=100.0)
        probe.reserve((0, 2), 0, 1e-6, owner=50)
        probe.reserve((2, 1), 3, 1e-6, owner=51)
        lp = provision_lightpath(probe, residual_view(probe, MICE), 0, 1, MICE,
                                 demand_bps=1e8, bandwidth_hz=BANDWIDTH, k=4,
                                 rng=random.Random(seed), lightpath_id=0)
        seen.add(lp.wavelength)
    assert seen <= {1, 2}
    assert len(seen) == 2


# -- provision_all ------------------------------------------------------------


def test_full_mesh_at_wavelength_bound_provisions_all_pairs():
    # W=4 sits exactly on the two-lightpaths-per-pair wavelength bound; the
    # mandated uniform-random wavelength draw only completes for some seeds
    # there, so the seed is pinned (any W >= 5 succeeds for almost any seed).
    topo = build_spine_leaf(8, 0.5, 4, intensity_budget=400.0)
    result = provision_all(topo, uniform_demands(8), BANDWIDTH, k=4, seed=10)
    mice = [lp for lp in result.lightpaths.values() if lp.flow_class == MICE]
    elephants = [lp for lp in result.lightpaths.values() if lp.flow_class == ELEPHANT]
    assert len(mice) == 56
    assert len(elephants) == 56
    # collision + continuity + budget + capacity invariants
    owners = {}
    for lp in result.lightpaths.values():
        assert len(set(lp.path)) == len(lp.path)  # loop-less
        for hop in lp.hops():
            assert owners.setdefault((hop, lp.wavelength), lp.lightpath_id) == lp.lightpath_id
            assert topo.links[hop].slot_owner[lp.wavelength] == lp.lightpath_id
    for link in topo.links.values():
        assert sum(link.slot_intensity) <= link.intensity_budget + 1e-9
    for key, lp in result.lightpaths.items():
        assert lp.capacity_bps >= result.demanded_bps[key] * (1 - 1e-9)


def test_wavelength_bound_checked_before_any_work():
    topo = build_spine_leaf(8, 0.5, 3, intensity_budget=400.0)
    with pytest.raises(FeasibilityError, match="at least 4"):
        provision_all(topo, uniform_demands(8), BANDWIDTH, k=4, seed=0)
    assert all(link.residual_intensity == link.intensity_budget
               for link in topo.links.values())


def test_zero_demand_matrix_touches_nothing():
    topo = build_spine_leaf(4, 0.5, 4, intensity_budget=100.0)
    empty = DemandMatrix(rack_count=4, mice_size_bits=8e5, mice_deadline_s=1e-3,
                         elephant_size_bits=1e9, elephant_deadline_s=1.0)
    result = provision_all(topo, empty, BANDWIDTH, k=4, seed=0)
    assert result.lightpaths == {}
    assert all(link.residual_intensity == link.intensity_budget
               for link in topo.links.values())


def test_identical_seed_gives_identical_results():
    def build():
        topo = build_spine_leaf(8, 0.5, 4, intensity_budget=400.0)
        return provision_all(topo, uniform_demands(8), BANDWIDTH, k=4, seed=10)

    assert build().to_json() == build().to_json()


def test_elephant_pass_never_touches_mice_reservations():
    topo = build_spine_leaf(4, 0.5, 4, intensity_budget=400.0)
    result = provision_all(topo, uniform_demands(4), BANDWIDTH, k=4, seed=5)
    for (src, dst, flow_class), lp in result.lightpaths.items():
        if flow_class != MICE:
            continue
        for hop in lp.hops():
            assert topo.links[hop].slot_owner[lp.wavelength] == lp.lightpath_id


def test_mice_demand_met_after_elephant_pass():
    topo = build_spine_leaf(4, 0.5, 4, intensity_budget=400.0)
    result = provision_all(topo, uniform_demands(4), BANDWIDTH, k=4, seed=5)
    for key, lp in result.lightpaths.items():
        capacity = min(
            wavelength_capacity(topo.links[hop].gain, intensity, BANDWIDTH)
            for hop, intensity in zip(lp.hops(), lp.hop_intensities)
        )
        assert capacity >= result.demanded_bps[key] * (1 - 1e-9)


def test_result_json_is_loadable_and_ordered():
    topo = build_spine_leaf(2, 0.5, 2, intensity_budget=100.0)
    result = provision_all(topo, uniform_demands(2), BANDWIDTH, k=2, seed=0)
    doc = json.loads(result.to_json())
    ids = [entry["lightpath_id"] for entry in doc["lightpaths"]]
    assert ids == sorted(ids)
    assert doc["lightpaths"][0]["flow_class"] == MICE
