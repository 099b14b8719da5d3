"""Power-flow tests: Ohm's law cases, conservation, perturbation oracle."""

import numpy as np
import pytest

from vudlmp.netmodel import network_from_dict, network_to_dict
from vudlmp.powerflow import (
    PowerFlowDiverged,
    build_ybus,
    perturb_and_resolve,
    solve_pf,
)
from conftest import make_two_bus


class TestBasics:
    def test_no_load_network_is_flat(self, two_bus):
        point = solve_pf(two_bus, injections=np.zeros((2, 3), dtype=complex))
        assert np.allclose(np.abs(point.voltages), 1.0, atol=1e-12)
        assert point.losses == pytest.approx(0.0, abs=1e-12)

    def test_two_bus_satisfies_ohms_law(self, two_bus, two_bus_pf):
        v = two_bus_pf.voltages
        y = two_bus.lines[0].y
        i_line = y @ (v[0] - v[1])
        # specified consumption equals received complex power at the load bus
        s_load = v[1] * np.conj(i_line)
        assert np.allclose(s_load, two_bus.demand_pu()[1], atol=1e-10)

    def test_power_conservation(self, simple5, simple5_pf):
        # slack export equals demand plus series losses
        slack_inj = sum(
            np.sum(np.real(simple5_pf.s_from[k]))
            for k, ln in enumerate(simple5.lines)
            if ln.from_bus == simple5.substation_bus
        )
        demand = float(np.sum(np.real(simple5.demand_pu())))
        assert slack_inj == pytest.approx(demand + simple5_pf.losses, abs=1e-9)

    def test_losses_are_positive(self, simple5_pf):
        assert simple5_pf.losses > 0

    def test_ybus_row_sums_vanish(self, simple5):
        # series-only admittance: injecting at equal voltage moves no current
        y = build_ybus(simple5)
        flat = np.ones(y.shape[0], dtype=complex)
        assert np.max(np.abs(y @ flat)) < 1e-10

    def test_bus_reordering_is_irrelevant(self, two_bus):
        doc = network_to_dict(two_bus)
        doc["buses"] = doc["buses"][::-1]
        flipped = network_from_dict(doc)
        p0 = solve_pf(two_bus)
        p1 = solve_pf(flipped)
        assert p1.vuf("load") == pytest.approx(p0.vuf("load"), rel=1e-10)
        assert p1.losses == pytest.approx(p0.losses, rel=1e-10)

    def test_shape_validation(self, two_bus):
        with pytest.raises(ValueError):
            solve_pf(two_bus, injections=np.zeros((3, 3)))
        bad = np.zeros((2, 3), dtype=complex)
        bad[1, 0] = np.nan
        with pytest.raises(ValueError):
            solve_pf(two_bus, injections=bad)

    def test_overload_diverges(self):
        net = make_two_bus()
        huge = -50.0 * net.demand_pu()
        with pytest.raises(PowerFlowDiverged):
            solve_pf(net, injections=huge)


class TestOperatingPoint:
    def test_max_vuf_excludes_slack(self, simple5_pf):
        bus, worst = simple5_pf.max_vuf()
        assert bus != "sub"
        assert worst > 0

    def test_bundled_simple5_unbalance_level(self, simple5_pf):
        _, worst = simple5_pf.max_vuf()
        assert 1.0 < worst < 2.0     # load-only point sits above the 1 % limit

    def test_incident_current_matches_load(self, two_bus, two_bus_pf):
        # at a leaf bus the incident current sum carries the full demand
        for ph in range(3):
            isum = two_bus_pf.incident_current_sum("load", ph)
            v = two_bus_pf.voltages[1, ph]
            assert v * np.conj(-isum) == pytest.approx(
                complex(two_bus.demand_pu()[1, ph]), abs=1e-9)

    def test_unbalanced_voltages_spread(self, simple5_pf):
        mags = np.abs(simple5_pf.voltages)
        assert np.max(mags) <= 1.0 + 1e-9       # passive load-only network
        assert np.min(mags) < 1.0


class TestPerturbAndResolve:
    def test_added_load_deepens_voltage_drop(self, simple5, simple5_pf):
        inj = -simple5.demand_pu()
        point, _ = perturb_and_resolve(simple5, inj, "b4", 0, dp=0.05,
                                       base=simple5_pf)
        assert abs(point.voltages[simple5.bus_index("b4")][0]) < \
            abs(simple5_pf.voltages[simple5.bus_index("b4")][0])

    def test_zero_perturbation_is_identity(self, simple5, simple5_pf):
        point, df = perturb_and_resolve(simple5, None, "b3", 1, dp=0.0,
                                        base=simple5_pf)
        assert df == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(point.voltages, simple5_pf.voltages, atol=1e-9)

    def test_single_phase_load_raises_unbalance_metric(self, simple5, simple5_pf):
        # extra draw on the already most-loaded phase of b4 worsens its VUF
        _, df = perturb_and_resolve(simple5, None, "b4", 2, dp=0.02,
                                    base=simple5_pf)
        assert df > 0

    def test_reactive_perturbation_also_moves_metric(self, simple5, simple5_pf):
        _, df = perturb_and_resolve(simple5, None, "b4", 2, dq=0.02,
                                    base=simple5_pf)
        assert df != pytest.approx(0.0, abs=1e-10)


class TestDeterminism:
    def test_repeat_solves_are_bitwise_identical(self, simple5):
        a = solve_pf(simple5)
        b = solve_pf(simple5)
        assert np.array_equal(a.voltages, b.voltages)
        assert a.losses == b.losses
