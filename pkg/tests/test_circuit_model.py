import numpy as np
import pytest
from pydantic import ValidationError

from app.models.netlist import Element, ElementKind, Netlist, NLPort, SourceWaveform, SwitchSignals, WaveformKind
from app.services.circuit_model_service import StateSpaceBank
from app.services.scenario_service import build_wpt_system
from app.utils.app_error import DimensionError, NetlistError
from middleware.validators.netlist_validator import validate_netlist
from tests.conftest import element

R_ON, R_OFF = 1e-3, 1e6


def parallel(*resistances):
    return 1.0 / sum(1.0 / r for r in resistances)


@pytest.fixture
def half_bridge():
    netlist = Netlist(elements=[
        element("V1", "voltage_source", "dc", "0", 10.0),
        element("S1", "switch", "dc", "mid"),
        element("S2", "switch", "mid", "0"),
        element("R_L", "resistor", "mid", "0", 10.0),
    ])
    return StateSpaceBank(netlist, r_on=R_ON, r_off=R_OFF, extra_outputs=["node:mid", "i:R_L"])


@pytest.fixture
def diode_circuit():
    netlist = Netlist(elements=[
        element("V1", "voltage_source", "a", "0", 0.0),
        element("D1", "diode", "a", "c"),
        element("R1", "resistor", "c", "0", 1.0),
    ])
    return StateSpaceBank(netlist, r_on=R_ON, r_off=R_OFF)


class TestStateSpace:
    def test_rc_matrices(self):
        netlist = Netlist(elements=[
            element("V1", "voltage_source", "in", "0", 1.0),
            element("R1", "resistor", "in", "out", 1.0),
            element("C1", "capacitor", "out", "0", 1.0),
        ])
        bank = StateSpaceBank(netlist, extra_outputs=["i:R1", "node:out"])
        entry = bank.build_state_space(0)

        assert bank.state_labels == ["v_C1"]
        np.testing.assert_allclose(entry.A, [[-1.0]], rtol=1e-12)
        np.testing.assert_allclose(entry.B1, [[1.0]], rtol=1e-12)
        assert entry.B2.shape == (1, 0)

        current = bank.output_index("i:R1")
        node = bank.output_index("node:out")
        np.testing.assert_allclose(entry.C[current], [-1.0], rtol=1e-12)
        np.testing.assert_allclose(entry.D1[current], [1.0], rtol=1e-12)
        np.testing.assert_allclose(entry.C[node], [1.0], rtol=1e-12)

    def test_rl_matrices(self):
        netlist = Netlist(elements=[
            element("V1", "voltage_source", "in", "0", 1.0),
            element("R1", "resistor", "in", "mid", 2.0),
            element("L1", "inductor", "mid", "0", 1.0),
        ])
        entry = StateSpaceBank(netlist).build_state_space(0)
        np.testing.assert_allclose(entry.A, [[-2.0]], rtol=1e-12)
        np.testing.assert_allclose(entry.B1, [[1.0]], rtol=1e-12)

    def test_half_bridge_matches_divider(self, half_bridge):
        mid = half_bridge.output_index("node:mid")
        u = np.array([10.0])
        empty = np.zeros(0)

        top_on = half_bridge.eval_output(0b01, empty, u, empty)[mid]
        bottom_on = half_bridge.eval_output(0b10, empty, u, empty)[mid]

        load = parallel(10.0, R_OFF)
        np.testing.assert_allclose(top_on, 10.0 * load / (R_ON + load), rtol=1e-10)
        load = parallel(10.0, R_ON)
        np.testing.assert_allclose(bottom_on, 10.0 * load / (R_OFF + load), rtol=1e-10)

    def test_load_current_follows_node_voltage(self, half_bridge):
        u = np.array([10.0])
        empty = np.zeros(0)
        y = half_bridge.eval_output(0b01, empty, u, empty)
        np.testing.assert_allclose(
            y[half_bridge.output_index("i:R_L")], y[half_bridge.output_index("node:mid")] / 10.0, rtol=1e-12
        )

    def test_zero_operating_point(self):
        bank = StateSpaceBank(build_wpt_system().netlist)
        x, u, y_nl = np.zeros(bank.n), np.zeros(bank.m_u), np.zeros(bank.m_nl)
        for k in (0, 0b1001, (1 << 28) - 1):
            assert np.all(bank.eval_derivative(k, x, u, y_nl) == 0.0)
            assert np.all(bank.eval_output(k, x, u, y_nl) == 0.0)

    def test_eval_matches_matrices(self, rng):
        bank = StateSpaceBank(build_wpt_system().netlist)
        k = 0b0110
        entry = bank.build_state_space(k)
        x, u, y_nl = rng.standard_normal(bank.n), rng.standard_normal(bank.m_u), rng.standard_normal(bank.m_nl)
        np.testing.assert_allclose(bank.eval_derivative(k, x, u, y_nl), entry.A @ x + entry.B1 @ u + entry.B2 @ y_nl)
        np.testing.assert_allclose(bank.eval_output(k, x, u, y_nl), entry.C @ x + entry.D1 @ u + entry.D2 @ y_nl)

    def test_wrong_dimension(self, half_bridge):
        with pytest.raises(DimensionError):
            half_bridge.eval_output(0, np.zeros(1), np.array([10.0]), np.zeros(0))

    def test_index_out_of_range(self, half_bridge):
        with pytest.raises(DimensionError):
            half_bridge.build_state_space(4)

    def test_cache_returns_same_entry(self, half_bridge):
        first = half_bridge.build_state_space(1)
        assert half_bridge.build_state_space(1) is first
        assert half_bridge.cached_states() == [1]
        with pytest.raises(ValueError):
            first.A[...] = 0.0

    def test_passive_network_is_stable(self):
        netlist = Netlist(elements=[
            element("V1", "voltage_source", "in", "0", 0.0),
            element("S1", "switch", "in", "a"),
            element("R1", "resistor", "a", "b", 1.0),
            element("L1", "inductor", "b", "c", 1e-3),
            element("C1", "capacitor", "c", "0", 1e-6),
        ])
        bank = StateSpaceBank(netlist)
        for k in (0, 1):
            assert np.max(np.linalg.eigvals(bank.build_state_space(k).A).real) < 0.0


class TestPowerRows:
    @pytest.mark.parametrize("k", [0, 1, 2, 3])
    def test_source_power_is_dissipated(self, half_bridge, k):
        rows = half_bridge.power_rows(k)
        e = np.array([10.0])
        assert rows.supplied(e) == pytest.approx(rows.dissipated(e), rel=1e-12)

    def test_top_switch_on(self, half_bridge):
        rows = half_bridge.power_rows(1)
        assert rows.supplied(np.array([10.0])) == pytest.approx(100.0 / (R_ON + parallel(10.0, R_OFF)), rel=1e-9)
        assert half_bridge.power_rows(1) is rows

    def test_capacitor_takes_the_difference(self, rc_netlist):
        bank = StateSpaceBank(rc_netlist)
        rows = bank.power_rows(0)
        e = np.array([0.25, 1.0])
        i_c = (1.0 - 0.25) / 1e3
        assert rows.supplied(e) - rows.dissipated(e) == pytest.approx(0.25 * i_c, rel=1e-12)


class TestWptNetlist:
    def test_dimensions(self):
        bank = StateSpaceBank(build_wpt_system().netlist)
        assert bank.n == 11
        assert len(bank.devices) == 28
        assert bank.n_switches == 8
        assert bank.m_nl == 3
        assert bank.nl_labels == ["coil_p", "coil_s1", "coil_s2"]
        assert bank.port_rows == [0, 1, 2]

    def test_devices_ordered_switches_first(self):
        devices = [d.id for d in build_wpt_system().netlist.devices]
        assert devices[:8] == ["S1", "S2", "S3", "S4", "S_B11", "S_B12", "S_B21", "S_B22"]


class TestSwitching:
    def test_forward_bias_turns_diode_on(self, diode_circuit):
        empty = np.zeros(0)
        y = diode_circuit.eval_output(0, empty, np.array([10.0]), empty)
        signals = diode_circuit.determine_switching_state((), y, (False,))
        assert signals.diode_states == (True,)

    def test_reverse_current_turns_diode_off(self, diode_circuit):
        empty = np.zeros(0)
        y = diode_circuit.eval_output(1, empty, np.array([-10.0]), empty)
        assert diode_circuit.determine_switching_state((), y, (True,)).diode_states == (False,)

    def test_reverse_bias_keeps_diode_off(self, diode_circuit):
        empty = np.zeros(0)
        y = diode_circuit.eval_output(0, empty, np.array([-10.0]), empty)
        assert diode_circuit.determine_switching_state((), y, (False,)).diode_states == (False,)

    def test_margins_absorb_rounding_noise(self, diode_circuit):
        empty = np.zeros(0)
        y_off = diode_circuit.eval_output(0, empty, np.array([1e-9]), empty)
        assert diode_circuit.determine_switching_state((), y_off, (False,)).diode_states == (False,)
        y_on = diode_circuit.eval_output(1, empty, np.array([-1e-9]), empty)
        assert diode_circuit.determine_switching_state((), y_on, (True,)).diode_states == (True,)

    def test_zero_margins_follow_the_sign(self):
        netlist = Netlist(elements=[
            element("V1", "voltage_source", "a", "0", 0.0),
            element("D1", "diode", "a", "c"),
            element("R1", "resistor", "c", "0", 1.0),
        ])
        bank = StateSpaceBank(netlist, r_on=R_ON, r_off=R_OFF, v_threshold=0.0, i_threshold=0.0)
        empty = np.zeros(0)
        y = bank.eval_output(0, empty, np.array([1e-9]), empty)
        assert bank.determine_switching_state((), y, (False,)).diode_states == (True,)

    def test_signal_length_mismatch(self, diode_circuit):
        with pytest.raises(DimensionError):
            diode_circuit.determine_switching_state((True,), np.zeros(2), (False,))

    def test_resolve_turns_on_within_the_step(self, diode_circuit):
        empty = np.zeros(0)
        u = np.array([10.0])
        stale = np.zeros(diode_circuit.p)
        signals = diode_circuit.resolve_switching_state((), stale, (False,), empty, u, empty)
        assert signals.diode_states == (True,)

    def test_switching_index_bits(self):
        signals = SwitchSignals((True, False), (False, True, True))
        assert signals.k == 0b11001
        assert SwitchSignals.from_index(signals.k, 2, 3) == signals


SUPPLY = SourceWaveform(kind=WaveformKind.SINE, amplitude=10.0, frequency=50.0)
BRIDGE_LOAD = 10.0
MARGIN = 1e-3


@pytest.fixture
def bridge():
    netlist = Netlist(elements=[
        Element(id="V1", kind=ElementKind.VOLTAGE_SOURCE, n1="a", n2="0", waveform=SUPPLY),
        element("D1", "diode", "a", "p"),
        element("D2", "diode", "0", "p"),
        element("D3", "diode", "n", "a"),
        element("D4", "diode", "n", "0"),
        element("R_L", "resistor", "p", "n", BRIDGE_LOAD),
    ])
    return StateSpaceBank(netlist, r_on=R_ON, r_off=R_OFF, v_threshold=MARGIN, i_threshold=MARGIN)


def bridge_branches(v_s, states):
    """Diode voltages and currents of the bridge by nodal analysis on p and n."""
    g1, g2, g3, g4 = (1.0 / (R_ON if on else R_OFF) for on in states)
    g_load = 1.0 / BRIDGE_LOAD
    K = np.array([[g1 + g2 + g_load, -g_load], [-g_load, g3 + g4 + g_load]])
    v_p, v_n = np.linalg.solve(K, [g1 * v_s, g3 * v_s])
    volts = (v_s - v_p, -v_p, v_n - v_s, v_n)
    return volts, tuple(g * v for g, v in zip((g1, g2, g3, g4), volts))


def event_driven_states(times):
    states, history = (False,) * 4, []
    for t in times:
        v_s = SUPPLY.value_at(t)
        for _ in range(4):
            volts, amps = bridge_branches(v_s, states)
            nxt = tuple(i >= -MARGIN if on else v > MARGIN for on, v, i in zip(states, volts, amps))
            if nxt == states:
                break
            states = nxt
        history.append(states)
    return history


def transitions(times, history):
    changes = [(times[0], history[0])]
    for t, states in zip(times, history):
        if states != changes[-1][1]:
            changes.append((t, states))
    return changes


class TestRectifier:
    H = 2e-5
    T_END = 0.021

    def test_diode_sequence_matches_event_driven_reference(self, bridge):
        empty = np.zeros(0)
        times = np.arange(0.0, self.T_END, self.H)
        states = (False,) * 4
        y = bridge.eval_output(0, empty, bridge.input_vector(0.0), empty)
        history = []
        for t in times:
            u = bridge.input_vector(t)
            signals = bridge.resolve_switching_state((), y, states, empty, u, empty)
            states = signals.diode_states
            history.append(states)
            y = bridge.eval_output(signals.k, empty, bridge.input_vector(t + self.H), empty)

        fine = np.arange(0.0, self.T_END, self.H / 100)
        simulated = transitions(times, history)
        reference = transitions(fine, event_driven_states(fine))

        positive, negative = (True, False, False, True), (False, True, True, False)
        assert [s for _, s in reference] == [(False,) * 4, positive, negative, positive]
        assert [s for _, s in simulated] == [s for _, s in reference]
        for (t_sim, _), (t_ref, _) in zip(simulated, reference):
            assert abs(t_sim - t_ref) <= 1.01 * self.H


class TestNetlistValidation:
    def test_voltage_loop(self):
        netlist = Netlist(elements=[
            element("V1", "voltage_source", "a", "0", 1.0),
            element("C1", "capacitor", "a", "0", 1e-6),
        ])
        with pytest.raises(NetlistError) as e:
            validate_netlist(netlist)
        assert "C1" in e.value.elements

    def test_current_cut_set(self):
        netlist = Netlist(elements=[
            element("V1", "voltage_source", "in", "0", 1.0),
            element("R1", "resistor", "in", "0", 1.0),
            element("I1", "current_source", "x", "0", 1.0),
        ])
        with pytest.raises(NetlistError) as e:
            validate_netlist(netlist)
        assert e.value.nodes == ["x"]
        assert e.value.elements == ["I1"]

    def test_floating_subgraph(self):
        netlist = Netlist(elements=[
            element("V1", "voltage_source", "in", "0", 1.0),
            element("R1", "resistor", "in", "0", 1.0),
            element("R2", "resistor", "x", "y", 1.0),
        ])
        with pytest.raises(NetlistError) as e:
            validate_netlist(netlist)
        assert set(e.value.nodes) == {"x", "y"}

    def test_inductor_port_cut_set(self):
        netlist = Netlist(
            elements=[element("L1", "inductor", "a", "0", 1e-3)],
            nl_ports=[NLPort(id="coil", n1="a", n2="0", coupling_index=0)],
        )
        with pytest.raises(NetlistError):
            StateSpaceBank(netlist)

    def test_self_loop_rejected(self):
        with pytest.raises(ValidationError):
            element("R1", "resistor", "a", "a", 1.0)

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValidationError):
            Netlist(elements=[
                element("R1", "resistor", "a", "0", 1.0),
                element("R1", "resistor", "a", "0", 2.0),
            ])

    def test_bad_switch_resistances(self, rc_netlist):
        with pytest.raises(NetlistError):
            StateSpaceBank(rc_netlist, r_on=1.0, r_off=0.5)

    def test_wpt_netlist_is_valid(self):
        assert validate_netlist(build_wpt_system().netlist)
