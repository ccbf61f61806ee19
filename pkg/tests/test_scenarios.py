import math

import numpy as np
import pytest

from app.models.coupling import MotionKind
from app.models.scenario import (
    ControllerConfig,
    CouplingConfig,
    ProbeSpec,
    RxControllerConfig,
    RxMode,
    ScenarioConfig,
    Topology,
    TxControllerConfig,
    WptParams,
)
from app.models.solver import BackendKind, SolverConfig, SolverMethod
from app.models.waveforms import ProbeSource
from app.services.controller_service import ReceiverController, TransmitterController, WptController, tx_controller
from app.services.scenario_service import (
    BUILTIN_SCENARIOS,
    build_motion_scenario,
    build_wpt_system,
    load_scenario,
    prepare_scenario,
    scenario_hash,
)
from app.services.solver_service import run
from app.utils.app_error import ConfigError
from middleware.validators.scenario_validator import is_commensurate, validate_scenario


class TestTransmitterController:
    def test_zero_phase_at_start(self):
        assert tx_controller(0.0) == (True, False, True, False)

    def test_legs_are_complementary(self):
        tx = TransmitterController()
        for t in np.linspace(0.0, 2e-4, 97):
            s1, s2, s3, s4 = tx.gates(float(t))
            assert s1 != s2
            assert s3 != s4

    def test_phase_ramp(self):
        tx = TransmitterController(TxControllerConfig(ramp_duration=0.01, final_phase_shift=0.9 * math.pi))
        assert tx.phase_shift(0.0) == 0.0
        assert tx.phase_shift(0.005) == pytest.approx(0.45 * math.pi)
        assert tx.phase_shift(0.02) == pytest.approx(0.9 * math.pi)

    def test_bridge_output_width_follows_phase_shift(self):
        tx = TransmitterController()
        period = 1.0 / tx.config.carrier_frequency
        t = 0.02 + (np.arange(10000) + 0.5) * period / 10000
        differ = [tx.gates(float(x))[0] != tx.gates(float(x))[2] for x in t]
        assert np.mean(differ) == pytest.approx(0.9, abs=1e-3)

    def test_phase_shift_limited_to_pi(self):
        with pytest.raises(ValueError):
            TxControllerConfig(final_phase_shift=4.0)


class TestReceiverController:
    def test_off_before_start(self):
        rx = ReceiverController()
        assert rx.gates(0.005, {"I_out": 0.0}) == (False, False, False, False)

    def test_zero_open_loop_duty_keeps_switches_off(self):
        rx = ReceiverController(RxControllerConfig(mode=RxMode.OPEN_LOOP, duty=0.0))
        assert not any(rx.gates(0.02))

    def test_open_loop_interleaving(self):
        rx = ReceiverController(RxControllerConfig(mode=RxMode.OPEN_LOOP, duty=0.5))
        period = 1.0 / rx.config.carrier_frequency
        t = rx.config.start_time + (np.arange(4000) + 0.5) * period / 4000
        gates = np.array([rx.gates(float(x)) for x in t])
        np.testing.assert_allclose(gates.mean(axis=0), 0.5, atol=1e-3)
        # legs offset by half a period never conduct together at 50 % duty
        assert not np.any(gates[:, 0] & gates[:, 1])

    def test_pi_settles_on_averaged_plant(self):
        gain = 1000.0
        rx = ReceiverController(RxControllerConfig(mode=RxMode.CLOSED_LOOP))
        duty = 0.0
        settled = []
        for t in np.arange(0.0, 0.045, 1e-5):
            duty = rx.step(float(t), gain * duty)
            if t >= rx.config.start_time + 0.03:
                settled.append(gain * duty)
        assert rx.updates > 100
        assert settled
        assert np.max(np.abs(np.array(settled) - 200.0)) < 0.005 * 200.0

    def test_duty_is_clamped(self):
        rx = ReceiverController(RxControllerConfig(duty_max=0.6))
        for t in np.arange(0.01, 0.05, 1e-5):
            duty = rx.step(float(t), 0.0)
        assert duty == pytest.approx(0.6)

    def test_offsets_validated(self):
        with pytest.raises(ValueError):
            RxControllerConfig(phase_offsets=[0.0, 1.0])

    def test_missing_measurement_is_a_config_error(self):
        rx = ReceiverController()
        assert rx.gates(0.005, {}) == (False, False, False, False)
        with pytest.raises(ConfigError, match="I_out"):
            rx.gates(0.02, {"I_TX": 1.0})

    def test_open_loop_needs_no_measurement(self):
        rx = ReceiverController(RxControllerConfig(mode=RxMode.OPEN_LOOP, duty=0.5))
        assert len(rx.gates(0.02, {})) == 4

    def test_wpt_controller_gate_count(self):
        gates = WptController(ControllerConfig()).gates(0.0, {})
        assert len(gates) == 8
        assert gates[4:] == (False, False, False, False)


class TestWptSystem:
    def test_initial_state_precharges_storage(self):
        system = build_wpt_system()
        assert system.initial_state == {"v_C_sc": 960.0, "v_C_f1": 960.0, "v_C_f2": 960.0}
        assert [p.id for p in system.nl_ports] == ["coil_p", "coil_s1", "coil_s2"]

    def test_prepare_resolves_probes(self):
        system = prepare_scenario(build_motion_scenario("startup-static"))
        names = [p.name for p in system.probes]
        assert names[:4] == ["I_rx1", "U_tx", "U_C", "I_buck11"]
        by_name = {p.name: p for p in system.probes}
        assert by_name["I_rx1"].source == ProbeSource.COUPLING
        assert by_name["I_rx1"].index == 1
        assert by_name["U_C"].source == ProbeSource.STATE
        assert system.x0[system.bank.state_labels.index("v_C_sc")] == 960.0
        assert len(system.controller_factory().gates(0.0, {})) == system.bank.n_switches

    def test_controller_defaults_follow_wpt_params(self):
        params = WptParams(I_ref=150.0, f_sw_tx=50e3, f_sw_rx=4e3)
        config = ScenarioConfig(topology=Topology.WPT, wpt=params)
        rx = prepare_scenario(config).controller_factory().rx
        assert rx.config.current_reference == 150.0
        assert rx.config.carrier_frequency == 4e3
        assert rx.period == pytest.approx(1.0 / 4e3)
        built = build_motion_scenario("startup-static", params).controller
        assert built.tx.carrier_frequency == 50e3
        transit = build_motion_scenario("dynamic-transit", params).controller
        assert transit.rx.carrier_frequency == 4e3
        assert transit.rx.mode == RxMode.OPEN_LOOP

    def test_non_finite_initial_flux(self):
        config = ScenarioConfig(topology=Topology.WPT, coupling=CouplingConfig(psi0=[0.0, float("inf"), 0.0]))
        with pytest.raises(ConfigError, match="flux"):
            prepare_scenario(config)

    def test_closed_loop_measurement_must_be_a_probe(self):
        config = ScenarioConfig(
            topology=Topology.WPT, probes=[ProbeSpec(name="U_C", unit="V", binding="state:v_C_sc")]
        )
        with pytest.raises(ConfigError, match="I_out"):
            prepare_scenario(config)

    def test_winding_resistances_in_netlist(self):
        params = WptParams(R_s1=0.2, R_LB=0.03)
        values = {e.id: e.value for e in build_wpt_system(params).netlist.elements}
        assert values["R_s1"] == 0.2
        assert values["R_s2"] == pytest.approx(0.1)
        assert [values[f"R_LB{i}{leg}"] for i in "12" for leg in "12"] == [0.03] * 4
        assert values["R_Lf1"] == pytest.approx(20e-3)

    def test_transit_moves_out_of_coupling(self):
        config = build_motion_scenario("dynamic-transit")
        assert config.coupling.motion.kind == MotionKind.CONSTANT_VELOCITY
        assert config.controller.rx.mode == RxMode.OPEN_LOOP
        coupling = prepare_scenario(config).coupling
        start = coupling.inductances_at(coupling.position_at(0.0))
        end = coupling.inductances_at(coupling.position_at(config.t_end))
        assert end.M1 < 0.05 * start.M1
        assert coupling.position_at(0.01) == 0.0

    def test_startup_is_stationary(self):
        coupling = prepare_scenario(build_motion_scenario("startup-static")).coupling
        assert coupling.position_at(0.0) == coupling.position_at(0.05)
        assert coupling.inductances_at(0.0).M1 == pytest.approx(40e-6)


def short_startup(method: SolverMethod, t_end: float, backend: BackendKind = BackendKind.FLOAT64, **kwargs):
    solver = SolverConfig(method=method, h=75e-9, backend=backend)
    return run(prepare_scenario(build_motion_scenario("startup-static"), solver), solver, t_end, **kwargs)


class TestWptShortRuns:
    @pytest.mark.parametrize("backend, t_end", [(BackendKind.FLOAT64, 2e-5), (BackendKind.FIXED_POINT, 3e-6)])
    def test_bitwise_repeatable(self, backend, t_end):
        a = short_startup(SolverMethod.IMEX, t_end, backend)
        b = short_startup(SolverMethod.IMEX, t_end, backend)
        assert np.array_equal(a.t, b.t)
        for name in a.probes:
            assert np.array_equal(a.probes[name], b.probes[name]), name

    def test_oracle_energy_balance(self):
        w = short_startup(SolverMethod.TRAPEZOIDAL, 2e-4, energy_audit=True)
        meta = w.metadata
        assert not w.diverged
        assert meta["energy_in"] > 0.0
        assert meta["energy_dissipated"] > 0.0
        assert meta["energy_residual_fraction"] <= 1e-3


class TestScenarioLoading:
    def test_builtin_names(self):
        assert set(BUILTIN_SCENARIOS) == {"startup-static", "dynamic-transit"}
        assert load_scenario("dynamic-transit").name == "wpt_transit"

    @pytest.mark.parametrize("name", ["wpt_startup", "wpt_transit", "rc_charge"])
    def test_bundled_files_prepare(self, name):
        config = load_scenario(name)
        assert config.name == name
        system = prepare_scenario(config)
        assert system.probes

    def test_rc_charge_probes(self):
        system = prepare_scenario(load_scenario("rc_charge"))
        assert system.coupling is None
        assert [p.name for p in system.probes] == ["U_C", "I_R"]
        assert system.probes[1].source == ProbeSource.OUTPUT

    def test_unknown_scenario(self):
        with pytest.raises(ConfigError):
            load_scenario("no_such_scenario")

    def test_invalid_file(self, tmp_path):
        path = tmp_path / "broken.toml"
        path.write_text('topology = "custom"\n')
        with pytest.raises(ConfigError):
            load_scenario(str(path))

    def test_unresolved_probe(self):
        config = load_scenario("rc_charge")
        config = config.model_copy(update={"probes": [ProbeSpec(name="X", binding="state:v_missing")]})
        with pytest.raises(ConfigError):
            prepare_scenario(config)

    def test_fixed_gates_must_match_switches(self):
        config = load_scenario("rc_charge").model_copy(update={"fixed_gates": [True]})
        with pytest.raises(ConfigError):
            prepare_scenario(config)

    def test_unknown_initial_state(self):
        config = load_scenario("rc_charge").model_copy(update={"initial_state": {"v_C9": 1.0}})
        with pytest.raises(ConfigError):
            prepare_scenario(config)

    def test_custom_needs_netlist(self):
        with pytest.raises(ValueError):
            ScenarioConfig(topology=Topology.CUSTOM)

    def test_hash_depends_on_solver(self):
        config = load_scenario("rc_charge")
        a = prepare_scenario(config).scenario_hash
        b = prepare_scenario(config, SolverConfig(method=SolverMethod.LATENCY, h=1e-6)).scenario_hash
        assert a != b
        assert a == prepare_scenario(config).scenario_hash
        assert scenario_hash(config) == a


class TestScenarioValidation:
    def test_commensurate(self):
        assert is_commensurate(25e-6, 25e-9)
        assert not is_commensurate(25e-6, 75e-9)

    def test_warns_on_misaligned_carrier(self):
        warnings = validate_scenario(build_motion_scenario("startup-static"))
        assert any("transmitter carrier" in w for w in warnings)

    def test_aligned_step_is_quiet(self):
        config = build_motion_scenario("startup-static").model_copy(update={"solver": SolverConfig(h=25e-9)})
        assert validate_scenario(config) == []

    def test_carrier_check_without_controller_section_uses_wpt_params(self):
        config = ScenarioConfig(topology=Topology.WPT, wpt=WptParams(f_sw_tx=30e3), solver=SolverConfig(h=25e-9))
        warnings = validate_scenario(config)
        assert any(w.startswith("transmitter carrier") for w in warnings)
        assert not any(w.startswith("receiver") for w in warnings)

    def test_warns_when_shorter_than_a_step(self):
        config = load_scenario("rc_charge").model_copy(update={"t_end": 1e-7})
        assert any("shorter than one step" in w for w in validate_scenario(config))
