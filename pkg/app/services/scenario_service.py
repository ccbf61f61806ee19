import hashlib
import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from functools import partial
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from app.models.coupling import CouplingState, InductanceTable, Inductances, MotionKind, MotionProfile
from app.models.netlist import Element, ElementKind, Netlist, NLPort
from app.models.scenario import (
    ControllerConfig,
    CouplingConfig,
    MotionScenarioKind,
    ProbeSpec,
    RxMode,
    ScenarioConfig,
    Topology,
    WptParams,
)
from app.models.solver import SolverConfig
from app.models.state_space import FrozenSystem
from app.models.waveforms import ProbeBinding, ProbeSource
from app.services.circuit_model_service import StateSpaceBank
from app.services.controller_service import WptController
from app.services.coupling_service import MagneticCoupling, inverse_inductance, load_table_csv, synth_table
from app.services.solver_service import FixedGates, SimulationSystem
from app.utils.app_error import ConfigError
from config import app_config
from middleware.validators.scenario_validator import validate_scenario

logger = logging.getLogger(__name__)

BUCK_LEGS = ("1", "2")
RECEIVERS = ("1", "2")


# ==================== WPT REFERENCE SYSTEM ====================

@dataclass
class WptSystem:
    netlist: Netlist
    table: InductanceTable
    probes: List[ProbeSpec]
    initial_state: Dict[str, float] = field(default_factory=dict)

    @property
    def nl_ports(self) -> List[NLPort]:
        return self.netlist.nl_ports


def _el(id: str, kind: ElementKind, n1: str, n2: str, value: float = 0.0) -> Element:
    return Element(id=id, kind=kind, n1=n1, n2=n2, value=value)


def _transmitter(params: WptParams) -> Tuple[List[Element], List[NLPort]]:
    """Phase-shifted full bridge, LCC-style input filter and the transmitter coil port."""
    S, D = ElementKind.SWITCH, ElementKind.DIODE
    elements = [
        _el("U_in", ElementKind.VOLTAGE_SOURCE, "dc", "0", params.U_in),
        _el("S1", S, "dc", "leg_a"),
        _el("S2", S, "leg_a", "0"),
        _el("S3", S, "dc", "leg_b"),
        _el("S4", S, "leg_b", "0"),
        # anti-parallel diodes, anode first
        _el("D_S1", D, "leg_a", "dc"),
        _el("D_S2", D, "0", "leg_a"),
        _el("D_S3", D, "leg_b", "dc"),
        _el("D_S4", D, "0", "leg_b"),
        _el("L_f1", ElementKind.INDUCTOR, "leg_a", "tx_f", params.L_f1),
        _el("R_Lf1", ElementKind.RESISTOR, "tx_f", "tx_p", params.R_Lf1),
        _el("C_p1", ElementKind.CAPACITOR, "tx_p", "leg_b", params.C_p1),
    ]
    ports = [NLPort(id="coil_p", n1="tx_p", n2="leg_b", coupling_index=0)]
    return elements, ports


def _receiver(i: str, params: WptParams) -> Tuple[List[Element], List[NLPort]]:
    """Series-compensated pickup with its coil resistance, diode bridge, filter capacitor and two parallel bucks onto the bus."""
    rx = f"rx{i}"
    c_s = params.C_s1 if i == "1" else params.C_s2
    c_f = params.C_f1 if i == "1" else params.C_f2
    r_s = params.R_s1 if i == "1" else params.R_s2
    S, D = ElementKind.SWITCH, ElementKind.DIODE
    elements = [
        _el(f"R_s{i}", ElementKind.RESISTOR, f"{rx}_c", f"{rx}_r", r_s),
        _el(f"C_s{i}", ElementKind.CAPACITOR, f"{rx}_r", f"{rx}_a", c_s),
        _el(f"D_{i}1", D, f"{rx}_a", f"{rx}_dc"),
        _el(f"D_{i}2", D, f"{rx}_n", f"{rx}_dc"),
        _el(f"D_{i}3", D, "0", f"{rx}_a"),
        _el(f"D_{i}4", D, "0", f"{rx}_n"),
        _el(f"C_f{i}", ElementKind.CAPACITOR, f"{rx}_dc", "0", c_f),
    ]
    for leg in BUCK_LEGS:
        mid = f"{rx}_m{leg}"
        elements += [
            _el(f"D_SB{i}{leg}", D, mid, f"{rx}_dc"),
            _el(f"D_B{i}{leg}", D, "0", mid),
            _el(f"L_B{i}{leg}", ElementKind.INDUCTOR, mid, f"{rx}_l{leg}", params.L_B),
            _el(f"R_LB{i}{leg}", ElementKind.RESISTOR, f"{rx}_l{leg}", "bus", params.R_LB),
        ]
    ports = [NLPort(id=f"coil_s{i}", n1=f"{rx}_c", n2=f"{rx}_n", coupling_index=int(i))]
    return elements, ports


def _buck_switches() -> List[Element]:
    return [
        _el(f"S_B{i}{leg}", ElementKind.SWITCH, f"rx{i}_dc", f"rx{i}_m{leg}")
        for i in RECEIVERS
        for leg in BUCK_LEGS
    ]


def wpt_probes() -> List[ProbeSpec]:
    return [
        ProbeSpec(name="I_rx1", unit="A", binding="coupling:coil_s1"),
        ProbeSpec(name="U_tx", unit="V", binding="state:v_C_p1"),
        ProbeSpec(name="U_C", unit="V", binding="state:v_C_sc"),
        ProbeSpec(name="I_buck11", unit="A", binding="state:i_L_B11"),
        ProbeSpec(name="I_out", unit="A", binding="output:i:R_sc"),
        ProbeSpec(name="I_Lf", unit="A", binding="state:i_L_f1"),
        ProbeSpec(name="I_TX", unit="A", binding="coupling:coil_p"),
        ProbeSpec(name="U_out", unit="V", binding="output:node:bus"),
        ProbeSpec(name="U_p", unit="V", binding="output:port:coil_p"),
        ProbeSpec(name="U_f1", unit="V", binding="state:v_C_f1"),
    ]


def build_wpt_system(params: Optional[WptParams] = None) -> WptSystem:
    params = params or WptParams()
    tx_elements, tx_ports = _transmitter(params)
    elements = tx_elements[:5] + _buck_switches() + tx_elements[5:]
    ports = list(tx_ports)
    for i in RECEIVERS:
        rx_elements, rx_ports = _receiver(i, params)
        elements += rx_elements
        ports += rx_ports
    elements += [
        _el("R_sc", ElementKind.RESISTOR, "bus", "sc", params.R_sc),
        _el("C_sc", ElementKind.CAPACITOR, "sc", "0", params.C_sc),
    ]
    netlist = Netlist(elements=elements, nl_ports=ports)
    initial_state = {"v_C_sc": params.U_sc0, "v_C_f1": params.U_f0, "v_C_f2": params.U_f0}
    logger.info(
        f"WPT system built | elements={len(elements)} | devices={len(netlist.devices)} | ports={len(ports)}"
    )
    return WptSystem(netlist=netlist, table=synth_table(params.coupling), probes=wpt_probes(), initial_state=initial_state)


# ==================== STIFF TEST CIRCUIT ====================

STIFF_R_PRIMARY = 0.05
STIFF_R_LOAD = 0.05
STIFF_C_LOAD = 0.5e-6


def stiff_test_netlist(params: Optional[WptParams] = None) -> Netlist:
    """One conduction state of the receiver paths.

    Each coil port drives C_s into an RC load; the primary coil sees C_p1 shunted by a small resistor.
    Both RC loads are far faster than the C_s resonance, which only closes through the coupled coils.
    """
    params = params or WptParams()
    elements = [
        _el("C_p", ElementKind.CAPACITOR, "p1", "0", params.C_p1),
        _el("R_p", ElementKind.RESISTOR, "p1", "0", STIFF_R_PRIMARY),
    ]
    ports = [NLPort(id="coil_p", n1="p1", n2="0", coupling_index=0)]
    for i in RECEIVERS:
        elements += [
            _el(f"C_s{i}", ElementKind.CAPACITOR, f"a{i}", f"b{i}", params.C_s1 if i == "1" else params.C_s2),
            _el(f"R_L{i}", ElementKind.RESISTOR, f"b{i}", "0", STIFF_R_LOAD),
            _el(f"C_L{i}", ElementKind.CAPACITOR, f"b{i}", "0", STIFF_C_LOAD),
        ]
        ports.append(NLPort(id=f"coil_s{i}", n1=f"a{i}", n2="0", coupling_index=int(i)))
    return Netlist(elements=elements, nl_ports=ports)


def nominal_inductances(params: Optional[WptParams] = None) -> Inductances:
    c = (params or WptParams()).coupling
    return Inductances(c.Lp, c.Ls1, c.Ls2, c.M1, c.M2)


def build_stiff_test_circuit(params: Optional[WptParams] = None) -> FrozenSystem:
    bank = StateSpaceBank(stiff_test_netlist(params))
    return bank.frozen_system(0, inverse_inductance(nominal_inductances(params)))


# ==================== MOTION SCENARIOS ====================

TRANSIT_START = 0.02
TRANSIT_DURATION = 0.04
TRANSIT_DUTY = 0.9


def _open_loop(controller: ControllerConfig, duty: float) -> ControllerConfig:
    rx = controller.rx.model_copy(update={"mode": RxMode.OPEN_LOOP, "duty": duty})
    return controller.model_copy(update={"rx": rx})


def build_motion_scenario(kind: Union[MotionScenarioKind, str], params: Optional[WptParams] = None) -> ScenarioConfig:
    kind = MotionScenarioKind(kind)
    params = params or WptParams()
    if kind == MotionScenarioKind.STARTUP_STATIC:
        return ScenarioConfig(
            name="wpt_startup",
            description="Startup with stationary receivers at the nominal-coupling position",
            topology=Topology.WPT,
            wpt=params,
            coupling=CouplingConfig(synthetic=params.coupling, motion=MotionProfile(position=0.0)),
            controller=params.default_controller(),
            probes=wpt_probes(),
            t_end=0.05,
        )
    span = params.coupling.coupled_span
    return ScenarioConfig(
        name="wpt_transit",
        description="Receivers move from one transmitter coil to the next under open-loop buck control",
        topology=Topology.WPT,
        wpt=params,
        coupling=CouplingConfig(
            synthetic=params.coupling,
            motion=MotionProfile(
                kind=MotionKind.CONSTANT_VELOCITY,
                position=0.0,
                velocity=span / TRANSIT_DURATION,
                start_time=TRANSIT_START,
            ),
        ),
        controller=_open_loop(params.default_controller(), TRANSIT_DUTY),
        probes=wpt_probes(),
        t_end=TRANSIT_START + TRANSIT_DURATION,
    )


BUILTIN_SCENARIOS = {
    "startup-static": partial(build_motion_scenario, MotionScenarioKind.STARTUP_STATIC),
    "dynamic-transit": partial(build_motion_scenario, MotionScenarioKind.DYNAMIC_TRANSIT),
}


# ==================== LOADING ====================

def _scenario_path(path_or_name: str) -> Optional[str]:
    if os.path.isfile(path_or_name):
        return path_or_name
    candidate = os.path.join(app_config.SCENARIO_DIR, f"{path_or_name}.toml")
    if os.path.isfile(candidate):
        return candidate
    return None


def load_scenario(path_or_name: str) -> ScenarioConfig:
    """A TOML scenario file, a file name under the scenario directory, or a built-in scenario name."""
    path = _scenario_path(path_or_name)
    if path is None:
        builder = BUILTIN_SCENARIOS.get(path_or_name)
        if builder is None:
            raise ConfigError(
                f"Scenario '{path_or_name}' not found",
                {"scenario_dir": app_config.SCENARIO_DIR, "builtin": sorted(BUILTIN_SCENARIOS)},
            )
        return builder()
    try:
        with open(path, "rb") as handle:
            data = tomllib.load(handle)
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"Could not read scenario {path}: {e}")
    data.setdefault("name", os.path.splitext(os.path.basename(path))[0])
    table_path = data.get("coupling", {}).get("table_path")
    if table_path and not os.path.isabs(table_path):
        data["coupling"]["table_path"] = os.path.join(os.path.dirname(os.path.abspath(path)), table_path)
    try:
        config = ScenarioConfig(**data)
    except ValidationError as e:
        raise ConfigError(f"Invalid scenario {path}", {"errors": e.errors(include_url=False)})
    logger.info(f"Loaded scenario {config.name} from {path}")
    return config


def scenario_hash(config: ScenarioConfig) -> str:
    digest = hashlib.sha256(config.model_dump_json().encode())
    table_path = config.coupling.table_path if config.coupling else None
    if table_path and os.path.isfile(table_path):
        with open(table_path, "rb") as handle:
            digest.update(handle.read())
    return digest.hexdigest()


# ==================== PREPARATION ====================

def _bind_probes(specs: List[ProbeSpec], bank: StateSpaceBank) -> List[ProbeBinding]:
    bindings = []
    for spec in specs:
        kind, _, target = spec.binding.partition(":")
        try:
            if kind == "state":
                source, index = ProbeSource.STATE, bank.state_labels.index(target)
            elif kind == "output":
                source, index = ProbeSource.OUTPUT, bank.output_index(target)
            else:
                source = ProbeSource.COUPLING if kind == "coupling" else ProbeSource.FLUX
                index = bank.nl_labels.index(target)
        except (ValueError, KeyError):
            raise ConfigError(
                f"Probe '{spec.name}' binding '{spec.binding}' does not resolve",
                {"states": bank.state_labels, "coupled": bank.nl_labels},
            )
        bindings.append(ProbeBinding(name=spec.name, unit=spec.unit, source=source, index=index, scale=spec.scale))
    return bindings


def _initial_vector(labels: List[str], values: Dict[str, float], what: str) -> np.ndarray:
    unknown = sorted(set(values) - set(labels))
    if unknown:
        raise ConfigError(f"Unknown {what} in initial_state: {', '.join(unknown)}", {"known": labels})
    return np.array([float(values.get(label, 0.0)) for label in labels])


def prepare_scenario(config: ScenarioConfig, solver: Optional[SolverConfig] = None) -> SimulationSystem:
    """Resolve a scenario into a runnable system: netlist, bank, coupling, controller and probe bindings."""
    solver = solver or config.solver
    effective = config.model_copy(update={"solver": solver})
    validate_scenario(effective)

    initial = dict(config.initial_state)
    coupling_config = config.coupling
    probes = list(config.probes)
    if config.topology == Topology.WPT:
        wpt = build_wpt_system(config.wpt)
        netlist = wpt.netlist
        initial = {**wpt.initial_state, **initial}
        probes = probes or wpt.probes
        if coupling_config is None:
            coupling_config = CouplingConfig(synthetic=config.wpt.coupling)
        elif "synthetic" not in coupling_config.model_fields_set:
            coupling_config = coupling_config.model_copy(update={"synthetic": config.wpt.coupling})
        controller = config.controller or config.wpt.default_controller()
        rx = controller.rx
        if rx.mode == RxMode.CLOSED_LOOP and rx.measurement not in {p.name for p in probes}:
            raise ConfigError(
                f"Receiver controller measures '{rx.measurement}', which is not among the probes",
                {"probes": [p.name for p in probes]},
            )
        controller_factory = partial(WptController, controller)
    else:
        netlist = config.netlist
        controller_factory = partial(FixedGates, config.fixed_gates)

    extra_outputs = [p.binding.split(":", 1)[1] for p in probes if p.binding.startswith("output:")]
    bank = StateSpaceBank(
        netlist,
        r_on=config.switch.r_on,
        r_off=config.switch.r_off,
        extra_outputs=extra_outputs,
    )
    if config.topology == Topology.CUSTOM and len(config.fixed_gates) != bank.n_switches:
        raise ConfigError(
            f"fixed_gates has {len(config.fixed_gates)} entries for {bank.n_switches} switches",
            {"switches": [s.id for s in netlist.switches]},
        )

    coupling = None
    psi_values: Dict[str, float] = {}
    if bank.m_nl:
        if coupling_config is None:
            raise ConfigError("Netlist has coupling ports but the scenario has no coupling section")
        if coupling_config.table_path:
            table = load_table_csv(coupling_config.table_path)
        else:
            table = synth_table(coupling_config.synthetic)
        if bank.m_nl != 3:
            raise ConfigError(f"The coupled-coil model has three ports, netlist has {bank.m_nl}")
        coupling = MagneticCoupling(table, coupling_config.motion)
        try:
            flux = CouplingState(psi=coupling_config.psi0)
        except ValidationError as e:
            raise ConfigError("Invalid initial flux linkages", {"errors": e.errors(include_url=False)})
        psi_values = dict(zip(bank.nl_labels, flux.psi))

    x0 = _initial_vector(bank.state_labels, initial, "state")
    psi0 = _initial_vector(bank.nl_labels, psi_values, "port") if bank.m_nl else np.zeros(0)

    return SimulationSystem(
        bank=bank,
        probes=_bind_probes(probes, bank),
        coupling=coupling,
        controller_factory=controller_factory,
        x0=x0,
        psi0=psi0,
        scenario_hash=scenario_hash(effective),
        name=config.name,
        energy_sinks=("C_sc",) if config.topology == Topology.WPT else (),
    )
