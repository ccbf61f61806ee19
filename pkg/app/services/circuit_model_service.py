import logging
import os
import threading
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.config.solver_config import solver_settings
from app.models.netlist import Element, ElementKind, Netlist, PortKind, SwitchSignals
from app.models.state_space import FrozenSystem, PowerRows, StateSpaceEntry
from app.utils.app_error import DimensionError, NetlistError, SingularSystemError
from app.utils.csv_utils import write_csv_atomic
from middleware.validators.netlist_validator import validate_netlist

logger = logging.getLogger(__name__)

# Relative singular-value floor below which the MNA matrix counts as singular
SINGULAR_RTOL = 1e-14


class NodeMap:
    """Node name to matrix index. Ground maps to -1 and is excluded."""

    def __init__(self, nodes: Sequence[str], ground: str):
        self.ground = ground
        non_ground = [n for n in nodes if n != ground]
        self._name_to_idx = {name: i for i, name in enumerate(non_ground)}
        self.n = len(non_ground)

    def idx(self, name: str) -> int:
        if name == self.ground:
            return -1
        return self._name_to_idx[name]

    def names(self) -> List[str]:
        return list(self._name_to_idx)


class StateSpaceBank:
    """Per-switching-state matrices of the switched network.

    Capacitors become voltage sources of value v_C and inductors current sources of
    value i_L; the resistive network is solved once per switching state k and the
    state derivatives and labeled outputs are read off the solution.
    """

    def __init__(
        self,
        netlist: Netlist,
        r_on: float = solver_settings.SWITCH_R_ON,
        r_off: float = solver_settings.SWITCH_R_OFF,
        v_threshold: float = solver_settings.DIODE_V_THRESHOLD,
        i_threshold: float = solver_settings.DIODE_I_THRESHOLD,
        extra_outputs: Sequence[str] = (),
    ):
        if not r_on > 0 or not r_off > r_on:
            raise NetlistError(f"Switch resistances need 0 < r_on < r_off, got r_on={r_on}, r_off={r_off}")
        validate_netlist(netlist)

        self.netlist = netlist
        self.r_on = r_on
        self.r_off = r_off
        self.v_threshold = v_threshold
        self.i_threshold = i_threshold

        self.node_map = NodeMap(netlist.nodes(), netlist.ground)
        self.capacitors = [e for e in netlist.elements if e.kind == ElementKind.CAPACITOR]
        self.inductors = [e for e in netlist.elements if e.kind == ElementKind.INDUCTOR]
        self.v_sources = [e for e in netlist.elements if e.kind == ElementKind.VOLTAGE_SOURCE]
        self.i_sources = [e for e in netlist.elements if e.kind == ElementKind.CURRENT_SOURCE]
        self.voltage_ports = netlist.voltage_ports
        self.current_ports = netlist.current_ports
        self.devices = netlist.devices
        self._device_bit = {d.id: i for i, d in enumerate(self.devices)}
        self.n_switches = len(netlist.switches)
        self.n_diodes = len(netlist.diodes)

        self.state_labels = [f"v_{c.id}" for c in self.capacitors] + [f"i_{l.id}" for l in self.inductors]
        self.input_labels = [s.id for s in self.v_sources + self.i_sources] + [p.id for p in self.voltage_ports]
        self.nl_labels = [p.id for p in self.current_ports]

        self.n = len(self.state_labels)
        self.m_u = len(self.input_labels)
        self.m_nl = len(self.nl_labels)

        # Excitation vector e = [x; u; y_nl]
        self._e_index: Dict[str, int] = {}
        for i, c in enumerate(self.capacitors):
            self._e_index[c.id] = i
        for i, l in enumerate(self.inductors):
            self._e_index[l.id] = len(self.capacitors) + i
        for i, label in enumerate(self.input_labels):
            self._e_index[label] = self.n + i
        for i, label in enumerate(self.nl_labels):
            self._e_index[label] = self.n + self.m_u + i

        # Voltage-type branches carry an MNA current unknown
        self._v_branches = self.v_sources + self.capacitors + list(self.voltage_ports)
        self._v_index = {b.id: i for i, b in enumerate(self._v_branches)}

        self.output_labels: List[str] = [f"port:{p.id}" for p in self.current_ports]
        self.output_labels += [f"port:{p.id}" for p in self.voltage_ports]
        self._diode_v_rows: List[int] = []
        self._diode_i_rows: List[int] = []
        for d in netlist.diodes:
            self._diode_v_rows.append(len(self.output_labels))
            self.output_labels.append(f"v:{d.id}")
            self._diode_i_rows.append(len(self.output_labels))
            self.output_labels.append(f"i:{d.id}")
        for label in extra_outputs:
            if label not in self.output_labels:
                self._resolve_output(label)
                self.output_labels.append(label)
        self.p = len(self.output_labels)
        self.port_rows = list(range(self.m_nl))

        self._cache: Dict[int, StateSpaceEntry] = {}
        self._power_cache: Dict[int, PowerRows] = {}
        self._lock = threading.Lock()

        logger.info(
            f"State-space bank ready | states={self.n} | inputs={self.m_u} | "
            f"coupled={self.m_nl} | outputs={self.p} | devices={len(self.devices)}"
        )

    # ==================== LABEL RESOLUTION ====================

    def _resolve_output(self, label: str) -> Tuple[str, str]:
        kind, _, name = label.partition(":")
        if kind == "node":
            if name != self.netlist.ground and name not in self.node_map.names():
                raise NetlistError(f"Unknown node in output '{label}'", nodes=[name])
        elif kind in ("v", "i", "port"):
            known = {e.id for e in self.netlist.elements} | {p.id for p in self.netlist.nl_ports}
            if name not in known:
                raise NetlistError(f"Unknown element in output '{label}'", elements=[name])
        else:
            raise NetlistError(f"Output label '{label}' must start with node:, v:, i: or port:")
        return kind, name

    def output_index(self, label: str) -> int:
        try:
            return self.output_labels.index(label)
        except ValueError:
            raise KeyError(f"Output '{label}' not available; known: {', '.join(self.output_labels)}")

    # ==================== MNA CONSTRUCTION ====================

    def _device_resistance(self, element: Element, k: int) -> float:
        bit = self._device_bit[element.id]
        return self.r_on if (k >> bit) & 1 else self.r_off

    def _resistance(self, element: Element, k: int) -> Optional[float]:
        if element.kind == ElementKind.RESISTOR:
            return element.value
        if element.is_device:
            return self._device_resistance(element, k)
        return None

    def _unknown_names(self) -> List[str]:
        return [f"v({n})" for n in self.node_map.names()] + [f"i({b.id})" for b in self._v_branches]

    def _assemble(self, k: int) -> Tuple[np.ndarray, np.ndarray]:
        """G z = S e with z = [node voltages; voltage-branch currents]."""
        nm = self.node_map
        size = nm.n + len(self._v_branches)
        n_e = self.n + self.m_u + self.m_nl
        G = np.zeros((size, size))
        S = np.zeros((size, n_e))

        for e in self.netlist.elements:
            r = self._resistance(e, k)
            if r is None:
                continue
            g = 1.0 / r
            i, j = nm.idx(e.n1), nm.idx(e.n2)
            if i >= 0:
                G[i, i] += g
            if j >= 0:
                G[j, j] += g
            if i >= 0 and j >= 0:
                G[i, j] -= g
                G[j, i] -= g

        for branch in self._v_branches:
            row = nm.n + self._v_index[branch.id]
            i, j = nm.idx(branch.n1), nm.idx(branch.n2)
            if i >= 0:
                G[i, row] += 1.0
                G[row, i] += 1.0
            if j >= 0:
                G[j, row] -= 1.0
                G[row, j] -= 1.0
            S[row, self._e_index[branch.id]] = 1.0

        # current-type branches: value flows n1 -> n2 through the branch
        for branch in self.inductors + self.i_sources + self.current_ports:
            col = self._e_index[branch.id]
            i, j = nm.idx(branch.n1), nm.idx(branch.n2)
            if i >= 0:
                S[i, col] -= 1.0
            if j >= 0:
                S[j, col] += 1.0
        return G, S

    def _solve(self, k: int) -> np.ndarray:
        G, S = self._assemble(k)
        if G.size == 0:
            return np.zeros((0, S.shape[1]))
        _, sv, vt = np.linalg.svd(G)
        if sv[-1] <= sv[0] * SINGULAR_RTOL * G.shape[0]:
            null = np.abs(vt[-1])
            names = self._unknown_names()
            involved = [names[i] for i in np.flatnonzero(null > 0.1 * null.max())]
            raise SingularSystemError(
                f"MNA matrix singular for switching state k={k}",
                nodes=[n[2:-1] for n in involved if n.startswith("v(")],
                elements=[n[2:-1] for n in involved if n.startswith("i(")],
            )
        return np.linalg.solve(G, S)

    def _voltage_row(self, n1: str, n2: str, width: int) -> np.ndarray:
        row = np.zeros(width)
        i, j = self.node_map.idx(n1), self.node_map.idx(n2)
        if i >= 0:
            row[i] += 1.0
        if j >= 0:
            row[j] -= 1.0
        return row

    def _branch(self, name: str):
        for item in list(self.netlist.elements) + list(self.netlist.nl_ports):
            if item.id == name:
                return item
        raise KeyError(name)

    def _output_rows(self, label: str, k: int, T: np.ndarray) -> np.ndarray:
        """One output as a row over the excitation vector e."""
        size = T.shape[0]
        n_e = T.shape[1]
        kind, name = self._resolve_output(label)
        z_row = np.zeros(size)
        e_row = np.zeros(n_e)
        if kind == "node":
            i = self.node_map.idx(name)
            if i >= 0:
                z_row[i] = 1.0
            return z_row @ T + e_row

        branch = self._branch(name)
        is_current_port = getattr(branch, "kind", None) == PortKind.CURRENT
        if kind == "port":
            kind = "v" if is_current_port else "i"

        if kind == "v":
            z_row = self._voltage_row(branch.n1, branch.n2, size)
            return z_row @ T + e_row

        if branch.id in self._v_index:
            z_row[self.node_map.n + self._v_index[branch.id]] = 1.0
        elif branch.id in self._e_index:
            e_row[self._e_index[branch.id]] = 1.0
        else:
            r = self._resistance(branch, k)
            z_row = self._voltage_row(branch.n1, branch.n2, size) / r
        return z_row @ T + e_row

    def _build(self, k: int) -> StateSpaceEntry:
        T = self._solve(k)
        size, n_e = T.shape
        rows = []
        for c in self.capacitors:
            z_row = np.zeros(size)
            z_row[self.node_map.n + self._v_index[c.id]] = 1.0 / c.value
            rows.append(z_row @ T)
        for l in self.inductors:
            rows.append((self._voltage_row(l.n1, l.n2, size) / l.value) @ T)
        deriv = np.array(rows).reshape(self.n, n_e)
        out = np.array([self._output_rows(label, k, T) for label in self.output_labels]).reshape(self.p, n_e)

        a, b = self.n, self.n + self.m_u
        entry = StateSpaceEntry(
            k=k,
            A=np.ascontiguousarray(deriv[:, :a]),
            B1=np.ascontiguousarray(deriv[:, a:b]),
            B2=np.ascontiguousarray(deriv[:, b:]),
            C=np.ascontiguousarray(out[:, :a]),
            D1=np.ascontiguousarray(out[:, a:b]),
            D2=np.ascontiguousarray(out[:, b:]),
        )
        for name in ("A", "B1", "B2", "C", "D1", "D2"):
            if not np.all(np.isfinite(getattr(entry, name))):
                raise SingularSystemError(f"Non-finite {name} for switching state k={k}")
        return entry

    # ==================== PUBLIC API ====================

    def build_state_space(self, k: int) -> StateSpaceEntry:
        """Matrices for switching state k, built once and cached (first writer wins)."""
        entry = self._cache.get(k)
        if entry is not None:
            return entry
        limit = 1 << len(self.devices)
        if not 0 <= k < limit:
            raise DimensionError("Switching-state index out of range", f"< {limit}", k)
        built = self._build(k)
        with self._lock:
            entry = self._cache.setdefault(k, built)
        logger.debug(f"Built switching state k={k} | cached={len(self._cache)}")
        return entry

    def power_rows(self, k: int) -> PowerRows:
        rows = self._power_cache.get(k)
        if rows is not None:
            return rows
        self.build_state_space(k)
        T = self._solve(k)
        lossy = [e for e in self.netlist.elements if self._resistance(e, k) is not None]
        sources = self.v_sources + self.i_sources + list(self.voltage_ports)
        width = T.shape[1]

        def stack(labels):
            return np.array([self._output_rows(label, k, T) for label in labels]).reshape(len(labels), width)

        built = PowerRows(
            k=k,
            resistive=stack([f"v:{e.id}" for e in lossy]),
            conductance=np.array([1.0 / self._resistance(e, k) for e in lossy]),
            source_v=stack([f"v:{s.id}" for s in sources]),
            source_i=stack([f"i:{s.id}" for s in sources]),
        )
        with self._lock:
            rows = self._power_cache.setdefault(k, built)
        return rows

    def cached_states(self) -> List[int]:
        return sorted(self._cache)

    def _check_vectors(self, x_l, u, y_nl):
        for name, vec, size in (("x_l", x_l, self.n), ("u", u, self.m_u), ("y_nl", y_nl, self.m_nl)):
            if np.shape(vec) != (size,):
                raise DimensionError(f"{name} has the wrong dimension", (size,), np.shape(vec))

    def eval_output(self, k: int, x_l, u, y_nl) -> np.ndarray:
        self._check_vectors(x_l, u, y_nl)
        e = self.build_state_space(k)
        return e.C @ x_l + e.D1 @ u + e.D2 @ y_nl

    def eval_derivative(self, k: int, x_l, u, y_nl) -> np.ndarray:
        self._check_vectors(x_l, u, y_nl)
        e = self.build_state_space(k)
        return e.A @ x_l + e.B1 @ u + e.B2 @ y_nl

    def input_vector(self, t: float) -> np.ndarray:
        values = [s.source_value(t) for s in self.v_sources + self.i_sources]
        values += [p.value for p in self.voltage_ports]
        return np.array(values, dtype=float)

    # ==================== SWITCHING LOGIC ====================

    def determine_switching_state(
        self, gates: Sequence[bool], prev_y: np.ndarray, prev_diode_states: Sequence[bool]
    ) -> SwitchSignals:
        """Switches follow their gates; diodes follow the sign of their previous-step voltage/current."""
        if len(gates) != self.n_switches or len(prev_diode_states) != self.n_diodes:
            raise DimensionError(
                "Switch signal lengths do not match the netlist",
                (self.n_switches, self.n_diodes),
                (len(gates), len(prev_diode_states)),
            )
        states = []
        for on, v_row, i_row in zip(prev_diode_states, self._diode_v_rows, self._diode_i_rows):
            if on:
                states.append(not prev_y[i_row] < -self.i_threshold)
            else:
                states.append(bool(prev_y[v_row] > self.v_threshold))
        return SwitchSignals(tuple(bool(g) for g in gates), tuple(states))

    def resolve_switching_state(
        self,
        gates: Sequence[bool],
        prev_y: np.ndarray,
        prev_diode_states: Sequence[bool],
        x_l: np.ndarray,
        u: np.ndarray,
        y_nl: np.ndarray,
    ) -> SwitchSignals:
        """determine_switching_state, then re-check diodes against outputs under the tentative state.

        A diode that changed is locked for the rest of the step, so each diode still
        changes at most once per step.
        """
        signals = self.determine_switching_state(gates, prev_y, prev_diode_states)
        locked = {i for i, (a, b) in enumerate(zip(signals.diode_states, prev_diode_states)) if a != b}
        for _ in range(self.n_diodes):
            y = self.eval_output(signals.k, x_l, u, y_nl)
            candidate = self.determine_switching_state(gates, y, signals.diode_states).diode_states
            flips = [i for i in range(self.n_diodes) if i not in locked and candidate[i] != signals.diode_states[i]]
            if not flips:
                break
            states = list(signals.diode_states)
            for i in flips:
                states[i] = candidate[i]
                locked.add(i)
            signals = SwitchSignals(signals.gates, tuple(states))
        return signals

    # ==================== VIEWS / EXPORT ====================

    def frozen_system(self, k: int, Minv: np.ndarray) -> FrozenSystem:
        e = self.build_state_space(k)
        rows = self.port_rows
        return FrozenSystem(
            A=e.A.copy(),
            B2=e.B2.copy(),
            C=e.C[rows, :].copy(),
            D2=e.D2[rows, :].copy(),
            Minv=np.array(Minv, dtype=float),
            state_labels=tuple(self.state_labels),
        )

    def export_csv(self, k: int, directory: str) -> str:
        """Block matrix [[A B1 B2]; [C D1 D2]] for state k, row-major with labels."""
        e = self.build_state_space(k)
        block = np.vstack([np.hstack([e.A, e.B1, e.B2]), np.hstack([e.C, e.D1, e.D2])])
        frame = pd.DataFrame(
            block,
            index=[f"d/dt {s}" for s in self.state_labels] + self.output_labels,
            columns=self.state_labels + self.input_labels + self.nl_labels,
        )
        frame.index.name = "row"
        path = os.path.join(directory, f"state_space_k{k}.csv")
        write_csv_atomic(frame.reset_index(), path, header={"k": k, "r_on": self.r_on, "r_off": self.r_off})
        return path
