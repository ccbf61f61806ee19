import logging
from typing import Iterable, List, Tuple

from app.models.netlist import ElementKind, Netlist, PortKind
from app.utils.app_error import NetlistError

logger = logging.getLogger(__name__)

GROUND_ALIASES = {"0", "gnd", "GND", "ground", "GROUND"}

V_TYPE_ELEMENTS = {ElementKind.VOLTAGE_SOURCE, ElementKind.CAPACITOR}
I_TYPE_ELEMENTS = {ElementKind.CURRENT_SOURCE, ElementKind.INDUCTOR}


class _DisjointSet:
    def __init__(self, items: Iterable[str]):
        self.parent = {item: item for item in items}

    def find(self, item: str) -> str:
        root = item
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[item] != root:
            self.parent[item], item = root, self.parent[item]
        return root

    def union(self, a: str, b: str) -> bool:
        """Join two sets. False when they were already joined."""
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[ra] = rb
        return True


def _branches(netlist: Netlist) -> List[Tuple[str, str, str, str]]:
    """(id, n1, n2, class) with class in {'v', 'i', 'r'}."""
    out = []
    for e in netlist.elements:
        if e.kind in V_TYPE_ELEMENTS:
            cls = "v"
        elif e.kind in I_TYPE_ELEMENTS:
            cls = "i"
        else:
            cls = "r"
        out.append((e.id, e.n1, e.n2, cls))
    for p in netlist.nl_ports:
        out.append((p.id, p.n1, p.n2, "v" if p.kind == PortKind.VOLTAGE else "i"))
    return out


def validate_netlist(netlist: Netlist) -> bool:
    """Check the solvability conditions of the binary-resistor MNA formulation.

    Raises NetlistError naming the offending nodes or elements.
    """
    nodes = netlist.nodes()
    branches = _branches(netlist)

    if not branches:
        raise NetlistError("Netlist has no elements")

    grounds = sorted(n for n in nodes if n in GROUND_ALIASES)
    if netlist.ground not in nodes:
        raise NetlistError(f"Ground node '{netlist.ground}' is not connected", nodes=[netlist.ground])
    if len(grounds) > 1:
        raise NetlistError("Netlist uses more than one ground node", nodes=grounds)

    # Connectivity
    everything = _DisjointSet(nodes)
    for _, n1, n2, _ in branches:
        everything.union(n1, n2)
    floating = [n for n in nodes if everything.find(n) != everything.find(netlist.ground)]
    if floating:
        raise NetlistError("Node graph is not connected to ground", nodes=floating)

    # Loops made only of voltage-type branches
    v_loops = _DisjointSet(nodes)
    for element_id, n1, n2, cls in branches:
        if cls == "v" and not v_loops.union(n1, n2):
            loop = [b[0] for b in branches if b[3] == "v" and v_loops.find(b[1]) == v_loops.find(n1)]
            raise NetlistError(
                f"Loop of voltage sources/capacitors/voltage ports closed by {element_id}",
                nodes=[n1, n2],
                elements=loop,
            )

    # Cut-sets made only of current-type branches
    non_current = _DisjointSet(nodes)
    for _, n1, n2, cls in branches:
        if cls != "i":
            non_current.union(n1, n2)
    ground_root = non_current.find(netlist.ground)
    isolated = [n for n in nodes if non_current.find(n) != ground_root]
    if isolated:
        cut = [b[0] for b in branches if b[3] == "i" and (b[1] in isolated) != (b[2] in isolated)]
        raise NetlistError(
            "Cut-set of current sources/inductors/current ports",
            nodes=isolated,
            elements=cut,
        )

    logger.debug(f"Netlist valid | nodes={len(nodes)} | branches={len(branches)}")
    return True

