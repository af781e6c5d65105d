"""Tensegrity structure description and the default six-strut template.

The default robot is a twisted hexagonal tensegrity prism: six struts
join a bottom and a top hexagon of nodes, with 18 springs (two hexagonal
rings and six diagonals). At a 120 degree twist the template carries a
self-stress with every strut in compression and every spring in tension,
and is prestress-stable. Motors sit on alternate struts (0, 2, 4), which
keeps exact threefold symmetry about the vertical axis.

Units: mm, g, s. Spring stiffness in N/mm, damping in N*s/mm.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np


class StructureError(ValueError):
    """The structure violates a construction requirement."""


@dataclass(frozen=True)
class Strut:
    i: int
    j: int
    length: float
    mass: float


@dataclass(frozen=True)
class Spring:
    i: int
    j: int
    stiffness: float
    rest_length: float
    damping: float


@dataclass(frozen=True)
class StructureSpec:
    nodes: tuple[tuple[float, float, float], ...]
    struts: tuple[Strut, ...]
    springs: tuple[Spring, ...]
    motor_struts: tuple[int, int, int]
    eccentric_mass: tuple[float, float, float]
    moment_arm: tuple[float, float, float]
    motor_mass: float = 15.0
    motor_position: float = 0.2
    unilateral: bool = False

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(tuple(map(float, n)) for n in self.nodes))
        object.__setattr__(self, "struts", tuple(self.struts))
        object.__setattr__(self, "springs", tuple(self.springs))
        object.__setattr__(self, "motor_struts", tuple(int(m) for m in self.motor_struts))
        object.__setattr__(self, "eccentric_mass", _triple(self.eccentric_mass))
        object.__setattr__(self, "moment_arm", _triple(self.moment_arm))

    @property
    def node_array(self) -> np.ndarray:
        return np.array(self.nodes, dtype=float)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def node_masses(self) -> np.ndarray:
        m = np.zeros(self.n_nodes)
        for s in self.struts:
            m[s.i] += s.mass / 2.0
            m[s.j] += s.mass / 2.0
        for k in self.motor_struts:
            s = self.struts[k]
            m[s.i] += self.motor_mass * (1.0 - self.motor_position)
            m[s.j] += self.motor_mass * self.motor_position
        return m

    def rotated(self, degrees: float) -> "StructureSpec":
        """Same structure rotated about the vertical axis."""
        a = math.radians(degrees)
        c, s = math.cos(a), math.sin(a)
        nodes = tuple((c * x - s * y, s * x + c * y, z) for x, y, z in self.nodes)
        return replace(self, nodes=nodes)


def _triple(v) -> tuple[float, float, float]:
    if np.ndim(v) == 0:
        return (float(v),) * 3
    out = tuple(float(x) for x in v)
    if len(out) != 3:
        raise StructureError(f"expected three motor values, got {v!r}")
    return out


def prism_template(radius: float = 100.0, height: float = 120.0, n: int = 6):
    """Node positions and member lists of the self-stressed twisted prism.

    Bottom node ``k`` sits at angle ``60k``; top node ``k`` at ``60k + 120``.
    Strut ``k`` joins bottom ``k`` to top ``k``; diagonal springs join
    bottom ``k`` to top ``k - 1``.
    """
    twist = math.pi / 2 + math.pi / n
    bottom = [(radius * math.cos(2 * math.pi * k / n), radius * math.sin(2 * math.pi * k / n), 0.0)
              for k in range(n)]
    top = [(radius * math.cos(2 * math.pi * k / n + twist),
            radius * math.sin(2 * math.pi * k / n + twist), height) for k in range(n)]
    struts = [(k, n + k) for k in range(n)]
    springs = ([(k, (k + 1) % n) for k in range(n)]
               + [(n + k, n + (k + 1) % n) for k in range(n)]
               + [(k, n + (k - 1) % n) for k in range(n)])
    return np.array(bottom + top), struts, springs


def default_structure(radius: float = 100.0, height: float = 120.0, stiffness: float = 0.3,
                      force_density: float = 0.1, damping: float = 5e-5,
                      strut_mass: float = 40.0, motor_mass: float = 15.0,
                      eccentric_mass: float = 7.5, moment_arm: float = 5.0,
                      motor_position: float = 0.2, unilateral: bool = False) -> StructureSpec:
    """Build the six-strut, eighteen-spring robot.

    ``force_density`` (N/mm) sets the prestress: every spring carries
    tension ``force_density * length`` in the template, which fixes its rest
    length for the given ``stiffness``.
    """
    if force_density >= stiffness:
        raise StructureError("force_density must be below stiffness (rest lengths would be <= 0)")
    X, strut_pairs, spring_pairs = prism_template(radius, height)
    struts = tuple(Strut(i, j, float(np.linalg.norm(X[j] - X[i])), strut_mass)
                   for i, j in strut_pairs)
    springs = []
    for i, j in spring_pairs:
        L = float(np.linalg.norm(X[j] - X[i]))
        springs.append(Spring(i, j, stiffness, L * (1.0 - force_density / stiffness), damping))
    return StructureSpec(tuple(map(tuple, X)), struts, tuple(springs), (0, 2, 4),
                         eccentric_mass, moment_arm, motor_mass, motor_position, unilateral)


def spring_graph_connected(spec: StructureSpec) -> bool:
    parent = list(range(spec.n_nodes))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for s in spec.springs:
        parent[find(s.i)] = find(s.j)
    return len({find(k) for k in range(spec.n_nodes)}) == 1


def threefold_permutation(spec: StructureSpec, tol: float = 1e-6) -> np.ndarray | None:
    """Node permutation realising a 120 degree rotation, or None if there is none.

    ``perm[k]`` is the node that node ``k`` moves onto.
    """
    X = spec.node_array
    Y = spec.rotated(120.0).node_array
    scale = max(1.0, float(np.abs(X).max()))
    perm = np.full(len(X), -1)
    for k, y in enumerate(Y):
        d = np.linalg.norm(X - y, axis=1)
        j = int(np.argmin(d))
        if d[j] > tol * scale:
            return None
        perm[k] = j
    if len(set(perm.tolist())) != len(perm):
        return None
    return perm


def check_structure(spec: StructureSpec) -> None:
    """Raise :class:`StructureError` unless the construction requirements hold."""
    if spec.n_nodes != 12 or len(spec.struts) != 6 or len(spec.springs) != 18:
        raise StructureError(
            f"need 12 nodes, 6 struts, 18 springs; got {spec.n_nodes}, "
            f"{len(spec.struts)}, {len(spec.springs)}")
    if len(spec.motor_struts) != 3 or len(set(spec.motor_struts)) != 3:
        raise StructureError("need exactly three distinct motorized struts")
    used = [k for s in spec.struts for k in (s.i, s.j)]
    if sorted(used) != list(range(12)):
        raise StructureError("every node must be the endpoint of exactly one strut")
    X = spec.node_array
    for s in spec.struts:
        L = float(np.linalg.norm(X[s.j] - X[s.i]))
        if not math.isclose(L, s.length, rel_tol=1e-9):
            raise StructureError(f"strut ({s.i},{s.j}) length {s.length} != node distance {L}")
        if s.mass <= 0:
            raise StructureError("strut mass must be positive")
    for sp in spec.springs:
        if sp.stiffness <= 0 or sp.rest_length <= 0 or sp.damping < 0:
            raise StructureError(f"bad spring {sp}")
    if not 0.0 <= spec.motor_position <= 1.0:
        raise StructureError("motor_position must lie in [0, 1]")
    if not spring_graph_connected(spec):
        raise StructureError("spring graph is disconnected")
    if not _threefold_symmetric(spec):
        raise StructureError("structure lacks threefold symmetry about the vertical axis")


def _threefold_symmetric(spec: StructureSpec) -> bool:
    perm = threefold_permutation(spec)
    if perm is None:
        return False

    def key_strut(s):
        return (frozenset((int(perm[s.i]), int(perm[s.j]))), round(s.length, 6), s.mass)

    struts = {(frozenset((s.i, s.j)), round(s.length, 6), s.mass) for s in spec.struts}
    if {key_strut(s) for s in spec.struts} != struts:
        return False
    springs = {(frozenset((s.i, s.j)), s.stiffness, round(s.rest_length, 6), s.damping)
               for s in spec.springs}
    moved = {(frozenset((int(perm[s.i]), int(perm[s.j]))), s.stiffness, round(s.rest_length, 6),
              s.damping) for s in spec.springs}
    if moved != springs:
        return False
    # motor m must land on motor m+1 with the same orientation and hardware
    for m in range(3):
        a = spec.struts[spec.motor_struts[m]]
        b = spec.struts[spec.motor_struts[(m + 1) % 3]]
        if (int(perm[a.i]), int(perm[a.j])) != (b.i, b.j):
            return False
    return (len(set(spec.eccentric_mass)) == 1 and len(set(spec.moment_arm)) == 1)


def structure_from_dict(d: dict | None) -> StructureSpec:
    """Build a spec from config: either template parameters or explicit members."""
    d = dict(d or {})
    if "nodes" not in d:
        return default_structure(**d)
    struts = tuple(Strut(int(s[0]), int(s[1]), float(s[2]), float(s[3])) for s in d["struts"])
    springs = tuple(Spring(int(s[0]), int(s[1]), float(s[2]), float(s[3]), float(s[4]))
                    for s in d["springs"])
    return StructureSpec(tuple(tuple(n) for n in d["nodes"]), struts, springs,
                         tuple(d["motor_struts"]), d["eccentric_mass"], d["moment_arm"],
                         float(d.get("motor_mass", 15.0)), float(d.get("motor_position", 0.2)),
                         bool(d.get("unilateral", False)))
