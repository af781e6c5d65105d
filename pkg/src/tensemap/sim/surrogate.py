"""Surrogate evaluator: ParameterSet -> Behavior through the tensegrity model.

This is a stand-in used to exercise the search pipeline at desk scale. It
makes no claim of fidelity to the physical robot.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from functools import lru_cache

import numpy as np

from ..descriptor import PoseSample, to_local_behavior
from ..repertoire import Behavior, ParameterSet
from .kernels import advance
from .structure import StructureError, StructureSpec, check_structure, default_structure

N_PER_MM_TO_INTERNAL = 1e6  # N/mm -> (g*mm/s^2)/mm
STABILITY_LIMIT = 0.3
BLOWUP_MM = 1e5


class SimulationError(RuntimeError):
    """Numerical blow-up or an invalid simulator configuration."""


@dataclass(frozen=True)
class SimConfig:
    dt: float = 2e-4
    duration_s: float = 10.0
    gravity: float = 9810.0              # mm/s^2
    ground_stiffness: float = 1.0        # N/mm
    ground_damping: float = 0.003        # N*s/mm
    friction: float = 0.6
    contact_radius: float = 1.0          # mm, strut end caps touch the ground at z = r
    freq_gain: float = 2 * math.pi * 0.35  # rad/s per PWM unit
    noise_mm: float = 0.0                # std of initial node perturbation
    process_noise: float = 0.0           # std of random node force (N), 0 disables
    process_noise_onset_s: float = 0.0
    process_noise_interval_s: float = 0.01
    seed: int = 0
    settle_s: float = 3.0
    settle_damping: float = 0.003        # N*s/mm, settling only
    relax_s: float = 1.0
    friction_iterations: int = 4
    chunk_s: float = 0.1

    def __post_init__(self):
        if self.dt <= 0 or self.duration_s <= 0:
            raise ValueError("dt and duration_s must be positive")
        if min(self.friction, self.noise_mm, self.process_noise, self.contact_radius) < 0:
            raise ValueError("friction, noise amplitudes and contact_radius must be non-negative")
        if self.friction_iterations < 0:
            raise ValueError("friction_iterations must be >= 0")

    @classmethod
    def from_dict(cls, d: dict | None) -> "SimConfig":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown sim config keys: {sorted(unknown)}")
        return cls(**d)

    def without_seed(self) -> "SimConfig":
        return replace(self, seed=0)


@dataclass
class Model:
    """Flat arrays consumed by the compiled integrator."""

    spec: StructureSpec
    mass: np.ndarray
    strut_nodes: np.ndarray
    strut_len: np.ndarray
    spring_nodes: np.ndarray
    spring_k: np.ndarray
    spring_l0: np.ndarray
    spring_c: np.ndarray
    motor_strut: np.ndarray
    motor_amp: np.ndarray
    motor_pos: np.ndarray

    @classmethod
    def compile(cls, spec: StructureSpec) -> "Model":
        motor_nodes = np.array([spec.struts[k].i for k in spec.motor_struts])
        return cls(
            spec=spec,
            mass=spec.node_masses(),
            strut_nodes=np.array([(s.i, s.j) for s in spec.struts], dtype=np.int64),
            strut_len=np.array([s.length for s in spec.struts]),
            spring_nodes=np.array([(s.i, s.j) for s in spec.springs], dtype=np.int64),
            spring_k=np.array([s.stiffness for s in spec.springs]) * N_PER_MM_TO_INTERNAL,
            spring_l0=np.array([s.rest_length for s in spec.springs]),
            spring_c=np.array([s.damping for s in spec.springs]) * N_PER_MM_TO_INTERNAL,
            motor_strut=np.array(spec.motor_struts, dtype=np.int64),
            motor_amp=np.array(spec.eccentric_mass) * np.array(spec.moment_arm),
            motor_pos=np.full(len(motor_nodes), spec.motor_position),
        )


@dataclass
class SimState:
    x: np.ndarray
    v: np.ndarray
    t: float
    model: Model = field(repr=False)

    def copy(self) -> "SimState":
        return SimState(self.x.copy(), self.v.copy(), self.t, self.model)


def max_natural_frequency(spec: StructureSpec, cfg: SimConfig) -> float:
    """Largest two-body spring or ground-contact natural frequency (rad/s)."""
    m = spec.node_masses()
    w = 0.0
    for s in spec.springs:
        k = s.stiffness * N_PER_MM_TO_INTERNAL
        w = max(w, math.sqrt(k * (1.0 / m[s.i] + 1.0 / m[s.j])))
    w = max(w, math.sqrt(cfg.ground_stiffness * N_PER_MM_TO_INTERNAL / m.min()))
    return w


def check_stability(spec: StructureSpec, cfg: SimConfig) -> None:
    w = max_natural_frequency(spec, cfg)
    if w * cfg.dt >= STABILITY_LIMIT:
        raise SimulationError(
            f"timestep {cfg.dt} too large: max natural frequency {w:.1f} rad/s gives "
            f"omega*dt = {w * cfg.dt:.3f} >= {STABILITY_LIMIT}")
    m = spec.node_masses().min()
    c = max(cfg.settle_damping, cfg.ground_damping,
            max(s.damping for s in spec.springs)) * N_PER_MM_TO_INTERNAL
    if 2.0 * c / m * cfg.dt >= 1.0:
        raise SimulationError("damping too strong for the explicit timestep")


def _run(state: SimState, cfg: SimConfig, omega: np.ndarray, nsteps: int,
         spring_c: np.ndarray | None = None, friction: float | None = None,
         noise: np.ndarray | None = None, noise_every: int = 1, noise_from: int = 0) -> None:
    """Advance in chunks, checking for blow-up between chunks."""
    m = state.model
    chunk = max(1, int(round(cfg.chunk_s / cfg.dt)))
    if noise is None:
        noise = np.zeros((0, m.mass.size, 3))
    c = m.spring_c if spring_c is None else spring_c
    mu = cfg.friction if friction is None else friction
    done = 0
    while done < nsteps:
        n = min(chunk, nsteps - done)
        advance(state.x, state.v, state.t, n, cfg.dt, m.mass, m.strut_nodes, m.strut_len,
                m.spring_nodes, m.spring_k, m.spring_l0, c, m.spec.unilateral, m.motor_strut,
                m.motor_amp, m.motor_pos, omega, cfg.gravity, cfg.contact_radius,
                cfg.ground_stiffness * N_PER_MM_TO_INTERNAL,
                cfg.ground_damping * N_PER_MM_TO_INTERNAL, mu, cfg.friction_iterations,
                noise, noise_every, noise_from + done)
        done += n
        state.t += n * cfg.dt
        if not np.all(np.isfinite(state.x)) or np.abs(state.x).max() > BLOWUP_MM:
            bad = np.abs(np.nan_to_num(state.x, nan=np.inf)).max(axis=1).argmax()
            raise SimulationError(
                f"numerical blow-up at t={state.t:.4f}s: node {bad} at {state.x[bad]}")


def build_structure(spec: StructureSpec | None = None, cfg: SimConfig | None = None) -> SimState:
    """Settle the template on the ground with motors off.

    Settling runs with heavy spring damping, then relaxes with the nominal
    damping. Raises :class:`StructureError` if the structure collapses.
    """
    spec = spec or default_structure()
    cfg = cfg or SimConfig()
    check_structure(spec)
    check_stability(spec, cfg)
    model = Model.compile(spec)
    x = spec.node_array.copy()
    x[:, 2] += cfg.contact_radius - x[:, 2].min()
    state = SimState(x, np.zeros_like(x), 0.0, model)
    omega = np.zeros(3)
    heavy = np.full_like(model.spring_c, cfg.settle_damping * N_PER_MM_TO_INTERNAL)
    _run(state, cfg, omega, int(round(cfg.settle_s / cfg.dt)), spring_c=heavy)
    _run(state, cfg, omega, int(round(cfg.relax_s / cfg.dt)))
    height0 = np.ptp(spec.node_array[:, 2])
    if np.ptp(state.x[:, 2]) < 0.5 * height0:
        raise StructureError(
            f"prestress cannot carry the structure: height fell from {height0:.1f} mm "
            f"to {np.ptp(state.x[:, 2]):.1f} mm during settling")
    state.v[:] = 0.0
    state.t = 0.0
    return state


def step(state: SimState, cfg: SimConfig, motor_drive) -> SimState:
    """One integration step with motor PWM values ``motor_drive``; returns a new state."""
    out = state.copy()
    omega = np.asarray(motor_drive, dtype=float) * cfg.freq_gain
    _run(out, cfg, omega, 1)
    return out


def simulate(state: SimState, cfg: SimConfig, motor_drive, duration_s: float,
             friction: float | None = None) -> SimState:
    """Run ``duration_s`` seconds with constant motor PWM values; returns a new state."""
    out = state.copy()
    omega = np.asarray(motor_drive, dtype=float) * cfg.freq_gain
    _run(out, cfg, omega, int(round(duration_s / cfg.dt)), friction=friction)
    return out


def body_pose(state: SimState, t: float | None = None) -> PoseSample:
    """Centre of mass and yaw of the body relative to the template's layout.

    Yaw is the least-squares planar rotation taking the template's node
    layout onto the current one (counter-clockwise positive).
    """
    m = state.model.mass
    ref = state.model.spec.node_array[:, :2]
    cur = state.x[:, :2]
    w = m / m.sum()
    c_ref = w @ ref
    c_cur = w @ cur
    a = ref - c_ref
    b = cur - c_cur
    cross = float(np.sum(w * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])))
    dot = float(np.sum(w * (a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1])))
    yaw = math.degrees(math.atan2(cross, dot))
    return PoseSample(state.t if t is None else t, float(c_cur[0]), float(c_cur[1]), yaw)


def kinetic_energy(state: SimState) -> float:
    return 0.5 * float(np.sum(state.model.mass[:, None] * state.v ** 2))


def total_energy(state: SimState, cfg: SimConfig) -> float:
    """Kinetic + spring + gravitational + ground-penalty energy (g*mm^2/s^2)."""
    m = state.model
    x = state.x
    d = x[m.spring_nodes[:, 1]] - x[m.spring_nodes[:, 0]]
    stretch = np.linalg.norm(d, axis=1) - m.spring_l0
    if m.spec.unilateral:
        stretch = np.maximum(stretch, 0.0)
    e_spring = 0.5 * float(np.sum(m.spring_k * stretch ** 2))
    e_grav = float(np.sum(m.mass * cfg.gravity * x[:, 2]))
    pen = np.minimum(x[:, 2] - cfg.contact_radius, 0.0)
    e_ground = 0.5 * cfg.ground_stiffness * N_PER_MM_TO_INTERNAL * float(np.sum(pen ** 2))
    return kinetic_energy(state) + e_spring + e_grav + e_ground


def strut_lengths(state: SimState) -> np.ndarray:
    m = state.model
    return np.linalg.norm(state.x[m.strut_nodes[:, 1]] - state.x[m.strut_nodes[:, 0]], axis=1)


def project_struts(state: SimState) -> None:
    m = state.model
    for s, (i, j) in enumerate(m.strut_nodes):
        wi, wj = 1.0 / m.mass[i], 1.0 / m.mass[j]
        d = state.x[j] - state.x[i]
        L = np.linalg.norm(d)
        corr = (L - m.strut_len[s]) / (L * (wi + wj))
        state.x[i] += wi * corr * d
        state.x[j] -= wj * corr * d


class TensegritySim:
    """Settled robot plus the evaluation routine; one instance per (spec, config)."""

    def __init__(self, spec: StructureSpec | None = None, cfg: SimConfig | None = None):
        self.spec = spec or default_structure()
        self.cfg = cfg or SimConfig()
        self._settled: SimState | None = None

    @property
    def settled(self) -> SimState:
        if self._settled is None:
            self._settled = build_structure(self.spec, self.cfg)
        return self._settled

    def initial_state(self, params: ParameterSet, seed: int) -> tuple[SimState, np.random.Generator]:
        state = self.settled.copy()
        rng = np.random.default_rng([int(seed), *params.as_tuple()])
        if self.cfg.noise_mm > 0:
            state.x += rng.normal(0.0, self.cfg.noise_mm, size=state.x.shape)
            state.x[:, 2] = np.maximum(state.x[:, 2], self.settled.x[:, 2].min())
            project_struts(state)
        return state, rng

    def evaluate(self, params: ParameterSet, duration_s: float | None = None,
                 seed: int | None = None) -> Behavior:
        cfg = self.cfg
        duration = cfg.duration_s if duration_s is None else float(duration_s)
        seed = cfg.seed if seed is None else seed
        state, rng = self.initial_state(params, seed)
        nsteps = int(round(duration / cfg.dt))
        noise, every, start = None, 1, 0
        if cfg.process_noise > 0 and duration > cfg.process_noise_onset_s:
            every = max(1, int(round(cfg.process_noise_interval_s / cfg.dt)))
            n_int = int(math.ceil((duration - cfg.process_noise_onset_s) / cfg.process_noise_interval_s)) + 1
            noise = rng.normal(0.0, cfg.process_noise * N_PER_MM_TO_INTERNAL,
                               size=(n_int, state.x.shape[0], 3))
            start = -int(round(cfg.process_noise_onset_s / cfg.dt))
        start_pose = body_pose(state, 0.0)
        omega = params.as_array().astype(float) * cfg.freq_gain
        _run(state, cfg, omega, nsteps, noise=noise, noise_every=every, noise_from=start)
        return to_local_behavior(start_pose, body_pose(state, duration))


@lru_cache(maxsize=16)
def _shared_sim(spec: StructureSpec, cfg: SimConfig) -> TensegritySim:
    return TensegritySim(spec, cfg)


def evaluate(p: ParameterSet, cfg: SimConfig | None = None,
             spec: StructureSpec | None = None) -> Behavior:
    """Behavior of ``p`` on the surrogate; deterministic in (p, cfg incl. seed)."""
    cfg = cfg or SimConfig()
    spec = spec or default_structure()
    return _shared_sim(spec, cfg.without_seed()).evaluate(p, seed=cfg.seed)
