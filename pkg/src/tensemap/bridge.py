"""Evaluator contract, stationarity gate, and the line protocol to external robots.

Wire format (ASCII, LF-terminated, single spaces)::

    -> EVAL <trial_id> <f1> <f2> <f3> <duration_ms>
    <- BEH <trial_id> <dx_mm> <dy_mm> <dpsi_deg>
    <- ERR <trial_id> <code> <message...>
    -> PING
    <- PONG

One request is outstanding at a time.
"""
from __future__ import annotations

import logging
import math
import os
import re
import socket
import time
from dataclasses import dataclass, fields
from typing import Callable, Protocol

from .repertoire import (DEFAULT_GEOMETRY, STATIONARY, Behavior, BinGeometry, ParameterSet,
                         bin_index, fitness)
from .trials import Outcome, TrialRecord, utc_now

log = logging.getLogger(__name__)

BACKENDS = ("surrogate", "external")
MAX_THRESHOLD = 3 * 255


class ProtocolError(RuntimeError):
    """Malformed line, unexpected trial id, or transport failure."""


class RemoteError(RuntimeError):
    """The robot answered with ``ERR``."""

    def __init__(self, trial_id: int, code: int, message: str):
        super().__init__(f"trial {trial_id}: remote error {code}: {message}")
        self.trial_id = trial_id
        self.code = code
        self.message = message


@dataclass(frozen=True)
class EvaluatorConfig:
    stationarity_threshold: int = 90
    trial_duration_s: float = 10.0
    cooldown_s: float = 4.0
    backend: str = "surrogate"
    endpoint: str | None = None
    timeout_margin_s: float = 15.0

    def __post_init__(self):
        if not 0 <= self.stationarity_threshold <= MAX_THRESHOLD:
            raise ValueError(f"stationarity_threshold must lie in [0, {MAX_THRESHOLD}]")
        if self.trial_duration_s <= 0:
            raise ValueError("trial_duration_s must be positive")
        if self.cooldown_s < 0:
            raise ValueError("cooldown_s must be non-negative")
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}")

    @property
    def duration_ms(self) -> int:
        return int(round(self.trial_duration_s * 1000))

    @classmethod
    def from_dict(cls, d: dict | None) -> "EvaluatorConfig":
        d = dict(d or {})
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown evaluator config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# wire protocol

_FLOAT = r"[-+]?(?:\d+(?:\.\d{0,3})?|\.\d{1,3})"
_BEH = re.compile(rf"BEH (\d+) ({_FLOAT}) ({_FLOAT}) ({_FLOAT})")
_ERR = re.compile(r"ERR (\d+) (-?\d+)(?: (.*))?")
_EVAL = re.compile(r"EVAL (\d+) (\d+) (\d+) (\d+) (\d+)")


def _num(v: float) -> str:
    s = f"{v:.3f}"
    return "0.000" if s == "-0.000" else s


def encode_request(trial_id: int, p: ParameterSet, duration_ms: int) -> str:
    return f"EVAL {int(trial_id)} {p.f1} {p.f2} {p.f3} {int(duration_ms)}\n"


def decode_request(line: str) -> tuple[int, ParameterSet, int]:
    m = _EVAL.fullmatch(line.rstrip("\n"))
    if not m:
        raise ProtocolError(f"malformed request {line!r}")
    tid, f1, f2, f3, dur = map(int, m.groups())
    try:
        return tid, ParameterSet(f1, f2, f3), dur
    except ValueError as exc:
        raise ProtocolError(f"bad parameters in {line!r}: {exc}") from exc


def encode_response(trial_id: int, b: Behavior) -> str:
    return f"BEH {int(trial_id)} {_num(b.dx)} {_num(b.dy)} {_num(b.dpsi)}\n"


def encode_error(trial_id: int, code: int, message: str) -> str:
    return f"ERR {int(trial_id)} {int(code)} {message}\n"


def decode_response(line: str, expected_trial_id: int) -> Behavior:
    """Parse a robot reply; raises ProtocolError or RemoteError."""
    text = line[:-1] if line.endswith("\n") else line
    if m := _BEH.fullmatch(text):
        tid = int(m.group(1))
        if tid != expected_trial_id:
            raise ProtocolError(f"reply for trial {tid} while trial {expected_trial_id} is outstanding")
        dx, dy, dpsi = (float(g) for g in m.groups()[1:])
        if not all(math.isfinite(v) for v in (dx, dy, dpsi)):
            raise ProtocolError(f"non-finite behavior in {line!r}")
        return Behavior(dx, dy, dpsi)
    if m := _ERR.fullmatch(text):
        tid = int(m.group(1))
        if tid != expected_trial_id:
            raise ProtocolError(f"error for trial {tid} while trial {expected_trial_id} is outstanding")
        raise RemoteError(tid, int(m.group(2)), m.group(3) or "")
    raise ProtocolError(f"malformed reply {line!r}")


# ---------------------------------------------------------------------------
# backends

class Backend(Protocol):
    def measure(self, params: ParameterSet, trial_id: int, duration_s: float) -> Behavior: ...


class SurrogateBackend:
    """Runs trials on the tensegrity surrogate; results are cached per parameter set."""

    parallel_safe = True

    def __init__(self, sim=None, seed: int | None = None):
        from .sim import TensegritySim

        self.sim = sim if sim is not None else TensegritySim()
        self.seed = self.sim.cfg.seed if seed is None else seed
        self._cache: dict[tuple, Behavior] = {}
        self.calls = 0

    def measure(self, params: ParameterSet, trial_id: int, duration_s: float) -> Behavior:
        key = (params.as_tuple(), float(duration_s))
        if key not in self._cache:
            self.calls += 1
            self._cache[key] = self.sim.evaluate(params, duration_s, seed=self.seed)
        return self._cache[key]


class LineTransport:
    """Newline-delimited byte stream over a TCP socket or a serial device node."""

    def __init__(self, endpoint: str, timeout_s: float = 30.0):
        self.endpoint = endpoint
        self._buf = b""
        self._sock = None
        self._fd = None
        if os.path.exists(endpoint) or endpoint.startswith("/dev/"):
            # serial line settings (baud etc.) are expected to be configured already
            self._fd = os.open(endpoint, os.O_RDWR | os.O_NOCTTY)
        else:
            host, _, port = endpoint.rpartition(":")
            if not host or not port.isdigit():
                raise ProtocolError(f"endpoint {endpoint!r} is neither host:port nor a device path")
            try:
                self._sock = socket.create_connection((host, int(port)), timeout=timeout_s)
            except OSError as exc:
                raise ProtocolError(f"cannot connect to {endpoint}: {exc}") from exc

    def send(self, line: str) -> None:
        data = line.encode("ascii")
        try:
            if self._sock is not None:
                self._sock.sendall(data)
            else:
                os.write(self._fd, data)
        except OSError as exc:
            raise ProtocolError(f"send failed: {exc}") from exc

    def readline(self, timeout_s: float) -> str:
        deadline = time.monotonic() + timeout_s
        while b"\n" not in self._buf:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ProtocolError(f"timed out after {timeout_s:.1f}s waiting for {self.endpoint}")
            chunk = self._recv(remaining)
            if not chunk:
                raise ProtocolError(f"{self.endpoint} closed the connection")
            self._buf += chunk
        line, _, self._buf = self._buf.partition(b"\n")
        try:
            return line.decode("ascii") + "\n"
        except UnicodeDecodeError as exc:
            raise ProtocolError(f"non-ASCII reply {line!r}") from exc

    def _recv(self, timeout_s: float) -> bytes:
        if self._sock is not None:
            self._sock.settimeout(timeout_s)
            try:
                return self._sock.recv(4096)
            except socket.timeout:
                self._timeout()
            except OSError as exc:
                raise ProtocolError(f"receive failed: {exc}") from exc
        import select

        ready, _, _ = select.select([self._fd], [], [], timeout_s)
        if not ready:
            self._timeout()
        return os.read(self._fd, 4096)

    def _timeout(self) -> bytes:
        raise ProtocolError(f"timed out waiting for {self.endpoint}")

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
        if self._fd is not None:
            os.close(self._fd)


class ExternalBackend:
    """Serial, paced access to a robot controller speaking the line protocol."""

    parallel_safe = False

    def __init__(self, endpoint: str, cooldown_s: float = 4.0, timeout_margin_s: float = 15.0,
                 transport=None, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.endpoint = endpoint
        self.cooldown_s = cooldown_s
        self.timeout_margin_s = timeout_margin_s
        self.transport = transport if transport is not None else LineTransport(endpoint)
        self._clock = clock
        self._sleep = sleep
        self._ready_at = -math.inf
        self.request_times: list[float] = []

    def ping(self) -> None:
        self.transport.send("PING\n")
        reply = self.transport.readline(self.timeout_margin_s)
        if reply != "PONG\n":
            raise ProtocolError(f"liveness check failed: got {reply!r}")

    def measure(self, params: ParameterSet, trial_id: int, duration_s: float) -> Behavior:
        wait = self._ready_at - self._clock()
        if wait > 0:
            self._sleep(wait)
        duration_ms = int(round(duration_s * 1000))
        self.request_times.append(self._clock())
        try:
            self.transport.send(encode_request(trial_id, params, duration_ms))
            line = self.transport.readline(duration_ms / 1000.0 + self.timeout_margin_s)
            return decode_response(line, trial_id)
        finally:
            self._ready_at = self._clock() + self.cooldown_s

    def close(self) -> None:
        self.transport.close()


# ---------------------------------------------------------------------------
# gate

def gate_and_evaluate(p: ParameterSet, cfg: EvaluatorConfig, backend: Backend, trial_id: int = 0,
                      phase: str = "shared_random",
                      geometry: BinGeometry = DEFAULT_GEOMETRY) -> TrialRecord:
    """Run one trial unless the motor sum marks it as stationary.

    Behaviors are quantized to 0.001 mm/deg, the resolution of the wire
    format and of the persisted logs, so replays from disk are exact.
    """
    stamp = utc_now()
    if p.total <= cfg.stationarity_threshold:
        b = STATIONARY
        return TrialRecord(trial_id, phase, p, b, Outcome.SKIPPED_STATIONARY,
                           bin_index(b, geometry)[0], fitness(b, geometry), stamp)
    try:
        b = backend.measure(p, trial_id, cfg.trial_duration_s).quantized(3)
        index, _ = bin_index(b, geometry)
    except (ProtocolError, RemoteError, OSError, ValueError, RuntimeError) as exc:
        log.error("trial %d (%s) failed: %s", trial_id, p.as_tuple(), exc)
        return TrialRecord(trial_id, phase, p, None, Outcome.ERROR, timestamp=stamp,
                           message=str(exc))
    return TrialRecord(trial_id, phase, p, b, Outcome.EVALUATED, index, fitness(b, geometry), stamp)


class Evaluator:
    """Callable ``(params, trial_id, phase) -> TrialRecord`` used by the search loop."""

    def __init__(self, cfg: EvaluatorConfig, backend: Backend,
                 geometry: BinGeometry = DEFAULT_GEOMETRY):
        self.cfg = cfg
        self.backend = backend
        self.geometry = geometry

    def __call__(self, params: ParameterSet, trial_id: int, phase: str) -> TrialRecord:
        return gate_and_evaluate(params, self.cfg, self.backend, trial_id, phase, self.geometry)


def make_backend(cfg: EvaluatorConfig, sim=None, connect: bool = True):
    if cfg.backend == "surrogate":
        return SurrogateBackend(sim)
    if not cfg.endpoint:
        raise ValueError("external backend needs an endpoint (host:port or device path)")
    backend = ExternalBackend(cfg.endpoint, cfg.cooldown_s, cfg.timeout_margin_s)
    if connect:
        backend.ping()
    return backend
