import dataclasses
import socketserver
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tensemap.bridge import (EvaluatorConfig, Evaluator, ExternalBackend, ProtocolError,
                             RemoteError, SurrogateBackend, decode_request, decode_response,
                             encode_error, encode_request, encode_response, gate_and_evaluate,
                             make_backend)
from tensemap.repertoire import STATIONARY, Behavior, ParameterSet, SearchConfig, run_map_elites
from tensemap.trials import Outcome


class CountingBackend:
    def __init__(self, behavior=Behavior(100.0, 0.0, 0.0)):
        self.behavior = behavior
        self.calls = []

    def measure(self, params, trial_id, duration_s):
        self.calls.append((params, trial_id, duration_s))
        return self.behavior


class FailingBackend:
    def __init__(self, exc):
        self.exc = exc

    def measure(self, params, trial_id, duration_s):
        raise self.exc


# -- gate ------------------------------------------------------------------

def test_gate_examples():
    cfg = EvaluatorConfig()
    backend = CountingBackend()
    rec = gate_and_evaluate(ParameterSet(10, 20, 30), cfg, backend)
    assert rec.outcome is Outcome.SKIPPED_STATIONARY
    assert rec.behavior == STATIONARY and rec.fitness == 0.0
    assert backend.calls == []
    rec = gate_and_evaluate(ParameterSet(30, 30, 31), cfg, backend, trial_id=7, phase="mutation")
    assert rec.outcome is Outcome.EVALUATED
    assert backend.calls == [(ParameterSet(30, 30, 31), 7, 10.0)]
    assert rec.bin == (7, 6, 3) and rec.fitness == pytest.approx(100 / 360)


def test_gate_threshold_is_inclusive():
    backend = CountingBackend()
    assert gate_and_evaluate(ParameterSet(30, 30, 30), EvaluatorConfig(), backend).outcome \
        is Outcome.SKIPPED_STATIONARY
    cfg = EvaluatorConfig(stationarity_threshold=0)
    assert gate_and_evaluate(ParameterSet(0, 0, 1), cfg, backend).outcome is Outcome.EVALUATED
    assert gate_and_evaluate(ParameterSet(0, 0, 0), cfg, backend).outcome \
        is Outcome.SKIPPED_STATIONARY


def test_skipped_trials_never_reach_backend():
    backend = CountingBackend()
    ev = Evaluator(EvaluatorConfig(trial_duration_s=2.0), backend)
    archive, log = run_map_elites(SearchConfig(n_random=200, n_mutation=200, seed=4), ev)
    skipped = [r for r in log if r.outcome is Outcome.SKIPPED_STATIONARY]
    evaluated = [r for r in log if r.outcome is Outcome.EVALUATED]
    assert skipped and all(r.params.total <= 90 for r in skipped)
    assert len(backend.calls) == len(evaluated)
    assert all(p.total > 90 for p, _, _ in backend.calls)


def test_gate_quantizes_and_records_errors():
    rec = gate_and_evaluate(ParameterSet(100, 100, 100), EvaluatorConfig(),
                            CountingBackend(Behavior(1.23456, -2.0004, 0.0005)))
    assert rec.behavior.as_tuple() == (1.235, -2.0, 0.001)
    for exc in (RemoteError(0, 3, "tipped over"), ProtocolError("garbled"), OSError("gone")):
        rec = gate_and_evaluate(ParameterSet(100, 100, 100), EvaluatorConfig(),
                                FailingBackend(exc))
        assert rec.outcome is Outcome.ERROR and rec.behavior is None and rec.bin is None
        assert rec.message


def test_golden_surrogate_trial(sim):
    cfg = EvaluatorConfig(trial_duration_s=2.0)
    rec = gate_and_evaluate(ParameterSet(189, 30, 251), cfg, SurrogateBackend(sim))
    assert rec.outcome is Outcome.EVALUATED
    assert rec.behavior.as_tuple() == pytest.approx((10.436, 2.478, 6.543), abs=2e-3)
    assert rec.bin == (6, 6, 3)
    assert rec.fitness == pytest.approx(0.0722, abs=1e-4)


def test_surrogate_backend_caches(sim):
    backend = SurrogateBackend(sim)
    a = backend.measure(ParameterSet(100, 150, 200), 0, 1.0)
    b = backend.measure(ParameterSet(100, 150, 200), 5, 1.0)
    assert a == b and backend.calls == 1


def test_evaluator_config_validation():
    with pytest.raises(ValueError):
        EvaluatorConfig(stationarity_threshold=-1)
    with pytest.raises(ValueError):
        EvaluatorConfig(trial_duration_s=0)
    with pytest.raises(ValueError):
        EvaluatorConfig(backend="carrier-pigeon")
    with pytest.raises(ValueError):
        EvaluatorConfig.from_dict({"threshold": 3})
    assert EvaluatorConfig.from_dict({"trial_duration_s": 2}).duration_ms == 2000
    with pytest.raises(ValueError):
        make_backend(EvaluatorConfig(backend="external"))


# -- protocol --------------------------------------------------------------

def test_encode_examples():
    assert encode_request(17, ParameterSet(189, 30, 251), 10000) == "EVAL 17 189 30 251 10000\n"
    assert encode_response(17, Behavior(41.2, -3.5, 12.0)) == "BEH 17 41.200 -3.500 12.000\n"
    assert encode_response(3, Behavior(-0.0001, 0, 0)) == "BEH 3 0.000 0.000 0.000\n"
    assert encode_error(4, 2, "battery low") == "ERR 4 2 battery low\n"


def test_decode_examples():
    assert decode_response("BEH 17 41.200 -3.500 12.000\n", 17) == Behavior(41.2, -3.5, 12.0)
    assert decode_response("BEH 2 5 -6.5 0\n", 2) == Behavior(5, -6.5, 0)
    with pytest.raises(RemoteError) as info:
        decode_response("ERR 17 5 motor stall\n", 17)
    assert (info.value.trial_id, info.value.code, info.value.message) == (17, 5, "motor stall")
    with pytest.raises(ProtocolError):
        decode_response("BEH 18 1.000 2.000 3.000\n", 17)
    with pytest.raises(ProtocolError):
        decode_response("ERR 18 1 x\n", 17)
    for bad in ("BEH 17 1.0 2.0\n", "BEH 17 1.0001 2 3\n", "beh 17 1 2 3\n", "BEH 17  1 2 3\n",
                "BEH 17 nan 2 3\n", "PONG\n", ""):
        with pytest.raises(ProtocolError):
            decode_response(bad, 17)
    assert decode_request("EVAL 3 1 2 3 500\n") == (3, ParameterSet(1, 2, 3), 500)
    with pytest.raises(ProtocolError):
        decode_request("EVAL 3 1 2 300 500\n")


def _mm(lo, hi):
    return st.integers(int(lo * 1000), int(hi * 1000)).map(lambda v: v / 1000)


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 10**9), st.tuples(*[st.integers(0, 255)] * 3),
       st.integers(1, 10**6), _mm(-1e5, 1e5), _mm(-1e5, 1e5), _mm(-180, 179.999))
def test_protocol_round_trip(tid, params, dur, dx, dy, dpsi):
    p = ParameterSet(*params)
    assert decode_request(encode_request(tid, p, dur)) == (tid, p, dur)
    b = Behavior(dx, dy, dpsi)
    assert decode_response(encode_response(tid, b), tid) == b


# -- external backend ------------------------------------------------------

class ScriptedTransport:
    def __init__(self, replies):
        self.replies = list(replies)
        self.sent = []
        self.timeouts = []

    def send(self, line):
        self.sent.append(line)

    def readline(self, timeout_s):
        self.timeouts.append(timeout_s)
        reply = self.replies.pop(0)
        if isinstance(reply, Exception):
            raise reply
        return reply

    def close(self):
        pass


class FakeClock:
    def __init__(self):
        self.now = 0.0
        self.sleeps = []

    def __call__(self):
        return self.now

    def sleep(self, s):
        self.sleeps.append(s)
        self.now += s


def test_pacing_and_timeouts():
    clock = FakeClock()
    replies = [f"BEH {i} 1.000 2.000 3.000\n" for i in range(5)]
    transport = ScriptedTransport(replies)
    backend = ExternalBackend("fake", cooldown_s=4.0, timeout_margin_s=15.0, transport=transport,
                              clock=clock, sleep=clock.sleep)
    for i in range(5):
        assert backend.measure(ParameterSet(100, 100, 100), i, 10.0) == Behavior(1, 2, 3)
        clock.now += 10.0 if i % 2 else 1.0   # the trial itself takes time
    gaps = [b - a for a, b in zip(backend.request_times, backend.request_times[1:])]
    assert all(g >= 4.0 for g in gaps)
    assert transport.timeouts == [25.0] * 5
    assert transport.sent[0] == "EVAL 0 100 100 100 10000\n"
    # after a long trial no extra wait is inserted
    assert len(clock.sleeps) == 2


def test_pacing_applies_after_errors():
    clock = FakeClock()
    transport = ScriptedTransport(["ERR 0 1 fell\n", "BEH 1 0 0 0\n"])
    backend = ExternalBackend("fake", cooldown_s=4.0, transport=transport, clock=clock,
                              sleep=clock.sleep)
    with pytest.raises(RemoteError):
        backend.measure(ParameterSet(100, 100, 100), 0, 1.0)
    backend.measure(ParameterSet(100, 100, 100), 1, 1.0)
    assert backend.request_times[1] - backend.request_times[0] >= 4.0


def test_ping():
    ExternalBackend("fake", transport=ScriptedTransport(["PONG\n"])).ping()
    with pytest.raises(ProtocolError):
        ExternalBackend("fake", transport=ScriptedTransport(["BEH 0 0 0 0\n"])).ping()


# -- loopback robot ----------------------------------------------------------

class RobotHandler(socketserver.StreamRequestHandler):
    def handle(self):
        for raw in self.rfile:
            line = raw.decode("ascii")
            if line == "PING\n":
                self.wfile.write(b"PONG\n")
                continue
            tid, params, dur = decode_request(line)
            if tid in self.server.fail_ids:
                reply = encode_error(tid, 7, "fell over")
            elif tid in self.server.silent_ids:
                continue
            else:
                reply = encode_response(tid, self.server.backend.measure(params, tid, dur / 1000))
            self.wfile.write(reply.encode("ascii"))


@pytest.fixture
def robot(sim):
    server = socketserver.ThreadingTCPServer(("127.0.0.1", 0), RobotHandler)
    server.daemon_threads = True
    server.backend = SurrogateBackend(sim)
    server.fail_ids = set()
    server.silent_ids = set()
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server
    server.shutdown()
    server.server_close()


def _strip(records):
    return [dataclasses.replace(r, timestamp="") for r in records]


def loopback_matches_direct(sim, endpoint: str, n_trials: int = 20, duration_s: float = 0.5) -> bool:
    cfg = EvaluatorConfig(trial_duration_s=duration_s, backend="external", endpoint=endpoint,
                          cooldown_s=0.0)
    search = SearchConfig(n_random=n_trials // 2, n_mutation=n_trials - n_trials // 2, seed=11)
    backend = make_backend(cfg)
    try:
        remote_archive, remote_log = run_map_elites(search, Evaluator(cfg, backend))
    finally:
        backend.close()
    direct_cfg = dataclasses.replace(cfg, backend="surrogate", endpoint=None)
    direct_archive, direct_log = run_map_elites(
        search, Evaluator(direct_cfg, SurrogateBackend(sim)))
    return (len(remote_log) == n_trials and _strip(remote_log) == _strip(direct_log)
            and remote_archive.elites() == direct_archive.elites())


def test_loopback_run_matches_direct(sim, robot):
    host, port = robot.server_address
    assert loopback_matches_direct(sim, f"{host}:{port}")


def test_loopback_error_becomes_record(robot):
    host, port = robot.server_address
    robot.fail_ids.add(1)
    backend = ExternalBackend(f"{host}:{port}", cooldown_s=0.0)
    ev = Evaluator(EvaluatorConfig(trial_duration_s=0.5), backend)
    try:
        ok = ev(ParameterSet(100, 100, 100), 0, "shared_random")
        bad = ev(ParameterSet(100, 100, 100), 1, "shared_random")
    finally:
        backend.close()
    assert ok.outcome is Outcome.EVALUATED
    assert bad.outcome is Outcome.ERROR and "fell over" in bad.message


def test_loopback_timeout(robot):
    host, port = robot.server_address
    robot.silent_ids.add(0)
    backend = ExternalBackend(f"{host}:{port}", cooldown_s=0.0, timeout_margin_s=0.2)
    try:
        rec = Evaluator(EvaluatorConfig(trial_duration_s=0.1), backend)(
            ParameterSet(100, 100, 100), 0, "mutation")
    finally:
        backend.close()
    assert rec.outcome is Outcome.ERROR and "timed out" in rec.message


def test_unreachable_endpoint():
    with pytest.raises(ProtocolError):
        make_backend(EvaluatorConfig(backend="external", endpoint="127.0.0.1:1"))
    with pytest.raises(ProtocolError):
        make_backend(EvaluatorConfig(backend="external", endpoint="not-an-endpoint"))
