import pytest

from fgfuzz.sim import keys as ks
from fgfuzz.sim.codec import Codec
from fgfuzz.sim.interceptor import (
    Attacker,
    Block,
    CapabilityViolation,
    Delay,
    InjectModified,
    InterceptorScript,
    Record,
    ReplayRecorded,
)
from fgfuzz.sim.parties import PLANTED_FAULTS, UE, BS, CN, FailReason, PartyPhase, new_ue, step
from fgfuzz.sim.session import Bus, SimConfig, SimTrace, run_session

P = PartyPhase


def phases(trace):
    return {p: trace.phase(p) for p in (UE, BS, CN)}


def script(nsa, profile, rules):
    return InterceptorScript(Attacker(Codec(nsa), nsa.profile(profile)), rules)


def first_message(trace, command):
    ev = next(e for e in trace.deliveries() if e.detail["command"] == command)
    return int(ev.detail["bits"], 16)


def test_honest_runs_agree_on_keys(nsa):
    for seed in range(100):
        t = run_session(SimConfig(nsa, seed=seed))
        assert t.terminal
        assert set(phases(t).values()) == {P.AsSecured}
        ue, bs, cn = t.keys[UE], t.keys[BS], t.keys[CN]
        for k in ks.NAS_KEYS:
            assert ue[k] == cn[k]
        for k in ks.AS_KEYS:
            assert ue[k] == bs[k]


def test_honest_runs_differ_by_seed(nsa):
    a = run_session(SimConfig(nsa, seed=1)).keys[UE]["K_NASenc"]
    b = run_session(SimConfig(nsa, seed=2)).keys[UE]["K_NASenc"]
    assert a != b


def test_core_secures_nas_on_valid_complete(nsa):
    t = run_session(SimConfig(nsa, seed=3))
    cn = [(e.detail["old"], e.detail["new"]) for e in t.state_changes(CN)]
    assert ("AuthDone", "NasSecured") in cn


def test_idle_ue_answers_auth_request(nsa):
    # a recorded challenge makes a fresh UE produce a response
    rec = run_session(SimConfig(nsa, seed=4))
    bits = first_message(rec, "AuthenticationRequest")
    bus = Bus(SimConfig(nsa, seed=5))
    msg = bus.codec.encode("AuthenticationRequest", bus.codec.decode(bits, "AuthenticationRequest"))
    res = step(bus.states[UE], msg, bus.ctx)
    assert [m.command for m in res.outputs] == ["AuthenticationResponse"]
    assert res.state.phase is P.AuthDone


def test_replayed_challenge_reaches_second_ue(nsa):
    rec = run_session(SimConfig(nsa, seed=4))
    bits = first_message(rec, "AuthenticationRequest")
    bus = Bus(SimConfig(nsa, seed=6, identity_variant=1))
    msg = bus.codec.encode("AuthenticationRequest", bus.codec.decode(bits, "AuthenticationRequest"))
    other = new_ue(nsa, bus.ctx.pubkey, 1)
    assert other.vars["IMSI"] != new_ue(nsa, bus.ctx.pubkey, 0).vars["IMSI"]
    res = step(other, msg, bus.ctx)
    assert [m.command for m in res.outputs] == ["AuthenticationResponse"]


def test_corrupted_nas_mac_fails_integrity(nsa):
    s = script(nsa, "table1_rrc", {("Downlink", "NASSecurityModeCommand", 0): [InjectModified((("NAS_MAC", 1),))]})
    t = run_session(SimConfig(nsa, seed=1), s)
    ue = [e.detail for e in t.state_changes(UE)]
    assert any(d["new"] == "Failed" and d["reason"] == "IntegrityFailure" for d in ue)
    # the UE releases locally; the network side times out
    assert t.phase(UE) is P.Idle
    assert t.reason(CN) is FailReason.Timeout


def test_blocking_all_downlink_times_out(nsa):
    rules = {("Downlink", c.name, k): [Block()] for c in nsa.downlink_commands() for k in range(3)}
    t = run_session(SimConfig(nsa, seed=1, timeout=5), script(nsa, "table1_nas", rules))
    assert t.terminal
    assert t.reason(UE) is FailReason.Timeout
    assert not t.keys[UE]


def test_delay_is_not_loss(nsa):
    rules = {("Downlink", "AuthenticationRequest", 0): [Delay(3)]}
    t = run_session(SimConfig(nsa, seed=1), script(nsa, "table1_nas", rules))
    assert t.phase(UE) is P.AsSecured


def test_capability_is_enforced(nsa):
    s = script(nsa, "default", {("Downlink", "RRCConnectionSetup", 0): [Block()]})
    with pytest.raises(CapabilityViolation):
        run_session(SimConfig(nsa, seed=1), s)


def test_trace_jsonl_round_trip(nsa):
    t = run_session(SimConfig(nsa, seed=9))
    back = SimTrace.from_jsonl(t.to_jsonl())
    assert back.to_jsonl() == t.to_jsonl()
    assert back.steps == t.steps > 0


def _replay_nas_smc(nsa, planted):
    rules = {
        ("Downlink", "NASSecurityModeCommand", 0): [Record("smc")],
        ("Downlink", "ASSecurityModeCommand", 0): [ReplayRecorded("smc")],
    }
    return run_session(SimConfig(nsa, seed=1, planted=frozenset(planted)), script(nsa, "table1_auth", rules))


def test_stale_security_mode_command_is_rejected(nsa):
    t = _replay_nas_smc(nsa, ())
    assert any(d.detail.get("reason") == "UnexpectedMessage" for d in t.state_changes(UE))


def test_planted_rekey_fault(nsa):
    assert "nas_smc_replay_rekey" in PLANTED_FAULTS
    t = _replay_nas_smc(nsa, {"nas_smc_replay_rekey"})
    assert "planted:nas_smc_replay_rekey" in t.notes()
    assert t.phase(UE) is P.AsSecured


def test_deterministic_given_seed(nsa):
    a = run_session(SimConfig(nsa, seed=42)).to_jsonl()
    b = run_session(SimConfig(nsa, seed=42)).to_jsonl()
    assert a == b
