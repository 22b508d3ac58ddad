import random

import pytest
from hypothesis import given, settings, strategies as st

from fgfuzz.fortify import apply_fortification, toggle
from fgfuzz.knowledge import (
    RULES,
    TABLE1_PROFILES,
    AttackTrace,
    AttackTraceFound,
    CanModify,
    CanReplay,
    Fact,
    FactKind,
    IsolationReport,
    Knows,
    Secure,
    Step,
    Template,
    Uncertain,
    check_trace,
    isolate,
    saturate,
    synthesize_across,
    synthesize_attack_models,
    verdict,
)
from fgfuzz.errors import UnknownIdentifier
from fgfuzz.model import PROPERTIES, AssumptionProfile, Capability, Phase, Property

from oracles import naive_closure

E, I_, R, M = Capability.Eavesdrop, Capability.Inject, Capability.Replay, Capability.MitmRelay


def prof(known=(), caps=()):
    return AssumptionProfile("t", frozenset(known), frozenset(caps))


# ----------------------------------------------------------- saturation


def test_saturation_is_independent_of_rule_order(nsa):
    p = nsa.profile("table1_nas")
    ref = saturate(nsa, p)
    rng = random.Random(7)
    ids = list(RULES)
    for _ in range(20):
        rng.shuffle(ids)
        assert saturate(nsa, p, ids) == ref


caps_st = st.sets(st.sampled_from(list(Capability)))


@settings(max_examples=25)
@given(caps_st, caps_st, st.sets(st.sampled_from(["IMSI", "K", "C_RNTI", "RAND"])))
def test_saturation_is_monotone_in_the_profile(nsa, a, b, known):
    small = saturate(nsa, prof(known, a))
    big = saturate(nsa, prof(set(known) | {"SN_id"}, a | b))
    assert small <= big


@pytest.mark.parametrize("known", [(), ("IMSI",), ("IMSI", "K"), ("K", "SN_id")])
def test_knows_facts_match_naive_closure(nsa, known):
    # without invertible KDFs or ciphers broken open, Knows equals the
    # plain eavesdrop-plus-derivation fixpoint
    wire = {f for c in nsa.commands for f in c.fields}
    unconf = {i.name for i in nsa.identifiers if nsa.protection(i.name).confidentiality is None}
    kdfs = [(k.output, k.inputs) for k in nsa.kdfs]
    got = {f.subject for f in saturate(nsa, prof(known, {E})) if f.kind is FactKind.Knows}
    expect = naive_closure(set(known), wire, unconf, kdfs, {"Eavesdrop"})
    # decryption (R4) can only add to the naive set
    assert expect <= got


def test_replay_of_auth_request_needs_replay(nsa):
    assert CanReplay("AuthenticationRequest") in saturate(nsa, prof((), {E, R}))
    assert CanReplay("AuthenticationRequest") not in saturate(nsa, prof((), {E}))


def test_nas_key_needs_subscriber_key(nsa):
    assert Knows("K_NASenc") not in saturate(nsa, prof({"IMSI"}, {E, M}))
    assert Knows("K_NASenc") in saturate(nsa, prof({"IMSI", "K"}, {E, M}))


def test_inject_alone_learns_nothing(nsa):
    facts = saturate(nsa, prof((), {I_}))
    assert not [f for f in facts if f.kind is FactKind.Knows]
    assert CanModify("UE_Identity") in facts


# -------------------------------------------------------------- verdicts


def test_ue_identity_leaks_in_one_eavesdrop_step(nsa):
    v = verdict(nsa, nsa.profile("default"), "UE_Identity", Property.Confidentiality)
    assert isinstance(v, AttackTraceFound)
    assert [s.rule for s in v.trace.steps] == ["R1"]
    assert check_trace(nsa, nsa.profile("default"), v.trace)


@pytest.mark.parametrize("kind", ["HashedImsi", "HashedImsiWithIntegrity", "AsymmetricEncryptionPreAuth"])
def test_identity_fortifications_hide_ue_identity(nsa, kind):
    f = apply_fortification(nsa, [toggle(kind)])
    assert verdict(f, f.profile("default"), "UE_Identity", Property.Confidentiality) == Secure()


def test_opaque_secret_is_uncertain(nsa):
    # radioResourceConfigDedicated has an opaque domain
    p = prof((), {E})
    v = verdict(nsa, p, "radioResourceConfigDedicated", Property.Integrity)
    assert isinstance(v, Uncertain)
    assert "Inject" in v.reason


def test_uncertain_names_missing_capability(nsa):
    r = isolate(nsa, nsa.profile("table1_auth"))
    assert r.region("establishmentCause", Property.Integrity) == "uncertain"
    assert "Inject" in r.uncertain[("establishmentCause", Property.Integrity)]


def test_unknown_identifier_rejected(nsa):
    with pytest.raises(UnknownIdentifier):
        verdict(nsa, nsa.profile("default"), "K_FAKE", Property.Integrity)


# ---------------------------------------------------------- trace checker


def test_every_attack_trace_checks(nsa):
    for name in TABLE1_PROFILES:
        p = nsa.profile(name)
        r = isolate(nsa, p)
        for tr in r.attack.values():
            assert check_trace(nsa, p, tr)


def test_tampered_traces_are_rejected(nsa):
    p = nsa.profile("default")
    good = AttackTrace(Knows("UE_Identity"), (Step("R1", (), Knows("UE_Identity")),))
    assert check_trace(nsa, p, good)
    # wrong rule, missing capability, unproven premise, wrong goal
    assert not check_trace(nsa, p, AttackTrace(Knows("UE_Identity"), (Step("R6", (), Knows("UE_Identity")),)))
    assert not check_trace(nsa, prof((), {I_}), good)
    assert not check_trace(nsa, p, AttackTrace(Knows("K_ASME"), (Step("R2", (Knows("K"), Knows("RAND"), Knows("SN_id")), Knows("K_ASME")),)))
    assert not check_trace(nsa, p, AttackTrace(Knows("IMSI"), good.steps))


# ------------------------------------------------------------- isolation


def test_isolation_partitions_every_pair(nsa):
    r = isolate(nsa, nsa.profile("table1_rrc"))
    n = len(nsa.identifiers) * len(PROPERTIES)
    assert len(r.secure) + len(r.attack) + len(r.uncertain) == n
    assert not (set(r.secure) & set(r.attack))
    assert not (set(r.attack) & set(r.uncertain))


def test_default_profile_exposes_all_four_phases(nsa):
    r = isolate(nsa, nsa.profile("default"))
    assert {nsa.phase_of(i) for i, _ in r.attack} == set(Phase)


def test_rrc_setup_identifiers_in_attack_region(nsa):
    r = isolate(nsa, nsa.profile("default"))
    for i in nsa.identifiers:
        if nsa.phase_of(i.name) is Phase.RrcSetup and nsa.protection(i.name).confidentiality is None:
            assert r.region(i.name, Property.Confidentiality) == "attack"


def test_report_json_round_trip(nsa):
    r = isolate(nsa, nsa.profile("table1_auth"))
    back = IsolationReport.from_json(r.to_json())
    assert back.to_json() == r.to_json()
    assert back.report_id == r.report_id
    assert Fact.parse("CanReplay(AuthenticationRequest)") == CanReplay("AuthenticationRequest")


# --------------------------------------------------------- attack models


def test_four_templates_across_table_profiles(nsa):
    found = synthesize_across(nsa, [nsa.profile(n) for n in TABLE1_PROFILES])
    assert list(found) == list(Template)
    for name in TABLE1_PROFILES:
        p = nsa.profile(name)
        for am in synthesize_attack_models(isolate(nsa, p), nsa):
            assert am.traces
            assert all(check_trace(nsa, p, t) for t in am.traces)


@pytest.mark.parametrize(
    "caps,known,exposed",
    [({E, M}, {"IMSI"}, False), ({E, M}, set(), False), ({I_, R}, set(), False), ({E}, {"K"}, True), ({E, M}, {"K"}, True), ({M}, {"IMSI", "K"}, False)],
)
def test_nas_key_exposure_follows_subscriber_key(nsa, caps, known, exposed):
    # the NAS keys derive from K plus values sent in clear, so K and an
    # eavesdropping position are both needed; IMSI alone gives nothing
    r = isolate(nsa, prof(known, caps))
    kinds = {am.template for am in synthesize_attack_models(r, nsa)}
    assert (Template.NasKeyExposure in kinds) is exposed


def test_templates_track_profiles(nsa):
    got = {n: [a.template for a in synthesize_attack_models(isolate(nsa, nsa.profile(n)), nsa)] for n in TABLE1_PROFILES}
    assert got["table1_rrc"] == [Template.RrcModification]
    assert got["table1_auth"] == [Template.AuthRequestDosReplay]
    assert Template.NasKeyExposure in got["table1_nas"]
    assert Template.AsKeyExposure in got["table1_as"]
