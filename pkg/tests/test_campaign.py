import dataclasses

import pytest

from fgfuzz.campaign import (
    OBSERVED_RULE,
    SCENARIOS,
    UNEXERCISED,
    CampaignResult,
    Verdict,
    classify,
    execute,
    feedback,
    parse_campaign,
    run_campaign,
    run_scenario,
    worst,
)
from fgfuzz.errors import ConfigMismatch, NonTerminalTrace, ParseError, ProvenanceMismatch, UnknownScenario
from fgfuzz.fortify import apply_fortification, toggle
from fgfuzz.knowledge import isolate
from fgfuzz.model import Property
from fgfuzz.planner import PlanKind, Scheme, plan_bit_level, plan_command_level
from fgfuzz.sim.session import SimConfig, run_session


@pytest.fixture(scope="module")
def auth_report(nsa):
    return isolate(nsa, nsa.profile("table1_auth"))


@pytest.fixture(scope="module")
def auth_bit_result(nsa, auth_report):
    plan = plan_bit_level(nsa, auth_report, 0, ["RRCConnectionRequest"])
    return execute(plan, nsa)


# -------------------------------------------------------------- grading


def test_honest_session_is_no_effect(nsa):
    assert classify(run_session(SimConfig(nsa, seed=0))) is Verdict.NoEffect


def test_step_cap_trace_is_rejected(nsa):
    t = run_session(SimConfig(nsa, seed=0, step_cap=3))
    with pytest.raises(NonTerminalTrace):
        classify(t)


def test_key_exposure_is_graded(nsa):
    t = run_session(SimConfig(nsa, seed=0))
    leaked = dataclasses.replace(t, attacker=dict(t.attacker, derived={"K_NASenc": hex(t.keys["UE"]["K_NASenc"])}))
    assert classify(leaked) is Verdict.KeyExposure


def test_worst_picks_most_severe():
    assert worst([Verdict.NoEffect, Verdict.Desync, Verdict.GracefulReject]) is Verdict.Desync
    assert worst([]) is Verdict.NoEffect


# ------------------------------------------------------------- execution


def test_connection_request_plan_finds_something(auth_bit_result):
    assert len(auth_bit_result.results) == 9
    assert auth_bit_result.findings()
    by_id = {r.case_id.split("-", 1)[1]: r.verdict for r in auth_bit_result.results}
    assert by_id["RRCConnectionRequest-establishmentCause-IllegalRandom"] is Verdict.DisconnectDos


def test_empty_plan_gives_zero_counts(nsa, auth_report):
    plan = plan_bit_level(nsa, auth_report, 0, ["RRCConnectionRequest"])
    plan.cases = []
    res = execute(plan, nsa)
    assert set(res.counts().values()) == {0}
    assert res.summary_csv().splitlines()[1:] == [f"{v.value},0" for v in Verdict]


def test_parallelism_does_not_change_results(nsa, auth_report):
    plan = plan_command_level(nsa, auth_report, 40, Scheme.UniformRandom, 3)
    a = execute(plan, nsa, parallelism=1)
    b = execute(plan, nsa, parallelism=8)
    assert a.to_json() == b.to_json()


def test_plan_for_other_model_is_rejected(nsa, auth_report):
    plan = plan_bit_level(nsa, auth_report, 0, ["RRCConnectionRequest"])
    with pytest.raises(ConfigMismatch):
        execute(plan, apply_fortification(nsa, [toggle("HashedImsi")]))


def test_result_round_trips(auth_bit_result):
    back = CampaignResult.from_json(auth_bit_result.to_json())
    assert back.to_json() == auth_bit_result.to_json()
    rows = auth_bit_result.to_csv().splitlines()
    assert rows[0] == "case_id,subject,verdict,notes"
    assert len(rows) == 10


# --------------------------------------------------------------- feedback


def test_finding_moves_uncertain_pair_to_attack(auth_report, auth_bit_result):
    pair = ("establishmentCause", Property.Integrity)
    assert auth_report.region(*pair) == "uncertain"
    after = feedback(auth_bit_result, auth_report)
    assert after.region(*pair) == "attack"
    assert after.attack[pair].steps[0].rule == OBSERVED_RULE
    assert any("confirmed by" in n for n in after.annotations[pair])


def test_feedback_only_grows_the_attack_region(auth_report, auth_bit_result):
    after = feedback(auth_bit_result, auth_report)
    assert set(auth_report.attack) <= set(after.attack)
    assert set(after.uncertain) <= set(auth_report.uncertain)
    assert after.secure == auth_report.secure
    # applying the same evidence twice changes nothing further
    again = feedback(dataclasses.replace(auth_bit_result, provenance=dict(auth_bit_result.provenance, report_id=after.report_id)), after)
    assert again.to_json() == after.to_json()


def test_quiet_cases_mark_pairs_unexercised(nsa, auth_report, auth_bit_result):
    quiet = [r for r in auth_bit_result.results if not r.verdict.is_finding]
    res = CampaignResult(auth_bit_result.provenance, quiet)
    after = feedback(res, auth_report)
    assert after.uncertain == auth_report.uncertain
    marked = [p for p, notes in after.annotations.items() if any(n.startswith(UNEXERCISED) for n in notes)]
    assert marked and all(p in after.uncertain for p in marked)


def test_empty_result_leaves_report_unchanged(auth_report, auth_bit_result):
    empty = CampaignResult(auth_bit_result.provenance, [])
    assert feedback(empty, auth_report).to_json() == auth_report.to_json()


def test_feedback_checks_provenance(nsa, auth_report, auth_bit_result):
    other = isolate(nsa, nsa.profile("table1_rrc"))
    with pytest.raises(ProvenanceMismatch):
        feedback(auth_bit_result, other)
    foreign = dataclasses.replace(auth_bit_result, provenance=dict(auth_bit_result.provenance, model_id="0" * 16))
    with pytest.raises(ProvenanceMismatch):
        feedback(foreign, auth_report)


# -------------------------------------------------------------- scenarios

EXPECTED = {
    "RrcRejectReleaseRepeat": Verdict.DisconnectDos,
    "AuthReplayAttackerOnly": Verdict.DisconnectDos,
    "AuthReplaySameCommandRace": Verdict.GracefulReject,
    "AuthReplayDifferentCommandRace": Verdict.DisconnectDos,
    "NasMitmFakeBaseStation": Verdict.ImpersonationSuccess,
    "NasDosCut": Verdict.DisconnectDos,
    "AsMitmFakeBaseStation": Verdict.ImpersonationSuccess,
    "AsDosCut": Verdict.DisconnectDos,
}


@pytest.mark.parametrize("name", sorted(SCENARIOS))
def test_scenario_agrees_with_engine(nsa, name):
    r = run_scenario(name, nsa)
    assert r.verdict is EXPECTED[name]
    assert r.engine == "AttackTraceFound"


@pytest.mark.parametrize("name", ["NasMitmFakeBaseStation", "NasDosCut", "AsMitmFakeBaseStation", "AsDosCut"])
def test_hashed_identity_with_integrity_blocks_mitm(nsa, name):
    f = apply_fortification(nsa, [toggle("HashedImsiWithIntegrity")])
    assert run_scenario(name, f).verdict is Verdict.GracefulReject


def test_unknown_scenario():
    with pytest.raises(UnknownScenario):
        run_scenario("Nope")


# ---------------------------------------------------------- campaign files

SCRIPT = """
[campaign]
profile = table1_rrc
level = script
seed = 4

[action]
direction = Downlink
command = NASSecurityModeCommand
do = InjectModified
fields = NAS_MAC=1
"""


def test_parse_campaign_defaults():
    cfg = parse_campaign("[campaign]\nlevel = command\nbudget = 12\nplanted = as_smc_before_nas\n")
    assert (cfg.level, cfg.budget, cfg.planted, cfg.scheme) == ("command", 12, ("as_smc_before_nas",), "priority")


@pytest.mark.parametrize(
    "text",
    [
        "[campaign]\nlevel = sideways\n",
        "[campaign]\nscheme = best\n",
        "[campaign]\nseed = lots\n",
        "[campaign]\nplanted = nope\n",
        "[campaign]\ncolour = red\n",
        "[campaign]\nlevel = script\n",
        "[campaign]\n[campaign]\n",
        SCRIPT.replace("InjectModified", "Explode"),
    ],
)
def test_bad_campaign_files(text):
    with pytest.raises(ParseError):
        parse_campaign(text)


def test_script_campaign_runs_one_session():
    res = run_campaign(parse_campaign(SCRIPT))
    assert res.kind == "script"
    assert [r.verdict for r in res.results] == [Verdict.GracefulReject]
    assert "reject:NASSecurityModeCommand" in res.results[0].notes


def test_command_campaign_from_config():
    res = run_campaign(parse_campaign("[campaign]\nlevel = command\nbudget = 5\n"))
    assert res.kind == PlanKind.Command.value
    assert len(res.results) == 5
