"""Acceptance criteria 1-9.

Each check returns ``(passed, detail)``.  Under pytest every check is one
test, and the terminal summary prints a PASS/FAIL line per criterion.  Run
the module directly (``python3 tests/test_acceptance.py``) for the same
lines without pytest.
"""

import contextlib
import math
import random
import statistics
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import pytest

from conftest import ACCEPTANCE
from genmodels import random_model
from oracles import brute_force_min_attack, command_case_count, pack

from fgfuzz import _kernels_py, kernels, load_bundled
from fgfuzz.campaign import SCENARIOS, Verdict, execute, priority_experiment, run_scenario
from fgfuzz.depgraph import build_graph, commands_of, dependency_subgraph, security_vector
from fgfuzz.fortify import apply_fortification, parse_toggles
from fgfuzz.knowledge import (
    RULES,
    TABLE1_PROFILES,
    Template,
    check_trace,
    isolate,
    saturate,
    synthesize_attack_models,
)
from fgfuzz.model import PROPERTIES, Phase, Property
from fgfuzz.planner import (
    CANONICAL,
    Scheme,
    Strategy,
    command_alphabet,
    complexity,
    plan_bit_level,
    plan_command_level,
    synthetic_family,
)
from fgfuzz.sim import keys as ks
from fgfuzz.sim.codec import Codec
from fgfuzz.sim.session import SimConfig, run_session

I = Property.Integrity


def _model():
    return load_bundled()


# ------------------------------------------------------------ criteria


def criterion_1():
    m = _model()
    g = build_graph(m)
    start = time.perf_counter()
    k = security_vector(g, "K_NASenc").as_list()
    rrc = {i.name: security_vector(g, i.name).as_list() for i in m.identifiers if m.phase_of(i.name) is Phase.RrcSetup}
    took = time.perf_counter() - start
    ok = k == [0, 5, 1, 0] and all(v == [0, 0, 0, 0] for v in rrc.values()) and took < 1.0
    return ok, f"K_NASenc={k}, {len(rrc)} RrcSetup identifiers all zero={all(v == [0, 0, 0, 0] for v in rrc.values())}, {took:.3f}s"


def criterion_2():
    m = _model()
    sub = dependency_subgraph(build_graph(m), "K_NASenc")
    direct = sorted(sub.protectors("K_NASenc", I))
    second = sorted(set().union(*(sub.protectors(n, I) for n in direct)) - set(direct))
    cmds = sorted(commands_of(sub, second))
    ok = len(direct) == 3 and len(second) == 5 and len(cmds) == 3
    return ok, f"direct={direct}, second={second}, commands={cmds}"


def criterion_3():
    m = _model()
    found = {}
    replayable = True
    for name in TABLE1_PROFILES:
        p = m.profile(name)
        for am in synthesize_attack_models(isolate(m, p), m):
            found.setdefault(am.template, am)
            replayable &= bool(am.traces) and all(check_trace(m, p, t) for t in am.traces)
    ok = set(found) == set(Template) and len(found) == 4 and replayable
    return ok, f"templates={sorted(t.value for t in found)}, traces replay={replayable}"


PLAN_TARGETS = {"RRCConnectionRequest": 9, "AuthenticationRequest": 9, "NASSecurityModeCommand": 15, "ASSecurityModeCommand": 9}


def criterion_4():
    m = _model()
    report = isolate(m, m.profile("default"))
    got = {c: len(plan_bit_level(m, report, 0, [c])) for c in PLAN_TARGETS}
    return got == PLAN_TARGETS, f"sizes={list(got.values())}"


COMPLEXITY = {
    "RRCConnectionRequest": (2**45, 2**40 + 2**4 + 1, 9),
    "AuthenticationRequest": (2**259, 2**128 + 2**128 + 2**3, 9),
    "NASSecurityModeCommand": (2**107, 2**3 + 2**32 + 2**4 + 2**4 + 2**64, 15),
    "ASSecurityModeCommand": (2**72, 2**4 + 2**4 + 2**64, 9),
}


def criterion_5():
    m = _model()
    bad = []
    for cmd, expect in COMPLEXITY.items():
        got = tuple(complexity(m, [cmd], s) for s in CANONICAL)
        if got != expect:
            bad.append(cmd)
    return not bad, "all 12 counts exact" if not bad else f"mismatch: {bad}"


def _r2(xs, ys):
    slope, icept = statistics.linear_regression(xs, ys)
    mean = statistics.fmean(ys)
    ss_res = sum((y - (slope * x + icept)) ** 2 for x, y in zip(xs, ys))
    ss_tot = sum((y - mean) ** 2 for y in ys)
    return 1 - ss_res / ss_tot


def criterion_6():
    ns = list(range(1, 13))
    logs, fg_ok = [], True
    for n in ns:
        m = synthetic_family(n, identifiers=3, width=8)
        names = [c.name for c in m.commands]
        logs.append(math.log2(complexity(m, names, Strategy.BruteForce)))
        fg_ok &= complexity(m, names, Strategy.FormalGuided) == 9 * n
    r2 = _r2(ns, logs)
    return r2 > 0.999 and fg_ok, f"R^2={r2:.6f}, FormalGuided=9n: {fg_ok}"


MITM = ("NasMitmFakeBaseStation", "AsMitmFakeBaseStation")


def criterion_7():
    m = _model()
    plain = {n: run_scenario(n, m) for n in SCENARIOS}
    checks = [
        plain["RrcRejectReleaseRepeat"].verdict in (Verdict.DisconnectDos, Verdict.Desync),
        "attacker_received:AuthenticationResponse" in plain["AuthReplayAttackerOnly"].notes,
        all(plain[n].verdict is Verdict.ImpersonationSuccess for n in MITM),
        all(plain[n].verdict is Verdict.DisconnectDos for n in ("NasDosCut", "AsDosCut")),
    ]
    f = apply_fortification(m, parse_toggles(["HashedImsiWithIntegrity", "IntegrityProtectRrcTransactionId"]))
    fort = {n: run_scenario(n, f) for n in MITM}
    checks.append(all(r.verdict in (Verdict.GracefulReject, Verdict.NoEffect) and r.engine == "Secure" for r in fort.values()))
    detail = ", ".join(f"{n}={r.verdict.value}" for n, r in plain.items())
    detail += "; fortified: " + ", ".join(f"{n}={r.verdict.value}/{r.engine}" for n, r in fort.items())
    return all(checks), detail


def criterion_8():
    m = _model()
    report = isolate(m, m.profile("default"))
    n = len(m.sequence().expanded())
    count = len(plan_command_level(m, report, None, Scheme.PriorityGuided, 0))
    count_ok = count == 3080 == command_case_count(n, len(command_alphabet(m, report)))
    trials = priority_experiment(m, trials=20, seed=0)
    wins = sum(t.guided_wins for t in trials)
    g = statistics.fmean(t.guided for t in trials)
    u = statistics.fmean(t.uniform for t in trials)
    detail = f"cases={count}; guided wins {wins}/20 (need >=15), mean cases guided={g:.1f} uniform={u:.1f}"
    return count_ok and wins >= 15, detail


@contextlib.contextmanager
def _python_kernels():
    saved = kernels.min_cover
    kernels.min_cover = _kernels_py.min_cover
    try:
        yield
    finally:
        kernels.min_cover = saved


def criterion_9():
    m = _model()
    parts = {}
    # saturation: order independence over 100 shuffled rule orders
    rng = random.Random(9)
    order = list(RULES)
    ok = True
    for name in ("default",) + TABLE1_PROFILES:
        p = m.profile(name)
        ref = saturate(m, p)
        for _ in range(100 // 5):
            rng.shuffle(order)
            ok &= saturate(m, p, order) == ref
    parts["saturation"] = ok
    # codec round trip, 10^4 payloads per command
    codec = Codec(m)
    ok = True
    for c in m.commands:
        widths = [m.identifier(f).bit_width for f in c.fields]
        for _ in range(10_000):
            vals = [rng.getrandbits(w) for w in widths]
            msg = codec.encode(c.name, dict(zip(c.fields, vals)))
            ok &= msg.bits == pack(vals, widths) and list(codec.decode_message(msg).values()) == vals
    parts["codec"] = ok
    # honest-run key agreement
    ok = True
    for seed in range(100):
        t = run_session(SimConfig(m, seed=seed))
        ok &= all(t.keys["UE"][k] == t.keys["CN"][k] for k in ks.NAS_KEYS)
        ok &= all(t.keys["UE"][k] == t.keys["BS"][k] for k in ks.AS_KEYS)
    parts["honest"] = ok
    # execute determinism
    report = isolate(m, m.profile("default"))
    plan = plan_command_level(m, report, 200, Scheme.UniformRandom, 1)
    parts["parallel"] = execute(plan, m, 1).to_json() == execute(plan, m, 8).to_json()
    # frontier vs brute force on random models, both kernel backends
    ok = True
    rng = random.Random(2024)
    for _ in range(200):
        model, plain = random_model(rng, rng.randint(1, 8))
        for backend in ("native", "python"):
            ctx = _python_kernels() if backend == "python" else contextlib.nullcontext()
            with ctx:
                g = build_graph(model)
                for node in plain[I]:
                    v = security_vector(g, node)
                    ok &= all(v[p] == brute_force_min_attack(plain[p], node) for p in PROPERTIES)
    parts["frontier"] = ok
    return all(parts.values()), ", ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in parts.items())


CRITERIA = {k: globals()[f"criterion_{k}"] for k in range(1, 10)}


# --------------------------------------------------------------- pytest


@pytest.mark.parametrize("k", list(CRITERIA))
def test_criterion(k):
    ok, detail = CRITERIA[k]()
    ACCEPTANCE[k] = (ok, detail)
    assert ok, detail


def main() -> int:
    failed = 0
    for k, fn in CRITERIA.items():
        ok, detail = fn()
        failed += not ok
        print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
