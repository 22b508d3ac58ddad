"""Run fuzz plans and attack scenarios against the simulator and grade them."""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import json
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .errors import ConfigMismatch, NonTerminalTrace, ParseError, ProvenanceMismatch, UnknownScenario
from .fortify import apply_fortification, parse_toggles
from .knowledge import AttackTrace, CanModify, CanReplay, IsolationReport, Step, isolate, verdict as engine_verdict
from .model import Direction, Property, ProtocolModel
from .modelfile import load_bundled, load_model, read_blocks
from .planner import (
    BitLevelCase,
    CommandLevelCase,
    FuzzPlan,
    Mutation,
    PlanKind,
    PriorityScorer,
    Scheme,
    case_seed,
    command_alphabet,
    enumerate_command_cases,
    order_cases,
    plan_bit_level,
    plan_command_level,
)
from .sim import keys as ks
from .sim.codec import Codec, WireMessage
from .sim.interceptor import (
    Attacker,
    Block,
    Custom,
    Delay,
    DownlinkSchedule,
    Forward,
    InjectForged,
    InjectModified,
    Interceptor,
    InterceptorScript,
    Record,
    ReplayRecorded,
)
from .sim.parties import BS, CN, PARTIES, PLANTED_FAULTS, UE, PartyPhase, new_ue, route
from .sim.session import SimConfig, SimTrace, pubkey_value, run_session


class Verdict(enum.Enum):
    """Outcome classes, most severe first."""

    DisconnectDos = "DisconnectDos"
    ImpersonationSuccess = "ImpersonationSuccess"
    KeyExposure = "KeyExposure"
    IdentityLeakage = "IdentityLeakage"
    Desync = "Desync"
    GracefulReject = "GracefulReject"
    NoEffect = "NoEffect"

    @property
    def severity(self) -> int:
        return len(VERDICT_ORDER) - VERDICT_ORDER.index(self)

    @property
    def is_finding(self) -> bool:
        return self not in (Verdict.NoEffect, Verdict.GracefulReject)


VERDICT_ORDER = list(Verdict)


def worst(verdicts: Iterable[Verdict]) -> Verdict:
    vs = list(verdicts)
    return min(vs, key=VERDICT_ORDER.index) if vs else Verdict.NoEffect


# ------------------------------------------------------------------ grading

P = PartyPhase
CONNECTED = {p.value for p in (P.RrcRequested, P.RrcComplete, P.AuthPending, P.AuthDone, P.NasSecured, P.AsSecured)}


def _shared_keys_differ(trace: SimTrace) -> bool:
    pairs = [(UE, CN, "K_NASint"), (UE, BS, "K_RRCint")]
    for a, b, k in pairs:
        ka, kb = trace.keys[a].get(k), trace.keys[b].get(k)
        if ka is not None and kb is not None and ka != kb:
            return True
    return False


def classify(trace: SimTrace) -> Verdict:
    """Grade a finished trace; the most severe matching class wins."""
    if not trace.terminal:
        raise NonTerminalTrace("trace stopped at the step cap")
    ue_phase, ue_reason = trace.phases[UE]
    reached = any(e.detail.get("new") in CONNECTED for e in trace.state_changes(UE))
    if reached and (ue_phase is P.Disconnected or (ue_phase is P.Failed and ue_reason is not None and ue_reason.value == "Timeout")):
        return Verdict.DisconnectDos
    for e in trace.state_changes():
        if e.detail.get("new") in (P.NasSecured.value, P.AsSecured.value) and e.detail.get("cause") == "attacker":
            return Verdict.ImpersonationSuccess
    honest_keys = {v for d in trace.keys.values() for v in d.values()}
    if any(int(v, 16) in honest_keys for v in trace.attacker.get("derived", {}).values()):
        return Verdict.KeyExposure
    if trace.attacker.get("recorded_identities"):
        return Verdict.IdentityLeakage
    phases = [trace.phases[p][0] for p in PARTIES]
    if all(ph not in (P.Failed, P.Idle, P.Disconnected) for ph in phases):
        if len(set(phases)) > 1 or _shared_keys_differ(trace):
            return Verdict.Desync
    rejected = any(n.startswith("reject:") for n in trace.notes()) or any(
        e.detail.get("new") == "Failed" and e.detail.get("reason") not in (None, "Timeout") for e in trace.state_changes()
    )
    if rejected and ue_phase is P.Idle:
        return Verdict.GracefulReject
    return Verdict.NoEffect


def trace_digest(traces: Sequence[SimTrace]) -> str:
    h = hashlib.sha256()
    for t in traces:
        h.update(t.to_jsonl().encode())
    return h.hexdigest()[:16]


# ------------------------------------------------------------------ results


@dataclass(frozen=True)
class CaseResult:
    case_id: str
    verdict: Verdict
    subject: str
    identifiers: tuple  # identifiers whose (identifier, property) pairs the case exercises
    notes: tuple = ()
    sessions: int = 1
    digest: str = ""  # trace reference: digest of the case's JSONL traces
    seed: int = 0
    duration: int = 0  # logical steps summed over the case's sessions

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "verdict": self.verdict.value,
            "subject": self.subject,
            "identifiers": list(self.identifiers),
            "notes": list(self.notes),
            "sessions": self.sessions,
            "digest": self.digest,
            "seed": self.seed,
            "duration": self.duration,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CaseResult":
        return cls(
            d["case_id"], Verdict(d["verdict"]), d["subject"], tuple(d["identifiers"]), tuple(d["notes"]),
            d["sessions"], d["digest"], d.get("seed", 0), d.get("duration", 0),
        )


def exercised_pairs(kind: str, r: CaseResult) -> list[tuple[str, Property]]:
    """(identifier, property) pairs a case puts to the test.

    A bit-level case tests modification (integrity) of its identifier; a
    command-level Repeat or Reorder tests replay (accounting) of the command's
    fields, an Insert or Replace tests origin (authentication).
    """
    if kind == PlanKind.Bit.value:
        prop = Property.Integrity
    else:
        mut = r.case_id.split("-")[1]
        prop = Property.Accounting if mut in (Mutation.Repeat.value, Mutation.Reorder.value) else Property.Authentication
    return [(i, prop) for i in r.identifiers]


@dataclass
class CampaignResult:
    provenance: dict
    results: list

    @property
    def kind(self) -> str:
        return self.provenance.get("kind", PlanKind.Bit.value)

    def counts(self) -> dict[str, int]:
        out = {v.value: 0 for v in Verdict}
        for r in self.results:
            out[r.verdict.value] += 1
        return out

    def findings(self) -> list[CaseResult]:
        return [r for r in self.results if r.verdict.is_finding]

    @property
    def feedback(self) -> set:
        """Pairs some finding confirmed as vulnerable."""
        return {pair for r in self.findings() for pair in exercised_pairs(self.kind, r)}

    def to_dict(self) -> dict:
        return {
            "provenance": self.provenance,
            "counts": self.counts(),
            "feedback": sorted([i, p.value] for i, p in self.feedback),
            "results": [r.to_dict() for r in self.results],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CampaignResult":
        d = json.loads(text)
        return cls(d["provenance"], [CaseResult.from_dict(r) for r in d["results"]])

    def to_csv(self) -> str:
        """One row per case."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["case_id", "subject", "verdict", "notes"])
        for r in self.results:
            w.writerow([r.case_id, r.subject, r.verdict.value, ";".join(r.notes)])
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["verdict", "count"])
        for v, n in self.counts().items():
            w.writerow([v, n])
        return buf.getvalue()

    def render(self) -> str:
        lines = [f"{len(self.results)} case(s), {len(self.findings())} finding(s)"]
        lines += [f"  {v:<22}{n}" for v, n in self.counts().items() if n]
        for r in self.findings():
            lines.append(f"  {r.case_id}: {r.verdict.value}" + (f" [{', '.join(r.notes)}]" if r.notes else ""))
        return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ config

ACTION_KINDS = ("Forward", "Block", "Record", "ReplayRecorded", "InjectModified", "Delay", "InjectForged")


@dataclass(frozen=True)
class ActionSpec:
    """One ``[action]`` block of a campaign file, before it is bound to an attacker."""

    direction: Direction
    command: str
    occurrence: int
    action: str
    tag: str = "rec"
    times: int = 1
    ticks: int = 1
    inject: str = ""
    fields: tuple = ()  # ((name, value), ...)
    line: int = 0

    def build(self):
        if self.action == "Forward":
            return Forward()
        if self.action == "Block":
            return Block()
        if self.action == "Record":
            return Record(self.tag)
        if self.action == "ReplayRecorded":
            return ReplayRecorded(self.tag, times=self.times)
        if self.action == "InjectModified":
            return InjectModified(self.fields)
        if self.action == "Delay":
            return Delay(self.ticks)
        return InjectForged(self.inject, self.fields, self.times)


@dataclass
class CampaignConfig:
    model: str = "bundled"
    fortify: tuple = ()
    profile: str = "default"
    level: str = "bit"  # bit, command or script
    scheme: str = "priority"
    budget: Optional[int] = None
    seed: int = 0
    parallelism: int = 1
    planted: tuple = ()
    timeout: int = 10
    plan: Optional[str] = None  # path of a saved plan; built from the other keys when absent
    actions: list = field(default_factory=list)

    def load_model(self) -> ProtocolModel:
        m = load_bundled() if self.model == "bundled" else load_model(self.model)
        if self.fortify:
            m = apply_fortification(m, parse_toggles(self.fortify))
        return m

    def script(self, model: ProtocolModel) -> InterceptorScript:
        """Interceptor for a ``level = script`` campaign, under the campaign's profile."""
        rules: dict = {}
        for a in self.actions:
            model.command(a.command)
            if a.inject:
                model.command(a.inject)
            rules.setdefault((a.direction, a.command, a.occurrence), []).append(a.build())
        return InterceptorScript(attacker_for(model, self.profile), rules)


_INT_KEYS = ("seed", "parallelism", "timeout", "budget")


def _int(value: str, key: str, line: int) -> int:
    try:
        return int(value, 0)
    except ValueError:
        raise ParseError(f"{key} must be an integer", line, 1) from None


def _parse_action(block) -> ActionSpec:
    known = {"direction", "command", "occurrence", "do", "tag", "times", "ticks", "inject", "fields"}
    for key, (_, line) in block.entries.items():
        if key not in known:
            raise ParseError(f"unknown action key {key!r}", line, 1)
    kind = block.need("do")
    if kind not in ACTION_KINDS:
        raise ParseError(f"unknown action {kind!r}; expected one of {', '.join(ACTION_KINDS)}", block.line_of("do"), 1)
    try:
        direction = Direction(block.need("direction"))
    except ValueError:
        raise ParseError("direction must be Uplink or Downlink", block.line_of("direction"), 1) from None
    pairs = []
    for item in (block.get("fields") or "").split(","):
        if not item.strip():
            continue
        name, eq, value = item.partition("=")
        if not eq:
            raise ParseError(f"expected name=value in fields, got {item.strip()!r}", block.line_of("fields"), 1)
        pairs.append((name.strip(), _int(value.strip(), "field value", block.line_of("fields"))))
    if kind == "InjectForged" and not block.get("inject"):
        raise ParseError("InjectForged needs an 'inject' command", block.line, 1)
    return ActionSpec(
        direction,
        block.need("command"),
        _int(block.get("occurrence", "0"), "occurrence", block.line_of("occurrence")),
        kind,
        block.get("tag", "rec"),
        _int(block.get("times", "1"), "times", block.line_of("times")),
        _int(block.get("ticks", "1"), "ticks", block.line_of("ticks")),
        block.get("inject", ""),
        tuple(pairs),
        block.line,
    )


def parse_campaign(text: str) -> CampaignConfig:
    """Parse one ``[campaign]`` block plus any ``[action]`` blocks.

    Campaign keys mirror :class:`CampaignConfig`; each action block adds one
    interceptor rule for ``level = script`` runs.
    """
    blocks = read_blocks(text, {"campaign", "action"})
    heads = [b for b in blocks if b.kind == "campaign"]
    if len(heads) != 1:
        raise ParseError("expected exactly one [campaign] section", heads[1].line if len(heads) > 1 else 1)
    entries = heads[0].entries
    cfg = CampaignConfig()
    known = set(CampaignConfig.__dataclass_fields__) - {"actions"}
    for key, (value, line) in entries.items():
        if key not in known:
            raise ParseError(f"unknown campaign key {key!r}", line, 1)
        if key in ("fortify", "planted"):
            setattr(cfg, key, tuple(v.strip() for v in value.split(",") if v.strip()))
        elif key in _INT_KEYS:
            setattr(cfg, key, _int(value, key, line))
        else:
            setattr(cfg, key, value)
    if cfg.level not in ("bit", "command", "script"):
        raise ParseError("level must be bit, command or script", heads[0].line_of("level"), 1)
    try:
        Scheme(cfg.scheme)
    except ValueError:
        raise ParseError("scheme must be uniform or priority", heads[0].line_of("scheme"), 1) from None
    bad = set(cfg.planted) - set(PLANTED_FAULTS)
    if bad:
        raise ParseError(f"unknown planted fault(s): {', '.join(sorted(bad))}", entries["planted"][1], 1)
    cfg.actions = [_parse_action(b) for b in blocks if b.kind == "action"]
    if cfg.level == "script" and not cfg.actions:
        raise ParseError("a script campaign needs at least one [action] block", heads[0].line, 1)
    return cfg


# ------------------------------------------------------------------ recording


@dataclass
class _Recorder(Interceptor):
    downlink: list = field(default_factory=list)
    uplink: list = field(default_factory=list)
    attacker: Optional[Attacker] = None

    def intercept(self, msg: WireMessage, bus) -> list[WireMessage]:
        if bus.model.command(msg.command).direction is Direction.Downlink:
            self.downlink.append(msg)
        else:
            self.uplink.append(msg)
        return [msg]


def session_seed(seed: int, index: int) -> int:
    return seed * 1009 + index


@dataclass
class Recording:
    """Honest downlink of every session of the base sequence."""

    commands: tuple  # per-session expected downlink commands
    sessions: list  # session -> list of WireMessage
    uplink: list

    def instance(self, command: str, session: int) -> Optional[WireMessage]:
        for m in self.sessions[session]:
            if m.command == command:
                return m
        return None


def record(model: ProtocolModel, seed: int = 0, sequence: Optional[str] = None, planted: Iterable[str] = ()) -> Recording:
    seq = model.sequence(sequence)
    sessions, uplink = [], []
    for i in range(seq.sessions):
        rec = _Recorder()
        run_session(SimConfig(model, seed=session_seed(seed, i), planted=frozenset(planted)), rec)
        sessions.append(rec.downlink)
        uplink.append(rec.uplink)
    return Recording(tuple(seq.commands), sessions, uplink)


# ------------------------------------------------------------------ execution


def _forged(codec: Codec, command: str) -> WireMessage:
    model = codec.model
    vals = {}
    for f in codec.layout(command)[0]:
        ident = model.identifier(f)
        vals[f] = ident.nominal if ident.nominal is not None else ident.smallest_legal()
    return codec.encode(command, vals, origin="attacker", cause="attacker", sender="ATTACKER", receiver=UE)


def _inject_for(codec: Codec, recording: Recording, command: str, session: int) -> WireMessage:
    """A stale recorded instance from the previous session, else a forgery."""
    prev = (session - 1) % len(recording.sessions)
    m = recording.instance(command, prev)
    return m if m is not None else _forged(codec, command)


def command_slots(case: CommandLevelCase, recording: Recording, codec: Codec) -> dict[int, list]:
    """Per affected session, the downlink slot list the case prescribes."""
    per = len(recording.commands)
    n = len(case.base_sequence)
    slots: dict[int, list] = {}

    def get(s: int) -> list:
        return slots.setdefault(s, [("g", k) for k in range(per)])

    p = case.position
    s, loc = (p // per, p % per) if p < n else ((n - 1) // per, per)
    if case.mutation is Mutation.Insert:
        get(s).insert(loc, ("m", _inject_for(codec, recording, case.subject_command, s)))
    elif case.mutation is Mutation.Replace:
        get(s)[loc] = ("m", _inject_for(codec, recording, case.subject_command, s))
    elif case.mutation is Mutation.Repeat:
        get(s).insert(loc + 1, ("g", loc))
    else:
        q = case.target
        sq, lq = q // per, q % per
        item = get(s).pop(loc)
        if sq == s:
            get(s).insert(lq, item)
        else:
            stale = recording.sessions[s][loc] if loc < len(recording.sessions[s]) else _forged(codec, case.subject_command)
            get(sq).insert(lq, ("m", stale))
    return slots


def run_command_case(model: ProtocolModel, case: CommandLevelCase, recording: Recording, seed: int = 0, planted: Iterable[str] = (), timeout: int = 10) -> tuple[Verdict, list[SimTrace]]:
    """Run the sessions a command-level case touches; ``seed`` is the case seed."""
    codec = Codec(model)
    traces = []
    for s, slots in sorted(command_slots(case, recording, codec).items()):
        sched = DownlinkSchedule(tuple(recording.commands), slots)
        cfg = SimConfig(model, seed=session_seed(seed, s), planted=frozenset(planted), timeout=timeout)
        traces.append(run_session(cfg, sched))
    return worst(classify(t) for t in traces), traces


def _honest_commands(model: ProtocolModel) -> set[str]:
    rec = _Recorder()
    run_session(SimConfig(model), rec)
    return {m.command for m in rec.downlink + rec.uplink}


def bit_interceptor(model: ProtocolModel, case: BitLevelCase, honest: set[str]) -> Interceptor:
    attacker = Attacker(Codec(model), enforce=False)
    cmd = model.command(case.command)
    if case.passthrough:
        return InterceptorScript(attacker)
    change = InjectModified(((case.identifier, case.payload),))
    if case.command in honest:
        return InterceptorScript(attacker, {(cmd.direction, case.command, 0): [change]})
    # not part of an honest attach: carry the payload in a forged instance
    # once the UE is connected
    values = ((case.identifier, case.payload),)
    trigger = (Direction.Downlink, "RRCConnectionSetup", 0) if cmd.direction is Direction.Downlink else (Direction.Uplink, "AttachRequest", 0)
    return InterceptorScript(attacker, {trigger: [Forward(), _raw_forge_action(case.command, values)]})


def _raw_forge_action(command: str, values: tuple) -> Custom:
    """Forged message whose overridden fields are taken as on-wire values."""
    return Custom(lambda att, msg: [_raw_forge(att, command, dict(values))], "forge:" + command)


def _raw_forge(att: Attacker, command: str, values: dict) -> WireMessage:
    codec = att.codec
    vals = {}
    for f in codec.layout(command)[0]:
        ident = codec.model.identifier(f)
        vals[f] = values[f] if f in values else (ident.nominal if ident.nominal is not None else ident.smallest_legal())
    return codec.encode(
        command,
        codec.fill_hashes(command, vals),
        origin="attacker",
        cause="attacker",
        sender="ATTACKER",
        receiver=route(codec.model, command, "ATTACKER"),
    )


def run_bit_case(model: ProtocolModel, case: BitLevelCase, seed: int = 0, planted: Iterable[str] = (), timeout: int = 10, honest: Optional[set] = None) -> tuple[Verdict, list[SimTrace]]:
    """Run one session with the case's field rewrite; ``seed`` is the case seed."""
    honest = _honest_commands(model) if honest is None else honest
    cfg = SimConfig(model, seed=seed, planted=frozenset(planted), timeout=timeout)
    trace = run_session(cfg, bit_interceptor(model, case, honest))
    return classify(trace), [trace]


def _notes(traces: Sequence[SimTrace]) -> tuple:
    return tuple(sorted({n for t in traces for n in t.notes()}))


def _exercised(model: ProtocolModel, case) -> tuple:
    if isinstance(case, BitLevelCase):
        return (case.identifier,)
    return tuple(model.command(case.subject_command).fields)


def execute(
    plan: FuzzPlan,
    model: ProtocolModel,
    parallelism: int = 1,
    seed: Optional[int] = None,
    planted: Iterable[str] = (),
    timeout: int = 10,
) -> CampaignResult:
    """Run every case of ``plan``; results come back ordered by case id.

    Each case runs in fresh sessions seeded from the campaign seed mixed
    with its case id, so the outcome does not depend on ``parallelism``.
    """
    if plan.provenance.get("model_id") != model.model_id:
        raise ConfigMismatch(f"plan targets model {plan.provenance.get('model_id')}, simulator runs {model.model_id}")
    if parallelism < 1:
        raise ValueError("parallelism must be at least 1")
    seed = int(plan.provenance.get("seed", 0)) if seed is None else seed
    planted = tuple(sorted(planted))
    if plan.kind is PlanKind.Command:
        seq = plan.cases[0].base_sequence if plan.cases else ()
        recording = record(model, seed, planted=planted)
        if plan.cases and tuple(c for s in [recording.commands] * (len(seq) // max(1, len(recording.commands))) for c in s) != tuple(seq):
            raise ConfigMismatch("plan base sequence does not match the model's recording")

        def run(case):
            v, traces = run_command_case(model, case, recording, case_seed(seed, case.case_id), planted, timeout)
            return case, v, traces
    else:
        honest = _honest_commands(model)

        def run(case):
            v, traces = run_bit_case(model, case, case_seed(seed, case.case_id), planted, timeout, honest)
            return case, v, traces

    if parallelism == 1:
        outcomes = [run(c) for c in plan.cases]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(run, plan.cases))
    results = [
        CaseResult(
            c.case_id, v, c.subject, _exercised(model, c), _notes(tr), len(tr), trace_digest(tr),
            case_seed(seed, c.case_id), sum(t.steps for t in tr),
        )
        for c, v, tr in outcomes
    ]
    results.sort(key=lambda r: r.case_id)
    prov = dict(plan.provenance, kind=plan.kind.value, planted=list(planted), executed=len(results))
    return CampaignResult(prov, results)


# ------------------------------------------------------------------ feedback

OBSERVED_RULE = "Observed"

UNEXERCISED = "empirically unexercised"


def feedback(result: CampaignResult, report: IsolationReport) -> IsolationReport:
    """Fold campaign evidence into an isolation report.

    Uncertain pairs that some finding exercised move to the attack region
    with an observed-trace entry, keeping the engine's reason as an
    annotation.  Uncertain pairs whose every exercising case ended in
    GracefulReject or NoEffect stay uncertain and are annotated as
    empirically unexercised: a quiet campaign is no proof of security.
    """
    prov = result.provenance
    if prov.get("model_id", report.model_id) != report.model_id:
        raise ProvenanceMismatch(f"results come from model {prov.get('model_id')}, report is for {report.model_id}")
    if result.results and prov.get("report_id") != report.report_id:
        raise ProvenanceMismatch(f"results come from report {prov.get('report_id')}, not {report.report_id}")
    attack = dict(report.attack)
    uncertain = dict(report.uncertain)
    notes = {k: list(v) for k, v in report.annotations.items()}
    confirmed: dict = {}
    quiet: dict = {}
    for r in result.results:
        for pair in exercised_pairs(result.kind, r):
            if pair not in uncertain:
                continue
            if r.verdict.is_finding:
                confirmed.setdefault(pair, r)
            else:
                quiet[pair] = quiet.get(pair, 0) + 1
    key = lambda t: (t[0][0], t[0][1].value)  # noqa: E731
    for pair, r in sorted(confirmed.items(), key=key):
        reason = uncertain.pop(pair)
        goal = CanReplay(r.subject) if pair[1] is Property.Accounting else CanModify(pair[0])
        # empirical evidence rather than a rule derivation
        attack[pair] = AttackTrace(goal, (Step(OBSERVED_RULE, (), goal),))
        notes.setdefault(pair, []).append(f"confirmed by {r.case_id} ({r.verdict.value}); engine: {reason}")
    for pair, n in sorted(quiet.items(), key=key):
        if pair in confirmed:
            continue
        text = f"{UNEXERCISED} ({n} case(s))"
        if text not in notes.get(pair, []):
            notes.setdefault(pair, []).append(text)
    return replace(report, attack=attack, uncertain=uncertain, annotations=notes)


# ------------------------------------------------------------------ scenarios


@dataclass(frozen=True)
class Scenario:
    name: str
    profile: str
    identifier: str  # engine pair the scenario exercises
    prop: Property
    runner: Callable


@dataclass
class ScenarioResult:
    name: str
    verdict: Verdict
    traces: list
    notes: tuple
    engine: str  # engine verdict kind for the scenario's pair
    profile: str

    def case_result(self, seed: int = 0) -> CaseResult:
        return CaseResult(
            self.name, self.verdict, self.name, (), self.notes, len(self.traces), trace_digest(self.traces),
            seed, sum(t.steps for t in self.traces),
        )

    def to_dict(self) -> dict:
        return {
            "scenario": self.name,
            "verdict": self.verdict.value,
            "engine": self.engine,
            "profile": self.profile,
            "notes": list(self.notes),
            "digest": trace_digest(self.traces),
        }


def attacker_for(model: ProtocolModel, profile_name: str, variant: int = 0) -> Attacker:
    """Attacker holding the concrete values of its profile's known identifiers."""
    profile = model.profile(profile_name)
    ue = new_ue(model, pubkey_value(), variant)
    pool = dict(ue.vars)
    pool["K"] = ue.keys["K"]
    pool["PubKey_gNB"] = pubkey_value()
    for name in profile.known_identifiers:
        if name not in pool and model.has_identifier(name) and model.identifier(name).nominal is not None:
            pool[name] = model.identifier(name).nominal
    known = {n: pool[n] for n in profile.known_identifiers if n in pool}
    return Attacker(Codec(model), profile, known)


def _key_or_guess(att: Attacker, name: str, base: Mapping[str, int], rng: random.Random) -> int:
    """Key ``name`` from ``base`` inputs when all are known, else a guess."""
    if ks.can_derive(name, base):
        value = ks.derive(name, base)
        att.derived[name] = value
        return value
    return rng.getrandbits(128)


def _forge_nas_smc(same_algorithms: bool, rng: random.Random):
    def fn(att: Attacker, msg: WireMessage) -> list[WireMessage]:
        seen = att.seen.get("NASSecurityModeCommand", {})
        model = att.codec.model
        nominal = lambda n: model.identifier(n).nominal  # noqa: E731
        eea = seen.get("NAS_EEA", nominal("NAS_EEA"))
        eia = seen.get("NAS_EIA", nominal("NAS_EIA"))
        if not same_algorithms:
            eea, eia = (eea % 15) + 1 if eea != 1 else 2, (eia % 15) + 1 if eia != 1 else 2
        ksi = seen.get("KSI_ASME", nominal("KSI_ASME"))
        cap = seen.get("UE_SecurityCapability", nominal("UE_SecurityCapability"))
        k_asme = att.derive("K_ASME")
        base = {"NAS_EIA": eia, "NAS_EEA": eea}
        if k_asme is not None:
            base["K_ASME"] = k_asme
        k_int = _key_or_guess(att, "K_NASint", base, rng)
        _key_or_guess(att, "K_NASenc", base, rng)
        mac = ks.mac(k_int, "NAS_SMC", ksi, cap, eea, eia)
        values = {"KSI_ASME": ksi, "UE_SecurityCapability": cap, "NAS_EEA": eea, "NAS_EIA": eia, "NAS_MAC": mac}
        return [att.forge("NASSecurityModeCommand", values)]

    return fn


def _forge_as_smc(same_algorithms: bool, rng: random.Random):
    def fn(att: Attacker, msg: WireMessage) -> list[WireMessage]:
        seen = att.seen.get("ASSecurityModeCommand", {})
        model = att.codec.model
        eea = seen.get("AS_EEA", model.identifier("AS_EEA").nominal)
        eia = seen.get("AS_EIA", model.identifier("AS_EIA").nominal)
        if not same_algorithms:
            eea, eia = (1 if eea != 1 else 2), (1 if eia != 1 else 2)
        k_enb = att.derive("K_eNB")
        base = {"AS_EEA": eea, "AS_EIA": eia}
        if k_enb is not None:
            base["K_eNB"] = k_enb
        k_int = _key_or_guess(att, "K_RRCint", base, rng)
        _key_or_guess(att, "K_RRCenc", base, rng)
        _key_or_guess(att, "K_UPenc", base, rng)
        mac = ks.mac(k_int, "AS_SMC", eea, eia)
        return [att.forge("ASSecurityModeCommand", {"AS_EEA": eea, "AS_EIA": eia, "MAC_I": mac})]

    return fn


D, U = Direction.Downlink, Direction.Uplink


def _scn_rrc(model, seed):
    att = attacker_for(model, "table1_rrc")
    script = InterceptorScript(
        att,
        {
            (U, "RRCConnectionSetupComplete", 0): [
                Forward(),
                InjectForged("RRCConnectionReject"),
                InjectForged("RRCConnectionRelease", times=2),
            ]
        },
    )
    return [run_session(SimConfig(model, seed=seed), script)], []


def _record_auth(model, att, seed) -> SimTrace:
    script = InterceptorScript(att, {(D, "AuthenticationRequest", 0): [Record("auth")]})
    return run_session(SimConfig(model, seed=seed), script)


def _scn_auth_attacker_only(model, seed):
    att = attacker_for(model, "table1_auth")
    first = _record_auth(model, att, seed)
    # a second UE camped on the attacker alone: no network traffic reaches it
    script = InterceptorScript(att, on_start=[ReplayRecorded("auth")])
    second = run_session(SimConfig(model, seed=seed + 1, ue_autostart=False, identity_variant=1), script)
    notes = ["precursor:ImpersonationSuccess"] if "attacker_received:AuthenticationResponse" in second.notes() else []
    return [first, second], notes


def _scn_auth_same(model, seed):
    att = attacker_for(model, "table1_auth")
    first = _record_auth(model, att, seed)
    script = InterceptorScript(att, {(D, "AuthenticationRequest", 0): [Forward(), ReplayRecorded("auth", times=2)]})
    return [first, run_session(SimConfig(model, seed=seed + 1), script)], []


def _scn_auth_different(model, seed):
    att = attacker_for(model, "table1_rrc")
    rng = random.Random(f"attacker:{seed}")
    forged = [InjectForged("AuthenticationRequest", (("RAND", rng.getrandbits(128)), ("AUTN_HSS", rng.getrandbits(128)))) for _ in range(2)]
    script = InterceptorScript(att, {(U, "AttachRequest", 0): [Forward()] + forged})
    return [run_session(SimConfig(model, seed=seed), script)], []


def _mitm(profile: str, command: str, forge):
    def runner(model, seed):
        att = attacker_for(model, profile)
        rng = random.Random(f"attacker:{seed}")
        script = InterceptorScript(att, {(D, command, 0): [Block(), Custom(forge(rng), "forge:" + command)]})
        return [run_session(SimConfig(model, seed=seed), script)], []

    return runner


def _nas(same: bool):
    return lambda rng: _forge_nas_smc(same, rng)


def _as(same: bool):
    return lambda rng: _forge_as_smc(same, rng)


I, Ac, Au = Property.Integrity, Property.Accounting, Property.Authentication

SCENARIOS: dict[str, Scenario] = {
    s.name: s
    for s in [
        Scenario("RrcRejectReleaseRepeat", "table1_rrc", "releaseCause", I, _scn_rrc),
        Scenario("AuthReplayAttackerOnly", "table1_auth", "RAND", Ac, _scn_auth_attacker_only),
        Scenario("AuthReplaySameCommandRace", "table1_auth", "RAND", Ac, _scn_auth_same),
        Scenario("AuthReplayDifferentCommandRace", "table1_rrc", "RAND", I, _scn_auth_different),
        Scenario("NasMitmFakeBaseStation", "table1_nas", "NAS_MAC", Au, _mitm("table1_nas", "NASSecurityModeCommand", _nas(True))),
        Scenario("NasDosCut", "table1_nas", "NAS_MAC", Au, _mitm("table1_nas", "NASSecurityModeCommand", _nas(False))),
        Scenario("AsMitmFakeBaseStation", "table1_as", "MAC_I", Au, _mitm("table1_as", "ASSecurityModeCommand", _as(True))),
        Scenario("AsDosCut", "table1_as", "MAC_I", Au, _mitm("table1_as", "ASSecurityModeCommand", _as(False))),
    ]
}


def run_scenario(name: str, model: Optional[ProtocolModel] = None, seed: int = 0) -> ScenarioResult:
    """Run a named attack script; the verdict is the worst over its sessions."""
    if name not in SCENARIOS:
        raise UnknownScenario(f"{name!r}; known: {', '.join(SCENARIOS)}")
    model = load_bundled() if model is None else model
    scn = SCENARIOS[name]
    traces, extra = scn.runner(model, seed)
    ev = engine_verdict(model, model.profile(scn.profile), scn.identifier, scn.prop)
    notes = tuple(sorted(set(_notes(traces)) | set(extra)))
    return ScenarioResult(name, worst(classify(t) for t in traces), traces, notes, type(ev).__name__, scn.profile)


# ------------------------------------------------------------------ priority experiment


@dataclass(frozen=True)
class TrialResult:
    trial: int
    planted: tuple
    guided: int  # cases executed until every planted fault was seen
    uniform: int

    @property
    def guided_wins(self) -> bool:
        return self.guided < self.uniform


class _FaultOracle:
    """Memoised planted-fault detections per (planted set, case)."""

    def __init__(self, model: ProtocolModel, seed: int, timeout: int = 10):
        self.model = model
        self.seed = seed
        self.timeout = timeout
        self._cache: dict = {}
        self._recordings: dict = {}

    def found(self, planted: tuple, case: CommandLevelCase) -> frozenset:
        key = (planted, case.case_id)
        if key not in self._cache:
            rec = self._recordings.get(planted)
            if rec is None:
                rec = self._recordings[planted] = record(self.model, self.seed, planted=planted)
            _, traces = run_command_case(self.model, case, rec, case_seed(self.seed, case.case_id), planted, self.timeout)
            self._cache[key] = frozenset(n.split(":", 1)[1] for n in _notes(traces) if n.startswith("planted:"))
        return self._cache[key]


def _search(cases: list, planted: tuple, oracle: _FaultOracle, scores: Optional[dict], tiebreak: dict, scorer_findings: Optional[dict] = None) -> int:
    """Cases executed until all planted faults are seen; adaptive when
    ``scores`` is given (each confirmed fault adds one to its command)."""
    remaining = list(cases)
    findings: dict[str, int] = {}

    def order():
        if scores is None:
            remaining.sort(key=lambda c: tiebreak[c.case_id])
        else:
            remaining.sort(key=lambda c: (-(scores[c.case_id] + findings.get(c.subject, 0)), tiebreak[c.case_id]))

    order()
    seen: set = set()
    want = set(planted)
    executed = 0
    while remaining:
        case = remaining.pop(0)
        executed += 1
        new = oracle.found(planted, case) - seen
        if new:
            seen |= new
            if seen >= want:
                return executed
            if scores is not None:
                findings[case.subject] = findings.get(case.subject, 0) + len(new)
                order()
    return len(cases) + 1


def priority_experiment(model: Optional[ProtocolModel] = None, trials: int = 20, seed: int = 0, per_trial: int = 3, profile: str = "default") -> list[TrialResult]:
    """Compare priority-guided and uniform ordering on planted faults.

    Each trial plants ``per_trial`` of the catalogued faults and counts how
    many command-level cases each ordering executes before every planted
    fault has fired.
    """
    model = load_bundled() if model is None else model
    report = isolate(model, model.profile(profile))
    base = model.sequence().expanded()
    cases = enumerate_command_cases(model, base, command_alphabet(model, report), seed)
    scorer = PriorityScorer(model)
    scores = {c.case_id: scorer.score(c) for c in cases}
    oracle = _FaultOracle(model, seed)
    out = []
    for t in range(trials):
        rng = random.Random(f"trial:{seed}:{t}")
        planted = tuple(sorted(rng.sample(PLANTED_FAULTS, per_trial)))
        tiebreak = {c.case_id: rng.random() for c in cases}
        guided = _search(cases, planted, oracle, scores, tiebreak)
        uniform_tb = {c.case_id: rng.random() for c in cases}
        uniform = _search(cases, planted, oracle, None, uniform_tb)
        out.append(TrialResult(t, planted, guided, uniform))
    return out


# ------------------------------------------------------------------ campaign files


def build_plan(cfg: CampaignConfig, model: ProtocolModel) -> FuzzPlan:
    """Plan for a bit- or command-level campaign from its config keys."""
    report = isolate(model, model.profile(cfg.profile))
    if cfg.level == "command":
        return plan_command_level(model, report, cfg.budget, Scheme(cfg.scheme), cfg.seed)
    plan = plan_bit_level(model, report, cfg.seed)
    plan.cases = order_cases(plan.cases, plan.priority_scores, Scheme(cfg.scheme), cfg.seed)
    if cfg.budget is not None:
        plan.cases = plan.cases[: cfg.budget]
    plan.provenance["scheme"] = Scheme(cfg.scheme).value
    return plan


def run_campaign(cfg: CampaignConfig, plan: Optional[FuzzPlan] = None, parallelism: Optional[int] = None) -> CampaignResult:
    """Execute a parsed campaign file.

    Script campaigns run one session under the configured interceptor and
    report it as a single case; the others execute ``plan`` (or the plan the
    config describes).
    """
    model = cfg.load_model()
    par = cfg.parallelism if parallelism is None else parallelism
    if cfg.level == "script":
        trace = run_session(SimConfig(model, seed=cfg.seed, planted=frozenset(cfg.planted), timeout=cfg.timeout), cfg.script(model))
        r = CaseResult("s00000-script", classify(trace), "script", (), _notes([trace]), 1, trace_digest([trace]), cfg.seed, trace.steps)
        prov = {"model_id": model.model_id, "profile": cfg.profile, "seed": cfg.seed, "kind": "script", "planted": list(cfg.planted), "executed": 1}
        return CampaignResult(prov, [r])
    plan = build_plan(cfg, model) if plan is None else plan
    return execute(plan, model, par, cfg.seed, cfg.planted, cfg.timeout)
