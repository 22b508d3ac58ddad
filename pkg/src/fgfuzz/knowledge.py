"""Attacker-knowledge saturation, verdicts and search-space isolation.

The engine is a finite forward-chaining closure over four fact kinds.  Rules
R1..R7 are listed in ``RULES``; each derivation records its premises so that
every attack trace can be replayed and checked independently of the engine
(see :func:`check_trace`).
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from .errors import UnknownIdentifier
from .model import (
    PROPERTIES,
    AssumptionProfile,
    Capability,
    Direction,
    Opaque,
    Phase,
    Property,
    ProtocolModel,
    Role,
)


class FactKind(enum.Enum):
    Knows = "Knows"
    CanModify = "CanModify"
    CanReplay = "CanReplay"
    CanImpersonate = "CanImpersonate"


class Party(enum.Enum):
    UE = "UE"
    BaseStation = "BaseStation"


@dataclass(frozen=True)
class Fact:
    kind: FactKind
    subject: str

    def __str__(self) -> str:
        return f"{self.kind.value}({self.subject})"

    @classmethod
    def parse(cls, text: str) -> "Fact":
        kind, _, rest = text.partition("(")
        return cls(FactKind(kind), rest.rstrip(")"))

    # enums do not order, so sort on the string form
    def key(self) -> tuple[str, str]:
        return (self.kind.value, self.subject)

    def __lt__(self, other: "Fact") -> bool:
        return self.key() < other.key()


def Knows(x: str) -> Fact:  # noqa: N802 - reads like the notation
    return Fact(FactKind.Knows, x)


def CanModify(x: str) -> Fact:  # noqa: N802
    return Fact(FactKind.CanModify, x)


def CanReplay(c: str) -> Fact:  # noqa: N802
    return Fact(FactKind.CanReplay, c)


def CanImpersonate(role: Party | str) -> Fact:  # noqa: N802
    return Fact(FactKind.CanImpersonate, Party(role).value)


@dataclass(frozen=True)
class Step:
    rule: str
    premises: tuple[Fact, ...]
    conclusion: Fact

    def to_dict(self) -> dict:
        return {"rule": self.rule, "premises": [str(p) for p in self.premises], "conclusion": str(self.conclusion)}

    @classmethod
    def from_dict(cls, d: dict) -> "Step":
        return cls(d["rule"], tuple(Fact.parse(p) for p in d["premises"]), Fact.parse(d["conclusion"]))


@dataclass(frozen=True)
class AttackTrace:
    goal: Fact
    steps: tuple[Step, ...]

    def __len__(self) -> int:
        return len(self.steps)

    def to_dict(self) -> dict:
        return {"goal": str(self.goal), "steps": [s.to_dict() for s in self.steps]}

    @classmethod
    def from_dict(cls, d: dict) -> "AttackTrace":
        return cls(Fact.parse(d["goal"]), tuple(Step.from_dict(s) for s in d["steps"]))

    def render(self) -> str:
        lines = [f"goal: {self.goal}"]
        for k, s in enumerate(self.steps, start=1):
            prem = ", ".join(str(p) for p in s.premises) or "capability"
            lines.append(f"  {k}. [{s.rule}] {prem} => {s.conclusion}")
        return "\n".join(lines)


# --------------------------------------------------------------- verdicts


@dataclass(frozen=True)
class Secure:
    pass


@dataclass(frozen=True)
class AttackTraceFound:
    trace: AttackTrace


@dataclass(frozen=True)
class Uncertain:
    reason: str


Verdict = Secure | AttackTraceFound | Uncertain


# ------------------------------------------------------------------ rules

# rule id -> one-line description; also the tie-break order for traces
RULES = {
    "R1": "Eavesdrop: an on-wire field without confidentiality is learned",
    "R2": "Derive: knowing every KDF input yields the output",
    "R3": "Invert: an invertible input is recovered from a known output",
    "R4": "Decrypt: knowing every confidentiality protector reveals the field",
    "R5": "Modify: Inject plus no integrity, or known integrity protectors",
    "R6": "Replay: Replay and no accounting on any field of the command",
    "R7": "Impersonate: MitmRelay plus every session key of the role",
}


def session_keys(model: ProtocolModel) -> tuple[str, ...]:
    """Keys guarding the protected NAS and AS channels.

    These are derived key-material identifiers owned by commands of the two
    security-setup phases.
    """
    out = []
    for ident in model.identifiers:
        if ident.semantic_role is not Role.KeyMaterial or model.kdf_for(ident.name) is None:
            continue
        if model.phase_of(ident.name) in (Phase.NasSecurity, Phase.AsSecurity):
            out.append(ident.name)
    return tuple(sorted(out))


def role_keys(model: ProtocolModel, role: Party) -> tuple[str, ...]:
    # UE and base station share the session keys of both protected channels
    return session_keys(model)


class _Context:
    """Precomputed model views shared by the rules."""

    def __init__(self, model: ProtocolModel, profile: AssumptionProfile):
        self.model = model
        self.caps = frozenset(profile.capabilities)
        self.known = frozenset(profile.known_identifiers)
        self.on_wire = sorted({f for c in model.commands for f in c.fields})
        self.keys = {r: role_keys(model, r) for r in Party}


Derivation = tuple[tuple[Fact, ...], Fact]
RuleFn = Callable[[_Context, frozenset], list[Derivation]]


def _r1(ctx: _Context, facts: frozenset) -> list[Derivation]:
    if Capability.Eavesdrop not in ctx.caps:
        return []
    return [((), Knows(x)) for x in ctx.on_wire if ctx.model.protection(x).confidentiality is None]


def _r2(ctx: _Context, facts: frozenset) -> list[Derivation]:
    out = []
    for k in ctx.model.kdfs:
        if all(Knows(i) in facts for i in k.inputs):
            out.append((tuple(Knows(i) for i in sorted(k.inputs)), Knows(k.output)))
    return out


def _r3(ctx: _Context, facts: frozenset) -> list[Derivation]:
    out = []
    for k in ctx.model.kdfs:
        if Knows(k.output) in facts:
            out.extend(((Knows(k.output),), Knows(i)) for i in sorted(k.invertible_inputs))
    return out


def _r4(ctx: _Context, facts: frozenset) -> list[Derivation]:
    if Capability.Eavesdrop not in ctx.caps:
        return []
    out = []
    for x in ctx.on_wire:
        c = ctx.model.protection(x).confidentiality
        if c is not None and all(Knows(p) in facts for p in c.protectors):
            out.append((tuple(Knows(p) for p in sorted(c.protectors)), Knows(x)))
    return out


def _r5(ctx: _Context, facts: frozenset) -> list[Derivation]:
    if Capability.Inject not in ctx.caps:
        return []
    out = []
    for x in ctx.on_wire:
        integ = ctx.model.protection(x).integrity
        if integ is None:
            out.append(((), CanModify(x)))
        elif all(Knows(p) in facts for p in integ.protectors):
            out.append((tuple(Knows(p) for p in sorted(integ.protectors)), CanModify(x)))
    return out


def _r6(ctx: _Context, facts: frozenset) -> list[Derivation]:
    if Capability.Replay not in ctx.caps:
        return []
    return [
        ((), CanReplay(c.name))
        for c in ctx.model.commands
        if all(ctx.model.protection(f).accounting is None for f in c.fields)
    ]


def _r7(ctx: _Context, facts: frozenset) -> list[Derivation]:
    if Capability.MitmRelay not in ctx.caps:
        return []
    out = []
    for role in Party:
        keys = ctx.keys[role]
        if keys and all(Knows(k) in facts for k in keys):
            out.append((tuple(Knows(k) for k in keys), CanImpersonate(role)))
    return out


RULE_FNS: dict[str, RuleFn] = {"R1": _r1, "R2": _r2, "R3": _r3, "R4": _r4, "R5": _r5, "R6": _r6, "R7": _r7}


def initial_facts(profile: AssumptionProfile) -> frozenset[Fact]:
    return frozenset(Knows(x) for x in profile.known_identifiers)


def saturate(model: ProtocolModel, profile: AssumptionProfile, rule_order: Optional[Sequence[str]] = None) -> frozenset[Fact]:
    """Least fixed point of the rules, starting from the profile's knowledge.

    ``rule_order`` permutes rule application; the result does not depend on
    it because every rule is monotone.
    """
    ctx = _Context(model, profile)
    order = list(rule_order) if rule_order is not None else list(RULE_FNS)
    facts = set(initial_facts(profile))
    changed = True
    while changed:
        changed = False
        for rid in order:
            # apply each rule to the growing set immediately (chaotic iteration)
            for _, concl in RULE_FNS[rid](ctx, frozenset(facts)):
                if concl not in facts:
                    facts.add(concl)
                    changed = True
    return frozenset(facts)


@dataclass
class Closure:
    """Saturated facts plus, for each, the first derivation found breadth-first."""

    profile: AssumptionProfile
    facts: frozenset
    initial: frozenset
    justification: dict  # Fact -> Step
    depth: dict  # Fact -> round in which it appeared

    def trace(self, goal: Fact) -> AttackTrace:
        if goal not in self.facts:
            raise KeyError(str(goal))
        needed: set[Fact] = set()
        stack = [goal]
        while stack:
            f = stack.pop()
            if f in needed or f in self.initial:
                continue
            needed.add(f)
            stack.extend(self.justification[f].premises)
        ordered = sorted(needed, key=lambda f: (self.depth[f], f.key()))
        return AttackTrace(goal, tuple(self.justification[f] for f in ordered))


def closure(model: ProtocolModel, profile: AssumptionProfile) -> Closure:
    """Breadth-first saturation that keeps a shortest justification per fact."""
    ctx = _Context(model, profile)
    init = initial_facts(profile)
    facts = set(init)
    just: dict[Fact, Step] = {}
    depth = {f: 0 for f in init}
    rnd = 0
    while True:
        rnd += 1
        snapshot = frozenset(facts)
        fresh: dict[Fact, Step] = {}
        for rid in RULES:
            for prem, concl in RULE_FNS[rid](ctx, snapshot):
                if concl in snapshot:
                    continue
                cand = Step(rid, prem, concl)
                best = fresh.get(concl)
                if best is None or (cand.rule, [p.key() for p in cand.premises]) < (best.rule, [p.key() for p in best.premises]):
                    fresh[concl] = cand
        if not fresh:
            break
        for f, s in fresh.items():
            facts.add(f)
            just[f] = s
            depth[f] = rnd
    return Closure(profile, frozenset(facts), init, just, depth)


# ------------------------------------------------------------ trace checker


def check_trace(model: ProtocolModel, profile: AssumptionProfile, trace: AttackTrace) -> bool:
    """Replay a trace step by step, re-checking every rule's side conditions.

    This is deliberately written against the model directly rather than
    reusing the rule functions above.
    """
    caps = set(profile.capabilities)
    have = {Knows(x) for x in profile.known_identifiers}
    wire = {f for c in model.commands for f in c.fields}
    keys = set(session_keys(model))
    for s in trace.steps:
        if not set(s.premises) <= have:
            return False
        prem = set(s.premises)
        c = s.conclusion
        x = c.subject
        if s.rule == "R1":
            ok = (
                Capability.Eavesdrop in caps
                and c.kind is FactKind.Knows
                and x in wire
                and model.protection(x).confidentiality is None
            )
        elif s.rule == "R2":
            k = model.kdf_for(x) if c.kind is FactKind.Knows else None
            ok = k is not None and prem == {Knows(i) for i in k.inputs}
        elif s.rule == "R3":
            ok = c.kind is FactKind.Knows and any(
                k.output != x and x in k.invertible_inputs and prem == {Knows(k.output)} for k in model.kdfs
            )
        elif s.rule == "R4":
            conf = model.protection(x).confidentiality if model.has_identifier(x) else None
            ok = (
                Capability.Eavesdrop in caps
                and c.kind is FactKind.Knows
                and x in wire
                and conf is not None
                and prem == {Knows(p) for p in conf.protectors}
            )
        elif s.rule == "R5":
            integ = model.protection(x).integrity if model.has_identifier(x) else None
            ok = (
                Capability.Inject in caps
                and c.kind is FactKind.CanModify
                and x in wire
                and (prem == set() if integ is None else prem == {Knows(p) for p in integ.protectors})
            )
        elif s.rule == "R6":
            ok = (
                Capability.Replay in caps
                and c.kind is FactKind.CanReplay
                and model.has_command(x)
                and all(model.protection(f).accounting is None for f in model.command(x).fields)
                and not prem
            )
        elif s.rule == "R7":
            ok = (
                Capability.MitmRelay in caps
                and c.kind is FactKind.CanImpersonate
                and bool(keys)
                and prem == {Knows(k) for k in keys}
            )
        else:
            ok = False
        if not ok:
            return False
        have.add(c)
    return trace.goal in have and (not trace.steps or trace.steps[-1].conclusion == trace.goal)


# ---------------------------------------------------------------- verdicts


def sender_role(model: ProtocolModel, command: str) -> Party:
    return Party.BaseStation if model.command(command).direction is Direction.Downlink else Party.UE


def goal_fact(model: ProtocolModel, identifier: str, prop: Property) -> Fact:
    """The fact whose derivation compromises ``prop`` of ``identifier``.

    Identifiers that never travel on the wire (derived keys) can only be
    compromised by possession, so their integrity and unprotected
    authentication goals fall back to ``Knows``.
    """
    ident = model.identifier(identifier)
    on_wire = bool(model.occurrences(identifier))
    if prop is Property.Confidentiality:
        return Knows(identifier)
    if prop is Property.Accounting:
        return CanReplay(ident.owner_command)
    if prop is Property.Authentication and model.protection(identifier).authentication is not None:
        return CanImpersonate(sender_role(model, ident.owner_command))
    return CanModify(identifier) if on_wire else Knows(identifier)


def relaxed_profile(model: ProtocolModel, profile: AssumptionProfile) -> AssumptionProfile:
    """Profile widened by everything outside the model's reach: every
    capability, and every Opaque identifier treated as known."""
    opaque = {i.name for i in model.identifiers if isinstance(i.domain, Opaque)}
    return AssumptionProfile(
        profile.name + "+relaxed",
        frozenset(profile.known_identifiers) | opaque,
        frozenset(Capability),
    )


def _uncertain_reason(model: ProtocolModel, profile: AssumptionProfile, relaxed: Closure, goal: Fact) -> str:
    tr = relaxed.trace(goal)
    used_caps = set()
    used_opaque = set()
    opaque = {i.name for i in model.identifiers if isinstance(i.domain, Opaque)}
    cap_of = {"R1": Capability.Eavesdrop, "R4": Capability.Eavesdrop, "R5": Capability.Inject,
              "R6": Capability.Replay, "R7": Capability.MitmRelay}
    for s in tr.steps:
        cap = cap_of.get(s.rule)
        if cap is not None and cap not in profile.capabilities:
            used_caps.add(cap.value)
        for p in s.premises:
            if p.kind is FactKind.Knows and p.subject in opaque and p.subject not in profile.known_identifiers and p in relaxed.initial:
                used_opaque.add(p.subject)
    if goal.kind is FactKind.Knows and goal.subject in opaque and goal in relaxed.initial:
        used_opaque.add(goal.subject)
    parts = []
    if used_opaque:
        parts.append("depends on opaque identifier(s) " + ", ".join(sorted(used_opaque)))
    if used_caps:
        parts.append("needs capability outside the profile: " + ", ".join(sorted(used_caps)))
    return "; ".join(parts) or "derivable only under relaxed assumptions"


class _Engine:
    """Caches the exact and relaxed closures for one (model, profile)."""

    def __init__(self, model: ProtocolModel, profile: AssumptionProfile):
        self.model = model
        self.profile = profile
        self.exact = closure(model, profile)
        self.relaxed = closure(model, relaxed_profile(model, profile))

    def verdict(self, identifier: str, prop: Property) -> Verdict:
        goal = goal_fact(self.model, identifier, prop)
        if goal in self.exact.facts:
            return AttackTraceFound(self.exact.trace(goal))
        if goal in self.relaxed.facts:
            return Uncertain(_uncertain_reason(self.model, self.profile, self.relaxed, goal))
        return Secure()


def verdict(model: ProtocolModel, profile: AssumptionProfile, identifier: str, prop: Property) -> Verdict:
    if not model.has_identifier(identifier):
        raise UnknownIdentifier(identifier)
    return _Engine(model, profile).verdict(identifier, Property(prop))


# --------------------------------------------------------------- isolation

Pair = tuple[str, Property]


@dataclass
class IsolationReport:
    profile: str
    model_id: str
    secure: set = field(default_factory=set)  # {(identifier, Property)}
    attack: dict = field(default_factory=dict)  # (identifier, Property) -> AttackTrace
    uncertain: dict = field(default_factory=dict)  # (identifier, Property) -> reason
    facts: frozenset = frozenset()
    # (identifier, Property) -> list of free-text notes added by feedback
    annotations: dict = field(default_factory=dict)

    def pairs(self) -> set:
        return set(self.secure) | set(self.attack) | set(self.uncertain)

    def region(self, identifier: str, prop: Property) -> str:
        key = (identifier, prop)
        if key in self.attack:
            return "attack"
        if key in self.uncertain:
            return "uncertain"
        return "secure"

    def exposed_identifiers(self) -> set[str]:
        return {i for i, _ in self.attack} | {i for i, _ in self.uncertain}

    @property
    def report_id(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        key = lambda pair: (pair[0], pair[1].value)  # noqa: E731
        return {
            "profile": self.profile,
            "model_id": self.model_id,
            "secure": [{"identifier": i, "property": p.value} for i, p in sorted(self.secure, key=key)],
            "attack": [
                {"identifier": i, "property": p.value, "trace": self.attack[(i, p)].to_dict()}
                for i, p in sorted(self.attack, key=key)
            ],
            "uncertain": [
                {"identifier": i, "property": p.value, "reason": self.uncertain[(i, p)]}
                for i, p in sorted(self.uncertain, key=key)
            ],
            "facts": sorted(str(f) for f in self.facts),
            "annotations": [
                {"identifier": i, "property": p.value, "notes": list(self.annotations[(i, p)])}
                for i, p in sorted(self.annotations, key=key)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "IsolationReport":
        return cls(
            profile=d["profile"],
            model_id=d["model_id"],
            secure={(e["identifier"], Property(e["property"])) for e in d["secure"]},
            attack={(e["identifier"], Property(e["property"])): AttackTrace.from_dict(e["trace"]) for e in d["attack"]},
            uncertain={(e["identifier"], Property(e["property"])): e["reason"] for e in d["uncertain"]},
            facts=frozenset(Fact.parse(f) for f in d.get("facts", [])),
            annotations={(e["identifier"], Property(e["property"])): list(e["notes"]) for e in d.get("annotations", [])},
        )

    @classmethod
    def from_json(cls, text: str) -> "IsolationReport":
        return cls.from_dict(json.loads(text))

    def render(self) -> str:
        lines = [f"profile {self.profile}: {len(self.attack)} attack, {len(self.uncertain)} uncertain, {len(self.secure)} secure"]
        for (i, p), tr in sorted(self.attack.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
            lines.append(f"[attack] {i} {p.value}")
            lines.extend("  " + ln for ln in tr.render().splitlines())
        for (i, p), why in sorted(self.uncertain.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
            lines.append(f"[uncertain] {i} {p.value}: {why}")
        return "\n".join(lines)


def isolate(model: ProtocolModel, profile: AssumptionProfile) -> IsolationReport:
    eng = _Engine(model, profile)
    rep = IsolationReport(profile=profile.name, model_id=model.model_id, facts=eng.exact.facts)
    for ident in model.identifiers:
        for prop in PROPERTIES:
            v = eng.verdict(ident.name, prop)
            if isinstance(v, AttackTraceFound):
                rep.attack[(ident.name, prop)] = v.trace
            elif isinstance(v, Uncertain):
                rep.uncertain[(ident.name, prop)] = v.reason
            else:
                rep.secure.add((ident.name, prop))
    return rep


# ----------------------------------------------------------- attack models


class Template(enum.Enum):
    RrcModification = "RrcModification"
    AuthRequestDosReplay = "AuthRequestDosReplay"
    NasKeyExposure = "NasKeyExposure"
    AsKeyExposure = "AsKeyExposure"


@dataclass(frozen=True)
class AttackModel:
    template: Template
    profile: str
    supporting_facts: frozenset
    traces: tuple[AttackTrace, ...]

    def to_dict(self) -> dict:
        return {
            "template": self.template.value,
            "profile": self.profile,
            "supporting_facts": sorted(str(f) for f in self.supporting_facts),
            "traces": [t.to_dict() for t in self.traces],
        }


RRC_SETUP_MARK = "RrcSetup"
NAS_KEYS = ("K_NASenc", "K_NASint")
AS_KEYS = ("K_RRCenc", "K_RRCint", "K_UPenc")


def _trace_for(report: IsolationReport, goal: Fact) -> Optional[AttackTrace]:
    # prefer a trace already attached to an attack pair with this goal
    best = None
    for tr in report.attack.values():
        if tr.goal == goal and (best is None or len(tr) < len(best)):
            best = tr
    return best


def synthesize_attack_models(
    report: IsolationReport,
    model: Optional[ProtocolModel] = None,
    rrc_identifiers: Optional[Iterable[str]] = None,
) -> list[AttackModel]:
    """Instantiate the four templates whose trigger facts hold in ``report``.

    RRC-setup identifiers are taken from ``model`` when given, otherwise from
    ``rrc_identifiers``.
    """
    facts = report.facts
    if rrc_identifiers is None:
        rrc_identifiers = (
            [i.name for i in model.identifiers if model.phase_of(i.name) is Phase.RrcSetup] if model is not None else []
        )
    out: list[AttackModel] = []

    def emit(template: Template, goals: list[Fact]) -> None:
        traces = []
        for g in goals:
            tr = _trace_for(report, g)
            if tr is None and model is not None:
                tr = closure(model, _profile_stub(model, report.profile)).trace(g)
            if tr is not None:
                traces.append(tr)
        out.append(AttackModel(template, report.profile, frozenset(goals), tuple(traces)))

    rrc_mods = sorted(CanModify(x) for x in rrc_identifiers if CanModify(x) in facts)
    if rrc_mods:
        emit(Template.RrcModification, rrc_mods)
    if CanReplay("AuthenticationRequest") in facts:
        emit(Template.AuthRequestDosReplay, [CanReplay("AuthenticationRequest")])
    if all(Knows(k) in facts for k in NAS_KEYS):
        emit(Template.NasKeyExposure, [Knows(k) for k in NAS_KEYS])
    if all(Knows(k) in facts for k in AS_KEYS):
        emit(Template.AsKeyExposure, [Knows(k) for k in AS_KEYS])
    return out


def _profile_stub(model: ProtocolModel, name: str) -> AssumptionProfile:
    return model.profile(name.replace("+relaxed", ""))


def synthesize_across(model: ProtocolModel, profiles: Iterable[AssumptionProfile]) -> dict[Template, AttackModel]:
    """First instantiation of each template over several profiles."""
    found: dict[Template, AttackModel] = {}
    for p in profiles:
        for am in synthesize_attack_models(isolate(model, p), model):
            found.setdefault(am.template, am)
    return dict(sorted(found.items(), key=lambda kv: list(Template).index(kv[0])))


TABLE1_PROFILES = ("table1_rrc", "table1_auth", "table1_nas", "table1_as")
