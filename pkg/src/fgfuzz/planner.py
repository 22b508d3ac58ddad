"""Fuzz planning: bit-level and command-level cases, priority, complexity.

Bit-level plans give each identifier of a target command three logical
classes (legal-valid, legal-invalid, illegal-random).  Command-level plans
mutate a recorded downlink sequence.  ``complexity`` counts the cases the
brute-force, rule-based and formal-guided strategies would need.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import json
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence, Union

from .depgraph import DEFAULT_WEIGHTS, WeightVector, build_graph, security_vector, weighted_score
from .errors import EmptyTargetSet, ProvenanceMismatch, UnknownCommand
from .knowledge import IsolationReport
from .model import (
    CommandDef,
    Direction,
    Enumerated,
    IdentifierDef,
    Layer,
    Phase,
    ProtectionEntry,
    ProtocolModel,
    Range,
    Role,
)


class LogicalClass(enum.Enum):
    LegalValid = "LegalValid"
    LegalInvalid = "LegalInvalid"
    IllegalRandom = "IllegalRandom"


class Mutation(enum.Enum):
    Insert = "Insert"
    Replace = "Replace"
    Repeat = "Repeat"
    Reorder = "Reorder"


class PlanKind(enum.Enum):
    Bit = "Bit"
    Command = "Command"


class Scheme(enum.Enum):
    UniformRandom = "uniform"
    PriorityGuided = "priority"


class Strategy(enum.Enum):
    BruteForce = "BruteForce"
    RuleBased = "RuleBased"
    FormalGuided = "FormalGuided"
    # exponent-of-sum reading of the rule-based formula; reported, never
    # used for the ordering invariant
    RuleBasedLiteral = "RuleBasedLiteral"


MASK64 = (1 << 64) - 1


def case_seed(seed: int, case_id: str) -> int:
    """64-bit seed mixing a global seed with a digest of the case id."""
    h = hashlib.sha256(f"{seed & MASK64}:{case_id}".encode()).digest()
    return int.from_bytes(h[:8], "big")


@dataclass(frozen=True)
class BitLevelCase:
    case_id: str
    command: str
    identifier: str
    logical_class: LogicalClass
    payload: int
    seed: int
    collapsed: bool = False
    # LegalValid cases on run-time values (nonces, MACs) forward the honest
    # value instead of the planned payload
    passthrough: bool = False

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "kind": "bit",
            "command": self.command,
            "identifier": self.identifier,
            "logical_class": self.logical_class.value,
            "payload": hex(self.payload),
            "seed": self.seed,
            "collapsed": self.collapsed,
            "passthrough": self.passthrough,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BitLevelCase":
        return cls(
            d["case_id"], d["command"], d["identifier"], LogicalClass(d["logical_class"]),
            int(d["payload"], 16), int(d["seed"]), bool(d.get("collapsed")), bool(d.get("passthrough")),
        )

    def perturbed(self, model: ProtocolModel) -> tuple[str, ...]:
        return (self.identifier,)

    @property
    def subject(self) -> str:
        return self.command


@dataclass(frozen=True)
class CommandLevelCase:
    case_id: str
    base_sequence: tuple[str, ...]
    mutation: Mutation
    position: int
    subject_command: str
    state_precondition: Phase
    target: Optional[int] = None  # destination index for Reorder
    seed: int = 0

    def mutated(self) -> tuple[str, ...]:
        seq = list(self.base_sequence)
        p = self.position
        if self.mutation is Mutation.Insert:
            seq.insert(p, self.subject_command)
        elif self.mutation is Mutation.Replace:
            seq[p] = self.subject_command
        elif self.mutation is Mutation.Repeat:
            seq.insert(p + 1, seq[p])
        else:
            cmd = seq.pop(p)
            seq.insert(self.target, cmd)
        return tuple(seq)

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "kind": "command",
            "base_sequence": list(self.base_sequence),
            "mutation": self.mutation.value,
            "position": self.position,
            "target": self.target,
            "subject_command": self.subject_command,
            "state_precondition": self.state_precondition.value,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CommandLevelCase":
        return cls(
            d["case_id"], tuple(d["base_sequence"]), Mutation(d["mutation"]), int(d["position"]),
            d["subject_command"], Phase(d["state_precondition"]), d.get("target"), int(d.get("seed", 0)),
        )

    def removed(self) -> Optional[str]:
        """Command a Replace takes off the air, if any."""
        return self.base_sequence[self.position] if self.mutation is Mutation.Replace else None

    def perturbed(self, model: ProtocolModel) -> tuple[str, ...]:
        """Fields of every command the mutation adds, removes or moves."""
        names = list(model.command(self.subject_command).fields)
        other = self.removed()
        if other is not None:
            names += [f for f in model.command(other).fields if f not in names]
        return tuple(names)

    @property
    def subject(self) -> str:
        return self.subject_command


FuzzCase = Union[BitLevelCase, CommandLevelCase]


@dataclass
class FuzzPlan:
    kind: PlanKind
    cases: list
    provenance: dict  # report_id, profile, model_id, seed, scheme
    priority_scores: dict = field(default_factory=dict)  # case_id -> Fraction

    def __len__(self) -> int:
        return len(self.cases)

    def to_jsonl(self) -> str:
        head = {"plan": self.kind.value, **self.provenance}
        lines = [json.dumps(head, sort_keys=True)]
        for c in self.cases:
            d = c.to_dict()
            d["priority"] = str(self.priority_scores.get(c.case_id, 0))
            lines.append(json.dumps(d, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "FuzzPlan":
        rows = [json.loads(ln) for ln in text.splitlines() if ln.strip()]
        head = rows[0]
        kind = PlanKind(head.pop("plan"))
        cases, scores = [], {}
        for r in rows[1:]:
            c = BitLevelCase.from_dict(r) if r["kind"] == "bit" else CommandLevelCase.from_dict(r)
            cases.append(c)
            scores[c.case_id] = Fraction(r.get("priority", "0"))
        return cls(kind, cases, head, scores)


# ------------------------------------------------------------ domain helpers


def complement_size(ident: IdentifierDef) -> int:
    return (1 << ident.bit_width) - ident.legal_count


def nth_illegal(ident: IdentifierDef, k: int) -> int:
    """The k-th (0-based, ascending) bit pattern outside the legal domain."""
    d = ident.domain
    if isinstance(d, Range):
        return k if k < d.lo else d.hi + 1 + (k - d.lo)
    if isinstance(d, Enumerated):
        # walk past legal values that sort at or below the candidate
        cand = k
        for v in sorted(set(d.values)):
            if v <= cand:
                cand += 1
            else:
                break
        return cand
    raise ValueError(f"{ident.name}: opaque domain has no illegal values")


def honest_value(ident: IdentifierDef) -> Optional[int]:
    return ident.nominal


def legal_valid(ident: IdentifierDef) -> int:
    return ident.nominal if ident.nominal is not None else ident.smallest_legal()


def legal_invalid(ident: IdentifierDef) -> tuple[int, bool]:
    """Smallest legal value different from the legal-valid one.

    Returns (value, collapsed); a one-value domain collapses to that value.
    """
    avoid = legal_valid(ident)
    d = ident.domain
    if isinstance(d, Enumerated):
        vals = sorted(v for v in set(d.values) if v != avoid)
        return (vals[0], False) if vals else (avoid, True)
    lo = d.lo if isinstance(d, Range) else 0
    hi = d.hi if isinstance(d, Range) else (1 << ident.bit_width) - 1
    if lo != avoid:
        return lo, False
    if lo + 1 <= hi:
        return lo + 1, False
    return avoid, True


def illegal_random(ident: IdentifierDef, rng: random.Random) -> tuple[int, bool]:
    """Seeded uniform draw outside the legal domain; collapses to a seeded
    legal value when the domain covers every pattern."""
    n = complement_size(ident)
    if n <= 0:
        return rng.getrandbits(ident.bit_width), True
    return nth_illegal(ident, rng.randrange(n)), False


# ---------------------------------------------------------------- targets


def target_commands(model: ProtocolModel, report: IsolationReport) -> list[CommandDef]:
    """Commands carrying at least one identifier outside the secure region."""
    exposed = report.exposed_identifiers()
    return [c for c in model.commands if any(f in exposed for f in c.fields)]


def _check_provenance(model: ProtocolModel, report: IsolationReport) -> None:
    if report.model_id != model.model_id:
        raise ProvenanceMismatch(f"report built for model {report.model_id}, plan requested for {model.model_id}")


# -------------------------------------------------------------- bit level


def bit_cases_for(model: ProtocolModel, command: CommandDef, seed: int, start: int = 0) -> list[BitLevelCase]:
    out = []
    idx = start
    for name in command.fields:
        ident = model.identifier(name)
        for cls in LogicalClass:
            cid = f"b{idx:05d}-{command.name}-{name}-{cls.value}"
            s = case_seed(seed, cid)
            collapsed = False
            passthrough = False
            if cls is LogicalClass.LegalValid:
                payload = legal_valid(ident)
                passthrough = ident.nominal is None
            elif cls is LogicalClass.LegalInvalid:
                payload, collapsed = legal_invalid(ident)
            else:
                payload, collapsed = illegal_random(ident, random.Random(s))
            out.append(BitLevelCase(cid, command.name, name, cls, payload, s, collapsed, passthrough))
            idx += 1
    return out


def plan_bit_level(
    model: ProtocolModel,
    report: IsolationReport,
    seed: int = 0,
    commands: Optional[Iterable[str]] = None,
    weights: WeightVector = DEFAULT_WEIGHTS,
) -> FuzzPlan:
    """Three logical-class cases per identifier of every target command.

    ``commands`` optionally narrows the plan to named target commands.
    """
    _check_provenance(model, report)
    targets = target_commands(model, report)
    if commands is not None:
        wanted = list(commands)
        for w in wanted:
            model.command(w)
        targets = [c for c in targets if c.name in wanted]
    if not targets:
        raise EmptyTargetSet("isolation report leaves no attack or uncertain command to fuzz")
    cases: list[BitLevelCase] = []
    for c in targets:
        cases.extend(bit_cases_for(model, c, seed, start=len(cases)))
    scorer = PriorityScorer(model, weights)
    scores = {c.case_id: scorer.score(c) for c in cases}
    prov = {"report_id": report.report_id, "profile": report.profile, "model_id": model.model_id, "seed": seed}
    return FuzzPlan(PlanKind.Bit, cases, prov, scores)


# ---------------------------------------------------------- command level


def enumerate_command_cases(model: ProtocolModel, base: Sequence[str], alphabet: Sequence[str], seed: int = 0) -> list[CommandLevelCase]:
    """Every single mutation of ``base``.

    Insert: each of the len+1 gaps times each alphabet command.
    Replace: each position times each alphabet command (a same-name
    replacement substitutes a stale recorded instance).
    Repeat: each position duplicated in place.
    Reorder: each element moved to each other index.
    """
    base = tuple(base)
    n = len(base)
    phase = lambda p: model.command(base[min(p, n - 1)]).phase  # noqa: E731
    raw: list[tuple[Mutation, int, str, Optional[int]]] = []
    for p in range(n + 1):
        for c in alphabet:
            raw.append((Mutation.Insert, p, c, None))
    for p in range(n):
        for c in alphabet:
            raw.append((Mutation.Replace, p, c, None))
    for p in range(n):
        raw.append((Mutation.Repeat, p, base[p], None))
    for p in range(n):
        for q in range(n):
            if q != p:
                raw.append((Mutation.Reorder, p, base[p], q))
    out = []
    for k, (mut, p, subj, q) in enumerate(raw):
        suffix = f"{p}" if q is None else f"{p}to{q}"
        cid = f"c{k:05d}-{mut.value}-{suffix}-{subj}"
        out.append(CommandLevelCase(cid, base, mut, p, subj, phase(p), q, case_seed(seed, cid)))
    return out


def command_alphabet(model: ProtocolModel, report: IsolationReport) -> list[str]:
    exposed = report.exposed_identifiers()
    return [c.name for c in model.downlink_commands() if any(f in exposed for f in c.fields)]


def plan_command_level(
    model: ProtocolModel,
    report: IsolationReport,
    budget: Optional[int] = None,
    scheme: Scheme = Scheme.PriorityGuided,
    seed: int = 0,
    sequence: Optional[str] = None,
    findings: Optional[Mapping[str, int]] = None,
    weights: WeightVector = DEFAULT_WEIGHTS,
) -> FuzzPlan:
    """Enumerate sequence mutations and keep up to ``budget`` of them.

    Priority-guided plans order by descending priority score with a seeded
    tie-break; uniform plans are a seeded shuffle.
    """
    if budget is not None and budget < 1:
        raise ValueError("budget must be at least 1")
    _check_provenance(model, report)
    scheme = Scheme(scheme)
    base = model.sequence(sequence).expanded()
    cases = enumerate_command_cases(model, base, command_alphabet(model, report), seed)
    scorer = PriorityScorer(model, weights)
    scores = {c.case_id: scorer.score(c, findings) for c in cases}
    cases = order_cases(cases, scores, scheme, seed)
    if budget is not None:
        cases = cases[:budget]
        scores = {c.case_id: scores[c.case_id] for c in cases}
    prov = {
        "report_id": report.report_id,
        "profile": report.profile,
        "model_id": model.model_id,
        "seed": seed,
        "scheme": scheme.value,
    }
    return FuzzPlan(PlanKind.Command, cases, prov, scores)


def order_cases(cases: Sequence, scores: Mapping[str, Fraction], scheme: Scheme, seed: int) -> list:
    rng = random.Random(seed)
    tiebreak = {c.case_id: rng.random() for c in cases}
    if Scheme(scheme) is Scheme.UniformRandom:
        return sorted(cases, key=lambda c: tiebreak[c.case_id])
    return sorted(cases, key=lambda c: (-scores[c.case_id], tiebreak[c.case_id]))


# --------------------------------------------------------------- priority


class PriorityScorer:
    """Caches identifier scores for one model and weight vector."""

    def __init__(self, model: ProtocolModel, weights: WeightVector = DEFAULT_WEIGHTS):
        self.model = model
        self.weights = weights
        self._graph = build_graph(model)
        self._cache: dict[str, Fraction] = {}

    def identifier_score(self, name: str) -> Fraction:
        if name not in self._cache:
            self._cache[name] = Fraction(weighted_score(security_vector(self._graph, name), self.weights))
        return self._cache[name]

    def score(self, case: FuzzCase, findings: Optional[Mapping[str, int]] = None) -> Fraction:
        base = sum((self.identifier_score(n) for n in case.perturbed(self.model)), Fraction(0))
        bonus = (findings or {}).get(case.subject, 0)
        return base + bonus


def priority_score(
    model: ProtocolModel,
    case: FuzzCase,
    findings: Optional[Mapping[str, int]] = None,
    weights: WeightVector = DEFAULT_WEIGHTS,
) -> Fraction:
    """Sum of weighted identifier scores the case perturbs, plus one per
    prior confirmed finding on the case's command."""
    return PriorityScorer(model, weights).score(case, findings)


# ------------------------------------------------------------- complexity


def _resolve(model: ProtocolModel, commands: Iterable[str]) -> list[CommandDef]:
    out = []
    for name in commands:
        if not model.has_command(name):
            raise UnknownCommand(name)
        out.append(model.command(name))
    return out


def complexity(model: ProtocolModel, commands: Iterable[str], strategy: Strategy) -> int:
    cmds = _resolve(model, commands)
    strategy = Strategy(strategy)
    if strategy is Strategy.BruteForce:
        return 1 << sum(c.length for c in cmds)
    if strategy is Strategy.RuleBased:
        return sum(model.identifier(f).legal_count for c in cmds for f in c.fields)
    if strategy is Strategy.RuleBasedLiteral:
        return 1 << sum(model.identifier(f).bit_width for c in cmds for f in c.fields)
    return sum(len(LogicalClass) for c in cmds for _ in c.fields)


@dataclass(frozen=True)
class ComplexityRow:
    commands: tuple[str, ...]
    strategy: Strategy
    count: int

    @property
    def log2_count(self) -> float:
        return math.log2(self.count) if self.count > 0 else float("-inf")


CANONICAL = (Strategy.BruteForce, Strategy.RuleBased, Strategy.FormalGuided)


def complexity_report(model: ProtocolModel, command_sets: Iterable[Sequence[str]], strategies: Sequence[Strategy] = CANONICAL) -> list[ComplexityRow]:
    return [ComplexityRow(tuple(cs), s, complexity(model, cs, s)) for cs in command_sets for s in strategies]


def complexity_csv(rows: Iterable[ComplexityRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["commands", "strategy", "count", "log2_count"])
    for r in rows:
        w.writerow([";".join(r.commands), r.strategy.value, r.count, f"{r.log2_count:.6f}"])
    return buf.getvalue()


# --------------------------------------------------- synthetic model family


def synthetic_family(n: int, identifiers: int = 3, width: int = 8) -> ProtocolModel:
    """n downlink commands of ``identifiers`` full-range fields each."""
    idents, prots, cmds = [], [], []
    for k in range(n):
        cname = f"Cmd{k}"
        fields = []
        for j in range(identifiers):
            name = f"f{k}_{j}"
            fields.append(name)
            idents.append(IdentifierDef(name, width, Range(0, (1 << width) - 1), cname, Role.Config))
            prots.append(ProtectionEntry(name))
        cmds.append(CommandDef(cname, Layer.RRC, Direction.Downlink, tuple(fields), Phase.RrcSetup, identifiers * width))
    return ProtocolModel(tuple(idents), tuple(prots), tuple(cmds))
