"""Declarative protocol-security model: identifiers, commands, protections.

The model is a plain immutable value.  Loading and dumping the text format
lives in :mod:`fgfuzz.modelfile`; fortification rewrites live in
:mod:`fgfuzz.fortify`.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from graphlib import CycleError, TopologicalSorter
from typing import Iterable, Mapping, Optional, Union

from .errors import UnknownCommand, UnknownIdentifier


class Role(enum.Enum):
    UserIdentity = "UserIdentity"
    Nonce = "Nonce"
    KeyMaterial = "KeyMaterial"
    AlgorithmSelector = "AlgorithmSelector"
    Mac = "Mac"
    Config = "Config"
    Spare = "Spare"


class Layer(enum.Enum):
    RRC = "RRC"
    NAS = "NAS"
    AS = "AS"


class Direction(enum.Enum):
    Uplink = "Uplink"
    Downlink = "Downlink"


class Phase(enum.Enum):
    RrcSetup = "RrcSetup"
    MutualAuth = "MutualAuth"
    NasSecurity = "NasSecurity"
    AsSecurity = "AsSecurity"

    @property
    def rank(self) -> int:
        return _PHASE_ORDER.index(self)


_PHASE_ORDER = [Phase.RrcSetup, Phase.MutualAuth, Phase.NasSecurity, Phase.AsSecurity]


class Property(enum.Enum):
    """The four security properties, in vector order [c, i, au, ac]."""

    Confidentiality = "C"
    Integrity = "I"
    Authentication = "Au"
    Accounting = "Ac"

    @property
    def attr(self) -> str:
        return self.name.lower()


PROPERTIES = (
    Property.Confidentiality,
    Property.Integrity,
    Property.Authentication,
    Property.Accounting,
)


class Capability(enum.Enum):
    Eavesdrop = "Eavesdrop"
    Inject = "Inject"
    Replay = "Replay"
    MitmRelay = "MitmRelay"


class FortificationKind(enum.Enum):
    IntegrityProtectRrcTransactionId = "IntegrityProtectRrcTransactionId"
    HashedImsi = "HashedImsi"
    HashedImsiWithIntegrity = "HashedImsiWithIntegrity"
    AsymmetricEncryptionPreAuth = "AsymmetricEncryptionPreAuth"


# ---------------------------------------------------------------- domains


@dataclass(frozen=True)
class Enumerated:
    values: tuple[int, ...]

    def contains(self, value: int, width: int) -> bool:
        return value in self.values

    def size(self, width: int) -> int:
        return len(set(self.values))


@dataclass(frozen=True)
class Range:
    lo: int
    hi: int

    def contains(self, value: int, width: int) -> bool:
        return self.lo <= value <= self.hi

    def size(self, width: int) -> int:
        return self.hi - self.lo + 1


@dataclass(frozen=True)
class Opaque:
    """Domain whose legal values are not modelled; every pattern is legal."""

    def contains(self, value: int, width: int) -> bool:
        return 0 <= value < (1 << width)

    def size(self, width: int) -> int:
        return 1 << width


Domain = Union[Enumerated, Range, Opaque]


# ------------------------------------------------------------- elements


@dataclass(frozen=True)
class IdentifierDef:
    name: str
    bit_width: int
    domain: Domain
    owner_command: str
    semantic_role: Role
    # honest-session value for identifiers with a static value; None for
    # values computed per session (nonces, MACs, counters, keys)
    nominal: Optional[int] = None

    def legal(self, value: int) -> bool:
        return 0 <= value < (1 << self.bit_width) and self.domain.contains(
            value, self.bit_width
        )

    @property
    def legal_count(self) -> int:
        return self.domain.size(self.bit_width)

    @property
    def is_total(self) -> bool:
        """True when every bit pattern of the width is legal."""
        return self.legal_count >= (1 << self.bit_width)

    def smallest_legal(self) -> int:
        d = self.domain
        if isinstance(d, Enumerated):
            return min(d.values)
        if isinstance(d, Range):
            return d.lo
        return 0


@dataclass(frozen=True)
class ProtectedBy:
    protectors: frozenset[str]

    def __init__(self, protectors: Iterable[str]):
        object.__setattr__(self, "protectors", frozenset(protectors))

    def __iter__(self):
        return iter(sorted(self.protectors))


Protection = Optional[ProtectedBy]


@dataclass(frozen=True)
class ProtectionEntry:
    identifier: str
    confidentiality: Protection = None
    integrity: Protection = None
    authentication: Protection = None
    accounting: Protection = None

    def get(self, prop: Property) -> Protection:
        return getattr(self, prop.attr)

    def protectors(self, prop: Property) -> frozenset[str]:
        p = self.get(prop)
        return p.protectors if p is not None else frozenset()


@dataclass(frozen=True)
class CommandDef:
    name: str
    layer: Layer
    direction: Direction
    fields: tuple[str, ...]
    phase: Phase
    length: int


@dataclass(frozen=True)
class KdfRule:
    output: str
    inputs: frozenset[str]
    invertible_inputs: frozenset[str] = frozenset()


@dataclass(frozen=True)
class AssumptionProfile:
    name: str
    known_identifiers: frozenset[str]
    capabilities: frozenset[Capability]


@dataclass(frozen=True)
class FortificationToggle:
    kind: FortificationKind
    parameters: Mapping[str, str] = field(default_factory=dict)

    def __hash__(self):
        return hash((self.kind, tuple(sorted(self.parameters.items()))))


@dataclass(frozen=True)
class SequenceDef:
    """A recorded downlink command sequence used for command-level fuzzing.

    ``commands`` is one honest session's downlink; the recording repeats it
    ``sessions`` times with fixed subscriber identities.
    """

    name: str
    commands: tuple[str, ...]
    sessions: int = 1

    def expanded(self) -> tuple[str, ...]:
        return self.commands * self.sessions


@dataclass(frozen=True)
class ProtocolModel:
    identifiers: tuple[IdentifierDef, ...]
    protections: tuple[ProtectionEntry, ...]
    commands: tuple[CommandDef, ...]
    kdfs: tuple[KdfRule, ...] = ()
    profiles: tuple[AssumptionProfile, ...] = ()
    sequences: tuple[SequenceDef, ...] = ()
    fortifications: tuple[str, ...] = ()

    # -- lookups -----------------------------------------------------------

    @cached_property
    def _ident_index(self) -> dict[str, IdentifierDef]:
        return {i.name: i for i in self.identifiers}

    @cached_property
    def _prot_index(self) -> dict[str, ProtectionEntry]:
        return {p.identifier: p for p in self.protections}

    @cached_property
    def _cmd_index(self) -> dict[str, CommandDef]:
        return {c.name: c for c in self.commands}

    @cached_property
    def _kdf_index(self) -> dict[str, KdfRule]:
        return {k.output: k for k in self.kdfs}

    @cached_property
    def _occurrences(self) -> dict[str, tuple[str, ...]]:
        occ: dict[str, list[str]] = {}
        for c in self.commands:
            for f in c.fields:
                occ.setdefault(f, []).append(c.name)
        return {k: tuple(v) for k, v in occ.items()}

    def identifier(self, name: str) -> IdentifierDef:
        try:
            return self._ident_index[name]
        except KeyError:
            raise UnknownIdentifier(name) from None

    def has_identifier(self, name: str) -> bool:
        return name in self._ident_index

    def protection(self, name: str) -> ProtectionEntry:
        try:
            return self._prot_index[name]
        except KeyError:
            raise UnknownIdentifier(name) from None

    def command(self, name: str) -> CommandDef:
        try:
            return self._cmd_index[name]
        except KeyError:
            raise UnknownCommand(name) from None

    def has_command(self, name: str) -> bool:
        return name in self._cmd_index

    def kdf_for(self, output: str) -> Optional[KdfRule]:
        return self._kdf_index.get(output)

    def profile(self, name: str) -> AssumptionProfile:
        for p in self.profiles:
            if p.name == name:
                return p
        raise KeyError(f"unknown profile {name!r}")

    def sequence(self, name: Optional[str] = None) -> SequenceDef:
        if not self.sequences:
            raise KeyError("model declares no sequence")
        if name is None:
            return self.sequences[0]
        for s in self.sequences:
            if s.name == name:
                return s
        raise KeyError(f"unknown sequence {name!r}")

    def occurrences(self, name: str) -> tuple[str, ...]:
        """Names of the commands carrying ``name`` as a field."""
        return self._occurrences.get(name, ())

    def phase_of(self, name: str) -> Phase:
        """Phase of an identifier, taken from its owner command."""
        return self.command(self.identifier(name).owner_command).phase

    def downlink_commands(self) -> list[CommandDef]:
        return [c for c in self.commands if c.direction is Direction.Downlink]

    @cached_property
    def model_id(self) -> str:
        """Content digest; two equal models share the id."""
        from .modelfile import dump_model

        return hashlib.sha256(dump_model(self).encode()).hexdigest()[:16]


# ---------------------------------------------------------------- validate


class ViolationKind(enum.Enum):
    DuplicateName = "DuplicateName"
    DomainViolation = "DomainViolation"
    UnresolvedReference = "UnresolvedReference"
    ProtectionCount = "ProtectionCount"
    CycleViolation = "CycleViolation"
    WidthViolation = "WidthViolation"
    PhaseOrderViolation = "PhaseOrderViolation"
    KdfViolation = "KdfViolation"
    ProfileViolation = "ProfileViolation"
    SequenceViolation = "SequenceViolation"


@dataclass(frozen=True, order=True)
class Violation:
    kind: ViolationKind
    element: str
    message: str

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "element": self.element, "message": self.message}


def _cyclic_components(edges: dict[str, set[str]]) -> list[tuple[str, ...]]:
    """Strongly connected groups of nodes that lie on a cycle, canonically sorted."""
    try:
        TopologicalSorter(edges).prepare()
        return []
    except CycleError:
        pass
    nodes = set(edges) | {t for ts in edges.values() for t in ts}

    def reach(src: str) -> set[str]:
        seen: set[str] = set()
        stack = list(edges.get(src, ()))
        while stack:
            n = stack.pop()
            if n not in seen:
                seen.add(n)
                stack.extend(edges.get(n, ()))
        return seen

    closure = {n: reach(n) for n in nodes}
    groups = set()
    for n in nodes:
        if n in closure[n]:
            groups.add(tuple(sorted(m for m in closure[n] if n in closure[m])))
    return sorted(groups)


def validate(model: ProtocolModel) -> list[Violation]:
    """Check every structural invariant; returns violations sorted for stability."""
    out: list[Violation] = []
    add = lambda kind, el, msg: out.append(Violation(kind, el, msg))  # noqa: E731

    names = [i.name for i in model.identifiers]
    ident = {}
    for i in model.identifiers:
        if i.name in ident:
            add(ViolationKind.DuplicateName, i.name, f"identifier {i.name} declared twice")
        ident[i.name] = i
    cmd_names = set()
    for c in model.commands:
        if c.name in cmd_names or c.name in ident:
            add(ViolationKind.DuplicateName, c.name, f"command name {c.name} is not unique")
        cmd_names.add(c.name)

    for i in model.identifiers:
        if i.bit_width < 1:
            add(ViolationKind.DomainViolation, i.name, "bit width must be at least 1")
            continue
        top = 1 << i.bit_width
        d = i.domain
        if isinstance(d, Enumerated):
            if not d.values:
                add(ViolationKind.DomainViolation, i.name, "enumerated domain is empty")
            for v in d.values:
                if not 0 <= v < top:
                    add(ViolationKind.DomainViolation, i.name, f"value {v:#x} exceeds {i.bit_width} bits")
        elif isinstance(d, Range):
            if d.lo > d.hi or d.lo < 0 or d.hi >= top:
                add(ViolationKind.DomainViolation, i.name, f"range {d.lo:#x}..{d.hi:#x} invalid for {i.bit_width} bits")
        if i.nominal is not None and not i.legal(i.nominal):
            add(ViolationKind.DomainViolation, i.name, "nominal value outside the legal domain")
        if i.owner_command not in cmd_names:
            add(ViolationKind.UnresolvedReference, i.name, f"owner command {i.owner_command} not declared")

    # protections: exactly one per identifier, references resolve
    seen: dict[str, int] = {}
    for p in model.protections:
        seen[p.identifier] = seen.get(p.identifier, 0) + 1
        if p.identifier not in ident:
            add(ViolationKind.UnresolvedReference, p.identifier, "protection entry for undeclared identifier")
        for prop in PROPERTIES:
            for ref in p.protectors(prop):
                if ref not in ident:
                    add(ViolationKind.UnresolvedReference, ref, f"protector of {p.identifier} ({prop.value}) not declared")
    for n in names:
        if seen.get(n, 0) != 1:
            add(ViolationKind.ProtectionCount, n, f"expected one protection entry, found {seen.get(n, 0)}")

    for prop in PROPERTIES:
        edges: dict[str, set[str]] = {}
        for p in model.protections:
            edges.setdefault(p.identifier, set()).update(p.protectors(prop))
        for group in _cyclic_components(edges):
            add(ViolationKind.CycleViolation, group[0], f"{prop.name} protection cycle through {', '.join(group)}")

    # commands: field references, width sums, phase order
    last_rank = -1
    for c in model.commands:
        total = 0
        for f in c.fields:
            if f not in ident:
                add(ViolationKind.UnresolvedReference, f, f"field of {c.name} not declared")
            else:
                total += ident[f].bit_width
        if total != c.length:
            add(ViolationKind.WidthViolation, c.name, f"field widths sum to {total}, declared length {c.length}")
        if c.phase.rank < last_rank:
            add(ViolationKind.PhaseOrderViolation, c.name, f"phase {c.phase.value} listed after a later phase")
        last_rank = max(last_rank, c.phase.rank)

    kdf_edges: dict[str, set[str]] = {}
    outputs = set()
    for k in model.kdfs:
        if k.output in outputs:
            add(ViolationKind.KdfViolation, k.output, "output derived by more than one rule")
        outputs.add(k.output)
        for ref in (k.output, *k.inputs):
            if ref not in ident:
                add(ViolationKind.UnresolvedReference, ref, f"KDF rule for {k.output} references undeclared name")
        if k.output in k.inputs:
            add(ViolationKind.KdfViolation, k.output, "KDF output listed among its inputs")
        if not k.invertible_inputs <= k.inputs:
            add(ViolationKind.KdfViolation, k.output, "invertible inputs must be a subset of inputs")
        kdf_edges.setdefault(k.output, set()).update(k.inputs)
    for group in _cyclic_components(kdf_edges):
        add(ViolationKind.CycleViolation, group[0], f"KDF derivation cycle through {', '.join(group)}")

    for p in model.profiles:
        for ref in p.known_identifiers:
            if ref not in ident:
                add(ViolationKind.UnresolvedReference, ref, f"profile {p.name} knows undeclared identifier")
        if not p.capabilities:
            add(ViolationKind.ProfileViolation, p.name, "profile grants no capability")

    for s in model.sequences:
        if s.sessions < 1:
            add(ViolationKind.SequenceViolation, s.name, "sessions must be positive")
        for cname in s.commands:
            if cname not in cmd_names:
                add(ViolationKind.UnresolvedReference, cname, f"sequence {s.name} names undeclared command")
            elif model.command(cname).direction is not Direction.Downlink:
                add(ViolationKind.SequenceViolation, cname, f"sequence {s.name} must list downlink commands only")

    return sorted(out, key=lambda v: (v.kind.value, v.element, v.message))
