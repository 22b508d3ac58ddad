"""Attacker state and the scripted radio interceptor."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Sequence

from ..errors import FgfuzzError
from ..model import AssumptionProfile, Capability, Direction, Role
from . import keys as ks
from .codec import Codec, WireMessage
from .parties import route


class CapabilityViolation(FgfuzzError):
    """A script used an action its attacker profile does not allow."""


# which capabilities allow each action (any one suffices)
ALLOWED = {
    "Record": {Capability.Eavesdrop, Capability.MitmRelay},
    "Block": {Capability.MitmRelay},
    "Delay": {Capability.MitmRelay},
    "InjectModified": {Capability.Inject, Capability.MitmRelay},
    "InjectForged": {Capability.Inject, Capability.MitmRelay},
    "ReplayRecorded": {Capability.Replay, Capability.MitmRelay},
    "InjectStale": {Capability.Replay, Capability.MitmRelay},
}


class Attacker:
    """What the attacker has seen, recorded and derived during a run."""

    def __init__(self, codec: Codec, profile: Optional[AssumptionProfile] = None, known: Optional[Mapping[str, int]] = None, enforce: bool = True):
        self.codec = codec
        self.profile = profile
        self.enforce = enforce and profile is not None
        self.knowledge: dict[str, int] = dict(known or {})
        self.seen: dict[str, dict[str, int]] = {}
        self.recordings: dict[str, list[WireMessage]] = {}
        self.recorded_identities: list[tuple[str, str]] = []
        self.derived: dict[str, int] = {}
        self.received: list[str] = []

    @property
    def passive(self) -> bool:
        if self.profile is None:
            return True
        caps = self.profile.capabilities
        return Capability.Eavesdrop in caps or Capability.MitmRelay in caps

    def require(self, action: str) -> None:
        if not self.enforce:
            return
        if not (ALLOWED[action] & set(self.profile.capabilities)):
            raise CapabilityViolation(f"profile {self.profile.name} does not allow {action}")

    def readable(self, msg: WireMessage) -> tuple[dict[str, int], set[str]]:
        wire = self.codec.decode_message(msg)
        return self.codec.open(msg.command, wire, self.knowledge)

    def observe(self, msg: WireMessage) -> None:
        if not self.passive:
            return
        vals, unreadable = self.readable(msg)
        readable = {f: v for f, v in vals.items() if f not in unreadable}
        self.seen[msg.command] = readable
        self.knowledge.update(readable)
        if msg.cause == "attacker" and msg.origin == "honest":
            self.received.append(msg.command)

    def record(self, tag: str, msg: WireMessage) -> None:
        self.require("Record")
        self.recordings.setdefault(tag, []).append(msg)
        vals, unreadable = self.readable(msg)
        model = self.codec.model
        for f in vals:
            if f not in unreadable and model.identifier(f).semantic_role is Role.UserIdentity:
                self.recorded_identities.append((msg.command, f))

    def derive(self, name: str) -> Optional[int]:
        """Derive a key (recursively) from what has been learnt, if possible."""
        if name in self.knowledge:
            return self.knowledge[name]
        inputs = ks.DERIVATIONS.get(name)
        if inputs is None:
            return None
        for i in inputs:
            if i not in self.knowledge and self.derive(i) is None:
                return None
        value = ks.derive(name, self.knowledge)
        self.knowledge[name] = value
        self.derived[name] = value
        return value

    def forge(self, command: str, values: Optional[Mapping[str, int]] = None) -> WireMessage:
        """Build a message from nominal values, learnt values and overrides.

        Fields the attacker cannot seal travel as-is.
        """
        self.require("InjectForged")
        model = self.codec.model
        fields = self.codec.layout(command)[0]
        out = {}
        for f in fields:
            ident = model.identifier(f)
            if values and f in values:
                out[f] = values[f]
            elif f in self.knowledge:
                out[f] = self.knowledge[f]
            else:
                out[f] = ident.nominal if ident.nominal is not None else ident.smallest_legal()
        out = self.codec.fill_hashes(command, out)
        sealed = dict(out)
        for f, prot in self.codec.sealed_fields(command).items():
            if all(p in self.knowledge for p in prot):
                sealed[f] = self.codec.seal(command, {f: out[f]}, self.knowledge)[f]
        msg = self.codec.encode(command, sealed)
        return _as_attacker(msg, model)

    def summary(self) -> dict:
        return {
            "derived": {k: hex(v) for k, v in sorted(self.derived.items())},
            "recorded_identities": [list(t) for t in self.recorded_identities],
            "received": list(self.received),
        }


def _as_attacker(msg: WireMessage, model) -> WireMessage:
    return replace(msg, sender="ATTACKER", receiver=route(model, msg.command, "ATTACKER"), origin="attacker", cause="attacker")


# ---------------------------------------------------------------- actions


@dataclass(frozen=True)
class Forward:
    pass


@dataclass(frozen=True)
class Block:
    pass


@dataclass(frozen=True)
class Record:
    tag: str


@dataclass(frozen=True)
class ReplayRecorded:
    tag: str
    index: int = -1
    times: int = 1


@dataclass(frozen=True)
class InjectModified:
    fields: tuple  # ((name, value), ...) on-wire values


@dataclass(frozen=True)
class Delay:
    ticks: int


@dataclass(frozen=True)
class InjectForged:
    command: str
    values: tuple = ()
    times: int = 1


@dataclass(frozen=True)
class InjectStale:
    message: WireMessage
    times: int = 1


@dataclass(frozen=True)
class Custom:
    """Escape hatch for scripted attacks: ``fn(attacker, msg)`` returns
    messages to send after the triggering one is handled."""

    fn: Callable
    label: str = "custom"


Action = object

TriggerKey = tuple  # (Direction value, command, occurrence)


class Interceptor:
    """Base class: forwards everything."""

    attacker: Optional[Attacker] = None

    def start(self, bus) -> list[WireMessage]:
        return []

    def intercept(self, msg: WireMessage, bus) -> list[WireMessage]:
        return [msg]


class InterceptorScript(Interceptor):
    """Actions keyed by (direction, command, occurrence).

    Occurrences count honest radio messages per (direction, command) from 0.
    A trigger with no Forward, Block, Delay or InjectModified action forwards
    the original before anything it injects.
    """

    def __init__(self, attacker: Attacker, rules: Optional[Mapping[TriggerKey, Sequence[Action]]] = None, on_start: Sequence[Action] = ()):
        self.attacker = attacker
        self.rules = {(Direction(d).value, c, int(k)): list(v) for (d, c, k), v in (rules or {}).items()}
        self.on_start = list(on_start)
        self._counts: dict[tuple, int] = {}

    def start(self, bus) -> list[WireMessage]:
        return self._apply(self.on_start, None, bus)

    def intercept(self, msg: WireMessage, bus) -> list[WireMessage]:
        model = self.attacker.codec.model
        self.attacker.observe(msg)
        direction = model.command(msg.command).direction.value
        key = (direction, msg.command)
        k = self._counts.get(key, 0)
        self._counts[key] = k + 1
        actions = self.rules.get((direction, msg.command, k))
        if not actions:
            return [msg]
        return self._apply(actions, msg, bus)

    def _apply(self, actions, msg: Optional[WireMessage], bus) -> list[WireMessage]:
        att = self.attacker
        model = att.codec.model
        out: list[WireMessage] = []
        handled = False
        for a in actions:
            if isinstance(a, Forward):
                out.append(msg)
                handled = True
            elif isinstance(a, Block):
                att.require("Block")
                handled = True
            elif isinstance(a, Delay):
                att.require("Delay")
                bus.delay(msg, a.ticks)
                handled = True
            elif isinstance(a, InjectModified):
                att.require("InjectModified")
                vals = att.codec.decode_message(msg)
                vals.update(dict(a.fields))
                mod = att.codec.encode(msg.command, vals)
                if mod.bits == msg.bits:
                    # rewriting a field to its current value leaves the
                    # honest message on the air
                    out.append(msg)
                else:
                    out.append(replace(mod, sender=msg.sender, receiver=msg.receiver, origin="attacker", cause="attacker"))
                handled = True
            elif isinstance(a, Record):
                att.record(a.tag, msg)
            elif isinstance(a, ReplayRecorded):
                att.require("ReplayRecorded")
                rec = att.recordings.get(a.tag, [])
                if rec:
                    out.extend([_as_attacker(rec[a.index], model)] * a.times)
            elif isinstance(a, InjectForged):
                out.extend([att.forge(a.command, dict(a.values))] * a.times)
            elif isinstance(a, InjectStale):
                att.require("InjectStale")
                out.extend([_as_attacker(a.message, model)] * a.times)
            elif isinstance(a, Custom):
                out.extend(_as_attacker(m, model) if m.origin != "attacker" else m for m in a.fn(att, msg))
            else:
                raise TypeError(f"unknown interceptor action {a!r}")
        if msg is not None and not handled:
            out.insert(0, msg)
        return out


@dataclass
class DownlinkSchedule(Interceptor):
    """Rewrites one session's downlink as a list of slots.

    A slot is either ``("g", k)``, the k-th genuine downlink message of the
    session, or ``("m", message)``, an injected one.  Slots are released in
    order; a genuine slot waits until that message has arrived.  Genuine
    messages that no slot names are withheld; a genuine slot named twice is
    a replay.  Downlink commands outside the expected order pass through.
    """

    expected: tuple
    slots: list
    attacker: Optional[Attacker] = None
    _held: dict = field(default_factory=dict)
    _released: set = field(default_factory=set)
    _next: int = 0
    _count: int = 0

    def _drain(self, model) -> list[WireMessage]:
        out = []
        while self._next < len(self.slots):
            kind, val = self.slots[self._next]
            if kind == "g":
                if val not in self._held:
                    break
                m = self._held[val]
                out.append(_as_attacker(m, model) if val in self._released else m)
                self._released.add(val)
            else:
                out.append(_as_attacker(val, model))
            self._next += 1
        return out

    def intercept(self, msg: WireMessage, bus) -> list[WireMessage]:
        model = bus.model
        if self.attacker is not None:
            self.attacker.observe(msg)
        if model.command(msg.command).direction is Direction.Uplink:
            # injected slots ahead of the first genuine one wait for the UE
            # to start talking
            return [msg] + self._drain(model)
        if self._count < len(self.expected) and msg.command == self.expected[self._count]:
            self._held[self._count] = msg
            self._count += 1
            return self._drain(model)
        return [msg]
