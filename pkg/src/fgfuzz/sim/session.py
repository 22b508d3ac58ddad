"""Session driver: a FIFO bus between the three parties and the interceptor."""

from __future__ import annotations

import json
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from ..errors import FgfuzzError
from ..model import ProtocolModel
from . import keys as ks
from .codec import Codec, WireMessage
from .interceptor import Attacker, Interceptor
from .parties import (
    BS,
    CN,
    OPERATOR_SECRET,
    PARTIES,
    TERMINAL,
    UE,
    Backhaul,
    FailReason,
    PartyContext,
    PartyPhase,
    new_bs,
    new_cn,
    new_ue,
    start_ue,
    step,
)

DEFAULT_TIMEOUT = 10
DEFAULT_STEP_CAP = 200


@dataclass
class SimConfig:
    model: ProtocolModel
    seed: int = 0
    timeout: int = DEFAULT_TIMEOUT
    step_cap: int = DEFAULT_STEP_CAP
    planted: frozenset = frozenset()
    ue_autostart: bool = True
    identity_variant: int = 0


@dataclass
class SimEvent:
    step: int
    kind: str  # deliver, drop, state, note, backhaul
    party: str = ""
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"step": self.step, "kind": self.kind, "party": self.party, **self.detail}


@dataclass
class SimTrace:
    events: list
    terminal: bool
    phases: dict  # party -> (phase, fail reason or None)
    keys: dict  # party -> {key name: value}
    attacker: dict
    seed: int = 0
    steps: int = 0  # logical bus ticks, quiet ones included

    def phase(self, party: str) -> PartyPhase:
        return self.phases[party][0]

    def reason(self, party: str) -> Optional[FailReason]:
        return self.phases[party][1]

    def notes(self) -> list[str]:
        return [e.detail["note"] for e in self.events if e.kind == "note"]

    def state_changes(self, party: Optional[str] = None) -> list[SimEvent]:
        return [e for e in self.events if e.kind == "state" and (party is None or e.party == party)]

    def deliveries(self) -> list[SimEvent]:
        return [e for e in self.events if e.kind == "deliver"]

    def summary(self) -> dict:
        return {
            "kind": "summary",
            "seed": self.seed,
            "steps": self.steps,
            "terminal": self.terminal,
            "phases": {p: [ph.value, r.value if r else None] for p, (ph, r) in self.phases.items()},
            "keys": {p: {k: hex(v) for k, v in sorted(d.items())} for p, d in self.keys.items()},
            "attacker": self.attacker,
        }

    def to_jsonl(self) -> str:
        lines = [json.dumps(e.to_dict(), sort_keys=True) for e in self.events]
        lines.append(json.dumps(self.summary(), sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "SimTrace":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not rows or rows[-1].get("kind") != "summary":
            raise FgfuzzError("trace lacks its summary line")
        summ = rows.pop()
        events = []
        for r in rows:
            r = dict(r)
            events.append(SimEvent(r.pop("step"), r.pop("kind"), r.pop("party"), r))
        phases = {p: (PartyPhase(ph), FailReason(r) if r else None) for p, (ph, r) in summ["phases"].items()}
        keys = {p: {k: int(v, 16) for k, v in d.items()} for p, d in summ["keys"].items()}
        return cls(events, summ["terminal"], phases, keys, summ["attacker"], summ["seed"], summ.get("steps", 0))


def pubkey_value() -> int:
    return ks.kdf("PubKey_gNB", OPERATOR_SECRET)


class Bus:
    def __init__(self, config: SimConfig, interceptor: Optional[Interceptor] = None):
        self.config = config
        self.model = config.model
        self.codec = Codec(config.model)
        self.interceptor = interceptor or Interceptor()
        pub = pubkey_value()
        self.states = {UE: new_ue(self.model, pub, config.identity_variant), BS: new_bs(pub), CN: new_cn(pub)}
        subscribers = {}
        for v in {0, config.identity_variant}:
            imsi = new_ue(self.model, pub, v).vars["IMSI"]
            subscribers[imsi] = ks.subscriber_key(imsi, OPERATOR_SECRET)
        self.ctx = PartyContext(self.codec, frozenset(config.planted), random.Random(config.seed), subscribers, pub)
        self.queue: deque = deque()
        self.delayed: list = []
        self.events: list[SimEvent] = []
        self.steps = 0

    # -- helpers used by interceptors ------------------------------------

    def delay(self, msg: WireMessage, ticks: int) -> None:
        self.delayed.append([max(1, ticks), msg])

    def log(self, kind: str, party: str = "", **detail) -> None:
        self.events.append(SimEvent(self.steps, kind, party, detail))

    # -- core ----------------------------------------------------------

    def _apply(self, party: str, result, cause: str) -> None:
        old = self.states[party]
        new = result.state
        for note in result.notes:
            self.log("note", party, note=note)
        if (new.phase, new.reason) != (old.phase, old.reason):
            self.log(
                "state",
                party,
                old=old.phase.value,
                new=new.phase.value,
                reason=new.reason.value if new.reason else None,
                cause=cause,
            )
        if new.phase is PartyPhase.Failed and new.reason is not FailReason.Timeout:
            # local release
            new = new.copy()
            new.phase, new.reason = PartyPhase.Idle, None
            new.keys = {k: v for k, v in new.keys.items() if k == "K"}
            self.log("state", party, old="Failed", new="Idle", reason=None, cause="release")
        self.states[party] = new
        for out in result.outputs:
            if isinstance(out, WireMessage):
                self.queue.append((out if cause == "honest" else _with_cause(out, cause), True))
            else:
                self.queue.append((out, False))

    def _deliver(self, msg) -> None:
        if isinstance(msg, Backhaul):
            self.log("backhaul", msg.receiver, message=msg.kind, sender=msg.sender)
            self._apply(msg.receiver, step(self.states[msg.receiver], msg, self.ctx), "honest")
            return
        self.log(
            "deliver",
            msg.receiver,
            command=msg.command,
            sender=msg.sender,
            origin=msg.origin,
            bits=hex(msg.bits),
        )
        if msg.cause == "attacker" and msg.origin == "honest":
            self.log("note", msg.sender, note="attacker_received:" + msg.command)
        self._apply(msg.receiver, step(self.states[msg.receiver], msg, self.ctx), msg.origin)

    def _through_interceptor(self, msgs) -> None:
        for m in msgs:
            self._deliver(m)

    def _waiting(self) -> list[str]:
        return [p for p in PARTIES if self.states[p].phase not in TERMINAL]

    def run(self, attacker: Optional[Attacker] = None) -> SimTrace:
        cfg = self.config
        if cfg.ue_autostart:
            self._apply(UE, start_ue(self.ctx, self.states[UE]), "honest")
        self._through_interceptor(self.interceptor.start(self))
        quiet = 0
        terminal = True
        while True:
            if self.steps >= cfg.step_cap:
                terminal = False
                self.log("note", note="step_cap_reached")
                break
            for d in list(self.delayed):
                d[0] -= 1
                if d[0] <= 0:
                    self.delayed.remove(d)
                    self.queue.append((d[1], False))
            if self.queue:
                quiet = 0
                self.steps += 1
                msg, radio = self.queue.popleft()
                if radio:
                    passed = self.interceptor.intercept(msg, self)
                    if not any(p is msg for p in passed):
                        self.log("drop", msg.receiver, command=msg.command, sender=msg.sender)
                    self._through_interceptor(passed)
                else:
                    self._deliver(msg)
                continue
            if not self._waiting() and not self.delayed:
                break
            self.steps += 1
            quiet += 1
            if quiet >= cfg.timeout and not self.delayed:
                for p in self._waiting():
                    st = self.states[p].copy()
                    st.phase, st.reason = PartyPhase.Failed, FailReason.Timeout
                    self.log("state", p, old=self.states[p].phase.value, new="Failed", reason="Timeout", cause="timer")
                    self.states[p] = st
        att = self.interceptor.attacker if attacker is None else attacker
        return SimTrace(
            events=self.events,
            terminal=terminal,
            phases={p: (s.phase, s.reason) for p, s in self.states.items()},
            keys={p: {k: v for k, v in s.keys.items() if k in ks.SESSION_KEYS} for p, s in self.states.items()},
            attacker=att.summary() if att is not None else {"derived": {}, "recorded_identities": [], "received": []},
            seed=cfg.seed,
            steps=self.steps,
        )


def _with_cause(msg: WireMessage, cause: str) -> WireMessage:
    from dataclasses import replace

    return replace(msg, cause=cause)


def run_session(config: SimConfig, interceptor: Optional[Interceptor] = None) -> SimTrace:
    """Run one attach from RRC setup to AS security (or until it stalls)."""
    return Bus(config, interceptor).run()
