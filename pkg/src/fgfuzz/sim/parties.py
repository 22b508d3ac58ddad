"""Honest UE, base station and core network state machines.

``step`` is a pure function of a party's state and one incoming message.
Receivers check field legality and MACs; in phases before NAS security an
unexpected or malformed message is ignored, afterwards it fails the party
closed.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field, replace
from typing import Optional

from ..model import Direction, Layer
from . import keys as ks
from .codec import Codec, WireMessage

UE, BS, CN = "UE", "BS", "CN"
PARTIES = (UE, BS, CN)

MAX_CAUSE = 6  # establishment causes above this are spare or reserved
OPERATOR_SECRET = 0x5EC12E7


class PartyPhase(enum.Enum):
    Idle = "Idle"
    RrcRequested = "RrcRequested"
    RrcComplete = "RrcComplete"
    AuthPending = "AuthPending"
    AuthDone = "AuthDone"
    NasSecured = "NasSecured"
    AsSecured = "AsSecured"
    Disconnected = "Disconnected"
    Failed = "Failed"


P = PartyPhase
PRE_NAS = (P.Idle, P.RrcRequested, P.RrcComplete, P.AuthPending, P.AuthDone)
SECURED = (P.NasSecured, P.AsSecured)
TERMINAL = (P.Idle, P.AsSecured, P.Disconnected, P.Failed)
CONNECTED_ORDER = (P.RrcRequested, P.RrcComplete, P.AuthPending, P.AuthDone, P.NasSecured, P.AsSecured)


class FailReason(enum.Enum):
    IntegrityFailure = "IntegrityFailure"
    UnexpectedMessage = "UnexpectedMessage"
    MalformedMessage = "MalformedMessage"
    Timeout = "Timeout"


PLANTED_FAULTS = (
    "nas_smc_replay_rekey",
    "as_smc_replay_rekey",
    "as_smc_before_nas",
    "auth_request_after_nas_security",
)


@dataclass(frozen=True)
class Backhaul:
    """Trusted link between base station and core network."""

    kind: str  # KeNB, Release, AsDone
    sender: str
    receiver: str
    payload: tuple = ()

    @property
    def command(self) -> str:
        return "backhaul:" + self.kind


@dataclass
class PartyState:
    role: str
    phase: PartyPhase = P.Idle
    reason: Optional[FailReason] = None
    vars: dict = field(default_factory=dict)
    keys: dict = field(default_factory=dict)
    secrets: dict = field(default_factory=dict)

    def copy(self) -> "PartyState":
        return replace(self, vars=dict(self.vars), keys=dict(self.keys), secrets=dict(self.secrets))


@dataclass
class StepResult:
    state: PartyState
    outputs: list = field(default_factory=list)
    notes: list = field(default_factory=list)


@dataclass
class PartyContext:
    codec: Codec
    planted: frozenset = frozenset()
    rng: random.Random = field(default_factory=random.Random)
    subscribers: dict = field(default_factory=dict)  # IMSI -> K
    pubkey: int = 0


# ---------------------------------------------------------------- setup


def identity_values(model, variant: int = 0) -> dict[str, int]:
    """Fixed subscriber identity; ``variant`` yields a distinct second UE."""
    vals = {}
    for name in ("UE_Identity", "IMSI", "UE_NetworkCapability", "SN_id", "NAS_KSI_UE", "selectedPLMN_Identity"):
        ident = model.identifier(name) if model.has_identifier(name) else None
        if ident is not None and ident.nominal is not None:
            vals[name] = ident.nominal
    if variant:
        vals["IMSI"] = vals["IMSI"] ^ variant
        vals["UE_Identity"] = vals["UE_Identity"] ^ variant
    return vals


def new_ue(model, pubkey: int, variant: int = 0) -> PartyState:
    ident = identity_values(model, variant)
    k = ks.subscriber_key(ident["IMSI"], OPERATOR_SECRET)
    secrets = {"IMSI": ident["IMSI"], "UE_Identity": ident["UE_Identity"], "PubKey_gNB": pubkey}
    return PartyState(UE, vars=ident, keys={"K": k}, secrets=secrets)


def new_bs(pubkey: int) -> PartyState:
    return PartyState(BS, secrets={"PubKey_gNB": pubkey})


def new_cn(pubkey: int) -> PartyState:
    return PartyState(CN, secrets={"PubKey_gNB": pubkey})


def route(model, command: str, sender: str) -> str:
    """Receiver of a radio command: downlink goes to the UE, uplink to the
    base station (RRC and AS layers) or the core network (NAS)."""
    cmd = model.command(command)
    if cmd.direction is Direction.Downlink:
        return UE
    return CN if cmd.layer is Layer.NAS else BS


def _nominal(model, name: str) -> int:
    n = model.identifier(name).nominal
    return 0 if n is None else n


def _emit(ctx: PartyContext, st: PartyState, command: str, values: dict) -> WireMessage:
    codec = ctx.codec
    vals = codec.fill_hashes(command, values)
    wire = codec.seal(command, vals, st.secrets)
    return codec.encode(command, wire, sender=st.role, receiver=route(codec.model, command, st.role))


def _read(ctx: PartyContext, st: PartyState, msg: WireMessage) -> Optional[dict]:
    """Plaintext values, or None when some field is illegal."""
    wire = ctx.codec.decode_message(msg)
    vals, _ = ctx.codec.open(msg.command, wire, st.secrets)
    model = ctx.codec.model
    for f, v in vals.items():
        if not model.identifier(f).legal(v):
            return None
    return vals


def _fail(st: PartyState, reason: FailReason) -> PartyState:
    st.phase = P.Failed
    st.reason = reason
    return st


def _unexpected(st: PartyState) -> PartyState:
    if st.phase in SECURED:
        return _fail(st, FailReason.UnexpectedMessage)
    return st


def start_ue(ctx: PartyContext, st: PartyState) -> StepResult:
    """UE leaves Idle by requesting an RRC connection."""
    st = st.copy()
    vals = dict(st.vars, establishmentCause=_nominal(ctx.codec.model, "establishmentCause"), spare=0)
    out = [_emit(ctx, st, "RRCConnectionRequest", vals)]
    st.phase = P.RrcRequested
    return StepResult(st, out)


def step(state: PartyState, incoming, ctx: PartyContext) -> StepResult:
    """Advance one party by one incoming radio or backhaul message."""
    st = state.copy()
    if st.phase in (P.Disconnected, P.Failed):
        return StepResult(st)
    handler = {UE: _ue_step, BS: _bs_step, CN: _cn_step}[st.role]
    if isinstance(incoming, Backhaul):
        return handler(st, incoming, None, ctx)
    vals = _read(ctx, st, incoming)
    if vals is None:
        if st.phase in SECURED:
            return StepResult(_fail(st, FailReason.MalformedMessage))
        return StepResult(st, notes=["malformed:" + incoming.command])
    return handler(st, incoming, vals, ctx)


# ---------------------------------------------------------------- UE


def _ue_auth(ctx, st: PartyState, vals: dict) -> list:
    st.vars["RAND"] = vals["RAND"]
    st.vars["KSI_ASME"] = vals["KSI_ASME"]
    st.keys["K_ASME"] = ks.derive("K_ASME", {"K": st.keys["K"], "RAND": vals["RAND"], "SN_id": st.vars["SN_id"]})
    return [_emit(ctx, st, "AuthenticationResponse", {"RES": ks.res(st.keys["K"], vals["RAND"])})]


def _nas_smc_valid(st: PartyState, vals: dict) -> Optional[dict]:
    """Derived NAS keys when the command checks out, else None."""
    if "K_ASME" not in st.keys:
        return None
    if vals["KSI_ASME"] != st.vars.get("KSI_ASME") or vals["UE_SecurityCapability"] != st.vars["UE_NetworkCapability"]:
        return None
    k_enc = ks.derive("K_NASenc", {"K_ASME": st.keys["K_ASME"], "NAS_EEA": vals["NAS_EEA"]})
    k_int = ks.derive("K_NASint", {"K_ASME": st.keys["K_ASME"], "NAS_EIA": vals["NAS_EIA"]})
    expect = ks.mac(k_int, "NAS_SMC", vals["KSI_ASME"], vals["UE_SecurityCapability"], vals["NAS_EEA"], vals["NAS_EIA"])
    if expect != vals["NAS_MAC"]:
        return None
    return {"K_NASenc": k_enc, "K_NASint": k_int}


def _ue_nas_complete(ctx, st: PartyState, nas_keys: dict) -> list:
    st.keys.update(nas_keys)
    count = st.vars.get("NAS_UL_COUNT", -1) + 1
    st.vars["NAS_UL_COUNT"] = count
    st.keys["K_eNB"] = ks.derive("K_eNB", {"K_ASME": st.keys["K_ASME"], "NAS_UL_COUNT": count})
    mac = ks.mac(st.keys["K_NASint"], "NAS_SMC_DONE", count)
    return [_emit(ctx, st, "NASSecurityModeComplete", {"NAS_UL_COUNT": count, "NAS_MAC_UL": mac})]


def _as_smc_valid(st: PartyState, vals: dict) -> Optional[dict]:
    if "K_eNB" not in st.keys:
        return None
    base = {"K_eNB": st.keys["K_eNB"], "AS_EEA": vals["AS_EEA"], "AS_EIA": vals["AS_EIA"]}
    as_keys = {name: ks.derive(name, base) for name in ks.AS_KEYS}
    if ks.mac(as_keys["K_RRCint"], "AS_SMC", vals["AS_EEA"], vals["AS_EIA"]) != vals["MAC_I"]:
        return None
    return as_keys


def _ue_as_complete(ctx, st: PartyState, as_keys: dict) -> list:
    st.keys.update(as_keys)
    tid = st.vars.get("RRC_TransactionIdentifier", 0)
    mac = ks.mac(as_keys["K_RRCint"], "AS_SMC_DONE", tid)
    return [_emit(ctx, st, "ASSecurityModeComplete", {"RRC_TransactionIdentifier": tid, "MAC_I_UL": mac})]


def _ue_step(st: PartyState, msg: WireMessage, vals: dict, ctx: PartyContext) -> StepResult:
    cmd = msg.command
    model = ctx.codec.model
    phase = st.phase
    out: list = []
    notes: list = []
    if model.command(cmd).direction is Direction.Uplink:
        return StepResult(st)
    if cmd == "RRCConnectionSetup":
        if phase is not P.RrcRequested:
            return StepResult(_unexpected(st))
        st.vars["RRC_TransactionIdentifier"] = vals["RRC_TransactionIdentifier"]
        st.vars["C_RNTI"] = vals["C_RNTI"]
        out.append(_emit(ctx, st, "RRCConnectionSetupComplete", st.vars))
        out.append(_emit(ctx, st, "AttachRequest", st.vars))
        st.phase = P.AuthPending
    elif cmd == "RRCConnectionReject":
        if phase is not P.RrcRequested:
            return StepResult(_unexpected(st))
        st.phase = P.Disconnected
    elif cmd == "RRCConnectionRelease":
        if phase is not P.Idle:
            st.phase = P.Disconnected
    elif cmd == "IdentityRequest":
        if phase not in (P.RrcComplete, P.AuthPending, P.AuthDone):
            return StepResult(_unexpected(st))
        out.append(_emit(ctx, st, "IdentityResponse", st.vars))
    elif cmd == "AuthenticationRequest":
        if phase in PRE_NAS:
            out += _ue_auth(ctx, st, vals)
            st.phase = P.AuthDone
        elif "auth_request_after_nas_security" in ctx.planted:
            out += _ue_auth(ctx, st, vals)
            notes.append("planted:auth_request_after_nas_security")
        else:
            return StepResult(_unexpected(st))
    elif cmd == "AttachReject":
        if phase not in (P.AuthPending, P.AuthDone):
            return StepResult(_unexpected(st))
        st.phase = P.Disconnected
    elif cmd == "NASSecurityModeCommand":
        if phase is P.AuthDone:
            nas_keys = _nas_smc_valid(st, vals)
            if nas_keys is None:
                return StepResult(_fail(st, FailReason.IntegrityFailure), notes=["reject:NASSecurityModeCommand"])
            out += _ue_nas_complete(ctx, st, nas_keys)
            st.phase = P.NasSecured
        elif phase in SECURED and "nas_smc_replay_rekey" in ctx.planted and _nas_smc_valid(st, vals) is not None:
            out += _ue_nas_complete(ctx, st, _nas_smc_valid(st, vals))
            notes.append("planted:nas_smc_replay_rekey")
        else:
            return StepResult(_unexpected(st))
    elif cmd == "ASSecurityModeCommand":
        if phase is P.NasSecured:
            as_keys = _as_smc_valid(st, vals)
            if as_keys is None:
                return StepResult(_fail(st, FailReason.IntegrityFailure), notes=["reject:ASSecurityModeCommand"])
            out += _ue_as_complete(ctx, st, as_keys)
            st.phase = P.AsSecured
        elif phase is P.AsSecured and "as_smc_replay_rekey" in ctx.planted and _as_smc_valid(st, vals) is not None:
            out += _ue_as_complete(ctx, st, _as_smc_valid(st, vals))
            notes.append("planted:as_smc_replay_rekey")
        elif phase in (P.AuthPending, P.AuthDone) and "as_smc_before_nas" in ctx.planted:
            # accepted without a key to check it against
            tid = st.vars.get("RRC_TransactionIdentifier", 0)
            out.append(_emit(ctx, st, "ASSecurityModeComplete", {"RRC_TransactionIdentifier": tid, "MAC_I_UL": 0}))
            notes.append("planted:as_smc_before_nas")
        else:
            return StepResult(_unexpected(st))
    return StepResult(st, out, notes)


# ---------------------------------------------------------------- base station


def _bs_step(st: PartyState, msg, vals: Optional[dict], ctx: PartyContext) -> StepResult:
    model = ctx.codec.model
    phase = st.phase
    out: list = []
    notes: list = []
    if isinstance(msg, Backhaul):
        if msg.kind == "KeNB" and phase in (P.RrcRequested, P.RrcComplete):
            payload = dict(msg.payload)
            st.secrets["IMSI"] = payload["IMSI"]
            eea, eia = _nominal(model, "AS_EEA"), _nominal(model, "AS_EIA")
            base = {"K_eNB": payload["K_eNB"], "AS_EEA": eea, "AS_EIA": eia}
            st.keys["K_eNB"] = payload["K_eNB"]
            st.keys.update({name: ks.derive(name, base) for name in ks.AS_KEYS})
            mac = ks.mac(st.keys["K_RRCint"], "AS_SMC", eea, eia)
            out.append(_emit(ctx, st, "ASSecurityModeCommand", {"AS_EEA": eea, "AS_EIA": eia, "MAC_I": mac}))
            st.phase = P.NasSecured
        elif msg.kind == "Release":
            out.append(_release(ctx, st))
            st.phase = P.Disconnected
        return StepResult(st, out, notes)
    cmd = msg.command
    if cmd == "RRCConnectionRequest":
        if phase is not P.Idle:
            return StepResult(_unexpected(st))
        if vals["establishmentCause"] > MAX_CAUSE:
            out.append(_emit(ctx, st, "RRCConnectionReject", {"waitTime": _nominal(model, "waitTime")}))
            notes.append("reject:RRCConnectionRequest")
            return StepResult(st, out, notes)
        tid = _nominal(model, "RRC_TransactionIdentifier")
        st.vars["RRC_TransactionIdentifier"] = tid
        values = {
            "RRC_TransactionIdentifier": tid,
            "C_RNTI": _nominal(model, "C_RNTI"),
            "radioResourceConfigDedicated": _nominal(model, "radioResourceConfigDedicated"),
        }
        out.append(_emit(ctx, st, "RRCConnectionSetup", values))
        st.phase = P.RrcRequested
    elif cmd == "RRCConnectionSetupComplete":
        if phase is P.RrcRequested and vals["RRC_TransactionIdentifier"] == st.vars["RRC_TransactionIdentifier"]:
            st.phase = P.RrcComplete
        else:
            return StepResult(_unexpected(st))
    elif cmd == "ASSecurityModeComplete":
        if phase is not P.NasSecured:
            return StepResult(_unexpected(st))
        expect = ks.mac(st.keys["K_RRCint"], "AS_SMC_DONE", st.vars["RRC_TransactionIdentifier"])
        if vals["MAC_I_UL"] != expect or vals["RRC_TransactionIdentifier"] != st.vars["RRC_TransactionIdentifier"]:
            out.append(_release(ctx, st))
            notes.append("reject:ASSecurityModeComplete")
            return StepResult(_fail(st, FailReason.IntegrityFailure), out, notes)
        st.phase = P.AsSecured
        out.append(Backhaul("AsDone", BS, CN))
    else:
        return StepResult(_unexpected(st))
    return StepResult(st, out, notes)


def _release(ctx: PartyContext, st: PartyState) -> WireMessage:
    values = {
        "RRC_TransactionIdentifier": st.vars.get("RRC_TransactionIdentifier", 0),
        "releaseCause": _nominal(ctx.codec.model, "releaseCause"),
    }
    return _emit(ctx, st, "RRCConnectionRelease", values)


# ---------------------------------------------------------------- core network


def _resolve(ctx: PartyContext, vals: dict) -> Optional[int]:
    if "IMSI" in vals:
        return vals["IMSI"] if vals["IMSI"] in ctx.subscribers else None
    if "IMSI_HASH" in vals:
        for imsi in ctx.subscribers:
            if ctx.codec.hashed("IMSI", imsi) == vals["IMSI_HASH"]:
                return imsi
    return None


def _cn_step(st: PartyState, msg, vals: Optional[dict], ctx: PartyContext) -> StepResult:
    model = ctx.codec.model
    phase = st.phase
    out: list = []
    notes: list = []
    if isinstance(msg, Backhaul):
        if msg.kind == "AsDone" and phase is P.NasSecured:
            st.phase = P.AsSecured
        return StepResult(st)
    cmd = msg.command
    if cmd == "AttachRequest":
        if phase is not P.Idle:
            return StepResult(_unexpected(st))
        imsi = _resolve(ctx, vals)
        if imsi is None:
            out.append(_emit(ctx, st, "AttachReject", {"EMM_Cause": _nominal(model, "EMM_Cause")}))
            notes.append("reject:AttachRequest")
            return StepResult(st, out, notes)
        st.secrets["IMSI"] = imsi
        k = ctx.subscribers[imsi]
        rand = ctx.rng.getrandbits(128)
        ksi = _nominal(model, "KSI_ASME")
        st.vars.update(
            RAND=rand,
            KSI_ASME=ksi,
            XRES=ks.res(k, rand),
            UE_NetworkCapability=vals["UE_NetworkCapability"],
        )
        st.keys["K_ASME"] = ks.derive("K_ASME", {"K": k, "RAND": rand, "SN_id": vals["SN_id"]})
        out.append(_emit(ctx, st, "AuthenticationRequest", {"RAND": rand, "AUTN_HSS": ks.autn(k, rand), "KSI_ASME": ksi}))
        st.phase = P.AuthPending
    elif cmd == "AuthenticationResponse":
        if phase is not P.AuthPending:
            return StepResult(_unexpected(st))
        if vals["RES"] != st.vars["XRES"]:
            out.append(_emit(ctx, st, "AttachReject", {"EMM_Cause": _nominal(model, "EMM_Cause")}))
            notes.append("reject:AuthenticationResponse")
            st.phase = P.Idle
            st.keys.clear()
            return StepResult(st, out, notes)
        eea, eia = _nominal(model, "NAS_EEA"), _nominal(model, "NAS_EIA")
        st.keys["K_NASenc"] = ks.derive("K_NASenc", {"K_ASME": st.keys["K_ASME"], "NAS_EEA": eea})
        st.keys["K_NASint"] = ks.derive("K_NASint", {"K_ASME": st.keys["K_ASME"], "NAS_EIA": eia})
        cap = st.vars["UE_NetworkCapability"]
        ksi = st.vars["KSI_ASME"]
        mac = ks.mac(st.keys["K_NASint"], "NAS_SMC", ksi, cap, eea, eia)
        values = {"KSI_ASME": ksi, "UE_SecurityCapability": cap, "NAS_EEA": eea, "NAS_EIA": eia, "NAS_MAC": mac}
        out.append(_emit(ctx, st, "NASSecurityModeCommand", values))
        st.phase = P.AuthDone
    elif cmd == "NASSecurityModeComplete":
        if phase is not P.AuthDone:
            return StepResult(_unexpected(st))
        count = vals["NAS_UL_COUNT"]
        if vals["NAS_MAC_UL"] != ks.mac(st.keys["K_NASint"], "NAS_SMC_DONE", count):
            out.append(Backhaul("Release", CN, BS))
            notes.append("reject:NASSecurityModeComplete")
            return StepResult(_fail(st, FailReason.IntegrityFailure), out, notes)
        st.keys["K_eNB"] = ks.derive("K_eNB", {"K_ASME": st.keys["K_ASME"], "NAS_UL_COUNT": count})
        out.append(Backhaul("KeNB", CN, BS, (("K_eNB", st.keys["K_eNB"]), ("IMSI", st.secrets["IMSI"]))))
        st.phase = P.NasSecured
    elif cmd == "IdentityResponse":
        if phase in SECURED:
            return StepResult(_unexpected(st))
    else:
        return StepResult(_unexpected(st))
    return StepResult(st, out, notes)
