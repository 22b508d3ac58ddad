"""Fortification toggles expressed as rewrites of a protocol model.

Each rewrite returns a new model; the knowledge engine then re-proves what
the fortification buys.  Applied toggles are recorded in
``ProtocolModel.fortifications`` so the simulator can mirror them.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Iterable, Sequence

from .errors import UnknownTarget
from .model import (
    AssumptionProfile,
    Direction,
    FortificationKind,
    FortificationToggle,
    IdentifierDef,
    KdfRule,
    Opaque,
    Phase,
    ProtectedBy,
    ProtectionEntry,
    ProtocolModel,
    Range,
    Role,
)

PRE_AUTH = (Phase.RrcSetup, Phase.MutualAuth)
HASH_SUFFIX = "_HASH"
PUBKEY = "PubKey_gNB"


def toggle(kind: str | FortificationKind, **params: str) -> FortificationToggle:
    return FortificationToggle(FortificationKind(kind), dict(params))


def apply_fortification(model: ProtocolModel, toggles: Sequence[FortificationToggle]) -> ProtocolModel:
    """Apply toggles in order and return the rewritten model."""
    out = model
    for t in toggles:
        kind = FortificationKind(t.kind)
        rewrite = _REWRITES[kind]
        out = rewrite(out, dict(t.parameters))
        out = replace(out, fortifications=out.fortifications + (kind.value,))
    return replace(out) if out is model else out


# ----------------------------------------------------------------- helpers


def _set_protection(model: ProtocolModel, name: str, **props) -> ProtocolModel:
    prots = tuple(replace(p, **props) if p.identifier == name else p for p in model.protections)
    return replace(model, protections=prots)


def _require(model: ProtocolModel, name: str, kind: FortificationKind) -> None:
    if not model.has_identifier(name):
        raise UnknownTarget(f"{kind.value} needs identifier {name!r}, which the model lacks")


def _wire_commands(model: ProtocolModel, name: str):
    return [model.command(c) for c in model.occurrences(name)]


# ---------------------------------------------------------------- rewrites


def _integrity_rrc_tid(model: ProtocolModel, params: dict) -> ProtocolModel:
    kind = FortificationKind.IntegrityProtectRrcTransactionId
    target = params.get("identifier", "RRC_TransactionIdentifier")
    mac = params.get("protector", "MAC_I")
    _require(model, target, kind)
    _require(model, mac, kind)
    return _set_protection(model, target, integrity=ProtectedBy({mac}))


def _hash_targets(model: ProtocolModel, params: dict, kind: FortificationKind) -> list[str]:
    if "targets" in params:
        targets = [t.strip() for t in params["targets"].split(",") if t.strip()]
    else:
        _require(model, "IMSI", kind)
        targets = ["IMSI"]
        # every other subscriber identity that leaves the UE before authentication
        for ident in model.identifiers:
            if ident.semantic_role is Role.UserIdentity and ident.name not in targets:
                cmds = _wire_commands(model, ident.name)
                if any(c.direction is Direction.Uplink and c.phase in PRE_AUTH for c in cmds):
                    targets.append(ident.name)
    for t in targets:
        _require(model, t, kind)
    return targets


def _hash_identities(model: ProtocolModel, params: dict, kind: FortificationKind, with_integrity: bool) -> ProtocolModel:
    targets = _hash_targets(model, params, kind)
    idents = list(model.identifiers)
    prots = list(model.protections)
    kdfs = list(model.kdfs)
    commands = list(model.commands)
    for name in targets:
        orig = model.identifier(name)
        hashed = name + HASH_SUFFIX
        if model.has_identifier(hashed):
            continue
        idents.append(
            IdentifierDef(
                name=hashed,
                bit_width=orig.bit_width,
                domain=Opaque(),
                owner_command=orig.owner_command,
                semantic_role=Role.Mac,
            )
        )
        prots.append(
            ProtectionEntry(
                identifier=hashed,
                integrity=ProtectedBy({name}) if with_integrity else None,
            )
        )
        kdfs.append(KdfRule(output=hashed, inputs=frozenset({name})))
        commands = [
            replace(c, fields=tuple(hashed if f == name else f for f in c.fields)) for c in commands
        ]
    profiles = tuple(
        AssumptionProfile(p.name, p.known_identifiers - set(targets), p.capabilities) for p in model.profiles
    )
    out = replace(
        model,
        identifiers=tuple(idents),
        protections=tuple(prots),
        kdfs=tuple(kdfs),
        commands=tuple(commands),
        profiles=profiles,
    )
    if with_integrity and "IMSI" in targets:
        out = _encrypt_after_attach(out, key="IMSI")
    return out


def _encrypt_after_attach(model: ProtocolModel, key: str) -> ProtocolModel:
    """Cipher every field whose on-wire occurrences all follow the attach.

    The first command carrying the hashed identity marks the attach; fields
    seen only in later commands are ciphered under a key derived from the
    original identity, which the UE and the network share.
    """
    hashed = key + HASH_SUFFIX
    order = [c.name for c in model.commands]
    first = min(order.index(c) for c in model.occurrences(hashed))
    later = set(order[first + 1 :])
    new_prots = []
    for p in model.protections:
        occ = model.occurrences(p.identifier)
        if occ and p.identifier != hashed and set(occ) <= later and p.confidentiality is None:
            p = replace(p, confidentiality=ProtectedBy({key}))
        new_prots.append(p)
    return replace(model, protections=tuple(new_prots))


def _hashed_imsi(model: ProtocolModel, params: dict) -> ProtocolModel:
    return _hash_identities(model, params, FortificationKind.HashedImsi, with_integrity=False)


def _hashed_imsi_integrity(model: ProtocolModel, params: dict) -> ProtocolModel:
    return _hash_identities(model, params, FortificationKind.HashedImsiWithIntegrity, with_integrity=True)


def _asymmetric_pre_auth(model: ProtocolModel, params: dict) -> ProtocolModel:
    kind = FortificationKind.AsymmetricEncryptionPreAuth
    key = params.get("key", PUBKEY)
    targets = []
    for ident in model.identifiers:
        cmds = _wire_commands(model, ident.name)
        if cmds and all(c.direction is Direction.Uplink and c.phase in PRE_AUTH for c in cmds):
            targets.append(ident.name)
    if not targets:
        raise UnknownTarget(f"{kind.value}: model has no pre-authentication uplink identifiers")
    idents = list(model.identifiers)
    prots = list(model.protections)
    if not model.has_identifier(key):
        width = 128
        idents.append(
            IdentifierDef(
                name=key,
                bit_width=width,
                domain=Range(0, (1 << width) - 1),
                owner_command=model.commands[0].name,
                semantic_role=Role.KeyMaterial,
            )
        )
        prots.append(ProtectionEntry(identifier=key))
    new_prots = []
    for p in prots:
        if p.identifier in targets and p.confidentiality is None:
            p = replace(p, confidentiality=ProtectedBy({key}))
        new_prots.append(p)
    profiles = tuple(
        AssumptionProfile(p.name, p.known_identifiers - {key}, p.capabilities) for p in model.profiles
    )
    return replace(model, identifiers=tuple(idents), protections=tuple(new_prots), profiles=profiles)


_REWRITES = {
    FortificationKind.IntegrityProtectRrcTransactionId: _integrity_rrc_tid,
    FortificationKind.HashedImsi: _hashed_imsi,
    FortificationKind.HashedImsiWithIntegrity: _hashed_imsi_integrity,
    FortificationKind.AsymmetricEncryptionPreAuth: _asymmetric_pre_auth,
}


def parse_toggles(names: Iterable[str]) -> list[FortificationToggle]:
    return [toggle(n.strip()) for n in names if n.strip()]
