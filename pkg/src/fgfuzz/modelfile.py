"""Reader and writer for the block-structured model text format.

A file is a sequence of blocks.  Each block opens with a header line such as
``[identifier]`` and continues with ``key = value`` lines until the next
header.  ``#`` starts a comment.  The grammar is documented in
``docs/model_format.md``; the same block syntax is reused by campaign files.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .errors import ModelReferenceError, ParseError
from .model import (
    PROPERTIES,
    AssumptionProfile,
    Capability,
    CommandDef,
    Direction,
    Enumerated,
    IdentifierDef,
    KdfRule,
    Layer,
    Opaque,
    Phase,
    ProtectedBy,
    ProtectionEntry,
    ProtocolModel,
    Range,
    Role,
    SequenceDef,
)

_HEADER = re.compile(r"^\[([A-Za-z_]+)\]$")
_KEYVAL = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*)$")
_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_\-]*$")


@dataclass
class Block:
    kind: str
    line: int
    entries: dict[str, tuple[str, int]] = field(default_factory=dict)

    def get(self, key: str, default: Optional[str] = None) -> Optional[str]:
        if key in self.entries:
            return self.entries[key][0]
        return default

    def need(self, key: str) -> str:
        if key not in self.entries:
            raise ParseError(f"[{self.kind}] block is missing key {key!r}", self.line)
        return self.entries[key][0]

    def line_of(self, key: str) -> int:
        return self.entries.get(key, ("", self.line))[1]


def read_blocks(text: str, allowed: Iterable[str]) -> list[Block]:
    """Split text into blocks; shared by model and campaign files."""
    allowed = set(allowed)
    blocks: list[Block] = []
    current: Optional[Block] = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _HEADER.match(line)
        if m:
            kind = m.group(1)
            if kind not in allowed:
                raise ParseError(f"unknown section [{kind}]", lineno, 1)
            current = Block(kind, lineno)
            blocks.append(current)
            continue
        m = _KEYVAL.match(line)
        if not m:
            raise ParseError(f"expected 'key = value', got {line!r}", lineno, 1)
        if current is None:
            raise ParseError("key/value line before any section header", lineno, 1)
        key, value = m.group(1), m.group(2).strip()
        if key in current.entries:
            raise ParseError(f"duplicate key {key!r}", lineno, 1)
        current.entries[key] = (value, lineno)
    if not blocks:
        raise ParseError("file contains no sections", 1, 1)
    return blocks


def parse_pattern(token: str, line: int = 0) -> int:
    """Parse a bit pattern written as ``0b...`` or ``0x...``."""
    t = token.strip().replace("_", "")
    try:
        if t.lower().startswith("0b"):
            return int(t[2:], 2)
        if t.lower().startswith("0x"):
            return int(t[2:], 16)
    except ValueError:
        pass
    raise ParseError(f"bad bit pattern {token!r} (use 0b... or 0x...)", line)


def _parse_int(token: str, line: int) -> int:
    try:
        return int(token.strip())
    except ValueError:
        raise ParseError(f"expected a decimal integer, got {token!r}", line) from None


def _names(value: str, line: int) -> list[str]:
    out = [v.strip() for v in value.split(",") if v.strip()]
    for n in out:
        if not _NAME.match(n):
            raise ParseError(f"bad name {n!r}", line)
    return out


def _enum(cls, token: str, line: int):
    try:
        return cls(token.strip())
    except ValueError:
        choices = ", ".join(m.value for m in cls)
        raise ParseError(f"{token!r} is not one of {choices}", line) from None


def _parse_domain(value: str, line: int):
    head, _, rest = value.strip().partition(" ")
    head = head.lower()
    if head == "opaque" and not rest.strip():
        return Opaque()
    if head == "enum":
        vals = [parse_pattern(v, line) for v in rest.split(",") if v.strip()]
        if not vals:
            raise ParseError("enum domain needs at least one value", line)
        return Enumerated(tuple(vals))
    if head == "range":
        lo, sep, hi = rest.partition("..")
        if not sep:
            raise ParseError("range domain must be written lo..hi", line)
        return Range(parse_pattern(lo, line), parse_pattern(hi, line))
    raise ParseError(f"unknown domain {value!r}", line)


def _parse_protection(value: str, line: int) -> Optional[ProtectedBy]:
    v = value.strip()
    if v in ("N", "None", "-"):
        return None
    return ProtectedBy(_names(v, line))


def parse_model(text: str) -> ProtocolModel:
    """Parse model text and bind every cross-reference."""
    blocks = read_blocks(text, ("identifier", "command", "protection", "kdf", "profile", "sequence", "meta"))
    idents: list[IdentifierDef] = []
    prots: list[ProtectionEntry] = []
    cmds: list[CommandDef] = []
    kdfs: list[KdfRule] = []
    profiles: list[AssumptionProfile] = []
    seqs: list[SequenceDef] = []
    fortifications: tuple[str, ...] = ()
    refs: list[tuple[str, int, str]] = []  # (name, line, context) to resolve later
    cmd_refs: list[tuple[str, int, str]] = []

    for b in blocks:
        if b.kind == "identifier":
            name = b.need("name")
            nominal = b.get("nominal")
            ident = IdentifierDef(
                name=name,
                bit_width=_parse_int(b.need("bits"), b.line_of("bits")),
                domain=_parse_domain(b.need("domain"), b.line_of("domain")),
                owner_command=b.need("owner"),
                semantic_role=_enum(Role, b.need("role"), b.line_of("role")),
                nominal=parse_pattern(nominal, b.line_of("nominal")) if nominal is not None else None,
            )
            idents.append(ident)
            cmd_refs.append((ident.owner_command, b.line_of("owner"), f"owner of {name}"))
        elif b.kind == "command":
            name = b.need("name")
            fields = tuple(_names(b.need("fields"), b.line_of("fields")))
            cmds.append(
                CommandDef(
                    name=name,
                    layer=_enum(Layer, b.need("layer"), b.line_of("layer")),
                    direction=_enum(Direction, b.need("direction"), b.line_of("direction")),
                    fields=fields,
                    phase=_enum(Phase, b.need("phase"), b.line_of("phase")),
                    length=_parse_int(b.need("length"), b.line_of("length")),
                )
            )
            refs.extend((f, b.line_of("fields"), f"field of {name}") for f in fields)
        elif b.kind == "protection":
            name = b.need("identifier")
            kw = {}
            for prop in PROPERTIES:
                p = _parse_protection(b.need(prop.attr), b.line_of(prop.attr))
                kw[prop.attr] = p
                if p is not None:
                    refs.extend((n, b.line_of(prop.attr), f"{prop.attr} protector of {name}") for n in p.protectors)
            prots.append(ProtectionEntry(identifier=name, **kw))
            refs.append((name, b.line_of("identifier"), "protection entry"))
        elif b.kind == "kdf":
            out = b.need("output")
            inputs = _names(b.need("inputs"), b.line_of("inputs"))
            inv = _names(b.get("invertible", ""), b.line_of("invertible"))
            kdfs.append(KdfRule(out, frozenset(inputs), frozenset(inv)))
            refs.append((out, b.line_of("output"), "KDF output"))
            refs.extend((n, b.line_of("inputs"), f"KDF input of {out}") for n in inputs)
        elif b.kind == "profile":
            name = b.need("name")
            known = _names(b.get("known", ""), b.line_of("known"))
            caps = [_enum(Capability, c, b.line_of("capabilities")) for c in _names(b.need("capabilities"), b.line_of("capabilities"))]
            profiles.append(AssumptionProfile(name, frozenset(known), frozenset(caps)))
            refs.extend((n, b.line_of("known"), f"known by profile {name}") for n in known)
        elif b.kind == "sequence":
            name = b.need("name")
            cs = tuple(_names(b.need("commands"), b.line_of("commands")))
            sessions = _parse_int(b.get("sessions", "1"), b.line_of("sessions"))
            seqs.append(SequenceDef(name, cs, sessions))
            cmd_refs.extend((c, b.line_of("commands"), f"sequence {name}") for c in cs)
        elif b.kind == "meta":
            fortifications = tuple(_names(b.get("fortifications", ""), b.line_of("fortifications")))

    ident_names = {i.name for i in idents}
    for name, line, ctx in refs:
        if name not in ident_names:
            raise ModelReferenceError(name, f"line {line}, {ctx}")
    cmd_names = {c.name for c in cmds}
    for name, line, ctx in cmd_refs:
        if name not in cmd_names:
            raise ModelReferenceError(name, f"line {line}, {ctx}")

    return ProtocolModel(
        identifiers=tuple(idents),
        protections=tuple(prots),
        commands=tuple(cmds),
        kdfs=tuple(kdfs),
        profiles=tuple(profiles),
        sequences=tuple(seqs),
        fortifications=fortifications,
    )


def load_model(path) -> ProtocolModel:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    return parse_model(text)


# ------------------------------------------------------------------ dump


def _pattern(value: int, width: int) -> str:
    if width <= 8:
        return "0b" + format(value, f"0{width}b")
    return "0x" + format(value, f"0{(width + 3) // 4}X")


def _domain_text(ident: IdentifierDef) -> str:
    d = ident.domain
    if isinstance(d, Opaque):
        return "opaque"
    if isinstance(d, Enumerated):
        return "enum " + ", ".join(_pattern(v, ident.bit_width) for v in d.values)
    return f"range {_pattern(d.lo, ident.bit_width)}..{_pattern(d.hi, ident.bit_width)}"


def _prot_text(p: Optional[ProtectedBy]) -> str:
    return "N" if p is None else ", ".join(sorted(p.protectors))


def dump_model(model: ProtocolModel) -> str:
    """Serialize a model; ``parse_model(dump_model(m)) == m``."""
    out: list[str] = []
    if model.fortifications:
        out += ["[meta]", "fortifications = " + ", ".join(model.fortifications), ""]
    for i in model.identifiers:
        out += [
            "[identifier]",
            f"name = {i.name}",
            f"bits = {i.bit_width}",
            f"domain = {_domain_text(i)}",
            f"owner = {i.owner_command}",
            f"role = {i.semantic_role.value}",
        ]
        if i.nominal is not None:
            out.append(f"nominal = {_pattern(i.nominal, i.bit_width)}")
        out.append("")
    for c in model.commands:
        out += [
            "[command]",
            f"name = {c.name}",
            f"layer = {c.layer.value}",
            f"direction = {c.direction.value}",
            f"phase = {c.phase.value}",
            f"fields = {', '.join(c.fields)}",
            f"length = {c.length}",
            "",
        ]
    for p in model.protections:
        out += ["[protection]", f"identifier = {p.identifier}"]
        out += [f"{prop.attr} = {_prot_text(p.get(prop))}" for prop in PROPERTIES]
        out.append("")
    for k in model.kdfs:
        out += ["[kdf]", f"output = {k.output}", f"inputs = {', '.join(sorted(k.inputs))}"]
        if k.invertible_inputs:
            out.append(f"invertible = {', '.join(sorted(k.invertible_inputs))}")
        out.append("")
    for p in model.profiles:
        out += ["[profile]", f"name = {p.name}"]
        if p.known_identifiers:
            out.append(f"known = {', '.join(sorted(p.known_identifiers))}")
        out += [f"capabilities = {', '.join(sorted(c.value for c in p.capabilities))}", ""]
    for s in model.sequences:
        out += ["[sequence]", f"name = {s.name}", f"commands = {', '.join(s.commands)}", f"sessions = {s.sessions}", ""]
    return "\n".join(out)


def bundled_model_path() -> Path:
    return Path(__file__).parent / "data" / "nsa_auth.model"


def load_bundled() -> ProtocolModel:
    return load_model(bundled_model_path())
