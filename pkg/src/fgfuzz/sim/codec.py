"""Bit-exact message codec plus field-level sealing.

Fields are packed most-significant-first in the command's field order.
Sealing applies the model's confidentiality protections: a field protected
by identifiers X, Y travels XORed with a keystream derived from the values
of X and Y, so only a holder of those values can read it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

from .. import kernels
from ..errors import LengthMismatch, MissingField, ValueOverflow
from ..model import ProtocolModel
from .keys import kdf

HASH_SUFFIX = "_HASH"


@dataclass(frozen=True)
class WireMessage:
    command: str
    bits: int
    length: int
    sender: str = ""
    receiver: str = ""
    timestamp: int = 0
    origin: str = "honest"  # who put it on the air: "honest" or "attacker"
    cause: str = "honest"  # origin of the message that provoked it

    def bitstring(self) -> str:
        return format(self.bits, f"0{self.length}b") if self.length else ""

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "bits": hex(self.bits),
            "length": self.length,
            "sender": self.sender,
            "receiver": self.receiver,
            "origin": self.origin,
            "cause": self.cause,
        }


class Codec:
    """Encoder/decoder bound to one model's command layouts."""

    def __init__(self, model: ProtocolModel):
        self.model = model
        self._layout = {
            c.name: (c.fields, tuple(model.identifier(f).bit_width for f in c.fields), c.length) for c in model.commands
        }

    def layout(self, command: str):
        try:
            return self._layout[command]
        except KeyError:
            from ..errors import UnknownCommand

            raise UnknownCommand(command) from None

    def encode(self, command: str, values: Mapping[str, int], **meta) -> WireMessage:
        fields, widths, length = self.layout(command)
        packed = []
        for f, w in zip(fields, widths):
            if f not in values:
                raise MissingField(f"{command} needs field {f}")
            v = int(values[f])
            if v < 0 or v >= (1 << w):
                raise ValueOverflow(f"{f}={v} does not fit {w} bits")
            packed.append(v)
        return WireMessage(command, kernels.pack_fields(packed, widths), length, **meta)

    def decode(self, bits: int, command: str, length: Optional[int] = None) -> dict[str, int]:
        fields, widths, total = self.layout(command)
        if length is not None and length != total:
            raise LengthMismatch(f"{command} is {total} bits, got {length}")
        if bits < 0 or bits >> total:
            raise LengthMismatch(f"{command} is {total} bits, value needs {bits.bit_length()}")
        return dict(zip(fields, kernels.unpack_fields(bits, widths)))

    def decode_message(self, msg: WireMessage) -> dict[str, int]:
        return self.decode(msg.bits, msg.command, msg.length)

    # -- sealing ------------------------------------------------------------

    def sealed_fields(self, command: str) -> dict[str, tuple[str, ...]]:
        out = {}
        for f in self.layout(command)[0]:
            conf = self.model.protection(f).confidentiality
            if conf is not None:
                out[f] = tuple(sorted(conf.protectors))
        return out

    def _keystream(self, command: str, field: str, keys: tuple[int, ...]) -> int:
        width = self.model.identifier(field).bit_width
        stream = kdf("CONF:" + command + ":" + field, *keys, bits=((width + 7) // 8) * 8)
        return stream & ((1 << width) - 1)

    def seal(self, command: str, values: Mapping[str, int], secrets: Mapping[str, int]) -> dict[str, int]:
        """Plaintext field values to on-wire values."""
        out = dict(values)
        for f, prot in self.sealed_fields(command).items():
            if f in out:
                if not all(p in secrets for p in prot):
                    raise KeyError(f"cannot seal {f}: missing {', '.join(p for p in prot if p not in secrets)}")
                out[f] = out[f] ^ self._keystream(command, f, tuple(secrets[p] for p in prot))
        return out

    def open(self, command: str, wire: Mapping[str, int], secrets: Mapping[str, int]) -> tuple[dict[str, int], set[str]]:
        """On-wire values to plaintext; returns (values, unreadable field names).

        Unreadable fields keep their ciphertext.
        """
        out = dict(wire)
        unreadable = set()
        for f, prot in self.sealed_fields(command).items():
            if f not in out:
                continue
            if all(p in secrets for p in prot):
                out[f] = out[f] ^ self._keystream(command, f, tuple(secrets[p] for p in prot))
            else:
                unreadable.add(f)
        return out, unreadable

    def hashed(self, name: str, value: int) -> int:
        width = self.model.identifier(name + HASH_SUFFIX).bit_width
        return kdf("HASH:" + name, value, bits=((width + 7) // 8) * 8) & ((1 << width) - 1)

    def fill_hashes(self, command: str, values: Mapping[str, int]) -> dict[str, int]:
        """Add X_HASH values for hashed fields of ``command`` from X."""
        out = dict(values)
        for f in self.layout(command)[0]:
            if f.endswith(HASH_SUFFIX) and f not in out:
                base = f[: -len(HASH_SUFFIX)]
                if base in out:
                    out[f] = self.hashed(base, out[base])
        return out


_DEFAULT: Optional[Codec] = None


def default_codec() -> Codec:
    global _DEFAULT
    if _DEFAULT is None:
        from ..modelfile import load_bundled

        _DEFAULT = Codec(load_bundled())
    return _DEFAULT


def encode(command: str, values: Mapping[str, int], model: Optional[ProtocolModel] = None) -> WireMessage:
    codec = Codec(model) if model is not None else default_codec()
    return codec.encode(command, values)


def decode(bits: int, command: str, model: Optional[ProtocolModel] = None, length: Optional[int] = None) -> dict[str, int]:
    codec = Codec(model) if model is not None else default_codec()
    return codec.decode(bits, command, length)
