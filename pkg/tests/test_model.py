import dataclasses

import pytest
from hypothesis import given, strategies as st

from fgfuzz import dump_model, parse_model, validate
from fgfuzz.errors import ModelReferenceError, ParseError, UnknownTarget
from fgfuzz.fortify import apply_fortification, parse_toggles, toggle
from fgfuzz.model import (
    Enumerated,
    FortificationKind,
    Phase,
    ProtectedBy,
    Range,
    ViolationKind,
)

TOY = """
[identifier]
name = a
bits = 4
domain = range 0x0..0xF
owner = Cmd
role = Config
nominal = 0x3

[identifier]
name = b
bits = 4
domain = enum 0x1, 0x2
owner = Cmd
role = Config

[command]
name = Cmd
layer = RRC
direction = Downlink
fields = a, b
phase = RrcSetup
length = 8

[protection]
identifier = a
confidentiality = N
integrity = b
authentication = N
accounting = N

[protection]
identifier = b
confidentiality = N
integrity = N
authentication = N
accounting = N

[profile]
name = p
known =
capabilities = Eavesdrop
"""


def test_bundled_model_shape(nsa):
    assert len(nsa.identifiers) >= 20
    assert {c.phase for c in nsa.commands} == set(Phase)


def test_bundled_model_is_clean(nsa):
    assert validate(nsa) == []


def test_empty_file_is_a_parse_error():
    with pytest.raises(ParseError):
        parse_model("")


def test_unknown_protector_names_the_reference():
    text = TOY.replace("integrity = b", "integrity = K_FAKE")
    with pytest.raises(ReferenceError) as exc:
        parse_model(text)
    assert "K_FAKE" in str(exc.value)
    assert isinstance(exc.value, ModelReferenceError)


def test_parse_error_reports_line():
    with pytest.raises(ParseError) as exc:
        parse_model("[identifier]\nname = a\nthis is not a pair\n")
    assert exc.value.line == 3


def test_toy_model_parses():
    m = parse_model(TOY)
    assert m.identifier("b").domain == Enumerated((1, 2))
    assert m.protection("a").integrity == ProtectedBy({"b"})
    assert validate(m) == []


def test_self_protection_is_a_cycle(nsa):
    prots = tuple(
        dataclasses.replace(p, integrity=ProtectedBy({"K_NASint"})) if p.identifier == "K_NASint" else p
        for p in nsa.protections
    )
    kinds = {v.kind for v in validate(dataclasses.replace(nsa, protections=prots))}
    assert kinds == {ViolationKind.CycleViolation}


def test_width_mismatch(nsa):
    cmds = tuple(dataclasses.replace(c, length=46) if c.name == "RRCConnectionRequest" else c for c in nsa.commands)
    vs = validate(dataclasses.replace(nsa, commands=cmds))
    assert [(v.kind, v.element) for v in vs] == [(ViolationKind.WidthViolation, "RRCConnectionRequest")]


def test_range_too_wide_for_width():
    m = parse_model(TOY)
    idents = tuple(dataclasses.replace(i, domain=Range(0, 16)) if i.name == "a" else i for i in m.identifiers)
    assert {v.kind for v in validate(dataclasses.replace(m, identifiers=idents))} == {ViolationKind.DomainViolation}


def test_dump_parse_round_trip(nsa):
    again = parse_model(dump_model(nsa))
    assert again == nsa
    assert again.model_id == nsa.model_id


def test_model_id_changes_with_content(nsa):
    cmds = tuple(dataclasses.replace(c, length=c.length) for c in nsa.commands)
    assert dataclasses.replace(nsa, commands=cmds).model_id == nsa.model_id
    toy = parse_model(TOY)
    assert toy.model_id != nsa.model_id


@given(st.integers(0, 0xF), st.sampled_from([1, 2]))
def test_nominal_values_survive_round_trip(a, b):
    text = TOY.replace("nominal = 0x3", f"nominal = {a:#x}")
    m = parse_model(text)
    assert m.identifier("a").nominal == a
    assert m.identifier("b").legal(b)
    assert parse_model(dump_model(m)) == m


# ---------------------------------------------------------------- fortify


def test_hashed_imsi_with_integrity_hides_imsi(nsa):
    f = apply_fortification(nsa, parse_toggles(["HashedImsiWithIntegrity"]))
    on_wire = [c.name for c in f.commands if "IMSI" in c.fields]
    assert on_wire == []
    assert f.protection("IMSI_HASH").integrity is not None
    assert validate(f) == []


def test_empty_toggle_list_is_identity(nsa):
    assert apply_fortification(nsa, []) == nsa


def test_hashed_imsi_needs_imsi():
    with pytest.raises(UnknownTarget):
        apply_fortification(parse_model(TOY), [toggle(FortificationKind.HashedImsi)])


@pytest.mark.parametrize("kind", list(FortificationKind))
def test_every_fortification_keeps_the_model_valid(nsa, kind):
    f = apply_fortification(nsa, [toggle(kind)])
    assert validate(f) == []
    assert kind.value in f.fortifications


def test_fortified_model_survives_dump(nsa):
    f = apply_fortification(nsa, parse_toggles(["HashedImsiWithIntegrity", "IntegrityProtectRrcTransactionId"]))
    assert parse_model(dump_model(f)) == f
