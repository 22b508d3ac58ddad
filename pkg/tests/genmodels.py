"""Random small protocol models for property tests."""

import random

from fgfuzz.model import (
    PROPERTIES,
    CommandDef,
    Direction,
    IdentifierDef,
    Layer,
    Phase,
    ProtectedBy,
    ProtectionEntry,
    ProtocolModel,
    Range,
    Role,
)


def random_model(rng: random.Random, n: int, density: float = 0.35):
    """``n`` identifiers in one command; protectors only point backwards,
    so every property graph is acyclic.  Returns (model, plain) where
    ``plain[prop][node]`` is the protector set as plain Python sets."""
    names = [f"x{k}" for k in range(n)]
    plain = {p: {nm: set() for nm in names} for p in PROPERTIES}
    prots = []
    for k, nm in enumerate(names):
        kw = {}
        for p in PROPERTIES:
            ps = {names[j] for j in range(k) if rng.random() < density}
            plain[p][nm] = ps
            kw[p.attr] = ProtectedBy(ps) if ps else None
        prots.append(ProtectionEntry(nm, **kw))
    idents = tuple(IdentifierDef(nm, 4, Range(0, 15), "C", Role.Config) for nm in names)
    cmd = CommandDef("C", Layer.RRC, Direction.Downlink, tuple(names), Phase.RrcSetup, 4 * n)
    return ProtocolModel(idents, tuple(prots), (cmd,)), plain
