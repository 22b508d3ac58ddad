"""Reference computations written independently of the package.

Nothing here imports fgfuzz's analysis code: the oracles work on plain
dicts so that agreement with the library means something.
"""

from itertools import combinations


def brute_force_min_attack(protectors, target):
    """Smallest set of unprotected nodes whose compromise makes ``target`` fall.

    ``protectors`` maps node -> set of protector nodes for one property; a
    node with an empty set can be compromised directly, any other node falls
    once all of its protectors have fallen.  Returns 0 for unprotected
    targets.
    """
    if not protectors.get(target):
        return 0
    nodes = sorted(protectors)
    free = [n for n in nodes if not protectors[n]]
    for size in range(len(free) + 1):
        for pick in combinations(free, size):
            down = set(pick)
            grew = True
            while grew:
                grew = False
                for n in nodes:
                    ps = protectors[n]
                    if n not in down and ps and ps <= down:
                        down.add(n)
                        grew = True
            if target in down:
                return size
    return -1


def naive_closure(known, wire_fields, unconfidential, kdfs, caps):
    """Knows-facts only: eavesdropping plus key derivation, to a fixpoint.

    ``kdfs`` is a list of (output, inputs).  Enough to cross-check the
    confidentiality side of the saturation engine.
    """
    facts = set(known)
    if "Eavesdrop" in caps:
        facts |= {f for f in wire_fields if f in unconfidential}
    grew = True
    while grew:
        grew = False
        for out, ins in kdfs:
            if out not in facts and set(ins) <= facts:
                facts.add(out)
                grew = True
    return facts


def command_case_count(n, alphabet):
    """Insert at n+1 gaps, Replace at n slots, Repeat n, Reorder n*(n-1)."""
    return (n + 1) * alphabet + n * alphabet + n + n * (n - 1)


def pack(values, widths):
    """MSB-first concatenation of fields."""
    out = 0
    for v, w in zip(values, widths):
        out = (out << w) | v
    return out
