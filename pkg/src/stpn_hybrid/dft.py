"""Repairable dynamic fault trees in Kepler syntax, and their net encoding.

Only the family ``SPARE(PAND(a, b), AND(g1, g2))`` with cold spares and
priority repair boxes is translated; it covers a primary subtree whose
ordered failure activates two standby generators.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

from .stpn import DistributionSpec, Stpn, TransitionSpec, det, exp, imm, uniform


class DftParseError(ValueError):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {msg}")
        self.line, self.col = line, col


class UnsupportedDftError(ValueError):
    pass


GATES = ("and", "pand", "spare")
ATTRS = ("fail", "dorm", "repair")


@dataclass
class DftNode:
    name: str
    kind: str  # BE, AND, PAND, SPARE, RBOX
    children: tuple[str, ...] = ()
    fail: DistributionSpec | None = None
    dorm: DistributionSpec | None = None  # None: inactive (cold)
    dorm_given: bool = False
    repair: DistributionSpec | None = None
    line: int = 0
    col: int = 0


@dataclass
class DftTree:
    toplevel: str
    nodes: dict[str, DftNode] = field(default_factory=dict)

    def __getitem__(self, name: str) -> DftNode:
        return self.nodes[name]

    @property
    def basic_events(self) -> list[DftNode]:
        return [n for n in self.nodes.values() if n.kind == "BE"]

    @property
    def rboxes(self) -> list[DftNode]:
        return [n for n in self.nodes.values() if n.kind == "RBOX"]


_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r]+) | (?P<nl>\n) | (?P<comment>//[^\n]*|\#[^\n]*)
  | (?P<str>"[^"\n]*")
  | (?P<num>[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?|∞)
  | (?P<word>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<sym>[~(),;])
""", re.VERBOSE)


def _tokenize(text: str):
    line, col, pos = 1, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise DftParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        val = m.group()
        if kind == "nl":
            line, col = line + 1, 1
        elif kind not in ("ws", "comment"):
            yield kind, val, line, col
            col += len(val)
            pos = m.end()
            continue
        else:
            col += len(val)
        pos = m.end()


def _number(tok) -> float:
    kind, val, line, col = tok
    if val in ("∞", "inf", "infinity", "Inf", "INF"):
        return math.inf
    if kind != "num":
        raise DftParseError(f"expected a number, got {val!r}", line, col)
    return float(val)


def _parse_dist(toks: list, i: int) -> tuple[str, tuple[float, ...], int]:
    kind, val, line, col = toks[i]
    if kind != "word" or val not in ("exp", "uni", "dir"):
        raise DftParseError(f"unknown distribution {val!r}", line, col)
    if i + 1 >= len(toks) or toks[i + 1][1] != "(":
        raise DftParseError("expected '('", line, col)
    args = []
    j = i + 2
    while True:
        if j >= len(toks):
            raise DftParseError("unterminated argument list", line, col)
        args.append(_number(toks[j]))
        j += 1
        if toks[j][1] == ")":
            break
        if toks[j][1] != ",":
            raise DftParseError("expected ',' or ')'", toks[j][2], toks[j][3])
        j += 1
    arity = {"exp": 1, "uni": 2, "dir": 1}[val]
    if len(args) != arity:
        raise DftParseError(f"{val} takes {arity} argument(s)", line, col)
    return val, tuple(args), j + 1


def _to_spec(name: str, args: tuple[float, ...], line: int, col: int) -> DistributionSpec | None:
    try:
        if name == "exp":
            return exp(args[0])
        if name == "uni":
            return uniform(*args)
        if math.isinf(args[0]):
            return None
        return det(args[0])
    except ValueError as e:
        raise DftParseError(str(e), line, col) from None


def parse_kepler(text: str) -> DftTree:
    toks = list(_tokenize(text))
    stmts, cur = [], []
    for t in toks:
        if t[1] == ";":
            stmts.append(cur)
            cur = []
        else:
            cur.append(t)
    if cur:
        raise DftParseError("missing ';' at end of statement", cur[0][2], cur[0][3])
    top = None
    nodes: dict[str, DftNode] = {}
    refs: list[tuple[str, int, int]] = []

    def define(node: DftNode):
        if node.name in nodes:
            raise DftParseError(f"duplicate definition of {node.name!r}", node.line, node.col)
        nodes[node.name] = node

    for st in stmts:
        if not st:
            continue
        kind, val, line, col = st[0]
        if kind == "word" and val == "toplevel":
            if len(st) != 2 or st[1][0] != "str":
                raise DftParseError("expected: toplevel \"NAME\";", line, col)
            if top is not None:
                raise DftParseError("duplicate toplevel", line, col)
            top = st[1][1][1:-1]
            refs.append((top, st[1][2], st[1][3]))
            continue
        if kind != "str":
            raise DftParseError(f"expected a quoted name, got {val!r}", line, col)
        name = val[1:-1]
        if len(st) < 2:
            raise DftParseError(f"incomplete statement for {name!r}", line, col)
        k2, v2, l2, c2 = st[1]
        if k2 == "word" and v2 in GATES:
            kids = []
            for t in st[2:]:
                if t[0] != "str":
                    raise DftParseError(f"expected a quoted child name, got {t[1]!r}", t[2], t[3])
                kids.append(t[1][1:-1])
                refs.append((kids[-1], t[2], t[3]))
            if not kids:
                raise DftParseError(f"gate {name!r} has no children", l2, c2)
            define(DftNode(name, v2.upper(), tuple(kids), line=line, col=col))
        elif k2 == "word" and v2 == "rbox":
            if len(st) < 4 or st[2][1] != "prio":
                raise DftParseError("expected: \"NAME\" rbox prio \"C1\" ...;", l2, c2)
            kids = []
            for t in st[3:]:
                if t[0] != "str":
                    raise DftParseError(f"expected a quoted child name, got {t[1]!r}", t[2], t[3])
                kids.append(t[1][1:-1])
                refs.append((kids[-1], t[2], t[3]))
            define(DftNode(name, "RBOX", tuple(kids), line=line, col=col))
        elif k2 == "word" and v2 in ATTRS:
            node = DftNode(name, "BE", line=line, col=col)
            i = 1
            seen = set()
            while i < len(st):
                ka, va, la, ca = st[i]
                if ka != "word" or va not in ATTRS:
                    raise DftParseError(f"unexpected {va!r}", la, ca)
                if va in seen:
                    raise DftParseError(f"attribute {va} given twice", la, ca)
                seen.add(va)
                if i + 1 >= len(st) or st[i + 1][1] != "~":
                    raise DftParseError("expected '~'", la, ca)
                dname, args, i = _parse_dist(st, i + 2)
                spec = _to_spec(dname, args, la, ca)
                if spec is None and va != "dorm":
                    raise DftParseError("dir(inf) is only meaningful as a dormancy", la, ca)
                if va == "dorm":
                    node.dorm_given = True
                setattr(node, va, spec)
            if node.fail is None:
                raise DftParseError(f"basic event {name!r} has no fail distribution", line, col)
            if not node.dorm_given:
                node.dorm = node.fail
            define(node)
        elif k2 == "word":
            raise DftParseError(f"unknown gate keyword {v2!r}", l2, c2)
        else:
            raise DftParseError(f"unexpected {v2!r}", l2, c2)
    if top is None:
        raise DftParseError("missing toplevel statement", 1, 1)
    for r, line, col in refs:
        if r not in nodes:
            raise DftParseError(f"undeclared node {r!r}", line, col)
    return DftTree(top, nodes)


def _place(be: str) -> str:
    return be[:1].upper() + be[1:].lower() if be.isupper() else be[:1].upper() + be[1:]


def _trans(be: str) -> str:
    return be.lower() if be.isupper() else be[:1].lower() + be[1:]


def to_stpn(tree: DftTree, repairs: bool = True, name: str = "dft") -> Stpn:
    """Net for ``SPARE(PAND(a, b), AND(g1, g2))``.

    ``a`` and ``b`` share a priority repair box (``a`` first); each spare
    event has its own box.  With ``repairs=False`` no repair transitions are
    generated.
    """
    top = tree[tree.toplevel]
    if top.kind != "SPARE" or len(top.children) != 2:
        raise UnsupportedDftError("toplevel must be a SPARE gate with a primary and a spare subtree")
    pand, spare = tree[top.children[0]], tree[top.children[1]]
    if pand.kind != "PAND" or len(pand.children) != 2:
        raise UnsupportedDftError("primary subtree must be a PAND over two basic events")
    if spare.kind != "AND" or len(spare.children) != 2:
        raise UnsupportedDftError("spare subtree must be an AND over two basic events")
    for c in pand.children + spare.children:
        if tree[c].kind != "BE":
            raise UnsupportedDftError(f"{c!r} must be a basic event")
    for c in spare.children:
        if tree[c].dorm is not None:
            raise UnsupportedDftError(f"spare event {c!r} must be cold (dorm~dir(inf))")
    for c in pand.children:
        if tree[c].dorm_given:
            raise UnsupportedDftError(f"primary event {c!r} cannot be dormant")
    a, b = pand.children
    g1, g2 = spare.children
    boxes = {n.name: n.children for n in tree.rboxes}
    if repairs:
        shared = [k for k, v in boxes.items() if set(v) == {a, b}]
        if not shared:
            raise UnsupportedDftError("PAND events must share one priority repair box")
        if boxes[shared[0]][0] != a:
            raise UnsupportedDftError("the PAND's first event must have repair priority")
        for g in (g1, g2):
            if not any(v == (g,) for v in boxes.values()):
                raise UnsupportedDftError(f"spare event {g!r} needs its own repair box")
        for c in (a, b, g1, g2):
            if tree[c].repair is None:
                raise UnsupportedDftError(f"{c!r} has no repair distribution")

    A, B, G1, G2 = (_place(x) for x in (a, b, g1, g2))
    ta, tb, tg1, tg2 = (_trans(x) for x in (a, b, g1, g2))
    places = [A, B, f"{A}Rep", f"{B}Rep", f"{A}Failed", f"{B}Failed", f"{A}First", "PandFailed",
              G1, G2, f"{G1}Failed", f"{G2}Failed", "Target"]
    T = []
    T.append(TransitionSpec(ta, tree[a].fail, pre=(A,), post=(f"{A}Failed",)))
    T.append(TransitionSpec(tb, tree[b].fail, pre=(B,), post=(f"{B}Failed",)))
    if repairs:
        T.append(TransitionSpec(f"{ta}Race", imm(), post=(f"{A}Rep",), inhibit=(f"{A}Rep", f"{B}Rep"),
                                enabling=((f"{A}Failed", ">=", 1),), priority=2))
        T.append(TransitionSpec(f"{tb}Race", imm(), post=(f"{B}Rep",), inhibit=(f"{A}Rep", f"{B}Rep"),
                                enabling=((f"{B}Failed", ">=", 1),), priority=1))
        T.append(TransitionSpec(f"{ta}Rep", tree[a].repair, pre=(f"{A}Rep", f"{A}Failed"), post=(A,),
                                update=((f"{A}First", "set", 0),)))
        T.append(TransitionSpec(f"{tb}Rep", tree[b].repair, pre=(f"{B}Rep", f"{B}Failed"), post=(B,)))
    T.append(TransitionSpec(f"check{A}", imm(), post=(f"{A}First",), priority=3,
                            enabling=((f"{A}Failed", "==", 1), (f"{B}Failed", "==", 0), (f"{A}First", "==", 0))))
    T.append(TransitionSpec(f"check{B}", imm(), post=("PandFailed", G1, G2), priority=4,
                            enabling=((f"{A}First", "==", 1), (f"{B}Failed", "==", 1), ("PandFailed", "==", 0))))
    if repairs:
        T.append(TransitionSpec("CheckPandRepair", imm(), priority=5,
                                enabling=(("PandFailed", "==", 1), (f"{A}Failed", "==", 0)),
                                update=tuple((p, "set", 0) for p in
                                             ("PandFailed", G1, G2, f"{G1}Failed", f"{G2}Failed"))))
    T.append(TransitionSpec(tg1, tree[g1].fail, pre=(G1,), post=(f"{G1}Failed",)))
    T.append(TransitionSpec(tg2, tree[g2].fail, pre=(G2,), post=(f"{G2}Failed",)))
    if repairs:
        T.append(TransitionSpec(f"{tg1}Rep", tree[g1].repair, pre=(f"{G1}Failed",), post=(G1,)))
        T.append(TransitionSpec(f"{tg2}Rep", tree[g2].repair, pre=(f"{G2}Failed",), post=(G2,)))
    T.append(TransitionSpec("watchdog", imm(), post=("Target",), inhibit=("Target",), priority=6,
                            enabling=((f"{G1}Failed", ">=", 1), (f"{G2}Failed", ">=", 1), ("PandFailed", ">=", 1))))
    return Stpn(places, T, {A: 1, B: 1}, name=name)


def load_dft(path: str, repairs: bool = True) -> Stpn:
    import os
    with open(path, encoding="utf-8") as fh:
        tree = parse_kepler(fh.read())
    return to_stpn(tree, repairs=repairs, name=os.path.splitext(os.path.basename(path))[0])
