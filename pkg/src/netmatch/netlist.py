"""SPICE-subset netlist reader, writer and hierarchy flattener.

Supported lines (keywords and element letters are case-insensitive)::

    * comment
    + continuation of the previous line
    .title NAME
    .subckt NAME p1 p2 ...
    .ends [NAME]
    .end
    Mxxx d g s b PMOS|NMOS [key=value ...]
    Cxxx p n [value]
    Rxxx p n [value]
    Lxxx p n [value]
    Xxxx n1 n2 ... SUBCKT

Device values are kept verbatim so that emitting reproduces them, but
nothing downstream looks at them.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

MOS_ROLES = ("drain", "gate", "source", "base")
TWO_TERMINAL_ROLES = ("+", "-")

KIND_BY_LETTER = {"C": "capacitor", "R": "resistor", "L": "inductor"}
LETTER_BY_KIND = {"PMOS": "M", "NMOS": "M", "capacitor": "C", "resistor": "R", "inductor": "L"}
CELL_KINDS = ("PMOS", "NMOS", "capacitor", "resistor", "inductor")

# Nets that keep their name when a subcircuit is expanded.
DEFAULT_GLOBALS = ("vdd", "gnd", "vss")

_SI = {
    "t": 1e12, "g": 1e9, "meg": 1e6, "k": 1e3, "m": 1e-3,
    "u": 1e-6, "n": 1e-9, "p": 1e-12, "f": 1e-15, "a": 1e-18,
}
_VALUE_RE = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:e[+-]?\d+)?)(meg|[tgkmunpfa])?[a-z]*$", re.I)
_NAME_RE = re.compile(r"^[^\s=]+$")


class NetlistError(ValueError):
    """Base class for netlist problems; carries a source location when known."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.message = message
        self.line = line
        self.col = col
        where = f"line {line}, col {col}: " if line is not None else ""
        super().__init__(where + message)


class NetlistSyntaxError(NetlistError):
    pass


class NetlistSemanticError(NetlistError):
    pass


def parse_value(token: str) -> float:
    """Convert a SPICE number such as ``1p`` or ``10k`` to a float."""
    m = _VALUE_RE.match(token)
    if not m:
        raise ValueError(f"not a SPICE value: {token!r}")
    scale = _SI[m.group(2).lower()] if m.group(2) else 1.0
    return float(m.group(1)) * scale


@dataclass(frozen=True)
class Cell:
    id: str
    kind: str
    terminals: tuple[tuple[str, str], ...]
    value: str | None = None
    params: tuple[str, ...] = ()
    line: int | None = field(default=None, compare=False)
    col: int | None = field(default=None, compare=False)

    @property
    def nets(self) -> tuple[str, ...]:
        return tuple(net for _, net in self.terminals)

    @property
    def is_mos(self) -> bool:
        return self.kind in ("PMOS", "NMOS")

    @property
    def numeric_value(self) -> float | None:
        return None if self.value is None else parse_value(self.value)


@dataclass(frozen=True)
class Instance:
    id: str
    subckt: str
    ports: tuple[str, ...]
    line: int | None = field(default=None, compare=False)
    col: int | None = field(default=None, compare=False)


@dataclass
class Netlist:
    name: str = "top"
    cells: list[Cell] = field(default_factory=list)
    subckts: dict[str, "Netlist"] = field(default_factory=dict)
    instances: list[Instance] = field(default_factory=list)
    ports: tuple[str, ...] = ()

    @property
    def nets(self) -> list[str]:
        """Net identifiers in canonical order: ports, then cell terminals, then instance bindings."""
        seen: dict[str, None] = dict.fromkeys(self.ports)
        for cell in self.cells:
            seen.update(dict.fromkeys(cell.nets))
        for inst in self.instances:
            seen.update(dict.fromkeys(inst.ports))
        return list(seen)

    @property
    def is_flat(self) -> bool:
        return not self.instances and not self.subckts

    def validate(self) -> None:
        """Check the scope invariants; raises NetlistSemanticError."""
        _check_scope(self, self.subckts)
        for sub in self.subckts.values():
            _check_scope(sub, self.subckts)


def _check_scope(scope: Netlist, library: dict[str, Netlist]) -> None:
    ids: set[str] = set()
    lookup = {k.casefold(): v for k, v in library.items()}
    for item in [*scope.cells, *scope.instances]:
        if item.id.casefold() in ids:
            raise NetlistSemanticError(f"duplicate id {item.id!r} in {scope.name!r}", item.line, item.col)
        ids.add(item.id.casefold())
    for cell in scope.cells:
        expected = 4 if cell.is_mos else 2
        if len(cell.terminals) != expected:
            raise NetlistSemanticError(f"{cell.id}: expected {expected} terminals", cell.line, cell.col)
    for inst in scope.instances:
        sub = lookup.get(inst.subckt.casefold())
        if sub is None:
            raise NetlistSemanticError(f"{inst.id}: undefined subckt {inst.subckt!r}", inst.line, inst.col)
        if len(inst.ports) != len(sub.ports):
            raise NetlistSemanticError(
                f"{inst.id}: {inst.subckt} takes {len(sub.ports)} ports, got {len(inst.ports)}",
                inst.line, inst.col,
            )


def _logical_lines(text: str):
    """Yield (line_no, [(col, token), ...]) after joining '+' continuations and dropping comments."""
    current: list[tuple[int, str]] | None = None
    start = 0
    for no, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("*"):
            continue
        if stripped.startswith("+"):
            if current is None:
                raise NetlistSyntaxError("continuation without a preceding line", no, raw.index("+") + 1)
            offset = raw.index("+") + 1
            current.extend(_tokens(re.split(r"[;$]", raw[offset:], maxsplit=1)[0], offset))
            continue
        if current is not None:
            yield start, current
        # inline comments after ';' or '$'
        body = re.split(r"[;$]", raw, maxsplit=1)[0]
        current, start = _tokens(body, 0), no
    if current is not None:
        yield start, current


def _tokens(s: str, offset: int) -> list[tuple[int, str]]:
    return [(m.start() + offset + 1, m.group()) for m in re.finditer(r"\S+", s)]


def parse_netlist(text: str | bytes, name: str = "top") -> Netlist:
    """Parse netlist text into a validated :class:`Netlist`.

    Any malformed input, including undecodable bytes, raises a
    :class:`NetlistError` subclass with the offending line and column.
    """
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise NetlistSyntaxError(f"input is not UTF-8 ({exc.reason})", None, None) from None
    if "\x00" in text:
        raise NetlistSyntaxError("NUL byte in input", text[: text.index("\x00")].count("\n") + 1, None)

    top = Netlist(name=name)
    scope = top
    ended = False
    for line_no, toks in _logical_lines(text):
        if not toks:
            continue
        col, head = toks[0]
        if ended:
            raise NetlistSyntaxError("content after .end", line_no, col)
        key = head.lower()
        if key.startswith("."):
            if key == ".title":
                if len(toks) != 2:
                    raise NetlistSyntaxError(".title takes exactly one name", line_no, col)
                top.name = toks[1][1]
            elif key == ".subckt":
                if scope is not top:
                    raise NetlistSyntaxError("nested .subckt", line_no, col)
                if len(toks) < 2:
                    raise NetlistSyntaxError(".subckt needs a name", line_no, col)
                sub_name = toks[1][1]
                if any(k.casefold() == sub_name.casefold() for k in top.subckts):
                    raise NetlistSemanticError(f"subckt {sub_name!r} defined twice", line_no, col)
                ports = [_name(t, line_no) for t in toks[2:]]
                if len(set(ports)) != len(ports):
                    raise NetlistSemanticError(f"repeated port in {sub_name!r}", line_no, col)
                scope = Netlist(name=sub_name, ports=tuple(ports))
                top.subckts[sub_name] = scope
            elif key == ".ends":
                if scope is top:
                    raise NetlistSyntaxError(".ends without .subckt", line_no, col)
                if len(toks) > 2 or (len(toks) == 2 and toks[1][1].casefold() != scope.name.casefold()):
                    raise NetlistSyntaxError(f".ends does not close {scope.name!r}", line_no, col)
                scope = top
            elif key == ".end":
                if scope is not top:
                    raise NetlistSyntaxError(f"unterminated subckt {scope.name!r}", line_no, col)
                ended = True
            else:
                raise NetlistSyntaxError(f"unsupported directive {head!r}", line_no, col)
            continue
        letter = head[0].upper()
        if letter == "M":
            scope.cells.append(_parse_mos(toks, line_no))
        elif letter in KIND_BY_LETTER:
            scope.cells.append(_parse_two_terminal(toks, line_no, KIND_BY_LETTER[letter]))
        elif letter == "X":
            if len(toks) < 2:
                raise NetlistSyntaxError(f"{head}: missing subckt name", line_no, col)
            ports = tuple(_name(t, line_no) for t in toks[1:-1])
            scope.instances.append(Instance(head, _name(toks[-1], line_no), ports, line_no, col))
        else:
            raise NetlistSyntaxError(f"unknown element {head!r}", line_no, col)
    if scope is not top:
        raise NetlistSyntaxError(f"unterminated subckt {scope.name!r}", None, None)

    # canonicalize subckt references to their declared spelling
    declared = {k.casefold(): k for k in top.subckts}
    for sc in [top, *top.subckts.values()]:
        sc.instances = [
            Instance(i.id, declared.get(i.subckt.casefold(), i.subckt), i.ports, i.line, i.col)
            for i in sc.instances
        ]
    top.validate()
    return top


def _name(tok: tuple[int, str], line_no: int) -> str:
    col, s = tok
    if not _NAME_RE.match(s):
        raise NetlistSyntaxError(f"bad identifier {s!r}", line_no, col)
    return s


def _parse_mos(toks, line_no: int) -> Cell:
    col, head = toks[0]
    plain = [t for t in toks[1:] if "=" not in t[1]]
    params = tuple(t[1] for t in toks[1:] if "=" in t[1])
    if len(plain) < 5:
        raise NetlistSyntaxError(f"{head}: MOSFET needs 4 nets and a model (unconnected terminal?)", line_no, col)
    if len(plain) > 5:
        raise NetlistSyntaxError(f"{head}: unexpected token {plain[5][1]!r}", line_no, plain[5][0])
    if toks.index(plain[-1]) != len(toks) - 1 - len(params):
        raise NetlistSyntaxError(f"{head}: parameters must follow the model name", line_no, col)
    for t in toks[1:]:
        if "=" not in t[1]:
            continue
        k, _, v = t[1].partition("=")
        if not k or not v:
            raise NetlistSyntaxError(f"bad parameter {t[1]!r}", line_no, t[0])
    model_col, model = plain[4]
    kind = model.upper()
    if kind not in ("PMOS", "NMOS"):
        raise NetlistSyntaxError(f"{head}: model must be PMOS or NMOS, got {model!r}", line_no, model_col)
    nets = [_name(t, line_no) for t in plain[:4]]
    return Cell(head, kind, tuple(zip(MOS_ROLES, nets)), None, params, line_no, col)


def _parse_two_terminal(toks, line_no: int, kind: str) -> Cell:
    col, head = toks[0]
    if len(toks) < 3:
        raise NetlistSyntaxError(f"{head}: needs 2 nets (unconnected terminal?)", line_no, col)
    if len(toks) > 4:
        raise NetlistSyntaxError(f"{head}: unexpected token {toks[4][1]!r}", line_no, toks[4][0])
    value = None
    if len(toks) == 4:
        vcol, value = toks[3]
        try:
            parse_value(value)
        except ValueError:
            raise NetlistSyntaxError(f"{head}: bad value {value!r}", line_no, vcol) from None
    nets = [_name(t, line_no) for t in toks[1:3]]
    return Cell(head, kind, tuple(zip(TWO_TERMINAL_ROLES, nets)), value, (), line_no, col)


def _emit_cell(cell: Cell) -> str:
    parts = [cell.id, *cell.nets]
    if cell.is_mos:
        parts.append(cell.kind)
        parts.extend(cell.params)
    elif cell.value is not None:
        parts.append(cell.value)
    return " ".join(parts)


def _emit_scope(scope: Netlist, out: list[str]) -> None:
    out.extend(_emit_cell(c) for c in scope.cells)
    out.extend(" ".join([i.id, *i.ports, i.subckt]) for i in scope.instances)


def emit_netlist(n: Netlist) -> str:
    """Render ``n`` so that ``parse_netlist(emit_netlist(n)) == n``."""
    out = [f".title {n.name}"]
    for sub in n.subckts.values():
        out.append(" ".join([".subckt", sub.name, *sub.ports]))
        _emit_scope(sub, out)
        out.append(".ends")
    _emit_scope(n, out)
    out.append(".end")
    return "\n".join(out) + "\n"


def flatten(n: Netlist, globals_: tuple[str, ...] = DEFAULT_GLOBALS) -> Netlist:
    """Expand every instance recursively.

    Inner nets become ``<path>/<net>`` and inner cells ``<id>@<path>`` where
    ``path`` is the slash-joined instance chain, so that flattened ids still
    start with their element letter. Nets named in ``globals_`` are shared
    across all scopes.
    """
    n.validate()
    lookup = {k.casefold(): v for k, v in n.subckts.items()}
    glob = {g.casefold() for g in globals_}
    cells: list[Cell] = []

    def expand(scope: Netlist, binding: dict[str, str], path: str, stack: tuple[str, ...]) -> None:
        def net(x: str) -> str:
            if x in binding:
                return binding[x]
            if not path or x.casefold() in glob:
                return x
            return f"{path}/{x}"

        for c in scope.cells:
            cid = c.id if not path else f"{c.id}@{path}"
            terms = tuple((role, net(x)) for role, x in c.terminals)
            cells.append(Cell(cid, c.kind, terms, c.value, c.params, c.line, c.col))
        for inst in scope.instances:
            sub = lookup[inst.subckt.casefold()]
            key = sub.name.casefold()
            if key in stack:
                chain = " -> ".join([*stack, key])
                raise NetlistSemanticError(f"recursive subckt instantiation: {chain}", inst.line, inst.col)
            inner = {p: net(a) for p, a in zip(sub.ports, inst.ports)}
            sub_path = inst.id if not path else f"{path}/{inst.id}"
            expand(sub, inner, sub_path, (*stack, key))

    expand(n, {}, "", ())
    flat = Netlist(name=n.name, cells=cells, ports=n.ports)
    flat.validate()
    return flat
