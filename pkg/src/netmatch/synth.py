"""Synthetic benchmark circuits with oracle-verified ground truth.

The standard-cell library is static CMOS with PMOS bodies on ``vdd`` and
NMOS bodies on a separate ``vss`` well net, which is why an inverter
encodes to 7 graph nodes (2 transistors, in, out, vdd, gnd, vss).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from . import vf2
from .graph import CircuitGraph, to_graph
from .netlist import DEFAULT_GLOBALS, Cell, Instance, Netlist, emit_netlist, flatten

RAILS = ("vdd", "gnd", "vss")


def _mos(cid: str, kind: str, d: str, g: str, s: str) -> Cell:
    body = "vdd" if kind == "PMOS" else "vss"
    return Cell(cid, kind, (("drain", d), ("gate", g), ("source", s), ("base", body)))


def _inv() -> Netlist:
    return Netlist("inv", [_mos("MP", "PMOS", "y", "a", "vdd"), _mos("MN", "NMOS", "y", "a", "gnd")], ports=("a", "y"))


def _nand(k: int) -> Netlist:
    ins = [f"a{i}" for i in range(1, k + 1)]
    cells = [_mos(f"MP{i}", "PMOS", "y", a, "vdd") for i, a in enumerate(ins, 1)]
    chain = ["y"] + [f"x{i}" for i in range(1, k)] + ["gnd"]
    cells += [_mos(f"MN{i}", "NMOS", chain[i - 1], a, chain[i]) for i, a in enumerate(ins, 1)]
    return Netlist(f"nand{k}", cells, ports=(*ins, "y"))


def _nor(k: int) -> Netlist:
    ins = [f"a{i}" for i in range(1, k + 1)]
    chain = ["vdd"] + [f"x{i}" for i in range(1, k)] + ["y"]
    cells = [_mos(f"MP{i}", "PMOS", chain[i], a, chain[i - 1]) for i, a in enumerate(ins, 1)]
    cells += [_mos(f"MN{i}", "NMOS", "y", a, "gnd") for i, a in enumerate(ins, 1)]
    return Netlist(f"nor{k}", cells, ports=(*ins, "y"))


def _ctg() -> Netlist:
    # CMOS transmission gate
    return Netlist("ctg", [_mos("MN", "NMOS", "a", "en", "b"), _mos("MP", "PMOS", "a", "enb", "b")],
                   ports=("a", "b", "en", "enb"))


def _delay(k: int, lib: dict[str, Netlist]) -> Netlist:
    nets = ["a"] + [f"n{i}" for i in range(1, k)] + ["y"]
    insts = [Instance(f"X{i}", "inv", (nets[i - 1], nets[i])) for i in range(1, k + 1)]
    return Netlist(f"delay{k}", instances=insts, subckts={"inv": lib["inv"]}, ports=("a", "y"))


def _decoder2_4(lib: dict[str, Netlist]) -> Netlist:
    addr = ("a0", "a0b", "a1", "a1b")
    insts = []
    for i in range(4):
        s0 = "a0" if i & 1 else "a0b"
        s1 = "a1" if i & 2 else "a1b"
        insts.append(Instance(f"XN{i}", "nand2", (s0, s1, f"yb{i}")))
        insts.append(Instance(f"XI{i}", "inv", (f"yb{i}", f"y{i}")))
    subs = {"nand2": lib["nand2"], "inv": lib["inv"]}
    return Netlist("decoder2_4", instances=insts, subckts=subs, ports=(*addr, "y0", "y1", "y2", "y3"))


def _decoder4_16(lib: dict[str, Netlist]) -> Netlist:
    addr = tuple(x for i in range(4) for x in (f"a{i}", f"a{i}b"))
    insts = [
        Instance("XP0", "decoder2_4", ("a0", "a0b", "a1", "a1b", "p0", "p1", "p2", "p3")),
        Instance("XP1", "decoder2_4", ("a2", "a2b", "a3", "a3b", "q0", "q1", "q2", "q3")),
    ]
    for i in range(16):
        insts.append(Instance(f"XN{i}", "nand2", (f"p{i % 4}", f"q{i // 4}", f"yb{i}")))
        insts.append(Instance(f"XI{i}", "inv", (f"yb{i}", f"y{i}")))
    subs = {"nand2": lib["nand2"], "inv": lib["inv"], "decoder2_4": lib["decoder2_4"]}
    return Netlist("decoder4_16", instances=insts, subckts=subs, ports=(*addr, *(f"y{i}" for i in range(16))))


def _col_sel(lib: dict[str, Netlist]) -> Netlist:
    insts = [
        Instance("XN", "nand2", ("sa", "sb", "csb")),
        Instance("XI", "inv", ("csb", "cs")),
        Instance("XT0", "ctg", ("bl", "dl", "cs", "csb")),
        Instance("XT1", "ctg", ("blb", "dlb", "cs", "csb")),
    ]
    subs = {"nand2": lib["nand2"], "inv": lib["inv"], "ctg": lib["ctg"]}
    return Netlist("col_sel", instances=insts, subckts=subs, ports=("sa", "sb", "bl", "blb", "dl", "dlb"))


# output ports per cell; every other port is driven from outside
OUTPUTS = {
    "inv": ("y",), "nand2": ("y",), "nand3": ("y",), "nand5": ("y",), "nor2": ("y",),
    "nor3": ("y",), "nor4": ("y",), "ctg": ("b",), "delay4": ("y",), "delay6": ("y",),
    "delay10": ("y",), "decoder2_4": ("y0", "y1", "y2", "y3"),
    "decoder4_16": tuple(f"y{i}" for i in range(16)), "col_sel": ("dl", "dlb"),
}


@lru_cache(maxsize=1)
def _library() -> dict[str, Netlist]:
    lib: dict[str, Netlist] = {"inv": _inv(), "ctg": _ctg()}
    for k in (2, 3, 5):
        lib[f"nand{k}"] = _nand(k)
    for k in (2, 3, 4):
        lib[f"nor{k}"] = _nor(k)
    for k in (4, 6, 10):
        lib[f"delay{k}"] = _delay(k, lib)
    lib["decoder2_4"] = _decoder2_4(lib)
    lib["decoder4_16"] = _decoder4_16(lib)
    lib["col_sel"] = _col_sel(lib)
    return lib


def cell_library() -> dict[str, Netlist]:
    """Name -> cell definition (ports are the signal pins; rails are global)."""
    return dict(_library())


@lru_cache(maxsize=None)
def cell_graph(name: str) -> CircuitGraph:
    """Graph of one flattened library cell, usable as a matching target."""
    return to_graph(flatten(_library()[name]))


def _dependencies(name: str, lib: dict[str, Netlist], acc: dict[str, Netlist]) -> None:
    for sub_name, sub in lib[name].subckts.items():
        _dependencies(sub_name, lib, acc)
    acc[name] = Netlist(name, lib[name].cells, {}, lib[name].instances, lib[name].ports)


@dataclass(frozen=True)
class BenchmarkSpec:
    seed: int = 0
    size: int = 1000
    plants: tuple[tuple[str, int], ...] = ()
    filler: tuple[str, ...] = ("inv", "nand2", "nor2", "nand3", "nor3", "ctg", "delay4")
    max_fanout: int = 3
    truth_targets: tuple[str, ...] | None = None
    name: str = "bench"

    @property
    def targets(self) -> tuple[str, ...]:
        if self.truth_targets is not None:
            return self.truth_targets
        return tuple(dict.fromkeys(c for c, _ in self.plants))

    def to_json(self) -> dict:
        d = asdict(self)
        d["plants"] = [list(p) for p in self.plants]
        d["filler"] = list(self.filler)
        d["truth_targets"] = None if self.truth_targets is None else list(self.truth_targets)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "BenchmarkSpec":
        d = dict(d)
        d["plants"] = tuple((str(c), int(k)) for c, k in d.get("plants", ()))
        d["filler"] = tuple(d.get("filler", cls.filler))
        tt = d.get("truth_targets")
        d["truth_targets"] = None if tt is None else tuple(tt)
        return cls(**d)


@dataclass
class Benchmark:
    spec: BenchmarkSpec
    netlist: Netlist
    graph: CircuitGraph
    truth: dict[str, list[vf2.Mapping]]
    planted: list[tuple[str, vf2.Mapping]] = field(default_factory=list)

    def truth_json(self) -> dict:
        out = {}
        for name, maps in self.truth.items():
            autos = vf2.automorphisms(cell_graph(name))
            out[name] = {
                "count": len(maps),
                "classes": vf2.count_classes(maps, autos),
                "mappings": [list(m) for m in maps],
            }
        return {
            "spec": self.spec.to_json(),
            "nodes": self.graph.num_nodes,
            "edges": self.graph.num_edges,
            "targets": out,
            "planted": [{"cell": c, "mapping": list(m)} for c, m in self.planted],
        }


def _name_index(host: CircuitGraph) -> dict[str, int]:
    idx = getattr(host, "_name_index", None)
    if idx is None:
        idx = {nm: i for i, nm in enumerate(host.names)}
        host._name_index = idx
    return idx


def _instance_mapping(cell: str, inst_id: str, ports: tuple[str, ...], host: CircuitGraph) -> vf2.Mapping:
    """Host node of every target node for one instance of ``cell`` named ``inst_id`` at top level."""
    lib = _library()
    target = cell_graph(cell)
    binding = dict(zip(lib[cell].ports, ports))
    index = _name_index(host)
    rails = {g.casefold() for g in DEFAULT_GLOBALS}
    out = []
    for nm, t in zip(target.names, target.node_types.tolist()):
        if t >= 3:  # cell: "<id>" or "<id>@<path>"
            cid, _, path = nm.partition("@")
            host_name = f"{cid}@{inst_id}/{path}" if path else f"{cid}@{inst_id}"
        elif nm in binding:
            host_name = binding[nm]
        elif nm.casefold() in rails:
            host_name = nm
        else:
            host_name = f"{inst_id}/{nm}"
        out.append(index[host_name])
    return tuple(out)


def estimated_nodes(cell: str) -> int:
    """Nodes an instance adds to a host: everything except rails and driven inputs."""
    g = cell_graph(cell)
    n_inputs = len(_library()[cell].ports) - len(OUTPUTS[cell])
    rails = int(np.isin(np.array([nm.casefold() for nm in g.names]), RAILS).sum())
    return g.num_nodes - rails - n_inputs


def generate(spec: BenchmarkSpec) -> Benchmark:
    """Build a flattened host, plant the requested cells and run the oracle for ground truth."""
    lib = _library()
    for cell, k in spec.plants:
        if cell not in lib:
            raise ValueError(f"unknown cell {cell!r}")
        if k < 0:
            raise ValueError("plant counts must be non-negative")
    planted_size = sum(estimated_nodes(c) * k for c, k in spec.plants)
    if planted_size > spec.size:
        raise ValueError(f"size {spec.size} too small for the plant list (needs ~{planted_size} nodes)")
    rng = np.random.default_rng(spec.seed)

    order = [c for c, k in spec.plants for _ in range(k)]
    budget = spec.size - planted_size - 3
    filler_sizes = {c: estimated_nodes(c) for c in spec.filler}
    fill: list[str] = []
    while spec.filler and budget > 0:
        c = spec.filler[int(rng.integers(len(spec.filler)))]
        fill.append(c)
        budget -= filler_sizes[c]
    planted_flags = [True] * len(order) + [False] * len(fill)
    order += fill
    perm = rng.permutation(len(order))
    order = [order[i] for i in perm]
    planted_flags = [planted_flags[i] for i in perm]

    # signal nets that may still drive more gates
    pool: list[str] = []
    fanout: dict[str, int] = {}
    n_pi = 0
    instances: list[Instance] = []
    plant_records: list[tuple[str, str, tuple[str, ...]]] = []
    for idx, cell in enumerate(order):
        inst_id = f"X{idx}"
        outs = OUTPUTS[cell]
        ports = []
        chosen: set[str] = set()
        for p in lib[cell].ports:
            if p in outs:
                net = f"n{idx}_{p}"
            else:
                open_nets = [x for x in pool if x not in chosen]
                if open_nets and rng.random() < 0.85:
                    net = open_nets[int(rng.integers(len(open_nets)))]
                else:
                    net = f"pi{n_pi}"
                    n_pi += 1
                fanout[net] = fanout.get(net, 0) + 1
                if net in pool and fanout[net] >= spec.max_fanout:
                    pool.remove(net)
                chosen.add(net)
            ports.append(net)
        for p in outs:
            pool.append(f"n{idx}_{p}")
        instances.append(Instance(inst_id, cell, tuple(ports)))
        if planted_flags[idx]:
            plant_records.append((cell, inst_id, tuple(ports)))

    subckts: dict[str, Netlist] = {}
    for cell in dict.fromkeys(order):
        _dependencies(cell, lib, subckts)
    top = Netlist(spec.name, instances=instances, subckts=subckts)
    flat = flatten(top)
    host = to_graph(flat)

    planted = [(c, _instance_mapping(c, i, p, host)) for c, i, p in plant_records]
    truth: dict[str, list[vf2.Mapping]] = {}
    for name in spec.targets:
        truth[name] = vf2.enumerate_matches(cell_graph(name), host)
    for cell, m in planted:
        if cell in truth and m not in set(truth[cell]):
            raise AssertionError(f"planted {cell} not found by the oracle")
    return Benchmark(spec, flat, host, truth, planted)


def write_benchmark(bench: Benchmark, netlist_path, truth_path) -> None:
    with open(netlist_path, "w", encoding="utf-8") as fh:
        fh.write(emit_netlist(bench.netlist))
    with open(truth_path, "w", encoding="utf-8") as fh:
        json.dump(bench.truth_json(), fh)
