"""Command-line entry point: synth, convert, sample, train, eval, match, bench."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import classifier, embedder, matcher, rgcn, sampler, synth, vf2
from .classifier import Model, ModelFileError, TrainConfig
from .graph import CircuitGraph, radius, to_graph
from .netlist import NetlistError, flatten, parse_netlist
from .rgcn import GNNConfig

log = logging.getLogger("netmatch")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- loading ------------------------------------------------------------------

def load_graph(path: str) -> CircuitGraph:
    """A graph file (binary or JSON) or a SPICE netlist, flattened and converted."""
    data = Path(path).read_bytes()
    if data.startswith(b"NMGRAPH"):
        return CircuitGraph.from_bytes(data)
    if data.lstrip().startswith(b"{"):
        return CircuitGraph.from_json(json.loads(data))
    return to_graph(flatten(parse_netlist(data, Path(path).stem)))


def load_target(spec: str) -> tuple[str, CircuitGraph]:
    """Library cell name or a file path."""
    if spec in synth.cell_library():
        return spec, synth.cell_graph(spec)
    if os.path.exists(spec):
        return Path(spec).stem, load_graph(spec)
    raise UsageError(f"unknown target {spec!r}: not a library cell or file")


def _hosts(paths: list[str]) -> dict[str, CircuitGraph]:
    hosts = {}
    for p in paths:
        key = Path(p).stem
        if key in hosts:
            key = p
        hosts[key] = load_graph(p)
    return hosts


def _targets(specs: list[str]) -> dict[str, CircuitGraph]:
    return dict(load_target(s) for s in specs)


def _write_json(path: str | None, obj) -> None:
    if path:
        Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _table(headers: list[str], rows: list[list]) -> str:
    cells = [[str(h) for h in headers]] + [[f"{v:.4f}" if isinstance(v, float) else str(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _gnn_config(args) -> GNNConfig:
    return GNNConfig(layers=args.layers, hidden=args.hidden, bases=args.bases, seed=args.seed)


def _counts(args) -> sampler.SampleCounts:
    c = sampler.SampleCounts(args.positive, args.partial, args.mutation, args.others, args.random)
    return c.restrict(args.kinds)


# -- subcommands --------------------------------------------------------------

def cmd_synth(args) -> dict:
    plants = []
    for p in args.plant:
        name, _, k = p.partition(":")
        plants.append((name, int(k or 1)))
    spec = synth.BenchmarkSpec(seed=args.seed, size=args.size, plants=tuple(plants),
                               truth_targets=tuple(args.truth) if args.truth else None, name=args.name)
    bench = synth.generate(spec)
    synth.write_benchmark(bench, args.out, args.truth_out or str(Path(args.out).with_suffix(".truth.json")))
    rows = [[t, len(m), vf2.count_classes(m, vf2.automorphisms(synth.cell_graph(t)))] for t, m in bench.truth.items()]
    print(f"{bench.graph.num_nodes} nodes, {bench.graph.num_edges} edges")
    print(_table(["target", "mappings", "instances"], rows))
    return {"nodes": bench.graph.num_nodes, "edges": bench.graph.num_edges,
            "truth": {t: len(m) for t, m in bench.truth.items()}}


def cmd_convert(args) -> dict:
    g = load_graph(args.input)
    g.validate()
    if args.format == "json":
        Path(args.out).write_text(json.dumps(g.to_json()))
    else:
        Path(args.out).write_bytes(g.to_bytes())
    print(f"{g.num_nodes} nodes, {g.num_edges} edges -> {args.out}")
    return {"nodes": g.num_nodes, "edges": g.num_edges}


def cmd_sample(args) -> dict:
    hosts, targets = _hosts(args.host), _targets(args.target)
    samples = sampler.build_sample_set(hosts, targets, _counts(args), args.seed, args.mutation_scope)
    sampler.write_jsonl(samples, args.out)
    summary: dict[str, dict[str, int]] = {}
    for s in samples:
        summary.setdefault(s.target_id, {}).setdefault(s.kind, 0)
        summary[s.target_id][s.kind] += 1
    rows = [[t] + [summary[t].get(k, 0) for k in sampler.KINDS] for t in summary]
    print(_table(["target", *sampler.KINDS], rows))
    return {"samples": summary}


def _train_once(args, hosts, targets, samples) -> tuple[Model, classifier.TrainReport]:
    tc = TrainConfig(epochs=args.epochs, lr=args.lr, batch_size=args.batch_size, seed=args.seed,
                     mlp_hidden=args.mlp_hidden)

    def progress(epoch, loss):
        if args.log_every and (epoch + 1) % args.log_every == 0:
            log.info("epoch %d loss %.6f", epoch + 1, loss)

    return classifier.train(hosts, targets, samples, _gnn_config(args), tc, log=progress)


def cmd_train(args) -> dict:
    hosts, targets = _hosts(args.host), _targets(args.target)
    if args.samples:
        samples = sampler.read_jsonl(args.samples)
    else:
        samples = sampler.build_sample_set(hosts, targets, _counts(args), args.seed, args.mutation_scope)
    groups = {t: [s for s in samples if s.target_id == t] for t in targets} if args.per_target else {"": samples}
    out = {}
    for tid, group in groups.items():
        model, report = _train_once(args, hosts, targets if not tid else {tid: targets[tid]}, group)
        if args.eval_host:
            ev_hosts = _hosts(args.eval_host)
            ev = sampler.eval_sample_set(ev_hosts, targets if not tid else {tid: targets[tid]},
                                         args.eval_positive, args.eval_random, args.seed + 1)
            report.evaluation = classifier.evaluate(model, ev, ev_hosts, targets)
        path = args.out if not tid else str(Path(args.out).with_suffix(f".{tid}{Path(args.out).suffix}"))
        model.save(path)
        out[tid or "shared"] = dict(report.to_json(timings=args.timings), model=path,
                                    config_hash=model.config_hash())
        print(f"model -> {path}  final loss {report.losses[-1]:.6f}  ({report.seconds:.1f}s)")
        if report.evaluation:
            rows = [[t, v["accuracy"], v["auroc"]] for t, v in report.evaluation.items()]
            print(_table(["target", "accuracy", "auroc"], rows))
    return out


def cmd_eval(args) -> dict:
    model = Model.load(args.model)
    hosts, targets = _hosts(args.host), _targets(args.target)
    if args.samples:
        samples = sampler.read_jsonl(args.samples)
    else:
        samples = sampler.eval_sample_set(hosts, targets, args.eval_positive, args.eval_random, args.seed)
    res = classifier.evaluate(model, samples, hosts, targets)
    print(_table(["target", "accuracy", "auroc", "pos", "neg"],
                 [[t, v["accuracy"], v["auroc"], v["positives"], v["negatives"]] for t, v in res.items()]))
    return {"evaluation": res}


def _check_model_config(args, model: Model) -> None:
    if args.config_hash and args.config_hash != model.config_hash():
        raise ModelFileError(f"model config hash {model.config_hash()} does not match {args.config_hash}")
    for name in ("layers", "hidden", "bases"):
        want = getattr(args, name)
        if want is not None and want != getattr(model.config, name):
            raise ModelFileError(f"model has {name}={getattr(model.config, name)}, requested {want}")


def cmd_match(args) -> dict:
    model = Model.load(args.model)
    _check_model_config(args, model)
    host = load_graph(args.host)
    tid, target = load_target(args.target)
    cfg = matcher.MatchConfig(tau=args.tau, K=args.K)
    if args.mode == "one":
        found, stats = matcher.match_one(host, target, model, cfg)
        results = [found] if found else []
    else:
        results, stats = matcher.match_all(host, target, model, cfg)
    report = {"target": tid, "mode": args.mode, "config_hash": model.config_hash(),
              "stats": stats.to_json(timings=args.timings), "matches": [r.to_json() for r in results]}
    row = [tid, stats.matches_distinct, stats.total_seconds, stats.regions_examined, stats.regions_total]
    headers = ["target", "# matches", "seconds", "regions examined", "regions"]
    if args.baseline_vf2:
        base, secs = matcher.baseline(host, target, first_only=args.mode == "one")
        base_set = {tuple(m) for m in base}
        report["baseline"] = {"matches": len(base),
                              "agrees": args.mode == "one" or base_set == {r.mapping for r in results}}
        if args.timings:
            report["baseline"]["seconds"] = secs
            report["baseline"]["reduction_pct"] = matcher.reduction(stats.total_seconds, secs)
        row += [len(base), secs, matcher.reduction(stats.total_seconds, secs)]
        headers += ["vf2 # matches", "vf2 seconds", "reduction %"]
    print(_table(headers, [row]))
    if stats.note:
        print(f"note: {stats.note}")
    return report


def bench_host(host: CircuitGraph, target: CircuitGraph, model: Model, max_centers: int | None = None,
               seed: int = 0) -> dict:
    """Time region embeddings via the whole-graph table against one network run per region."""
    K = radius(target)
    centers = np.arange(host.num_nodes)
    if max_centers is not None and max_centers < len(centers):
        centers = np.sort(np.random.default_rng(seed).choice(centers, max_centers, replace=False))
    t0 = time.perf_counter()
    table = rgcn.forward(host, model.gnn, model.config)
    fast = embedder.batch_region_embeddings(table, centers, K)
    t_fast = time.perf_counter() - t0
    t0 = time.perf_counter()
    regions = embedder.regions_for(host, centers, K, model.config.layers)
    slow = np.stack([embedder.standalone_region_embedding(host, r, model.gnn, model.config) for r in regions])
    t_slow = time.perf_counter() - t0
    scale = np.maximum(np.abs(slow).max(axis=1, keepdims=True), 1e-300)
    return {"nodes": host.num_nodes, "centers": len(centers), "K": K,
            "extraction_seconds": t_fast, "per_subgraph_seconds": t_slow,
            "reduction_pct": matcher.reduction(t_fast, t_slow),
            "max_rel_diff": float((np.abs(fast - slow) / scale).max()) if len(centers) else 0.0}


def cmd_bench(args) -> dict:
    model = Model.load(args.model) if args.model else classifier.init_model(_gnn_config(args))
    tid, target = load_target(args.target)
    hosts = _hosts(args.host) if args.host else {}
    for size in args.sizes:
        spec = synth.BenchmarkSpec(seed=args.seed, size=size, plants=((tid, 2),) if tid in synth.cell_library() else ())
        hosts[f"synth{size}"] = synth.generate(spec).graph
    rows, out = [], {}
    for name, host in hosts.items():
        r = bench_host(host, target, model, args.max_centers, args.seed)
        out[name] = r if args.timings else {k: v for k, v in r.items() if "seconds" not in k and k != "reduction_pct"}
        rows.append([name, r["nodes"], r["centers"], r["extraction_seconds"], r["per_subgraph_seconds"],
                     r["reduction_pct"]])
    print(_table(["host", "nodes", "centers", "extraction s", "per-subgraph s", "reduction %"], rows))
    return {"target": tid, "hosts": out}


# -- wiring -------------------------------------------------------------------

def _env_seed() -> int:
    try:
        return int(os.environ.get("NETMATCH_SEED", "0"))
    except ValueError:
        return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="netmatch", description="GNN-guided subcircuit matching")
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=_env_seed(), help="global seed (env NETMATCH_SEED)")
    common.add_argument("--threads", type=int, default=1, help="worker count; results never depend on it")
    common.add_argument("--report", help="write the JSON report here")
    common.add_argument("--timings", action=argparse.BooleanOptionalAction, default=True,
                        help="include wall-clock times in the JSON report")
    common.add_argument("-v", "--verbose", action="store_true")

    def model_opts(sp, defaults=True):
        sp.add_argument("--layers", type=int, default=2 if defaults else None)
        sp.add_argument("--hidden", type=int, default=32 if defaults else None)
        sp.add_argument("--bases", type=int, default=4 if defaults else None)

    def sample_opts(sp):
        sp.add_argument("--positive", type=int, default=200)
        sp.add_argument("--partial", type=int, default=100)
        sp.add_argument("--mutation", type=int, default=50)
        sp.add_argument("--others", type=int, default=50)
        sp.add_argument("--random", type=int, default=300)
        sp.add_argument("--kinds", default="ALL", help='"ALL" or e.g. "P+R", "P+T+M+O+R"')
        sp.add_argument("--mutation-scope", choices=("instance", "region"), default="instance")

    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate a benchmark host")
    s.add_argument("--size", type=int, default=1000)
    s.add_argument("--plant", action="append", default=[], metavar="CELL:COUNT")
    s.add_argument("--truth", action="append", default=[], metavar="CELL", help="extra oracle targets")
    s.add_argument("--name", default="bench")
    s.add_argument("--out", required=True)
    s.add_argument("--truth-out")

    s = sub.add_parser("convert", parents=[common], help="netlist to graph file")
    s.add_argument("input")
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=("bin", "json"), default="bin")

    s = sub.add_parser("sample", parents=[common], help="write a labelled sample set")
    s.add_argument("--host", action="append", required=True)
    s.add_argument("--target", action="append", required=True)
    s.add_argument("--out", required=True)
    sample_opts(s)

    s = sub.add_parser("train", parents=[common], help="train the shared model")
    s.add_argument("--host", action="append", required=True)
    s.add_argument("--target", action="append", required=True)
    s.add_argument("--samples", help="JSON-lines sample set (generated when omitted)")
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int, default=1000)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--batch-size", type=int, default=0, help="0 = full batch")
    s.add_argument("--mlp-hidden", type=int, default=64)
    s.add_argument("--per-target", action="store_true", help="one model per target instead of a shared one")
    s.add_argument("--eval-host", action="append", default=[])
    s.add_argument("--eval-positive", type=int, default=100)
    s.add_argument("--eval-random", type=int, default=100)
    s.add_argument("--log-every", type=int, default=100)
    model_opts(s)
    sample_opts(s)

    s = sub.add_parser("eval", parents=[common], help="accuracy and AUROC on held-out samples")
    s.add_argument("--model", required=True)
    s.add_argument("--host", action="append", required=True)
    s.add_argument("--target", action="append", required=True)
    s.add_argument("--samples")
    s.add_argument("--eval-positive", type=int, default=100)
    s.add_argument("--eval-random", type=int, default=100)

    s = sub.add_parser("match", parents=[common], help="find a target in a host")
    s.add_argument("--model", required=True)
    s.add_argument("--host", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--mode", choices=("all", "one"), default="all")
    s.add_argument("--tau", type=float, default=0.0)
    s.add_argument("--K", type=int)
    s.add_argument("--baseline-vf2", action="store_true")
    s.add_argument("--config-hash", help="refuse a model whose structure hash differs")
    model_opts(s, defaults=False)

    s = sub.add_parser("bench", parents=[common], help="extraction vs per-subgraph embedding time")
    s.add_argument("--model")
    s.add_argument("--host", action="append", default=[])
    s.add_argument("--sizes", type=int, nargs="*", default=[])
    s.add_argument("--target", default="nand2")
    s.add_argument("--max-centers", type=int)
    model_opts(s)
    return p


COMMANDS = {"synth": cmd_synth, "convert": cmd_convert, "sample": cmd_sample, "train": cmd_train,
            "eval": cmd_eval, "match": cmd_match, "bench": cmd_bench}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    resolved = {k: v for k, v in sorted(vars(args).items())}
    log.info("config: %s", json.dumps(resolved, sort_keys=True, default=str))
    try:
        result = COMMANDS[args.command](args)
    except UsageError as e:
        print(f"netmatch: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as e:
        print(f"netmatch: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (NetlistError, ModelFileError, sampler.SamplingError, OSError, ValueError, KeyError) as e:
        print(f"netmatch: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    _write_json(args.report, {"command": args.command, "config": resolved, "result": result})
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
