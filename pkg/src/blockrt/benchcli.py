"""Batch benchmark CLI: single runs, overhead comparison, scaling sweeps.

Timings are reported, never asserted: counters and checksums are the stable
surface. Every run appends one CSV row with the full configuration echoed.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from dataclasses import dataclass, field, fields, replace

from . import kern
from .dslkits import handwritten_baseline, make_app, merge_finalize
from .dslkits.particle import ParticleParams
from .dslkits.sgrid import SGridParams
from .dslkits.usgrid import USGridParams
from .errors import BlockRtError
from .layers import (
    LayerStack,
    MessagePassingLayer,
    Runtime,
    SharedMemoryLayer,
    stack_compose,
)

CSV_COLUMNS = [
    "kit",
    "region",
    "loops",
    "stack",
    "mmat",
    "seed",
    "t_init_ms",
    "t_proc_ms",
    "t_fin_ms",
    "env_searches",
    "mmat_hits",
    "pages_fetched",
    "reexecs",
    "messages",
    "pool_used_b",
    "pool_free_b",
    "checksum",
    "particles",
    "impl",
    "warmup",
    "init",
    "alpha",
    "beta",
    "dt",
    "pool_mb",
    "variant",
    "ratio_pct",
    "scale_mode",
    "parallelism",
    "norm",
]


@dataclass
class BenchConfig:
    kit: str = "sgrid"
    region: str = "512x512"
    particles: int = 1 << 14
    loops: int = 100
    layers: str = ""
    mmat: str = "on"
    warmup: str = "on"
    init: str = "random"
    seed: int = 1
    alpha: float = 0.0
    beta: float = 0.25
    dt: float = 1e-4
    pool_mb: int = 300
    chunk_kb: int = 16
    impl: str = "auto"
    verify: bool = False
    csv: str = ""
    trace: bool = False
    dump_env: bool = False

    def stack_label(self) -> str:
        return self.layers or "serial"


def parse_region(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise BlockRtError(f"bad region {text!r}; expected WxH") from None


def parse_layers(text: str) -> LayerStack:
    layers = []
    if text and text != "serial":
        for part in text.split(","):
            kind, _, n = part.partition(":")
            n = int(n) if n else 1
            if kind == "mp":
                layers.append(MessagePassingLayer(n))
            elif kind == "sm":
                layers.append(SharedMemoryLayer(n))
            else:
                raise BlockRtError(f"unknown layer kind {kind!r}")
    return stack_compose(layers)


def particle_region(n_particles: int) -> tuple[int, int]:
    """Bucket grid that holds exactly n_particles at 16 per bucket."""
    buckets = n_particles // 16
    side = int(round(buckets**0.5))
    if side * side == buckets and side % 8 == 0:
        return side, side
    # fall back to a widest 8-divisible rectangle
    w = side - side % 8
    while w >= 8:
        if buckets % w == 0 and (buckets // w) % 8 == 0:
            return w, buckets // w
        w -= 8
    raise BlockRtError(
        f"{n_particles} particles do not map onto a block-aligned bucket grid"
    )


def kit_params(cfg: BenchConfig):
    pool_bytes = cfg.pool_mb << 20
    chunk_bytes = cfg.chunk_kb << 10
    common = dict(
        loops=cfg.loops,
        init=cfg.init,
        seed=cfg.seed,
        pool_bytes=pool_bytes,
        chunk_bytes=chunk_bytes,
        impl=cfg.impl,
        warmup=cfg.warmup == "on",
    )
    if cfg.kit == "sgrid":
        return SGridParams(
            region=parse_region(cfg.region), alpha=cfg.alpha, beta=cfg.beta, **common
        )
    if cfg.kit in ("usgrid-c", "usgrid-r"):
        return USGridParams(
            region=parse_region(cfg.region),
            case=cfg.kit[-1],
            alpha=cfg.alpha,
            beta=cfg.beta,
            **common,
        )
    if cfg.kit == "particle":
        return ParticleParams(
            region=particle_region(cfg.particles),
            n_particles=cfg.particles,
            dt=cfg.dt,
            **common,
        )
    raise BlockRtError(f"unknown kit {cfg.kit!r}")


@dataclass
class RunOutcome:
    report: object
    merged: dict
    params: object


def execute(cfg: BenchConfig) -> RunOutcome:
    params = kit_params(cfg)
    stack = parse_layers(cfg.layers)
    runtime = Runtime(stack, trace=cfg.trace)
    factory = make_app(cfg.kit, params)
    if cfg.mmat == "off":
        base_factory = factory

        def factory():
            app = base_factory()
            original = app.processing

            def processing(ctx):
                ctx.access.memo_set_enabled(False)
                original(ctx)

            app.processing = processing
            return app

    if cfg.dump_env:
        from .layers import RankInfo, assign_task_ids

        app = make_app(cfg.kit, params)()
        env = app.build_env(RankInfo((), 1, stack))
        assign_task_ids(env, stack)
        print(env.dump())
    report = runtime.run(factory)
    merged = merge_finalize(report.finalize_results)
    return RunOutcome(report, merged, params)


def row_from(cfg: BenchConfig, outcome: RunOutcome, **extra) -> dict:
    rep = outcome.report
    row = {
        "kit": cfg.kit,
        "region": cfg.region if cfg.kit != "particle" else "",
        "loops": cfg.loops,
        "stack": cfg.stack_label(),
        "mmat": cfg.mmat,
        "seed": cfg.seed,
        "t_init_ms": f"{rep.t_init_s * 1e3:.3f}",
        "t_proc_ms": f"{rep.t_proc_s * 1e3:.3f}",
        "t_fin_ms": f"{rep.t_fin_s * 1e3:.3f}",
        "env_searches": rep.counters.env_searches,
        "mmat_hits": rep.counters.mmat_hits,
        "pages_fetched": rep.pages_fetched,
        "reexecs": rep.counters.reexecs,
        "messages": rep.messages,
        "pool_used_b": outcome.merged["pool_used"],
        "pool_free_b": outcome.merged["pool_free"],
        "checksum": outcome.merged["checksum"],
        "particles": cfg.particles if cfg.kit == "particle" else "",
        "impl": cfg.impl,
        "warmup": cfg.warmup,
        "init": cfg.init,
        "alpha": cfg.alpha,
        "beta": cfg.beta,
        "dt": cfg.dt if cfg.kit == "particle" else "",
        "pool_mb": cfg.pool_mb,
        "variant": "",
        "ratio_pct": "",
        "scale_mode": "",
        "parallelism": "",
        "norm": "",
    }
    row.update(extra)
    return row


class CsvSink:
    def __init__(self, path: str):
        self.path = path
        self.rows: list[dict] = []

    def add(self, row: dict) -> None:
        self.rows.append(row)

    def flush(self) -> None:
        if not self.path:
            return
        with open(self.path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            writer.writerows(self.rows)


def cmd_run(cfg: BenchConfig, sink: CsvSink) -> int:
    outcome = execute(cfg)
    row = row_from(cfg, outcome)
    sink.add(row)
    print(
        f"run kit={cfg.kit} stack={cfg.stack_label()} checksum={row['checksum']} "
        f"t_proc={row['t_proc_ms']}ms searches={row['env_searches']} "
        f"fetched={row['pages_fetched']} reexecs={row['reexecs']}"
    )
    if cfg.verify:
        base = handwritten_baseline(cfg.kit, outcome.params)
        if base.checksum != outcome.merged["checksum"]:
            print(
                f"VERIFY FAILED: platform {outcome.merged['checksum']} "
                f"!= handwritten {base.checksum}",
                file=sys.stderr,
            )
            return 1
        print("verify: OK (matches handwritten baseline)")
    return 0


def cmd_overhead(cfg: BenchConfig, sink: CsvSink) -> int:
    variants = [
        ("handwritten", None),
        ("platform", ""),
        ("platform+sm1", "sm:1"),
        ("platform+mp1", "mp:1"),
    ]
    for mmat in ("on", "off"):
        base_cfg = replace(cfg, mmat=mmat)
        t_ref = None
        for name, stack in variants:
            if stack is None:
                params = kit_params(base_cfg)
                t0 = time.perf_counter()
                base = handwritten_baseline(cfg.kit, params)
                t1 = time.perf_counter()
                t_ref = base.t_proc_s or (t1 - t0)
                row = {c: "" for c in CSV_COLUMNS}
                row.update(
                    kit=cfg.kit,
                    region=cfg.region if cfg.kit != "particle" else "",
                    loops=cfg.loops,
                    stack="none",
                    mmat=mmat,
                    seed=cfg.seed,
                    t_proc_ms=f"{t_ref * 1e3:.3f}",
                    checksum=base.checksum,
                    variant=name,
                    ratio_pct="100.0",
                    env_searches=0,
                    mmat_hits=0,
                    pages_fetched=0,
                    reexecs=0,
                    messages=0,
                )
                sink.add(row)
                print(f"overhead mmat={mmat} {name}: {t_ref * 1e3:.1f}ms (100%)")
                continue
            run_cfg = replace(base_cfg, layers=stack)
            outcome = execute(run_cfg)
            ratio = 100.0 * outcome.report.t_proc_s / t_ref if t_ref else 0.0
            sink.add(row_from(run_cfg, outcome, variant=name, ratio_pct=f"{ratio:.1f}"))
            print(
                f"overhead mmat={mmat} {name}: {outcome.report.t_proc_s * 1e3:.1f}ms "
                f"({ratio:.0f}%) searches={outcome.report.counters.env_searches}"
            )
    return 0


def _scaled_cfg(cfg: BenchConfig, mode: str, kind: str, p: int) -> BenchConfig:
    layers = f"{kind}:{p}"
    if mode == "strong":
        return replace(cfg, layers=layers)
    if cfg.kit == "particle":
        return replace(cfg, layers=layers, particles=cfg.particles * p)
    w, h = parse_region(cfg.region)
    return replace(cfg, layers=layers, region=f"{w}x{h * p}")


def cmd_scale(cfg: BenchConfig, sink: CsvSink, mode: str, parallelisms) -> int:
    for kind in ("sm", "mp"):
        t_one = None
        for p in parallelisms:
            run_cfg = _scaled_cfg(cfg, mode, kind, p)
            outcome = execute(run_cfg)
            t = outcome.report.t_proc_s
            if p == 1 or t_one is None:
                t_one = t
            norm = (t / t_one) if mode == "strong" else (100.0 * t / t_one)
            sink.add(
                row_from(
                    run_cfg,
                    outcome,
                    scale_mode=mode,
                    parallelism=p,
                    norm=f"{norm:.3f}",
                )
            )
            print(
                f"scale {mode} {kind}:{p} t_proc={t * 1e3:.1f}ms norm={norm:.3f} "
                f"fetched={outcome.report.pages_fetched}"
            )
    return 0


def cmd_impls(cfg: BenchConfig, sink: CsvSink) -> int:
    names = ["python"] + (["compiled"] if kern.compiled is not None else [])
    timings = {}
    for name in names:
        run_cfg = replace(cfg, impl=name)
        outcome = execute(run_cfg)
        timings[name] = (outcome.report.t_proc_s, outcome.merged["checksum"])
        sink.add(row_from(run_cfg, outcome, variant=f"impl-{name}"))
        print(f"impl {name}: t_proc={outcome.report.t_proc_s * 1e3:.1f}ms checksum={outcome.merged['checksum']}")
    if len(timings) == 2:
        t_py, c_py = timings["python"]
        t_c, c_c = timings["compiled"]
        match = "identical" if c_py == c_c else "DIFFERENT"
        print(f"impl speedup: {t_py / t_c:.1f}x, checksums {match}")
        if c_py != c_c:
            return 1
    return 0


def load_config_file(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bench", description="block-runtime benchmark harness"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "overhead", "scale", "impls"):
        p = sub.add_parser(name)
        p.add_argument("--kit", default=None, choices=["sgrid", "usgrid-c", "usgrid-r", "particle"])
        p.add_argument("--region", default=None, help="grid points, WxH")
        p.add_argument("--particles", type=int, default=None)
        p.add_argument("--loops", type=int, default=None)
        p.add_argument("--layers", default=None, help="e.g. mp:2,sm:4 (empty for serial)")
        p.add_argument("--mmat", choices=["on", "off"], default=None)
        p.add_argument("--warmup", choices=["on", "off"], default=None)
        p.add_argument("--init", choices=["constant", "hotspot", "random"], default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--beta", type=float, default=None)
        p.add_argument("--dt", type=float, default=None)
        p.add_argument("--pool-mb", type=int, default=None)
        p.add_argument("--chunk-kb", type=int, default=None)
        p.add_argument("--impl", choices=["auto", "python", "compiled"], default=None)
        p.add_argument("--verify", action="store_true", default=None)
        p.add_argument("--csv", default=None, help="write results to this CSV file")
        p.add_argument("--trace", action="store_true", default=None)
        p.add_argument("--dump-env", action="store_true", default=None)
        p.add_argument("--config", default=None, help="key=value config file")
        if name == "scale":
            p.add_argument("--mode", choices=["strong", "weak"], default="strong")
            p.add_argument("--parallelisms", default="1,2,4")
    return parser


def config_from_args(args) -> BenchConfig:
    cfg = BenchConfig()
    file_values = load_config_file(args.config) if args.config else {}
    for f in fields(BenchConfig):
        if f.name in file_values:
            raw = file_values[f.name]
            if f.type in ("int", int):
                raw = int(raw)
            elif f.type in ("float", float):
                raw = float(raw)
            elif f.type in ("bool", bool):
                raw = raw.lower() in ("1", "true", "yes", "on")
            setattr(cfg, f.name, raw)
    for f in fields(BenchConfig):
        arg = getattr(args, f.name, None)
        if arg is not None:
            setattr(cfg, f.name, arg)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        sink = CsvSink(cfg.csv)
        if args.command == "run":
            rc = cmd_run(cfg, sink)
        elif args.command == "overhead":
            rc = cmd_overhead(cfg, sink)
        elif args.command == "scale":
            parallelisms = [int(x) for x in args.parallelisms.split(",")]
            rc = cmd_scale(cfg, sink, args.mode, parallelisms)
        else:
            rc = cmd_impls(cfg, sink)
        sink.flush()
        return rc
    except BlockRtError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
