"""Command-line harness.

Subcommands:
    run       one honest end-to-end payment, prints/writes the run report
    attack    double-spend one token, writes a report per merchant
    region    secure-region boundary CSV over a loss grid
    chernoff  finite-size bound CSV over an N sweep
    g2        heralded g2 curve CSV from a binary tag file
    keygen    write a fresh MAC key file

Exit codes: 0 success/accept, 2 payment rejected, 3 configuration error,
4 transport failure.
"""

from __future__ import annotations

import argparse
import hashlib
import sys

import numpy as np

from . import itmac, security, timetag
from .config import ConfigError, RunConfig, load_config, validate_config
from .runner import run_attack, run_protocol
from .seeding import make_rng
from .wire import TransportError

EXIT_OK = 0
EXIT_REJECT = 2
EXIT_CONFIG = 3
EXIT_TRANSPORT = 4


def _load(args) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "mode", None):
        cfg.mode = args.mode
    validate_config(cfg)
    return cfg


def _emit(text: str, out_path: str | None) -> None:
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _cmd_run(args) -> int:
    cfg = _load(args)
    report = run_protocol(cfg)
    _emit(report.to_text(), args.out)
    return EXIT_OK if report.accepted else EXIT_REJECT


def _cmd_attack(args) -> int:
    cfg = _load(args)
    if args.strategy:
        cfg.strategy = args.strategy
    if args.knowledge:
        cfg.knowledge = args.knowledge
    validate_config(cfg)
    rep0, rep1 = run_attack(cfg)
    _emit(rep0.to_text() + "---\n" + rep1.to_text(), args.out)
    return EXIT_OK


def _cmd_region(args) -> int:
    cfg = _load(args)
    grid = np.linspace(cfg.region_loss_min, cfg.region_loss_max, cfg.region_points)
    region = security.secure_region(grid, cfg.game(), cfg.angle_step)
    lines = security.region_csv_lines(region, config_hash=cfg.config_hash())
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _cmd_chernoff(args) -> int:
    cfg = _load(args)
    e_d = security.optimal_attack_error(cfg.loss_threshold, cfg.game(), cfg.angle_step).min_error
    e_h = 0.5 * (cfg.channel_flip_hv + cfg.channel_flip_da)
    base = security.ChernoffParams(
        n_per_bit=cfg.n_per_bit,
        e_h=e_h,
        l_h=cfg.channel_loss,
        e_t=cfg.error_threshold,
        l_t=cfg.loss_threshold,
        e_d=e_d,
        tag_bits=cfg.tag_bits,
    )
    n_grid = [int(x) for x in args.n_grid.split(",")]
    lines = security.chernoff_csv_lines(n_grid, base, config_hash=cfg.config_hash())
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _cmd_g2(args) -> int:
    streams = timetag.read_tags(args.tagfile)
    for ch in (args.idler, args.d1, args.d2):
        if ch not in streams:
            raise ConfigError(f"tag file has no channel {ch}")
    tau_axis = np.arange(args.tau_start, args.tau_stop + 1, args.tau_step, dtype=np.int64)
    est = timetag.g2_heralded(
        streams[args.idler], streams[args.d1], streams[args.d2],
        window_ps=args.window, tau_axis_ps=tau_axis, mode=args.pair_mode,
    )
    with open(args.tagfile, "rb") as fh:
        content_hash = hashlib.sha256(fh.read()).hexdigest()[:16]
    spec = (
        f"tags={content_hash};window={args.window};tau={args.tau_start}:{args.tau_stop}"
        f":{args.tau_step};mode={args.pair_mode};channels={args.idler},{args.d1},{args.d2}"
    )
    cfg_hash = hashlib.sha256(spec.encode()).hexdigest()[:16]
    _emit("\n".join(timetag.g2_csv_lines(est, config_hash=cfg_hash)) + "\n", args.out)
    return EXIT_OK


def _cmd_keygen(args) -> int:
    rng = make_rng(args.seed if args.seed is not None else 1)
    key = itmac.keygen(args.tag_bits, args.slots, rng, pad_bytes=args.pad_bytes)
    itmac.save_key(key, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qpay", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, mode_flag=True):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output path (default stdout)")
        if mode_flag:
            p.add_argument("--mode", choices=["inproc", "socket"], help="transport mode")

    p = sub.add_parser("run", help="one honest end-to-end payment")
    common(p)
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("attack", help="double-spend one token")
    common(p, mode_flag=False)
    p.add_argument("--strategy", help="attack spec, e.g. 'split(q=1)' or mixtures via +/@")
    p.add_argument("--knowledge", choices=["insider", "outsider"])
    p.set_defaults(fn=_cmd_attack)

    p = sub.add_parser("region", help="secure-region boundary CSV")
    common(p, mode_flag=False)
    p.set_defaults(fn=_cmd_region)

    p = sub.add_parser("chernoff", help="finite-size bound CSV over N")
    common(p, mode_flag=False)
    p.add_argument(
        "--n-grid",
        default="10,32,100,316,1000,3162,10000,31623,100000,316228,1000000",
        help="comma-separated N values",
    )
    p.set_defaults(fn=_cmd_chernoff)

    p = sub.add_parser("g2", help="heralded g2 CSV from a tag file")
    p.add_argument("tagfile")
    p.add_argument("--out")
    p.add_argument("--window", type=int, default=2960, help="coincidence window, ps")
    p.add_argument("--tau-start", type=int, default=-20000)
    p.add_argument("--tau-stop", type=int, default=20000)
    p.add_argument("--tau-step", type=int, default=2000)
    p.add_argument("--pair-mode", choices=["greedy", "all_pairs"], default="greedy")
    p.add_argument("--idler", type=int, default=0)
    p.add_argument("--d1", type=int, default=1)
    p.add_argument("--d2", type=int, default=2)
    p.set_defaults(fn=_cmd_g2)

    p = sub.add_parser("keygen", help="write a MAC key file")
    p.add_argument("--tag-bits", type=int, default=32)
    p.add_argument("--slots", type=int, default=4)
    p.add_argument("--pad-bytes", type=int, default=0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_keygen)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT


if __name__ == "__main__":
    sys.exit(main())
