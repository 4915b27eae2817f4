"""Command-line entry point: ``ddanet {sweep,run,lowerbound,audit,spectral}``."""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .harness import (PAPER_N, PAPER_N_DEFAULT, ConfigError, ExperimentConfig, SweepError,
                      audit_suite, load_config, lower_bound_demo, measure_T_epsilon,
                      scaling_sweep, spectral_report)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--out", help="write output here instead of stdout")
    for f in dataclasses.fields(ExperimentConfig):
        p.add_argument("--" + f.name.replace("_", "-"), dest="cfg_" + f.name, default=None,
                       metavar=f.name.upper())


def _config(args) -> ExperimentConfig:
    over = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    cfg = load_config(args.config, over)
    if getattr(args, "paper_scale", False):
        cfg = cfg.replace(n_list=PAPER_N.get(cfg.family, PAPER_N_DEFAULT), trials=20,
                          t_max=max(cfg.t_max, 4_000_000))
    return cfg


def _emit(args, text: str) -> None:
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_sweep(args) -> int:
    cfg = _config(args)
    res = scaling_sweep(cfg)
    _emit(args, res.to_csv())
    print(f"# slope {res.slope:.4f} +- {res.stderr:.4f} over n={list(res.sizes)} "
          f"(capped {res.capped_fraction:.0%}, {res.seconds:.1f}s)", file=sys.stderr)
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    m = measure_T_epsilon(cfg, cfg.n, trial=0)
    lines = [f"T_eps={m.T_eps}", f"hit_cap={str(m.hit_cap).lower()}",
             f"final_error={m.final_error!r}", f"f_star={m.f_star!r}",
             f"sigma2={m.sigma2!r}", f"gap={m.gap!r}", f"seed={m.seed}"]
    text = "\n".join(lines) + "\n"
    if m.record is not None and m.record.eval_t:
        text += m.record.to_csv()
    _emit(args, text)
    return 0


def cmd_lowerbound(args) -> int:
    cfg = _config(args)
    sizes = cfg.n_list or (8, 16, 32)
    table = lower_bound_demo(cfg.family, sizes, cfg.c, cfg.k)
    _emit(args, table.to_text())
    return 0 if table.slope >= 0.5 else 1


def cmd_audit(args) -> int:
    cfg = _config(args)
    report = audit_suite(cfg.base_seed, quick=args.quick)
    _emit(args, report.to_text())
    return 0 if report.passed else 1


def cmd_spectral(args) -> int:
    cfg = _config(args)
    rep = spectral_report(cfg)
    _emit(args, "".join(f"{k}={v!r}\n" if isinstance(v, float) else f"{k}={v}\n"
                        for k, v in rep.items()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddanet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, help_ in (("sweep", cmd_sweep, "T(eps; n) scaling sweep as CSV"),
                            ("run", cmd_run, "single configured run"),
                            ("lowerbound", cmd_lowerbound, "hard-instance first-positive table"),
                            ("audit", cmd_audit, "invariant and bound audit battery"),
                            ("spectral", cmd_spectral, "spectral report for one graph")):
        p = sub.add_parser(name, help=help_)
        _add_config_flags(p)
        p.set_defaults(func=fn)
        if name == "sweep":
            p.add_argument("--paper-scale", action="store_true",
                           help="n from 100 to 900, 20 trials")
        if name == "audit":
            p.add_argument("--quick", action="store_true", help="smaller sample counts")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SweepError) as exc:
        print(f"ddanet: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
