"""Command-line interface: ``python -m hybridctl <command> --config FILE [--seed N] [--out DIR]``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from collections import defaultdict
from dataclasses import replace
from pathlib import Path

from . import harness as H
from . import iohmm
from .config import ConfigError, ExperimentConfig, load_config, read_matrix, variant
from .rollout import csv_header

log = logging.getLogger("hybridctl")

DEFAULT_VARIANT = {"exp1_sync": "CoL+RPTD3", "exp2_activation": "CoL+SRPTD3", "exp3_ablation": "CoL+SRPTD3"}


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "episodes", None) is not None:
        cfg.episodes = args.episodes
    return cfg


def cmd_collect_expert(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    expert = H.collect(cfg)
    rows = [r for lg in expert.episodes for r in lg.rows()]
    H.write_csv(out / "expert_trajectories.csv", csv_header(cfg.plant.m_y), rows)
    H.write_csv(out / "expert_returns.csv", ["episode", "seed", "t_on", "t_off", "return", "shutdown"],
                [[lg.episode, lg.seed, lg.t_on, lg.t_off, lg.ret, lg.shutdown] for lg in expert.episodes])
    print(f"collected {len(expert.buffer)} expert transitions from {len(expert.episodes)} episodes -> {out}")
    return 0


def cmd_train_iohmm(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    expert = H.collect(cfg)
    st = cfg.iohmm
    em = iohmm.em_fit(expert.sequences(), n_states=st.n_states, tolerance=st.tolerance,
                      max_iters=st.max_iters, seed=H.derive_seed(cfg.seed, H.HMM), restarts=st.restarts)
    (out / "iohmm.json").write_text(em.params.to_json())
    H.write_csv(out / "em_trace.csv", ["iteration", "loglik"], list(enumerate(em.trace)))
    print(f"IOHMM fitted: {len(em.trace)} iterations, converged={em.converged}, "
          f"loglik={em.trace[-1]:.6g} -> {out}")
    return 0


def cmd_classify(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    spec = H.specialize(cfg, H.collect(cfg))
    H.write_specialization(spec, out, cfg.plant.m_y)
    print(f"specialized states {sorted(spec.classification.specialized)} -> {out / 'state_values.csv'}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    v = cfg.variant or variant(DEFAULT_VARIANT[cfg.experiment])
    out = Path(args.out)
    expert = H.collect(cfg)
    spec = H.specialize(cfg, expert) if v.specialized else None
    bundle = H.train_variant(cfg, v, expert, spec)
    H.save_bundle(bundle, out / "bundle")
    if spec is not None:
        H.write_specialization(spec, out, cfg.plant.m_y)
    print(f"trained {v.name} for {cfg.episodes} episodes -> {out / 'bundle'}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    bundle = H.load_bundle(cfg, Path(args.bundle) if args.bundle else out / "bundle")
    rows, evals = H._report_rows({bundle.variant.name: bundle}, cfg, cfg.eval_magnitudes, keep_logs=True)
    report = H.MetricsReport(cfg.experiment, rows, {}, evals)
    H.write_report(report, out, cfg.plant.m_y)
    for r in rows:
        print(f"{r['variant']:<12} magnitude {r['magnitude']:.2f}: {r['mean']:.4f} +- {r['sd']:.4f}")
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    report = H.run(cfg, out=args.out)
    for r in report.ranking():
        print(f"{r['variant']:<12} magnitude {r['magnitude']:.2f}: {r['mean']:.4f} +- {r['sd']:.4f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    cfg = replace(cfg, experiment="exp3_ablation")
    names = [v.name for v in read_matrix(args.matrix)] if args.matrix else list(cfg.variants)
    report = H.run_exp3(cfg, names, out=args.out)
    for i, r in enumerate(report.ranking(), 1):
        print(f"{i:>2}. {r['variant']:<12} {r['mean']:.4f} +- {r['sd']:.4f}")
    return 0


def _read(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_export_plots(args) -> int:
    """Reshape experiment CSVs into one file per figure (data only, no rendering)."""
    src = Path(args.out)
    dst = src / "plots"
    dst.mkdir(parents=True, exist_ok=True)
    made = []
    if (src / "traces.csv").is_file():
        series = defaultdict(dict)
        for r in _read(src / "traces.csv"):
            series[r["variant"]][int(r["episode"])] = r["train_return"]
        names = sorted(series)
        episodes = sorted({e for s in series.values() for e in s})
        H.write_csv(dst / "training_curves.csv", ["episode", *names],
                    [[e, *[series[n].get(e, "") for n in names]] for e in episodes])
        made.append("training_curves.csv")
    if (src / "trajectories.csv").is_file():
        rows = [[r["variant"], r["magnitude"], r["t"], r["y0"], r["u"], r["a_expert"], r["a_agent"],
                 r["disturbance"], r["hidden_state"]]
                for r in _read(src / "trajectories.csv") if r["episode"] == "0"]
        H.write_csv(dst / "controller_sync.csv",
                    ["variant", "magnitude", "t", "y0", "u", "a_expert", "a_agent", "disturbance",
                     "hidden_state"], rows)
        made.append("controller_sync.csv")
    if (src / "state_distribution.csv").is_file():
        rows = [[r["t"], r["y0"], r["y1"] if "y1" in r else "", r["hidden_state"]]
                for r in _read(src / "state_distribution.csv")]
        H.write_csv(dst / "state_distribution.csv", ["t", "y0", "y1", "hidden_state"], rows)
        made.append("state_distribution.csv")
    if (src / "ranking.csv").is_file():
        rows = [[r["rank"], r["variant"], r["mean"], r["sd"]] for r in _read(src / "ranking.csv")]
        H.write_csv(dst / "ranking.csv", ["rank", "variant", "mean", "sd"], rows)
        made.append("ranking.csv")
    if not made:
        raise ConfigError(f"no experiment outputs found in {src}")
    print(f"wrote {', '.join(made)} -> {dst}")
    return 0


COMMANDS = {
    "collect-expert": (cmd_collect_expert, "roll out the PID expert and log its trajectories"),
    "train-iohmm": (cmd_train_iohmm, "fit the IOHMM on expert data"),
    "classify": (cmd_classify, "value warmup and hidden-state classification"),
    "train": (cmd_train, "train the configured variant and save its networks"),
    "eval": (cmd_eval, "evaluate a saved bundle"),
    "run": (cmd_run, "run the configured experiment end to end"),
    "ablate": (cmd_ablate, "train and rank a matrix of variants"),
    "export-plots": (cmd_export_plots, "write plot-ready data files from an output directory"),
}


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hybridctl", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (fn, help_) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--out", default="out", help="output directory (default: out)")
        if name != "export-plots":
            sp.add_argument("--config", required=True, help="experiment config file")
            sp.add_argument("--seed", type=int, default=None, help="override the master seed")
        if name in ("train", "run", "ablate"):
            sp.add_argument("--episodes", type=int, default=None, help="override the training budget")
        if name == "eval":
            sp.add_argument("--bundle", default=None, help="bundle directory (default: OUT/bundle)")
        if name == "ablate":
            sp.add_argument("--matrix", default=None, help="file listing one variant name per line")
        sp.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    try:
        args = parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
