"""Experiment orchestration: training variants, evaluation, the three experiment families."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from . import imitation as I
from . import iohmm
from . import plant as P
from . import specialization as S
from . import td3
from .config import ExperimentConfig, Variant, variant
from .net import Network
from .rollout import EpisodeLog, csv_header, derive_seed, run_episode

log = logging.getLogger(__name__)

# seed streams under the master seed
EXPERT, TRAIN, EVAL, NETS, LEARN, HMM, VALUE, TRACE = range(8)


@dataclass
class Specialization:
    params: iohmm.IohmmParams
    classification: S.StateClassification
    expert: I.ExpertData
    expert_specialized: td3.ReplayBuffer
    em: iohmm.EmResult | None = None

    def gate(self, m_y: int) -> S.HiddenStateGate:
        return S.HiddenStateGate(self.params, self.classification.specialized, m_y)


@dataclass
class PolicyBundle:
    variant: Variant
    nets: td3.Td3Nets | None
    spec: Specialization | None = None
    trace: list = field(default_factory=list)   # (episode, training return, evaluation return)

    def gate(self, m_y: int):
        if self.variant.specialized and self.spec is not None:
            return self.spec.gate(m_y)
        return None


@dataclass
class EvalResult:
    mean: float
    sd: float
    returns: np.ndarray
    activation: float
    shutdowns: int
    logs: list


@dataclass
class MetricsReport:
    experiment: str
    rows: list            # dicts: variant, magnitude, mean, sd, activation, shutdowns
    traces: dict          # variant -> [(episode, train_return, eval_return)]
    evals: dict           # (variant, magnitude) -> EvalResult
    extras: dict = field(default_factory=dict)

    def row(self, name: str, magnitude: float | None = None) -> dict:
        for r in self.rows:
            if r["variant"] == name and (magnitude is None or abs(r["magnitude"] - magnitude) < 1e-12):
                return r
        raise KeyError((name, magnitude))

    def ranking(self, magnitude: float | None = None) -> list[dict]:
        rows = [r for r in self.rows if magnitude is None or abs(r["magnitude"] - magnitude) < 1e-12]
        return sorted(rows, key=lambda r: (-r["mean"], r["variant"]))


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".10g")
    return str(x)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def with_magnitude(d: P.DisturbanceProfile, magnitude: float) -> P.DisturbanceProfile:
    return replace(d, magnitude=float(magnitude))


def make_nets(cfg: ExperimentConfig, v: Variant, seed: int) -> td3.Td3Nets:
    center, scale = P.observation_scale(cfg.plant)
    tc = replace(cfg.td3, residual=v.residual, u_bounds=cfg.plant.u_bounds,
                 # the critic of the specialized residual CoL loss scores a^E + a^A
                 superposed=v.residual and v.specialized and v.training == "col",
                 obs_center=tuple(center), obs_scale=tuple(scale))
    return td3.Td3Nets(cfg.plant.obs_size, cfg.plant.history + 1, tc, seed=seed)


def collect(cfg: ExperimentConfig) -> I.ExpertData:
    return I.collect_expert(cfg.plant, cfg.disturbance, cfg.pid, cfg.expert_episodes,
                            derive_seed(cfg.seed, EXPERT), gamma=cfg.td3.gamma)


def label_hidden(expert: I.ExpertData, params: iohmm.IohmmParams, smoothed: bool = True) -> np.ndarray:
    """Decoded hidden state of every expert transition, in buffer order (-1 at t = 0)."""
    out = []
    for ep in expert.episodes:
        U, Y = ep.iohmm_sequence()
        out.append(np.concatenate([[-1], iohmm.decode_all(params, U, Y, smoothed=smoothed)]))
    labels = np.concatenate(out) if out else np.zeros(0, dtype=int)
    if len(labels) != len(expert.buffer):
        raise ValueError("expert buffer does not line up with the logged episodes")
    return labels


def specialize(cfg: ExperimentConfig, expert: I.ExpertData, z: float = 1.96,
               reference="pooled") -> Specialization:
    """IOHMM fit, value warmup and abnormal-state selection on the expert data."""
    st = cfg.iohmm
    em = iohmm.em_fit(expert.sequences(), n_states=st.n_states, tolerance=st.tolerance,
                      max_iters=st.max_iters, seed=derive_seed(cfg.seed, HMM), restarts=st.restarts)
    v = S.value_net(cfg.plant.obs_size, seed=derive_seed(cfg.seed, VALUE, 0))
    S.train_value(expert.buffer, v, cfg.value_steps, gamma=cfg.td3.gamma,
                  seed=derive_seed(cfg.seed, VALUE, 1))
    cl = S.classify_states(v, em.params, expert.episodes, z=z, reference=reference)
    expert.buffer.hidden[:len(expert.buffer)] = label_hidden(expert, em.params)
    spec_buf = expert.buffer.filtered(lambda b: np.isin(b.hidden, list(cl.specialized)), tag="expert")
    return Specialization(em.params, cl, expert, spec_buf, em)


def evaluate(bundle: PolicyBundle, cfg: ExperimentConfig, disturbance: P.DisturbanceProfile,
             runs: int, seed: int, keep_logs: bool = False) -> EvalResult:
    """Noise-free episodes on derived seeds; SD is the sample SD (0 when runs = 1)."""
    if runs < 1:
        raise ValueError("evaluate needs runs >= 1")
    v = bundle.variant
    logs, rets = [], []
    for i in range(runs):
        lg = run_episode(cfg.plant, disturbance, cfg.pid, derive_seed(seed, EVAL, i), v.mode,
                         nets=bundle.nets, gate=bundle.gate(cfg.plant.m_y), training=False,
                         init_fraction=cfg.init_fraction, gamma=cfg.td3.gamma, episode=i)
        rets.append(lg.ret)
        logs.append(lg)
    rets = np.array(rets)
    sd = float(rets.std(ddof=1)) if runs > 1 else 0.0
    gate_on = np.concatenate([lg.gate_on for lg in logs]) if v.mode != "pid_only" else np.zeros(1, bool)
    return EvalResult(float(rets.mean()), sd, rets, float(gate_on.mean()),
                      sum(lg.shutdown for lg in logs), logs if keep_logs else [])


def train_variant(cfg: ExperimentConfig, v: Variant, expert: I.ExpertData,
                  spec: Specialization | None = None, episodes: int | None = None) -> PolicyBundle:
    """Pretrain and train one ablation row with the config's master seed."""
    episodes = cfg.episodes if episodes is None else episodes
    if v.mode == "pid_only":
        return PolicyBundle(v, None)
    if v.specialized and spec is None:
        raise ValueError(f"variant {v.name} needs a specialization result")
    nets = make_nets(cfg, v, derive_seed(cfg.seed, NETS))
    bundle = PolicyBundle(v, nets, spec if v.specialized else None)
    b_e = spec.expert_specialized if v.specialized else expert.buffer
    if v.pretrain != "none":
        I.pretrain(b_e, nets, cfg.pretrain_steps, loss=v.pretrain, seed=derive_seed(cfg.seed, LEARN, 0))
    if v.training == "none":
        return bundle

    tc = nets.cfg
    rng = np.random.default_rng(derive_seed(cfg.seed, LEARN, 1))
    b_a = td3.ReplayBuffer(tc.capacity, cfg.plant.obs_size, tag="agent")
    ratio = cfg.expert_ratio if v.training == "col" and len(b_e) else 0.0
    specialized = spec.classification.specialized if v.specialized else None
    counter = [0]

    def learn(tr: td3.Transition, gate_on: bool) -> None:
        if not gate_on:
            return  # the expert acted alone; nothing for the agent to learn from
        b_a.add(tr)
        if len(b_a) < cfg.learn_start:
            return
        n_e, n_a = I.split_sizes(tc.batch_size, ratio)
        n_e = min(n_e, len(b_e))
        n_a = min(tc.batch_size - n_e, len(b_a))
        parts = [b_a.sample(n_a, rng)]
        if n_e:
            parts.insert(0, b_e.sample(n_e, rng))
        batch = td3.Batch.concat(parts)
        counter[0] += 1
        actor_on = counter[0] > cfg.critic_warmup
        if v.training == "col":
            if specialized is not None:
                I.check_specialized(batch, specialized)
            I.col_update(nets, batch, counter[0], train_actor=actor_on)
        else:
            td3.update_step(nets, batch, counter[0], train_actor=actor_on)

    best = (-np.inf, None)
    for ep in range(episodes):
        frac = ep / max(episodes, 1)
        sd = tc.explore_sd + (tc.explore_sd_final - tc.explore_sd) * frac
        lg = run_episode(cfg.plant, cfg.disturbance, cfg.pid, derive_seed(cfg.seed, TRAIN, ep), v.mode,
                         nets=nets, gate=bundle.gate(cfg.plant.m_y), training=True, noise_sd=sd, rng=rng,
                         on_transition=learn, init_fraction=cfg.init_fraction, gamma=tc.gamma, episode=ep)
        ev = None
        if (ep + 1) % cfg.eval_every == 0:
            ev = evaluate(bundle, cfg, cfg.disturbance, cfg.trace_runs, derive_seed(cfg.seed, TRACE)).mean
            if ev > best[0]:
                best = (ev, nets.actor.theta.copy())
        bundle.trace.append((ep, lg.ret, ev))
    if cfg.keep_best and best[1] is not None:
        nets.actor.theta[:] = best[1]
    return bundle


def ordering(a: np.ndarray, b: np.ndarray) -> dict:
    """Is ``a`` better than ``b``: 1-SD separation and a paired one-sided sign test."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    sa = a.std(ddof=1) if len(a) > 1 else 0.0
    sb = b.std(ddof=1) if len(b) > 1 else 0.0
    separated = bool(a.mean() - sa > b.mean() + sb)
    diff = a - b
    wins, losses = int(np.sum(diff > 0)), int(np.sum(diff < 0))
    p = binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue if wins + losses else 1.0
    return {"better": bool(a.mean() > b.mean()), "separated": separated, "wins": wins,
            "losses": losses, "p_sign": float(p), "holds": bool(a.mean() > b.mean() and (separated or p < 0.05))}


def _report_rows(bundles, cfg, magnitudes, keep_logs=False):
    rows, evals = [], {}
    for name, b in bundles.items():
        for m in magnitudes:
            res = evaluate(b, cfg, with_magnitude(cfg.disturbance, m), cfg.eval_runs, cfg.seed, keep_logs)
            evals[(name, m)] = res
            rows.append({"variant": name, "magnitude": float(m), "mean": res.mean, "sd": res.sd,
                         "activation": res.activation, "shutdowns": res.shutdowns})
    return rows, evals


METRIC_HEADER = ["variant", "magnitude", "mean", "sd", "activation", "shutdowns"]


def write_report(report: MetricsReport, out: Path, m_y: int, trajectories=True) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "metrics.csv", METRIC_HEADER, [[r[k] for k in METRIC_HEADER] for r in report.rows])
    write_csv(out / "ranking.csv", ["rank", *METRIC_HEADER],
              [[i + 1, *[r[k] for k in METRIC_HEADER]] for i, r in enumerate(report.ranking())])
    write_csv(out / "returns.csv", ["variant", "magnitude", "run", "return"],
              [[n, m, i, x] for (n, m), res in report.evals.items() for i, x in enumerate(res.returns)])
    write_csv(out / "traces.csv", ["variant", "episode", "train_return", "eval_return"],
              [[n, e, tr, "" if ev is None else ev] for n, t in report.traces.items() for e, tr, ev in t])
    if trajectories:
        rows = []
        for (n, m), res in report.evals.items():
            for lg in res.logs:
                rows.extend([n, m, *r] for r in lg.rows())
        if rows:
            write_csv(out / "trajectories.csv", ["variant", "magnitude", *csv_header(m_y)], rows)


def run_exp1(cfg: ExperimentConfig, out=None) -> MetricsReport:
    """SISO synchronisation: PID alone, the CoL actor alone and the residual CoL agent."""
    expert = collect(cfg)
    bundles = {"PID": PolicyBundle(variant("PID"), None)}
    for label, name in (("CoL", "CoL"), ("CoL+DRPRL", "CoL+RPTD3")):
        log.info("exp1: training %s for %d episodes", label, cfg.episodes)
        bundles[label] = train_variant(cfg, variant(name), expert)
    rows, evals = _report_rows(bundles, cfg, cfg.eval_magnitudes, keep_logs=out is not None)
    report = MetricsReport(cfg.experiment, rows, {k: b.trace for k, b in bundles.items()}, evals)
    if out is not None:
        write_report(report, out, cfg.plant.m_y)
    return report


def gate_confusion(logs: list[EpisodeLog]) -> dict:
    """Gate-on steps against the true disturbance window."""
    on = np.concatenate([lg.gate_on for lg in logs])
    win = np.concatenate([lg.disturbance for lg in logs])
    tp, fp = int(np.sum(on & win)), int(np.sum(on & ~win))
    fn, tn = int(np.sum(~on & win)), int(np.sum(~on & ~win))
    return {"tp": tp, "fp": fp, "fn": fn, "tn": tn,
            "precision": tp / (tp + fp) if tp + fp else float("nan"),
            "recall": tp / (tp + fn) if tp + fn else float("nan")}


def state_precision(spec: Specialization) -> dict:
    """Per selected state: share of its decoded expert steps inside the disturbance window."""
    out = {}
    labels = spec.expert.buffer.hidden[:len(spec.expert.buffer)]
    win = np.concatenate([lg.disturbance for lg in spec.expert.episodes])
    for k in sorted(spec.classification.specialized):
        sel = labels == k
        out[k] = float(win[sel].mean()) if sel.any() else float("nan")
    return out


def write_specialization(spec: Specialization, out: Path, m_y: int) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    spec.classification.write_csv(out / "state_values.csv")
    (out / "iohmm.json").write_text(spec.params.to_json())
    rows = []
    labels = spec.expert.buffer.hidden[:len(spec.expert.buffer)]
    k = 0
    for lg in spec.expert.episodes:
        for t in range(len(lg.u)):
            rows.append([lg.episode, t, *lg.y[t], lg.a_expert[t], int(lg.disturbance[t]), int(labels[k])])
            k += 1
    write_csv(out / "state_distribution.csv",
              ["episode", "t", *[f"y{i}" for i in range(m_y)], "a_expert", "disturbance", "hidden_state"], rows)


def run_exp2(cfg: ExperimentConfig, out=None) -> MetricsReport:
    """MISO activation: specialization pipeline, gated training, comparison with the ungated agent."""
    expert = collect(cfg)
    spec = specialize(cfg, expert)
    bundles = {"PID": PolicyBundle(variant("PID"), None)}
    main = cfg.variant or variant("CoL+SRPTD3")
    ungated = variant("CoL+RPTD3")
    for v in (main, ungated):
        log.info("exp2: training %s for %d episodes", v.name, cfg.episodes)
        bundles[v.name] = train_variant(cfg, v, expert, spec)
    rows, evals = _report_rows(bundles, cfg, cfg.eval_magnitudes, keep_logs=True)
    main_logs = [lg for (n, _), res in evals.items() if n == main.name for lg in res.logs]
    extras = {"specialization": spec, "gate": gate_confusion(main_logs),
              "state_precision": state_precision(spec)}
    report = MetricsReport(cfg.experiment, rows, {k: b.trace for k, b in bundles.items()}, evals, extras)
    if out is not None:
        write_report(report, out, cfg.plant.m_y)
        write_specialization(spec, out, cfg.plant.m_y)
        g = extras["gate"]
        write_csv(Path(out) / "gate.csv", list(g), [list(g.values())])
    return report


def run_exp3(cfg: ExperimentConfig, variants=None, out=None) -> MetricsReport:
    """Ablation matrix: every variant trained with the same seeds and budget, then ranked."""
    names = variants or cfg.variants
    vs = [variant(n) if isinstance(n, str) else n for n in names]
    if len({v.name for v in vs}) != len(vs):
        raise ValueError("ablation matrix lists a variant twice")
    expert = collect(cfg)
    spec = specialize(cfg, expert) if any(v.specialized for v in vs) else None
    bundles = {}
    for v in vs:
        log.info("exp3: training %s for %d episodes", v.name, cfg.episodes)
        bundles[v.name] = train_variant(cfg, v, expert, spec)
    rows, evals = _report_rows(bundles, cfg, cfg.eval_magnitudes, keep_logs=False)
    report = MetricsReport(cfg.experiment, rows, {k: b.trace for k, b in bundles.items()}, evals,
                           {"specialization": spec})
    if out is not None:
        write_report(report, out, cfg.plant.m_y, trajectories=False)
        if spec is not None:
            write_specialization(spec, out, cfg.plant.m_y)
    return report


RUNNERS = {"exp1_sync": run_exp1, "exp2_activation": run_exp2, "exp3_ablation": run_exp3}


def run(cfg: ExperimentConfig, out=None) -> MetricsReport:
    cfg.validate()
    return RUNNERS[cfg.experiment](cfg, out=out)


NET_FILES = ("actor", "critic1", "critic2", "target_actor", "target_critic1", "target_critic2")


def save_bundle(bundle: PolicyBundle, out) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"variant": bundle.variant.name}
    if bundle.nets is not None:
        for k in NET_FILES:
            getattr(bundle.nets, k).save(out / f"{k}.ckpt")
    if bundle.spec is not None:
        (out / "iohmm.json").write_text(bundle.spec.params.to_json())
        meta["specialized"] = sorted(int(k) for k in bundle.spec.classification.specialized)
    (out / "bundle.json").write_text(json.dumps(meta, indent=1) + "\n")
    write_csv(out / "trace.csv", ["episode", "train_return", "eval_return"],
              [[e, tr, "" if ev is None else ev] for e, tr, ev in bundle.trace])


def load_bundle(cfg: ExperimentConfig, path) -> PolicyBundle:
    path = Path(path)
    meta_path = path / "bundle.json"
    if not meta_path.is_file():
        raise FileNotFoundError(f"no trained bundle at {path} (missing bundle.json)")
    meta = json.loads(meta_path.read_text())
    v = variant(meta["variant"])
    nets = None
    if v.mode != "pid_only":
        nets = make_nets(cfg, v, 0)
        for k in NET_FILES:
            net = Network.load(path / f"{k}.ckpt")
            if net.size != getattr(nets, k).size:
                raise ValueError(f"{path / k}.ckpt does not match the configured plant")
            getattr(nets, k).theta[...] = net.theta
    spec = None
    if v.specialized:
        params = iohmm.IohmmParams.from_json((path / "iohmm.json").read_text())
        cl = S.StateClassification([], frozenset(meta["specialized"]))
        spec = Specialization(params, cl, None, None)
    return PolicyBundle(v, nets, spec)
