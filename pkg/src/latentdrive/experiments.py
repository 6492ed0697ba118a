"""Experiment harness: policy runs, matrices, transfer, adaptation.

Every run writes its artifacts under one output directory: per-seed
training and evaluation CSVs, policy checkpoints, a report.json whose
aggregates are recomputed from the per-seed rows before writing, and
SVG plots rendered purely from the CSVs.  All randomness flows through
named substreams of the run seed, so re-running a spec reproduces every
CSV byte for byte.
"""

import glob
import json
import os
from dataclasses import asdict, dataclass
from types import SimpleNamespace

import numpy as np

from . import svgplot
from .bottleneck import Bottleneck
from .config import apply_overrides, dump_kv, load_kv
from .data import SCENARIOS, derive_seed
from .dqn import DQNAgent, DQNConfig
from .env import N_ACTIONS, World, WorldParams
from .errors import (ConfigMismatchError, InvalidParamsError,
                     MissingArtifactError)
from .geometry import GeometryParams, ScenarioKind, build_scenario
from .util import canonical_json, fingerprint, fmt_float, substream
from .velocity_map import FrameStack, VelocityMapParams, corrupt, render

OUTCOMES = ("crash", "offroad", "goal", "missed", "timeout")
TRANSFER_SOURCES = ("highway_merge", "highway_exit", "intersection")


@dataclass
class ExperimentSpec:
    """One policy experiment: scenario sets, mode, schedule, seeds."""

    name: str = "run"
    train_scenarios: tuple = SCENARIOS
    test_scenarios: tuple = SCENARIOS
    mode: str = "baseline"  # baseline | bottleneck
    ae_path: str = ""  # encoder checkpoint, required in bottleneck mode
    latent: int = 64  # head input width when no encoder is given
    episodes: int = 500
    eval_episodes: int = 200
    seeds: tuple = (0, 1, 2, 3, 4)
    out: str = "runs/run"
    workers: int = 1
    # observation scale
    vm_height: int = 32
    vm_width: int = 32
    vm_resolution: float = 3.75
    vm_frames: int = 4
    sigma: float = 0.05
    p_mask: float = 0.1
    # q-learning schedule
    gamma: float = 0.95
    lr: float = 1e-3
    batch: int = 32
    replay: int = 20000
    replay_raw: int = 3000  # image transitions are 16 KB each; keep RAM flat
    target_sync: int = 200
    eps_start: float = 1.0
    eps_end: float = 0.05
    anneal_frac: float = 0.5
    warmup: int = 300
    update_every: int = 2
    hidden: tuple = (64, 64)
    # transfer protocol
    finetune_episodes: int = 300
    probe_every: int = 25
    probe_episodes: int = 30
    ft_eps_start: float = 0.3

    def validate(self):
        if not self.seeds:
            raise InvalidParamsError("spec needs at least one seed")
        if not self.train_scenarios or not self.test_scenarios:
            raise InvalidParamsError("scenario sets must be nonempty")
        for s in tuple(self.train_scenarios) + tuple(self.test_scenarios):
            ScenarioKind.parse(str(s))
        if self.mode not in ("baseline", "bottleneck"):
            raise InvalidParamsError(f"unknown mode {self.mode!r}")
        if self.mode == "bottleneck" and not self.ae_path:
            raise MissingArtifactError("bottleneck mode needs ae_path")
        return self

    def fingerprint(self) -> str:
        d = asdict(self)
        for k in ("out", "workers", "name"):  # results do not depend on these
            d.pop(k)
        d = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
        return fingerprint(d)

    def vm_params(self) -> VelocityMapParams:
        return VelocityMapParams(height=self.vm_height, width=self.vm_width,
                                 resolution=self.vm_resolution,
                                 frames=self.vm_frames)

    def dqn_config(self) -> DQNConfig:
        return DQNConfig(gamma=self.gamma, lr=self.lr, batch=self.batch,
                         replay_capacity=(self.replay_raw
                                          if self.mode == "baseline"
                                          else self.replay),
                         target_sync=self.target_sync,
                         eps_start=self.eps_start, eps_end=self.eps_end,
                         anneal_frac=self.anneal_frac, warmup=self.warmup,
                         update_every=self.update_every,
                         hidden=tuple(self.hidden))


def spec_from_config(path=None, **overrides) -> ExperimentSpec:
    spec = ExperimentSpec()
    if path:
        apply_overrides(spec, load_kv(path), "run")
    for key, val in overrides.items():
        if val is not None:
            setattr(spec, key, val)
    return spec.validate()


# -- CSV plumbing ------------------------------------------------------


def write_csv(path, header, rows, fp=""):
    """Byte-stable CSV: optional fingerprint comment, then header, rows."""
    lines = []
    if fp:
        lines.append(f"# config={fp}")
    lines.append(",".join(header))
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, float):
                cells.append(fmt_float(v))
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path):
    """Returns (header, rows-of-strings); skips fingerprint comments."""
    if not os.path.exists(path):
        raise MissingArtifactError(f"no such file: {path}")
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    header = lines[0].split(",")
    return header, [ln.split(",") for ln in lines[1:] if ln]


def _stamp_svg(path, fp):
    with open(path, encoding="utf-8") as fh:
        body = fh.read()
    head, _, tail = body.partition("\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{head}\n<!-- config={fp} -->\n{tail}")


# -- observation pipeline ----------------------------------------------


class ObsPipe:
    """Render, corrupt, stack, and (bottleneck mode) encode observations."""

    def __init__(self, vm: VelocityMapParams, sigma, p_mask, encoder=None):
        self.vm = vm
        self.sigma = sigma
        self.p_mask = p_mask
        self.encoder = encoder
        self.stack = None
        if encoder is not None:
            want = (4, vm.frames, vm.height, vm.width)
            if encoder.input_shape() != want:
                raise ConfigMismatchError(
                    f"encoder expects {encoder.input_shape()} but the run "
                    f"renders {want}; align run.vm_* with the AE dataset")

    @property
    def obs_shape(self):
        if self.encoder is not None:
            return (self.encoder.latent_size,)
        return (4, self.vm.frames, self.vm.height, self.vm.width)

    def begin_episode(self):
        self.stack = FrameStack(self.vm)

    def observe(self, world: World, rng) -> np.ndarray:
        frame = render(world.layout, world.vehicle_rows(), params=self.vm)
        if self.sigma > 0.0 or self.p_mask > 0.0:
            frame = corrupt(frame, rng, self.sigma, self.p_mask)
        self.stack.push(frame)
        stacked = self.stack.stacked()
        if self.encoder is None:
            return stacked
        return np.asarray(self.encoder.encode(stacked[None])[0],
                          dtype=np.float32)


def build_agent(spec: ExperimentSpec, seed, encoder=None) -> DQNAgent:
    """Same VFAN head for both modes; baseline adds the conv front-end."""
    cfg = spec.dqn_config()
    if encoder is not None:
        return DQNAgent((encoder.latent_size,), N_ACTIONS, cfg,
                        seed=derive_seed(seed, "agent"))
    obs_shape = (4, spec.vm_frames, spec.vm_height, spec.vm_width)
    conv_cfg = SimpleNamespace(conv_channels=(8, 16), latent=3 * spec.latent)
    return DQNAgent(obs_shape, N_ACTIONS, cfg, seed=derive_seed(seed, "agent"),
                    conv_cfg=conv_cfg)


def load_encoder(spec: ExperimentSpec):
    if spec.mode != "bottleneck":
        return None
    if not os.path.exists(spec.ae_path):
        raise MissingArtifactError(f"encoder checkpoint not found: {spec.ae_path}")
    return Bottleneck.load(spec.ae_path)


def _encoder_digest(encoder):
    if encoder is None:
        return None
    return fingerprint(b"".join(
        np.ascontiguousarray(p.value).tobytes() for p in encoder.params()))


def outcome_of(events) -> str:
    for name in OUTCOMES:
        if events.get(name):
            return name
    return "timeout"


# -- episode loops -----------------------------------------------------


def run_episode(world: World, pipe: ObsPipe, agent: DQNAgent, noise_rng,
                train: bool):
    """One episode; returns (return, length, outcome, mean training loss)."""
    world.reset()
    pipe.begin_episode()
    obs = pipe.observe(world, noise_rng)
    total, steps, losses = 0.0, 0, []
    while True:
        action = agent.act(obs, greedy=not train)
        reward, done, events = world.step(action)
        nxt = pipe.observe(world, noise_rng)
        if train:
            agent.observe(obs, action, reward, nxt, done)
            if agent.ready():
                losses.append(agent.update())
        obs = nxt
        total += reward
        steps += 1
        if done:
            break
    loss = float(np.mean(losses)) if losses else 0.0
    return total, steps, outcome_of(events), loss


def _make_worlds(scenarios, geo=None):
    worlds = {}
    for kind in scenarios:
        sk = ScenarioKind.parse(str(kind))
        layout = build_scenario(sk, geo or GeometryParams())
        worlds[str(kind)] = World(layout, WorldParams.for_scenario(sk))
    return worlds


def train_policy_seed(spec: ExperimentSpec, seed, worlds=None, agent=None,
                      encoder=None, episodes=None, seed_tag="train",
                      log=None):
    """Mixed-scenario training loop; returns (agent, rows, encoder)."""
    worlds = worlds or _make_worlds(spec.train_scenarios)
    if encoder is None:
        encoder = load_encoder(spec)
    before = _encoder_digest(encoder)
    pipe = ObsPipe(spec.vm_params(), spec.sigma, spec.p_mask, encoder)
    if agent is None:
        agent = build_agent(spec, seed, encoder)
    cfg = agent.cfg
    episodes = spec.episodes if episodes is None else episodes
    names = sorted(worlds)
    scen_rng = substream(seed, seed_tag, "scenario")
    rows = []
    for ep in range(episodes):
        kind = names[int(scen_rng.integers(len(names)))]
        world = worlds[kind]
        world.seed = derive_seed(seed, seed_tag, "world", ep)
        agent.epsilon = cfg.epsilon(ep, episodes)
        noise = substream(seed, seed_tag, "noise", ep)
        ret, steps, outcome, loss = run_episode(world, pipe, agent, noise,
                                                train=True)
        rows.append((ep, kind, ret, int(outcome == "crash"), steps, loss,
                     agent.epsilon, outcome))
        if log and (ep + 1) % 50 == 0:
            recent = [r for r in rows[-50:]]
            bad = sum(1 for r in recent if r[7] != "goal") / len(recent)
            log(f"  ep {ep + 1}/{episodes} non-goal(50)={bad:.2f} "
                f"loss={loss:.4f} eps={agent.epsilon:.2f}")
    if _encoder_digest(encoder) != before:
        raise ConfigMismatchError("encoder weights changed during Q-learning")
    return agent, rows, encoder


def evaluate_policy(spec: ExperimentSpec, seed, agent, encoder=None,
                    worlds=None, episodes=None, scenarios=None,
                    seed_tag="eval"):
    """Greedy rollouts over the test set; returns (rows, summary)."""
    scenarios = [str(s) for s in (scenarios or spec.test_scenarios)]
    worlds = worlds or _make_worlds(scenarios)
    pipe = ObsPipe(spec.vm_params(), spec.sigma, spec.p_mask, encoder)
    episodes = spec.eval_episodes if episodes is None else episodes
    rows = []
    for ep in range(episodes):
        kind = scenarios[ep % len(scenarios)]
        world = worlds[kind]
        world.seed = derive_seed(seed, seed_tag, "world", ep)
        noise = substream(seed, seed_tag, "noise", ep)
        ret, steps, outcome, _ = run_episode(world, pipe, agent, noise,
                                             train=False)
        rows.append((ep, kind, ret, steps, outcome))
    return rows, summarize_eval(rows)


def summarize_eval(rows):
    """Outcome rates (overall and per scenario) from eval rows."""
    def rates(sub):
        n = len(sub)
        counts = {o: sum(1 for r in sub if r[4] == o) for o in OUTCOMES}
        crash = counts["crash"] / n
        complete = counts["goal"] / n
        fail = 1.0 - crash - complete
        return {"episodes": n, "crash_rate": crash, "complete_rate": complete,
                "fail_rate": fail, "combined_rate": crash + fail,
                "mean_return": float(np.mean([r[2] for r in sub])),
                "mean_length": float(np.mean([r[3] for r in sub])),
                "outcomes": counts}
    out = rates(rows)
    out["per_scenario"] = {k: rates([r for r in rows if r[1] == k])
                           for k in sorted({r[1] for r in rows})}
    return out


# -- full runs ---------------------------------------------------------

TRAIN_HEADER = ("episode", "scenario", "return", "crash", "length", "loss",
                "epsilon", "outcome")
EVAL_HEADER = ("episode", "scenario", "return", "length", "outcome")


def _seed_job(spec_dict, seed):
    spec = ExperimentSpec(**spec_dict)
    fp = spec.fingerprint()
    worlds = _make_worlds(spec.train_scenarios)
    agent, rows, encoder = train_policy_seed(spec, seed, worlds)
    train_csv = os.path.join(spec.out, f"train_seed{seed}.csv")
    write_csv(train_csv, TRAIN_HEADER, rows, fp)
    ck = os.path.join(spec.out, f"policy_seed{seed}.ldck")
    agent.save(ck, {"spec_fingerprint": fp, "seed": seed, "mode": spec.mode,
                    "ae_path": spec.ae_path, "latent": spec.latent,
                    "hidden": list(spec.hidden)})
    eval_worlds = {k: w for k, w in worlds.items() if k in spec.test_scenarios}
    for k in spec.test_scenarios:
        eval_worlds.setdefault(str(k), _make_worlds([k])[str(k)])
    erows, summary = evaluate_policy(spec, seed, agent, encoder, eval_worlds)
    eval_csv = os.path.join(spec.out, f"eval_seed{seed}.csv")
    write_csv(eval_csv, EVAL_HEADER, erows, fp)
    summary["seed"] = seed
    summary["train_csv"] = train_csv
    summary["eval_csv"] = eval_csv
    summary["checkpoint"] = ck
    return summary


def run_experiment(spec: ExperimentSpec, log=None):
    """Train/evaluate over all seeds and write the run report."""
    spec.validate()
    os.makedirs(spec.out, exist_ok=True)
    load_encoder(spec)  # fail fast before hours of training
    _dump_spec(spec)
    spec_dict = asdict(spec)
    results = []
    if spec.workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            futs = [pool.submit(_seed_job, spec_dict, s) for s in spec.seeds]
            results = [f.result() for f in futs]
    else:
        for s in spec.seeds:
            if log:
                log(f"seed {s} [{spec.mode}]")
            results.append(_seed_job(spec_dict, s))
    report = build_report(spec, results)
    check_report(report)
    with open(os.path.join(spec.out, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(canonical_json(report))
    plot_run(spec.out)
    return report


def _dump_spec(spec):
    d = asdict(spec)
    kv = {}
    for k, v in d.items():
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        kv[f"run.{k}"] = v
    dump_kv(kv, os.path.join(spec.out, "spec.cfg"))


def build_report(spec, per_seed):
    keys = ("crash_rate", "complete_rate", "fail_rate", "combined_rate",
            "mean_return")
    agg = {}
    for key in keys:
        vals = [r[key] for r in per_seed]
        agg[key] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
    scen = {}
    for kind in sorted({k for r in per_seed for k in r["per_scenario"]}):
        vals = [r["per_scenario"][kind]["combined_rate"] for r in per_seed
                if kind in r["per_scenario"]]
        cr = [r["per_scenario"][kind]["crash_rate"] for r in per_seed
              if kind in r["per_scenario"]]
        scen[kind] = {"combined_rate_mean": float(np.mean(vals)),
                      "crash_rate_mean": float(np.mean(cr))}
    return {"name": spec.name, "mode": spec.mode,
            "fingerprint": spec.fingerprint(),
            "train_scenarios": list(spec.train_scenarios),
            "test_scenarios": list(spec.test_scenarios),
            "episodes": spec.episodes, "eval_episodes": spec.eval_episodes,
            "seeds": list(spec.seeds), "per_seed": per_seed,
            "aggregate": agg, "per_scenario": scen}


def check_report(report):
    """Aggregates must be recomputable from the per-seed rows."""
    per_seed = report["per_seed"]
    for key, stats in report["aggregate"].items():
        vals = [r[key] for r in per_seed]
        if not (np.isclose(stats["mean"], np.mean(vals))
                and np.isclose(stats["std"], np.std(vals))):
            raise ConfigMismatchError(f"aggregate {key} does not match rows")
    return True


def load_report(run_dir):
    path = os.path.join(run_dir, "report.json")
    if not os.path.exists(path):
        raise MissingArtifactError(f"no report.json under {run_dir}")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# -- confusion matrix --------------------------------------------------


def confusion_matrix(spec: ExperimentSpec, modes=("baseline", "bottleneck"),
                     log=None):
    """Crash-rate grid: train scenario x test scenario, per mode."""
    spec.validate()
    os.makedirs(spec.out, exist_ok=True)
    fp = spec.fingerprint()
    out = {}
    for mode in modes:
        mspec = ExperimentSpec(**{**asdict(spec), "mode": mode})
        if mode == "bottleneck" and not mspec.ae_path:
            raise MissingArtifactError("bottleneck mode needs ae_path")
        encoder = load_encoder(mspec)
        trains = [str(s) for s in spec.train_scenarios]
        tests = [str(s) for s in spec.test_scenarios]
        crash = np.zeros((len(trains), len(tests)))
        combined = np.zeros_like(crash)
        for i, src in enumerate(trains):
            cell = {}
            for seed in spec.seeds:
                one = ExperimentSpec(**{**asdict(mspec),
                                        "train_scenarios": (src,),
                                        "test_scenarios": tuple(tests)})
                agent, _, enc = train_policy_seed(one, seed, encoder=encoder)
                _, summary = evaluate_policy(one, seed, agent, enc)
                for j, dst in enumerate(tests):
                    sub = summary["per_scenario"][dst]
                    cell.setdefault(dst, []).append(
                        (sub["crash_rate"], sub["combined_rate"]))
            for j, dst in enumerate(tests):
                crash[i, j] = np.mean([c[0] for c in cell[dst]])
                combined[i, j] = np.mean([c[1] for c in cell[dst]])
            if log:
                log(f"{mode}: trained on {src}: "
                    + " ".join(f"{t}={crash[i, j]:.2f}"
                               for j, t in enumerate(tests)))
        rows = []
        for i, src in enumerate(trains):
            for j, dst in enumerate(tests):
                rows.append((mode, src, dst, float(crash[i, j]),
                             float(combined[i, j])))
        write_csv(os.path.join(spec.out, f"confusion_{mode}.csv"),
                  ("mode", "train_scenario", "test_scenario", "crash_rate",
                   "combined_rate"), rows, fp)
        out[mode] = crash
    plot_run(spec.out)
    return out


# -- transfer learning -------------------------------------------------


def transfer_run(spec: ExperimentSpec, log=None):
    """Pre-train on source scenarios, fine-tune on the target.

    The crash-rate curve is measured by greedy probes every probe_every
    fine-tuning episodes (episode 0 probes the zero-shot policy), and
    episodes-to-threshold compares each mode against the baseline's
    final probe.
    """
    spec.validate()
    os.makedirs(spec.out, exist_ok=True)
    fp = spec.fingerprint()
    target = str(spec.test_scenarios[0])
    sources = tuple(str(s) for s in spec.train_scenarios)
    rows = []
    curves = {}
    for mode in ("baseline", "bottleneck"):
        mspec = ExperimentSpec(**{**asdict(spec), "mode": mode})
        encoder = load_encoder(mspec)
        for seed in spec.seeds:
            if log:
                log(f"transfer {mode} seed {seed}: pre-train on {sources}")
            src_worlds = _make_worlds(sources)
            agent, _, enc = train_policy_seed(mspec, seed, src_worlds,
                                              encoder=encoder)
            tgt_world = _make_worlds([target])
            pipe = ObsPipe(mspec.vm_params(), mspec.sigma, mspec.p_mask, enc)
            curve = []
            span = max(int(spec.finetune_episodes * 0.5), 1)
            probes = list(range(0, spec.finetune_episodes + 1,
                                spec.probe_every))
            if probes[-1] != spec.finetune_episodes:
                probes.append(spec.finetune_episodes)
            done_eps = 0
            for probe_at in probes:
                for ep in range(done_eps, probe_at):
                    world = tgt_world[target]
                    world.seed = derive_seed(seed, "ft", "world", ep)
                    frac = min(ep / span, 1.0)
                    agent.epsilon = (spec.ft_eps_start
                                     + (spec.eps_end - spec.ft_eps_start) * frac)
                    noise = substream(seed, "ft", "noise", ep)
                    run_episode(world, pipe, agent, noise, train=True)
                done_eps = probe_at
                _, summary = evaluate_policy(
                    mspec, seed, agent, enc, tgt_world,
                    episodes=spec.probe_episodes, scenarios=[target],
                    seed_tag=f"probe{probe_at}")
                curve.append((probe_at, summary["crash_rate"],
                              summary["combined_rate"]))
                rows.append((mode, seed, probe_at, summary["crash_rate"],
                             summary["combined_rate"]))
                if log:
                    log(f"  probe @{probe_at}: crash={summary['crash_rate']:.2f}"
                        f" combined={summary['combined_rate']:.2f}")
            curves[(mode, seed)] = curve
    write_csv(os.path.join(spec.out, "transfer.csv"),
              ("mode", "seed", "episode", "crash_rate", "combined_rate"),
              rows, fp)
    summary = transfer_summary(spec.seeds, curves)
    with open(os.path.join(spec.out, "transfer_summary.json"), "w",
              encoding="utf-8") as fh:
        fh.write(canonical_json({"fingerprint": fp, "target": target,
                                 "sources": list(sources), **summary}))
    plot_run(spec.out)
    return summary


def transfer_summary(seeds, curves):
    """Episodes-to-threshold per seed; bottleneck wins on a strict <."""
    per_seed = []
    for seed in seeds:
        base = curves[("baseline", seed)]
        bneck = curves[("bottleneck", seed)]
        threshold = base[-1][1]  # baseline's final crash rate

        def first_reach(curve):
            for ep, crash, _ in curve:
                if crash <= threshold + 1e-12:
                    return ep
            return None

        eb = first_reach(base)
        en = first_reach(bneck)
        win = en is not None and (eb is None or en < eb)
        per_seed.append({"seed": seed, "threshold": threshold,
                         "baseline_episodes": eb, "bottleneck_episodes": en,
                         "bottleneck_faster": bool(win)})
    wins = sum(1 for r in per_seed if r["bottleneck_faster"])
    return {"per_seed": per_seed, "bottleneck_wins": wins,
            "n_seeds": len(seeds), "majority": wins > len(seeds) / 2}


# -- domain adaptation -------------------------------------------------


def domain_adaptation(out_dir, scenarios, oracle_dirs, mixed_dir, cross_dir):
    """Oracle vs mixed-bottleneck vs cross-scenario baseline, per scenario."""
    os.makedirs(out_dir, exist_ok=True)
    mixed = load_report(mixed_dir)
    cross = load_report(cross_dir)
    rows = []
    gaps = {}
    for kind in scenarios:
        kind = str(kind)
        if kind not in oracle_dirs:
            raise MissingArtifactError(f"no oracle run for scenario {kind}")
        oracle = load_report(oracle_dirs[kind])
        vals = {}
        for label, rep in (("oracle", oracle), ("mixed_bottleneck", mixed),
                           ("cross_baseline", cross)):
            if kind not in rep["per_scenario"]:
                raise MissingArtifactError(
                    f"run {rep['name']} has no evaluation on {kind}")
            vals[label] = rep["per_scenario"][kind]["combined_rate_mean"]
        rows.append((kind, vals["oracle"], vals["mixed_bottleneck"],
                     vals["cross_baseline"]))
        gaps[kind] = {"mixed_gap": vals["mixed_bottleneck"] - vals["oracle"],
                      "cross_gap": vals["cross_baseline"] - vals["oracle"]}
    fp = fingerprint({"scenarios": [str(s) for s in scenarios],
                      "mixed": mixed["fingerprint"],
                      "cross": cross["fingerprint"]})
    write_csv(os.path.join(out_dir, "adaptation.csv"),
              ("scenario", "oracle", "mixed_bottleneck", "cross_baseline"),
              rows, fp)
    with open(os.path.join(out_dir, "adaptation_gaps.json"), "w",
              encoding="utf-8") as fh:
        fh.write(canonical_json({"fingerprint": fp, "gaps": gaps}))
    plot_run(out_dir)
    return gaps


# -- autoencoder runs --------------------------------------------------


def train_ae_run(data_dir, out_dir, latent=64, lam=0.0, epochs=30, seed=0,
                 batch=16, pair=True, resume=False, log=None):
    """Train (or resume) the bottleneck AE on a dataset directory.

    Writes ae.ldck, ae_curve.csv (appended on resume), a loss SVG, a
    reconstruction panel, and summary.json.
    """
    from .bottleneck import AEConfig, heldout_mse, train_autoencoder
    from .data import load_dataset

    frames, labels, val_mask, meta = load_dataset(data_dir)
    if not val_mask.any():
        val_mask = None
    os.makedirs(out_dir, exist_ok=True)
    ck = os.path.join(out_dir, "ae.ldck")
    curve_csv = os.path.join(out_dir, "ae_curve.csv")
    c, t, h, w = frames.shape[1:]
    start_epoch, old_rows = 0, []
    if resume:
        if not os.path.exists(ck):
            raise MissingArtifactError(f"cannot resume: {ck} missing")
        model = Bottleneck.load(ck)
        if model.cfg.epochs >= epochs:
            raise ConfigMismatchError(
                f"checkpoint already trained {model.cfg.epochs} epochs")
        start_epoch = model.cfg.epochs
        model.cfg = AEConfig(**{**asdict(model.cfg), "epochs": epochs})
        if os.path.exists(curve_csv):
            _, old = read_csv(curve_csv)
            old_rows = [(int(r[0]), float(r[1]), float(r[2]), float(r[3]))
                        for r in old]
    else:
        cfg = AEConfig(latent=latent, channels=c, frames=t, height=h, width=w,
                       pair_mode=pair, lam=lam, epochs=epochs, batch=batch,
                       seed=seed)
        model = Bottleneck(cfg)
    fp = fingerprint({"data": meta["fingerprint"], "config": asdict(model.cfg)})
    history = train_autoencoder(
        model, frames, labels=labels, start_epoch=start_epoch,
        val_mask=val_mask,
        log_cb=(lambda r: log(f"  epoch {r['epoch']}: train={r['train_loss']:.4f}"
                              f" val={r['val_loss']:.4f}")) if log else None)
    model.save(ck)
    rows = old_rows + [(r["epoch"], r["train_loss"], r["penalty"],
                        r["val_loss"]) for r in history]
    write_csv(curve_csv, ("epoch", "train_loss", "penalty", "val_loss"),
              rows, fp)
    if val_mask is not None:
        val = frames[val_mask]
    else:  # replicate the seeded split train_autoencoder fell back to
        order = substream(model.cfg.seed, "ae-split").permutation(len(frames))
        val = frames[order[: max(2, int(len(frames) * 0.15))]]
    mse = heldout_mse(model, val[: min(len(val), 256)])
    _recon_panel(model, frames, os.path.join(out_dir, "reconstructions.svg"),
                 seed)
    summary = {"fingerprint": fp, "checkpoint": ck, "latent": model.cfg.latent,
               "latent_size": model.latent_size, "lam": model.cfg.lam,
               "epochs": model.cfg.epochs, "n_samples": int(len(frames)),
               "epoch1_val": rows[0][3], "final_val": rows[-1][3],
               "heldout_mse": mse}
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        fh.write(canonical_json(summary))
    plot_run(out_dir)
    return model, summary


def _recon_panel(model, frames, path, seed, n=6):
    """Clean / corrupted / reconstructed strips for a few samples."""
    rng = substream(seed, "panel")
    idx = rng.choice(len(frames), size=min(n, len(frames)), replace=False)
    clean = frames[np.sort(idx)]
    noisy = corrupt(clean, substream(seed, "panel-noise"), model.cfg.sigma,
                    model.cfg.p_mask)
    recon = np.asarray(model.reconstruct(noisy))
    tiles, captions = [], []
    for i in range(len(clean)):
        for name, arr in (("clean", clean), ("corrupted", noisy),
                          ("reconstruction", recon)):
            tiles.append(np.concatenate(list(arr[i][:, -1]), axis=1))
            captions.append(name if i == 0 else "")
    svgplot.image_grid(path, tiles, cols=3, captions=captions)


# -- plotting (pure functions of the CSVs) -----------------------------


def _rolling_bad(rows, window=50):
    bad = [0.0 if r[7] == "goal" else 1.0 for r in rows]
    out = []
    for i in range(len(bad)):
        lo = max(0, i - window + 1)
        out.append((i, float(np.mean(bad[lo:i + 1]))))
    return out


def plot_run(run_dir):
    """Regenerate every SVG that the CSVs in run_dir support."""
    made = []
    train_csvs = sorted(glob.glob(os.path.join(run_dir, "train_seed*.csv")))
    if train_csvs:
        series, loss_series = {}, {}
        fp = ""
        for path in train_csvs:
            seed = os.path.basename(path)[len("train_seed"):-len(".csv")]
            with open(path, encoding="utf-8") as fh:
                first = fh.readline()
            if first.startswith("# config="):
                fp = first.strip()[len("# config="):]
            _, rows = read_csv(path)
            typed = [(int(r[0]), r[1], float(r[2]), int(r[3]), int(r[4]),
                      float(r[5]), float(r[6]), r[7]) for r in rows]
            series[f"seed {seed}"] = _rolling_bad(typed)
            loss_series[f"seed {seed}"] = [(int(r[0]), float(r[5]))
                                           for r in rows if float(r[5]) > 0]
        path = os.path.join(run_dir, "learning_curve.svg")
        svgplot.line_chart(path, series, title="rolling crash+failure rate",
                           xlabel="episode", ylabel="rate (window 50)")
        _stamp_svg(path, fp)
        made.append(path)
        if any(loss_series.values()):
            path = os.path.join(run_dir, "loss_curve.svg")
            svgplot.line_chart(path, loss_series, title="TD loss",
                               xlabel="episode", ylabel="loss", logy=True)
            _stamp_svg(path, fp)
            made.append(path)
    for path in sorted(glob.glob(os.path.join(run_dir, "confusion_*.csv"))):
        mode = os.path.basename(path)[len("confusion_"):-len(".csv")]
        _, rows = read_csv(path)
        trains = list(dict.fromkeys(r[1] for r in rows))
        tests = list(dict.fromkeys(r[2] for r in rows))
        m = np.zeros((len(trains), len(tests)))
        for r in rows:
            m[trains.index(r[1]), tests.index(r[2])] = float(r[3])
        svg = os.path.join(run_dir, f"confusion_{mode}.svg")
        svgplot.heatmap(svg, m, trains, tests,
                        title=f"crash rate, {mode} (train x test)")
        made.append(svg)
    tpath = os.path.join(run_dir, "transfer.csv")
    if os.path.exists(tpath):
        _, rows = read_csv(tpath)
        series = {}
        for r in rows:
            series.setdefault(f"{r[0]} s{r[1]}", []).append(
                (int(r[2]), float(r[3])))
        svg = os.path.join(run_dir, "transfer.svg")
        svgplot.line_chart(svg, series, title="fine-tuning crash rate",
                           xlabel="fine-tune episode", ylabel="crash rate")
        made.append(svg)
    apath = os.path.join(run_dir, "adaptation.csv")
    if os.path.exists(apath):
        _, rows = read_csv(apath)
        labels = [r[0] for r in rows]
        groups = {"oracle": [float(r[1]) for r in rows],
                  "mixed bottleneck": [float(r[2]) for r in rows],
                  "cross baseline": [float(r[3]) for r in rows]}
        svg = os.path.join(run_dir, "adaptation.svg")
        svgplot.bar_chart(svg, labels, groups,
                          title="crash+failure rate by training regime",
                          ylabel="rate")
        made.append(svg)
    for path in sorted(glob.glob(os.path.join(run_dir, "ae_curve*.csv"))):
        _, rows = read_csv(path)
        series = {"train": [(int(r[0]), float(r[1])) for r in rows],
                  "validation": [(int(r[0]), float(r[3])) for r in rows]}
        svg = path[:-len(".csv")] + ".svg"
        svgplot.line_chart(svg, series, title="reconstruction loss",
                           xlabel="epoch", ylabel="L2 loss")
        made.append(svg)
    return made
