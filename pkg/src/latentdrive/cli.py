"""Command-line front end.

Verbs: gen-data, train-ae, train-policy, eval, confusion, transfer,
adapt, plot, verify.  Exit codes: 0 success, 1 usage or bad input,
2 missing artifact, 3 invariant failure.
"""

import argparse
import json
import os
import sys

from .config import apply_overrides, as_list, load_kv
from .errors import LatentDriveError, MissingArtifactError, MissingCacheError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def _build_parser():
    p = _Parser(prog="latentdrive",
                description="driving-scenario RL workbench")
    sub = p.add_subparsers(dest="cmd", metavar="VERB")

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", default=None, help="key=value config file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None, help="output directory")
        return sp

    sp = add("gen-data", "collect an observation dataset")
    sp.add_argument("--episodes", type=int, default=None,
                    help="episodes per scenario")
    sp.add_argument("--scenarios", default=None, help="comma-separated list")

    sp = add("train-ae", "train the denoising bottleneck")
    sp.add_argument("--data", default=None, help="dataset directory")
    sp.add_argument("--latent", type=int, default=None)
    sp.add_argument("--lambda", dest="lam", type=float, default=None,
                    help="similarity penalty weight")
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--resume", action="store_true")

    for name, blurb in (("train-policy", "train DQN policies over seeds"),
                        ("confusion", "train/test crash-rate matrix"),
                        ("transfer", "pre-train then fine-tune comparison")):
        sp = add(name, blurb)
        sp.add_argument("--mode", default=None,
                        choices=(("baseline", "bottleneck", "both")
                                 if name == "confusion"
                                 else ("baseline", "bottleneck")))
        sp.add_argument("--ae", default=None, help="encoder checkpoint")
        sp.add_argument("--latent", type=int, default=None)
        sp.add_argument("--episodes", type=int, default=None)
        sp.add_argument("--eval-episodes", type=int, default=None)
        sp.add_argument("--seeds", default=None, help="comma-separated list")
        sp.add_argument("--scenarios", default=None,
                        help="training scenario set")
        sp.add_argument("--test-scenarios", default=None)
        sp.add_argument("--workers", type=int, default=None)

    sp = add("eval", "evaluate a saved policy checkpoint")
    sp.add_argument("--policy", required=True, help="policy .ldck file")
    sp.add_argument("--ae", default=None)
    sp.add_argument("--episodes", type=int, default=None)
    sp.add_argument("--scenarios", default=None)

    sp = add("adapt", "oracle / mixed / cross-scenario comparison")
    sp.add_argument("--scenarios", default=None)
    sp.add_argument("--oracle", action="append", default=[],
                    metavar="SCENARIO=RUN_DIR")
    sp.add_argument("--mixed", default=None, help="mixed bottleneck run dir")
    sp.add_argument("--cross", default=None, help="cross baseline run dir")

    add("plot", "regenerate SVG plots from a run's CSV files")
    add("verify", "run the quick invariant suite")
    return p


def _spec_from_args(args, **extra):
    from .experiments import spec_from_config

    over = dict(extra)
    for attr, key in (("out", "out"), ("mode", "mode"), ("latent", "latent"),
                      ("episodes", "episodes"), ("workers", "workers"),
                      ("eval_episodes", "eval_episodes"), ("ae", "ae_path")):
        if getattr(args, attr, None) is not None:
            over[key] = getattr(args, attr)
    if getattr(args, "seed", None) is not None:
        over["seeds"] = (args.seed,)
    if getattr(args, "seeds", None):
        over["seeds"] = tuple(int(s) for s in as_list(args.seeds))
    if getattr(args, "scenarios", None):
        over["train_scenarios"] = tuple(as_list(args.scenarios))
        over.setdefault("test_scenarios", over["train_scenarios"])
    if getattr(args, "test_scenarios", None):
        over["test_scenarios"] = tuple(as_list(args.test_scenarios))
    return spec_from_config(args.config, **over)


def _cmd_gen_data(args):
    from .data import SCENARIOS, collect_dataset
    from .velocity_map import VelocityMapParams

    # desk-scale raster; full-scale via vm.height/width/resolution config keys
    vm = VelocityMapParams(height=32, width=32, resolution=3.75)
    episodes, seed = 12, 0
    scenarios = SCENARIOS
    if args.config:
        kv = load_kv(args.config)
        apply_overrides(vm, kv, "vm")
        episodes = int(kv.get("data.episodes", episodes))
        seed = int(kv.get("data.seed", seed))
        if "data.scenarios" in kv:
            scenarios = tuple(as_list(kv["data.scenarios"]))
    if args.episodes is not None:
        episodes = args.episodes
    if args.seed is not None:
        seed = args.seed
    if args.scenarios:
        scenarios = tuple(as_list(args.scenarios))
    out = args.out or "dataset"
    meta = collect_dataset(out, seed, episodes, vm_params=vm,
                           scenarios=scenarios, log=print)
    print(f"wrote {meta['n_samples']} samples ({meta['n_val']} validation) "
          f"to {out} [{meta['fingerprint']}]")
    return 0


def _cmd_train_ae(args):
    from .experiments import train_ae_run

    latent, lam, epochs, batch, pair, seed = 64, 0.0, 30, 16, True, 0
    if args.config:
        kv = load_kv(args.config)
        latent = int(kv.get("ae.latent", latent))
        lam = float(kv.get("ae.lambda", lam))
        epochs = int(kv.get("ae.epochs", epochs))
        batch = int(kv.get("ae.batch", batch))
        pair = kv.get("ae.pair_mode", "true").lower() in ("1", "true", "yes")
        seed = int(kv.get("ae.seed", seed))
    latent = args.latent if args.latent is not None else latent
    lam = args.lam if args.lam is not None else lam
    epochs = args.epochs if args.epochs is not None else epochs
    seed = args.seed if args.seed is not None else seed
    if not args.data:
        raise MissingArtifactError("train-ae needs --data <dataset dir>")
    out = args.out or "ae_run"
    _, summary = train_ae_run(args.data, out, latent=latent, lam=lam,
                              epochs=epochs, seed=seed, batch=batch,
                              pair=pair, resume=args.resume, log=print)
    print(f"final validation loss {summary['final_val']:.4f} "
          f"(epoch 1: {summary['epoch1_val']:.4f}); "
          f"held-out per-pixel MSE {summary['heldout_mse']:.5f}")
    return 0


def _cmd_train_policy(args):
    from .experiments import run_experiment

    spec = _spec_from_args(args)
    report = run_experiment(spec, log=print)
    agg = report["aggregate"]
    print(f"crash {agg['crash_rate']['mean']:.3f}±{agg['crash_rate']['std']:.3f}  "
          f"crash+failure {agg['combined_rate']['mean']:.3f}"
          f"±{agg['combined_rate']['std']:.3f}  "
          f"report: {os.path.join(spec.out, 'report.json')}")
    return 0


def _cmd_eval(args):
    from . import nn
    from .experiments import (EVAL_HEADER, build_agent, evaluate_policy,
                              load_encoder, spec_from_config, write_csv)
    from .util import canonical_json

    if not os.path.exists(args.policy):
        raise MissingArtifactError(f"policy checkpoint not found: {args.policy}")
    header, _ = nn.load_checkpoint(args.policy)
    config = args.config
    sibling = os.path.join(os.path.dirname(args.policy) or ".", "spec.cfg")
    if config is None and os.path.exists(sibling):
        config = sibling
    over = {"mode": header.get("mode", "baseline"),
            "ae_path": args.ae or header.get("ae_path", ""),
            "latent": int(header.get("latent", 64)),
            "out": args.out or "eval_out"}
    spec = spec_from_config(config, **over)
    if args.scenarios:
        spec.test_scenarios = tuple(as_list(args.scenarios))
    if args.episodes is not None:
        spec.eval_episodes = args.episodes
    seed = args.seed if args.seed is not None else int(header.get("seed", 0))
    encoder = load_encoder(spec)
    agent = build_agent(spec, seed, encoder)
    agent.load_weights(args.policy)
    rows, summary = evaluate_policy(spec, seed, agent, encoder)
    os.makedirs(spec.out, exist_ok=True)
    write_csv(os.path.join(spec.out, f"eval_seed{seed}.csv"), EVAL_HEADER,
              rows, spec.fingerprint())
    with open(os.path.join(spec.out, "eval_summary.json"), "w",
              encoding="utf-8") as fh:
        fh.write(canonical_json(summary))
    print(f"crash {summary['crash_rate']:.3f}  "
          f"complete {summary['complete_rate']:.3f}  "
          f"crash+failure {summary['combined_rate']:.3f}")
    return 0


def _cmd_confusion(args):
    from .experiments import confusion_matrix

    spec = _spec_from_args(args, mode="baseline")
    want = args.mode or "both"
    modes = ("baseline", "bottleneck") if want == "both" else (want,)
    confusion_matrix(spec, modes=modes, log=print)
    print(f"matrices written under {spec.out}")
    return 0


def _cmd_transfer(args):
    from .experiments import TRANSFER_SOURCES, transfer_run

    defaults = {}
    if not args.scenarios:
        defaults["train_scenarios"] = TRANSFER_SOURCES
    if not args.test_scenarios:
        defaults["test_scenarios"] = ("roundabout",)
    spec = _spec_from_args(args, **defaults)
    summary = transfer_run(spec, log=print)
    print(f"bottleneck faster in {summary['bottleneck_wins']}"
          f"/{summary['n_seeds']} seeds "
          f"(majority: {summary['majority']})")
    return 0


def _cmd_adapt(args):
    from .data import SCENARIOS
    from .experiments import domain_adaptation

    scenarios = tuple(as_list(args.scenarios)) if args.scenarios else SCENARIOS
    oracle_dirs = {}
    for item in args.oracle:
        if "=" not in item:
            raise LatentDriveError(f"--oracle wants SCENARIO=DIR, got {item!r}")
        k, v = item.split("=", 1)
        oracle_dirs[k.strip()] = v.strip()
    if not (args.mixed and args.cross):
        raise MissingArtifactError("adapt needs --mixed and --cross run dirs")
    gaps = domain_adaptation(args.out or "adaptation", scenarios, oracle_dirs,
                             args.mixed, args.cross)
    for kind, g in gaps.items():
        print(f"{kind}: mixed-bottleneck gap {g['mixed_gap']:+.3f}, "
              f"cross-baseline gap {g['cross_gap']:+.3f}")
    return 0


def _cmd_plot(args):
    from .experiments import plot_run

    if not args.out:
        raise LatentDriveError("plot needs --out <run dir>")
    made = plot_run(args.out)
    for path in made:
        print(f"wrote {path}")
    if not made:
        print("no known CSV files found; nothing to plot")
    return 0


def _cmd_verify(args):
    checks = _verify_checks()
    failed = 0
    for name, fn in checks:
        try:
            fn()
            print(f"PASS {name}")
        except Exception as exc:  # report every failure, then exit 3
            failed += 1
            print(f"FAIL {name}: {exc}")
    if failed:
        print(f"{failed}/{len(checks)} invariant checks failed")
        return 3
    print(f"all {len(checks)} invariant checks passed")
    return 0


def _verify_checks():
    import tempfile

    import numpy as np

    def frenet_round_trip():
        from .geometry import GeometryParams, ScenarioKind, build_scenario
        from .util import substream
        for kind in ScenarioKind:
            layout = build_scenario(kind, GeometryParams())
            rng = substream(99, "verify", kind.value)
            for seg in layout.segments.values():
                ls = rng.uniform(0.0, seg.length, 40)
                ds = rng.uniform(-1.8, 1.8, 40)
                for l, d in zip(ls, ds):
                    x, y = seg.point_at(l, d)
                    l2, d2, valid, _ = seg.project(x, y)
                    if not valid or abs(l2 - l) > 1e-9 or abs(d2 - d) > 1e-9:
                        raise AssertionError(
                            f"{kind.value} seg {seg.seg_id}: ({l:.3f},{d:.3f})"
                            f" -> ({l2:.3f},{d2:.3f})")

    def trace_determinism():
        from .env import World
        from .geometry import ScenarioKind, build_scenario
        layout = build_scenario(ScenarioKind.ROUNDABOUT)
        hashes = []
        for _ in range(2):
            world = World(layout, seed=5)
            world.reset()
            while not world.done and world.step_count < 20:
                world.step(0)
            hashes.append(world.trace_hash())
        if hashes[0] != hashes[1]:
            raise AssertionError(f"trace hashes differ: {hashes}")

    def checkpoint_round_trip():
        from . import nn
        from .util import substream
        rng = substream(3, "verify-ck")
        net = nn.Network([nn.Dense(rng, 7, 5), nn.Activation("relu"),
                          nn.Dense(rng, 5, 3)])
        arrays = nn.network_arrays(net)
        with tempfile.TemporaryDirectory() as td:
            path = os.path.join(td, "net.ldck")
            nn.save_checkpoint(path, {"kind": "verify"}, arrays)
            header, back = nn.load_checkpoint(path)
        if header["kind"] != "verify":
            raise AssertionError("header mangled")
        for k, v in arrays.items():
            if not np.array_equal(v, back[k]):
                raise AssertionError(f"tensor {k} not bit-exact")

    def speed_mapping():
        import math
        from .velocity_map import VelocityMapParams, speed_to_pixel
        p = VelocityMapParams()
        for v in (0.0, 0.2, 0.5, 0.5000001, 1.0, 5.0, 20.0, 148.0, 200.0):
            want = (1.0 if abs(v) < p.v_gate
                    else min(max(1.0 - p.beta * math.log(p.alpha * abs(v)), 0.0), 1.0))
            got = speed_to_pixel(v, p)
            if abs(got - want) > 1e-12:
                raise AssertionError(f"v={v}: {got} != {want}")

    def replay_fifo():
        from .dqn import ReplayBuffer
        buf = ReplayBuffer(4, (2,))
        for i in range(6):
            buf.push(np.full(2, i, dtype=np.float32), 0, 0.0,
                     np.zeros(2, dtype=np.float32), False)
        kept = sorted(int(buf.obs[i, 0]) for i in range(buf.size))
        if kept != [2, 3, 4, 5]:
            raise AssertionError(f"eviction not FIFO: {kept}")

    def csv_rerun():
        import hashlib
        from .experiments import ExperimentSpec, run_experiment
        digests = []
        with tempfile.TemporaryDirectory() as td:
            for tag in ("a", "b"):
                spec = ExperimentSpec(
                    name="verify", train_scenarios=("highway_cruise",),
                    test_scenarios=("highway_cruise",), episodes=2,
                    eval_episodes=2, seeds=(0,), warmup=10, batch=4,
                    latent=8, out=os.path.join(td, tag))
                run_experiment(spec)
                path = os.path.join(td, tag, "train_seed0.csv")
                digests.append(hashlib.sha256(
                    open(path, "rb").read()).hexdigest())
        if digests[0] != digests[1]:
            raise AssertionError("re-run produced different CSV bytes")

    def bounded_sampler():
        from .util import clipped_gaussian, substream
        rng = substream(11, "verify-cg")
        draws = [clipped_gaussian(rng, 20.0, 5.0, 5.0) for _ in range(1000)]
        if min(draws) < 15.0 or max(draws) > 25.0:
            raise AssertionError("draw escaped [mu-delta, mu+delta]")
        if clipped_gaussian(rng, 7.0, 0.0, 3.0) != 7.0:
            raise AssertionError("sigma=0 must return mu")

    return [("frenet-round-trip", frenet_round_trip),
            ("trace-determinism", trace_determinism),
            ("checkpoint-round-trip", checkpoint_round_trip),
            ("speed-pixel-mapping", speed_mapping),
            ("replay-fifo", replay_fifo),
            ("csv-rerun-bytes", csv_rerun),
            ("bounded-sampler", bounded_sampler)]


_DISPATCH = {
    "gen-data": _cmd_gen_data,
    "train-ae": _cmd_train_ae,
    "train-policy": _cmd_train_policy,
    "eval": _cmd_eval,
    "confusion": _cmd_confusion,
    "transfer": _cmd_transfer,
    "adapt": _cmd_adapt,
    "plot": _cmd_plot,
    "verify": _cmd_verify,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.cmd is None:
        parser.print_help()
        return 1
    try:
        return _DISPATCH[args.cmd](args)
    except (MissingArtifactError, MissingCacheError) as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return 2
    except LatentDriveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
