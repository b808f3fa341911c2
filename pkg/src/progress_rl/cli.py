"""Command-line entry point: houses, pretraining, training, evaluation, comparison and trace filtering."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

from .config import TOKEN_ENV, ExperimentConfig, RunManifest, profile_override, resolve_run_dir
from .env import HouseSpec, generate_house, generate_pool, obs_dim_for, render_ascii
from .errors import ConfigError, GenerationError, InvalidInputError, ProgressRLError
from .estimator import ExternalEstimator
from .learn import bc_pretrain, expert_demos, train
from .metrics import EvalReport, compare, deltas_to_csv, evaluate
from .persistence import atomic_write, load_checkpoint, save_checkpoint
from .progress_core import FilterConfig, ProgressTrace, saturation_safe_rewards
from .scenegraph import decompose_external
from .service import ServiceEndpoint

log = logging.getLogger("progress_rl")

HOUSE_FILE_FORMAT = 1


# --- house files -----------------------------------------------------------
def house_file_text(houses, first_seed: int, params) -> str:
    header = {"kind": "house_file", "format": HOUSE_FILE_FORMAT, "count": len(houses), "first_seed": first_seed,
              "params": params.__dict__}
    lines = [json.dumps(header, sort_keys=True)]
    lines += [json.dumps(h.to_dict(), sort_keys=True) for h in houses]
    return "\n".join(lines) + "\n"


def read_houses(path) -> list:
    path = Path(path)
    try:
        lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    except OSError as exc:
        raise InvalidInputError(f"{path}: {exc.strerror or exc}") from None
    if not lines:
        raise InvalidInputError(f"{path}: empty house file")
    try:
        header = json.loads(lines[0])
        if header.get("kind") != "house_file":
            raise InvalidInputError(f"{path}: missing house-file header line")
        houses = [HouseSpec.from_dict(json.loads(ln)) for ln in lines[1:]]
    except (ValueError, KeyError, TypeError) as exc:
        raise InvalidInputError(f"{path}: malformed house file: {exc}") from None
    if len(houses) != header.get("count"):
        raise InvalidInputError(f"{path}: header says {header.get('count')} houses, found {len(houses)}")
    return houses


def _pool(cfg: ExperimentConfig, split: str, path=None) -> list:
    if path:
        houses = read_houses(path)
    else:
        h = cfg["houses"]
        houses = generate_pool(cfg.house_params(), h[f"{split}_seed_start"], h[f"{split}_count"],
                               h[f"{split}_seed_end"])
    if not houses:
        raise InvalidInputError(f"{split} house pool is empty")
    return houses


# --- external services -----------------------------------------------------
def _endpoint(cfg: ExperimentConfig, url: str) -> ServiceEndpoint:
    e = cfg["endpoint"]
    return ServiceEndpoint(url, timeout=e["timeout"], retries=e["retries"], backoff_base=e["backoff_base"],
                           token=os.environ.get(TOKEN_ENV))


class _RemoteEpisodeEstimator:
    def __init__(self, endpoint: ServiceEndpoint, every_k: int, episode: int):
        self.remote = ExternalEstimator(endpoint, every_k)
        self.episode = episode
        self.steps = 0

    def __call__(self, query, true_p):
        query.episode = self.episode
        query.step = self.steps
        self.steps += 1
        return self.remote(query)


def _services(cfg: ExperimentConfig):
    e = cfg["endpoint"]
    factory = decomposer = None
    if e["estimator_url"]:
        ep = _endpoint(cfg, e["estimator_url"])
        factory = lambda episode: _RemoteEpisodeEstimator(ep, e["every_k"], episode)  # noqa: E731
    if e["decomposer_url"]:
        dep = _endpoint(cfg, e["decomposer_url"])
        decomposer = lambda graph, instr: decompose_external(dep, graph, instr)  # noqa: E731
    return factory, decomposer


# --- run directory helpers -------------------------------------------------
class MetricsLog:
    """Line-delimited JSON with sorted keys; nothing time-dependent goes in."""

    def __init__(self, path: Path):
        self.path = path
        path.parent.mkdir(parents=True, exist_ok=True)
        self.fh = open(path, "w")

    def __call__(self, rec: dict):
        self.fh.write(json.dumps(rec, sort_keys=True) + "\n")
        self.fh.flush()

    def close(self):
        self.fh.close()


def _start_run(args, cfg: ExperimentConfig, command: str):
    run_dir = resolve_run_dir(args.out, cfg, command)
    run_dir.mkdir(parents=True, exist_ok=True)
    atomic_write(run_dir / "config.json", cfg.to_json())
    manifest = RunManifest(command, cfg.hash)
    manifest.outputs.append("config.json")
    manifest.write(run_dir)
    return run_dir, manifest


def _obs_meta(env_cfg, tag: str, step: int) -> dict:
    return {"tag": tag, "step": int(step), "obs_dim": obs_dim_for(env_cfg), "num_actions": env_cfg.num_actions}


def _load_policy(path, env_cfg):
    nets, chash, meta = load_checkpoint(path)
    if "policy" not in nets:
        raise ConfigError(f"{path}: checkpoint holds no policy network")
    pol = nets["policy"]
    want = obs_dim_for(env_cfg)
    if pol.sizes[0] != want:
        raise ConfigError(f"{path}: checkpoint policy takes observations of width {pol.sizes[0]} "
                          f"(config {chash[:12]}), but this env config produces width {want}; "
                          f"check env.view_radius")
    if pol.sizes[-1] != env_cfg.num_actions:
        raise ConfigError(f"{path}: checkpoint policy has {pol.sizes[-1]} actions, env config has "
                          f"{env_cfg.num_actions}")
    return pol, chash, meta


# --- subcommands -----------------------------------------------------------
def cmd_gen_houses(args, cfg: ExperimentConfig) -> int:
    params = cfg.house_params()
    count = cfg["houses"]["train_count"] if args.count is None else args.count
    if count < 0:
        raise InvalidInputError("--count must be >= 0")
    first = cfg["houses"]["train_seed_start"] if args.seed is None else args.seed
    houses = generate_pool(params, first, count)
    text = house_file_text(houses, first, params)
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def _pretrain(cfg: ExperimentConfig, houses, run_dir: Path, mlog: MetricsLog, manifest: RunManifest):
    env_cfg = cfg.env_config()
    demos = expert_demos(houses, cfg["train"]["task_kinds"], cfg["bc"]["demos"], env_cfg, cfg["seed"])
    policy, losses = bc_pretrain(demos, env_cfg.num_actions, cfg.bc_config())
    for epoch, loss in enumerate(losses):
        mlog({"kind": "bc_epoch", "epoch": epoch, "loss": loss})
    path = save_checkpoint(run_dir / "checkpoints" / "bc.ckpt", {"policy": policy}, cfg.hash,
                           _obs_meta(env_cfg, "bc", 0))
    manifest.checkpoints.append(str(path.relative_to(run_dir)))
    manifest.stage_steps["bc_demos"] = len(demos)
    return policy


def cmd_pretrain(args, cfg: ExperimentConfig) -> int:
    run_dir, manifest = _start_run(args, cfg, "pretrain")
    houses = _pool(cfg, "train", args.houses)
    mlog = MetricsLog(run_dir / "metrics.jsonl")
    try:
        policy = _pretrain(cfg, houses, run_dir, mlog, manifest)
        e = cfg["eval"]
        rep = evaluate(policy, houses, cfg["train"]["task_kinds"], e["periodic_episodes"], e["seed"],
                       cfg.env_config(), e["greedy"], cfg.hash)
        mlog({"kind": "bc_eval", "split": "train", "success_rate": rep.overall.success, "sel": rep.overall.sel,
              "episodes": rep.overall.n})
    finally:
        mlog.close()
    manifest.outputs.append("metrics.jsonl")
    manifest.finish(run_dir)
    return 0


def cmd_train(args, cfg: ExperimentConfig) -> int:
    run_dir, manifest = _start_run(args, cfg, "train")
    env_cfg = cfg.env_config()
    tcfg = cfg.train_config()
    houses = _pool(cfg, "train", args.houses)
    test = _pool(cfg, "test")
    e = cfg["eval"]
    mlog = MetricsLog(run_dir / "metrics.jsonl")
    manifest.outputs.append("metrics.jsonl")
    manifest.stage_steps = {"stage1": tcfg.resolved_stage1_steps, "stage2": tcfg.stage2_steps}
    try:
        if args.checkpoint:
            policy, _, _ = _load_policy(args.checkpoint, env_cfg)
        else:
            policy = _pretrain(cfg, houses, run_dir, mlog, manifest)
        manifest.write(run_dir)

        def save(tag, pol, val, step):
            path = save_checkpoint(run_dir / "checkpoints" / f"{tag}.ckpt", {"policy": pol, "value": val}, cfg.hash,
                                   _obs_meta(env_cfg, tag, step))
            rel = str(path.relative_to(run_dir))
            if rel not in manifest.checkpoints:
                manifest.checkpoints.append(rel)
            manifest.write(run_dir)

        def periodic(pol):
            return evaluate(pol, test, e["task_kinds"], e["periodic_episodes"], e["seed"], env_cfg, e["greedy"],
                            cfg.hash)

        factory, decomposer = _services(cfg)
        result = train(tcfg, houses, policy, env_cfg, eval_fn=periodic if tcfg.eval_every else None,
                       checkpoint_fn=save, log_fn=mlog, estimator_factory=factory, decomposer=decomposer)
        report = evaluate(result.policy, test, e["task_kinds"], e["episodes_per_task"], e["seed"], env_cfg,
                          e["greedy"], cfg.hash)
        mlog({"kind": "final_eval", "step": result.env_steps, "success_rate": report.overall.success,
              "sel": report.overall.sel, "episodes": report.overall.n})
    finally:
        mlog.close()
    _write_report(run_dir, report, args.arm, manifest)
    manifest.stage_steps["total"] = result.env_steps
    manifest.finish(run_dir)
    return 0


def _write_report(run_dir: Path, report: EvalReport, arm: str, manifest: RunManifest):
    atomic_write(run_dir / "report.json", report.to_json())
    atomic_write(run_dir / "report.csv", report.to_csv(arm))
    manifest.outputs += ["report.json", "report.csv"]


def cmd_eval(args, cfg: ExperimentConfig) -> int:
    if not args.checkpoint:
        raise InvalidInputError("eval needs --checkpoint")
    env_cfg = cfg.env_config()
    policy, _, _ = _load_policy(args.checkpoint, env_cfg)
    run_dir, manifest = _start_run(args, cfg, "eval")
    test = _pool(cfg, "test", args.houses)
    e = cfg["eval"]
    report = evaluate(policy, test, e["task_kinds"], e["episodes_per_task"], e["seed"], env_cfg, e["greedy"],
                      cfg.hash)
    _write_report(run_dir, report, args.arm, manifest)
    manifest.finish(run_dir)
    return 0


def _read_report(path) -> EvalReport:
    try:
        return EvalReport.from_dict(json.loads(Path(path).read_text()))
    except OSError as exc:
        raise InvalidInputError(f"{path}: {exc.strerror or exc}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise InvalidInputError(f"{path}: not an eval report: {exc}") from None


def cmd_compare(args, cfg: ExperimentConfig) -> int:
    rows = compare(_read_report(args.report_a), _read_report(args.report_b))
    text = deltas_to_csv(rows)
    if args.out:
        out = Path(args.out)
        atomic_write(out / "deltas.csv" if out.suffix != ".csv" else out, text)
    else:
        sys.stdout.write(text)
    return 0


def filter_trace_csv(lines, half_width: int, threshold: float | None):
    """Filter every record; returns (csv text, records used, records skipped)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["episode_id", "step", "progress", "filtered", "reward"])
    used = skipped = 0
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            trace = ProgressTrace(rec["episode_id"], rec["values"])
            K = rec.get("K")
            if K is not None and (isinstance(K, bool) or not isinstance(K, int) or K < 1):
                raise InvalidInputError(f"bad plan length {K!r}")
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            skipped += 1
            log.warning("line %d skipped: %s", n, exc)
            continue
        if threshold is None:
            if K is None:
                raise ConfigError(f"record {trace.episode_id!r} has no plan length K; pass --T")
            cfg = FilterConfig.for_plan(K, half_width)
        else:
            cfg = FilterConfig(half_width, threshold)
        res = saturation_safe_rewards(trace, cfg, return_intermediate=True)
        for t, (p, f, r) in enumerate(zip(trace.values, res.filtered, res.values)):
            w.writerow([trace.episode_id, t, repr(p), repr(f), repr(r)])
        used += 1
    return buf.getvalue(), used, skipped


def cmd_filter_trace(args, cfg: ExperimentConfig) -> int:
    try:
        lines = Path(args.in_file).read_text().splitlines()
    except OSError as exc:
        raise InvalidInputError(f"{args.in_file}: {exc.strerror or exc}") from None
    if not any(ln.strip() for ln in lines):
        raise InvalidInputError(f"{args.in_file}: empty trace file")
    S = cfg["train"]["filter_half_width"] if args.S is None else args.S
    T = args.T if args.T is not None else cfg["train"]["filter_threshold"]
    text, used, skipped = filter_trace_csv(lines, S, T)
    if skipped:
        print(json.dumps({"warning": "malformed records skipped", "count": skipped}), file=sys.stderr)
    if used == 0:
        raise InvalidInputError(f"{args.in_file}: all {skipped} records malformed")
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_render(args, cfg: ExperimentConfig) -> int:
    if args.houses:
        houses = read_houses(args.houses)
        if not 0 <= args.index < len(houses):
            raise InvalidInputError(f"--index {args.index} outside 0..{len(houses) - 1}")
        house = houses[args.index]
    else:
        house = generate_house(cfg["houses"]["train_seed_start"] if args.seed is None else args.seed,
                               cfg.house_params())
    print(render_ascii(house))
    return 0


# --- argument parsing ------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON experiment config")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. train.weights.beta=0")
    common.add_argument("--seed", type=int, help="experiment seed (first house seed for gen-houses/render)")
    common.add_argument("--out", help="run directory, or output file for gen-houses/filter-trace/compare")
    common.add_argument("--houses", help="house file from gen-houses")
    common.add_argument("--checkpoint", help="checkpoint file")
    common.add_argument("--endpoint-url", help="external progress estimator URL")
    common.add_argument("--profile", choices=["oracle", "late_gradual", "early_saturating", "uncorrelated"],
                        help="synthetic progress-estimator preset")
    common.add_argument("--arm", default="", help="label written into report CSVs")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="progress-rl", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gen-houses", parents=[common], help="write a house file")
    g.add_argument("--count", type=int)
    g.set_defaults(func=cmd_gen_houses)
    sub.add_parser("pretrain", parents=[common], help="behaviour cloning from expert demos").set_defaults(
        func=cmd_pretrain)
    sub.add_parser("train", parents=[common], help="value initialisation then PPO finetuning").set_defaults(
        func=cmd_train)
    sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on unseen houses").set_defaults(
        func=cmd_eval)
    c = sub.add_parser("compare", parents=[common], help="per-task deltas between two reports")
    c.add_argument("report_a")
    c.add_argument("report_b")
    c.set_defaults(func=cmd_compare)
    f = sub.add_parser("filter-trace", parents=[common], help="spike-filter progress traces into rewards")
    f.add_argument("in_file")
    f.add_argument("--S", type=int, help="filter half-width (default: config)")
    f.add_argument("--T", type=float, help="spike threshold (default: 1/K from each record)")
    f.set_defaults(func=cmd_filter_trace)
    r = sub.add_parser("render", parents=[common], help="print a house map")
    r.add_argument("--index", type=int, default=0)
    r.set_defaults(func=cmd_render)
    return p


def load_config(args) -> ExperimentConfig:
    overrides = list(args.set)
    if args.profile:
        overrides = profile_override(args.profile) + overrides
    if args.seed is not None and args.command not in ("gen-houses", "render"):
        overrides.append(f"seed={args.seed}")
    if args.endpoint_url:
        overrides.append(f"endpoint.estimator_url={json.dumps(args.endpoint_url)}")
    return ExperimentConfig.load(args.config, overrides)


def _fail(command, exc, code) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "command": command}, sort_keys=True),
          file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        return args.func(args, cfg)
    except (ConfigError, GenerationError) as exc:
        return _fail(args.command, exc, 2)
    except (ProgressRLError, OSError) as exc:
        return _fail(args.command, exc, 1)


if __name__ == "__main__":
    sys.exit(main())
