"""Command-line entry point: ``mmlab <command> [flags]``.

Every command writes its artifacts atomically and records the fully
resolved configuration beside them as ``config.json``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .agents import AgentSpec
from .dqn import TrainConfig, train_market
from .env import FEATURES, EnvConfig
from .errors import MMLabError
from .evaluation import (
    backtest,
    load_step_log,
    select_model,
    summarize,
    write_metrics,
    write_plot_data,
    write_step_log,
)
from .marketdata import SyntheticConfig, gen_sessions, parse_tick_csv, split_sessions, write_tick_csv
from .mlp import Checkpoint
from .pdp import estimate_pdp

log = logging.getLogger("mmlab")

# counters for per-module seeds derived from the root seed
DATA_STREAM, TRAIN_STREAM = 0, 1

# training settings for market sessions; TrainConfig's own defaults stay generic
MARKET_TRAIN = dict(reward_scale=1.0, max_grad_norm=10.0, symmetric=True, epochs=5,
                    updates_per_flush=4)


def derive_seed(root: int, stream: int) -> int:
    return int(np.random.SeedSequence(int(root), spawn_key=(stream,)).generate_state(1)[0])


@dataclass
class RunConfig:
    """Everything a run depends on. ``seed`` is the only source of randomness."""

    seed: int = 1
    n_sessions: int = 12
    split: tuple[int, int, int] = (5, 2, 5)
    min_daily_trades: float = 50
    agent: str = "fa"
    max_inv: int = 5
    jobs: int = 1
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    env: EnvConfig = field(default_factory=lambda: EnvConfig(reward_kind="inventory_punish"))
    train: TrainConfig = field(default_factory=lambda: TrainConfig(**MARKET_TRAIN))

    def __post_init__(self):
        self.split = tuple(int(k) for k in self.split)
        if len(self.split) != 3 or min(self.split) < 0:
            raise ValueError("split needs three non-negative counts")
        if self.n_sessions < 1:
            raise ValueError("n_sessions must be positive")
        if self.jobs < 1:
            raise ValueError("jobs must be positive")
        self.synthetic = replace(self.synthetic, seed=derive_seed(self.seed, DATA_STREAM))
        self.train = replace(self.train, seed=derive_seed(self.seed, TRAIN_STREAM))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"] = list(self.split)
        d["train"]["hidden"] = list(self.train.hidden)
        d["version"] = __version__
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        d.pop("version", None)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        sections = {"synthetic": SyntheticConfig, "env": EnvConfig, "train": TrainConfig}
        for name, kind in sections.items():
            if name in d:
                sub = dict(d[name])
                bad = set(sub) - {f.name for f in fields(kind)}
                if bad:
                    raise ValueError(f"unknown {name} keys: {sorted(bad)}")
                base = cls.__dataclass_fields__[name].default_factory()
                d[name] = replace(base, **sub)
        return cls(**d)

    def save(self, directory: Path) -> Path:
        return _write_json(directory / "config.json", self.to_dict())


def _write_json(path: Path, payload) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    tmp.replace(path)
    return path


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmlab", description="Market-making RL experiments on tick data.")
    p.add_argument("--version", action="version", version=f"mmlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, help_text, *flags):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", type=Path, help="JSON run configuration")
        sp.add_argument("--seed", type=int, help="root seed")
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("-v", "--verbose", action="store_true")
        for flag in flags:
            if flag == "data":
                sp.add_argument("--data", type=Path, required=name != "repro",
                                help="session CSV directory (or a step log for pdp)")
            elif flag == "agent":
                sp.add_argument("--agent", choices=("fa", "fawc", "drla"))
                sp.add_argument("--max-inv", type=int, dest="max_inv")
                sp.add_argument("--checkpoint", type=Path)
                sp.add_argument("--sessions", choices=("all", "train", "val", "test"),
                                default="all", help="which part of the split to run on")
            elif flag == "reward":
                sp.add_argument("--reward", choices=("sym", "punish"))
            elif flag == "jobs":
                sp.add_argument("--jobs", type=int)
        return sp

    add("gen", "write synthetic session CSVs")
    add("ingest", "validate session CSVs", "data")
    add("train", "train a Q-network and select a checkpoint", "data", "reward")
    add("backtest", "run an agent over sessions", "data", "agent", "reward", "jobs")
    add("metrics", "summarize step logs into the comparison table", "data")
    add("pdp", "partial-dependence tables from a step log", "data")
    add("repro", "end-to-end synthetic experiment", "reward", "jobs")
    return p


def resolve_config(args) -> RunConfig:
    base = {}
    if args.config is not None:
        try:
            base = json.loads(args.config.read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"{args.config}: invalid JSON ({exc})") from exc
        if not isinstance(base, dict):
            raise ValueError(f"{args.config}: expected a JSON object")
    if getattr(args, "seed", None) is not None:
        base["seed"] = args.seed
    for key in ("agent", "max_inv", "jobs"):
        value = getattr(args, key, None)
        if value is not None:
            base[key] = value
    if getattr(args, "reward", None) is not None:
        base.setdefault("env", {})
        base["env"] = {**base["env"], "reward_kind": args.reward}
    return RunConfig.from_dict(base)


def load_sessions(directory: Path, tick_size: float = 1.0) -> list:
    paths = sorted(directory.glob("*.csv")) if directory.is_dir() else [directory]
    if not paths:
        raise FileNotFoundError(f"no CSV files in {directory}")
    return [parse_tick_csv(p, tick_size=tick_size) for p in paths]


def _out_dir(args, default: str) -> Path:
    out = args.out or Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen(args, cfg: RunConfig) -> None:
    out = _out_dir(args, "data")
    for s in gen_sessions(cfg.synthetic, cfg.n_sessions):
        write_tick_csv(s, out / f"{s.session_id}.csv")
    cfg.save(out)
    print(f"wrote {cfg.n_sessions} sessions to {out}")


def cmd_ingest(args, cfg: RunConfig) -> None:
    sessions = load_sessions(args.data, cfg.synthetic.tick_size)
    for s in sessions:
        print(f"{s.session_id}: {len(s)} ticks, {int(s.carried.sum())} carried last prices")
    if args.out:
        _out_dir(args, "")
        _write_json(args.out / "ingest.json",
                    {s.session_id: {"ticks": len(s), "carried": int(s.carried.sum())} for s in sessions})


def _train(sessions, cfg: RunConfig, out: Path) -> Checkpoint:
    train_s, val_s, _ = split_sessions(sessions, (cfg.split[0], cfg.split[1], 0))
    result = train_market(train_s, val_s, cfg.train, cfg.env)
    ck_dir = out / "checkpoints"
    ck_dir.mkdir(parents=True, exist_ok=True)
    for ck in result.checkpoints:
        ck.save(ck_dir / f"step_{ck.step:08d}.json")
    result.write_log(out / "train_log.csv")
    sel = select_model(result.checkpoints, min_daily_trades=cfg.min_daily_trades)
    sel.checkpoint.save(out / "selected.json")
    _write_json(out / "selection.json", {
        "index": sel.index, "step": sel.checkpoint.step, "fallback": sel.fallback,
        "candidates": [{"step": ck.step, **ck.metrics} for ck in result.checkpoints],
    })
    return sel.checkpoint


def cmd_train(args, cfg: RunConfig) -> None:
    out = _out_dir(args, "train")
    ck = _train(load_sessions(args.data, cfg.synthetic.tick_size), cfg, out)
    cfg.save(out)
    print(f"selected checkpoint at step {ck.step}; artifacts in {out}")


def _pick(sessions, cfg: RunConfig, which: str):
    if which == "all":
        return sorted(sessions, key=lambda s: int(s.update_time[0]))
    parts = dict(zip(("train", "val", "test"), split_sessions(sessions, cfg.split)))
    return parts[which]


def _agent(cfg: RunConfig, checkpoint: Path | Checkpoint | None) -> AgentSpec:
    if cfg.agent == "fa":
        return AgentSpec.fa()
    if cfg.agent == "fawc":
        return AgentSpec.fawc(cfg.max_inv)
    if checkpoint is None:
        raise ValueError("--agent drla needs --checkpoint")
    return AgentSpec.drla(checkpoint)


def _run_backtest(agent: AgentSpec, sessions, cfg: RunConfig, out: Path):
    report = backtest(agent, sessions, cfg.env, jobs=cfg.jobs)
    write_step_log(report, out / f"report_{agent.kind.lower()}.csv")
    write_plot_data(report, out / f"plot_{agent.kind.lower()}.csv")
    return report


def cmd_backtest(args, cfg: RunConfig) -> None:
    out = _out_dir(args, "backtest")
    sessions = _pick(load_sessions(args.data, cfg.synthetic.tick_size), cfg, args.sessions)
    agent = _agent(cfg, args.checkpoint)
    report = _run_backtest(agent, sessions, cfg, out)
    write_metrics({agent.label: summarize(report)}, out / f"metrics_{agent.kind.lower()}.json")
    cfg.save(out)
    print(f"{agent.label}: {len(sessions)} sessions, {report.trading_times} fills; report in {out}")


def _report_paths(data: Path) -> list[Path]:
    paths = sorted(data.glob("report_*.csv")) if data.is_dir() else [data]
    if not paths:
        raise FileNotFoundError(f"no report_*.csv step logs in {data}")
    return paths


def cmd_metrics(args, cfg: RunConfig) -> None:
    out = _out_dir(args, str(args.data if args.data.is_dir() else args.data.parent))
    metrics = {}
    for path in _report_paths(args.data):
        label = path.stem.removeprefix("report_")
        metrics[label] = summarize(load_step_log(path, label))
    write_metrics(metrics, out / "metrics.json", out / "metrics_table.csv")
    print((out / "metrics_table.csv").read_text(), end="")


def _write_pdp(report, out: Path) -> None:
    states = np.concatenate([g.states[:-1] for g in report.logs])
    actions = np.concatenate([g.actions for g in report.logs])
    out.mkdir(parents=True, exist_ok=True)
    for variable in FEATURES:
        estimate_pdp(states, actions, variable).write_csv(out / f"pdp_{variable}.csv")


def cmd_pdp(args, cfg: RunConfig) -> None:
    path = args.data
    if path.is_dir():
        path = path / "report_drla.csv" if (path / "report_drla.csv").exists() else _report_paths(path)[0]
    out = _out_dir(args, str(path.parent))
    _write_pdp(load_step_log(path), out)
    print(f"PDP tables for {path.name} in {out}")


def cmd_repro(args, cfg: RunConfig) -> None:
    out = _out_dir(args, f"runs/repro-seed{cfg.seed}")
    cfg.save(out)
    data_dir = out / "data"
    data_dir.mkdir(exist_ok=True)
    sessions = gen_sessions(cfg.synthetic, cfg.n_sessions)
    for s in sessions:
        write_tick_csv(s, data_dir / f"{s.session_id}.csv")
    _, _, test = split_sessions(sessions, cfg.split)
    ck = _train(sessions, cfg, out / "train")
    test_dir = out / "test"
    test_dir.mkdir(exist_ok=True)
    metrics, reports = {}, {}
    for agent in (AgentSpec.fa(), AgentSpec.fawc(cfg.max_inv), AgentSpec.drla(ck)):
        reports[agent.kind] = _run_backtest(agent, test, cfg, test_dir)
        metrics[agent.label] = summarize(reports[agent.kind])
    write_metrics(metrics, out / "metrics.json", out / "metrics_table.csv")
    _write_pdp(reports["DRLA"], out / "pdp")
    print((out / "metrics_table.csv").read_text(), end="")


COMMANDS = {
    "gen": cmd_gen, "ingest": cmd_ingest, "train": cmd_train, "backtest": cmd_backtest,
    "metrics": cmd_metrics, "pdp": cmd_pdp, "repro": cmd_repro,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](args, cfg)
    except (MMLabError, ValueError, TypeError, OSError) as exc:
        print(f"mmlab {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
