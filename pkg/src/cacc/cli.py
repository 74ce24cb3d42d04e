"""Command-line entry point: single runs, sweeps, trace/summary files, plots."""

from __future__ import annotations

import argparse
import itertools
import sys
from pathlib import Path

import numpy as np

from .calibration import METHODS
from .envs import ENV_NAMES
from .harness import (
    EpisodeConfig,
    EpisodeTrace,
    aggregate_seeds,
    full_audit,
    run_many,
)
from .mpc import MpcConfig
from .plots import line_plot_svg

TRACE_HEADER = "step,delta,q_hat,score,e,cost,loss,h,task_cost,feasible"

_SCALAR_KEYS = ("env", "method", "alpha", "beta", "gamma", "window", "steps", "horizon", "out_dir")
_LIST_KEYS = ("seed", "seeds", "sweep_alpha", "sweep_beta", "sweep_gamma", "sweep_window")
# default severity sensitivity per benchmark
_BETA_DEFAULT = {"vanderpol": 50.0}


class ConfigError(ValueError):
    pass


def _parse_value(key: str, raw: str):
    try:
        if key in ("window", "steps", "horizon"):
            return int(raw)
        if key in ("alpha", "beta", "gamma"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {raw!r}") from None
    return raw


def read_config_file(path: str | Path) -> dict:
    """Line-oriented key=value configuration; unknown keys are rejected."""
    values: dict = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key in _LIST_KEYS:
            values[key] = raw
        elif key in _SCALAR_KEYS:
            values[key] = _parse_value(key, raw)
        else:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
    return values


def _validate(values: dict) -> None:
    env = values.get("env", "mountaincar")
    if env not in ENV_NAMES:
        raise ConfigError(f"env must be one of {ENV_NAMES}, got {env!r}")
    method = values.get("method", "cost_aware")
    if method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {method!r}")
    alpha = values.get("alpha", 0.1)
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    if values.get("beta") is not None and values["beta"] < 0.0:
        raise ConfigError(f"beta must be >= 0, got {values['beta']}")
    if values.get("gamma", 0.01) <= 0.0:
        raise ConfigError(f"gamma must be > 0, got {values['gamma']}")
    if values.get("window", 200) < 1:
        raise ConfigError(f"window must be >= 1, got {values['window']}")
    if values.get("steps", 10000) < 0:
        raise ConfigError(f"steps must be >= 0, got {values['steps']}")
    if values.get("horizon", 20) < 1:
        raise ConfigError(f"horizon must be >= 1, got {values['horizon']}")


def _csv_list(raw, conv):
    if raw is None:
        return None
    if isinstance(raw, (int, float)):
        return [conv(raw)]
    return [conv(tok) for tok in str(raw).split(",") if tok.strip()]


def build_configs(values: dict, sweep: bool) -> list[EpisodeConfig]:
    """Expand a merged key=value mapping into episode configs."""
    _validate(values)
    env = values.get("env", "mountaincar")
    seeds = _csv_list(values.get("seeds", values.get("seed", "0")), int)
    alphas = [values.get("alpha", 0.1)]
    betas = [values.get("beta")]
    gammas = [values.get("gamma", 0.01)]
    windows = [values.get("window", 200)]
    if sweep:
        alphas = _csv_list(values.get("sweep_alpha"), float) or alphas
        betas = _csv_list(values.get("sweep_beta"), float) or betas
        gammas = _csv_list(values.get("sweep_gamma"), float) or gammas
        windows = _csv_list(values.get("sweep_window"), int) or windows
    for a in alphas:
        if not 0.0 < a < 1.0:
            raise ConfigError(f"alpha must be in (0, 1), got {a}")
    mpc = MpcConfig(horizon=values.get("horizon", 20))
    configs = []
    for alpha, beta, gamma, window, seed in itertools.product(
        alphas, betas, gammas, windows, seeds
    ):
        if beta is None:
            beta = _BETA_DEFAULT.get(env, 100.0)
        configs.append(
            EpisodeConfig(
                env=env,
                method=values.get("method", "cost_aware"),
                alpha=alpha, beta=beta, gamma=gamma,
                window=window, steps=values.get("steps", 10000),
                seed=seed, mpc=mpc,
            )
        )
    return configs


def parse_config(path: str | None = None, overrides: dict | None = None,
                 sweep: bool = False) -> list[EpisodeConfig]:
    values = read_config_file(path) if path else {}
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    return build_configs(values, sweep)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.12g}"


def write_trace_csv(trace: EpisodeTrace, path: str | Path) -> None:
    path = Path(path)
    try:
        with path.open("w") as f:
            f.write(TRACE_HEADER + "\n")
            for i in range(trace.T):
                f.write(",".join((
                    str(int(trace.step[i])),
                    _fmt(trace.delta[i]), _fmt(trace.q_hat[i]),
                    _fmt(trace.score[i]), str(int(trace.e[i])),
                    _fmt(trace.cost[i]), _fmt(trace.loss[i]),
                    _fmt(trace.h[i]), _fmt(trace.task_cost[i]),
                    _fmt(trace.feasible[i]),
                )) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc}") from exc


def read_trace_csv(path: str | Path):
    rows = Path(path).read_text().splitlines()
    if rows[0] != TRACE_HEADER:
        raise ConfigError(f"{path}: unexpected trace header {rows[0]!r}")
    data = np.array([[float(tok) for tok in row.split(",")] for row in rows[1:]])
    if data.size == 0:
        data = data.reshape(0, len(TRACE_HEADER.split(",")))
    return {name: data[:, i] for i, name in enumerate(TRACE_HEADER.split(","))}


def write_summary(trace: EpisodeTrace, report, path: str | Path) -> None:
    lines = []
    for key in ("V_T", "J_T", "J_task_mean", "delta_1", "delta_final",
                "sum_e", "sum_loss", "clamp_count", "feasible_frac"):
        lines.append(f"{key}={_fmt(trace.summary[key])}")
    for name, check in report.checks.items():
        status = "PASS" if check.passed else "FAIL"
        lines.append(f"audit_{name}={status} slack={_fmt(check.slack)}")
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write summary to {path}: {exc}") from exc


def _running_mean(x: np.ndarray) -> np.ndarray:
    if len(x) == 0:
        return x
    return np.cumsum(x) / np.arange(1, len(x) + 1)


def emit_plots(traces: list[EpisodeTrace], out_dir: str | Path) -> list[Path]:
    """Three running-metric panels per benchmark, one series per method."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    by_env: dict[str, list[EpisodeTrace]] = {}
    for t in traces:
        by_env.setdefault(t.config.env, []).append(t)
    panels = (
        ("task_performance", "running mean task cost",
         lambda t: _running_mean(t.task_cost)),
        ("violation_cost", "running J",
         lambda t: _running_mean(t.cost)),
        ("violation_frequency", "running V",
         lambda t: _running_mean((t.h < 0.0).astype(float))),
    )
    for env, group in sorted(by_env.items()):
        for stem, label, series_fn in panels:
            series: dict[str, np.ndarray] = {}
            for t in group:
                # first trace per method defines the plotted series
                series.setdefault(t.config.method, series_fn(t))
            path = out_dir / f"{env}_{stem}.svg"
            path.write_text(line_plot_svg(series, f"{env}: {stem}", label))
            written.append(path)
    return written


def _episode_dirname(cfg: EpisodeConfig) -> str:
    return f"{cfg.env}_{cfg.method}_a{cfg.alpha:g}_b{cfg.beta:g}_g{cfg.gamma:g}_w{cfg.window}_s{cfg.seed}"


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="cacc",
        description="Closed-loop risk-calibrated control runs with guarantee audits.",
    )
    parser.add_argument("--config", metavar="PATH")
    parser.add_argument("--env", choices=ENV_NAMES)
    parser.add_argument("--method", choices=METHODS)
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--beta", type=float)
    parser.add_argument("--gamma", type=float)
    parser.add_argument("--window", type=int)
    parser.add_argument("--steps", type=int)
    parser.add_argument("--seed", metavar="N[,N...]")
    parser.add_argument("--horizon", type=int)
    parser.add_argument("--out", metavar="DIR", default="runs")
    parser.add_argument("--audit", action="store_true",
                        help="run guarantee auditors and gate the exit code on them")
    parser.add_argument("--sweep", action="store_true",
                        help="expand comma-separated sweep lists into a Cartesian product")
    args = parser.parse_args(argv)

    overrides = {
        "env": args.env, "method": args.method, "alpha": args.alpha,
        "beta": args.beta, "gamma": args.gamma, "window": args.window,
        "steps": args.steps, "seeds": args.seed, "horizon": args.horizon,
    }
    try:
        configs = parse_config(args.config, overrides, sweep=args.sweep)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    out_dir = Path(args.out)
    traces = run_many(configs)
    all_audits_pass = True
    for cfg, trace in zip(configs, traces):
        ep_dir = out_dir / _episode_dirname(cfg)
        ep_dir.mkdir(parents=True, exist_ok=True)
        report = full_audit(trace)
        write_trace_csv(trace, ep_dir / "trace.csv")
        write_summary(trace, report, ep_dir / "summary.txt")
        if args.audit and cfg.method in ("cost_aware", "standard_aci"):
            all_audits_pass &= report.all_passed
        print(
            f"{_episode_dirname(cfg)}: V_T={trace.summary['V_T']:.4f} "
            f"J_T={trace.summary['J_T']:.6f} "
            f"J_task={trace.summary['J_task_mean']:.6f} "
            f"audits={'PASS' if report.all_passed else 'FAIL'}"
        )
    emit_plots(traces, out_dir)
    if len(traces) > 1:
        try:
            table = aggregate_seeds(traces)
        except ValueError:
            table = None
        if table:
            for method, row in sorted(table.items()):
                print(
                    f"[{method}] n={row['n']} "
                    f"V={row['V_T_mean']:.4f}±{row['V_T_std']:.4f} "
                    f"J={row['J_T_mean']:.6f}±{row['J_T_std']:.6f} "
                    f"Jtask={row['J_task_mean_mean']:.6f}±{row['J_task_mean_std']:.6f}"
                )
    if args.audit and not all_audits_pass:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
