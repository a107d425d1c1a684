"""Command-line interface: every experiment as a subcommand.

Each run reads a JSON config (defaults embedded, overridable with
``--set key=value``), writes CSV/JSON artifacts plus SVG line plots into
``--out-dir``, and records a manifest with the command, config hash, seed,
library versions, and wall time. Exit codes: 0 success, 1 usage error,
2 numerical failure, 3 acceptance failure.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import json
import os
import sys
import time

import numpy as np

from . import __version__, reporting
from .acceptance import run_suite
from .core import (CollapseError, Instance, NoiseSchedule, data_entropy,
                   make_instance)
from .infotheory import conditional_total_correlation, mutual_info
from .losses import nelbo_estimate, per_timestep_ce, perplexity
from .odelik import (iwae_estimate, make_toy_selfcond_denoiser,
                     selfcond_chain_term, selfcond_divergence)
from .oracle import bayes_denoiser, draw_noisy_batch
from .rng import stream
from .samplers import SamplerConfig, run_sampler
from .scalingfit import compute_gap, isoflop_fit, powerlaw_fit
from .schedule import compute_optimum, learn_schedule, loss_curve
from .trainer import TrainConfig, train_loop, save_checkpoint


class UsageError(Exception):
    """Bad flags or config; maps to exit code 1."""


_NUMERICAL_ERRORS = (FloatingPointError, CollapseError, RuntimeError,
                     np.linalg.LinAlgError)

_INSTANCE_DEFAULTS = {"V": 6, "L": 3, "d_e": 4, "kind": "joint",
                      "gamma0": -6.0, "gamma1": 6.0}

DEFAULTS = {
    "make-instance": dict(_INSTANCE_DEFAULTS),
    "schedule-optimal": {
        "instance": None, "grid_n": 1024, "n_mc": 200000,
        "estimator": "auto",
    },
    "schedule-learn": {
        "instance": None, "n_knots": 64, "steps": 300, "lr": 0.1,
        "n_mc": 2048, "avg_tail": 0, "reference": None,
        "reference_grid_n": 256, "reference_n_mc": 20000,
    },
    "loss-curves": {
        "instance": None, "schedule": "linear", "n_t": 33, "n_mc": 20000,
        "estimator": "auto",
    },
    "info-curves": {
        "instance": None, "schedule": "linear", "n_t": 17, "n_mc": 20000,
    },
    "sample": {
        "instance": None, "schedule": "linear",
        "samplers": ["ancestral", "ddim", "dpmpp2m", "heun"],
        "T": 64, "n_samples": 20000, "temperature": 1.0,
    },
    "likelihood": {
        "instance": None, "schedule": "linear",
        "k_sweep": [1, 2, 4, 8, 16, 32], "repeats": 20, "steps": 128,
        "selfcond_a": 0.5, "chain_states": 8,
    },
    "train": {
        "instance": None,
        "train": dataclasses.asdict(TrainConfig()),
        "eval_n_t": 9, "eval_n_mc": 20000,
    },
    "scaling-fit": {
        "input": None,
        "demo": {"alpha": -0.31, "curvature": 0.7, "budgets": 6,
                 "points_per_budget": 7, "noise": 1e-3},
    },
    "verify": {"criteria": None, "scale": 1.0},
}


# ---------------------------------------------------------------------------
# config plumbing

def _merge_into(base: dict, update: dict, path: str = "") -> None:
    for key, value in update.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise UsageError(f"unknown config field {where!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            _merge_into(base[key], value, where)
        else:
            base[key] = value


def _apply_override(cfg: dict, spec: str) -> None:
    if "=" not in spec:
        raise UsageError(f"--set expects key=value, got {spec!r}")
    key, raw = spec.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = key.split(".")
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise UsageError(f"unknown config field {key!r}")
        node = node[part]
    if parts[-1] not in node:
        raise UsageError(f"unknown config field {key!r}")
    node[parts[-1]] = value


def load_config(command: str, config_path, overrides) -> dict:
    cfg = copy.deepcopy(DEFAULTS[command])
    if config_path is not None:
        try:
            with open(config_path) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config {config_path}: {exc}")
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {config_path} is not valid JSON: {exc}")
        if not isinstance(doc, dict):
            raise UsageError("config document must be a JSON object")
        _merge_into(cfg, doc)
    for spec in overrides:
        _apply_override(cfg, spec)
    return cfg


def _resolve_instance(spec, seed: int) -> Instance:
    """Instance from a saved file, an inline parameter dict, or defaults."""
    if isinstance(spec, str):
        return Instance.load(spec)
    params = dict(_INSTANCE_DEFAULTS)
    if isinstance(spec, dict):
        unknown = set(spec) - set(params)
        if unknown:
            raise UsageError(f"unknown instance fields {sorted(unknown)}")
        params.update(spec)
    return make_instance(seed=seed, **params)


def _resolve_schedule(spec, instance: Instance) -> NoiseSchedule:
    """'linear', a saved schedule JSON path, or an inline schedule dict."""
    if spec == "linear" or spec is None:
        return NoiseSchedule(instance.schedule.gamma0,
                             instance.schedule.gamma1)
    if isinstance(spec, dict):
        return NoiseSchedule.from_dict(spec)
    try:
        with open(spec) as fh:
            return NoiseSchedule.from_dict(json.load(fh))
    except OSError as exc:
        raise UsageError(f"cannot read schedule {spec}: {exc}")


def _midgrid(n: int) -> np.ndarray:
    return (np.arange(n) + 0.5) / n


def _out(out_dir: str, name: str) -> str:
    return os.path.join(out_dir, name)


# ---------------------------------------------------------------------------
# subcommands

def cmd_make_instance(cfg, seed, out_dir, workers) -> int:
    inst = make_instance(seed=seed, **cfg)
    inst.save(_out(out_dir, "instance.json"))
    marg = inst.data.marginals()
    reporting.write_csv(
        _out(out_dir, "marginals.csv"), ["position", "token", "prob"],
        [(i, v, float(marg[i, v]))
         for i in range(inst.L) for v in range(inst.V)])
    reporting.write_json(_out(out_dir, "results.json"), {
        "V": inst.V, "L": inst.L, "d_e": inst.d_e,
        "entropy": data_entropy(inst.data),
        "instance_file": "instance.json",
    })
    return 0


def cmd_schedule_optimal(cfg, seed, out_dir, workers) -> int:
    inst = _resolve_instance(cfg["instance"], seed)
    den = bayes_denoiser(inst)
    opt = compute_optimum(den, inst, inst.schedule.gamma0,
                          inst.schedule.gamma1, cfg["grid_n"], cfg["n_mc"],
                          seed, workers=workers, estimator=cfg["estimator"])
    reporting.write_json(_out(out_dir, "schedule.json"),
                         opt.schedule.to_dict())
    tg = _midgrid(129)
    gt = np.asarray(opt.schedule.shape.value(tg))
    reporting.write_csv(_out(out_dir, "gamma_star.csv"),
                        ["t", "gamma_tilde", "gamma"],
                        zip(tg, gt, np.asarray(opt.schedule.gamma(tg))))
    reporting.write_csv(_out(out_dir, "weight_curve.csv"),
                        ["gamma", "w", "w_stderr", "G"],
                        zip(opt.gamma_grid, opt.w_grid, opt.w_stderr,
                            opt.G_grid))
    reporting.write_json(_out(out_dir, "results.json"), {
        "kappa": opt.kappa, "kappa_stderr": opt.kappa_stderr,
        "schedule_file": "schedule.json",
    })
    reporting.line_plot(_out(out_dir, "gamma_star.svg"), tg,
                        {"gamma*": np.asarray(opt.schedule.gamma(tg))},
                        xlabel="t", ylabel="gamma")
    return 0


def cmd_schedule_learn(cfg, seed, out_dir, workers) -> int:
    inst = _resolve_instance(cfg["instance"], seed)
    den = bayes_denoiser(inst)
    res = learn_schedule(den, inst, np.zeros(cfg["n_knots"]),
                         steps=cfg["steps"], lr=cfg["lr"], n_mc=cfg["n_mc"],
                         rng=stream(seed, "cli-learn"), n_t=cfg["n_knots"],
                         avg_tail=cfg["avg_tail"])
    if cfg["reference"] is not None:
        ref = _resolve_schedule(cfg["reference"], inst)
    else:
        ref = compute_optimum(den, inst, inst.schedule.gamma0,
                              inst.schedule.gamma1, cfg["reference_grid_n"],
                              cfg["reference_n_mc"], seed,
                              workers=workers).schedule
    reporting.write_json(_out(out_dir, "schedule.json"),
                         res.schedule.to_dict())
    tg = _midgrid(33)
    learned = np.asarray(res.schedule.gamma(tg))
    target = np.asarray(ref.gamma(tg))
    reporting.write_csv(_out(out_dir, "learned_vs_optimal.csv"),
                        ["t", "gamma_learned", "gamma_star"],
                        zip(tg, learned, target))
    reporting.write_csv(_out(out_dir, "objective_history.csv"),
                        ["step", "objective"],
                        enumerate(res.objective_history))
    reporting.write_json(_out(out_dir, "results.json"), {
        "sup_norm_gamma": float(np.abs(learned - target).max()),
        "objective_first": res.objective_history[0],
        "objective_last": res.objective_history[-1],
    })
    reporting.line_plot(_out(out_dir, "learned_vs_optimal.svg"), tg,
                        {"learned": learned, "optimal": target},
                        xlabel="t", ylabel="gamma")
    return 0


def cmd_loss_curves(cfg, seed, out_dir, workers) -> int:
    inst = _resolve_instance(cfg["instance"], seed)
    den = bayes_denoiser(inst)
    sched = _resolve_schedule(cfg["schedule"], inst)
    estimator = cfg["estimator"]
    if estimator == "auto":
        estimator = "conditional"
    tg = _midgrid(cfg["n_t"])
    ell, ell_se = loss_curve(den, inst, sched, tg, cfg["n_mc"], seed,
                             tag="cli-loss", workers=workers,
                             estimator=estimator)
    ce_rows = [per_timestep_ce(inst, den, sched, float(t), cfg["n_mc"],
                               stream(seed, "cli-ce", i))
               for i, t in enumerate(tg)]
    reporting.write_csv(
        _out(out_dir, "loss_curves.csv"),
        ["t", "diffusion_loss", "diffusion_stderr", "ce", "ce_stderr"],
        [(float(t), float(l), float(s), r.value, r.stderr)
         for t, l, s, r in zip(tg, ell, ell_se, ce_rows)])
    reporting.write_json(_out(out_dir, "results.json"), {
        "ell_max_over_min": float(ell.max() / ell.min()),
        "ell_mean": float(ell.mean()),
    })
    reporting.line_plot(_out(out_dir, "loss_curves.svg"), tg,
                        {"diffusion loss": ell,
                         "cross entropy": [r.value for r in ce_rows]},
                        xlabel="t", ylabel="nats")
    return 0


def cmd_info_curves(cfg, seed, out_dir, workers) -> int:
    inst = _resolve_instance(cfg["instance"], seed)
    den = bayes_denoiser(inst)
    sched = _resolve_schedule(cfg["schedule"], inst)
    entropy = data_entropy(inst.data)
    tg = _midgrid(cfg["n_t"])
    n = cfg["n_mc"]
    rows = []
    for i, t in enumerate(tg):
        mi = mutual_info(inst, sched, float(t), n, stream(seed, "cli-mi", i))
        tc = conditional_total_correlation(inst, sched, float(t), n,
                                           stream(seed, "cli-tc", i))
        # schedule-free decomposition: CE(t) = H(x) - I(e;z_t) + C(x|z_t)
        ce = per_timestep_ce(inst, den, sched, float(t), n,
                             stream(seed, "cli-gap", i))
        gap = ce.value - (entropy - mi.value + tc.value)
        gap_se = float(np.sqrt(ce.stderr**2 + mi.stderr**2 + tc.stderr**2))
        rows.append((float(t), mi.value, mi.stderr, tc.value, tc.stderr,
                     gap, gap_se))
    reporting.write_csv(
        _out(out_dir, "info_curves.csv"),
        ["t", "mutual_info", "mi_stderr", "total_corr", "tc_stderr",
         "decomposition_gap", "gap_stderr"], rows)
    reporting.write_json(_out(out_dir, "results.json"), {
        "entropy": entropy,
        "worst_gap_in_se": max(abs(r[5]) / max(r[6], 1e-12) for r in rows),
    })
    reporting.line_plot(_out(out_dir, "info_curves.svg"), tg,
                        {"I(e; z_t)": [r[1] for r in rows],
                         "C(x | z_t)": [r[3] for r in rows]},
                        xlabel="t", ylabel="nats")
    return 0


def cmd_sample(cfg, seed, out_dir, workers) -> int:
    inst = _resolve_instance(cfg["instance"], seed)
    den = bayes_denoiser(inst)
    sched = _resolve_schedule(cfg["schedule"], inst)
    data_marg = inst.data.marginals()
    tv_rows, marg_rows, nfe = [], [], {}
    for kind in cfg["samplers"]:
        run = run_sampler(SamplerConfig(kind=kind, T=cfg["T"],
                                        temperature=cfg["temperature"]),
                          den, sched, inst, cfg["n_samples"],
                          stream(seed, "cli-sample", kind))
        nfe[kind] = run.nfe
        for pos in range(inst.L):
            freq = np.bincount(run.tokens[:, pos], minlength=inst.V)
            freq = freq / freq.sum()
            tv_rows.append((kind, pos,
                            0.5 * float(np.abs(freq - data_marg[pos]).sum())))
            marg_rows.extend((kind, pos, v, float(freq[v]),
                              float(data_marg[pos, v]))
                             for v in range(inst.V))
    reporting.write_csv(_out(out_dir, "sampler_tv.csv"),
                        ["sampler", "position", "tv_distance"], tv_rows)
    reporting.write_csv(_out(out_dir, "sampler_marginals.csv"),
                        ["sampler", "position", "token", "freq", "data_prob"],
                        marg_rows)
    worst = {kind: max(r[2] for r in tv_rows if r[0] == kind)
             for kind in cfg["samplers"]}
    reporting.write_json(_out(out_dir, "results.json"),
                         {"nfe": nfe, "worst_tv": worst})
    reporting.line_plot(
        _out(out_dir, "sampler_tv.svg"), list(range(len(cfg["samplers"]))),
        {"max TV": [worst[k] for k in cfg["samplers"]]},
        xlabel="sampler index (" + ", ".join(cfg["samplers"]) + ")",
        ylabel="TV distance")
    return 0


def cmd_likelihood(cfg, seed, out_dir, workers) -> int:
    inst = _resolve_instance(cfg["instance"], seed)
    den = bayes_denoiser(inst)
    sched = _resolve_schedule(cfg["schedule"], inst)
    x = inst.data.sample(1, stream(seed, "cli-lik-x"))[0]
    repeats = cfg["repeats"]

    def sweep(tag, **kw):
        vals = np.array([iwae_estimate(x, den, sched, kw.pop("K", 1),
                                       stream(seed, "cli-lik", tag, r),
                                       **kw).value
                         for r in range(repeats)])
        return float(vals.mean()), float(vals.std(ddof=1)
                                         / np.sqrt(repeats))

    k_rows = [(K, *sweep(f"k{K}", K=K, steps=cfg["steps"]))
              for K in cfg["k_sweep"]]
    reporting.write_csv(_out(out_dir, "iwae_sweep.csv"),
                        ["K", "mean", "stderr"], k_rows)

    from .odelik import DivergenceConfig
    sens_rows = [
        ("base", *sweep("base", steps=cfg["steps"])),
        ("steps_x2", *sweep("steps", steps=2 * cfg["steps"])),
        ("probes_4", *sweep("probes", steps=cfg["steps"],
                            divergence=DivergenceConfig(n_probes=4))),
        ("gaussian", *sweep("gauss", steps=cfg["steps"],
                            divergence=DivergenceConfig(probe="gaussian"))),
    ]
    reporting.write_csv(_out(out_dir, "sensitivity_sweep.csv"),
                        ["variant", "mean", "stderr"], sens_rows)

    sc_den = make_toy_selfcond_denoiser(inst, cfg["selfcond_a"], seed=seed)
    chain_rows = []
    for k in range(cfg["chain_states"]):
        rng = stream(seed, "cli-chain", k)
        g = float(rng.uniform(-3.0, 3.0))
        _, _, z = draw_noisy_batch(inst, g, 1, rng)
        closed = selfcond_divergence(z[0], g, sc_den, "closed_loop")
        opened = selfcond_divergence(z[0], g, sc_den, "open_loop_cached")
        chain_rows.append((g, float(closed) - float(opened),
                           selfcond_chain_term(z[0], g, sc_den)))
    reporting.write_csv(_out(out_dir, "chain_rule.csv"),
                        ["gamma", "closed_minus_open", "chain_term"],
                        chain_rows)
    reporting.write_json(_out(out_dir, "results.json"), {
        "iwae_best": k_rows[-1][1],
        "chain_max_abs_residual": max(abs(r[1] - r[2]) for r in chain_rows),
    })
    reporting.line_plot(_out(out_dir, "iwae_sweep.svg"),
                        [r[0] for r in k_rows],
                        {"IWAE bound": [r[1] for r in k_rows]},
                        xlabel="K", ylabel="log-likelihood bound")
    return 0


def cmd_train(cfg, seed, out_dir, workers) -> int:
    inst = _resolve_instance(cfg["instance"], seed)
    tc = TrainConfig(**cfg["train"])
    result = train_loop(inst, tc, seed=seed)
    save_checkpoint(_out(out_dir, "checkpoint.json"), result)
    reporting.write_csv(
        _out(out_dir, "training_curve.csv"),
        ["step", "recon", "diffusion", "prior", "total", "B_r", "n_sc",
         "sigma_r", "sigma_d"],
        [(r.step, r.recon, r.diffusion, r.prior, r.total, r.B_r, r.n_sc,
          r.sigma_r, r.sigma_d) for r in result.reports])
    tg = _midgrid(cfg["eval_n_t"])
    ce_rows = [per_timestep_ce(inst, result.ema_denoiser, result.schedule,
                               float(t), cfg["eval_n_mc"],
                               stream(seed, "cli-train-eval", i))
               for i, t in enumerate(tg)]
    reporting.write_csv(_out(out_dir, "trained_ce.csv"),
                        ["t", "ce", "ce_stderr"],
                        [(float(t), r.value, r.stderr)
                         for t, r in zip(tg, ce_rows)])
    reporting.write_json(_out(out_dir, "results.json"), {
        "final_total_loss": result.reports[-1].total,
        "entropy": data_entropy(inst.data),
        "checkpoint_file": "checkpoint.json",
    })
    steps = [r.step for r in result.reports]
    reporting.line_plot(_out(out_dir, "training_curve.svg"), steps,
                        {"total": [r.total for r in result.reports],
                         "diffusion": [r.diffusion for r in result.reports]},
                        xlabel="step", ylabel="loss")
    return 0


def _demo_scaling_table(demo: dict, seed: int) -> np.ndarray:
    """Planted isoFLOP bowls: rows (C, N, loss) with a known frontier."""
    rng = stream(seed, "cli-scaling-demo")
    alpha, curv = demo["alpha"], demo["curvature"]
    rows = []
    for i in range(demo["budgets"]):
        logc = np.log(10.0) * (18 + i)
        log_n_star = 0.5 * logc
        log_l_star = alpha * logc + 2.0
        for log_n in np.linspace(log_n_star - 1.5, log_n_star + 1.5,
                                 demo["points_per_budget"]):
            log_l = (curv * (log_n - log_n_star) ** 2 + log_l_star
                     + demo["noise"] * rng.standard_normal())
            rows.append((np.exp(logc), np.exp(log_n), np.exp(log_l)))
    return np.array(rows)


def cmd_scaling_fit(cfg, seed, out_dir, workers) -> int:
    if cfg["input"] is not None:
        try:
            table = np.genfromtxt(cfg["input"], delimiter=",", names=True)
        except OSError as exc:
            raise UsageError(f"cannot read input {cfg['input']}: {exc}")
        names = table.dtype.names
        if names is None or len(names) < 3:
            raise UsageError("input CSV needs a header with C, N, loss")
        table = np.stack([table[n] for n in names[:3]], axis=1)
    else:
        table = _demo_scaling_table(cfg["demo"], seed)
    budgets = np.unique(table[:, 0])
    records, frontier = [], []
    for c in budgets:
        pts = table[table[:, 0] == c][:, 1:]
        fit = isoflop_fit(pts)
        records.append({
            "C": float(c), "a": fit.a, "b": fit.b, "c": fit.c,
            "N_star": fit.n_star, "loss_star": fit.loss_star,
            "extrapolated": fit.extrapolated,
        })
        if fit.n_star is not None and not fit.extrapolated:
            frontier.append((float(c), fit.n_star, fit.loss_star))
    if len(frontier) < 2:
        raise FloatingPointError(
            "fewer than 2 valid isoFLOP minima; cannot fit power laws")
    loss_fit = powerlaw_fit([(c, l) for c, _, l in frontier])
    n_fit = powerlaw_fit([(c, n) for c, n, _ in frontier])
    reporting.write_csv(_out(out_dir, "frontier.csv"),
                        ["C", "N_star", "loss_star"], frontier)
    reporting.write_json(_out(out_dir, "scaling_fits.json"), {
        "isoflop": records,
        "loss_power_law": {"alpha": loss_fit.alpha, "beta": loss_fit.beta},
        "n_star_power_law": {"alpha": n_fit.alpha, "beta": n_fit.beta},
    })
    cs = [r[0] for r in frontier]
    reporting.line_plot(_out(out_dir, "frontier.svg"), np.log10(cs),
                        {"loss*": [r[2] for r in frontier]},
                        xlabel="log10 C", ylabel="optimal loss", logy=True)
    return 0


def cmd_verify(cfg, seed, out_dir, workers) -> int:
    criteria = cfg["criteria"]
    if criteria is not None:
        criteria = [int(c) for c in criteria]
    results = run_suite(seed=seed, out_dir=out_dir, criteria=criteria,
                        workers=workers, scale=cfg["scale"], echo=print)
    return 0 if all(r.passed for r in results) else 3


COMMANDS = {
    "make-instance": cmd_make_instance,
    "schedule-optimal": cmd_schedule_optimal,
    "schedule-learn": cmd_schedule_learn,
    "loss-curves": cmd_loss_curves,
    "info-curves": cmd_info_curves,
    "sample": cmd_sample,
    "likelihood": cmd_likelihood,
    "train": cmd_train,
    "scaling-fit": cmd_scaling_fit,
    "verify": cmd_verify,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="difflab", description=__doc__)
    parser.add_argument("--version", action="version",
                        version=f"difflab {__version__}")
    sub = parser.add_subparsers(dest="command")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None,
                       help="JSON config file; merged over defaults")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out-dir", default="out")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--set", action="append", default=[],
                       metavar="KEY=VALUE",
                       help="override one config field (JSON-parsed value)")
        if name == "make-instance":
            p.add_argument("--print-defaults", action="store_true",
                           help="dump the full default config and exit")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        if getattr(args, "print_defaults", False):
            print(json.dumps(DEFAULTS, indent=1, sort_keys=True))
            return 0
        cfg = load_config(args.command, args.config, args.set)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    out_dir = reporting.ensure_dir(args.out_dir)
    t0 = time.time()
    with np.errstate(over="raise", invalid="raise"):
        try:
            status = COMMANDS[args.command](cfg, args.seed, out_dir,
                                            args.workers)
        except UsageError as exc:
            print(f"usage error: {exc}", file=sys.stderr)
            return 1
        except _NUMERICAL_ERRORS as exc:
            print(f"numerical failure: {exc}", file=sys.stderr)
            return 2
    reporting.write_manifest(out_dir, args.command, cfg, args.seed,
                             time.time() - t0,
                             extra={"workers": args.workers})
    return status


if __name__ == "__main__":
    sys.exit(main())
