"""Acceptance suite: fifteen oracle-backed checks gating the library.

Each criterion is a standalone function returning a CriterionResult with a
pass flag and a JSON-serializable detail record. Expensive shared work (the
tabulated optimal schedule on the reference instances) is computed once per
Suite. Every random draw goes through seeded substreams, so a fixed seed
gives byte-identical result files.
"""

from __future__ import annotations

import math
import os
import tempfile
import time
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .core import (Instance, LinearShape, MonotoneParametricShape,
                   NoiseSchedule, alpha_sigma_of_gamma, data_entropy,
                   make_instance, schedule_eval, tiny_instance)
from .infotheory import (ce_decomposition_residual,
                         conditional_total_correlation, immse_residual,
                         mutual_info)
from .losses import ce_at_gamma, nelbo_estimate
from .odelik import (DivergenceConfig, _assemble_records, _simulate,
                     divergence_exact, divergence_hutchinson, iwae_estimate,
                     make_toy_selfcond_denoiser, selfcond_chain_term,
                     selfcond_divergence, velocity_gamma, velocity_t)
from .oracle import BayesDenoiser, Denoiser, draw_noisy_batch
from .quadrature import logp_model_quadrature, mmse_quadrature
from .rng import stream
from .samplers import (Dpmpp2mState, SamplerConfig, ddim_step, dpmpp2m_step,
                       heun_ve_step, run_sampler)
from .scalingfit import (compute_gap, embed_flops_ratio, isoflop_fit,
                         powerlaw_fit)
from .schedule import (compute_optimum, learn_schedule, loss_curve,
                       loss_variance_over_t)
from .trainer import (ToyDenoiser, TrainConfig, adaptive_split,
                      network_loss_and_grad, prepare_batch, train_loop)
from . import reporting

CRITERION_NAMES = {
    1: "schedule-flatness",
    2: "mean-invariance",
    3: "learned-schedule",
    4: "info-decay",
    5: "i-mmse",
    6: "ce-decomposition",
    7: "nelbo-bound",
    8: "sampler-fidelity",
    9: "solver-orders",
    10: "ode-likelihood",
    11: "selfcond-chain-rule",
    12: "trainer",
    13: "scaling-fits",
    14: "flops-ratio",
    15: "determinism",
}


@dataclass
class CriterionResult:
    cid: int
    name: str
    passed: bool
    details: dict

    def to_dict(self) -> dict:
        return {"cid": self.cid, "name": self.name, "passed": self.passed,
                "details": self.details}


def _midgrid(n: int) -> np.ndarray:
    """n strata midpoints in (0, 1); keeps every node off the endpoints,
    where the tabulated schedule derivative and the Monte-Carlo MSE are
    ill-conditioned."""
    return (np.arange(n) + 0.5) / n


class Suite:
    """Shared fixtures and per-criterion runners.

    `scale` < 1 shrinks the Monte-Carlo budgets proportionally for smoke
    runs; acceptance uses scale=1.
    """

    def __init__(self, seed: int = 0, workers: int = 1, out_dir=None,
                 scale: float = 1.0):
        self.seed = int(seed)
        self.workers = int(workers)
        self.out_dir = out_dir
        self.scale = float(scale)
        self._cache = {}

    # -- budget & plumbing helpers -------------------------------------------

    def n(self, base: int, floor: int = 512) -> int:
        return max(int(base * self.scale), floor)

    def rng(self, *tags):
        return stream(self.seed, *tags)

    def _artifact(self, name: str, header, rows) -> None:
        if self.out_dir is None:
            return
        reporting.ensure_dir(self.out_dir)
        reporting.write_csv(os.path.join(self.out_dir, name), header, rows)

    # -- shared fixtures -------------------------------------------------------

    @property
    def desk(self) -> Instance:
        if "desk" not in self._cache:
            self._cache["desk"] = make_instance(seed=self.seed)
        return self._cache["desk"]

    @property
    def desk_den(self) -> BayesDenoiser:
        if "desk_den" not in self._cache:
            self._cache["desk_den"] = BayesDenoiser(self.desk)
        return self._cache["desk_den"]

    @property
    def fact(self) -> Instance:
        if "fact" not in self._cache:
            self._cache["fact"] = make_instance(seed=self.seed,
                                                kind="factorized")
        return self._cache["fact"]

    @property
    def fact_den(self) -> BayesDenoiser:
        if "fact_den" not in self._cache:
            self._cache["fact_den"] = BayesDenoiser(self.fact)
        return self._cache["fact_den"]

    @property
    def tiny(self) -> Instance:
        if "tiny" not in self._cache:
            self._cache["tiny"] = tiny_instance(seed=self.seed)
        return self._cache["tiny"]

    @property
    def tiny_den(self) -> BayesDenoiser:
        if "tiny_den" not in self._cache:
            self._cache["tiny_den"] = BayesDenoiser(self.tiny)
        return self._cache["tiny_den"]

    def optimum(self):
        """Tabulated optimal schedule for the desk instance (cached)."""
        if "optimum" not in self._cache:
            self._cache["optimum"] = compute_optimum(
                self.desk_den, self.desk, -6.0, 6.0, 1024,
                self.n(200000), seed=self.seed, workers=self.workers)
        return self._cache["optimum"]

    def fact_optimum(self):
        if "fact_optimum" not in self._cache:
            self._cache["fact_optimum"] = compute_optimum(
                self.fact_den, self.fact, -6.0, 6.0, 512,
                self.n(100000), seed=self.seed, workers=self.workers)
        return self._cache["fact_optimum"]

    def linear_schedule(self) -> NoiseSchedule:
        return NoiseSchedule(-6.0, 6.0, LinearShape())

    # -- criteria ---------------------------------------------------------------

    def criterion_1(self) -> CriterionResult:
        """Loss-flattening schedule: ell(t) constant at kappa; linear
        schedule shows strong contrast."""
        opt = self.optimum()
        tg = _midgrid(33)
        vals, ses = loss_curve(self.desk_den, self.desk, opt.schedule, tg,
                               self.n(200000), seed=self.seed,
                               tag="flat-curve", workers=self.workers,
                               estimator="conditional")
        rel = np.abs(vals - opt.kappa) / opt.kappa
        lin_vals, _ = loss_curve(self.desk_den, self.desk,
                                 self.linear_schedule(), tg, self.n(20000),
                                 seed=self.seed, tag="flat-contrast",
                                 workers=self.workers,
                                 estimator="conditional")
        contrast = float(lin_vals.max() / lin_vals.min())
        self._artifact("flatness_curve.csv",
                       ["t", "loss", "stderr", "loss_linear"],
                       zip(tg, vals, ses, lin_vals))
        passed = bool(rel.max() < 0.02 and contrast > 1.5)
        return CriterionResult(1, CRITERION_NAMES[1], passed, {
            "kappa": opt.kappa, "max_rel_dev": float(rel.max()),
            "tolerance": 0.02, "linear_contrast": contrast,
            "contrast_floor": 1.5})

    def _mean_diffusion_loss(self, sched: NoiseSchedule, n_mc: int, tag: str):
        """E_t[ell(t)] over stratified t with the conditional estimator."""
        rng = self.rng(tag)
        inst, den = self.desk, self.desk_den
        u = rng.uniform()
        ts = (np.arange(n_mc) + u) / n_mc
        samples = np.empty(n_mc)
        done = 0
        while done < n_mc:
            m = min(20000, n_mc - done)
            sl = slice(done, done + m)
            ev = schedule_eval(sched, ts[sl])
            tokens = inst.data.sample(m, rng)
            e = inst.embed(tokens)
            z = (ev.alpha[:, None, None] * e
                 + ev.sigma[:, None, None] * rng.standard_normal(e.shape))
            cv = den.conditional_embedding_variance(z, np.asarray(ev.gamma))
            samples[sl] = -0.5 * np.asarray(ev.snr_prime) * cv
            done += m
        return float(samples.mean()), float(samples.std(ddof=1) / np.sqrt(n_mc))

    def criterion_2(self) -> CriterionResult:
        """The mean diffusion loss depends only on the endpoints, not the
        interior shape."""
        n = self.n(200000)
        m_lin, se_lin = self._mean_diffusion_loss(self.linear_schedule(), n,
                                                  "mean-lin")
        m_opt, se_opt = self._mean_diffusion_loss(self.optimum().schedule, n,
                                                  "mean-opt")
        joint = math.hypot(se_lin, se_opt)
        diff = abs(m_lin - m_opt)
        passed = bool(diff < 3.0 * joint)
        return CriterionResult(2, CRITERION_NAMES[2], passed, {
            "mean_linear": m_lin, "mean_optimal": m_opt, "abs_diff": diff,
            "joint_stderr": joint, "tolerance_se": 3.0})

    def criterion_3(self) -> CriterionResult:
        """Variance-minimizing learner recovers the loss-flattening shape
        from a linear initialization."""
        opt = self.optimum()
        inst, den = self.desk, self.desk_den
        # 256 knots: the sup-norm displacement of the best shape inside a
        # K-knot piecewise-linear family from the tabulated optimum is
        # ~0.044 at K=64 and ~0.007 at K=256, so the 2% tolerance needs the
        # fine family; one stratum per segment feeds every knot each step
        n_knots = 256
        init = np.zeros(n_knots)  # softplus-linear increments: linear shape
        lin = self.linear_schedule()
        pre_var, pre_se = loss_variance_over_t(
            den, inst, lin, 32, self.n(20000), seed=self.seed,
            tag="lrn-pre", estimator="conditional")
        steps = int(3000 * max(self.scale, 0.05))
        res = learn_schedule(den, inst, init, steps=steps,
                             lr=0.1, n_mc=self.n(8192, floor=1024),
                             rng=self.rng("learn-schedule"), n_t=n_knots)
        # short low-rate phase with tail averaging to kill the noise floor
        res = learn_schedule(den, inst, res.params, steps=max(steps // 3, 10),
                             lr=0.02, n_mc=self.n(8192, floor=1024),
                             rng=self.rng("learn-schedule", "anneal"),
                             n_t=n_knots, avg_tail=max(steps // 4, 5))
        post_var, post_se = loss_variance_over_t(
            den, inst, res.schedule, 32, self.n(20000), seed=self.seed,
            tag="lrn-post", estimator="conditional")
        tg = _midgrid(33)
        learned = np.asarray(res.schedule.shape.value(tg))
        target = np.asarray(opt.schedule.shape.value(tg))
        sup = float(np.abs(learned - target).max())
        self._artifact("learned_shape.csv",
                       ["t", "gamma_tilde_learned", "gamma_tilde_optimal"],
                       zip(tg, learned, target))
        passed = bool(sup < 0.02
                      and post_var <= pre_var + 3.0 * math.hypot(pre_se, post_se))
        return CriterionResult(3, CRITERION_NAMES[3], passed, {
            "sup_norm": sup, "tolerance": 0.02, "var_pre": pre_var,
            "var_post": post_var, "var_pre_se": pre_se,
            "var_post_se": post_se})

    def criterion_4(self) -> CriterionResult:
        """Mutual information decays linearly at rate kappa under the
        loss-flattening schedule."""
        opt = self.optimum()
        inst = self.desk
        n = self.n(20000)
        i0 = mutual_info(inst, opt.schedule, 0.0, n, self.rng("info-i0"))
        tg = _midgrid(17)
        rows = []
        ok = True
        for k, t in enumerate(tg):
            it = mutual_info(inst, opt.schedule, float(t), n,
                             self.rng("info-decay", k))
            pred = i0.value - opt.kappa * t
            joint = math.sqrt(it.stderr**2 + i0.stderr**2
                              + (t * opt.kappa_stderr) ** 2)
            dev = abs(it.value - pred)
            ok = ok and dev <= 3.0 * joint
            rows.append((float(t), it.value, it.stderr, pred, dev, joint))
        self._artifact("info_decay.csv",
                       ["t", "mutual_info", "stderr", "linear_prediction",
                        "abs_dev", "joint_stderr"], rows)
        worst = max(r[4] / r[5] for r in rows)
        return CriterionResult(4, CRITERION_NAMES[4], bool(ok), {
            "i0": i0.value, "kappa": opt.kappa, "worst_dev_in_se": worst,
            "tolerance_se": 3.0, "n_points": len(tg)})

    def criterion_5(self) -> CriterionResult:
        """Gaussian-channel identity dI/dnu = MMSE/2, plus a quadrature
        cross-check on the scalar instance."""
        lin = self.linear_schedule()
        gammas = [-2.0, -1.0, 0.0, 1.0, 2.0]
        rows = []
        ok = True
        for k, g in enumerate(gammas):
            t = (g + 6.0) / 12.0
            nu = float(np.exp(-g))
            r = immse_residual(self.desk, lin, t, dnu=0.01 * nu,
                               n_mc=self.n(50000), rng=self.rng("immse", k))
            rel = r.residual / r.half_mmse
            ok = ok and rel < 0.05
            rows.append((g, nu, r.di_dnu, r.half_mmse, rel))
        # scalar instance: MC derivative against deterministic quadrature
        g_tiny = 0.0
        r = immse_residual(self.tiny, lin, 0.5, dnu=0.01,
                           n_mc=self.n(50000), rng=self.rng("immse-tiny"))
        half_quad = 0.5 * mmse_quadrature(self.tiny, g_tiny)
        quad_dev = abs(r.di_dnu - half_quad)
        quad_ok = quad_dev <= 3.0 * r.di_stderr
        self._artifact("immse.csv",
                       ["gamma", "nu", "di_dnu", "half_mmse", "rel_residual"],
                       rows)
        return CriterionResult(5, CRITERION_NAMES[5], bool(ok and quad_ok), {
            "max_rel_residual": max(r[4] for r in rows), "tolerance": 0.05,
            "tiny_di_dnu": r.di_dnu, "tiny_half_mmse_quadrature": half_quad,
            "tiny_dev": quad_dev, "tiny_di_stderr": r.di_stderr})

    def criterion_6(self) -> CriterionResult:
        """Cross-entropy decomposition: CE(t) = H - I0 + kappa t + C(t);
        C vanishes on factorized data, making CE linear."""
        opt = self.optimum()
        inst = self.desk
        n = self.n(20000)
        i0 = mutual_info(inst, opt.schedule, 0.0, self.n(100000),
                         self.rng("ced-i0"))
        tg = _midgrid(9)
        gap_ok = True
        c_vals, c_ses, rows = [], [], []
        for k, t in enumerate(tg):
            r = ce_decomposition_residual(inst, opt.schedule, float(t),
                                          opt.kappa, n, self.rng("ced", k),
                                          denoiser=self.desk_den, i0=i0,
                                          kappa_stderr=opt.kappa_stderr)
            gap_ok = gap_ok and abs(r.gap) <= 3.0 * r.stderr
            tc = conditional_total_correlation(inst, opt.schedule, float(t),
                                               n, self.rng("ced-c", k))
            c_vals.append(tc.value)
            c_ses.append(tc.stderr)
            rows.append((float(t), r.ce, r.trend, r.c_cond, r.gap, r.stderr,
                         tc.value, tc.stderr))
        mono_ok = all(c_vals[i + 1] >= c_vals[i]
                      - 2.0 * math.hypot(c_ses[i], c_ses[i + 1])
                      for i in range(len(c_vals) - 1))
        self._artifact("ce_decomposition.csv",
                       ["t", "ce", "trend", "c_cond", "gap", "gap_stderr",
                        "c", "c_stderr"], rows)

        # factorized contrast: C == 0 and CE linear in t
        fopt = self.fact_optimum()
        fce, fc_ok = [], True
        for k, t in enumerate(tg):
            tc = conditional_total_correlation(self.fact, fopt.schedule,
                                               float(t), n,
                                               self.rng("ced-f", k))
            fc_ok = fc_ok and abs(tc.value) <= 3.0 * tc.stderr
            ce = ce_at_gamma(self.fact, self.fact_den,
                             float(fopt.schedule.gamma(t)), n,
                             self.rng("ced-fce", k))
            fce.append(ce.value)
        fce = np.asarray(fce)
        design = np.stack([tg, np.ones_like(tg)], axis=1)
        coef, *_ = np.linalg.lstsq(design, fce, rcond=None)
        resid = fce - design @ coef
        r2 = 1.0 - float((resid**2).sum() / ((fce - fce.mean()) ** 2).sum())
        passed = bool(gap_ok and mono_ok and fc_ok and r2 > 0.999)
        return CriterionResult(6, CRITERION_NAMES[6], passed, {
            "gap_ok": bool(gap_ok), "c_monotone_ok": bool(mono_ok),
            "factorized_c_zero_ok": bool(fc_ok), "factorized_ce_r2": r2,
            "r2_floor": 0.999})

    def criterion_7(self) -> CriterionResult:
        """The NELBO of the exact-posterior denoiser upper-bounds the data
        entropy; all three parts are nonnegative."""
        res = nelbo_estimate(self.desk, self.desk_den,
                             self.optimum().schedule, self.n(100000),
                             self.rng("nelbo"))
        hx = data_entropy(self.desk.data)
        parts_ok = (res.prior >= 0.0 and res.recon.value >= 0.0
                    and res.diffusion.value >= 0.0)
        passed = bool(res.value >= hx - 3.0 * res.stderr and parts_ok)
        return CriterionResult(7, CRITERION_NAMES[7], passed, {
            "nelbo": res.value, "stderr": res.stderr, "data_entropy": hx,
            "prior": res.prior, "recon": res.recon.value,
            "diffusion": res.diffusion.value})

    def _sampler_tv(self, T: int, n_samples: int, tag: str) -> float:
        cfg = SamplerConfig(kind="ancestral", T=T)
        run = run_sampler(cfg, self.desk_den, self.optimum().schedule,
                          self.desk, n_samples, self.rng(tag))
        inst = self.desk
        marg = inst.data.marginals()
        tv = 0.0
        for pos in range(inst.L):
            counts = np.bincount(run.tokens[:, pos], minlength=inst.V)
            tv = max(tv, 0.5 * np.abs(counts / n_samples - marg[pos]).sum())
        return float(tv)

    def criterion_8(self) -> CriterionResult:
        """Ancestral sampler reproduces the data marginals at fine
        discretization and degrades when coarse."""
        n = self.n(100000)
        tv_fine = self._sampler_tv(256, n, "sample-fine")
        tv_coarse = self._sampler_tv(16, n, "sample-coarse")
        passed = bool(tv_fine < 0.02 and tv_coarse > tv_fine)
        return CriterionResult(8, CRITERION_NAMES[8], passed, {
            "tv_T256": tv_fine, "tv_T16": tv_coarse, "tolerance": 0.02})

    def criterion_9(self) -> CriterionResult:
        """Deterministic solvers show their convergence orders on a linear
        prediction field; multistep first step coincides with the
        one-step solver bit-for-bit."""
        inst = self.desk
        sched = self.linear_schedule()
        rng = self.rng("solver-orders")
        d_e = inst.d_e
        A = 0.35 * _random_orthogonal(d_e, rng) @ np.diag(
            rng.uniform(0.3, 0.9, size=d_e))

        class LinearFieldDenoiser(Denoiser):
            embedding_matrix = inst.embedding.matrix

            def predict_embedding(self, z, gamma, x_sc=None):
                return np.asarray(z) @ A.T

            def rows(self, z, gamma, x_sc=None):
                raise NotImplementedError("analytic fixture has no decoder")

        den = LinearFieldDenoiser()
        z_init = rng.standard_normal((4, inst.L, d_e))
        t_min = 1e-3
        shape = z_init.shape

        def rhs(t, y):
            return velocity_t(y.reshape(shape), float(t), den,
                              sched).reshape(-1)

        sol = solve_ivp(rhs, (1.0, t_min), z_init.reshape(-1),
                        rtol=1e-12, atol=1e-12, dense_output=False)
        if not sol.success:
            raise RuntimeError("reference PFODE solve failed")
        z_ref = sol.y[:, -1].reshape(shape)

        def terminal(kind: str, T: int) -> np.ndarray:
            grid = np.linspace(1.0, t_min, T + 1)
            z = z_init.copy()
            state = Dpmpp2mState()
            for i in range(T):
                hi, lo = float(grid[i]), float(grid[i + 1])
                if kind == "ddim":
                    z = ddim_step(z, hi, lo, den, sched)
                elif kind == "dpmpp2m":
                    z, state = dpmpp2m_step(z, state, hi, lo, den, sched)
                else:
                    z = heun_ve_step(z, hi, lo, den, sched,
                                     is_last=(i == T - 1))
            return z

        Ts = [16, 32, 64, 128]
        details = {}
        ok = True
        for kind, band in (("ddim", (1.7, 2.4)), ("dpmpp2m", (3.0, 5.0)),
                           ("heun", (3.0, 5.0))):
            errs = [float(np.linalg.norm(terminal(kind, T) - z_ref))
                    for T in Ts]
            ratios = [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]
            details[f"{kind}_errors"] = errs
            details[f"{kind}_ratios"] = ratios
            ok = ok and all(band[0] <= r <= band[1] for r in ratios)

        # first multistep update must equal the one-step solver exactly
        g = np.linspace(1.0, t_min, 17)
        z1, _ = dpmpp2m_step(z_init, Dpmpp2mState(), float(g[0]), float(g[1]),
                             den, sched)
        z1_ddim = ddim_step(z_init, float(g[0]), float(g[1]), den, sched)
        bit_equal = bool(np.array_equal(z1, z1_ddim))

        run = run_sampler(SamplerConfig(kind="heun", T=16), self.desk_den,
                          sched, inst, 8, self.rng("solver-nfe"))
        nfe_ok = run.nfe == 32
        details.update({"dpmpp_first_step_bit_equal": bit_equal,
                        "heun_nfe_T16": run.nfe})
        return CriterionResult(9, CRITERION_NAMES[9],
                               bool(ok and bit_equal and nfe_ok), details)

    def criterion_10(self) -> CriterionResult:
        """Likelihood machinery identities: coordinate invariance, trace
        estimator calibration, monotone importance-sampling bounds, and a
        quadrature cross-check."""
        inst, den = self.desk, self.desk_den
        lin = self.linear_schedule()
        details = {}

        # (a) gamma-space vs t-space log-weights on a shared z0 batch
        rng = self.rng("ode-coords")
        xs = inst.data.sample(16, rng)
        a0, s0 = alpha_sigma_of_gamma(lin.gamma0)
        e = inst.embed(xs)
        z0 = a0 * e + s0 * rng.standard_normal(e.shape)
        exact = DivergenceConfig(method="exact")
        rels = []
        zT_g, div_g = _simulate(z0, den, lin, 512, exact, None,
                                coords="gamma")
        zT_t, div_t = _simulate(z0, den, lin, 512, exact, None,
                                coords="t")
        for k in range(16):
            rec_g = _assemble_records(xs[k], z0[k:k + 1], zT_g[k:k + 1],
                                      div_g[k:k + 1], den, lin)[0]
            rec_t = _assemble_records(xs[k], z0[k:k + 1], zT_t[k:k + 1],
                                      div_t[k:k + 1], den, lin)[0]
            rels.append(abs(rec_g.log_w - rec_t.log_w)
                        / max(abs(rec_g.log_w), 1e-12))
        coords_ok = max(rels) < 1e-3
        details["coords_max_rel"] = float(max(rels))

        # (b) randomized trace vs exact divergence at random states; both
        # sides share O(h^2) truncation error, hence the absolute slack
        rng = self.rng("ode-trace")
        hutch_ok = True
        worst = 0.0
        for k in range(32):
            g = float(rng.uniform(-5.0, 5.0))
            _, _, z = draw_noisy_batch(inst, g, 1, rng)
            field = lambda zz: velocity_gamma(zz, g, den)
            ex = divergence_exact(field, z[0])
            est = divergence_hutchinson(field, z[0], n_probes=10000,
                                        rng=rng)
            slack = 3.0 * est.stderr + 1e-5 * max(1.0, abs(ex))
            dev = abs(est.value - ex) / slack
            worst = max(worst, dev)
            hutch_ok = hutch_ok and dev <= 1.0
        details["trace_worst_dev_in_slack"] = worst

        # (c) importance-sample count sweep (desk instance, one sequence)
        x_desk = inst.data.sample(1, self.rng("iwae-x"))[0]
        repeats = max(int(50 * self.scale), 10)
        Ks = [1, 2, 4, 8, 16, 32]
        means, ses = [], []
        for K in Ks:
            vals = [iwae_estimate(x_desk, den, lin, K,
                                  self.rng("iwae", K, r)).value
                    for r in range(repeats)]
            vals = np.asarray(vals)
            means.append(float(vals.mean()))
            ses.append(float(vals.std(ddof=1) / np.sqrt(repeats)))
        mono_ok = all(means[i + 1] >= means[i]
                      - 2.0 * math.hypot(ses[i], ses[i + 1])
                      for i in range(len(Ks) - 1))
        details["iwae_means"] = means
        details["iwae_stderrs"] = ses

        # (d) large-K estimate against 1-D quadrature on the scalar
        # instance.  The solver bias is O(steps^-2) and would dominate the
        # Monte Carlo noise at any fixed step count, so each repeat is
        # Richardson-extrapolated over a step doubling with shared noise.
        tden, tinst = self.tiny_den, self.tiny
        tsched = self.linear_schedule()
        x = np.array([0])
        lp = logp_model_quadrature(tinst, x, tsched.gamma0)
        big = []
        for r in range(5):
            coarse = iwae_estimate(x, tden, tsched, 1024,
                                   self.rng("iwae-big", r), steps=512).value
            fine = iwae_estimate(x, tden, tsched, 1024,
                                 self.rng("iwae-big", r), steps=1024).value
            big.append(fine + (fine - coarse) / 3.0)
        big = np.asarray(big)
        big_se = float(big.std(ddof=1) / np.sqrt(len(big)))
        # the 2e-6 floor absorbs the fixed truncation from stopping the
        # reverse flow at t_min before the readout term
        quad_ok = abs(float(big.mean()) - lp) <= 3.0 * big_se + 2e-6
        details.update({"iwae_k1024": float(big.mean()),
                        "iwae_k1024_se": big_se, "logp_quadrature": lp})

        # (e) estimator sensitivity at K=1 (desk instance)
        def k1_mean(tag, **kw):
            vals = [iwae_estimate(x_desk, den, lin, 1,
                                  self.rng("iwae-sens", tag, r), **kw).value
                    for r in range(repeats)]
            vals = np.asarray(vals)
            return float(vals.mean()), float(vals.std(ddof=1)
                                             / np.sqrt(repeats))

        base, base_se = k1_mean("base")
        sens_ok = True
        for tag, kw in (("steps", {"steps": 256}),
                        ("probes", {"divergence": DivergenceConfig(n_probes=4)}),
                        ("gauss", {"divergence": DivergenceConfig(probe="gaussian")})):
            m, se = k1_mean(tag, **kw)
            shift = abs(m - base) / math.hypot(se, base_se)
            sens_ok = sens_ok and shift < 3.0
            details[f"sens_{tag}_shift_in_se"] = shift

        passed = bool(coords_ok and hutch_ok and mono_ok and quad_ok
                      and sens_ok)
        return CriterionResult(10, CRITERION_NAMES[10], passed, details)

    def criterion_11(self) -> CriterionResult:
        """Self-conditioning makes the velocity's divergence pick up a
        composition term; dropping it biases the log-weight with a
        predictable sign."""
        inst = self.desk
        den = make_toy_selfcond_denoiser(inst, a=0.5, seed=self.seed)
        den0 = make_toy_selfcond_denoiser(inst, a=0.0, seed=self.seed)
        rng = self.rng("chain-states")
        ok = True
        worst = 0.0
        chain_terms = []
        for k in range(16):
            g = float(rng.uniform(-3.0, 3.0))
            _, _, z = draw_noisy_batch(inst, g, 1, rng)
            z = z[0]
            closed = divergence_hutchinson(
                lambda zz: velocity_gamma(zz, g, den), z,
                n_probes=2000, rng=self.rng("chain-h", k, 0))
            x_sc = den.bootstrap(z, g)
            opened = divergence_hutchinson(
                lambda zz: velocity_gamma(zz, g, den, x_sc=x_sc), z,
                n_probes=2000, rng=self.rng("chain-h", k, 1))
            chain = selfcond_chain_term(z, g, den)
            chain_terms.append(chain)
            diff = closed.value - opened.value
            se = math.hypot(closed.stderr, opened.stderr)
            dev = abs(diff - chain) / max(se, 1e-12)
            worst = max(worst, dev)
            ok = ok and dev <= 3.0
            # zero coupling: the two divergences coincide exactly
            d_closed = selfcond_divergence(z, g, den0, "closed_loop")
            d_open = selfcond_divergence(z, g, den0, "open_loop_cached")
            ok = ok and abs(d_closed - d_open) < 1e-8

        # induced log-weight bias: open-loop minus closed-loop shift
        rng = self.rng("chain-bias")
        xs = inst.data.sample(8, rng)
        diffs = []
        for k in range(8):
            rc = _logweight_mode(xs[k], den, self.linear_schedule(),
                                 self.rng("chain-lw", k), "closed_loop")
            ro = _logweight_mode(xs[k], den, self.linear_schedule(),
                                 self.rng("chain-lw", k), "open_loop_cached")
            diffs.append(rc.log_w - ro.log_w)
        mean_bias = float(np.mean(diffs))
        mean_chain = float(np.mean(chain_terms))
        sign_ok = (abs(mean_bias) > 1e-6
                   and math.copysign(1, mean_bias) == math.copysign(1, mean_chain))
        passed = bool(ok and sign_ok)
        return CriterionResult(11, CRITERION_NAMES[11], passed, {
            "worst_dev_in_se": worst, "mean_logw_bias": mean_bias,
            "mean_chain_term": mean_chain, "sign_consistent": bool(sign_ok)})

    def criterion_12(self) -> CriterionResult:
        """Trainer: analytic gradients check out, and a full run reaches
        near-oracle cross-entropy with a near-optimal learned schedule."""
        inst = self.fact
        cfg = TrainConfig()
        details = {}

        # gradient check on a fresh network
        den = ToyDenoiser(inst.embedding.matrix, width=cfg.width,
                          seed=self.seed)
        rng = self.rng("gradcheck")
        batch = inst.data.sample(16, rng)
        sched = NoiseSchedule(-6.0, 6.0, MonotoneParametricShape(np.zeros(8)))
        draw = prepare_batch(batch, den, sched, inst.embedding.matrix, 4,
                             0.25, rng)
        _, _, grad = network_loss_and_grad(den, sched,
                                           inst.embedding.matrix, draw)

        def loss_at(params):
            probe = den.clone()
            probe.set_params(params)
            total, _, _ = network_loss_and_grad(probe, sched,
                                                inst.embedding.matrix, draw)
            return total

        p0 = den.get_params()
        idx = rng.choice(len(p0), size=64, replace=False)
        h = 1e-5
        max_rel = 0.0
        for j in idx:
            dp = np.zeros_like(p0)
            dp[j] = h
            fd = (loss_at(p0 + dp) - loss_at(p0 - dp)) / (2 * h)
            rel = abs(fd - grad[j]) / max(abs(fd), abs(grad[j]), 1e-8)
            max_rel = max(max_rel, rel)
        grad_ok = max_rel < 1e-5
        details["grad_max_rel"] = max_rel

        # full training run; the schedule needs fine knots because the
        # flattening shape is steep where the weight w collapses
        steps = max(int(cfg.steps * self.scale), 500)
        cfg = TrainConfig(steps=steps, n_sched_knots=128)
        result = train_loop(inst, cfg, seed=self.seed)
        formulas_ok = all(
            r.n_sc == math.ceil(cfg.p_sc * cfg.B)
            and 1 <= r.B_r <= cfg.B - 1
            and r.B_r == adaptive_split(cfg.B, r.sigma_r_used, r.sigma_d_used)
            for r in result.reports)
        details["split_formulas_ok"] = bool(formulas_ok)

        trained = result.ema_denoiser
        inst2 = Instance(vocab=inst.vocab, embedding=result.embedding,
                         data=inst.data, schedule=result.schedule,
                         seed=inst.seed)
        oracle = BayesDenoiser(inst2)
        tg = _midgrid(9)
        rels = []
        for k, t in enumerate(tg):
            g = float(result.schedule.gamma(t))
            ce_tr = ce_at_gamma(inst2, trained, g, self.n(20000),
                                self.rng("tr-ce", k))
            ce_or = ce_at_gamma(inst2, oracle, g, self.n(20000),
                                self.rng("tr-ce-or", k))
            rels.append(abs(ce_tr.value - ce_or.value) / ce_or.value)
        ce_ok = max(rels) < 0.05
        details["ce_max_rel"] = float(max(rels))

        post = compute_optimum(trained, inst2, -6.0, 6.0, 256,
                               self.n(20000), seed=self.seed,
                               workers=self.workers)
        tg33 = _midgrid(33)
        learned = np.asarray(result.schedule.shape.value(tg33))
        target = np.asarray(post.schedule.shape.value(tg33))
        sup = float(np.abs(learned - target).max())
        sched_ok = sup < 0.05
        details["shape_sup_norm"] = sup
        self._artifact("trainer_shape.csv",
                       ["t", "gamma_tilde_learned", "gamma_tilde_posthoc"],
                       zip(tg33, learned, target))
        passed = bool(grad_ok and formulas_ok and ce_ok and sched_ok)
        return CriterionResult(12, CRITERION_NAMES[12], passed, details)

    def criterion_13(self) -> CriterionResult:
        """Quadratic/power-law fits recover planted coefficients, vertices,
        and a planted compute-gap readout."""
        details = {}
        # exact quadratic recovery
        a, b, c = 0.7, -19.0, 130.0
        ns = np.exp(np.linspace(10.0, 16.0, 7))
        losses = np.exp(a * np.log(ns) ** 2 + b * np.log(ns) + c)
        fit = isoflop_fit(list(zip(ns, losses)))
        exact_dev = max(abs(fit.a - a), abs(fit.b - b), abs(fit.c - c))
        details["quadratic_dev"] = float(exact_dev)
        # exact power law
        cs = np.exp(np.linspace(1.0, 8.0, 6))
        ls = np.exp(-0.31 * np.log(cs) + 2.2)
        pfit = powerlaw_fit(list(zip(cs, ls)))
        pl_dev = max(abs(pfit.alpha + 0.31), abs(pfit.beta - 2.2))
        details["powerlaw_dev"] = float(pl_dev)
        # noisy vertex recovery
        rng = self.rng("scaling-noise")
        n_star_true = float(np.exp(-b / (2 * a)))
        worst_vertex = 0.0
        for _ in range(100):
            noisy = np.exp(np.log(losses) + 1e-3 * rng.standard_normal(7))
            nf = isoflop_fit(list(zip(ns, noisy)))
            worst_vertex = max(worst_vertex,
                               abs(nf.n_star - n_star_true) / n_star_true)
        details["vertex_worst_rel"] = worst_vertex
        # planted compute-gap readout
        alpha = -0.31
        gap_true = 14.0
        beta_b = 2.2
        beta_a = beta_b + (-alpha) * np.log(gap_true)
        la = np.exp(alpha * np.log(cs) + beta_a)
        lb = np.exp(alpha * np.log(cs) + beta_b)
        gap = compute_gap(powerlaw_fit(list(zip(cs, la))),
                          powerlaw_fit(list(zip(cs, lb))))
        details["gap"] = gap
        passed = bool(exact_dev < 1e-10 and pl_dev < 1e-12
                      and worst_vertex < 0.02
                      and abs(gap - gap_true) / gap_true < 0.03)
        return CriterionResult(13, CRITERION_NAMES[13], passed, details)

    def criterion_14(self) -> CriterionResult:
        """Softmax-over-vocabulary vs embedding-readout FLOPs ratio at the
        reference operating point."""
        ratio = embed_flops_ratio(50000, 768, 16)
        passed = bool(abs(ratio - 47.3) <= 0.1)
        return CriterionResult(14, CRITERION_NAMES[14], passed,
                               {"ratio": ratio, "target": 47.3,
                                "tolerance": 0.1})

    def criterion_15(self) -> CriterionResult:
        """Identical seeds give byte-identical result files (manifest wall
        time excluded). Checked on the fast subset to stay in budget."""
        subset = [9, 13, 14]
        mismatches = []
        with tempfile.TemporaryDirectory() as tmp:
            dirs = [os.path.join(tmp, d) for d in ("run_a", "run_b")]
            for d in dirs:
                run_suite(seed=self.seed, out_dir=d, criteria=subset,
                          workers=self.workers, scale=self.scale)
            names = sorted(os.listdir(dirs[0]))
            names_b = sorted(os.listdir(dirs[1]))
            if names != names_b:
                mismatches.append("file lists differ")
            for name in names:
                if name == "manifest.json":  # contains wall time by design
                    continue
                with open(os.path.join(dirs[0], name), "rb") as fh:
                    blob_a = fh.read()
                with open(os.path.join(dirs[1], name), "rb") as fh:
                    blob_b = fh.read()
                if blob_a != blob_b:
                    mismatches.append(name)
        passed = not mismatches
        return CriterionResult(15, CRITERION_NAMES[15], passed,
                               {"subset": subset, "mismatches": mismatches})

    def run(self, cid: int) -> CriterionResult:
        return getattr(self, f"criterion_{cid}")()


def _random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def _logweight_mode(x, den, sched, rng, mode):
    from .odelik import integrate_logweight
    a0, s0 = alpha_sigma_of_gamma(sched.gamma0)
    e = den.embedding_matrix[np.asarray(x)]
    z0 = a0 * e + s0 * rng.standard_normal(e.shape)
    return integrate_logweight(x, den, sched, z0=z0, steps=64,
                               divergence=DivergenceConfig(method="exact"),
                               selfcond_mode=mode)


def run_suite(seed: int = 0, out_dir=None, criteria=None, workers: int = 1,
              scale: float = 1.0, echo=None) -> list:
    """Run the requested criteria (all 15 by default) and write results.

    Returns the list of CriterionResult. When out_dir is given, writes
    results.json and results.csv plus per-criterion artifact CSVs.
    """
    if criteria is None:
        criteria = sorted(CRITERION_NAMES)
    suite = Suite(seed=seed, workers=workers, out_dir=out_dir, scale=scale)
    results = []
    for cid in criteria:
        t0 = time.time()
        res = suite.run(cid)
        if echo is not None:
            status = "PASS" if res.passed else "FAIL"
            echo(f"[{status}] {res.cid:2d} {res.name} "
                 f"({time.time() - t0:.1f}s)")
        results.append(res)
    if out_dir is not None:
        reporting.ensure_dir(out_dir)
        reporting.write_json(os.path.join(out_dir, "results.json"),
                             [_jsonable(r.to_dict()) for r in results])
        reporting.write_csv(os.path.join(out_dir, "results.csv"),
                            ["cid", "name", "passed"],
                            [(r.cid, r.name, int(r.passed)) for r in results])
    return results


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj
