"""Chain orchestration: per-sweep call order, ladders, chains, recording.

A sweep runs, in order: optional equi-energy merge, the fixed-effect
collapsed sweep, the per-group switching steps, active-set/cache refresh,
the joint redraw of active coefficients, incremental residual-correlation
update, the noise step (robit latent redraw, or sigma^2 update plus
optional t-noise reweighting), hyperparameter updates, and recording.
Constrained groups are sampled in the zero-sum-transformed coordinates
and expanded back to the original coordinates when records are written.
"""

import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln, gammaln

from . import chainstore, tempering
from ._kernels import fixed_sweep
from .design import DesignMatrix, ObservationWeights, XtXCache, rebuild_xt_resid
from .errors import ConfigError, NotPositiveDefinite
from .fixed import (FixedEffectPrior, SigmaPrior, draw_active_beta,
                    draw_long_tail_scales, update_pi_a, update_sigma2,
                    update_tau_f2)
from .groups import (GroupDensity, GroupPrior, SwitchState, build_envelope,
                     build_zero_sum_transform, find_mode,
                     group_eigen_from_gram, switch_step)
from .noise import (NoiseConfig, draw_robit_latent, draw_t_weights,
                    logistic_log_weight)


@dataclass
class GroupConfig:
    """One group of coordinates sharing an activation variance."""

    indices: tuple
    constrained: bool = False
    pi_a: float = 0.5
    prior: GroupPrior = field(default_factory=GroupPrior)

    def __post_init__(self):
        self.indices = tuple(int(j) for j in self.indices)
        if len(set(self.indices)) != len(self.indices):
            raise ConfigError("group has repeated coordinates")
        if not 0 < self.pi_a < 1:
            raise ConfigError("group activation prior must be in (0, 1)")


@dataclass
class SamplerConfig:
    prior: FixedEffectPrior = field(default_factory=FixedEffectPrior)
    sigma_prior: SigmaPrior = field(default_factory=SigmaPrior)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    groups: tuple = ()
    sigma2_init: float | None = None
    update_sigma2: bool = True
    update_hypers: bool = True
    block_limit: int = 400
    block_size: int = 16
    eviction_age: int = 100
    n_slice: int = 2
    rebuild_period: int = 1000
    random_init: bool = False
    init_beta: np.ndarray | None = None
    mip_floor: float = 0.0
    track_switch: bool = False


class ModelLayout:
    """Internal sampling coordinates for a design with (possibly
    constrained) groups.

    Fixed-effect columns pass through unchanged; a constrained group's
    J_k columns become J_k - 1 transformed columns.  Size-1 groups are
    routed to the fixed-effect sampler with the group's own activation
    probability and an absolute slab variance.
    """

    def __init__(self, x_ext, groups=()):
        x_ext = np.asarray(x_ext, dtype=np.float64)
        n, p_ext = x_ext.shape
        taken = set()
        for g in groups:
            for j in g.indices:
                if not 0 <= j < p_ext:
                    raise ConfigError(f"group coordinate {j} out of range")
                if j in taken:
                    raise ConfigError(f"coordinate {j} in two groups")
                taken.add(j)

        self.p_ext = p_ext
        self.fixed_ext = np.array(
            [j for j in range(p_ext) if j not in taken], dtype=np.int64)
        cols = [x_ext[:, self.fixed_ext]]
        self.single_ext = []      # ext coords of size-1 groups, fixed-routed
        self.single_cfg = []
        self.groups = []          # (cfg, int_cols, ext_cols, transform M)
        next_col = len(self.fixed_ext)
        for g in groups:
            if len(g.indices) == 1:
                self.single_ext.append(g.indices[0])
                self.single_cfg.append(g)
                cols.append(x_ext[:, list(g.indices)])
                next_col += 1
                continue
            ext = np.array(sorted(g.indices), dtype=np.int64)
            block = x_ext[:, ext]
            m = None
            if g.constrained:
                m = build_zero_sum_transform(len(ext)).m
                block = block @ m
            width = block.shape[1]
            int_cols = np.arange(next_col, next_col + width, dtype=np.int64)
            next_col += width
            cols.append(block)
            self.groups.append((g, int_cols, ext, m))

        self.x_int = DesignMatrix(np.concatenate(cols, axis=1))
        self.p_int = self.x_int.p
        n_fixed = len(self.fixed_ext)
        n_single = len(self.single_ext)
        self.fixed_int = np.arange(n_fixed + n_single, dtype=np.int64)
        self.fixed_int_to_ext = np.concatenate(
            [self.fixed_ext, np.array(self.single_ext, dtype=np.int64)]
        ) if n_single else self.fixed_ext.copy()
        order = np.argsort(self.fixed_int_to_ext)
        # sweep the fixed coordinates in ascending external order
        self.fixed_sweep_order = self.fixed_int[order]
        self.ext_to_fixed_int = {
            int(e): int(i) for i, e in zip(self.fixed_int, self.fixed_int_to_ext)
        }

    def externalize(self, beta_int):
        """Sparse (indices, values) of the full-coordinate coefficient
        vector implied by the internal state."""
        idx, val = [], []
        for i in self.fixed_int:
            b = beta_int[i]
            if b != 0.0:
                idx.append(int(self.fixed_int_to_ext[i]))
                val.append(float(b))
        for _, int_cols, ext, m in self.groups:
            sub = beta_int[int_cols]
            if not np.any(sub):
                continue
            full = m @ sub if m is not None else sub
            for e, b in zip(ext, full):
                if b != 0.0:
                    idx.append(int(e))
                    val.append(float(b))
        order = np.argsort(idx)
        return (np.array(idx, dtype=np.int64)[order],
                np.array(val)[order])


@dataclass
class RunPlan:
    iters_per_chain: int = 1000
    burnin: int = 0
    chains_per_temp: int = 1
    seed: int = 0
    record_every: int = 1
    watchlist: tuple = ()
    ladder: tempering.TemperatureLadder = field(
        default_factory=tempering.TemperatureLadder)
    out_dir: str = "chains"
    workers: int = 1

    def __post_init__(self):
        if not self.iters_per_chain > self.burnin >= 0:
            raise ConfigError("need iters_per_chain > burnin >= 0")


class ChainRunner:
    """State and sweep logic for a single chain at one temperature."""

    def __init__(self, layout, y, config, rng, temperature=1.0,
                 merge_source=None, merge_states=None, plan=None,
                 trace_hook=None):
        self.layout = layout
        self.config = config
        self.rng = rng
        self.temperature = float(temperature)
        self.merge_source = merge_source
        self.merge_states = merge_states
        self.plan = plan
        self.trace_hook = trace_hook
        self.noise = config.noise

        X = layout.x_int
        n = X.n
        self.z = None
        if self.noise.is_binary:
            self.z = np.asarray(y).astype(np.int8)
            self.y = np.where(self.z == 1, 0.5, -0.5) * math.sqrt(
                self.noise.robit_sigma2)
        else:
            self.y = np.asarray(y, dtype=np.float64).copy()
        self.weights = ObservationWeights.ones(n)
        self.cache = XtXCache(X, self.weights, config.block_size,
                              config.eviction_age)

        p = layout.p_int
        self.beta = np.zeros(p)
        self.b_state = np.zeros(p, dtype=np.uint8)
        self.rb_prob = np.zeros(p)

        # per-internal-coordinate activation and slab bookkeeping
        self.pi_a_vec = np.zeros(p)
        self.slab_abs = np.zeros(p)       # absolute slab for single groups
        self.slab_scaled = np.zeros(p, dtype=bool)
        prior = config.prior
        pa = np.broadcast_to(np.asarray(prior.pi_a, dtype=float),
                             (len(layout.fixed_ext),))
        if prior.pi_a_hyper is not None:
            a, b = prior.pi_a_hyper
            pa = np.full(len(layout.fixed_ext), a / (a + b))
        self.pi_a_vec[layout.fixed_int[: len(layout.fixed_ext)]] = pa
        self.slab_scaled[layout.fixed_int[: len(layout.fixed_ext)]] = True
        for k, cfg in enumerate(layout.single_cfg):
            i = layout.fixed_int[len(layout.fixed_ext) + k]
            self.pi_a_vec[i] = cfg.pi_a
            gp = cfg.prior
            self.slab_abs[i] = gp.tau0_sq if gp.kind == "invchisq" else 1.0

        self.sigma2 = config.sigma2_init
        if self.sigma2 is None:
            var_y = float(np.var(self.y)) or 1.0
            self.sigma2 = 0.25 * var_y
        if self.noise.is_binary:
            self.sigma2 = self.noise.robit_sigma2
        self.tau_f2 = float(np.mean(np.asarray(prior.tau_f2, dtype=float)))
        self.pi_a_scalar = float(np.mean(pa)) if len(pa) else 0.5
        self.lt_scale = np.ones(p)

        self.switch_states = [SwitchState(w=False, latent=1.0)
                              for _ in layout.groups]
        self.prev_mode = [None] * len(layout.groups)

        if config.init_beta is not None:
            self._inject_external_beta(config.init_beta)
        elif config.random_init:
            k0 = min(3, len(layout.fixed_ext))
            picks = self.rng.choice(layout.fixed_int[: len(layout.fixed_ext)],
                                    size=k0, replace=False)
            for i in picks:
                self.beta[i] = self.rng.standard_normal() * math.sqrt(
                    self.sigma2)
                self.b_state[i] = 1

        self.resid_corr = rebuild_xt_resid(X, self.y, self.beta, self.weights)
        self._iter = 0
        self._since_rebuild = 0
        self.eps_ladder = None
        if plan is not None:
            self.eps_ladder = tempering.EpsilonLadder(plan.ladder.epsilon)
        self.merge_stats = {"proposed": 0, "accepted": 0}
        self.log_weight = 0.0     # logistic importance correction

    # ------------------------------------------------------------------
    def _inject_external_beta(self, beta_ext):
        beta_ext = np.asarray(beta_ext, dtype=np.float64)
        for e, i in self.layout.ext_to_fixed_int.items():
            if beta_ext[e] != 0.0:
                self.beta[i] = beta_ext[e]
                self.b_state[i] = 1

    def _effective_slab(self):
        v = np.where(self.slab_scaled,
                     self.sigma2 * self.tau_f2 * self.lt_scale,
                     self.slab_abs)
        for k, (_, int_cols, _, _) in enumerate(self.layout.groups):
            sw = self.switch_states[k]
            v[int_cols] = sw.tau2 if sw.w else 1.0
        return v

    def _active_indices(self):
        return np.flatnonzero(self.b_state == 1).astype(np.int64)

    # ------------------------------------------------------------------
    def _step_merge(self):
        if self.merge_source is None or self.plan is None:
            return
        if self._iter == 0 or self._iter % self.plan.ladder.merge_period:
            return
        self._trace("merge")
        cur_lp = self._log_posterior()
        prop = tempering.propose_merge(cur_lp, self.merge_source,
                                       self.eps_ladder, self.rng)
        if prop is None:
            return
        (chain_id, pos), cand_lp = prop
        self.merge_stats["proposed"] += 1
        if tempering.accept_merge(cand_lp, cur_lp, self.rng,
                                  self.temperature):
            self.merge_stats["accepted"] += 1
            self._load_state(chain_id, pos)

    def _load_state(self, chain_id, pos):
        """Replace the chain state with a stored draw (sparse round-trip)."""
        st = self.merge_states[chain_id]
        idx, vals = st["beta"][pos]
        self.beta[:] = 0.0
        self.b_state[:] = 0
        self.beta[idx] = vals
        self.b_state[idx] = 1
        gidx, gvals = st["tau"][pos]
        for k, sw in enumerate(self.switch_states):
            g_pos = np.searchsorted(gidx, k)
            if g_pos < len(gidx) and gidx[g_pos] == k:
                sw.w = True
                sw.tau2 = float(gvals[g_pos])
                sw.latent = sw.tau2
                for i in self.layout.groups[k][1]:
                    self.b_state[i] = 1
            else:
                sw.w = False
                sw.tau2 = 0.0
        self.sigma2, self.pi_a_scalar = st["hyper"][pos]
        if self.config.prior.pi_a_hyper is not None:
            self.pi_a_vec[self.layout.fixed_int[: len(self.layout.fixed_ext)]] \
                = self.pi_a_scalar
        for j in self._active_indices():
            self.cache.ensure_column(int(j), self._iter)
        self.resid_corr = rebuild_xt_resid(self.layout.x_int, self.y,
                                           self.beta, self.weights)

    # ------------------------------------------------------------------
    def _step_fixed_b(self):
        self._trace("fixed_b")
        lay = self.layout
        if len(lay.fixed_int) == 0:
            return
        u = self.rng.random(lay.p_int)
        slab = self._effective_slab()
        fixed_sweep(self.resid_corr.xt_resid, self.beta, self.b_state, u,
                    self.pi_a_vec, slab, self.sigma2,
                    1.0 / self.temperature, self.cache.weighted_ssq(),
                    self.cache, lay.fixed_sweep_order, self.rb_prob,
                    self._iter)

    def _group_density(self, k):
        cfg, int_cols, _, _ = self.layout.groups[k]
        rows = [self.cache.ensure_column(int(j), self._iter)
                for j in int_cols]
        gram = np.stack([r[int_cols] for r in rows])
        gram = 0.5 * (gram + gram.T)
        xtr = self.resid_corr.xt_resid[int_cols] + gram @ self.beta[int_cols]
        ge = group_eigen_from_gram(gram, xtr)
        odds = (math.log(cfg.pi_a) - math.log1p(-cfg.pi_a)) / self.temperature
        return GroupDensity(ge, cfg.prior, sigma2=self.sigma2,
                            temperature=self.temperature,
                            log_odds_offset=odds)

    def _step_groups(self):
        if not self.layout.groups:
            return
        self._trace("group_tau")
        for k, (cfg, int_cols, _, _) in enumerate(self.layout.groups):
            dens = self._group_density(k)
            x_max, boundary = find_mode(dens)
            self.prev_mode[k] = x_max
            env = build_envelope(dens, x_max=x_max, boundary=boundary)
            sw = self.switch_states[k]
            was_on = sw.w
            if sw.latent <= 0 or not math.isfinite(sw.latent):
                sw.latent = env.x_max
            switch_step(sw, env, dens, self.rng, n_slice=self.config.n_slice,
                        track=self.config.track_switch)
            if was_on and not sw.w:
                # deactivation zeroes the group and restores the residual
                sub = self.beta[int_cols]
                if np.any(sub):
                    rows = self.cache.pool[self.cache.col_row[int_cols]]
                    self.resid_corr.xt_resid += sub @ rows
                self.beta[int_cols] = 0.0
                self.b_state[int_cols] = 0
            elif sw.w:
                # newly activated coefficients enter at zero and are
                # redrawn jointly at sweep end
                self.b_state[int_cols] = 1

    def _step_refresh(self):
        self._trace("refresh_active")
        active = self._active_indices()
        for j in active:
            self.cache.ensure_column(int(j), self._iter)
        self.cache.evict_stale(self._iter, active)
        return active

    def _step_joint_beta(self, active):
        self._trace("fill_q")
        if len(active) == 0:
            self._trace("draw_beta")
            self._trace("xtresid")
            return
        slab = self._effective_slab()
        prior_diag = self.sigma2 / slab[active]
        rows = self.cache.col_row[active]
        S = self.cache.pool[rows][:, active]
        m = self.resid_corr.xt_resid[active] + S @ self.beta[active]
        self._trace("draw_beta")
        new_beta = draw_active_beta(active, self.cache, m, self.sigma2,
                                    prior_diag, self.rng,
                                    self.config.block_limit,
                                    self.temperature)
        self._trace("xtresid")
        delta = new_beta - self.beta[active]
        self.resid_corr.xt_resid -= delta @ self.cache.pool[rows]
        self.beta[active] = new_beta
        self._since_rebuild += 1
        if self._since_rebuild >= self.config.rebuild_period:
            self.resid_corr = rebuild_xt_resid(self.layout.x_int, self.y,
                                               self.beta, self.weights)
            self._since_rebuild = 0

    def _step_noise(self, active):
        self._trace("noise")
        X = self.layout.x_int
        lin_pred = X.values @ self.beta
        resid = self.y - lin_pred
        w = self.weights.w
        refresh = (self._iter % self.noise.weight_refresh_period) == 0

        if self.noise.is_binary:
            sigma = math.sqrt(self.noise.robit_sigma2)
            self.y = draw_robit_latent(self.z, lin_pred, sigma,
                                       self.noise.nu, self.rng,
                                       current=self.y,
                                       temperature=self.temperature)
            resid = self.y - lin_pred
            if refresh:
                w_new = draw_t_weights(resid, self.noise.robit_sigma2,
                                       self.noise.nu, self.rng,
                                       temperature=self.temperature)
                self.weights.set(w_new)
            self._post_weight_refresh()
            if self.noise.kind == "logistic":
                self.log_weight = logistic_log_weight(lin_pred, self.z)
        else:
            if self.config.update_sigma2:
                rss = float(np.sum(w * resid * resid))
                scaled = active[self.slab_scaled[active]] if len(active) else active
                betas = self.beta[scaled]
                pdiag = 1.0 / (self.tau_f2 * self.lt_scale[scaled]) \
                    if len(scaled) else np.zeros(0)
                self.sigma2 = update_sigma2(
                    rss, X.n, betas, pdiag,
                    SigmaPrior(self.config.sigma_prior.scale,
                               self.config.sigma_prior.dof),
                    self.rng, temperature=self.temperature)
            if self.noise.kind == "student_t" and refresh:
                w_new = draw_t_weights(resid, self.sigma2, self.noise.nu,
                                       self.rng,
                                       temperature=self.temperature)
                self.weights.set(w_new)
                self._post_weight_refresh()

        if self.config.update_hypers:
            prior = self.config.prior
            if prior.pi_a_hyper is not None:
                fixed_scaled = self.layout.fixed_int[: len(self.layout.fixed_ext)]
                n_active = int(np.sum(self.b_state[fixed_scaled]))
                self.pi_a_scalar = update_pi_a(
                    n_active, len(fixed_scaled), prior.pi_a_hyper, self.rng,
                    temperature=self.temperature)
                self.pi_a_vec[fixed_scaled] = self.pi_a_scalar
            if prior.tau_f_hyper is not None:
                scaled = active[self.slab_scaled[active]] if len(active) else []
                self.tau_f2 = update_tau_f2(self.beta[scaled], self.sigma2,
                                            self.rng, prior.tau_f_hyper)
            if prior.long_tail_dof:
                self.lt_scale = draw_long_tail_scales(
                    self.layout.p_int, prior.long_tail_dof, self.rng)

    def _post_weight_refresh(self):
        # weight epochs invalidate cached columns lazily; the residual
        # correlation must be rebuilt against the new weights now
        self.resid_corr = rebuild_xt_resid(self.layout.x_int, self.y,
                                           self.beta, self.weights)

    # ------------------------------------------------------------------
    def _log_posterior(self):
        """Unnormalized log posterior of the current parameter set.

        Computed on the untempered scale so energies match across ladder
        levels.
        """
        X = self.layout.x_int
        w = self.weights.w
        resid = self.y - X.values @ self.beta
        pos = w > 0
        lp = -0.5 * float(np.sum(w * resid * resid)) / self.sigma2 \
            - 0.5 * X.n * math.log(2.0 * math.pi * self.sigma2) \
            + 0.5 * float(np.sum(np.log(w[pos])))

        slab = self._effective_slab()
        for i in self.layout.fixed_int:
            pa = self.pi_a_vec[i]
            if self.b_state[i]:
                v = slab[i]
                lp += math.log(pa) - 0.5 * math.log(2.0 * math.pi * v) \
                    - 0.5 * self.beta[i] ** 2 / v
            else:
                lp += math.log1p(-pa) if pa < 1 else -np.inf

        for k, (cfg, int_cols, _, _) in enumerate(self.layout.groups):
            sw = self.switch_states[k]
            if sw.w:
                t2 = sw.tau2
                lp += math.log(cfg.pi_a) + cfg.prior.log_density(t2)
                sub = self.beta[int_cols]
                lp += -0.5 * len(int_cols) * math.log(2.0 * math.pi * t2) \
                    - 0.5 * float(sub @ sub) / t2
            else:
                lp += math.log1p(-cfg.pi_a)

        sp = self.config.sigma_prior
        half = 0.5 * sp.dof
        lp += half * math.log(sp.scale * half) - gammaln(half) \
            - (half + 1.0) * math.log(self.sigma2) \
            - half * sp.scale / self.sigma2
        prior = self.config.prior
        if prior.pi_a_hyper is not None:
            a, b = prior.pi_a_hyper
            pa = min(max(self.pi_a_scalar, 1e-12), 1 - 1e-12)
            lp += (a - 1) * math.log(pa) + (b - 1) * math.log1p(-pa) \
                - betaln(a, b)
        if prior.tau_f_hyper is not None:
            sh, sc = prior.tau_f_hyper
            lp += sh * math.log(sc) - gammaln(sh) \
                - (sh + 1.0) * math.log(self.tau_f2) - sc / self.tau_f2
        return lp

    def _unbounded_draws(self, watch_int):
        draws = np.empty(len(watch_int))
        wssq = self.cache.weighted_ssq()
        slab = self._effective_slab()
        for m, i in enumerate(watch_int):
            ssq = wssq[i]
            r = self.resid_corr.xt_resid[i] + ssq * self.beta[i]
            denom = ssq + self.sigma2 / slab[i]
            mean = r / denom
            sd = math.sqrt(self.temperature * self.sigma2 / denom)
            draws[m] = mean + sd * self.rng.standard_normal()
        return draws

    # ------------------------------------------------------------------
    def sweep(self):
        self._step_merge()
        self._step_fixed_b()
        self._step_groups()
        active = self._step_refresh()
        self._step_joint_beta(active)
        self._step_noise(active)
        self._iter += 1

    def _trace(self, name):
        if self.trace_hook is not None:
            self.trace_hook(name)

    def run(self, files=None, iters=1000, burnin=0, record_every=1,
            watchlist=(), anneal_to=None, anneal_period=0):
        """Run sweeps, recording post-burnin draws to ``files``."""
        lay = self.layout
        watch_int = np.array([lay.ext_to_fixed_int[int(j)] for j in watchlist],
                             dtype=np.int64)
        base_t = self.temperature
        for t in range(iters):
            if anneal_to is not None and anneal_period and t > 0 \
                    and t % anneal_period == 0:
                self.temperature = anneal_to
                self.sweep()
                self.temperature = base_t
            else:
                self.sweep()
            if files is not None and t >= burnin \
                    and (t - burnin) % record_every == 0:
                self._record(files, t, watch_int)
        return self

    def _record(self, files, t, watch_int):
        self._trace("record")
        lay = self.layout
        idx, vals = lay.externalize(self.beta)
        files.writers["beta"].append_draw(t, idx, vals)

        g_on = [(k, self.switch_states[k].tau2)
                for k in range(len(lay.groups)) if self.switch_states[k].w]
        files.writers["tau"].append_draw(
            t, np.array([k for k, _ in g_on], dtype=np.int64),
            np.array([v for _, v in g_on]))

        floor = self.config.mip_floor
        fi = lay.fixed_sweep_order
        probs = self.rb_prob[fi]
        keep = probs > floor if floor > 0 else np.ones(len(fi), dtype=bool)
        keep &= probs > 0
        ext = lay.fixed_int_to_ext[fi][keep]
        order = np.argsort(ext)
        files.writers["mip"].append_draw(t, ext[order], probs[keep][order])

        lp = self._log_posterior()
        chainstore.append_energy(files.writers["energy"], t, lp)
        files.writers["hyper"].append(t, self.sigma2, self.pi_a_scalar)
        if len(watch_int):
            files.writers["unbounded"].append_row(
                self._unbounded_draws(watch_int))


# ---------------------------------------------------------------------------
# ladder orchestration

def _chain_rng(seed, temp_index, chain_index):
    return np.random.default_rng([seed, temp_index, chain_index])


def _run_single_chain(layout, y, config, plan, ti, ci, temp, anneal_to,
                      directory, prev_source, prev_states):
    files = chainstore.ChainFileSet(directory).open(
        layout.p_ext, len(layout.groups), plan.watchlist)
    runner = ChainRunner(layout, y, config, _chain_rng(plan.seed, ti, ci),
                         temperature=temp, merge_source=prev_source,
                         merge_states=prev_states, plan=plan)
    runner.run(files, plan.iters_per_chain, plan.burnin, plan.record_every,
               plan.watchlist, anneal_to=anneal_to,
               anneal_period=plan.ladder.anneal_period)
    files.close()
    chainstore.sort_energy_index(files.paths["energy"])
    return runner.merge_stats


def _load_merge_states(file_sets):
    """Sparse stored states of a completed temperature, by chain."""
    states = []
    for fs in file_sets:
        beta = [(idx, vals) for _, idx, vals
                in chainstore.iter_records(fs.paths["beta"])]
        tau = [(idx, vals) for _, idx, vals
               in chainstore.iter_records(fs.paths["tau"])]
        hyper = chainstore.read_hyper(fs.paths["hyper"])
        states.append({
            "beta": beta,
            "tau": tau,
            "hyper": [(row["sigma2"], row["pi_a"]) for row in hyper],
        })
    return states


def run_plan(x, y, config, plan, trace_hook=None):
    """Execute a full temperature ladder; returns per-chain file sets.

    Temperatures run top-down; chains within one temperature are
    independently seeded and may run in any order.  At each level below
    the top, merges read the completed level above.
    """
    layout = x if isinstance(x, ModelLayout) else ModelLayout(x, config.groups)
    ladder = plan.ladder
    all_files = []
    prev_source = None
    prev_states = None
    for ti, temp in enumerate(ladder.temps):
        dirs = [os.path.join(plan.out_dir, f"t{ti}_c{ci}")
                for ci in range(plan.chains_per_temp)]
        anneal_to = ladder.temps[ti + 1] if ti + 1 < len(ladder.temps) else None

        if plan.workers > 1:
            from joblib import Parallel, delayed

            Parallel(n_jobs=plan.workers)(
                delayed(_run_single_chain)(
                    layout, y, config, plan, ti, ci, temp, anneal_to,
                    dirs[ci], prev_source, prev_states)
                for ci in range(plan.chains_per_temp))
        else:
            for ci in range(plan.chains_per_temp):
                files = chainstore.ChainFileSet(dirs[ci]).open(
                    layout.p_ext, len(layout.groups), plan.watchlist)
                runner = ChainRunner(layout, y, config,
                                     _chain_rng(plan.seed, ti, ci),
                                     temperature=temp,
                                     merge_source=prev_source,
                                     merge_states=prev_states,
                                     plan=plan, trace_hook=trace_hook)
                runner.run(files, plan.iters_per_chain, plan.burnin,
                           plan.record_every, plan.watchlist,
                           anneal_to=anneal_to,
                           anneal_period=ladder.anneal_period)
                files.close()
                chainstore.sort_energy_index(files.paths["energy"])

        sets = [chainstore.ChainFileSet(d) for d in dirs]
        all_files.append(sets)
        prev_source = tempering.MergeSource.from_files(
            [fs.paths["energy"] for fs in sets])
        prev_states = _load_merge_states(sets)
    return all_files
