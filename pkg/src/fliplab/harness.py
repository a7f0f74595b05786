"""Experiment configs, the parallel trial runner, and CSV reporting.

Every experiment is a pure function of (config, master seed): trials draw
from streams derived by trial index, the parallel map preserves index
order, and aggregation runs single-threaded afterwards, so results are
byte-identical for any worker count.  Aggregate rows carry the master
seed and the grid-point label; together with the trial index scheme that
is enough to replay any single trial in isolation.
"""

import dataclasses
import functools
import io
import itertools
import math
import multiprocessing
import os

import numpy as np

from .activations import make_activation, perturbed_product_moment
from .attack import (
    StepRule,
    fgsm_step,
    perturbation_bound_multi_layer,
    perturbation_bound_two_layer,
    success_prob_limit_two_layer,
)
from .conditioning import multilayer_layer_stats, two_layer_coefficients
from .network import sample_network
from .numerics import derive_stream, wilson_interval
from .theory import (
    certificate_check,
    empirical_process_sup,
    stein_check,
)

WORKERS_ENV_VAR = "FLIPLAB_WORKERS"

EXPERIMENT_KINDS = (
    "flip-sweep", "decompose", "layer-stats", "theorem3", "stein",
    "ep-sup", "bounds", "calibrate-constants",
)

# 5% one-sample KS critical scale: statistic threshold is this / sqrt(n).
KS_CRITICAL_SCALE = 1.3581


def default_workers():
    raw = os.environ.get(WORKERS_ENV_VAR, "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    activation: str = "relu"
    d: int = 2000
    m: int = 2000
    dims: tuple | None = None  # overrides (d, m, 1) when given
    s0_values: tuple = (1.0,)
    xi: float | None = None  # certified step rule / certificate target
    trials: int = 100
    seed: int = 1
    workers: int = 1
    out: str | None = None
    delta_values: tuple = (0.1,)  # ep-sup box radii; bounds failure prob
    grid_per_axis: int = 5
    x1: float = 0.0  # stein mean
    x2: float = 1.0  # stein variance
    tail_c: float = 0.1
    tail_c0: float = 10.0
    dudley_c: float = 1.0
    ratio_c: float = 3.0

    def network_dims(self):
        return tuple(self.dims) if self.dims else (self.d, self.m, 1)

    def validate(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if not self.s0_values:
            raise ValueError("s0 grid must be non-empty")
        if not self.delta_values:
            raise ValueError("delta grid must be non-empty")
        if any(not s > 0.0 for s in self.s0_values):
            raise ValueError(f"step sizes must be positive: {self.s0_values}")
        dims = self.network_dims()
        if len(dims) < 3 or dims[-1] != 1 or any(w < 1 for w in dims[:-1]):
            raise ValueError(f"invalid dims {dims}")
        make_activation(self.activation)  # raises on unknown names

    def step_size(self, act):
        """Resolve the scalar step for single-step experiments."""
        if self.xi is not None:
            rule = StepRule.certified(self.xi, self.tail_c, self.tail_c0)
            dims = self.network_dims()
            return rule.resolve(act, dims[0], dims[1])[0]
        return float(self.s0_values[0])


@dataclasses.dataclass(frozen=True, eq=False)
class TrialRecord:
    trial: int
    seed: int
    label: str  # grid-point label, e.g. "s0=2"
    values: dict


@dataclasses.dataclass(frozen=True, eq=False)
class SweepResult:
    kind: str
    columns: tuple
    rows: tuple  # aggregate tuples aligned with columns, one per grid point
    records: tuple  # per-trial records, trial-index order


def _format_cell(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def render_csv(result):
    """RFC-4180-style text: quoted only when needed, LF endings."""
    out = io.StringIO()
    needs_quote = ('"', ",", "\n", "\r")

    def write_row(cells):
        rendered = []
        for cell in cells:
            text = _format_cell(cell)
            if any(ch in text for ch in needs_quote):
                text = '"' + text.replace('"', '""') + '"'
            rendered.append(text)
        out.write(",".join(rendered) + "\n")

    write_row(result.columns)
    for row in result.rows:
        if len(row) != len(result.columns):
            raise ValueError(
                f"row width {len(row)} does not match schema "
                f"{len(result.columns)}")
        write_row(row)
    return out.getvalue()


def emit_csv(result, path):
    text = render_csv(result)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _parallel_map(fn, n_trials, workers):
    if workers <= 1 or n_trials <= 1:
        return [fn(t) for t in range(n_trials)]
    try:
        ctx = multiprocessing.get_context("fork")
    except ValueError:
        ctx = multiprocessing.get_context()
    chunk = max(1, n_trials // (workers * 4))
    with ctx.Pool(workers) as pool:
        return pool.map(fn, range(n_trials), chunksize=chunk)


def _mean_stderr(values):
    arr = np.asarray(values, dtype=np.float64)
    arr = arr[np.isfinite(arr)]
    if arr.size == 0:
        return math.nan, math.nan
    mean = float(np.mean(arr))
    if arr.size == 1:
        return mean, math.nan
    return mean, float(np.std(arr, ddof=1) / math.sqrt(arr.size))


def _dims_label(dims):
    return "x".join(str(v) for v in dims)


# --------------------------------------------------------------- trial bodies
# Module level and driven by (payload, trial_index) so the pool can pickle
# them; payload holds only plain dataclasses and tuples.

def _flip_trial(payload, trial):
    act, dims, s0_values, seed = payload
    stream = derive_stream(seed, trial)
    net = sample_network(dims, stream.substream("net"))
    x = stream.substream("x").standard_normal(dims[0])
    records = []
    for s0 in s0_values:
        o = fgsm_step(net, act, x, s0)
        records.append(TrialRecord(
            trial=trial, seed=seed, label=f"s0={s0:g}",
            values={
                "s0": s0, "tau": o.tau, "flipped": o.flipped,
                "degenerate": o.degenerate, "ratio": o.ratio,
                "grad_norm": o.grad_norm, "f_x": o.f_x, "f_xs": o.f_xs,
            }))
    return records


def _decompose_trial(payload, trial):
    act, d, m, s_d, seed = payload
    stream = derive_stream(seed, trial)
    net = sample_network((d, m, 1), stream.substream("net"))
    x = stream.substream("x").standard_normal(d)
    coef = two_layer_coefficients(net, act, x, s_d, stream.substream("cond"))
    st = coef.stats
    return [TrialRecord(
        trial=trial, seed=seed, label=f"s0={s_d:g}",
        values={
            "mu": st.mu, "beta": st.beta, "gamma": st.gamma,
            "tau": coef.tau, "tau_beta": coef.tau * st.beta,
            "mu_hat": coef.mu_hat, "beta_hat": coef.beta_hat,
            "gamma_hat": coef.gamma_hat,
            "tau_beta_hat": coef.tau * coef.beta_hat,
            "u_ks": coef.u_ks, "recon_rel_err": coef.recon_rel_err,
            "overlap": st.overlap, "residual": st.residual,
            "degenerate": coef.degenerate,
        })]


def _layer_trial(payload, trial):
    act, dims, s_d, seed = payload
    stream = derive_stream(seed, trial)
    net = sample_network(dims, stream.substream("net"))
    x = stream.substream("x").standard_normal(dims[0])
    rows = multilayer_layer_stats(net, act, x, s_d, stream.substream("cond"))
    records = []
    for st in rows:
        records.append(TrialRecord(
            trial=trial, seed=seed, label=f"layer={st.layer}",
            values={
                "layer": st.layer, "mu": st.mu, "beta": st.beta,
                "gamma": st.gamma, "nu": st.nu, "eta_norm": st.eta_norm,
                "y_norm": st.y_norm, "overlap": st.overlap,
                "residual": st.residual,
                "delta_next": math.nan if st.delta_next is None
                else st.delta_next,
            }))
    return records


def _ep_trial(payload, trial):
    act, m, delta_values, grid, dudley_c, seed = payload
    stream = derive_stream(seed, trial)
    records = []
    for delta in delta_values:
        est = empirical_process_sup(act, m, delta, grid, stream, dudley_c)
        records.append(TrialRecord(
            trial=trial, seed=seed, label=f"delta={delta:g}",
            values={
                "delta": delta, "sup_abs": est.sup_abs,
                "envelope": est.dudley_envelope,
                "violation": est.sup_abs > est.dudley_envelope,
            }))
    return records


# ------------------------------------------------------------ kind executors

def _run_flip_sweep(cfg, act):
    dims = cfg.network_dims()
    payload = (act, dims, tuple(cfg.s0_values), cfg.seed)
    nested = _parallel_map(
        functools.partial(_flip_trial, payload), cfg.trials, cfg.workers)
    records = tuple(itertools.chain.from_iterable(nested))
    depth_one = len(dims) == 3
    rows = []
    for s0 in cfg.s0_values:
        recs = [r for r in records if r.values["s0"] == s0]
        flips = sum(1 for r in recs if r.values["flipped"])
        degenerate = sum(1 for r in recs if r.values["degenerate"])
        low, high = wilson_interval(flips, len(recs))
        mean_ratio, se_ratio = _mean_stderr([r.values["ratio"] for r in recs])
        mean_grad, _ = _mean_stderr([r.values["grad_norm"] for r in recs])
        limit = success_prob_limit_two_layer(act, s0) if depth_one else None
        rows.append((
            cfg.activation, _dims_label(dims), s0, len(recs), flips,
            flips / len(recs), low, high, limit, mean_ratio, se_ratio,
            mean_grad, degenerate, cfg.seed,
        ))
    columns = (
        "activation", "dims", "s0", "trials", "flips", "flip_rate",
        "wilson_low", "wilson_high", "predicted_limit", "mean_ratio",
        "stderr_ratio", "mean_grad_norm", "degenerate", "seed",
    )
    return columns, tuple(rows), records


def _run_decompose(cfg, act):
    s_d = cfg.step_size(act)
    payload = (act, cfg.d, cfg.m, s_d, cfg.seed)
    nested = _parallel_map(
        functools.partial(_decompose_trial, payload), cfg.trials, cfg.workers)
    records = tuple(itertools.chain.from_iterable(nested))
    vals = lambda key: [r.values[key] for r in records]
    mean_mu, se_mu = _mean_stderr(vals("mu"))
    mean_abs_mu, _ = _mean_stderr([abs(v) for v in vals("mu")])
    mean_tb, se_tb = _mean_stderr(vals("tau_beta"))
    mean_tbh, se_tbh = _mean_stderr(vals("tau_beta_hat"))
    mean_g, se_g = _mean_stderr(vals("gamma"))
    mean_re, _ = _mean_stderr(vals("recon_rel_err"))
    ks_crit = KS_CRITICAL_SCALE / math.sqrt(cfg.m)
    ks_vals = [v for v in vals("u_ks") if not math.isnan(v)]
    pass_rate = (sum(1 for v in ks_vals if v < ks_crit) / len(ks_vals)
                 if ks_vals else math.nan)
    row = (
        cfg.activation, cfg.d, cfg.m, s_d, len(records), mean_mu, se_mu,
        mean_abs_mu, mean_tb, se_tb, mean_tbh, se_tbh, mean_g, se_g,
        mean_re, max(vals("recon_rel_err"), default=math.nan), pass_rate,
        sum(1 for r in records if r.values["degenerate"]), cfg.seed,
    )
    columns = (
        "activation", "d", "m", "s_d", "trials", "mean_mu", "stderr_mu",
        "mean_abs_mu", "mean_tau_beta", "stderr_tau_beta",
        "mean_tau_beta_hat", "stderr_tau_beta_hat", "mean_gamma",
        "stderr_gamma", "mean_recon_err", "max_recon_err", "u_ks_pass_rate",
        "degenerate", "seed",
    )
    return columns, (row,), records


def _run_layer_stats(cfg, act):
    dims = cfg.network_dims()
    s_d = cfg.step_size(act)
    payload = (act, dims, s_d, cfg.seed)
    nested = _parallel_map(
        functools.partial(_layer_trial, payload), cfg.trials, cfg.workers)
    records = tuple(itertools.chain.from_iterable(nested))
    rows = []
    n_layers = len(dims) - 2
    for layer in range(1, n_layers + 1):
        recs = [r for r in records if r.values["layer"] == layer]
        width = dims[layer]
        stats = {}
        for key in ("mu", "beta", "gamma", "overlap", "residual"):
            stats[key] = _mean_stderr([r.values[key] for r in recs])
        mean_nu, _ = _mean_stderr([r.values["nu"] for r in recs])
        mean_eta, _ = _mean_stderr([r.values["eta_norm"] for r in recs])
        mean_y, _ = _mean_stderr([r.values["y_norm"] for r in recs])
        mean_abs_delta, _ = _mean_stderr(
            [abs(r.values["delta_next"]) for r in recs])
        rows.append((
            cfg.activation, _dims_label(dims), s_d, layer, width, len(recs),
            *stats["mu"], *stats["beta"], *stats["gamma"], mean_nu, mean_eta,
            mean_y, *stats["overlap"], *stats["residual"], mean_abs_delta,
            mean_abs_delta * width if not math.isnan(mean_abs_delta) else None,
            cfg.seed,
        ))
    columns = (
        "activation", "dims", "s_d", "layer", "width", "trials",
        "mean_mu", "stderr_mu", "mean_beta", "stderr_beta", "mean_gamma",
        "stderr_gamma", "mean_nu", "mean_eta_norm", "mean_y_norm",
        "mean_overlap", "stderr_overlap", "mean_residual", "stderr_residual",
        "mean_abs_delta", "delta_width_product", "seed",
    )
    return columns, tuple(rows), records


def _run_theorem3(cfg, act):
    xi = cfg.xi if cfg.xi is not None else 0.05
    report = certificate_check(
        act, xi, cfg.d, cfg.m, cfg.tail_c, cfg.tail_c0, cfg.grid_per_axis)
    row = [
        cfg.activation, report.xi, report.d, report.m, report.c, report.c0,
        report.s_d, report.q_tilde, report.q_floor, report.d_threshold_tail,
        report.d_threshold_process, report.d_threshold_moment,
        report.m_threshold, report.xi_threshold,
    ]
    columns = [
        "activation", "xi", "d", "m", "c", "c0", "s_d", "q_tilde",
        "q_floor", "d_threshold_tail", "d_threshold_process",
        "d_threshold_moment", "m_threshold", "xi_threshold",
    ]
    for cond in report.conditions:
        tag = cond.name.replace("-", "_")
        columns += [f"holds_{tag}", f"margin_{tag}"]
        row += [cond.holds, cond.margin]
    columns += ["all_hold", "success_lower_bound"]
    row += [report.all_hold, report.success_lower_bound]
    return tuple(columns), (tuple(row),), ()


def _run_stein(cfg, act):
    stream = derive_stream(cfg.seed, 0).substream("stein")
    result = stein_check(
        act, functools.partial(_act_derivative, act), cfg.x1, cfg.x2,
        cfg.trials, stream)
    row = (
        cfg.activation, cfg.x1, cfg.x2, cfg.trials, result.lhs.mean,
        result.lhs.stderr, result.rhs.mean, result.rhs.stderr,
        result.difference.mean, result.difference.stderr, result.agree,
        cfg.seed,
    )
    columns = (
        "activation", "x1", "x2", "samples", "lhs_mean", "lhs_stderr",
        "rhs_mean", "rhs_stderr", "diff_mean", "diff_stderr", "agree",
        "seed",
    )
    return columns, (row,), ()


def _act_derivative(act, z):
    return act.derivative(z)


def _warm_moment_cache(act, delta_values, grid):
    # Fork-based workers inherit the process-local moment cache; filling
    # it in the parent keeps children from redoing identical MC passes.
    for delta in delta_values:
        half = np.linspace(0.0, delta, (grid + 1) // 2)
        axis = np.concatenate([-half[:0:-1], half])
        for theta in itertools.product(axis, axis, axis):
            if theta[1] != 0.0:
                perturbed_product_moment(act, theta)


def _run_ep_sup(cfg, act):
    if cfg.workers > 1:
        _warm_moment_cache(act, cfg.delta_values, cfg.grid_per_axis)
    payload = (act, cfg.m, tuple(cfg.delta_values), cfg.grid_per_axis,
               cfg.dudley_c, cfg.seed)
    nested = _parallel_map(
        functools.partial(_ep_trial, payload), cfg.trials, cfg.workers)
    records = tuple(itertools.chain.from_iterable(nested))
    rows = []
    for delta in cfg.delta_values:
        recs = [r for r in records if r.values["delta"] == delta]
        mean_sup, se_sup = _mean_stderr([r.values["sup_abs"] for r in recs])
        mean_env, _ = _mean_stderr([r.values["envelope"] for r in recs])
        rows.append((
            cfg.activation, cfg.m, delta, cfg.grid_per_axis, len(recs),
            mean_sup, se_sup, max(r.values["sup_abs"] for r in recs),
            mean_env, sum(1 for r in recs if r.values["violation"]),
            cfg.dudley_c, cfg.seed,
        ))
    columns = (
        "activation", "m", "delta", "grid_per_axis", "reps", "mean_sup",
        "stderr_sup", "max_sup", "mean_envelope", "violations",
        "dudley_constant", "seed",
    )
    return columns, tuple(rows), records


def _run_bounds(cfg, act):
    dims = cfg.network_dims()
    s_d = cfg.step_size(act)
    rows = []
    for delta in cfg.delta_values:
        if len(dims) == 3:
            bound = perturbation_bound_two_layer(
                s_d, dims[0], dims[1], delta, cfg.ratio_c)
        else:
            bound = perturbation_bound_multi_layer(
                s_d, dims, delta, act.growth_exponent, cfg.ratio_c)
        rows.append((
            cfg.activation, s_d, dims[0], dims[1], _dims_label(dims), delta,
            act.growth_exponent, cfg.ratio_c, bound,
        ))
    columns = (
        "activation", "s_d", "d", "m", "dims", "delta", "k", "ratio_c",
        "bound",
    )
    return columns, tuple(rows), ()


def _run_calibrate(cfg, act):
    """Fit the free constants empirically; defaults stay the recommendation.

    ratio constant: smallest C making the two-layer displacement bound
    hold at the (1 - delta) quantile of observed ratios.  tail constants:
    log-linear fit of the exceedance rate of the beta concentration slack.
    dudley constant: max observed sup / raw envelope over ep repetitions.
    """
    delta = float(cfg.delta_values[0])
    s_d = cfg.step_size(act)

    payload = (act, cfg.d, cfg.m, s_d, cfg.seed)
    nested = _parallel_map(
        functools.partial(_decompose_trial, payload), cfg.trials, cfg.workers)
    records = tuple(itertools.chain.from_iterable(nested))
    slacks = []  # beta concentration slack in eta_2 units
    for rec in records:
        if rec.values["degenerate"]:
            continue
        slacks.append(abs(rec.values["tau_beta"] - s_d) * math.sqrt(cfg.d)
                      / (2.0 * s_d))
    ratios = []
    attack_payload = (act, (cfg.d, cfg.m, 1), (s_d,), cfg.seed)
    attack_nested = _parallel_map(
        functools.partial(_flip_trial, attack_payload), cfg.trials,
        cfg.workers)
    for rec in itertools.chain.from_iterable(attack_nested):
        if not rec.values["degenerate"]:
            ratios.append(rec.values["ratio"])

    rows = []
    if ratios:
        quantile = float(np.quantile(np.asarray(ratios), 1.0 - delta))
        raw = perturbation_bound_two_layer(s_d, cfg.d, cfg.m, delta, 1.0)
        rows.append(("ratio_c", quantile / raw, cfg.ratio_c, len(ratios),
                     f"quantile={1.0 - delta:g}", cfg.seed))
    if slacks:
        arr = np.sort(np.asarray(slacks))
        etas, lograte = [], []
        for q in (0.5, 0.6, 0.7, 0.8, 0.9, 0.95):
            eta2 = float(np.quantile(arr, q))
            rate = float(np.mean(arr > eta2))
            if rate > 0.0 and eta2 > 0.0:
                etas.append(eta2)
                lograte.append(math.log(rate))
        if len(etas) >= 2:
            slope, intercept = np.polyfit(np.asarray(etas),
                                          np.asarray(lograte), 1)
            rows.append(("tail_c", max(-float(slope), 1e-6), cfg.tail_c,
                         len(slacks), f"gridpoints={len(etas)}", cfg.seed))
            rows.append(("tail_c0", math.exp(float(intercept)), cfg.tail_c0,
                         len(slacks), f"gridpoints={len(etas)}", cfg.seed))
    ep_m = max(cfg.m, 100)
    ep_payload = (act, ep_m, (delta if delta <= 0.5 else 0.1,),
                  cfg.grid_per_axis, 1.0, cfg.seed)
    ep_reps = min(cfg.trials, 20)
    ep_nested = _parallel_map(
        functools.partial(_ep_trial, ep_payload), ep_reps, cfg.workers)
    ep_ratios = [r.values["sup_abs"] / r.values["envelope"]
                 for r in itertools.chain.from_iterable(ep_nested)
                 if r.values["envelope"] > 0.0]
    if ep_ratios:
        rows.append(("dudley_c", max(ep_ratios), cfg.dudley_c, len(ep_ratios),
                     f"reps={ep_reps}", cfg.seed))
    columns = ("constant", "fitted", "default", "samples", "detail", "seed")
    return columns, tuple(rows), records


_EXECUTORS = {
    "flip-sweep": _run_flip_sweep,
    "decompose": _run_decompose,
    "layer-stats": _run_layer_stats,
    "theorem3": _run_theorem3,
    "stein": _run_stein,
    "ep-sup": _run_ep_sup,
    "bounds": _run_bounds,
    "calibrate-constants": _run_calibrate,
}


def run_experiment(config):
    """Validate, execute, and aggregate one experiment."""
    config.validate()
    act = make_activation(config.activation)
    columns, rows, records = _EXECUTORS[config.kind](config, act)
    return SweepResult(kind=config.kind, columns=tuple(columns),
                       rows=tuple(rows), records=tuple(records))
