"""Experiment configuration, T(eps; n) measurement, scaling sweeps, the
lower-bound demonstration and the audit battery.

Seeds: every random stream is seeded with
``child_seed(base_seed, family, n, trial, tag)``, the first 8 bytes of a
SHA-256 digest of those fields, so adding trials or sizes never perturbs
existing ones.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _kernels as K
from .baselines import migd_rate_constant, run_dpg, run_migd
from .core import (StepSchedule, centralized_step, deviation_bound_static, distributed_step,
                   init_state, regret_audit, run_dda, transfer_audit)
from .graphs import (Graph, GraphError, build_complete, build_cycle, build_grid, build_path,
                     build_random_geometric, build_random_regular, cheeger_constant_exact,
                     normalized_laplacian)
from .mixing import (MixingError, MixingMatrix, ProtocolSpec, check_doubly_stochastic,
                     expected_protocol_matrix, gram_lambda2, lazy, max_degree_chain,
                     sample_protocol_entries, tv_bound)
from .objectives import (AbsObjective, HingeObjective, LinearObjective, make_hard_instance,
                         make_median_instance, make_svm_instance, reference_optimum, wrap_noisy)
from .proximal import Regularizer, entropic_setup, lipschitz_audit, quadratic_setup

FAMILIES = ("cycle", "path", "grid", "torus", "complete", "expander", "rgg")
ALGOS = ("dda", "dda-stochgrad", "dda-composite", "migd", "dpg")
CSV_HEADER = ("family", "n", "k", "algo", "protocol", "trial", "seed", "sigma2", "gap",
              "epsilon", "T_eps", "hit_cap", "final_error")

DEFAULT_N = {"cycle": (8, 16, 32, 64), "grid": (16, 36, 64, 144),
             "expander": (16, 32, 64, 128), "torus": (16, 36, 64, 144)}
PAPER_N = {"grid": (100, 225, 400, 900), "torus": (100, 225, 400, 900)}
PAPER_N_DEFAULT = (100, 200, 400, 900)


class ConfigError(ValueError):
    pass


class SweepError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    family: str = "cycle"
    n: int = 16
    n_list: tuple = ()
    k: int = 1
    degree: int = 5
    rgg_exponent: float = 1.0
    protocol: str = "static"
    lazy_chain: bool = False
    protocol_lazy: bool = True
    failure_prob: float = 0.0
    algo: str = "dda"
    objective: str = "svm"
    d: int = 5
    flip_prob: float = 0.05
    noise_kind: str = "additive-uniform"
    noise_scale: float = 0.0
    reg_weight: float = 0.0
    epsilon: float = 0.1
    t_max: int = 200_000
    eval_every: int = 10
    trials: int = 10
    base_seed: int = 0
    c: float = 1.0 / 3.0
    ref_tolerance: float = 1e-3

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if self.algo not in ALGOS:
            raise ConfigError(f"unknown algo {self.algo!r}; choose from {ALGOS}")
        if self.objective not in ("svm", "median"):
            raise ConfigError(f"unknown objective {self.objective!r}")
        if self.protocol not in ("static", "gossip", "edge-inclusion", "edge-failure"):
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        if self.epsilon <= 0 or self.t_max < 1 or self.eval_every < 1 or self.trials < 1:
            raise ConfigError("epsilon, t_max, eval_every and trials must be positive")
        self.n_list = tuple(int(v) for v in self.n_list)

    def sizes(self) -> tuple:
        return self.n_list or DEFAULT_N.get(self.family, (8, 16, 32, 64))

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            values[key] = val
        return (base or cls()).with_overrides(values)

    def with_overrides(self, values: dict) -> "ExperimentConfig":
        types = {f.name: f.type for f in dataclasses.fields(self)}
        parsed = {}
        for key, val in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            parsed[key] = _coerce(key, types[key], val)
        return self.replace(**parsed)


def _coerce(key, typ, val):
    if not isinstance(val, str):
        return val
    try:
        if typ in ("int", int):
            return int(val)
        if typ in ("float", float):
            return float(val)
        if typ in ("bool", bool):
            low = val.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(val)
            return low in ("true", "1", "yes")
        if typ in ("tuple", tuple):
            return tuple(int(v) for v in val.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"bad value for {key}: {val!r}") from None
    return val


def load_config(path: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path:
        with open(path) as fh:
            cfg = ExperimentConfig.from_text(fh.read())
    if overrides:
        cfg = cfg.with_overrides(overrides)
    env = os.environ.get("DDANET_SEED")
    if env is not None:
        cfg = cfg.replace(base_seed=int(env))
    return cfg


def child_seed(base_seed: int, family: str, n: int, trial: int, tag: str) -> int:
    key = f"{base_seed}|{family}|{n}|{trial}|{tag}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") >> 1


# -- builders ---------------------------------------------------------------------

def build_graph(cfg: ExperimentConfig, n: int, seed: int | None = None) -> Graph:
    fam = cfg.family
    if fam == "cycle":
        return build_cycle(n, cfg.k)
    if fam == "path":
        return build_path(n, cfg.k)
    if fam in ("grid", "torus"):
        side = math.isqrt(n)
        if side * side != n:
            raise GraphError(f"grid families need a square node count (got {n})")
        return build_grid(side, cfg.k, toroidal=fam == "torus")
    if fam == "complete":
        return build_complete(n)
    if fam == "expander":
        return build_random_regular(n, cfg.degree, seed=seed)
    return build_random_geometric(n, seed=seed, exponent=cfg.rgg_exponent)


def build_chain(cfg: ExperimentConfig, g: Graph) -> MixingMatrix:
    p = max_degree_chain(g)
    return lazy(p) if cfg.lazy_chain else p


def build_objective(cfg: ExperimentConfig, n: int, seed: int):
    if cfg.objective == "svm":
        return make_svm_instance(n, cfg.d, cfg.flip_prob, seed)
    return make_median_instance(np.random.default_rng(seed).standard_normal(n))


@dataclass
class Measurement:
    T_eps: int
    hit_cap: bool
    final_error: float
    sigma2: float
    gap: float
    seed: int
    f_star: float
    record: object = None


def _uses_kernel(cfg, objective) -> bool:
    return (cfg.algo == "dda" and cfg.protocol == "static"
            and isinstance(objective, (HingeObjective, AbsObjective, LinearObjective))
            and objective.setup.kind == "quadratic" and objective.setup.constraint.kind == "ball")


def measure_T_epsilon(cfg: ExperimentConfig, n: int | None = None, trial: int = 0,
                      fast: bool = True) -> Measurement:
    """First evaluation round with max_i f(x_hat_i(t)) - f* <= epsilon.

    Returns ``t_max`` with ``hit_cap`` set when the target is not reached.
    ``fast`` routes static dual-averaging runs through the compiled kernel
    (same iterates as the step-by-step path).
    """
    n = cfg.n if n is None else n
    seed = child_seed(cfg.base_seed, cfg.family, n, trial, "run")
    g = build_graph(cfg, n, child_seed(cfg.base_seed, cfg.family, n, trial, "graph"))
    objective = build_objective(cfg, n, child_seed(cfg.base_seed, cfg.family, n, trial, "instance"))
    reg = Regularizer("l1", cfg.reg_weight) if cfg.algo == "dda-composite" else Regularizer()
    _, f_star = reference_optimum(objective, cfg.ref_tolerance, reg=reg)
    p = build_chain(cfg, g)
    if cfg.protocol == "static":
        sigma2 = p.sigma2
        comm = p
    else:
        comm = ProtocolSpec(cfg.protocol, g, failure_prob=cfg.failure_prob, lazy=cfg.protocol_lazy)
        sigma2 = gram_lambda2(comm, np.random.default_rng(0), samples=2000)
    gap = 1.0 - sigma2
    R = objective.setup.constraint.diameter_bound
    rec = None
    if cfg.algo in ("migd", "dpg"):
        if cfg.protocol != "static":
            raise ConfigError(f"{cfg.algo} runs on the static chain only")
        run = run_migd if cfg.algo == "migd" else run_dpg
        kw = {"rng": seed} if cfg.algo == "migd" else {}
        rec = run(objective, p, cfg.t_max - 1, f_star=f_star, eval_every=cfg.eval_every,
                  epsilon=cfg.epsilon, seed=seed, **kw)
        hit, err = rec.hit_eps_at, rec.final_error
    elif fast and _uses_kernel(cfg, objective):
        kind, data = _kernel_data(objective)
        alpha_scale = R * math.sqrt(gap) / (4 * objective.L)
        t_hit, err, _ = K.dda_static_run(kind, data, p.entries, objective.setup.constraint.radius,
                                         alpha_scale, cfg.t_max, cfg.eval_every, cfg.epsilon, f_star)
        hit = None if t_hit < 0 else int(t_hit)
    else:
        schedule = StepSchedule("theorem2", R=R, L=objective.L, gap=gap)
        oracle = None
        if cfg.algo == "dda-stochgrad":
            oracle = wrap_noisy(objective, cfg.noise_kind, cfg.noise_scale,
                                child_seed(cfg.base_seed, cfg.family, n, trial, "noise"))
            schedule = dataclasses.replace(schedule, L=oracle.L_noisy)
        rec, _ = run_dda(objective, comm, schedule, cfg.t_max - 1, f_star=f_star,
                         eval_every=cfg.eval_every, rng=seed, oracle=oracle, reg=reg,
                         epsilon=cfg.epsilon, seed=seed)
        hit, err = rec.hit_eps_at, rec.final_error
    T_eps = hit if hit is not None else cfg.t_max
    return Measurement(T_eps, hit is None, float(err), float(sigma2), float(gap), seed,
                       float(f_star), rec)


def _kernel_data(objective):
    if isinstance(objective, HingeObjective):
        return K.HINGE, np.ascontiguousarray(objective._signed)
    if isinstance(objective, AbsObjective):
        return K.ABS, objective.targets[:, None].copy()
    return K.LINEAR, objective.slopes[:, None].copy()


# -- sweeps -------------------------------------------------------------------------

@dataclass
class SweepResult:
    rows: list
    slope: float
    stderr: float
    sizes: tuple
    means: tuple
    capped_fraction: float
    seconds: float = 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in self.rows:
            w.writerow([_fmt(row[c]) for c in CSV_HEADER])
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def fit_loglog(ns, means) -> tuple[float, float]:
    """Least-squares slope of log(mean) against log(n) and its standard error."""
    if len(ns) < 2:
        raise SweepError("need at least two sizes to fit a slope")
    res = stats.linregress(np.log(ns), np.log(means))
    return float(res.slope), float(res.stderr)


def scaling_sweep(cfg: ExperimentConfig, n_list=None, trials: int | None = None,
                  epsilon: float | None = None, base_seed: int | None = None,
                  strict: bool = True, progress=None) -> SweepResult:
    """Measure T(eps; n) for every (n, trial) and fit the log-log slope.

    Capped rows are kept in the table but left out of the fit.  Sizes whose
    trials all capped are dropped; more than half the rows capped is an error.
    """
    over = {k: v for k, v in (("trials", trials), ("epsilon", epsilon),
                             ("base_seed", base_seed)) if v is not None}
    if n_list is not None:
        over["n_list"] = tuple(n_list)
    cfg = cfg.replace(**over)
    sizes = cfg.sizes()
    if strict and (len(sizes) < 4 or cfg.trials < 5):
        raise SweepError("a scaling sweep needs at least 4 sizes and 5 trials")
    t0 = time.perf_counter()
    rows = []
    for n in sizes:
        for trial in range(cfg.trials):
            m = measure_T_epsilon(cfg, n, trial)
            rows.append({"family": cfg.family, "n": n, "k": cfg.k, "algo": cfg.algo,
                         "protocol": cfg.protocol, "trial": trial, "seed": m.seed,
                         "sigma2": m.sigma2, "gap": m.gap, "epsilon": cfg.epsilon,
                         "T_eps": m.T_eps, "hit_cap": m.hit_cap, "final_error": m.final_error})
            if progress:
                progress(rows[-1])
    capped = sum(r["hit_cap"] for r in rows) / len(rows)
    if capped > 0.5:
        raise SweepError(f"{capped:.0%} of runs hit the iteration cap {cfg.t_max}")
    used, means = [], []
    for n in sizes:
        ts = [r["T_eps"] for r in rows if r["n"] == n and not r["hit_cap"]]
        if ts:
            used.append(n)
            means.append(float(np.mean(ts)))
    slope, se = fit_loglog(used, means) if len(used) >= 2 else (float("nan"), float("nan"))
    return SweepResult(rows, slope, se, tuple(used), tuple(means), capped,
                       time.perf_counter() - t0)


# -- lower bound ----------------------------------------------------------------------

@dataclass
class LowerBoundRow:
    n: int
    sigma2: float
    gap: float
    i_star: int
    t_star: int
    t_star_closed: int
    t_star_closed_shifted: int
    multiplicity: int


@dataclass
class LowerBoundTable:
    rows: list
    slope: float

    def to_text(self) -> str:
        out = ["n,sigma2,gap,i_star,t_star,t_star_closed,t_star_closed_shifted,multiplicity"]
        for r in self.rows:
            out.append(f"{r.n},{r.sigma2!r},{r.gap!r},{r.i_star},{r.t_star},{r.t_star_closed},"
                       f"{r.t_star_closed_shifted},{r.multiplicity}")
        out.append(f"# slope of t* against 1/(1 - sigma2): {self.slope:.4f}")
        return "\n".join(out) + "\n"


def first_positive_round(p: MixingMatrix, hard, t_limit: int = 10**7) -> int:
    """Simulate the dual updates; smallest t with z_{i*}(t + 1) > 0."""
    obj = hard.objective
    schedule = StepSchedule("theorem2", R=obj.setup.constraint.diameter_bound, L=obj.L, gap=p.gap)
    state = init_state(obj.setup, obj.n, schedule)
    while state.t <= t_limit:
        distributed_step(state, p, obj.local_subgradients(state.x), schedule)
        if state.z[hard.i_star, 0] > 0:
            return state.t - 1
    raise RuntimeError("z never turned positive")


def lower_bound_demo(family: str = "cycle", n_list=(8, 16, 32), c: float = 1.0 / 3.0,
                     k: int = 1) -> LowerBoundTable:
    if not 0 < c <= 1.0 / 3.0:
        raise ConfigError("c must lie in (0, 1/3]")
    cfg = ExperimentConfig(family=family, k=k)
    rows = []
    for n in n_list:
        p = lazy(max_degree_chain(build_graph(cfg, n, seed=n)))
        hard = make_hard_instance(p, c)
        rows.append(LowerBoundRow(n, hard.sigma2, 1 - hard.sigma2, hard.i_star,
                                  first_positive_round(p, hard), hard.predicted_first_positive(),
                                  hard.predicted_first_positive(shifted_form=True),
                                  hard.eigvec_choice["multiplicity"]))
    inv_gap = np.array([1 / r.gap for r in rows])
    t = np.array([r.t_star for r in rows], dtype=float)
    slope = float(np.polyfit(inv_gap, t, 1)[0]) if len(rows) >= 2 else float("nan")
    return LowerBoundTable(rows, slope)


# -- spectral report -------------------------------------------------------------------

def spectral_report(cfg: ExperimentConfig, n: int | None = None) -> dict:
    n = cfg.n if n is None else n
    g = build_graph(cfg, n, child_seed(cfg.base_seed, cfg.family, n, 0, "graph"))
    p = build_chain(cfg, g)
    lap = normalized_laplacian(g)
    out = {"family": cfg.family, "n": n, "edges": g.num_edges, "max_degree": g.max_degree,
           "min_degree": g.min_degree, "sigma2": p.sigma2, "lambda2": p.lambda2, "gap": p.gap,
           "laplacian_fiedler": lap.fiedler, "migd_rate_constant": migd_rate_constant(p)}
    if g.n <= 20:
        out["cheeger"] = cheeger_constant_exact(g)
    return out


# -- audit battery --------------------------------------------------------------------

@dataclass
class AuditCheck:
    name: str
    passed: bool
    margin: float
    detail: str = ""


@dataclass
class AuditReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name, passed, margin, detail=""):
        self.checks.append(AuditCheck(name, bool(passed), float(margin), detail))

    def to_text(self) -> str:
        lines = [f"{'PASS' if c.passed else 'FAIL'}  {c.name:<34} margin={c.margin:.4g}  {c.detail}"
                 for c in self.checks]
        lines.append(f"{sum(c.passed for c in self.checks)}/{len(self.checks)} checks passed")
        return "\n".join(lines) + "\n"


def _audit_graphs(seed: int) -> list[Graph]:
    return [build_complete(6), build_cycle(8), build_cycle(12, 2), build_path(7),
            build_grid(3), build_grid(4, toroidal=True), build_random_regular(10, 3, seed=seed),
            build_random_geometric(12, seed=seed)]


def audit_suite(seed: int = 0, extra_matrices=(), quick: bool = False) -> AuditReport:
    """Run the invariant battery and return pass/fail lines with margins.

    ``extra_matrices`` are pushed through the stochasticity check as well
    (used for negative controls).
    """
    rng = np.random.default_rng(seed)
    report = AuditReport()
    graphs = _audit_graphs(seed)
    chains = [max_degree_chain(g) for g in graphs] + [lazy(max_degree_chain(g)) for g in graphs]

    worst = 0.0
    ok = True
    for m in list(chains) + [np.asarray(e, float) for e in extra_matrices]:
        p = m.entries if isinstance(m, MixingMatrix) else m
        err = max(np.abs(p.sum(0) - 1).max(), np.abs(p.sum(1) - 1).max(), max(0.0, -p.min()))
        worst = max(worst, err)
        try:
            check_doubly_stochastic(p)
        except MixingError:
            ok = False
    report.add("doubly stochastic", ok, worst)

    slack = np.inf
    for p in chains:
        pt = np.eye(p.n)
        for t in range(1, 101):
            pt = pt @ p.entries
            tv = 0.5 * np.abs(pt - 1.0 / p.n).sum(axis=0).max()
            slack = min(slack, tv_bound(p.n, p.sigma2, t) + 1e-9 - tv)
    report.add("tv bound", slack >= 0, slack)

    worst_ratio = 0.0
    for setup in (quadratic_setup(4, "unconstrained"), quadratic_setup(4, "ball", radius=1.0),
                  quadratic_setup(4, "box"), quadratic_setup(4, "simplex"), entropic_setup(4)):
        for _ in range(200 if quick else 1000):
            a = float(rng.uniform(0.01, 5))
            u, v = rng.standard_normal(4) * 3, rng.standard_normal(4) * 3
            worst_ratio = max(worst_ratio, lipschitz_audit(setup, a, u, v)[1])
    report.add("projection lipschitz", worst_ratio <= 1 + 1e-8, 1 + 1e-8 - worst_ratio)

    t1_margin, dev_margin, tr_margin = np.inf, np.inf, np.inf
    runs = [(build_cycle(4), make_median_instance([-1.0, 0.0, 0.0, 1.0])),
            (build_cycle(8), make_svm_instance(8, seed=seed)),
            (build_grid(3), make_svm_instance(9, seed=seed + 1)),
            (build_random_regular(10, 3, seed=seed), make_median_instance(rng.standard_normal(10)))]
    T = 500 if quick else 2000
    for g, obj in runs:
        p = max_degree_chain(g)
        x_star, f_star = reference_optimum(obj)
        sched = StepSchedule("theorem2", R=obj.setup.constraint.diameter_bound, L=obj.L, gap=p.gap)
        psi = float(obj.setup.psi(x_star))
        rec, st = run_dda(obj, p, sched, T, f_star=f_star, psi_xstar=psi)
        t1_margin = min(t1_margin, min(b - e for b, e in zip(rec.bound, rec.max_error)))
        dev_margin = min(dev_margin, deviation_bound_static(st.t, g.n, p.sigma2, obj.L) - st.max_deviation)
        for i in range(g.n):
            a = transfer_audit(st, obj, f_star, obj.L, i)
            tr_margin = min(tr_margin, a["rhs"] - a["lhs"])
    report.add("theorem 1 bound", t1_margin >= 0, t1_margin)
    report.add("static deviation bound", dev_margin >= 0, dev_margin)
    report.add("transfer y to x", tr_margin >= -1e-9, tr_margin)

    ftrl = np.inf
    for _ in range(5):
        setup = quadratic_setup(3, "ball", radius=2.0)
        sched = StepSchedule("theorem2", R=setup.constraint.diameter_bound, L=1.0)
        st = init_state(setup, 1, sched)
        for _ in range(100):
            g = rng.standard_normal(3)
            centralized_step(st, g / max(1.0, np.linalg.norm(g)), sched)
        for _ in range(10):
            xs = setup.constraint.euclidean_projection(rng.standard_normal(3))
            lhs, rhs = regret_audit(st, sched, xs)
            ftrl = min(ftrl, rhs - lhs)
    report.add("ftrl linear regret", ftrl >= -1e-9, ftrl)

    sandwich, upper_gap = np.inf, np.inf
    for g in graphs:
        if g.n <= 14:
            h = cheeger_constant_exact(g)
            lam = normalized_laplacian(g).fiedler
            # upper side may hold with equality (complete graphs); lower side is strict
            upper_gap = min(upper_gap, 2 * h - lam)
            sandwich = min(sandwich, lam - h * h / 2)
    report.add("cheeger sandwich", upper_gap >= -1e-12 and sandwich > 0, min(upper_gap, sandwich))

    gossip_err = 0.0
    samples = 5000 if quick else 20000
    for g in (build_complete(3), build_cycle(8)):
        spec = ProtocolSpec("gossip", g, lazy=False)
        acc = np.zeros((g.n, g.n))
        for _ in range(samples):
            acc += sample_protocol_entries(spec, rng)
        gossip_err = max(gossip_err, np.abs(acc / samples - expected_protocol_matrix(spec).entries).max())
    report.add("gossip expectation", gossip_err <= 2e-2, 2e-2 - gossip_err)
    return report
