"""Monte Carlo scaling experiments confronted with rate-function predictions.

Every experiment runs ``replicas`` independent N-particle systems per eps
value; a "sample" is one particle path, so the Monte Carlo budget per eps is
``replicas * particles``. The noise of replica r is the same for every eps
(common random numbers), which keeps the eps-trend of the estimates smooth.
Replica outputs are concatenated in replica order before any reduction, so
results do not depend on the thread schedule.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.special import logsumexp

from .dynamics import Scenario, SimulationError, mdp_process, simulate_coupled_limit, simulate_particles, solve_limit
from .rate import RateQuery, Tube, laplace_optimize, rate_optimize

log = logging.getLogger(__name__)

FAILURE_BUDGET = 1e-3
CSV_COLUMNS = ("epsilon", "lambda", "p_hat", "se", "transformed", "transformed_se", "censored")
THREADS_ENV = "MVLDP_THREADS"


class ExperimentError(RuntimeError):
    """Too many replica failures, or an invalid plan."""


@dataclass(frozen=True)
class PowerLambda:
    """``lambda(eps) = eps ** power`` with ``0 < power < 1/2``."""

    power: float = 0.25

    def __post_init__(self):
        if not 0.0 < self.power < 0.5:
            raise ValueError(f"lambda power must lie in (0, 1/2) so that lambda -> 0 and "
                             f"eps/lambda^2 -> 0; got {self.power}")

    def __call__(self, eps: float) -> float:
        return float(eps**self.power)


@dataclass(frozen=True)
class TerminalFunctional:
    """A bounded functional of the terminal state, ``f(x_T)``."""

    fn: Callable[[NDArray], NDArray]
    name: str = "custom"

    def on_terminal(self, terminal: NDArray) -> NDArray:
        return np.asarray(self.fn(terminal), dtype=float)

    def __call__(self, Y: NDArray) -> NDArray:
        return self.on_terminal(Y[:, -1])


def capped_square(scale: float = 1.0, cap: float = 1.0) -> TerminalFunctional:
    """``f(x) = min(cap, scale |x_T|^2)``."""
    return TerminalFunctional(lambda x: np.minimum(cap, scale * np.sum(x**2, axis=1)), "capped-square")


def escape_reward(cap: float = 1.0) -> TerminalFunctional:
    """``f(x) = cap - min(cap, |x_T|)``: cheap when the path ends far from 0."""
    return TerminalFunctional(lambda x: cap - np.minimum(cap, np.linalg.norm(x, axis=1)), "escape-reward")


def zero_functional() -> TerminalFunctional:
    return TerminalFunctional(lambda x: np.zeros(x.shape[0]), "zero")


@dataclass
class ExperimentPlan:
    scenario: Scenario
    eps_grid: Sequence[float]
    event: object | None = None
    lam: PowerLambda = field(default_factory=PowerLambda)
    tolerance: float = 0.1
    fit: str = "log-corrected"
    threads: int | None = None
    rate_options: dict = field(default_factory=dict)
    name: str = "experiment"

    def __post_init__(self):
        eps = np.asarray(self.eps_grid, dtype=float)
        if eps.ndim != 1 or eps.size < 1:
            raise ValueError("eps grid must be a non-empty list")
        if np.any(eps <= 0) or np.any(eps >= 1):
            raise ValueError("eps grid values must lie strictly inside (0, 1)")
        if np.any(np.diff(eps) >= 0):
            raise ValueError("eps grid must be strictly decreasing")
        for e in eps:
            lam = self.lam(e)
            if not (0 < lam <= 1 and e / lam**2 <= 1):
                raise ValueError(f"lambda rule violates 0 < lambda <= 1, eps/lambda^2 <= 1 at eps={e}")
        if self.fit not in ("linear", "log-corrected"):
            raise ValueError(f"fit must be 'linear' or 'log-corrected', got {self.fit!r}")
        self.eps_grid = [float(e) for e in eps]

    @property
    def replicas(self) -> int:
        return self.scenario.replicas

    @property
    def samples(self) -> int:
        return self.scenario.replicas * self.scenario.particles


@dataclass
class ScalingRow:
    epsilon: float
    lam: float
    p_hat: float
    se: float
    transformed: float
    transformed_se: float
    censored: bool
    n: int = 0
    hits: int | None = None

    def csv_fields(self) -> list[str]:
        return [_fmt(self.epsilon), _fmt(self.lam), _fmt(self.p_hat), _fmt(self.se), _fmt(self.transformed),
                _fmt(self.transformed_se), "1" if self.censored else "0"]


@dataclass
class ScalingReport:
    kind: str
    rows: list[ScalingRow]
    fit: dict
    predicted: float | None
    verdict: str
    tolerance: float
    notes: list[str] = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "verdict": self.verdict,
            "predicted": self.predicted,
            "tolerance": self.tolerance,
            "fit": self.fit,
            "notes": list(self.notes),
            "rows": len(self.rows),
            "censored_rows": sum(r.censored for r in self.rows),
            **self.extras,
        }


def _fmt(x: float) -> str:
    x = float(x)
    return repr(x) if np.isfinite(x) else ("nan" if np.isnan(x) else ("inf" if x > 0 else "-inf"))


# -- execution -----------------------------------------------------------------------

def resolve_threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "1") or 1)
    return max(1, int(threads))


def run_replicas(fn: Callable[[int], object], replicas: int, threads: int | None = None) -> list:
    """Run ``fn(r)`` for every replica and return the successful outputs in replica order.

    A replica that raises :class:`SimulationError` is dropped; if the dropped
    fraction reaches 0.1% the experiment fails instead.
    """
    threads = resolve_threads(threads)

    def guarded(r):
        try:
            return fn(r)
        except SimulationError as exc:
            log.warning("replica %d aborted: %s", r, exc)
            return exc

    if threads == 1 or replicas == 1:
        outs = [guarded(r) for r in range(replicas)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(guarded, range(replicas)))
    failed = [r for r, o in enumerate(outs) if isinstance(o, SimulationError)]
    if failed and len(failed) >= FAILURE_BUDGET * replicas:
        raise ExperimentError(f"{len(failed)} of {replicas} replicas failed (first: replica {failed[0]}); "
                              f"budget is {FAILURE_BUDGET:.1%}")
    return [o for o in outs if not isinstance(o, SimulationError)]


def _vi_failures(ens) -> int:
    """Particles of an ensemble whose online variation-inequality check failed."""
    return int(np.count_nonzero(~ens.vi_ok))


def _sum_parts(parts) -> tuple[int, ...]:
    return tuple(int(sum(col)) for col in zip(*parts)) if parts else (0, 0, 0)


def fit_limit(x, y, se, model: str = "log-corrected") -> dict:
    """Weighted least squares of ``y`` on ``x`` with weights ``1/se^2``; the intercept
    estimates the ``x -> 0`` limit.

    ``linear`` uses the basis ``[1, x]``; ``log-corrected`` adds ``x log x``,
    which absorbs the polynomial prefactor of tail probabilities.
    """
    x, y, se = (np.asarray(a, dtype=float) for a in (x, y, se))
    if x.size < 3:
        return {"model": model, "intercept": None, "slope": None, "points": int(x.size),
                "status": "insufficient"}
    cols = [np.ones_like(x), x] + ([x * np.log(x)] if model == "log-corrected" else [])
    A = np.column_stack(cols)
    pos = se[se > 0]
    floor = float(np.min(pos)) if pos.size else 1.0
    w = 1.0 / np.maximum(se, floor) ** 2
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(A * sw[:, None], y * sw, rcond=None)
    return {"model": model, "intercept": float(coef[0]), "slope": float(coef[1]),
            "log_term": float(coef[2]) if model == "log-corrected" else None,
            "points": int(x.size), "status": "ok"}


def _verdict(estimate, predicted, tol) -> str:
    if estimate is None or predicted is None:
        return "INCONCLUSIVE"
    return "PASS" if abs(estimate - predicted) <= tol else "FAIL"


# -- convergence to the limit ----------------------------------------------------------

def predicted_convergence_slope(scenario: Scenario, eps_grid) -> float:
    """Log-log slope of the bound ``eps + rho_b^2 + eps rho_sigma^2`` over the grid."""
    c = scenario.coefficients
    eps = np.asarray(eps_grid, dtype=float)
    bound = np.array([e + c.rho_b(e) ** 2 + e * c.rho_sigma(e) ** 2 for e in eps])
    return float(np.polyfit(np.log(eps), np.log(bound), 1)[0])


def run_convergence_experiment(plan: ExperimentPlan) -> ScalingReport:
    """Estimate ``E sup_t |X^eps - X^0|^2`` per eps and fit its log-log slope."""
    sc = plan.scenario
    limit = solve_limit(sc)
    rows, vi_fail = [], 0
    for eps in plan.eps_grid:
        def one(r):
            c = simulate_coupled_limit(sc, eps, replica=r, limit=limit)
            return c.sup_sq, _vi_failures(c.ensemble)
        parts = run_replicas(one, plan.replicas, plan.threads)
        vi_fail += sum(f for _, f in parts)
        d2 = np.concatenate([p for p, _ in parts])
        m = float(np.mean(d2))
        se = float(np.std(d2, ddof=1) / np.sqrt(d2.size)) if d2.size > 1 else float("nan")
        censored = not m > 0
        rows.append(ScalingRow(eps, float("nan"), m, se, float(np.log(m)) if m > 0 else float("nan"),
                               se / m if m > 0 else float("nan"), censored, n=int(d2.size)))
    good = [r for r in rows if not r.censored]
    fit = {"model": "log-log", "slope": None, "intercept": None, "points": len(good), "status": "insufficient"}
    if len(good) >= 3:
        x = np.log([r.epsilon for r in good])
        y = np.array([r.transformed for r in good])
        w = 1.0 / np.maximum([r.transformed_se for r in good], 1e-12)
        slope, icpt = np.polyfit(x, y, 1, w=w)
        fit.update(slope=float(slope), intercept=float(icpt), status="ok")
    predicted = predicted_convergence_slope(sc, plan.eps_grid)
    return ScalingReport("converge", rows, fit, predicted, _verdict(fit["slope"], predicted, plan.tolerance),
                         plan.tolerance, extras={"variation_inequality_failures": vi_fail})


# -- LDP / Laplace / MDP scans ---------------------------------------------------------

def _finish_scan(kind, rows, plan, predicted, notes, speed=None) -> ScalingReport:
    good = [r for r in rows if not r.censored]
    x = [r.epsilon if speed is None else speed(r) for r in good]
    fit = fit_limit(x, [r.transformed for r in good], [r.transformed_se for r in good], plan.fit)
    return ScalingReport(kind, rows, fit, predicted, _verdict(fit["intercept"], predicted, plan.tolerance),
                         plan.tolerance, notes)


def _proportion_row(eps, lam, hits, n, speed) -> ScalingRow:
    p = hits / n
    se = float(np.sqrt(p * (1 - p) / n))
    if hits == 0:
        return ScalingRow(eps, lam, 0.0, se, float("nan"), float("nan"), True, n=n, hits=0)
    return ScalingRow(eps, lam, p, se, speed * float(np.log(p)), speed * se / p, False, n=n, hits=hits)


def run_ldp_scan(plan: ExperimentPlan) -> ScalingReport:
    """Hit frequencies of the event and ``eps log p_hat`` against ``-inf I`` over it."""
    if plan.event is None:
        raise ExperimentError("LDP scan needs an event")
    sc, event = plan.scenario, plan.event
    ref = event.reference

    def hits_of(eps):
        def one(r):
            ens = simulate_particles(sc, eps, replica=r, record=False, reference=ref)
            return int(np.count_nonzero(event.hit(ens.terminal, ens.sup_dev))), ens.size, _vi_failures(ens)
        return _sum_parts(run_replicas(one, plan.replicas, plan.threads))

    rows, notes, vi_fail = [], [], 0
    for eps in plan.eps_grid:
        h, n, f = hits_of(eps)
        vi_fail += f
        rows.append(_proportion_row(eps, float("nan"), h, n, eps))
    if rows[0].hits is not None and rows[0].hits < 100:
        notes.append(f"only {rows[0].hits} hits at the largest eps; estimates are noisy")
    rate = rate_optimize(sc, RateQuery(event, "LDP"), **plan.rate_options)
    report = _finish_scan("ldp", rows, plan, -rate.value, notes)
    report.extras.update(rate=rate.to_json(), variation_inequality_failures=vi_fail)
    return report


def run_laplace_check(plan: ExperimentPlan, functional: TerminalFunctional) -> ScalingReport:
    """``eps log E exp(-f(X^eps)/eps)`` against ``-min_u {f(Y^u) + energy(u)}``."""
    sc = plan.scenario
    rows, vi_fail = [], 0
    for eps in plan.eps_grid:
        def one(r):
            ens = simulate_particles(sc, eps, replica=r, record=False)
            return functional.on_terminal(ens.terminal), _vi_failures(ens)
        parts = run_replicas(one, plan.replicas, plan.threads)
        vi_fail += sum(v for _, v in parts)
        f = np.concatenate([p for p, _ in parts])
        a = -f / eps
        n = a.size
        lme = float(logsumexp(a) - np.log(n))
        if not np.isfinite(lme):
            rows.append(ScalingRow(eps, float("nan"), 0.0, float("nan"), float("nan"), float("nan"), True, n=n))
            continue
        w = np.exp(a - np.max(a))
        rel = float(np.std(w, ddof=1) / (np.sqrt(n) * np.mean(w))) if n > 1 else float("nan")
        p = float(np.exp(lme))
        rows.append(ScalingRow(eps, float("nan"), p, p * rel, eps * lme, eps * rel, False, n=n))
    value, res = laplace_optimize(sc, functional, **plan.rate_options)
    report = _finish_scan("laplace", rows, plan, -value, [])
    report.extras.update(optimizer=res.to_json(), variation_inequality_failures=vi_fail)
    return report


def run_mdp_scan(plan: ExperimentPlan) -> ScalingReport:
    """``(eps/lambda^2) log P(M^eps in event)`` against ``-inf`` of the MDP rate."""
    if plan.event is None:
        raise ExperimentError("MDP scan needs an event")
    sc, event = plan.scenario, plan.event
    X0 = solve_limit(sc)[0].values
    rows, vi_fail = [], 0
    for eps in plan.eps_grid:
        lam = plan.lam(eps)
        speed = eps / lam**2

        def one(r):
            if isinstance(event, Tube):
                ens = simulate_particles(sc, eps, replica=r, record=False, reference=X0 + lam * event.center)
                return int(np.count_nonzero(event.hit(None, ens.sup_dev / lam))), ens.size, _vi_failures(ens)
            m = mdp_process(sc, eps, lam, replica=r, record=False)
            return int(np.count_nonzero(event.hit(m.terminal, m.sup_norm))), m.size, _vi_failures(m.source)

        h, n, f = _sum_parts(run_replicas(one, plan.replicas, plan.threads))
        vi_fail += f
        rows.append(_proportion_row(eps, lam, h, n, speed))
    rate = rate_optimize(sc, RateQuery(event, "MDP"), **plan.rate_options)
    report = _finish_scan("mdp", rows, plan, -rate.value, [],
                          speed=lambda r: r.epsilon / r.lam**2)
    report.extras.update(rate=rate.to_json(), variation_inequality_failures=vi_fail)
    return report


# -- output ----------------------------------------------------------------------------

def emit_report(reports: Sequence[ScalingReport], out_dir: str | Path, meta: dict | None = None,
                ) -> tuple[Path, Path]:
    """Write ``report.csv`` (all rows of all reports, in order) and ``summary.json``.

    The JSON lists each report with the half-open row span it occupies in the
    CSV. Output bytes are a function of the inputs only.
    """
    out = Path(out_dir)
    if not out.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {out}")
    csv_path, json_path = out / "report.csv", out / "summary.json"
    try:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for rep in reports:
                for row in rep.rows:
                    w.writerow(row.csv_fields())
        spans, start = [], 0
        for rep in reports:
            spans.append({**rep.summary(), "csv_rows": [start, start + len(rep.rows)]})
            start += len(rep.rows)
        doc = {"meta": meta or {}, "reports": spans}
        with open(json_path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"failed writing report to {out}: {exc}") from exc
    return csv_path, json_path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj
