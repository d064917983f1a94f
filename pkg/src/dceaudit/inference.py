"""Multinomial logit estimation and the statistics derived from a fit.

Coefficients are dummy-coded contrasts against each attribute's last level.
The fit is a Newton ascent on the exact log-likelihood; standard errors come
from the inverse of the negative Hessian at the optimum.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from . import kernels
from .schema import AttributeSchema, ChoiceSet, Profile

SEPARATION_BOUND = 15.0
DIVERGENCE_BOUND = 30.0
CONDITION_LIMIT = 1e12
LL_RESOLUTION = 1e-10


class FitError(RuntimeError):
    """Raised when a fit is unusable (non-convergence, flagged input)."""


# ---------------------------------------------------------------------------
# design matrix

@dataclass
class DesignMatrix:
    """Dummy-coded covariates grouped by choice set.

    ``X[s, j]`` is the covariate row of profile ``j`` in set ``s``;
    ``chosen[s]`` is the index of the profile that was picked.
    """

    X: np.ndarray
    chosen: np.ndarray
    set_ids: np.ndarray
    columns: list[tuple[str, str]]
    blocks: dict[str, slice]
    schema_version: str = ""
    n_dropped: int = 0

    @property
    def n_sets(self) -> int:
        return self.X.shape[0]

    @property
    def j_profiles(self) -> int:
        return self.X.shape[1]

    @property
    def n_params(self) -> int:
        return self.X.shape[2]

    def without_block(self, attribute: str) -> "DesignMatrix":
        """Copy with one attribute's dummy columns removed."""
        drop = self.blocks[attribute]
        keep = [k for k in range(self.n_params) if not drop.start <= k < drop.stop]
        width = drop.stop - drop.start
        blocks = {}
        for name, sl in self.blocks.items():
            if name == attribute:
                continue
            shift = width if sl.start >= drop.stop else 0
            blocks[name] = slice(sl.start - shift, sl.stop - shift)
        return replace(self, X=np.ascontiguousarray(self.X[:, :, keep]),
                       columns=[self.columns[k] for k in keep], blocks=blocks)


def encode_profiles(profiles: Sequence[Profile], schema: AttributeSchema) -> np.ndarray:
    """Dummy rows for a sequence of profiles, shape (n, P)."""
    offsets = np.cumsum([0] + [a.n_levels - 1 for a in schema.attributes])
    assign = np.array([p.assignment for p in profiles], dtype=np.int64).reshape(len(profiles), -1)
    out = np.zeros((len(profiles), schema.n_parameters))
    for a_idx, attr in enumerate(schema.attributes):
        lv = assign[:, a_idx]
        rows = np.nonzero(lv < attr.n_levels - 1)[0]
        out[rows, offsets[a_idx] + lv[rows]] = 1.0
    return out


def encode_design(design: Sequence[ChoiceSet], schema: AttributeSchema) -> np.ndarray:
    """Dummy covariates for whole choice sets, shape (S, J, P)."""
    if not design:
        return np.zeros((0, 2, schema.n_parameters))
    J = design[0].j_profiles
    if any(cs.j_profiles != J for cs in design):
        raise ValueError("all choice sets must have the same number of profiles")
    flat = encode_profiles([p for cs in design for p in cs.profiles], schema)
    return flat.reshape(len(design), J, schema.n_parameters)


def build_design_matrix(records: Iterable, design: Sequence[ChoiceSet],
                        schema: AttributeSchema) -> DesignMatrix:
    """Join agent choices to their choice sets.

    ``records`` are objects with ``set_id`` and ``chosen_index`` attributes
    (or mappings with those keys). Records without an effective choice are
    dropped and counted in ``n_dropped``.
    """
    by_id = {cs.id: cs for cs in design}
    kept_sets, chosen, seen = [], [], set()
    dropped = 0
    for rec in records:
        sid = rec["set_id"] if isinstance(rec, dict) else rec.set_id
        idx = rec["chosen_index"] if isinstance(rec, dict) else rec.chosen_index
        if sid not in by_id:
            raise ValueError(f"record references unknown choice set {sid}")
        if sid in seen:
            raise ValueError(f"duplicate record for choice set {sid}")
        seen.add(sid)
        if idx is None:
            dropped += 1
            continue
        cs = by_id[sid]
        if not 0 <= idx < cs.j_profiles:
            raise ValueError(f"chosen index {idx} out of range for set {sid}")
        kept_sets.append(cs)
        chosen.append(idx)
    X = encode_design(kept_sets, schema)
    return DesignMatrix(
        X=np.ascontiguousarray(X),
        chosen=np.asarray(chosen, dtype=np.int64),
        set_ids=np.asarray([cs.id for cs in kept_sets], dtype=np.int64),
        columns=schema.parameter_labels(),
        blocks=schema.column_blocks(),
        schema_version=schema.version,
        n_dropped=dropped,
    )


# ---------------------------------------------------------------------------
# likelihood

def choice_probabilities(X: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Softmax of utilities within each set, shape (S, J)."""
    util = np.asarray(X) @ np.asarray(beta, dtype=float)
    util -= util.max(axis=-1, keepdims=True)
    e = np.exp(util)
    return e / e.sum(axis=-1, keepdims=True)


def log_likelihood(dm: DesignMatrix, beta, want_grad: bool = True, want_hess: bool = True,
                   backend: Optional[str] = None):
    """Return (LL, gradient, Hessian) at ``beta``."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (dm.n_params,):
        raise ValueError(f"beta has shape {beta.shape}, expected ({dm.n_params},)")
    return kernels.loglik_grad_hess(dm.X, dm.chosen, beta, want_grad, want_hess, backend=backend)


# ---------------------------------------------------------------------------
# estimation

@dataclass
class MnlFit:
    beta: np.ndarray
    covariance: np.ndarray
    log_likelihood: float
    iterations: int
    grad_norm: float
    converged: bool
    columns: list[tuple[str, str]]
    blocks: dict[str, slice]
    n_sets: int
    j_profiles: int
    schema_version: str = ""
    ridge: float = 0.0
    warnings: list[str] = field(default_factory=list)
    # objective at each accepted iterate of the final Newton pass
    ll_trace: list[float] = field(default_factory=list, repr=False)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    @property
    def flagged(self) -> bool:
        return not self.converged

    def to_json(self) -> dict:
        rows = wald_table(self, force=True)
        return {
            "schema_version": self.schema_version,
            "beta": [
                {"attribute": r.attribute, "level": r.level, "est": r.estimate, "se": r.se, "p": r.p}
                for r in rows
            ],
            "loglik": self.log_likelihood,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "converged": self.converged,
            "ridge": self.ridge,
            "n_sets": self.n_sets,
            "j_profiles": self.j_profiles,
            "blocks": {k: [v.start, v.stop] for k, v in self.blocks.items()},
            "covariance": self.covariance.tolist(),
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_json(cls, data: dict) -> "MnlFit":
        beta = np.array([row["est"] for row in data["beta"]], dtype=float)
        columns = [(row["attribute"], row["level"]) for row in data["beta"]]
        if "covariance" in data:
            cov = np.array(data["covariance"], dtype=float).reshape(len(beta), len(beta))
        else:
            cov = np.diag([row["se"] ** 2 for row in data["beta"]])
        if "blocks" in data:
            blocks = {k: slice(*v) for k, v in data["blocks"].items()}
        else:
            blocks = {}
            for k, (attr, _) in enumerate(columns):
                if attr not in blocks:
                    blocks[attr] = slice(k, k)
                blocks[attr] = slice(blocks[attr].start, k + 1)
        return cls(
            beta=beta, covariance=cov, log_likelihood=float(data["loglik"]),
            iterations=int(data.get("iterations", 0)), grad_norm=float(data.get("grad_norm", 0.0)),
            converged=bool(data.get("converged", True)), columns=columns, blocks=blocks,
            n_sets=int(data.get("n_sets", 0)), j_profiles=int(data.get("j_profiles", 2)),
            schema_version=str(data.get("schema_version", "")), ridge=float(data.get("ridge", 0.0)),
            warnings=list(data.get("warnings", [])),
        )


def save_fit(fit: MnlFit, path: str | Path) -> None:
    Path(path).write_text(json.dumps(fit.to_json(), indent=2, ensure_ascii=False) + "\n",
                          encoding="utf-8")


def load_fit(path: str | Path) -> MnlFit:
    return MnlFit.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _newton(dm, ridge, tol, max_iter, backend, stop_on_divergence):
    """Damped Newton ascent. Returns (beta, ll, grad, hess, iterations, ok, trace)."""
    P = dm.n_params
    eye = np.eye(P)

    def objective(b, full=True):
        ll, g, h = log_likelihood(dm, b, full, full, backend)
        if ridge:
            ll -= 0.5 * ridge * float(b @ b)
            if full:
                g = g - ridge * b
                h = h - ridge * eye
        return ll, g, h

    beta = np.zeros(P)
    ll, g, h = objective(beta)
    trace = [ll]
    it = 0
    while np.max(np.abs(g), initial=0.0) >= tol and it < max_iter:
        if stop_on_divergence and np.max(np.abs(beta)) > DIVERGENCE_BOUND:
            break
        try:
            step = np.linalg.solve(-h, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(-h, g, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            break
        t = 1.0
        cand = beta + step
        # inside the quadratic basin LL changes fall below float resolution,
        # so comparing LL values is noise; take the full Newton step there
        if float(g @ step) >= LL_RESOLUTION * (1.0 + abs(ll)):
            for _ in range(60):
                cand = beta + t * step
                ll_new, _, _ = objective(cand, full=False)
                if np.isfinite(ll_new) and ll_new >= ll:
                    break
                t *= 0.5
            else:
                break
        it += 1
        beta = cand
        ll, g, h = objective(beta)
        trace.append(ll)
        if t * np.max(np.abs(step), initial=0.0) == 0.0:
            break
    ok = bool(np.max(np.abs(g), initial=0.0) < tol)
    return beta, ll, g, h, it, ok, trace


def _ill_conditioned(h: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(-h)
    except np.linalg.LinAlgError:
        return True
    return np.linalg.cond(-h) > CONDITION_LIMIT


def fit_mnl(dm: DesignMatrix, tol: float = 1e-8, max_iter: int = 100, ridge: float = 1e-6,
            force_ridge: bool = False, backend: Optional[str] = None) -> MnlFit:
    """Maximum-likelihood MNL fit by Newton's method with step halving.

    Iterates until the gradient max-norm drops below ``tol``. If a coefficient
    exceeds ``SEPARATION_BOUND`` in magnitude or the Hessian is numerically
    singular, the model is refitted with an L2 penalty of strength ``ridge``
    and a separation warning is attached. ``force_ridge`` applies the penalty
    from the start.
    """
    if dm.n_sets < 1:
        raise FitError("no effective responses")
    if dm.n_params < 1:
        raise FitError("design has no coefficients")

    notes = []
    used_ridge = ridge if force_ridge else 0.0
    beta, ll, g, h, it, ok, trace = _newton(dm, used_ridge, tol, max_iter, backend,
                                     stop_on_divergence=not force_ridge)
    degenerate = np.max(np.abs(beta)) > SEPARATION_BOUND or _ill_conditioned(h)
    if degenerate and not force_ridge:
        big = [f"{a}={lv}" for (a, lv), b in zip(dm.columns, beta) if abs(b) > SEPARATION_BOUND]
        msg = "separation: coefficients diverge or Hessian is singular"
        if big:
            msg += " (" + ", ".join(big) + ")"
        notes.append(msg + f"; refitted with ridge {ridge:g}")
        used_ridge = ridge
        beta, ll, g, h, it2, ok, trace = _newton(dm, used_ridge, tol, max_iter, backend,
                                          stop_on_divergence=False)
        it += it2
    if not ok:
        notes.append(f"not converged after {it} iterations (max |gradient| {np.max(np.abs(g)):.3g})")

    try:
        cov = np.linalg.inv(-h)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(-h)
        notes.append("Hessian not invertible; covariance is a pseudo-inverse")
    cov = 0.5 * (cov + cov.T)
    loglik = log_likelihood(dm, beta, False, False, backend)[0]
    return MnlFit(
        beta=beta, covariance=cov, log_likelihood=float(loglik), iterations=it,
        grad_norm=float(np.max(np.abs(g), initial=0.0)), converged=ok,
        columns=list(dm.columns), blocks=dict(dm.blocks), n_sets=dm.n_sets,
        j_profiles=dm.j_profiles, schema_version=dm.schema_version, ridge=used_ridge,
        warnings=notes, ll_trace=trace,
    )


def _check_usable(fit: MnlFit, force: bool) -> None:
    if fit.flagged and not force:
        raise FitError("fit did not converge; pass force=True to use it anyway")


# ---------------------------------------------------------------------------
# Wald tests

@dataclass(frozen=True)
class WaldRow:
    attribute: str
    level: str
    estimate: float
    se: float
    z: float
    p: float


def wald_p_value(estimate: float, se: float) -> float:
    """Two-sided normal p-value of estimate/se."""
    if se == 0:
        warnings.warn("zero standard error; reporting p = 0", RuntimeWarning, stacklevel=2)
        return 0.0 if estimate != 0 else 1.0
    return float(2.0 * stats.norm.sf(abs(estimate / se)))


def wald_table(fit: MnlFit, force: bool = False) -> list[WaldRow]:
    _check_usable(fit, force)
    rows = []
    for (attr, level), b, se in zip(fit.columns, fit.beta, fit.se):
        z = b / se if se > 0 else (math.inf if b else 0.0)
        rows.append(WaldRow(attr, level, float(b), float(se), float(z), wald_p_value(b, se)))
    return rows


def format_p(p: float) -> str:
    """Two-decimal display; values below 0.005 show as 0.00."""
    return f"{math.floor(p * 100 + 0.5) / 100:.2f}" if p >= 0.005 else "0.00"


# ---------------------------------------------------------------------------
# marginal effects

@dataclass(frozen=True)
class EffectRow:
    attribute: str
    level: str
    effect: float
    ci_low: float
    ci_high: float


def head_to_head_margin(beta):
    """P(pick the level-k profile) - P(pick the reference profile) in a pair.

    Equals 2*logistic(beta) - 1 = tanh(beta / 2).
    """
    return np.tanh(np.asarray(beta, dtype=float) / 2.0)


def marginal_effects(fit: MnlFit, ci: str = "transform", level: float = 0.95,
                     force: bool = False) -> list[EffectRow]:
    """Effect of each level versus its attribute's reference, with CIs.

    ``ci="transform"`` maps the Wald interval of the coefficient through the
    (monotone) margin function; ``ci="delta"`` uses the delta method.
    """
    _check_usable(fit, force)
    if fit.j_profiles != 2:
        raise ValueError("head-to-head margins are defined for paired designs only")
    zcrit = stats.norm.ppf(0.5 + level / 2.0)
    beta, se = fit.beta, fit.se
    eff = head_to_head_margin(beta)
    if ci == "transform":
        lo = head_to_head_margin(beta - zcrit * se)
        hi = head_to_head_margin(beta + zcrit * se)
    elif ci == "delta":
        half = zcrit * se * (1.0 - eff**2) / 2.0
        lim = np.nextafter(1.0, 0.0)
        lo = np.clip(eff - half, -lim, lim)
        hi = np.clip(eff + half, -lim, lim)
    else:
        raise ValueError(f"unknown ci method {ci!r}")
    return [
        EffectRow(a, lv, float(e), float(l), float(h))
        for (a, lv), e, l, h in zip(fit.columns, eff, lo, hi)
    ]


# ---------------------------------------------------------------------------
# attribute importance

@dataclass(frozen=True)
class ImportanceRow:
    attribute: str
    lr_statistic: float
    df: int
    p_value: float
    normalized_importance: float


def attribute_importance(dm: DesignMatrix, fit: MnlFit, force: bool = False,
                         tol: float = 1e-8, max_iter: int = 100,
                         backend: Optional[str] = None) -> list[ImportanceRow]:
    """Likelihood-ratio test of each attribute's dummy block.

    The restricted model drops the block and is refitted with the same ridge
    as the full fit. Importances are LR statistics scaled so that the largest
    equals 100.
    """
    _check_usable(fit, force)
    raw = []
    for attr, sl in dm.blocks.items():
        sub = dm.without_block(attr)
        df = sl.stop - sl.start
        if sub.n_params == 0:
            ll_r = log_likelihood(sub, np.zeros(0), False, False, backend)[0]
        else:
            restricted = fit_mnl(sub, tol=tol, max_iter=max_iter, ridge=fit.ridge or 1e-6,
                                 force_ridge=fit.ridge > 0, backend=backend)
            if restricted.flagged:
                raise FitError(f"restricted fit without {attr!r} did not converge")
            ll_r = restricted.log_likelihood
        lr = max(0.0, 2.0 * (fit.log_likelihood - ll_r))
        raw.append((attr, lr, df))
    top = max(lr for _, lr, _ in raw)
    rows = []
    for attr, lr, df in raw:
        norm = 100.0 if lr == top else 100.0 * lr / top
        rows.append(ImportanceRow(attr, lr, df, float(stats.chi2.sf(lr, df)), norm))
    return rows


# ---------------------------------------------------------------------------
# tabular output

def write_coefficients_csv(fit: MnlFit, path: str | Path, force: bool = False) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["attribute", "level", "est", "se", "z", "p"])
        for r in wald_table(fit, force=force):
            w.writerow([r.attribute, r.level, repr(r.estimate), repr(r.se), repr(r.z), repr(r.p)])


def write_effects_csv(rows: Sequence[EffectRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["attribute", "level", "effect", "ci_low", "ci_high"])
        for r in rows:
            w.writerow([r.attribute, r.level, repr(r.effect), repr(r.ci_low), repr(r.ci_high)])


def write_importance_csv(rows: Sequence[ImportanceRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["attribute", "lr", "df", "p", "importance"])
        for r in rows:
            w.writerow([r.attribute, repr(r.lr_statistic), r.df, repr(r.p_value),
                        repr(r.normalized_importance)])
