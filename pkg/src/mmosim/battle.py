"""Match resolution and the per-cluster battle model.

The model maps a player's match index within a season to a win
probability (logistic in the index, blended with binned empirical means)
and to an income distribution (linear-in-index mean with mean-one
lognormal noise). Fitting uses only match logs; the season generators in
`datagen` provide ground truth the fit is tested against.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .domain import ProfileClass
from .rng import RandomStream

MODEL_VERSION = 1


class BattleError(Exception):
    pass


class ModelNotFitted(BattleError):
    pass


class InsufficientData(BattleError):
    pass


@dataclass(frozen=True)
class BattleOutcome:
    uid: int
    match_index: int     # n-th match of this player this season, from 1
    win: bool
    income: int
    abs_step: int = 0

    def __post_init__(self):
        if self.match_index < 1:
            raise ValueError("match_index starts at 1")
        if self.income < 0:
            raise ValueError("income must be >= 0")


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _fit_logistic_binned(ns: np.ndarray, wins: np.ndarray,
                         counts: np.ndarray) -> tuple[float, float]:
    """Newton fit of p(n) = sigmoid(w0 + w1*n) on per-bin sufficient stats."""
    w = np.zeros(2)
    X = np.stack([np.ones_like(ns, dtype=float), ns.astype(float)], axis=1)
    for _ in range(25):
        z = X @ w
        p = 1.0 / (1.0 + np.exp(-np.clip(z, -36, 36)))
        grad = X.T @ (counts * p - wins)
        h = (X * (counts * p * (1 - p))[:, None]).T @ X
        h += np.eye(2) * 1e-8
        try:
            step = np.linalg.solve(h, grad)
        except np.linalg.LinAlgError:
            break
        w -= step
        np.clip(w, -50.0, 50.0, out=w)
        if float(np.max(np.abs(step))) < 1e-10:
            break
    return float(w[0]), float(w[1])


@dataclass
class ClassCurves:
    """Fitted parameters and bin tables for one profile class."""

    w0: float
    w1: float
    income_a: float
    income_b: float
    income_sigma: float
    # bin tables keyed by match index: wins/count and income sum/count
    win_bins: dict[int, tuple[int, int]]
    income_bins: dict[int, tuple[float, int]]
    min_bin_count: int

    def win_p(self, n: int) -> float:
        parametric = _sigmoid(self.w0 + self.w1 * n)
        bin_ = self.win_bins.get(n)
        if bin_:
            wins, count = bin_
            weight = count / (count + self.min_bin_count)
            parametric = weight * (wins / count) + (1 - weight) * parametric
        return min(1.0, max(0.0, parametric))

    def income_mean(self, n: int) -> float:
        parametric = self.income_a + self.income_b * n
        bin_ = self.income_bins.get(n)
        if bin_:
            total, count = bin_
            weight = count / (count + self.min_bin_count)
            parametric = weight * (total / count) + (1 - weight) * parametric
        return max(0.0, parametric)


class BattleModel:
    def __init__(self, curves: dict[ProfileClass, ClassCurves],
                 fitted_on: str = ""):
        self.curves = curves
        self.fitted_on = fitted_on

    def _class_curves(self, profile_class: ProfileClass) -> ClassCurves:
        c = self.curves.get(profile_class)
        if c is None:
            raise ModelNotFitted(f"no curves for class {profile_class.value}")
        return c

    def win_probability(self, profile_class: ProfileClass, n: int) -> float:
        return self._class_curves(profile_class).win_p(n)

    def income_stats(self, profile_class: ProfileClass,
                     n: int) -> tuple[float, float]:
        c = self._class_curves(profile_class)
        return c.income_mean(n), c.income_sigma

    def sample(self, profile_class: ProfileClass, n: int, rng: RandomStream,
               lambda_win: float = 1.0) -> tuple[bool, int]:
        """One match: Bernoulli win, lognormal income (boosted on a win)."""
        if n < 1:
            raise ValueError("match index starts at 1")
        if lambda_win < 1.0:
            raise ValueError("lambda_win must be >= 1")
        c = self._class_curves(profile_class)
        win = rng.random() < c.win_p(n)
        draw = c.income_mean(n)
        if c.income_sigma > 0:
            draw *= rng.lognormal_factor(c.income_sigma)
        if win:
            draw *= lambda_win
        income = max(0, int(round(draw)))
        return win, income

    @classmethod
    def constant(cls, p: float, income: float,
                 classes: Optional[Iterable[ProfileClass]] = None) -> "BattleModel":
        """Degenerate single-value model, for tests and dry runs."""
        logit = 50.0 if p >= 1 else (-50.0 if p <= 0 else math.log(p / (1 - p)))
        curves = {
            pc: ClassCurves(logit, 0.0, float(income), 0.0, 0.0, {}, {}, 30)
            for pc in (classes or list(ProfileClass))
        }
        return cls(curves, fitted_on="constant")

    # -- persistence -------------------------------------------------------

    def to_doc(self) -> dict:
        return {
            "model_version": MODEL_VERSION,
            "fitted_on": self.fitted_on,
            "classes": {
                pc.value: {
                    "win": {"w0": c.w0, "w1": c.w1},
                    "income": {"a": c.income_a, "b": c.income_b,
                               "sigma": c.income_sigma},
                    "min_bin_count": c.min_bin_count,
                    "win_bins": {str(n): list(v)
                                 for n, v in sorted(c.win_bins.items())},
                    "income_bins": {str(n): list(v)
                                    for n, v in sorted(c.income_bins.items())},
                }
                for pc, c in sorted(self.curves.items(), key=lambda kv: kv[0].value)
            },
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_doc(), indent=2, sort_keys=True),
                              "utf-8")

    @classmethod
    def from_doc(cls, doc: dict) -> "BattleModel":
        if doc.get("model_version") != MODEL_VERSION:
            raise BattleError(f"unsupported model_version: {doc.get('model_version')!r}")
        curves = {}
        for name, c in doc["classes"].items():
            curves[ProfileClass(name)] = ClassCurves(
                w0=c["win"]["w0"], w1=c["win"]["w1"],
                income_a=c["income"]["a"], income_b=c["income"]["b"],
                income_sigma=c["income"]["sigma"],
                win_bins={int(n): (v[0], v[1])
                          for n, v in c["win_bins"].items()},
                income_bins={int(n): (v[0], v[1])
                             for n, v in c["income_bins"].items()},
                min_bin_count=c["min_bin_count"],
            )
        return cls(curves, fitted_on=doc.get("fitted_on", ""))

    @classmethod
    def load(cls, path: str | Path) -> "BattleModel":
        return cls.from_doc(json.loads(Path(path).read_text("utf-8")))


def dataset_fingerprint(records: list[dict]) -> str:
    canon = sorted(
        json.dumps(r, sort_keys=True, separators=(",", ":")) for r in records
    )
    h = hashlib.sha256()
    for line in canon:
        h.update(line.encode())
        h.update(b"\n")
    return h.hexdigest()


def fit(match_logs: list[dict], min_bin_count: int = 30,
        match_band: tuple[int, int] = (35, 40),
        lambda_win: float = 1.0) -> BattleModel:
    """Fit per-class curves from match-log records.

    Records need uid, profile_class, n, win, income. Players outside the
    match-count band are dropped (mirrors training on similarly active
    players). Deterministic and input-order independent.
    """
    records = sorted(
        match_logs,
        key=lambda r: (r["profile_class"], r["uid"], r["n"]),
    )
    # Band filter on per-player match counts.
    per_player: dict[int, int] = {}
    for r in records:
        per_player[r["uid"]] = max(per_player.get(r["uid"], 0), r["n"])
    lo, hi = match_band
    records = [r for r in records if lo <= per_player[r["uid"]] <= hi]

    by_class: dict[str, list[dict]] = {}
    for r in records:
        by_class.setdefault(r["profile_class"], []).append(r)

    curves: dict[ProfileClass, ClassCurves] = {}
    for pc in ProfileClass:
        rows = by_class.get(pc.value)
        if not rows:
            raise InsufficientData(f"no usable match logs for class {pc.value}")
        ns = np.array([r["n"] for r in rows])
        wins = np.array([1 if r["win"] else 0 for r in rows])
        incomes = np.array([float(r["income"]) for r in rows])
        if lambda_win > 1.0:
            incomes = np.where(wins == 1, incomes / lambda_win, incomes)

        uniq = np.unique(ns)
        full = uniq[np.bincount(ns)[uniq] >= min_bin_count]
        if full.size:
            n_max_fit = int(full.max())
            missing = set(range(1, n_max_fit + 1)) - set(uniq.tolist())
            if missing:
                raise InsufficientData(
                    f"class {pc.value}: empty bin n={min(missing)}")

        win_bins, income_bins = {}, {}
        bn, bw, bc = [], [], []
        for n in uniq.tolist():
            mask = ns == n
            count = int(mask.sum())
            w = int(wins[mask].sum())
            win_bins[n] = (w, count)
            income_bins[n] = (float(incomes[mask].sum()), count)
            bn.append(n)
            bw.append(w)
            bc.append(count)

        w0, w1 = _fit_logistic_binned(np.array(bn), np.array(bw, dtype=float),
                                      np.array(bc, dtype=float))

        # Income mean is linear in n: ordinary least squares.
        A = np.stack([np.ones_like(ns, dtype=float), ns.astype(float)], axis=1)
        coef, *_ = np.linalg.lstsq(A, incomes, rcond=None)
        a, b = float(coef[0]), float(coef[1])

        fitted_mean = np.maximum(A @ coef, 1e-9)
        positive = incomes > 0
        if positive.any():
            log_resid = np.log(incomes[positive] / fitted_mean[positive])
            sigma = float(np.std(log_resid))
        else:
            sigma = 0.0

        curves[pc] = ClassCurves(
            w0, w1, a, b, sigma, win_bins, income_bins, min_bin_count
        )

    return BattleModel(curves, fitted_on=dataset_fingerprint(records))


def predict_curve(model: BattleModel, profile_class: ProfileClass,
                  n_max: int) -> list[dict]:
    """Series of (n, p_win, mean_income) for plotting and export."""
    c = model._class_curves(profile_class)
    return [
        {"n": n, "p_win": c.win_p(n), "mean_income": c.income_mean(n)}
        for n in range(1, n_max + 1)
    ]


def evaluate_holdout(model: BattleModel, holdout: list[dict],
                     lambda_win: float = 1.0,
                     match_band: tuple[int, int] = (35, 40),
                     n_range: tuple[int, int] = (1, 35)) -> dict:
    """Per-class win-rate MAE and mean-income relative error on a holdout.

    Refuses data whose fingerprint matches the training set (leakage guard).
    """
    fp = dataset_fingerprint(sorted(
        holdout, key=lambda r: (r["profile_class"], r["uid"], r["n"])))
    if fp == model.fitted_on:
        raise BattleError("holdout set is identical to the training set")

    per_player: dict[int, int] = {}
    for r in holdout:
        per_player[r["uid"]] = max(per_player.get(r["uid"], 0), r["n"])
    lo_band, hi_band = match_band
    rows = [r for r in holdout if lo_band <= per_player[r["uid"]] <= hi_band]

    lo, hi = n_range
    report = {}
    for pc in ProfileClass:
        cls_rows = [r for r in rows
                    if r["profile_class"] == pc.value and lo <= r["n"] <= hi]
        if not cls_rows:
            raise InsufficientData(f"holdout has no rows for {pc.value}")
        ns = np.array([r["n"] for r in cls_rows])
        wins = np.array([1.0 if r["win"] else 0.0 for r in cls_rows])
        incomes = np.array([float(r["income"]) for r in cls_rows])
        if lambda_win > 1.0:
            incomes = np.where(wins == 1, incomes / lambda_win, incomes)

        win_err, inc_err, bin_counts = [], [], []
        for n in range(lo, hi + 1):
            mask = ns == n
            count = int(mask.sum())
            if count == 0:
                continue
            emp_win = float(wins[mask].mean())
            emp_inc = float(incomes[mask].mean())
            win_err.append(abs(model.win_probability(pc, n) - emp_win))
            pred_inc = model.income_stats(pc, n)[0]
            inc_err.append(abs(pred_inc - emp_inc) / max(emp_inc, 1e-9))
            bin_counts.append(count)
        report[pc.value] = {
            "win_mae": float(np.mean(win_err)),
            "income_rel_err": float(np.max(inc_err)),
            "income_rel_err_mean": float(np.mean(inc_err)),
            "min_bin_samples": min(bin_counts),
            "bins": len(bin_counts),
        }
    return report
