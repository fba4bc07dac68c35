"""Residual losses and their IRLS weight functions.

Pure evaluation layer: squared, absolute, Huber, pinball (quantile) and
|e|^p losses over prediction residuals, plus the reweighting factors the
iterative solvers use. No fitting happens here; see `solvers`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["LossSpec", "eval_loss", "irls_weight", "total_objective"]

_KINDS = ("l2", "l1", "huber", "quantile", "lp")


@dataclass(frozen=True)
class LossSpec:
    """Tagged residual loss: l2 | l1 | huber(delta) | quantile(tau) | lp(p).

    Only the hyperparameter belonging to the chosen kind may be set.
    Huber requires delta > 0, quantile requires tau in (0, 1), lp requires
    p in (0, 1).
    """

    kind: str
    delta: float | None = None
    tau: float | None = None
    p: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        wanted = {"huber": "delta", "quantile": "tau", "lp": "p"}.get(self.kind)
        for name in ("delta", "tau", "p"):
            value = getattr(self, name)
            if name == wanted:
                continue
            if value is not None:
                raise ValueError(f"{self.kind} loss takes no {name!r} parameter")
        if self.kind == "huber" and not (self.delta is not None and self.delta > 0):
            raise ValueError("huber requires delta > 0")
        if self.kind == "quantile" and not (self.tau is not None and 0.0 < self.tau < 1.0):
            raise ValueError("quantile requires tau in (0, 1)")
        if self.kind == "lp" and not (self.p is not None and 0.0 < self.p < 1.0):
            raise ValueError("lp requires p in (0, 1)")

    @classmethod
    def l2(cls) -> "LossSpec":
        return cls("l2")

    @classmethod
    def l1(cls) -> "LossSpec":
        return cls("l1")

    @classmethod
    def huber(cls, delta: float) -> "LossSpec":
        return cls("huber", delta=float(delta))

    @classmethod
    def quantile(cls, tau: float) -> "LossSpec":
        return cls("quantile", tau=float(tau))

    @classmethod
    def lp(cls, p: float) -> "LossSpec":
        return cls("lp", p=float(p))

    @property
    def label(self) -> str:
        if self.kind == "huber":
            return f"huber(delta={self.delta:g})"
        if self.kind == "quantile":
            return f"quantile(tau={self.tau:g})"
        if self.kind == "lp":
            return f"lp(p={self.p:g})"
        return self.kind

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for name in ("delta", "tau", "p"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "LossSpec":
        return cls(**data)


def _as_array(eps):
    return np.asarray(eps, dtype=float)


def eval_loss(spec: LossSpec, eps):
    """Evaluate rho(eps) for a scalar or array of residuals.

    Huber is quadratic inside [-delta, delta] and delta*(2|e| - delta)
    outside; pinball charges tau*e above zero and (tau-1)*e below; the
    lp loss is plain |e|**p. Total function, no error cases.
    """
    e = _as_array(eps)
    if spec.kind == "l2":
        out = e * e
    elif spec.kind == "l1":
        out = np.abs(e)
    elif spec.kind == "huber":
        d = spec.delta
        a = np.abs(e)
        out = np.where(a <= d, e * e, d * (2.0 * a - d))
    elif spec.kind == "quantile":
        t = spec.tau
        out = np.where(e >= 0.0, t * e, (t - 1.0) * e)
    else:  # lp
        out = np.abs(e) ** spec.p
    return float(out) if out.ndim == 0 else out


def irls_weight(spec: LossSpec, eps, smoothing: float = 0.0):
    """Reweighting factor for one IRLS step at residual eps.

    huber:    min(1, delta / max(|e|, smoothing))
    lp:       (e^2 + smoothing)^((p-2)/2)
    l1:       lp formula at p = 1
    quantile: |tau - 1[e < 0]| / max(|e|, smoothing)
    l2:       constant 1

    For lp/l1/quantile a zero residual with zero smoothing has no finite
    weight and raises; huber's weight is capped at 1 so it stays total.
    """
    if smoothing < 0:
        raise ValueError("smoothing must be >= 0")
    e = _as_array(eps)
    if spec.kind == "l2":
        out = np.ones_like(e)
        return float(out) if out.ndim == 0 else out
    a = np.abs(e)
    if spec.kind == "huber":
        denom = np.maximum(a, smoothing)
        with np.errstate(divide="ignore"):
            ratio = np.where(denom > 0.0, spec.delta / np.where(denom > 0.0, denom, 1.0), np.inf)
        out = np.minimum(1.0, ratio)
    elif spec.kind in ("lp", "l1"):
        if smoothing == 0.0 and np.any(a == 0.0):
            raise ValueError(f"{spec.kind} weight undefined at zero residual with zero smoothing")
        p = 1.0 if spec.kind == "l1" else spec.p
        out = (e * e + smoothing) ** ((p - 2.0) / 2.0)
    elif spec.kind == "quantile":
        if smoothing == 0.0 and np.any(e == 0.0):
            raise ValueError("quantile weight undefined at zero residual with zero smoothing")
        t = spec.tau
        out = np.where(e < 0.0, 1.0 - t, t) / np.maximum(a, smoothing)
    else:  # pragma: no cover
        raise ValueError(f"no IRLS weight for {spec.kind}")
    return float(out) if out.ndim == 0 else out


def total_objective(spec: LossSpec, residuals) -> float:
    """Sum of rho(eps_t) over a residual sequence; empty sums to 0."""
    e = _as_array(residuals)
    if e.size == 0:
        return 0.0
    return float(np.sum(eval_loss(spec, e)))
