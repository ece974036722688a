"""Time-dependent feedback policies ``t -> (k, k)`` state-policy arrays."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError


class ConstantPolicy:
    """Same state policy at every time. ``controls`` is ``(k, k)`` or a single ``(k,)`` row."""

    def __init__(self, controls, k=None, name="constant"):
        c = np.asarray(controls, dtype=float)
        if c.ndim == 1:
            c = np.tile(c, (k or c.shape[0], 1))
        self.controls = c
        self.name = name

    def __call__(self, t):
        return self.controls

    def batch(self, ts):
        return np.broadcast_to(self.controls, np.shape(ts) + self.controls.shape)

    def to_dict(self):
        return {"type": "constant", "name": self.name, "controls": self.controls.tolist()}


def zero_policy(spec):
    return ConstantPolicy(np.zeros((spec.k, spec.k)), name="zero")


def upper_policy(spec):
    return ConstantPolicy(spec.control_set.hi, spec.k, name="upper")


@dataclass(eq=False)
class PolicyGrid:
    """Feedback law ``Gamma(t, j)`` stored on a uniform time grid.

    ``controls[m, j]`` is the control vector of a player in state ``j`` at
    ``times[m]``; between nodes the law is linearly interpolated and
    re-projected onto the control box.
    """

    times: np.ndarray
    controls: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    name: str = "grid"

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.controls = np.asarray(self.controls, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if len(self.times) < 2 or np.any(np.diff(self.times) <= 0):
            raise DomainError("policy grid times must be strictly increasing (at least two)")
        self._t0 = self.times[0]
        self._h = (self.times[-1] - self.times[0]) / (len(self.times) - 1)
        self._uniform = np.allclose(np.diff(self.times), self._h, rtol=1e-9, atol=0)

    def _locate(self, t):
        last = len(self.times) - 1
        span = self.times[-1] - self.times[0]
        if np.any(t < self.times[0] - 1e-9 * span) or np.any(t > self.times[-1] + 1e-9 * span):
            raise DomainError(f"t={t} outside policy grid [{self.times[0]}, {self.times[-1]}]")
        if self._uniform:
            s = (t - self._t0) / self._h
            m = np.clip(np.floor(s + 1e-9).astype(int), 0, last - 1)
            return m, np.clip(s - m, 0.0, 1.0)
        m = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, last - 1)
        w = (t - self.times[m]) / (self.times[m + 1] - self.times[m])
        return m, np.clip(w, 0.0, 1.0)

    def __call__(self, t):
        if self._uniform:
            s = (t - self._t0) / self._h
            last = len(self.times) - 1
            if s < -1e-9 * last or s > last * (1 + 1e-9):
                raise DomainError(f"t={t} outside policy grid [{self.times[0]}, {self.times[-1]}]")
            m = min(max(math.floor(s + 1e-9), 0), last - 1)
            w = min(max(s - m, 0.0), 1.0)
        else:
            m, w = self._locate(float(t))
        if w <= 1e-12:
            return self.controls[m]
        if w >= 1 - 1e-12:
            return self.controls[m + 1]
        u = (1 - w) * self.controls[m] + w * self.controls[m + 1]
        return np.clip(u, self.lower, self.upper)

    def batch(self, ts):
        ts = np.asarray(ts, dtype=float)
        m, w = self._locate(ts)
        w = w[..., None, None]
        u = (1 - w) * self.controls[m] + w * self.controls[m + 1]
        return np.clip(u, self.lower, self.upper)

    def to_dict(self):
        return {"type": "grid", "name": self.name, "times": self.times.tolist(),
                "controls": self.controls.tolist()}


def policy_at(policy, t, j):
    """Control vector of a player in state ``j`` at time ``t``."""
    return np.asarray(policy(t))[j]


def policy_batch(policy, ts):
    """Evaluate ``policy`` at an array of times, shape ``ts.shape + (k, k)``."""
    if hasattr(policy, "batch"):
        return policy.batch(ts)
    ts = np.asarray(ts, dtype=float)
    return np.stack([np.asarray(policy(t)) for t in ts.ravel()]).reshape(ts.shape + (-1,) * 2)


def policy_from_dict(d, spec):
    """Build a policy from the JSON schema documented in ``docs/model_format.md``."""
    kind = d.get("type", "constant")
    name = d.get("name", kind)
    if kind == "zero":
        return ConstantPolicy(np.zeros((spec.k, spec.k)), name=name)
    if kind == "upper":
        return ConstantPolicy(spec.control_set.hi, spec.k, name=name)
    if kind == "constant":
        c = np.asarray(d["control"] if "control" in d else d["controls"], dtype=float)
        pol = ConstantPolicy(c, spec.k, name=name)
        if pol.controls.shape != (spec.k, spec.k):
            raise DomainError(f"policy {name!r}: controls must be k or k x k numbers")
        if not spec.control_set.contains(pol.controls):
            raise DomainError(f"policy {name!r}: controls outside U")
        return pol
    if kind == "grid":
        pol = PolicyGrid(d["times"], d["controls"], spec.control_set.lo, spec.control_set.hi, name=name)
        if pol.controls.shape[1:] != (spec.k, spec.k) or len(pol.times) != len(pol.controls):
            raise DomainError(f"policy {name!r}: grid controls must have shape (len(times), k, k)")
        return pol
    raise DomainError(f"unknown policy type {kind!r}")
