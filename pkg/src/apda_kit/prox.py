"""Regularizers and their proximal maps, primal and conjugate.

Three regularizers cover the experiment families: ``l1`` (sparse
regression), ``group-l2-1`` (isotropic TV once composed with the image
gradient) and ``zero``. Their conjugates are indicators of norm balls, so
the conjugate prox is a projection and does not depend on the step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Regularizer",
    "l1",
    "group_l21",
    "zero",
    "gradient_groups",
    "prox_g",
    "prox_g_conj",
    "prox_conj_via_moreau",
]

KINDS = ("l1", "group-l2-1", "zero")


@dataclass(frozen=True, eq=False)
class Regularizer:
    """``g`` in ``min_x f(x) + g(Ax)``.

    ``groups`` is only used by ``group-l2-1``: an integer array of shape
    ``(n_groups, group_size)`` whose rows partition ``range(dim)``.
    """

    kind: str
    lam: float = 0.0
    groups: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError(f"lambda must be finite and nonnegative, got {self.lam}")
        if self.kind == "group-l2-1":
            if self.groups is None:
                raise ValueError("group-l2-1 needs a group layout")
            groups = np.asarray(self.groups, dtype=np.intp)
            if groups.ndim != 2:
                raise ValueError("groups must be a 2-D index array")
            flat = np.sort(groups.ravel())
            if not np.array_equal(flat, np.arange(flat.size)):
                raise ValueError("groups must partition the dual vector exactly")
            groups.setflags(write=False)
            object.__setattr__(self, "groups", groups)

    @property
    def dim(self):
        """Dual dimension fixed by the layout, or None if unconstrained."""
        return None if self.groups is None else self.groups.size

    def value(self, u):
        """g(u)."""
        u = np.asarray(u, dtype=float)
        if self.kind == "l1":
            return self.lam * float(np.abs(u).sum())
        if self.kind == "group-l2-1":
            return self.lam * float(_group_norms(u, self.groups).sum())
        return 0.0

    def conj_value(self, y, atol=1e-12):
        """g*(y): 0 on the dual ball, ``inf`` outside (with slack ``atol``)."""
        y = np.asarray(y, dtype=float)
        if self.kind == "l1":
            inside = np.abs(y).max(initial=0.0) <= self.lam + atol
        elif self.kind == "group-l2-1":
            inside = _group_norms(y, self.groups).max(initial=0.0) <= self.lam + atol
        else:
            inside = np.abs(y).max(initial=0.0) <= atol
        return 0.0 if inside else math.inf


def l1(lam):
    return Regularizer("l1", float(lam))


def group_l21(lam, groups):
    return Regularizer("group-l2-1", float(lam), groups)


def zero():
    return Regularizer("zero")


def gradient_groups(height, width):
    """Pixel-wise (horizontal, vertical) pairs for the stacked gradient."""
    n = int(height) * int(width)
    return np.column_stack([np.arange(n), np.arange(n, 2 * n)])


def _group_norms(z, groups):
    return np.sqrt((z[groups] ** 2).sum(axis=1))


def _check(z):
    z = np.asarray(z, dtype=float)
    if not np.isfinite(z).all():
        raise FloatingPointError("non-finite input to proximal operator")
    return z


def prox_g(reg, t, z):
    """``argmin_u t*g(u) + 0.5*||z - u||^2``."""
    if t <= 0:
        raise ValueError("prox step must be positive")
    z = _check(z)
    thresh = t * reg.lam
    if reg.kind == "l1":
        return np.sign(z) * np.maximum(np.abs(z) - thresh, 0.0)
    if reg.kind == "group-l2-1":
        norms = _group_norms(z, reg.groups)
        scale = np.zeros_like(norms)
        nz = norms > 0
        scale[nz] = np.maximum(0.0, 1.0 - thresh / norms[nz])
        out = np.empty_like(z)
        out[reg.groups] = z[reg.groups] * scale[:, None]
        return out
    return z.copy()


def prox_g_conj(reg, sigma, z):
    """``prox_{sigma g*}(z)``: projection onto the dual ball of ``g``."""
    if sigma <= 0:
        raise ValueError("prox step must be positive")
    z = _check(z)
    if reg.kind == "l1":
        return np.clip(z, -reg.lam, reg.lam)
    if reg.kind == "group-l2-1":
        norms = _group_norms(z, reg.groups)
        scale = np.ones_like(norms)
        big = norms > reg.lam
        scale[big] = reg.lam / norms[big]
        out = np.empty_like(z)
        out[reg.groups] = z[reg.groups] * scale[:, None]
        return out
    return np.zeros_like(z)


def prox_conj_via_moreau(reg, sigma, z):
    """Moreau identity route, kept as an independent check of ``prox_g_conj``."""
    if sigma <= 0:
        raise ValueError("prox step must be positive")
    z = _check(z)
    return z - sigma * prox_g(reg, 1.0 / sigma, z / sigma)
