"""Tensor-product Chebyshev basis over (log price, log income, log quantity).

The inverse demand function is approximated by a fixed truncated series
on a rectangular box.  Each basis member is a product of first-kind
Chebyshev polynomials, one factor per coordinate, evaluated after an
affine map of the coordinate onto [-1, 1].  Evaluation outside the box
uses the same recurrences (polynomial extension, no clamping), which is
required because quadrature shifts the price argument beyond the
observed range.

Index order is fixed and documented: the quantity degree varies fastest,
then income, then price, so member ``j = (a * (deg_y + 1) + b) * (deg_q + 1) + c``
carries degrees ``(a, b, c)`` in (price, income, quantity).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DomainBox",
    "BasisSpec",
    "affine_map",
    "cheb_eval",
    "basis_eval",
    "basis_deriv",
]


@dataclass(frozen=True)
class DomainBox:
    """Rectangular normalization domain for the Chebyshev arguments."""

    p_lo: float
    p_hi: float
    y_lo: float
    y_hi: float
    q_lo: float
    q_hi: float

    def __post_init__(self) -> None:
        for lo, hi, name in (
            (self.p_lo, self.p_hi, "p"),
            (self.y_lo, self.y_hi, "y"),
            (self.q_lo, self.q_hi, "q"),
        ):
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise ValueError(f"box bounds for {name} must be finite")
            if not lo < hi:
                raise ValueError(f"box requires {name}_lo < {name}_hi, got [{lo}, {hi}]")

    @classmethod
    def from_data(
        cls,
        log_p: np.ndarray,
        log_y: np.ndarray,
        log_q: np.ndarray,
        price_pad: float = 0.0,
        rel_margin: float = 1e-9,
    ) -> "DomainBox":
        """Box covering the data range, padded in the price dimension.

        ``price_pad`` is normally 4 times the largest Berkson scale so
        quadrature-shifted prices stay numerically well scaled.  A tiny
        relative margin keeps boundary observations strictly inside.
        """
        log_p = np.asarray(log_p, dtype=float)
        log_y = np.asarray(log_y, dtype=float)
        log_q = np.asarray(log_q, dtype=float)

        def bounds(x: np.ndarray, pad: float) -> tuple[float, float]:
            lo, hi = float(np.min(x)), float(np.max(x))
            eps = rel_margin * max(hi - lo, 1.0)
            return lo - pad - eps, hi + pad + eps

        p_lo, p_hi = bounds(log_p, price_pad)
        y_lo, y_hi = bounds(log_y, 0.0)
        q_lo, q_hi = bounds(log_q, 0.0)
        return cls(p_lo, p_hi, y_lo, y_hi, q_lo, q_hi)

    def to_dict(self) -> dict:
        return {
            "p_lo": self.p_lo,
            "p_hi": self.p_hi,
            "y_lo": self.y_lo,
            "y_hi": self.y_hi,
            "q_lo": self.q_lo,
            "q_hi": self.q_hi,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DomainBox":
        return cls(**{k: float(d[k]) for k in ("p_lo", "p_hi", "y_lo", "y_hi", "q_lo", "q_hi")})


@dataclass(frozen=True)
class BasisSpec:
    """Degrees and domain of the tensor Chebyshev sieve.

    Defaults follow the empirical specification: cubic in price and
    income, 7th degree in quantity, total size
    ``J = (deg_p + 1) * (deg_y + 1) * (deg_q + 1)``.
    """

    box: DomainBox
    deg_p: int = 3
    deg_y: int = 3
    deg_q: int = 7

    def __post_init__(self) -> None:
        for d, name in ((self.deg_p, "deg_p"), (self.deg_y, "deg_y"), (self.deg_q, "deg_q")):
            if int(d) != d or d < 0:
                raise ValueError(f"{name} must be a nonnegative integer, got {d}")

    @property
    def size(self) -> int:
        return (self.deg_p + 1) * (self.deg_y + 1) * (self.deg_q + 1)

    def index_of(self, a: int, b: int, c: int) -> int:
        """Flat index of the member with degrees (a, b, c)."""
        if not (0 <= a <= self.deg_p and 0 <= b <= self.deg_y and 0 <= c <= self.deg_q):
            raise ValueError(f"degrees ({a}, {b}, {c}) outside spec")
        return (a * (self.deg_y + 1) + b) * (self.deg_q + 1) + c

    def to_dict(self) -> dict:
        return {
            "deg_p": self.deg_p,
            "deg_y": self.deg_y,
            "deg_q": self.deg_q,
            "box": self.box.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BasisSpec":
        return cls(
            box=DomainBox.from_dict(d["box"]),
            deg_p=int(d["deg_p"]),
            deg_y=int(d["deg_y"]),
            deg_q=int(d["deg_q"]),
        )


def affine_map(x, lo: float, hi: float):
    """Map [lo, hi] onto [-1, 1]; points outside map outside without error."""
    if not lo < hi:
        raise ValueError(f"affine_map requires lo < hi, got [{lo}, {hi}]")
    return 2.0 * (np.asarray(x, dtype=float) - lo) / (hi - lo) - 1.0


def _cheb_all(deg: int, t: np.ndarray) -> np.ndarray:
    """First-kind Chebyshev values T_0..T_deg, shape t.shape + (deg+1,)."""
    t = np.asarray(t, dtype=float)
    out = np.empty(t.shape + (deg + 1,))
    out[..., 0] = 1.0
    if deg >= 1:
        out[..., 1] = t
    for k in range(2, deg + 1):
        out[..., k] = 2.0 * t * out[..., k - 1] - out[..., k - 2]
    return out


def _cheb_all_deriv(deg: int, t: np.ndarray) -> np.ndarray:
    """Derivatives dT_k/dt for k = 0..deg via T'_k = k * U_{k-1}."""
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape + (deg + 1,))
    if deg >= 1:
        # U_{k-1} by the second-kind recurrence, scaled by k on the fly.
        u_prev = np.ones_like(t)  # U_0
        out[..., 1] = u_prev
        if deg >= 2:
            u_curr = 2.0 * t  # U_1
            out[..., 2] = 2.0 * u_curr
            for k in range(3, deg + 1):
                u_prev, u_curr = u_curr, 2.0 * t * u_curr - u_prev
                out[..., k] = k * u_curr
    return out


def cheb_eval(degree: int, t):
    """T_degree(t) by the three-term recurrence (stable for \\|t\\| <= 2)."""
    if int(degree) != degree or degree < 0:
        raise ValueError(f"degree must be a nonnegative integer, got {degree}")
    return _cheb_all(int(degree), t)[..., -1]


def _mapped(spec: BasisSpec, p, y, q):
    box = spec.box
    tp = affine_map(p, box.p_lo, box.p_hi)
    ty = affine_map(y, box.y_lo, box.y_hi)
    tq = affine_map(q, box.q_lo, box.q_hi)
    return np.broadcast_arrays(tp, ty, tq)


def _product(tp_vals, ty_vals, tq_vals, spec: BasisSpec) -> np.ndarray:
    # Outer product per point; reshape keeps q fastest, then y, then p.
    out = (
        tp_vals[..., :, None, None]
        * ty_vals[..., None, :, None]
        * tq_vals[..., None, None, :]
    )
    return out.reshape(out.shape[:-3] + (spec.size,))


def basis_eval(spec: BasisSpec, p, y, q) -> np.ndarray:
    """All J basis members at (p, y, q); trailing axis indexes members.

    Scalars give a length-J vector; array inputs broadcast and gain a
    trailing axis of length J.
    """
    tp, ty, tq = _mapped(spec, p, y, q)
    return _product(
        _cheb_all(spec.deg_p, tp),
        _cheb_all(spec.deg_y, ty),
        _cheb_all(spec.deg_q, tq),
        spec,
    )


def basis_deriv(spec: BasisSpec, p, y, q, wrt: str) -> np.ndarray:
    """Exact partials of every basis member with respect to p, y, or q.

    Differentiation is with respect to the unmapped coordinate, so the
    chain-rule factor 2 / (hi - lo) of the affine map is included.
    """
    box = spec.box
    tp, ty, tq = _mapped(spec, p, y, q)
    if wrt == "p":
        scale = 2.0 / (box.p_hi - box.p_lo)
        fp = _cheb_all_deriv(spec.deg_p, tp) * scale
        fy = _cheb_all(spec.deg_y, ty)
        fq = _cheb_all(spec.deg_q, tq)
    elif wrt == "y":
        scale = 2.0 / (box.y_hi - box.y_lo)
        fp = _cheb_all(spec.deg_p, tp)
        fy = _cheb_all_deriv(spec.deg_y, ty) * scale
        fq = _cheb_all(spec.deg_q, tq)
    elif wrt == "q":
        scale = 2.0 / (box.q_hi - box.q_lo)
        fp = _cheb_all(spec.deg_p, tp)
        fy = _cheb_all(spec.deg_y, ty)
        fq = _cheb_all_deriv(spec.deg_q, tq) * scale
    else:
        raise ValueError(f"wrt must be one of 'p', 'y', 'q', got {wrt!r}")
    return _product(fp, fy, fq, spec)
