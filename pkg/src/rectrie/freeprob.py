"""Rectangular free-probability transforms.

For a measure ``mu`` on singular values and aspect ratio ``alpha``:

* ``M(z) = int 1/(1 - t^2 z) dmu(t) - 1``   (even-moment generating function)
* ``T(x) = (alpha x + 1)(x + 1)``
* ``H(z) = z T(M(z))``
* ``C(z) = T^{-1}(z / H^{-1}(z))``           (rectangular R-transform)

``C`` linearizes rectangular free convolution, so for ``Y = S + U Z V^T``
with Haar ``U, V`` one has ``C_Y = C_S + C_Z`` in the large-N limit.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .errors import (
    ConvergenceError,
    DimensionError,
    DomainError,
    RangeError,
    SingularityError,
    UnsupportedFamilyError,
)
from .spectra import EmpiricalSpectrum

__all__ = [
    "NOISE_KINDS",
    "NoiseFamily",
    "TransformGrid",
    "check_free_additivity",
    "h_inverse",
    "h_transform",
    "m_transform",
    "rect_r_transform",
    "t_alpha",
    "t_alpha_inverse",
]

NOISE_KINDS = ("gaussian", "uniform_spectrum", "rank_one_sum", "empirical")

_POLE_TOL = 1e-14
_H_TOL = 1e-10
_EDGE_GAP = 1e-12


@dataclass(frozen=True, eq=False)
class NoiseFamily:
    """A bi-rotationally invariant noise ensemble identified by its R-transform.

    ``alpha`` may be left as ``None``; estimators then substitute the aspect
    ratio of the observed matrix via :meth:`with_alpha`.
    """

    kind: str
    alpha: float | None = None
    c: float | None = None
    spectrum: EmpiricalSpectrum | None = None

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise UnsupportedFamilyError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if self.alpha is not None and not 0.0 < self.alpha <= 1.0:
            raise DomainError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.kind == "rank_one_sum" and (self.c is None or not self.c > 0):
            raise DomainError("rank_one_sum requires c > 0")
        if self.kind == "empirical":
            if not isinstance(self.spectrum, EmpiricalSpectrum):
                raise DomainError("empirical family requires an EmpiricalSpectrum")
            if self.alpha is None:
                object.__setattr__(self, "alpha", self.spectrum.alpha)

    @classmethod
    def gaussian(cls, alpha: float | None = None) -> "NoiseFamily":
        return cls("gaussian", alpha)

    @classmethod
    def uniform_spectrum(cls) -> "NoiseFamily":
        return cls("uniform_spectrum", 1.0)

    @classmethod
    def rank_one_sum(cls, c: float, alpha: float | None = None) -> "NoiseFamily":
        return cls("rank_one_sum", alpha, c=float(c))

    @classmethod
    def empirical(cls, spectrum: EmpiricalSpectrum, alpha: float | None = None) -> "NoiseFamily":
        return cls("empirical", alpha, spectrum=spectrum)

    def with_alpha(self, alpha: float) -> "NoiseFamily":
        if self.alpha is not None:
            return self
        return NoiseFamily(self.kind, float(alpha), self.c, self.spectrum)

    def r_transform(self, z):
        return rect_r_transform(self, z)

    def describe(self) -> dict:
        out = {"kind": self.kind, "alpha": self.alpha}
        if self.c is not None:
            out["c"] = self.c
        return out


@dataclass(frozen=True, eq=False)
class TransformGrid:
    """Cached evaluations of one transform; ``transform_tag`` is ``M``, ``H`` or ``C``."""

    arguments: np.ndarray
    values: np.ndarray
    transform_tag: str

    def __post_init__(self):
        args = np.atleast_1d(np.asarray(self.arguments, dtype=np.complex128))
        vals = np.atleast_1d(np.asarray(self.values, dtype=np.complex128))
        if args.shape != vals.shape:
            raise DimensionError("arguments and values must have the same length")
        if not np.all(np.isfinite(vals)):
            raise DomainError("transform values must be finite")
        if self.transform_tag not in ("M", "H", "C"):
            raise DomainError(f"unknown transform tag {self.transform_tag!r}")
        object.__setattr__(self, "arguments", args)
        object.__setattr__(self, "values", vals)

    @classmethod
    def evaluate(cls, fn, arguments, tag: str) -> "TransformGrid":
        args = np.atleast_1d(np.asarray(arguments))
        return cls(args, np.array([fn(a) for a in args]), tag)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["re_arg", "im_arg", "re_val", "im_val", "tag"])
        for a, v in zip(self.arguments, self.values):
            w.writerow([repr(float(a.real)), repr(float(a.imag)), repr(float(v.real)), repr(float(v.imag)), self.transform_tag])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TransformGrid":
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise DimensionError("empty transform grid")
        tags = {r["tag"] for r in rows}
        if len(tags) != 1:
            raise DomainError(f"mixed transform tags {sorted(tags)}")
        args = [complex(float(r["re_arg"]), float(r["im_arg"])) for r in rows]
        vals = [complex(float(r["re_val"]), float(r["im_val"])) for r in rows]
        return cls(np.array(args), np.array(vals), tags.pop())


# --- T^{(alpha)} -----------------------------------------------------------

def t_alpha(x, alpha: float):
    """``T(x) = (alpha x + 1)(x + 1)``; ``alpha = 0`` gives ``x + 1``."""
    return (alpha * x + 1.0) * (x + 1.0)


def t_alpha_inverse(w, alpha: float):
    """Root of ``alpha x^2 + (1 + alpha) x + (1 - w) = 0`` with ``x(1) = 0``.

    Written as ``2(w - 1) / ((1 + alpha) + sqrt(disc))`` which equals the
    ``+sqrt`` quadratic root, avoids cancellation near ``w = 1`` and reduces
    to ``w - 1`` at ``alpha = 0``.
    """
    w = np.asarray(w)
    disc = (1.0 + alpha) ** 2 - 4.0 * alpha * (1.0 - w)
    root = np.sqrt(disc) if np.iscomplexobj(disc) else np.lib.scimath.sqrt(disc)
    out = 2.0 * (w - 1.0) / ((1.0 + alpha) + root)
    return out[()] if np.ndim(out) == 0 else out


# --- M and H -----------------------------------------------------------------

def _support_and_weights(source):
    """Return ``(points, weights)`` describing a measure on singular values."""
    from .theory import DensityGrid  # local import: theory depends on this module

    if isinstance(source, EmpiricalSpectrum):
        vals = source.values
        return vals, np.full(vals.size, 1.0 / vals.size)
    if isinstance(source, DensityGrid):
        # even integrand, so the symmetrized grid integrates it correctly
        return source.xs, source.quadrature_weights() * source.density
    vals = np.asarray(source, dtype=np.float64).ravel()
    if vals.size == 0:
        raise DimensionError("empty spectrum")
    return vals, np.full(vals.size, 1.0 / vals.size)


def m_transform(source, z):
    """``int 1/(1 - t^2 z) dmu(t) - 1`` for an empirical spectrum or density grid."""
    pts, wts = _support_and_weights(source)
    t2 = pts**2
    zz = np.asarray(z)
    flat = np.atleast_1d(zz).ravel()
    denom = 1.0 - t2[None, :] * flat[:, None]
    if isinstance(source, EmpiricalSpectrum) or not hasattr(source, "xs"):
        if np.any(np.abs(denom) < _POLE_TOL):
            raise SingularityError("m_transform evaluated on a pole 1/gamma_k^2")
    out = (1.0 / denom) @ wts - 1.0
    out = out.reshape(zz.shape)
    return out[()] if out.ndim == 0 else out


def _m_and_derivative(t2: np.ndarray, z):
    inv = 1.0 / (1.0 - t2 * z)
    return np.mean(inv) - 1.0, np.mean(t2 * inv * inv)


def h_transform(spec, z, alpha: float):
    """``H(z) = z T(M(z))``."""
    return z * t_alpha(m_transform(spec, z), alpha)


def _spectrum_values(spec) -> np.ndarray:
    if isinstance(spec, EmpiricalSpectrum):
        return spec.values
    return np.asarray(spec, dtype=np.float64).ravel()


def h_inverse(spec, w: float, alpha: float) -> float:
    """Solve ``H(z) = w`` for ``z`` in ``(0, 1/gamma_max^2)``.

    ``H`` is increasing there and blows up at the right end, so a bracketed
    search always succeeds for ``w >= 0``.
    """
    vals = _spectrum_values(spec)
    t2 = vals**2
    w = float(w)
    if w < 0:
        raise RangeError(f"w = {w} is outside the image [0, inf) of H", (0.0, np.inf))
    if w == 0.0:
        return 0.0
    gmax2 = float(t2.max())
    if gmax2 == 0.0:
        # delta_0: M vanishes identically and H(z) = z
        return w

    def f(z):
        return z * t_alpha(np.mean(1.0 / (1.0 - t2 * z)) - 1.0, alpha) - w

    hi = (1.0 / gmax2) * (1.0 - _EDGE_GAP)
    f_hi = f(hi)
    if f_hi < 0:
        raise RangeError(
            f"w = {w} exceeds the attainable maximum {f_hi + w:.6g} of H on (0, 1/gamma_max^2)",
            (0.0, f_hi + w),
        )
    try:
        z, info = scipy.optimize.brentq(f, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps,
                                        maxiter=500, full_output=True, disp=False)
    except (ValueError, RuntimeError) as exc:
        raise ConvergenceError(f"H inversion failed for w = {w}: {exc}", (0.0, hi)) from exc
    resid = abs(f(z))
    if not info.converged or resid > _H_TOL * max(1.0, abs(w)):
        raise ConvergenceError(
            f"H inversion residual {resid:.3g} above tolerance for w = {w}", (0.0, hi)
        )
    return float(z)


def _newton_h(t2: np.ndarray, z: complex, target: complex, alpha: float) -> complex | None:
    for _ in range(40):
        m, dm = _m_and_derivative(t2, z)
        h = z * t_alpha(m, alpha)
        dh = t_alpha(m, alpha) + z * (2.0 * alpha * m + 1.0 + alpha) * dm
        step = (h - target) / dh
        z -= step
        if not np.isfinite(z):
            return None
        if abs(step) <= 1e-15 * max(1.0, abs(z)):
            return z
    return None


def _h_inverse_complex(vals: np.ndarray, w: complex, alpha: float, steps: int = 16) -> complex:
    """Continue the real-axis inverse of ``H`` to complex ``w`` by Newton homotopy.

    The path runs from ``max(Re w, 0)`` to ``w``; a step whose Newton solve
    fails is halved, which keeps the iterate on one branch near the poles of
    a discrete spectrum.
    """
    t2 = vals**2
    start = max(w.real, 0.0)
    z = complex(h_inverse(vals, start, alpha))
    s, ds = 0.0, 1.0 / steps
    while s < 1.0:
        nxt = min(1.0, s + ds)
        found = _newton_h(t2, z, start + (w - start) * nxt, alpha)
        if found is None:
            ds /= 2
            if ds < 1e-6:
                raise ConvergenceError(f"complex H inversion stalled at w = {start + (w - start) * nxt}", (start, w))
            continue
        z, s = found, nxt
        ds = min(2 * ds, 1.0 / steps)
    return z


def _r_transform_empirical(vals: np.ndarray, z, alpha: float):
    zz = np.asarray(z)
    flat = np.atleast_1d(zz).ravel()
    out = np.empty(flat.shape, dtype=np.complex128 if np.iscomplexobj(flat) else np.float64)
    for i, w in enumerate(flat):
        if w == 0:
            out[i] = 0.0
            continue
        if np.iscomplexobj(flat) and w.imag != 0:
            zinv = _h_inverse_complex(vals, complex(w), alpha)
        else:
            zinv = h_inverse(vals, float(np.real(w)), alpha)
        if zinv == 0:
            # H^{-1}(w) = w T(0)^{-1} to first order, so w / H^{-1}(w) -> 1
            out[i] = 0.0
            continue
        out[i] = t_alpha_inverse(w / zinv, alpha)
    out = out.reshape(zz.shape)
    return out[()] if out.ndim == 0 else out


def _xcothx_minus_one(x):
    """``x coth(x) - 1`` with a series near zero to avoid cancellation."""
    x = np.asarray(x, dtype=np.complex128)
    out = np.empty_like(x)
    small = np.abs(x) < 1e-2
    xs = x[small] ** 2
    # x coth x = 1 + x^2/3 - x^4/45 + 2 x^6/945 - x^8/4725
    out[small] = xs * (1.0 / 3 + xs * (-1.0 / 45 + xs * (2.0 / 945 - xs / 4725.0)))
    xl = x[~small]
    out[~small] = xl / np.tanh(xl) - 1.0
    return out


def rect_r_transform(family: NoiseFamily, z):
    """Rectangular R-transform of a noise family at real or complex ``z``."""
    if family.alpha is None:
        raise DomainError("noise family has no aspect ratio; call with_alpha() first")
    alpha = family.alpha
    zz = np.asarray(z)
    if family.kind == "gaussian":
        out = zz / alpha
    elif family.kind == "rank_one_sum":
        if np.any(zz == 1):
            raise SingularityError("rank_one_sum R-transform has a pole at z = 1")
        out = family.c * zz / (1.0 - zz)
    elif family.kind == "uniform_spectrum":
        if abs(alpha - 1.0) > 1e-12:
            raise UnsupportedFamilyError(
                "uniform_spectrum R-transform is only available for alpha = 1; use an empirical family"
            )
        val = _xcothx_minus_one(2.0 * np.sqrt(zz.astype(np.complex128)))
        out = val if np.iscomplexobj(zz) else val.real
    else:
        out = _r_transform_empirical(family.spectrum.values, zz, alpha)
    out = np.asarray(out)
    return out[()] if out.ndim == 0 else out


def check_free_additivity(spec_S, spec_Z, spec_Y, alpha: float, u_grid) -> float:
    """Largest ``|C_Y(u) - C_S(u) - C_Z(u)|`` over ``u_grid`` using empirical transforms."""
    fams = [NoiseFamily.empirical(s, alpha) if isinstance(s, EmpiricalSpectrum)
            else NoiseFamily.empirical(EmpiricalSpectrum.from_values(s), alpha)
            for s in (spec_S, spec_Z, spec_Y)]
    u = np.asarray(u_grid, dtype=np.float64)
    cs, cz, cy = (rect_r_transform(f, u) for f in fams)
    return float(np.max(np.abs(cy - cs - cz)))
