"""Adaptive Simpson quadrature with Richardson correction."""
from __future__ import annotations

from typing import Callable


class QuadratureError(RuntimeError):
    pass


def adaptive_simpson(f: Callable[[float], float], a: float, b: float, tol: float = 1e-10,
                     max_intervals: int = 1_000_000, min_width: float = 0.0) -> float:
    """Integrate ``f`` over [a, b] to absolute tolerance ``tol``.

    Uses an explicit stack instead of recursion.  Raises QuadratureError once
    more than ``max_intervals`` subintervals have been generated.
    """
    if a == b:
        return 0.0
    if b < a:
        return -adaptive_simpson(f, b, a, tol, max_intervals, min_width)

    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    whole = (b - a) * (fa + 4.0 * fm + fb) / 6.0
    stack = [(a, b, fa, fm, fb, whole, tol)]
    total = 0.0
    count = 1
    while stack:
        lo, hi, flo, fmid, fhi, est, eps = stack.pop()
        mid = 0.5 * (lo + hi)
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = f(lm), f(rm)
        left = (mid - lo) * (flo + 4.0 * flm + fmid) / 6.0
        right = (hi - mid) * (fmid + 4.0 * frm + fhi) / 6.0
        delta = left + right - est
        if abs(delta) <= 15.0 * eps or (hi - lo) <= min_width:
            total += left + right + delta / 15.0
            continue
        count += 2
        if count > max_intervals:
            raise QuadratureError(f"adaptive Simpson exceeded {max_intervals} subintervals on [{a}, {b}]")
        stack.append((lo, mid, flo, flm, fmid, left, 0.5 * eps))
        stack.append((mid, hi, fmid, frm, fhi, right, 0.5 * eps))
    return total
