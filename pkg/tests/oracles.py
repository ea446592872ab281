"""Independent reference implementations used as test oracles.

Everything here is written from the definitions with plain loops, sharing
no code with the package, so agreement is evidence rather than tautology.
"""

from __future__ import annotations

import cmath
import math

import numpy as np


def conv2d_direct(x, w, b):
    """Same-padded stride-1 convolution by explicit summation (NHWC, HWIO)."""
    n, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    out = np.zeros((n, h, wd, cout), dtype=np.float64)
    for i in range(h):
        for j in range(wd):
            acc = np.zeros((n, cout))
            for di in range(kh):
                for dj in range(kw):
                    y, xx = i + di - ph, j + dj - pw
                    if 0 <= y < h and 0 <= xx < wd:
                        acc += x[:, y, xx, :] @ w[di, dj]
            out[:, i, j, :] = acc + b
    return out


def dft2_naive(img):
    """Orthonormal 2-D DFT as the literal quadruple sum, O(N^4)."""
    m, n = img.shape
    rows = np.arange(m)[:, None]
    cols = np.arange(n)[None, :]
    out = np.empty((m, n), dtype=np.complex128)
    for u in range(m):
        for v in range(n):
            phase = np.exp(-2j * np.pi * (u * rows / m + v * cols / n))
            out[u, v] = np.sum(img * phase)
    return out / math.sqrt(m * n)


def dft_entry(img, u, v):
    """One DFT coefficient with pure-Python arithmetic (spot checks)."""
    m, n = img.shape
    total = 0j
    for r in range(m):
        for c in range(n):
            total += complex(img[r, c]) * cmath.exp(-2j * math.pi * (u * r / m + v * c / n))
    return total / math.sqrt(m * n)


def ssim_windows(x, y, win=7, k1=0.01, k2=0.03, d=1.0):
    """Mean SSIM by visiting every window and forming moments by hand."""
    c1, c2 = (k1 * d) ** 2, (k2 * d) ** 2
    h, w = x.shape
    vals = []
    npix = win * win
    for i in range(h - win + 1):
        for j in range(w - win + 1):
            a = [float(v) for v in x[i:i + win, j:j + win].ravel()]
            b = [float(v) for v in y[i:i + win, j:j + win].ravel()]
            ma, mb = sum(a) / npix, sum(b) / npix
            va = sum((p - ma) ** 2 for p in a) / npix
            vb = sum((q - mb) ** 2 for q in b) / npix
            cab = sum((p - ma) * (q - mb) for p, q in zip(a, b)) / npix
            vals.append(((2 * ma * mb + c1) * (2 * cab + c2))
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return sum(vals) / len(vals)


def mse_loops(y, yh):
    total = 0.0
    count = 0
    for a, b in zip(np.ravel(y), np.ravel(yh)):
        total += (float(a) - float(b)) ** 2
        count += 1
    return total / count


def nmse_loops(y, yh):
    num = sum((float(a) - float(b)) ** 2 for a, b in zip(np.ravel(y), np.ravel(yh)))
    den = sum(float(a) ** 2 for a in np.ravel(y))
    return num / den


def psnr_closed(mse_value, peak=1.0):
    return 10 * math.log10(peak ** 2 / mse_value)


def walk_costs(text: str):
    """FLOPs and params from the graph export text alone.

    Re-derives every spatial size by replaying pools/upsamples, so it does
    not rely on the compiler's shape annotation.
    """
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    header = [ln for ln in text.splitlines() if ln.startswith("# input")][0]
    h0, w0, _ = (int(v) for v in header.split()[2].split("x"))
    hw = {}
    flops = params = 0
    for ln in lines:
        head, srcs = ln.split("<-")
        nid, kind, kernel, cin, cout = head.split()
        nid, cin, cout = int(nid), int(cin), int(cout)
        ins = [] if srcs.strip() == "-" else [int(s) for s in srcs.split(",")]
        if kind == "INPUT":
            hw[nid] = (h0, w0)
            continue
        h, w = hw[ins[0]]
        if kind in ("MAX_POOL_2", "AVG_POOL_2"):
            h, w = h // 2, w // 2
        elif kind == "UPSAMPLE_2":
            h, w = h * 2, w * 2
        hw[nid] = (h, w)
        if kernel == "-":
            continue
        k = int(kernel)
        if kind == "SEP_CONV_PAIR":
            flops += h * w * cin * cout * k * 1 + h * w * cout * cout * 1 * k
            params += k * cin * cout + cout + k * cout * cout + cout
        else:
            flops += h * w * cin * cout * k * k
            params += k * k * cin * cout + cout
    return flops, params


def tournament_win_probability(n: int, k: int) -> float:
    """P(best of n is drawn at least once in k draws with replacement)."""
    return 1 - ((n - 1) / n) ** k
