"""Numba kernels for splat compositing and its backward pass.

Single-threaded on purpose: the per-pixel transmittance update is a strict
front-to-back recurrence and the deterministic splat order is part of the
renderer contract. All kernels share the same traversal so the counting,
forward, and CSR-fill passes see identical contributor sets.

A contributor is a (pixel, splat) pair that survived all of: inside the 3
sigma circle, alpha > 0, pixel transmittance still above the cutoff. The
backward pass recomputes alpha from the stored splat state instead of storing
it, so the CSR arrays stay small.
"""

import numpy as np
from numba import njit

T_CUTOFF = 1e-4
ALPHA_MAX = 0.999
TRUNC_SIGMAS = 3.0


@njit(cache=True)
def composite(mode, ux, uy, sigma, opac, zcam, color, height, width,
              out_color, out_draw, out_sil, trans, counts, offsets,
              csr_splat, csr_T, fill_cursor):
    """mode 0: forward images + per-pixel contributor counts.
    mode 1: identical traversal, fills csr_splat/csr_T at offsets instead.

    Splats must arrive pre-sorted front to back; arrays are compact (culled).
    trans is the per-pixel running transmittance, initialized to 1 outside.
    """
    m = ux.shape[0]
    for s in range(m):
        cx = ux[s]
        cy = uy[s]
        sg = sigma[s]
        rad = TRUNC_SIGMAS * sg
        x0 = int(np.ceil(cx - rad))
        x1 = int(np.floor(cx + rad))
        y0 = int(np.ceil(cy - rad))
        y1 = int(np.floor(cy + rad))
        if x0 < 0:
            x0 = 0
        if y0 < 0:
            y0 = 0
        if x1 > width - 1:
            x1 = width - 1
        if y1 > height - 1:
            y1 = height - 1
        if x0 > x1 or y0 > y1:
            continue
        inv_2s2 = 1.0 / (2.0 * sg * sg)
        r2max = rad * rad
        o = opac[s]
        z = zcam[s]
        for py in range(y0, y1 + 1):
            dy = py - cy
            dy2 = dy * dy
            base = py * width
            for px in range(x0, x1 + 1):
                dx = px - cx
                d2 = dx * dx + dy2
                if d2 > r2max:
                    continue
                p = base + px
                tcur = trans[p]
                if tcur < T_CUTOFF:
                    continue
                a = o * np.exp(-d2 * inv_2s2)
                if a <= 0.0:
                    continue
                if a > ALPHA_MAX:
                    a = ALPHA_MAX
                if mode == 0:
                    w = a * tcur
                    out_color[p, 0] += color[s, 0] * w
                    out_color[p, 1] += color[s, 1] * w
                    out_color[p, 2] += color[s, 2] * w
                    out_draw[p] += z * w
                    out_sil[p] += w
                    counts[p] += 1
                else:
                    k = offsets[p] + fill_cursor[p]
                    csr_splat[k] = s
                    csr_T[k] = tcur
                    fill_cursor[p] += 1
                trans[p] = tcur * (1.0 - a)


@njit(cache=True)
def composite_backward(ux, uy, sigma, opac, zcam, color,
                       offsets, csr_splat, csr_T,
                       tot_color, tot_draw, tot_sil,
                       g_color_px, g_sil_px, g_draw_px,
                       height, width,
                       g_u, g_sigma, g_opac, g_z, g_col):
    """Accumulate loss gradients into per-splat slots.

    Walks each pixel's contributor list front to back keeping prefix sums;
    the suffix needed for the transmittance chain is total minus prefix.
    Alpha-clipped contributors get zero gradient through alpha, matching the
    forward clip.
    """
    npix = height * width
    for p in range(npix):
        k0 = offsets[p]
        k1 = offsets[p + 1]
        if k0 == k1:
            continue
        py = p // width
        px = p - py * width
        gc0 = g_color_px[p, 0]
        gc1 = g_color_px[p, 1]
        gc2 = g_color_px[p, 2]
        gs = g_sil_px[p]
        gd = g_draw_px[p]
        if gc0 == 0.0 and gc1 == 0.0 and gc2 == 0.0 and gs == 0.0 and gd == 0.0:
            continue
        pref0 = 0.0
        pref1 = 0.0
        pref2 = 0.0
        pref_s = 0.0
        pref_d = 0.0
        for k in range(k0, k1):
            s = csr_splat[k]
            t = csr_T[k]
            dx = px - ux[s]
            dy = py - uy[s]
            d2 = dx * dx + dy * dy
            sg = sigma[s]
            g_exp = np.exp(-d2 / (2.0 * sg * sg))
            val = opac[s] * g_exp
            clipped = val > ALPHA_MAX
            a = ALPHA_MAX if clipped else val
            w = a * t
            c0 = color[s, 0]
            c1 = color[s, 1]
            c2 = color[s, 2]
            z = zcam[s]
            pref0 += c0 * w
            pref1 += c1 * w
            pref2 += c2 * w
            pref_s += w
            pref_d += z * w
            # suffix over later contributors; totals cover exactly the
            # recorded set, so this is consistent with early termination
            suf0 = tot_color[p, 0] - pref0
            suf1 = tot_color[p, 1] - pref1
            suf2 = tot_color[p, 2] - pref2
            suf_s = tot_sil[p] - pref_s
            suf_d = tot_draw[p] - pref_d
            inv_1ma = 1.0 / (1.0 - a)
            dC0_da = c0 * t - suf0 * inv_1ma
            dC1_da = c1 * t - suf1 * inv_1ma
            dC2_da = c2 * t - suf2 * inv_1ma
            dS_da = t - suf_s * inv_1ma
            dD_da = z * t - suf_d * inv_1ma
            g_a = gc0 * dC0_da + gc1 * dC1_da + gc2 * dC2_da + gs * dS_da + gd * dD_da
            g_col[s, 0] += gc0 * w
            g_col[s, 1] += gc1 * w
            g_col[s, 2] += gc2 * w
            g_z[s] += gd * w
            if not clipped:
                g_opac[s] += g_a * g_exp
                common = g_a * val
                inv_s2 = 1.0 / (sg * sg)
                g_u[s, 0] += common * dx * inv_s2
                g_u[s, 1] += common * dy * inv_s2
                g_sigma[s] += common * d2 * inv_s2 / sg
