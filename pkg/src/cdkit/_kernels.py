"""Compiled inner loops.

Every kernel advances an algorithm over a pre-drawn block of indices and
mutates its state arrays in place. Drivers in the public modules own the
randomness, checkpointing and error reporting; kernels only report a status
code. Sparse operators are passed as raw CSR triplets ``(indptr, indices,
data)``; low-rank operators as the ``n x r`` factor ``U`` of ``U U^T``.
"""
import math

import numpy as np
from numba import njit, types
from numba.core import cgutils
from numba.extending import intrinsic

REG_NONE = 0
REG_L1 = 1
REG_BOX = 2

STATUS_OK = 0
STATUS_TARGET = 1
STATUS_DIVERGED = 2
STATUS_SINGULAR = 3

POLICY_NONE = 0
POLICY_WORST = 1
POLICY_RANDOM = 2


# --------------------------------------------------------------------------
# relaxed atomics (one machine word per access, no ordering between words)
# --------------------------------------------------------------------------

def _item_ptr(context, builder, arrty, aryv, idxv):
    ary = context.make_array(arrty)(context, builder, aryv)
    return cgutils.get_item_pointer(context, builder, arrty, ary, [idxv])


@intrinsic
def atomic_add_f64(typingctx, arr, idx, val):
    sig = types.float64(arr, idx, val)

    def codegen(context, builder, signature, args):
        ptr = _item_ptr(context, builder, signature.args[0], args[0], args[1])
        return builder.atomic_rmw("fadd", ptr, args[2], "monotonic")

    return sig, codegen


@intrinsic
def atomic_add_i64(typingctx, arr, idx, val):
    sig = types.int64(arr, idx, val)

    def codegen(context, builder, signature, args):
        ptr = _item_ptr(context, builder, signature.args[0], args[0], args[1])
        return builder.atomic_rmw("add", ptr, args[2], "monotonic")

    return sig, codegen


@intrinsic
def atomic_load_f64(typingctx, arr, idx):
    sig = types.float64(arr, idx)

    def codegen(context, builder, signature, args):
        ptr = _item_ptr(context, builder, signature.args[0], args[0], args[1])
        return builder.load_atomic(ptr, "monotonic", 8)

    return sig, codegen


@intrinsic
def atomic_load_i64(typingctx, arr, idx):
    sig = types.int64(arr, idx)

    def codegen(context, builder, signature, args):
        ptr = _item_ptr(context, builder, signature.args[0], args[0], args[1])
        return builder.load_atomic(ptr, "monotonic", 8)

    return sig, codegen


# --------------------------------------------------------------------------
# small helpers
# --------------------------------------------------------------------------

@njit(cache=True)
def csr_row_dot(indptr, indices, data, x, i):
    s = 0.0
    for p in range(indptr[i], indptr[i + 1]):
        s += data[p] * x[indices[p]]
    return s


@njit(cache=True)
def csr_matvec(indptr, indices, data, x, out):
    for i in range(out.shape[0]):
        out[i] = csr_row_dot(indptr, indices, data, x, i)


@njit(cache=True)
def csr_entry(indptr, indices, data, i, j):
    lo = indptr[i]
    hi = indptr[i + 1] - 1
    while lo <= hi:
        mid = (lo + hi) // 2
        c = indices[mid]
        if c == j:
            return data[mid]
        if c < j:
            lo = mid + 1
        else:
            hi = mid - 1
    return 0.0


@njit(cache=True)
def dense_dot(a, b):
    s = 0.0
    for j in range(a.shape[0]):
        s += a[j] * b[j]
    return s


@njit(cache=True)
def lowrank_matvec(U, z, out):
    for i in range(U.shape[0]):
        out[i] = dense_dot(U[i], z)


@njit(cache=True)
def shrink_scalar(kind, beta, tau, lo, hi):
    if kind == REG_L1:
        if tau > beta:
            return tau - beta
        if tau < -beta:
            return tau + beta
        return 0.0
    if kind == REG_BOX:
        return min(max(tau, lo), hi)
    return tau


@njit(cache=True)
def gamma_root(gamma_prev, sigma, n):
    # larger root of g^2 + bq*g + c = 0, written to avoid cancellation
    bq = (sigma * gamma_prev * gamma_prev - 1.0) / n
    c = -gamma_prev * gamma_prev
    disc = math.sqrt(bq * bq - 4.0 * c)
    if bq <= 0.0:
        return 0.5 * (disc - bq)
    return (-2.0 * c) / (bq + disc)


@njit(cache=True)
def accel_alpha(gamma, sigma, n):
    return (n - gamma * sigma) / (gamma * (n * n - sigma))


# --------------------------------------------------------------------------
# serial / proximal coordinate descent
# --------------------------------------------------------------------------

@njit(cache=True)
def cd_csr(indptr, indices, data, diag, b, x, r, idx, steps,
           reg_kind, lam, lo, hi, f, f_stop, f_limit):
    """Residual-maintaining CD sweep; ``r = Qx - b`` on entry and exit.

    Returns (iterations done, tracked smooth objective, flops, status).
    """
    flops = 0
    for t in range(idx.shape[0]):
        i = idx[t]
        g = r[i]
        a = steps[i]
        xi = x[i]
        z = shrink_scalar(reg_kind, lam * a, xi - a * g, lo[i], hi[i])
        d = z - xi
        x[i] = z
        start = indptr[i]
        stop = indptr[i + 1]
        if d != 0.0:
            for p in range(start, stop):
                r[indices[p]] += d * data[p]
            f += d * g + 0.5 * d * d * diag[i]
        flops += 2 * (stop - start) + 8
        if f <= f_stop:
            return t + 1, f, flops, STATUS_TARGET
        if not (abs(f) <= f_limit):
            return t + 1, f, flops, STATUS_DIVERGED
    return idx.shape[0], f, flops, STATUS_OK


@njit(cache=True)
def cd_lowrank(U, diag, b, x, z, idx, steps,
               reg_kind, lam, lo, hi, f, f_stop, f_limit):
    """As :func:`cd_csr` for ``Q = U U^T``, maintaining ``z = U^T x``."""
    flops = 0
    rank = U.shape[1]
    for t in range(idx.shape[0]):
        i = idx[t]
        ui = U[i]
        g = dense_dot(ui, z) - b[i]
        a = steps[i]
        xi = x[i]
        zi = shrink_scalar(reg_kind, lam * a, xi - a * g, lo[i], hi[i])
        d = zi - xi
        x[i] = zi
        if d != 0.0:
            for j in range(rank):
                z[j] += d * ui[j]
            f += d * g + 0.5 * d * d * diag[i]
        flops += 4 * rank + 8
        if f <= f_stop:
            return t + 1, f, flops, STATUS_TARGET
        if not (abs(f) <= f_limit):
            return t + 1, f, flops, STATUS_DIVERGED
    return idx.shape[0], f, flops, STATUS_OK


# --------------------------------------------------------------------------
# accelerated randomized coordinate descent
# --------------------------------------------------------------------------

@njit(cache=True)
def accel_csr(indptr, indices, data, b, x, v, qx, qv, y, qy, idx, lc,
              sigma, gamma_prev, f_stop, f_limit):
    """Dense-vector accelerated CD with ``qx = Qx`` and ``qv = Qv`` maintained.

    Returns (iterations done, gamma of the last iteration, flops, status).
    """
    n = x.shape[0]
    nf = float(n)
    flops = 0
    check = f_stop > -np.inf
    for t in range(idx.shape[0]):
        gamma = gamma_root(gamma_prev, sigma, nf)
        alpha = accel_alpha(gamma, sigma, nf)
        beta = 1.0 - gamma * sigma / nf
        for j in range(n):
            y[j] = alpha * v[j] + (1.0 - alpha) * x[j]
            qy[j] = alpha * qv[j] + (1.0 - alpha) * qx[j]
        i = idx[t]
        step = (qy[i] - b[i]) / lc[i]
        for j in range(n):
            x[j] = y[j]
            qx[j] = qy[j]
            v[j] = beta * v[j] + (1.0 - beta) * y[j]
            qv[j] = beta * qv[j] + (1.0 - beta) * qy[j]
        x[i] -= step
        v[i] -= gamma * step
        start = indptr[i]
        stop = indptr[i + 1]
        for p in range(start, stop):
            c = indices[p]
            qx[c] -= step * data[p]
            qv[c] -= gamma * step * data[p]
        gamma_prev = gamma
        flops += 12 * n + 4 * (stop - start) + 24
        if check:
            f = 0.0
            for j in range(n):
                f += x[j] * (0.5 * qx[j] - b[j])
            if f <= f_stop:
                return t + 1, gamma_prev, flops, STATUS_TARGET
            if not (abs(f) <= f_limit):
                return t + 1, gamma_prev, flops, STATUS_DIVERGED
        elif not math.isfinite(step):
            return t + 1, gamma_prev, flops, STATUS_DIVERGED
    return idx.shape[0], gamma_prev, flops, STATUS_OK


# --------------------------------------------------------------------------
# Kaczmarz family (rows of A assumed unit norm)
# --------------------------------------------------------------------------

@njit(cache=True)
def kaczmarz_csr(indptr, indices, data, b, w, idx):
    flops = 0
    for t in range(idx.shape[0]):
        i = idx[t]
        res = csr_row_dot(indptr, indices, data, w, i) - b[i]
        start = indptr[i]
        stop = indptr[i + 1]
        for p in range(start, stop):
            w[indices[p]] -= res * data[p]
        flops += 4 * (stop - start) + 1
    return flops


@njit(cache=True)
def ark_dense(indptr, indices, data, b, w, v, y, idx, sigma, gamma_prev):
    """Accelerated randomized Kaczmarz on dense iterates (O(n) per step)."""
    n = w.shape[0]
    mf = float(indptr.shape[0] - 1)
    flops = 0
    for t in range(idx.shape[0]):
        gamma = gamma_root(gamma_prev, sigma, mf)
        alpha = accel_alpha(gamma, sigma, mf)
        beta = 1.0 - gamma * sigma / mf
        for j in range(n):
            y[j] = alpha * v[j] + (1.0 - alpha) * w[j]
        i = idx[t]
        res = csr_row_dot(indptr, indices, data, y, i) - b[i]
        for j in range(n):
            v[j] = beta * v[j] + (1.0 - beta) * y[j]
            w[j] = y[j]
        start = indptr[i]
        stop = indptr[i + 1]
        for p in range(start, stop):
            c = indices[p]
            w[c] -= res * data[p]
            v[c] -= gamma * res * data[p]
        gamma_prev = gamma
        flops += 7 * n + 6 * (stop - start) + 24
    return gamma_prev, flops


@njit(cache=True)
def _fold(vh, yh, B):
    for j in range(vh.shape[0]):
        a = vh[j]
        c = yh[j]
        vh[j] = a * B[0] + c * B[2]
        yh[j] = a * B[1] + c * B[3]
    B[0] = 1.0
    B[1] = 0.0
    B[2] = 0.0
    B[3] = 1.0


@njit(cache=True)
def ark_sparse(indptr, indices, data, b, vh, yh, B, idx, sigma, gamma_prev,
               w_out, always_fold, det_lo, det_hi):
    """Accelerated randomized Kaczmarz in the ``[v y] = [vh yh] B`` representation.

    ``B`` is the row-major 2x2 matrix as a length-4 array. On return
    ``w_out`` holds the primal iterate after the last step of the block
    (reconstructed densely; that work is not counted in ``flops``).

    Returns (gamma of the last iteration, flops, folds, status).
    """
    mf = float(indptr.shape[0] - 1)
    flops = 0
    folds = 0
    last = idx.shape[0] - 1
    for t in range(idx.shape[0]):
        gamma = gamma_root(gamma_prev, sigma, mf)
        beta = 1.0 - gamma * sigma / mf
        gamma_next = gamma_root(gamma, sigma, mf)
        alpha_next = accel_alpha(gamma_next, sigma, mf)
        i = idx[t]
        start = indptr[i]
        stop = indptr[i + 1]
        sv = 0.0
        sy = 0.0
        for p in range(start, stop):
            c = indices[p]
            sv += data[p] * vh[c]
            sy += data[p] * yh[c]
        res = sv * B[1] + sy * B[3] - b[i]
        if t == last:
            for j in range(w_out.shape[0]):
                w_out[j] = vh[j] * B[1] + yh[j] * B[3]
            for p in range(start, stop):
                w_out[indices[p]] -= res * data[p]
        r11 = beta
        r12 = alpha_next * beta
        r21 = 1.0 - beta
        r22 = 1.0 - alpha_next * beta
        if always_fold:
            _fold(vh, yh, B)
            folds += 1
        n11 = B[0] * r11 + B[1] * r21
        n12 = B[0] * r12 + B[1] * r22
        n21 = B[2] * r11 + B[3] * r21
        n22 = B[2] * r12 + B[3] * r22
        det = n11 * n22 - n12 * n21
        if not (det_lo <= abs(det) <= det_hi):
            _fold(vh, yh, B)
            folds += 1
            n11, n12, n21, n22 = r11, r12, r21, r22
            det = n11 * n22 - n12 * n21
            if not (det_lo <= abs(det) <= det_hi):
                return gamma_prev, flops, folds, STATUS_SINGULAR
        s1 = gamma
        s2 = 1.0 - alpha_next + alpha_next * gamma
        c1 = (s1 * n22 - s2 * n21) / det
        c2 = (s2 * n11 - s1 * n12) / det
        for p in range(start, stop):
            c = indices[p]
            rd = res * data[p]
            vh[c] -= rd * c1
            yh[c] -= rd * c2
        B[0] = n11
        B[1] = n12
        B[2] = n21
        B[3] = n22
        gamma_prev = gamma
        flops += 8 * (stop - start) + 48
        if not math.isfinite(res):
            return gamma_prev, flops, folds, STATUS_DIVERGED
    return gamma_prev, flops, folds, STATUS_OK


# --------------------------------------------------------------------------
# asynchronous CD: missed-update simulator
# --------------------------------------------------------------------------

@njit(cache=True)
def _missed_count(js, ds, cnt):
    # ||x_hat - x||_0 given the missed one-coordinate deltas
    nz = 0
    for a in range(cnt):
        seen = False
        for c in range(a):
            if js[c] == js[a]:
                seen = True
                break
        if seen:
            continue
        tot = ds[a]
        for c in range(a + 1, cnt):
            if js[c] == js[a]:
                tot += ds[c]
        if tot != 0.0:
            nz += 1
    return nz


@njit(cache=True)
def async_sim_csr(indptr, indices, data, diag, b, x, r, idx, alpha, tau, policy,
                  mask, ring_i, ring_d, k0, f, f_limit, epoch_len, epoch_sq, stale):
    """Missed-update simulation; ``stale[0]`` receives the max observed ||x_hat-x||_0.

    Returns (iterations done, tracked objective, flops, status).
    """
    flops = 0
    js = np.empty(max(tau, 1), np.int64)
    ds = np.empty(max(tau, 1))
    for t in range(idx.shape[0]):
        k = k0 + t
        i = idx[t]
        g = r[i]
        cnt = 0
        for q in range(1, tau + 1):
            l = k - q
            if l < 0:
                break
            if policy == POLICY_WORST or (policy == POLICY_RANDOM and mask[t, q - 1]):
                slot = l % tau
                j = ring_i[slot]
                dl = ring_d[slot]
                g -= dl * csr_entry(indptr, indices, data, i, j)
                js[cnt] = j
                ds[cnt] = dl
                cnt += 1
                flops += 2 + int(math.log2(indptr[i + 1] - indptr[i] + 1)) + 1
        if cnt > 0:
            nz = _missed_count(js, ds, cnt)
            if nz > stale[0]:
                stale[0] = nz
        xi = x[i]
        z = xi - alpha * g
        d = z - xi
        x[i] = z
        start = indptr[i]
        stop = indptr[i + 1]
        gt = r[i]
        if d != 0.0:
            for p in range(start, stop):
                r[indices[p]] += d * data[p]
            f += d * gt + 0.5 * d * d * diag[i]
        flops += 2 * (stop - start) + 8
        if tau > 0:
            ring_i[k % tau] = i
            ring_d[k % tau] = d
        epoch_sq[k // epoch_len] += d * d
        if not (abs(f) <= f_limit):
            return t + 1, f, flops, STATUS_DIVERGED
    return idx.shape[0], f, flops, STATUS_OK


@njit(cache=True)
def async_sim_lowrank(U, diag, b, x, z, idx, alpha, tau, policy,
                      mask, ring_i, ring_d, k0, f, f_limit, epoch_len, epoch_sq, stale):
    """As :func:`async_sim_csr` for ``Q = U U^T`` with ``z = U^T x`` maintained."""
    flops = 0
    rank = U.shape[1]
    js = np.empty(max(tau, 1), np.int64)
    ds = np.empty(max(tau, 1))
    for t in range(idx.shape[0]):
        k = k0 + t
        i = idx[t]
        ui = U[i]
        gt = dense_dot(ui, z) - b[i]
        g = gt
        cnt = 0
        for q in range(1, tau + 1):
            l = k - q
            if l < 0:
                break
            if policy == POLICY_WORST or (policy == POLICY_RANDOM and mask[t, q - 1]):
                slot = l % tau
                j = ring_i[slot]
                dl = ring_d[slot]
                g -= dl * dense_dot(ui, U[j])
                js[cnt] = j
                ds[cnt] = dl
                cnt += 1
                flops += 2 * rank + 2
        if cnt > 0:
            nz = _missed_count(js, ds, cnt)
            if nz > stale[0]:
                stale[0] = nz
        xi = x[i]
        zi = xi - alpha * g
        d = zi - xi
        x[i] = zi
        if d != 0.0:
            for j in range(rank):
                z[j] += d * ui[j]
            f += d * gt + 0.5 * d * d * diag[i]
        flops += 4 * rank + 8
        if tau > 0:
            ring_i[k % tau] = i
            ring_d[k % tau] = d
        epoch_sq[k // epoch_len] += d * d
        if not (abs(f) <= f_limit):
            return t + 1, f, flops, STATUS_DIVERGED
    return idx.shape[0], f, flops, STATUS_OK


# --------------------------------------------------------------------------
# asynchronous CD: lock-free worker
# --------------------------------------------------------------------------

@njit(nogil=True, cache=True)
def async_worker(indptr, indices, data, b, x, alpha, idx, counter, target, stats):
    """One processor's loop over shared ``x``.

    ``counter[0]`` is the global update count. A worker claims update ``k``
    before reading and stops once the claim reaches ``target``.
    ``stats`` = [updates, staleness sum, staleness max, flops].
    """
    done = 0
    stale_sum = 0
    stale_max = 0
    flops = 0
    for t in range(idx.shape[0]):
        k = atomic_add_i64(counter, 0, 1)
        if k >= target:
            atomic_add_i64(counter, 0, -1)
            break
        i = idx[t]
        g = -b[i]
        start = indptr[i]
        stop = indptr[i + 1]
        for p in range(start, stop):
            g += data[p] * atomic_load_f64(x, indices[p])
        atomic_add_f64(x, i, -alpha * g)
        seen = atomic_load_i64(counter, 0) - k - 1
        stale_sum += seen
        if seen > stale_max:
            stale_max = seen
        flops += 2 * (stop - start) + 3
        done += 1
    stats[0] = done
    stats[1] = stale_sum
    stats[2] = stale_max
    stats[3] = flops
    return done
