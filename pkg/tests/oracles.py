"""Slow reference implementations used only by the tests.

Everything here recomputes a quantity the package also computes, by a
deliberately different route: scalar loops instead of BLAS, erf instead of
the normal CDF, explicit tent weights instead of a two-sided scatter.
Agreement between the two routes is then meaningful evidence, not a change
detector.  Keep this module free of imports from the package under test.
"""

import math

import numpy as np


def matmul_oracle(a, b):
    """Triple-loop matrix product in python floats."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, k = a.shape
    k2, p = b.shape
    assert k == k2
    out = np.zeros((m, p))
    for i in range(m):
        for j in range(p):
            acc = 0.0
            for t in range(k):
                acc += float(a[i, t]) * float(b[t, j])
            out[i, j] = acc
    return out


def voxel_oracle(xs, ys, ts, ps, height, width, channels):
    """Per-event voxel deposit using the tent weight max(0, 1 - |s - c|).

    The channel coordinate s is computed with exact integer arithmetic up
    to the final division, mirroring the production order of operations.
    """
    grid = np.zeros((height, width, channels))
    ts = [int(t) for t in ts]
    t0 = ts[0]
    span = ts[-1] - t0
    for x, y, t, p in zip(xs, ys, ts, ps):
        if span == 0:
            s = 0.0
        else:
            s = ((t - t0) * (channels - 1)) / span
        for c in range(channels):
            w = 1.0 - abs(s - c)
            if w > 0.0:
                grid[int(y), int(x), c] += w * float(p)
    return grid


def resize_oracle(grid, out_h, out_w):
    """Per-pixel bilinear resample, half-pixel centres, clamped borders."""
    h, w, c = grid.shape
    out = np.zeros((out_h, out_w, c))
    for oy in range(out_h):
        sy = (oy + 0.5) * (h / out_h) - 0.5
        y0 = math.floor(sy)
        wy = sy - y0
        for ox in range(out_w):
            sx = (ox + 0.5) * (w / out_w) - 0.5
            x0 = math.floor(sx)
            wx = sx - x0
            y0c = min(max(y0, 0), h - 1)
            y1c = min(max(y0 + 1, 0), h - 1)
            x0c = min(max(x0, 0), w - 1)
            x1c = min(max(x0 + 1, 0), w - 1)
            for ch in range(c):
                top = (1.0 - wx) * grid[y0c, x0c, ch] + wx * grid[y0c, x1c, ch]
                bot = (1.0 - wx) * grid[y1c, x0c, ch] + wx * grid[y1c, x1c, ch]
                out[oy, ox, ch] = (1.0 - wy) * top + wy * bot
    return out


def active_counts_oracle(frame, patch_size):
    """Nonzero count per patch via explicit pixel loops."""
    h, w, c = frame.shape
    rows, cols = h // patch_size, w // patch_size
    counts = np.zeros((rows, cols), dtype=np.int64)
    for r in range(rows):
        for cc in range(cols):
            n = 0
            for py in range(r * patch_size, (r + 1) * patch_size):
                for px in range(cc * patch_size, (cc + 1) * patch_size):
                    for ch in range(c):
                        if frame[py, px, ch] != 0.0:
                            n += 1
            counts[r, cc] = n
    return counts


# ---------------------------------------------------------------------------
# transformer forward, written from the architecture description

_erf = np.vectorize(math.erf)


def _gelu_erf(x):
    return 0.5 * x * (1.0 + _erf(x / math.sqrt(2.0)))


def _layer_norm_ref(x, gain, bias, eps=1e-6):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias


def _softmax_ref(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def vit_logits_oracle(tensors, vectors, positions, num_heads, head_dim,
                      num_layers):
    """Class logits from the named-tensor dict, using erf GELU and per-head
    attention loops.  No op counting, no caching."""
    n = vectors.shape[0]
    z = np.empty((n + 1, tensors["class_token"].shape[0]))
    z[0] = tensors["class_token"]
    if n:
        z[1:] = vectors @ tensors["patch_embed"]
    z[0] += tensors["pos_embed"][0]
    for i in range(n):
        z[i + 1] += tensors["pos_embed"][int(positions[i]) + 1]
    for li in range(num_layers):
        p = {k.split(".")[-1]: v for k, v in tensors.items()
             if k.startswith(f"layers.{li}.")}
        zn = _layer_norm_ref(z, p["ln1_gain"], p["ln1_bias"])
        heads_out = []
        for h in range(num_heads):
            q = zn @ p["attn_q"][h]
            k = zn @ p["attn_k"][h]
            v = zn @ p["attn_v"][h]
            attn = _softmax_ref((q @ k.T) / math.sqrt(head_dim))
            heads_out.append(attn @ v)
        z = z + np.concatenate(heads_out, axis=1) @ p["attn_out"]
        zn = _layer_norm_ref(z, p["ln2_gain"], p["ln2_bias"])
        hidden = _gelu_erf(zn @ p["mlp_w1"] + p["mlp_b1"])
        z = z + (hidden @ p["mlp_w2"] + p["mlp_b2"])
    feat = _layer_norm_ref(z[0], tensors["head_ln_gain"],
                           tensors["head_ln_bias"])
    return feat @ tensors["head_weight"] + tensors["head_bias"]


def cross_entropy_oracle(logits, target):
    probs = _softmax_ref(np.asarray(logits, dtype=np.float64))
    return -math.log(probs[int(target)])


# ---------------------------------------------------------------------------
# optimizer

def adamw_oracle(param, grad, m, v, step, lr, beta1, beta2, eps,
                 weight_decay):
    """One decoupled-weight-decay Adam step; returns (param, m, v).

    step is the 1-based update index after which the moments are corrected.
    """
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    param = param - lr * (m_hat / (np.sqrt(v_hat) + eps)
                          + weight_decay * param)
    return param, m, v


# ---------------------------------------------------------------------------
# gradients by central finite differences

def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of a scalar function of an array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_error(got, want, floor=1e-8):
    """max |got - want| / max(|want|, floor), elementwise."""
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    denom = np.maximum(np.abs(want), floor)
    return float(np.max(np.abs(got - want) / denom))
