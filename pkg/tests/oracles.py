"""Independent reference computations used as test oracles."""

from __future__ import annotations


import numpy as np


def mirror_images(src, dims, max_order):
    """Image positions by repeated mirroring across the six walls.

    Returns a dict mapping rounded position -> fewest reflections needed.
    """
    src = np.asarray(src, dtype=float)
    best = {tuple(np.round(src, 9)): 0}
    frontier = [src]
    for depth in range(1, max_order + 1):
        nxt = []
        for p in frontier:
            for axis in range(3):
                for wall in (0.0, dims[axis]):
                    q = p.copy()
                    q[axis] = 2 * wall - q[axis]
                    key = tuple(np.round(q, 9))
                    if key not in best:
                        best[key] = depth
                        nxt.append(q)
        frontier = nxt
    return best


def schroeder_rt60(x, fs, lo_db=-5.0, hi_db=-25.0):
    """RT60 from a least-squares line through the Schroeder decay curve."""
    e = np.cumsum(x[::-1] ** 2)[::-1]
    edc = 10 * np.log10(e / e[0] + 1e-300)
    t = np.arange(len(x)) / fs
    sel = (edc <= lo_db) & (edc >= hi_db)
    slope, _ = np.polyfit(t[sel], edc[sel], 1)
    return -60.0 / slope


def core_band(x, fs, center, half_width_oct=0.25):
    """Band-limit ``x`` with a cos^2 window in log frequency around ``center``."""
    n = len(x)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfftfreq(nfft, 1 / fs)
    with np.errstate(divide="ignore"):
        u = np.log2(np.where(f > 0, f, 1e-30) / center)
    w = np.where(np.abs(u) < half_width_oct, np.cos(np.pi / 2 * u / half_width_oct) ** 2, 0.0)
    return np.fft.irfft(np.fft.rfft(x, nfft) * w, nfft)[:n]


def direct_conv(x, h):
    """Linear convolution by explicit double loop."""
    out = np.zeros(len(x) + len(h) - 1)
    for i, xi in enumerate(x):
        if xi != 0.0:
            out[i:i + len(h)] += xi * h
    return out


def octave_band(x, fs, center, flat=0.3, edge=0.6, lowest=False, highest=False):
    """Zero-phase octave band: flat within +-flat octaves, zero beyond +-edge.

    The lowest band is extended down to DC and the highest up to Nyquist.
    """
    n = len(x)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfftfreq(nfft, 1 / fs)
    with np.errstate(divide="ignore"):
        u = np.log2(np.where(f > 0, f, 1e-30) / center)
    if lowest:
        u = np.maximum(u, 0.0)
    if highest:
        u = np.minimum(u, 0.0)
    ramp = np.clip((np.abs(u) - flat) / (edge - flat), 0.0, 1.0)
    w = np.cos(np.pi / 2 * ramp) ** 2
    return np.fft.irfft(np.fft.rfft(x, nfft) * w, nfft)[:n]


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def ref_conv1d(x, w, b, stride):
    """y[o, t] = b[o] + sum_i sum_k w[o, i, k] x[i, t*stride + k]."""
    c_out, c_in, k = w.shape
    t_out = (x.shape[1] - k) // stride + 1
    y = np.zeros((c_out, t_out))
    for o in range(c_out):
        for t in range(t_out):
            acc = b[o]
            for i in range(c_in):
                for j in range(k):
                    acc += w[o, i, j] * x[i, t * stride + j]
            y[o, t] = acc
    return y


def ref_conv_transpose1d(x, w, b, stride):
    """y[o, t*stride + k] += w[i, o, k] x[i, t], plus bias."""
    c_in, c_out, k = w.shape
    t_in = x.shape[1]
    y = np.zeros((c_out, (t_in - 1) * stride + k))
    for i in range(c_in):
        for t in range(t_in):
            for o in range(c_out):
                for j in range(k):
                    y[o, t * stride + j] += w[i, o, j] * x[i, t]
    return y + b[:, None]


def ref_glu(x):
    half = x.shape[0] // 2
    return x[:half] * _sigmoid(x[half:])


def ref_lstm_direction(seq, w_ih, w_hh, b_ih, b_hh):
    """Unidirectional LSTM over ``seq`` (T, in) with gate order i, f, g, o."""
    hidden = w_hh.shape[1]
    h = np.zeros(hidden)
    c = np.zeros(hidden)
    out = []
    for x in seq:
        z = w_ih @ x + b_ih + w_hh @ h + b_hh
        i, f, g, o = np.split(z, 4)
        c = _sigmoid(f) * c + _sigmoid(i) * np.tanh(g)
        h = _sigmoid(o) * np.tanh(c)
        out.append(h)
    return np.array(out)


def ref_valid_length(length, depth, kernel=8, stride=4):
    """Search for the smallest padded length every strided level divides exactly."""
    n = length
    while True:
        m = n
        ok = True
        for _ in range(depth):
            if m < kernel or (m - kernel) % stride:
                ok = False
                break
            m = (m - kernel) // stride + 1
        if ok:
            return n
        n += 1


def ref_forward(state, depth, lstm_layers, x, cond=None):
    """Direct-summation forward pass of the separation network.

    ``state`` maps parameter names to float64 arrays; ``x`` is (C_in, T).
    """
    g = lambda name: state[name]
    has = lambda name: name in state
    length = x.shape[1]
    pad = ref_valid_length(length, depth) - length
    h = np.concatenate([np.zeros((x.shape[0], pad)), x], axis=1)

    def cond_bias(name):
        if cond is None or not has(name):
            return 0.0
        return (g(name) @ cond)[:, None]

    skips = []
    for q in range(depth):
        p = f"encoder.{q}."
        h = ref_conv1d(h, g(p + "conv.weight"), g(p + "conv.bias"), 4) + cond_bias(p + "cond_conv.weight")
        h = np.maximum(h, 0.0)
        h = ref_conv1d(h, g(p + "pointwise.weight"), g(p + "pointwise.bias"), 1)
        h = ref_glu(h + cond_bias(p + "cond_pointwise.weight"))
        skips.append(h)
    seq = h.T
    for layer in range(lstm_layers):
        p = "bottleneck.lstm."
        fwd = ref_lstm_direction(seq, g(p + f"weight_ih_l{layer}"), g(p + f"weight_hh_l{layer}"),
                                 g(p + f"bias_ih_l{layer}"), g(p + f"bias_hh_l{layer}"))
        bwd = ref_lstm_direction(seq[::-1], g(p + f"weight_ih_l{layer}_reverse"),
                                 g(p + f"weight_hh_l{layer}_reverse"), g(p + f"bias_ih_l{layer}_reverse"),
                                 g(p + f"bias_hh_l{layer}_reverse"))[::-1]
        seq = np.concatenate([fwd, bwd], axis=1)
    h = (seq @ g("bottleneck.linear.weight").T + g("bottleneck.linear.bias")).T
    for j in range(depth):
        p = f"decoder.{j}."
        h = h + skips.pop()
        h = ref_conv1d(h, g(p + "pointwise.weight"), g(p + "pointwise.bias"), 1)
        h = ref_glu(h + cond_bias(p + "cond_pointwise.weight"))
        h = ref_conv_transpose1d(h, g(p + "deconv.weight"), g(p + "deconv.bias"), 4)
        h = h + cond_bias(p + "cond_deconv.weight")
        if j < depth - 1:
            h = np.maximum(h, 0.0)
    return h[0, pad:]
