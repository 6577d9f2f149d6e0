"""Independent reference implementations used only by the tests.

Everything here is written loop by loop, without reusing package code, so a
bug in a vectorised path cannot hide behind an identical bug in its oracle.
"""

import math

import numpy as np


def filter_matrix(layer, e, hidden):
    h = np.asarray(e, dtype=np.float64)
    if hidden:
        h = np.maximum(h @ layer["hidden_w"] + layer["hidden_b"], 0.0)
    d_out, d_in = layer["theta"].shape
    return (h @ layer["filter_w"] + layer["filter_b"]).reshape(d_out, d_in)


def ecc_loop(net, views, features):
    """Node-by-node ECC forward pass over the complete graph."""
    views = np.asarray(views, dtype=np.float64)
    n = views.shape[1]
    h = np.asarray(features, dtype=np.float64)
    for li, layer in enumerate(net.layers):
        d_out = layer["theta"].shape[0]
        out = np.zeros((n, d_out))
        for p in range(n):
            acc = np.zeros(d_out)
            for q in range(n):
                if q != p:
                    acc += filter_matrix(layer, views[:, p, q], net.filter_hidden) @ h[q]
            out[p] = layer["theta"] @ h[p] + (acc + layer["bias"]) / (n - 1)
        h = np.maximum(out, 0.0) if li < len(net.layers) - 1 else out
    return h


def cbt_tensor_pipeline(v):
    """Replicate rows horizontally, subtract the transpose, abs, sum along depth."""
    v = np.asarray(v, dtype=np.float64)
    n = v.shape[0]
    rep = np.repeat(v[:, None, :], n, axis=1)
    return np.abs(rep - rep.transpose(1, 0, 2)).sum(axis=2)


def loss_accumulation(cbt, stacks, lambdas):
    total = 0.0
    for views in stacks:
        for v, lam in enumerate(lambdas):
            s = 0.0
            for i in range(cbt.shape[0]):
                for j in range(cbt.shape[1]):
                    s += (cbt[i, j] - lam * views[v][i, j]) ** 2
            total += math.sqrt(s)
    return total


def kink_margin(net, views, features):
    """Smallest distance of any rectifier input or embedding difference to 0."""
    views = np.asarray(views, dtype=np.float64)
    n = views.shape[1]
    margins = []
    h = np.asarray(features, dtype=np.float64)
    for li, layer in enumerate(net.layers):
        if net.filter_hidden:
            for p in range(n):
                for q in range(n):
                    if p != q:
                        margins.append(np.min(np.abs(views[:, p, q] @ layer["hidden_w"] + layer["hidden_b"])))
        d_out = layer["theta"].shape[0]
        out = np.zeros((n, d_out))
        for p in range(n):
            acc = sum(filter_matrix(layer, views[:, p, q], net.filter_hidden) @ h[q] for q in range(n) if q != p)
            out[p] = layer["theta"] @ h[p] + (acc + layer["bias"]) / (n - 1)
        if li < len(net.layers) - 1:
            margins.append(np.min(np.abs(out)))
            h = np.maximum(out, 0.0)
        else:
            h = out
    diffs = np.abs(h[:, None, :] - h[None, :, :])
    margins.append(np.min(diffs[~np.eye(n, dtype=bool)]))
    return float(min(margins))


def esn_states_loop(w_in, w_res, frames, leakage, bias, n_transient, rule):
    """Reservoir states written out neuron by neuron."""
    flat = np.asarray(frames, dtype=np.float64).reshape(len(frames), -1)
    T, n_c = flat.shape
    n = w_res.shape[0]
    x = [0.0] * n

    def update(u):
        new = []
        for i in range(n):
            drive = w_in[i, 0] + sum(w_in[i, 1 + k] * u[k] for k in range(n_c))
            rec = sum(w_res[i, j] * x[j] for j in range(n))
            if rule == "paper_eq1":
                new.append(math.tanh(leakage * drive + (1 - leakage) * rec + bias))
            else:
                new.append((1 - leakage) * x[i] + leakage * math.tanh(drive + rec + bias))
        return new

    for k in range(n_transient):
        x = update(flat[k % T])
    out = []
    for t in range(T):
        x = update(flat[t])
        out.append(x)
    return np.array(out)


def cognitive_loss_loop(states, frames, readouts, lags):
    """Average over lags of the per-step summed squared reconstruction error."""
    flat = np.asarray(frames, dtype=np.float64).reshape(len(frames), -1)
    T = flat.shape[0]
    total = 0.0
    for tau in lags:
        w = readouts[tau]
        lag_sum = 0.0
        for t in range(tau, T):
            pred = w @ states[t]
            for k in range(flat.shape[1]):
                lag_sum += (pred[k] - flat[t - tau, k]) ** 2
        total += lag_sum / (T - tau)
    return total / len(lags)


def vis_mc_loop(states, frames, readouts, lags, start=0):
    """Sum of squared delay correlations with per-pixel mean images removed."""
    flat = np.asarray(frames, dtype=np.float64).reshape(len(frames), -1)
    T, n_c = flat.shape
    total = 0.0
    for tau in lags:
        ts = range(max(tau, start), T)
        preds = {t: readouts[tau] @ states[t] for t in ts}
        m = len(ts)
        num = saa = sbb = 0.0
        for k in range(n_c):
            true_k = [flat[t - tau, k] for t in ts]
            pred_k = [preds[t][k] for t in ts]
            ma, mb = sum(true_k) / m, sum(pred_k) / m
            if max(true_k) == min(true_k):
                true_k, ma = [0.0] * m, 0.0
            if max(pred_k) == min(pred_k):
                pred_k, mb = [0.0] * m, 0.0
            for a, b in zip(true_k, pred_k):
                num += (a - ma) * (b - mb)
                saa += (a - ma) ** 2
                sbb += (b - mb) ** 2
        r = 0.0 if saa == 0 or sbb == 0 else num / math.sqrt(saa * sbb)
        total += r * r
    return total


def t_two_sided_p_quadrature(t, df, n_nodes=200_000):
    """2 * integral of the Student t density from |t| to infinity.

    The substitution x = |t| + u / (1 - u) maps the tail to [0, 1); the
    integral is done with composite Simpson on a fine grid.
    """
    c = math.exp(math.lgamma((df + 1) / 2) - math.lgamma(df / 2)) / math.sqrt(df * math.pi)
    a = abs(t)
    u = np.linspace(0.0, 1.0, n_nodes + 1)[:-1]
    h = u[1] - u[0]
    x = a + u / (1.0 - u)
    f = c * (1.0 + x * x / df) ** (-(df + 1) / 2) / (1.0 - u) ** 2
    # the integrand vanishes at u -> 1 for df >= 1
    f = np.append(f, 0.0)
    simpson = h / 3 * (f[0] + f[-1] + 4 * f[1:-1:2].sum() + 2 * f[2:-1:2].sum())
    return 2.0 * simpson


def effective_resistance_centrality(w):
    """n over the summed effective resistances, via the Laplacian pseudo-inverse."""
    w = np.asarray(w, dtype=np.float64)
    n = w.shape[0]
    lap = np.diag(w.sum(axis=1)) - w
    lp = np.linalg.pinv(lap)
    out = np.zeros(n)
    for i in range(n):
        r = 0.0
        for j in range(n):
            r += lp[i, i] + lp[j, j] - 2 * lp[i, j]
        out[i] = n / r
    return out
