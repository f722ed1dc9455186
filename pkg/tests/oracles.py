"""Independent reference implementations used by the tests."""

import math

import numpy as np


def naive_forward(params, slots):
    """conv-relu-conv-relu-dense written as explicit loops over one state.

    ``params`` maps names to numpy arrays; ``slots`` is the (T, 3) state.
    Zero padding of ``kernel // 2`` on both sides, stride 1.
    """
    w1, b1 = params["conv1.weight"], params["conv1.bias"]
    w2, b2 = params["conv2.weight"], params["conv2.bias"]
    wd, bd = params["dense.weight"], params["dense.bias"]

    def conv(x, w, b):
        c_out, _, k = w.shape
        length = x.shape[1]
        pad = k // 2
        y = np.zeros((c_out, length))
        for t in range(length):
            acc = b.copy()
            for j in range(k):
                src = t + j - pad
                if 0 <= src < length:
                    acc += w[:, :, j] @ x[:, src]
            y[:, t] = acc
        return y

    x = np.asarray(slots, dtype=np.float64).T
    h = np.maximum(conv(x, w1, b1), 0.0)
    h = np.maximum(conv(h, w2, b2), 0.0)
    flat = h.reshape(-1)  # channel-major, matching (C, L).flatten()
    return np.array([bd[o] + sum(wd[o, i] * flat[i] for i in range(len(flat))) for o in range(len(bd))])


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def heron_curvature(p1, p2, p3):
    """1 / circumradius via side lengths and Kahan's stable Heron formula."""
    a = math.dist(p1, p2)
    b = math.dist(p2, p3)
    c = math.dist(p1, p3)
    x, y, z = sorted((a, b, c), reverse=True)
    area = 0.25 * math.sqrt(max((x + (y + z)) * (z - (x - y)) * (z + (x - y)) * (x + (y - z)), 0.0))
    return 4.0 * area / (a * b * c)


def central_differences(f, params, coords, h=1e-4):
    """Finite-difference partials of scalar ``f(params)`` at selected
    ``(name, flat_index)`` coordinates; params are torch tensors (float64)."""
    out = []
    for name, idx in coords:
        base = params[name].clone()
        flat = base.view(-1)
        orig = float(flat[idx])
        flat[idx] = orig + h
        params[name] = base
        fp = float(f(params))
        flat[idx] = orig - h
        fm = float(f(params))
        flat[idx] = orig
        out.append((fp - fm) / (2 * h))
    return np.array(out)
