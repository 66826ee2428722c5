"""Independent reference implementations used as test oracles."""
import math

import numpy as np
import torch


def central_diff_grad(fn, tensors, eps=1e-6):
    """Central finite-difference gradient of scalar ``fn()`` w.r.t. each tensor (perturbed in place)."""
    grads = []
    with torch.no_grad():
        for t in tensors:
            g = torch.zeros_like(t)
            flat, gflat = t.view(-1), g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = float(fn())
                flat[i] = orig - eps
                down = float(fn())
                flat[i] = orig
                gflat[i] = (up - down) / (2 * eps)
            grads.append(g)
    return grads


def analytic_grad(fn, tensors):
    for t in tensors:
        t.grad = None
    fn().backward()
    return [t.grad.detach().clone() for t in tensors]


def rel_error(a, b):
    a = torch.cat([x.reshape(-1) for x in a])
    b = torch.cat([x.reshape(-1) for x in b])
    denom = max(a.norm().item(), b.norm().item())
    return 0.0 if denom == 0 else (a - b).norm().item() / denom


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def brute_ranks(v):
    """Average ranks (1-based) via explicit sorting and tie-group scanning."""
    order = sorted(range(len(v)), key=lambda i: v[i])
    ranks = [0.0] * len(v)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and v[order[j + 1]] == v[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def brute_pearson(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y))
    vx = sum((a - mx) ** 2 for a in x)
    vy = sum((b - my) ** 2 for b in y)
    return cov / math.sqrt(vx * vy)


def brute_spearman(x, y):
    return brute_pearson(brute_ranks(list(x)), brute_ranks(list(y)))


def loop_mse(y, t):
    return sum((a - b) ** 2 for a, b in zip(y, t)) / len(y)


def loop_ranking(y, t, alpha=2.0):
    n = len(y)
    acc = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            acc += (sigmoid(alpha * (t[i] - t[j])) - sigmoid(alpha * (y[i] - y[j]))) ** 2
    return 2.0 * acc / (n * (n - 1))


def psnr_ref(a, b):
    mse = float(np.mean((np.asarray(a, float) - np.asarray(b, float)) ** 2))
    return 10 * math.log10(1.0 / mse)
