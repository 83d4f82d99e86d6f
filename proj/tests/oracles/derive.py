"""Independent reference values for the unit tests.

Written against the model and formula definitions only, with mpmath at 50
digits, so it shares no code with the C++ library. Run it to regenerate
frozen.json; the tests read that file and never call Python.
"""
import json
import pathlib

from mpmath import mp, mpf, sin, exp, log, sqrt

mp.dps = 50
D = 32


def fill(shape, salt):
    """Deterministic parameter pattern shared with the C++ tests."""
    n = 1
    for s in shape:
        n *= s
    vals = [mpf("0.3") * sin(mpf("0.7") * k + salt) for k in range(n)]
    if len(shape) == 1:
        return vals
    rows, cols = shape
    return [vals[r * cols:(r + 1) * cols] for r in range(rows)]


def matvec_t(x, w):
    """x[in] . W[in x out]"""
    return [sum(x[i] * w[i][j] for i in range(len(x))) for j in range(len(w[0]))]


def sigmoid(z):
    return 1 / (1 + exp(-z))


def ffn_logit(x, p):
    h = [a + b for a, b in zip(matvec_t(x, p["W1"]), p["b1"])]
    h = [max(v, 0) for v in h]
    h = [a + b for a, b in zip(matvec_t(h, p["W2"]), p["b2"])]
    return sum(a * b for a, b in zip(h, p["h"]))


def params(items, feat, visual):
    width = 3 * D if visual else 2 * D
    p = {
        "V": fill((items, D), 1),
        "W1": fill((width, D), 3),
        "b1": fill((D,), 4),
        "W2": fill((D, 16), 5),
        "b2": fill((16,), 6),
        "h": fill((16,), 7),
    }
    if visual:
        p["E"] = fill((D, feat), 2)
        p["F"] = fill((items, feat), 8)
    return p


def visual(p, j):
    e = p["E"]
    f = p["F"][j]
    return [sum(e[r][c] * f[c] for c in range(len(f))) for r in range(D)]


def ncf_prob(u, j, p, use_visual):
    x = u + p["V"][j] + (visual(p, j) if use_visual else [])
    return sigmoid(ffn_logit(x, p))


def graph_prob(u0, nbrs, j, p, use_visual):
    norm = 1 / sqrt(len(nbrs)) if nbrs else 0
    u = list(u0)
    for n in nbrs:
        msg = list(p["V"][n])
        if use_visual:
            msg = [a + b for a, b in zip(msg, visual(p, n))]
        u = [a + norm * b for a, b in zip(u, msg)]
    v = list(p["V"][j])
    if j in nbrs:
        v = [a + norm * b for a, b in zip(v, u0)]
    x = u + v + (visual(p, j) if use_visual else [])
    return sigmoid(ffn_logit(x, p))


def f(x):
    return float(x)


def main():
    out = {}
    out["matmul_2x2_2x1"] = [[17.0], [39.0]]
    out["sigmoid_1"] = f(sigmoid(1))
    out["ln2"] = f(log(2))
    out["bce_two_symmetric"] = f(2 * log(2))
    # beta_t = b1 + (t-1)/(T-1) (bT - b1)
    b1, bT = mpf("1e-4"), mpf("2e-2")
    T = 1001
    out["beta_mid_T1001"] = f(b1 + mpf(500) / (T - 1) * (bT - b1))
    T = 100
    betas = [b1 + mpf(t - 1) / (T - 1) * (bT - b1) for t in range(1, T + 1)]
    abar, acc = [], mpf(1)
    for b in betas:
        acc *= 1 - b
        abar.append(acc)
    out["alpha_bar_T100"] = {str(t): f(abar[t - 1]) for t in (1, 2, 50, 100)}
    out["dcg_rank2"] = f(1 / (log(3) / log(2)))
    # Single white pixel in the middle of a black 5x5 image: gray = 255 (the
    # luma weights sum to 1). Valid 3x3 region, 4-neighbour Laplacian.
    g = [[mpf(0)] * 5 for _ in range(5)]
    g[2][2] = mpf(255)
    resp = []
    for y in range(1, 4):
        for x in range(1, 4):
            resp.append(g[y - 1][x] + g[y + 1][x] + g[y][x - 1] + g[y][x + 1] - 4 * g[y][x])
    m = sum(resp) / len(resp)
    out["impulse_5x5_blur_variance"] = f(sum((r - m) ** 2 for r in resp) / len(resp))

    items, feat = 3, 4
    u = [fill((2, D), 9)[k] for k in range(2)]
    plain = params(items, feat, False)
    vis = params(items, feat, True)
    out["ncf_toy"] = [[f(ncf_prob(u[a], j, plain, False)) for j in range(2)] for a in range(2)]
    out["vncf_toy"] = [[f(ncf_prob(u[a], j, vis, True)) for j in range(2)] for a in range(2)]
    nbrs = [0, 2]
    out["lightgcn_toy"] = [f(graph_prob(u[0], nbrs, j, plain, False)) for j in range(items)]
    out["lightvgcn_toy"] = [f(graph_prob(u[0], nbrs, j, vis, True)) for j in range(items)]

    path = pathlib.Path(__file__).with_name("frozen.json")
    path.write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
