"""Unvectorized reference implementations used as independent test oracles.

Everything here works on Python floats and nested lists, one scalar at a
time, and never imports the package's autodiff or model code.
"""

import math


def tolist(a):
    a = getattr(a, "data", a)
    return a.tolist() if hasattr(a, "tolist") else a


def dot(u, v):
    return sum(a * b for a, b in zip(u, v))


def vecmat(v, M):
    return [sum(v[i] * M[i][j] for i in range(len(v))) for j in range(len(M[0]))]


def vadd(*vs):
    return [sum(x) for x in zip(*vs)]


def softmax(xs):
    m = max(xs)
    e = [math.exp(x - m) for x in xs]
    s = sum(e)
    return [x / s for x in e]


def elu(x):
    return x if x > 0 else math.exp(x) - 1.0


def leaky(x, slope=0.2):
    return x if x > 0 else slope * x


def gelu(x):
    c = math.sqrt(2.0 / math.pi)
    return 0.5 * x * (1.0 + math.tanh(c * (x + 0.044715 * x ** 3)))


def layer_norm(v, g, b, eps=1e-5):
    mu = sum(v) / len(v)
    var = sum((x - mu) ** 2 for x in v) / len(v)
    return [(x - mu) / math.sqrt(var + eps) * gi + bi for x, gi, bi in zip(v, g, b)]


def mlp_encode(x, P, prefix):
    h = [elu(t) for t in vadd(vecmat(x, tolist(P[prefix + ".W1"])), tolist(P[prefix + ".b1"]))]
    return vadd(vecmat(h, tolist(P[prefix + ".W2"])), tolist(P[prefix + ".b2"]))


def cross_attention(fb, tokens, Wq, Wk, Wv):
    """Returns (output vector, attention weights)."""
    q = vecmat(fb, Wq)
    ks = [vecmat(t, Wk) for t in tokens]
    vs = [vecmat(t, Wv) for t in tokens]
    a = softmax([dot(q, k) / math.sqrt(len(q)) for k in ks])
    return [sum(a[t] * vs[t][j] for t in range(len(vs))) for j in range(len(q))], a


def gat_round(H, neighborhoods, W, a_self, a_neigh):
    """``neighborhoods[i]`` lists node ids including ``i`` itself."""
    heads, hd = len(a_self), len(a_self[0])
    Z = [vecmat(h, W) for h in H]
    out = []
    for i, nb in enumerate(neighborhoods):
        row = []
        for k in range(heads):
            zi = Z[i][k * hd:(k + 1) * hd]
            logits = [leaky(dot(a_self[k], zi) + dot(a_neigh[k], Z[j][k * hd:(k + 1) * hd])) for j in nb]
            alpha = softmax(logits)
            for c in range(hd):
                row.append(elu(sum(alpha[t] * Z[j][k * hd + c] for t, j in enumerate(nb))))
        out.append(row)
    return out


def transformer(tokens, P):
    """One post-norm encoder layer over a list of token vectors, mean-pooled."""
    g = lambda name: tolist(P["tf." + name])  # noqa: E731
    width = len(tokens[0])
    q = [vecmat(t, g("Wq")) for t in tokens]
    k = [vecmat(t, g("Wk")) for t in tokens]
    v = [vecmat(t, g("Wv")) for t in tokens]
    outs = []
    for a in range(len(tokens)):
        w = softmax([dot(q[a], k[b]) / math.sqrt(width) for b in range(len(tokens))])
        ctx = [sum(w[b] * v[b][j] for b in range(len(tokens))) for j in range(width)]
        o = vadd(vecmat(ctx, g("Wo")), g("bo"))
        h1 = layer_norm(vadd(tokens[a], o), g("ln1_g"), g("ln1_b"))
        hid = [gelu(x) for x in vadd(vecmat(h1, g("W1")), g("b1"))]
        ff = vadd(vecmat(hid, g("W2")), g("b2"))
        outs.append(layer_norm(vadd(h1, ff), g("ln2_g"), g("ln2_b")))
    return [sum(o[j] for o in outs) / len(outs) for j in range(width)]


def forward(P, cfg, x_b, x_s, x_r, neighborhoods):
    """Full model, node by node; ``x_s``/``x_r`` are per-node token lists."""
    n = len(x_b)
    f_b = [mlp_encode(x, P, "enc.bin") for x in x_b]
    levels = {}
    if cfg.multires:
        f_s = [[mlp_encode(t, P, "enc.spot") for t in toks] for toks in x_s]
        f_r = [[mlp_encode(t, P, "enc.region") for t in toks] for toks in x_r]
        F = []
        for i in range(n):
            cs, _ = cross_attention(f_b[i], f_s[i], tolist(P["xattn.spot.Wq"]), tolist(P["xattn.spot.Wk"]),
                                    tolist(P["xattn.spot.Wv"]))
            cr, _ = cross_attention(f_b[i], f_r[i], tolist(P["xattn.region.Wq"]), tolist(P["xattn.region.Wk"]),
                                    tolist(P["xattn.region.Wv"]))
            first = vadd(f_b[i], cs, cr) if cfg.residual else f_b[i]
            F.append(first + cs + cr)
        pooled_s = [[sum(col) / len(toks) for col in zip(*toks)] for toks in f_s]
        pooled_r = [[sum(col) / len(toks) for col in zip(*toks)] for toks in f_r]
        levels["bin"] = F
        levels["spot"] = pooled_s
        levels["region"] = pooled_r
    else:
        levels["bin"] = f_b
    preds = {}
    for level, feats in levels.items():
        h = [vadd(vecmat(f, tolist(P[f"proj.{level}.W"])), tolist(P[f"proj.{level}.b"])) for f in feats]
        rounds = [h]
        if cfg.use_gat:
            for r in range(cfg.rounds):
                h = gat_round(h, neighborhoods, tolist(P[f"gat.{r}.W"]), tolist(P[f"gat.{r}.a_self"]),
                              tolist(P[f"gat.{r}.a_neigh"]))
                rounds.append(h)
        agg = [transformer([rd[i] for rd in rounds], P) for i in range(n)]
        preds[level] = [vadd(vecmat(a, tolist(P[f"head.{level}.W"])), tolist(P[f"head.{level}.b"])) for a in agg]
    return preds


def pearson(xs, ys):
    n = len(xs)
    mx, my = sum(xs) / n, sum(ys) / n
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sxx = sum((x - mx) ** 2 for x in xs)
    syy = sum((y - my) ** 2 for y in ys)
    return sxy / math.sqrt(sxx * syy)


def pearson_loss(P, Y):
    """Mean over non-constant columns of 1 - r."""
    terms = []
    for g in range(len(P[0])):
        xs = [row[g] for row in P]
        ys = [row[g] for row in Y]
        if len(set(xs)) == 1 or len(set(ys)) == 1:
            continue
        terms.append(1.0 - pearson(xs, ys))
    return sum(terms) / len(terms) if terms else 0.0


def mse(P, Y):
    vals = [(p - y) ** 2 for rp, ry in zip(P, Y) for p, y in zip(rp, ry)]
    return sum(vals) / len(vals)


def mae(P, Y):
    vals = [abs(p - y) for rp, ry in zip(P, Y) for p, y in zip(rp, ry)]
    return sum(vals) / len(vals)


def mean_pcc(P, Y):
    rs = []
    for g in range(len(P[0])):
        xs = [row[g] for row in P]
        ys = [row[g] for row in Y]
        if len(set(xs)) == 1 or len(set(ys)) == 1:
            continue
        rs.append(pearson(xs, ys))
    return sum(rs) / len(rs)


def knn(coords, k):
    """Exhaustive O(n^2) neighbour lists sorted by (distance, id)."""
    out = []
    for i, (xi, yi) in enumerate(coords):
        cand = []
        for j, (xj, yj) in enumerate(coords):
            if j == i:
                continue
            dx, dy = xj - xi, yj - yi
            cand.append((math.sqrt(dx * dx + dy * dy), j))
        cand.sort()
        out.append(cand[:k])
    return out
