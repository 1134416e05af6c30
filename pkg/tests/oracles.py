"""Independent oracles used by the test suite.

Each oracle recomputes an expected value by a different route than the
library (Newton instead of Halley, golden-section instead of closed form,
explicit softmax instead of log-sum-exp, python loops instead of matrix
algebra) so agreement is meaningful.
"""
import numpy as np


def newton_lambert(x: float, iters: int = 200) -> float:
    """Solve w * exp(w) = x by plain Newton iteration."""
    w = 0.0 if x < np.e else np.log(x)
    for _ in range(iters):
        ew = np.exp(w)
        f = w * ew - x
        step = f / (ew * (w + 1.0))
        w -= step
        if abs(step) < 1e-16 * (1.0 + abs(w)):
            break
    return w


def golden_section_sigma(ell: float, tau: float, lam: float, lo: float = 1e-9, hi: float = np.e, iters: int = 220) -> float:
    """Minimize (ell - tau) * s + lam * log(s)^2 over s in (0, e] by golden section.

    The objective's derivative is strictly increasing on (0, e], so it is
    unimodal there and the boundary e is the minimizer exactly when the
    closed form hits its clamp.
    """
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0

    def f(s):
        return (ell - tau) * s + lam * np.log(s) ** 2

    a, b = lo, hi
    c, d = b - inv_phi * (b - a), a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    mid = (a + b) / 2.0
    # the boundary can be the minimum; report whichever candidate wins
    return hi if f(hi) <= f(mid) else mid


def explicit_softmax_nll(logits: np.ndarray, labels: np.ndarray, log_prior: np.ndarray | None = None) -> np.ndarray:
    """Per-sample -log softmax probability, via literal exponentials."""
    z = np.asarray(logits, dtype=np.float64).copy()
    if log_prior is not None:
        z = z + log_prior
    out = np.empty(len(labels))
    for i, y in enumerate(labels):
        probs = np.exp(z[i]) / np.sum(np.exp(z[i]))
        out[i] = -np.log(probs[y])
    return out


def ntxent_enumerate(z_a: np.ndarray, z_b: np.ndarray, temperature: float) -> float:
    """NT-Xent by explicit loops over anchors, positives, and negatives."""
    z = np.concatenate([z_a, z_b], axis=0).astype(np.float64)
    z = z / np.linalg.norm(z, axis=1, keepdims=True)
    n = len(z)
    b = len(z_a)
    total = 0.0
    for i in range(n):
        pos = i + b if i < b else i - b
        num = np.exp(np.dot(z[i], z[pos]) / temperature)
        den = sum(np.exp(np.dot(z[i], z[k]) / temperature) for k in range(n) if k != i)
        total += -np.log(num / den)
    return total / n


def barlow_direct(z_a: np.ndarray, z_b: np.ndarray, lam: float, eps: float = 1e-9) -> float:
    """Barlow Twins loss via elementwise loops on the standardized views."""
    def std_cols(z):
        z = np.asarray(z, dtype=np.float64)
        mu = z.mean(axis=0)
        var = ((z - mu) ** 2).mean(axis=0)
        return (z - mu) / np.sqrt(var + eps)

    za, zb = std_cols(z_a), std_cols(z_b)
    b, d = za.shape
    total = 0.0
    for i in range(d):
        for j in range(d):
            c_ij = sum(za[k, i] * zb[k, j] for k in range(b)) / b
            if i == j:
                total += (1.0 - c_ij) ** 2
            else:
                total += lam * c_ij ** 2
    return total


def brute_knn(
    ref_emb: np.ndarray,
    ref_labels: np.ndarray,
    qry_emb: np.ndarray,
    k: int,
    num_classes: int,
    metric: str = "cosine",
    weighting: str = "similarity",
) -> np.ndarray:
    """Exhaustive O(N^2) distance-sort kNN with the same weighting definitions
    as the library: (1 + cosine) and 1 / (dist + 1e-12)."""
    ref = np.asarray(ref_emb, dtype=np.float64)
    qry = np.asarray(qry_emb, dtype=np.float64)
    preds = np.empty(len(qry), dtype=np.int64)
    for qi in range(len(qry)):
        if metric == "cosine":
            u = qry[qi]
            nu = np.linalg.norm(u)
            uhat = np.zeros_like(u) if nu < 1e-12 else u / nu
            nv = np.linalg.norm(ref, axis=1)
            vhat = np.where(nv[:, None] < 1e-12, 0.0, ref / np.where(nv[:, None] < 1e-12, 1.0, nv[:, None]))
            sims = vhat @ uhat
            scored = [(-float(s), ri, 1.0 + float(s)) for ri, s in enumerate(sims)]
        else:
            dists = np.linalg.norm(ref - qry[qi], axis=1)
            scored = [(float(d), ri, 1.0 / (float(d) + 1e-12)) for ri, d in enumerate(dists)]
        scored.sort(key=lambda t: t[0])  # python sort is stable
        votes = np.zeros(num_classes)
        for _, ri, w in scored[:k]:
            votes[ref_labels[ri]] += w if weighting == "similarity" else 1.0
        preds[qi] = int(np.argmax(votes))
    return preds
