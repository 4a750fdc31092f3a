"""Pure numpy implementations of the hot kernels.

Same signatures and semantics as the compiled ``_kernels`` module. Inputs are
assumed validated by the caller (finite, non-degenerate, matching dims).
"""

import numpy as np

BACKEND = "python"


def cosine_matrix(queries, protos):
    q = np.asarray(queries, dtype=np.float64)
    p = np.asarray(protos, dtype=np.float64)
    qn = np.sqrt(np.einsum("ij,ij->i", q, q))
    pn = np.sqrt(np.einsum("ij,ij->i", p, p))
    cos = (q @ p.T) / qn[:, None] / pn[None, :]
    return np.clip(cos, -1.0, 1.0)


def softmax_rows(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def select_topz(cos, probs, z):
    """Per class, up to ``z`` query indices assigned to it, most confident first.

    Each query goes to its argmax-cosine class (lowest index on ties); ties in
    confidence are broken by lower query index. Unused slots hold -1.
    """
    cos = np.asarray(cos, dtype=np.float64)
    m, n = cos.shape
    picked = np.full((n, max(z, 0)), -1, dtype=np.int64)
    if z <= 0 or m == 0:
        return picked
    label = np.argmax(cos, axis=1)
    conf = np.asarray(probs, dtype=np.float64)[np.arange(m), label]
    for c in range(n):
        members = np.flatnonzero(label == c)
        if members.size == 0:
            continue
        order = np.lexsort((members, -conf[members]))
        keep = members[order[:z]]
        picked[c, : keep.size] = keep
    return picked


def rectify_prototypes(support, query, picked, basic, eps):
    """Softmax(eps * cos)-weighted prototypes over support plus picked query rows.

    ``support`` is N x K x D and ``query`` M x D, both unit rows. Returns the
    N x D prototypes and the entropy of each class's weight vector.
    """
    support = np.asarray(support, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    basic = np.asarray(basic, dtype=np.float64)
    n, _, d = support.shape
    out = np.empty((n, d))
    entropy = np.empty(n)
    for c in range(n):
        extra = picked[c][picked[c] >= 0]
        rows = np.concatenate([support[c], query[extra]], axis=0)
        cos = cosine_matrix(rows, basic[c : c + 1])[:, 0]
        logits = eps * cos
        logits -= logits.max()
        w = np.exp(logits)
        w /= w.sum()
        out[c] = w @ rows
        nz = w[w > 0]
        entropy[c] = -np.sum(nz * np.log(nz))
    return out, entropy


def mc_trial_cosines(rows, idx):
    """For each trial (row of ``idx``), mean cosine of every row to the mean of the sampled rows."""
    rows = np.asarray(rows, dtype=np.float64)
    idx = np.asarray(idx, dtype=np.int64)
    norms = np.sqrt(np.einsum("ij,ij->i", rows, rows))
    protos = rows[idx].mean(axis=1)
    pn = np.sqrt(np.einsum("ij,ij->i", protos, protos))
    cos = (protos @ rows.T) / pn[:, None] / norms[None, :]
    return np.clip(cos, -1.0, 1.0).mean(axis=1)
