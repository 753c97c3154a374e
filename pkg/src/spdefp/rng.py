"""Counter-based normal variates (Philox4x32-10), vectorized over paths.

Every variate is a pure function of ``(seed, path_id, step, block, tag)``,
so a path's noise does not depend on how many other paths are simulated,
in which order, or in which worker.
"""

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)

# stream tags
TAG_MAIN = 0
TAG_INITIAL = 1
TAG_CK_BASE = 16
TAG_REFINE_BASE = 64


def philox4x32(counter, key, rounds=10):
    """Philox4x32 block function.

    ``counter`` is a sequence of four uint32-valued arrays (broadcastable),
    ``key`` a pair of python ints. Returns four uint32 arrays (as uint64).
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK for c in counter)
    c0, c1, c2, c3 = np.broadcast_arrays(c0, c1, c2, c3)
    k0, k1 = int(key[0]) & 0xFFFFFFFF, int(key[1]) & 0xFFFFFFFF
    for r in range(rounds):
        if r:
            k0 = (k0 + _W0) & 0xFFFFFFFF
            k1 = (k1 + _W1) & 0xFFFFFFFF
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> _SHIFT, p0 & _MASK
        hi1, lo1 = p1 >> _SHIFT, p1 & _MASK
        c0, c1, c2, c3 = (
            hi1 ^ c1 ^ np.uint64(k0),
            lo1,
            hi0 ^ c3 ^ np.uint64(k1),
            lo0,
        )
    return c0, c1, c2, c3


def _uniform53(a, b):
    # 53-bit uniform on the open interval (0, 1)
    k = (a >> np.uint64(5)) * np.uint64(1 << 26) + (b >> np.uint64(6))
    return (k.astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def standard_normals(seed, path_ids, step, n, tag=TAG_MAIN, sub=0):
    """Standard normals of shape ``(len(path_ids), n)``.

    Column ``j`` of row ``i`` depends only on
    ``(seed, path_ids[i], step, sub, j, tag)``.
    """
    seed = int(seed)
    key = (seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF)
    pid = np.asarray(path_ids, dtype=np.uint64)[:, None]
    n_blocks = (n + 1) // 2
    if n_blocks >= 1 << 16 or sub >= 1 << 16:
        raise ValueError("too many variates per step for the counter layout")
    blocks = np.arange(n_blocks, dtype=np.uint64)[None, :] + np.uint64(sub << 16)
    w0, w1, w2, w3 = philox4x32(
        (pid, np.uint64(step), blocks, np.uint64(tag)), key
    )
    u1 = _uniform53(w0, w1)
    u2 = _uniform53(w2, w3)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    out = np.empty((pid.shape[0], 2 * n_blocks))
    out[:, 0::2] = r * np.cos(theta)
    out[:, 1::2] = r * np.sin(theta)
    return out[:, :n]


def derive_seed(seed, *labels):
    """Deterministically derive a 64-bit seed from ``seed`` and integer labels."""
    s = int(seed) & 0xFFFFFFFFFFFFFFFF
    for lab in labels:
        w = philox4x32(
            (s & 0xFFFFFFFF, s >> 32, int(lab) & 0xFFFFFFFF, 0x5EED), (0x1234567, 0x89ABCDE)
        )
        s = (int(w[0]) << 32) | int(w[1])
    return s
