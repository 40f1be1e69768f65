"""Adaptive binary range coder for unsigned integer symbols below 2**16.

A symbol ``u`` is sent as its bit length ``b`` (5-bit binary tree, context =
previous bit length of the same model) followed by the ``b - 1`` bits under
its leading one, each with its own adaptive probability. Several models can
share one coder; models never share statistics.
"""
import numpy as np
from numba import njit

PROB_BITS = 15
PROB_ONE = 1 << PROB_BITS
ADAPT_SHIFT = 5
TOP = 1 << 24
MASK32 = 0xFFFFFFFF
N_BUCKETS = 17
MAX_SYMBOL = (1 << 16) - 1


@njit(cache=True)
def _shift_low(st, out):
    # st = [low, range, cache, cache_size, out_pos]
    low = st[0]
    if low < 0xFF000000 or low > MASK32:
        carry = low >> 32
        temp = st[2]
        while True:
            out[st[4]] = (temp + carry) & 0xFF
            st[4] += 1
            temp = 0xFF
            st[3] -= 1
            if st[3] == 0:
                break
        st[2] = (low >> 24) & 0xFF
    st[3] += 1
    st[0] = (low & 0x00FFFFFF) << 8


@njit(cache=True)
def _enc_bit(st, out, probs, i, bit):
    p = probs[i]
    bound = (st[1] >> PROB_BITS) * p
    if bit == 0:
        st[1] = bound
        probs[i] = p + ((PROB_ONE - p) >> ADAPT_SHIFT)
    else:
        st[0] += bound
        st[1] -= bound
        probs[i] = p - (p >> ADAPT_SHIFT)
    while st[1] < TOP:
        st[1] = (st[1] << 8) & MASK32
        _shift_low(st, out)


@njit(cache=True)
def _bit_length(u):
    b = 0
    while u > 0:
        b += 1
        u >>= 1
    return b


@njit(cache=True)
def _encode(symbols, models, n_models):
    n = symbols.shape[0]
    out = np.zeros(n * 5 + 16, dtype=np.uint8)
    st = np.zeros(5, dtype=np.int64)
    st[1] = MASK32
    st[3] = 1
    tree = np.full((n_models, N_BUCKETS, 32), PROB_ONE // 2, dtype=np.int64)
    mant = np.full((n_models, N_BUCKETS, 16), PROB_ONE // 2, dtype=np.int64)
    prev = np.zeros(n_models, dtype=np.int64)
    for k in range(n):
        u = symbols[k]
        m = models[k]
        b = _bit_length(u)
        node = 1
        ctx = tree[m, prev[m]]
        for i in range(4, -1, -1):
            bit = (b >> i) & 1
            _enc_bit(st, out, ctx, node, bit)
            node = node * 2 + bit
        mp = mant[m, b]
        for i in range(b - 2, -1, -1):
            _enc_bit(st, out, mp, i, (u >> i) & 1)
        prev[m] = b
    for _ in range(5):
        _shift_low(st, out)
    return out[:st[4]]


@njit(cache=True)
def _dec_bit(st, data, probs, i):
    # st = [code, range, pos]
    p = probs[i]
    bound = (st[1] >> PROB_BITS) * p
    if st[0] < bound:
        st[1] = bound
        probs[i] = p + ((PROB_ONE - p) >> ADAPT_SHIFT)
        bit = 0
    else:
        st[0] -= bound
        st[1] -= bound
        probs[i] = p - (p >> ADAPT_SHIFT)
        bit = 1
    while st[1] < TOP:
        st[1] = (st[1] << 8) & MASK32
        nxt = 0
        if st[2] < data.shape[0]:
            nxt = data[st[2]]
        st[2] += 1
        st[0] = ((st[0] << 8) | nxt) & MASK32
    return bit


@njit(cache=True)
def _decode(data, models, n_models):
    n = models.shape[0]
    out = np.zeros(n, dtype=np.int64)
    st = np.zeros(3, dtype=np.int64)
    st[1] = MASK32
    for _ in range(5):
        nxt = 0
        if st[2] < data.shape[0]:
            nxt = data[st[2]]
        st[0] = ((st[0] << 8) | nxt) & MASK32
        st[2] += 1
    tree = np.full((n_models, N_BUCKETS, 32), PROB_ONE // 2, dtype=np.int64)
    mant = np.full((n_models, N_BUCKETS, 16), PROB_ONE // 2, dtype=np.int64)
    prev = np.zeros(n_models, dtype=np.int64)
    for k in range(n):
        m = models[k]
        ctx = tree[m, prev[m]]
        node = 1
        for i in range(5):
            node = node * 2 + _dec_bit(st, data, ctx, node)
        b = node - 32
        if b >= N_BUCKETS:
            return out, False
        u = 0
        if b > 0:
            u = 1
            mp = mant[m, b]
            for i in range(b - 2, -1, -1):
                u = (u << 1) | _dec_bit(st, data, mp, i)
        out[k] = u
        prev[m] = b
    return out, st[2] <= data.shape[0] + 4


def entropy_encode(symbols, models=None) -> bytes:
    """Code ``symbols`` (ints in [0, 2**16)); ``models`` selects a context set per symbol."""
    s = np.ascontiguousarray(symbols, dtype=np.int64).reshape(-1)
    if s.size and (s.min() < 0 or s.max() > MAX_SYMBOL):
        raise ValueError("symbols must lie in [0, 2**16)")
    m = _models(models, s.size)
    n_models = int(m.max()) + 1 if m.size else 1
    return _encode(s, m, n_models).tobytes()


def entropy_decode(data: bytes, n, models=None):
    m = _models(models, n)
    n_models = int(m.max()) + 1 if m.size else 1
    out, ok = _decode(np.frombuffer(data, dtype=np.uint8), m, n_models)
    if not ok:
        raise ValueError("corrupt entropy-coded payload")
    return out


def _models(models, n):
    if models is None:
        return np.zeros(n, dtype=np.int64)
    m = np.ascontiguousarray(models, dtype=np.int64).reshape(-1)
    if m.size != n:
        raise ValueError("one model id per symbol required")
    if m.size and m.min() < 0:
        raise ValueError("model ids must be non-negative")
    return m


def zigzag(r):
    r = np.asarray(r, dtype=np.int64)
    return np.where(r >= 0, 2 * r, -2 * r - 1)


def unzigzag(z):
    z = np.asarray(z, dtype=np.int64)
    return np.where(z % 2 == 0, z // 2, -(z + 1) // 2)
