"""Per-user error-control chain for the turbo loop.

Rate-1/2 feedforward convolutional encoding, per-user pseudo-random
interleaving, and an exact log-domain forward/backward APP decoder.
The bit-to-symbol map is fixed globally as 0 -> +1, 1 -> -1, and every
LLR in the package is log p(b = +1) / p(b = -1); the decoder consumes
coded-symbol LLRs from the detector and returns coded-symbol extrinsic
LLRs (posterior minus the channel input at the same position), plus
info-bit posteriors for error counting.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidPermutation, LengthMismatch

TERMINATED = "terminated"
TRUNCATED = "truncated"


@dataclass(frozen=True)
class ConvCode:
    """Rate-1/2 convolutional code from two binary generator strings.

    Generators are MSB first: the leading character multiplies the
    current input bit.  ``termination`` selects whether the encoder is
    flushed back to the zero state with tail bits.
    """

    generators: tuple
    termination: str = TERMINATED

    def __post_init__(self):
        gens = tuple(self.generators)
        if len(gens) != 2:
            raise ValueError("rate-1/2 code needs exactly two generators")
        if any(set(g) - {"0", "1"} or int(g, 2) == 0 for g in gens):
            raise ValueError(f"bad generator strings {gens}")
        if len(gens[0]) != len(gens[1]):
            raise ValueError("generators must share one constraint length")
        if self.termination not in (TERMINATED, TRUNCATED):
            raise ValueError(f"unknown termination {self.termination!r}")
        object.__setattr__(self, "generators", gens)

    @property
    def constraint_length(self):
        return len(self.generators[0])

    @property
    def memory(self):
        return self.constraint_length - 1

    @property
    def n_states(self):
        return 1 << self.memory

    def n_coded(self, n_info):
        """Coded symbols produced for n_info information bits."""
        tail = self.memory if self.termination == TERMINATED else 0
        return 2 * (n_info + tail)

    def _tables(self):
        """next_state[s, u], coded symbols out_pm[s, u, 2] in {+1, -1}."""
        m = self.memory
        g = [int(s, 2) for s in self.generators]
        S = self.n_states
        next_state = np.empty((S, 2), dtype=np.int64)
        out_pm = np.empty((S, 2, 2))
        for s in range(S):
            for u in (0, 1):
                window = (u << m) | s
                for j in (0, 1):
                    bit = bin(window & g[j]).count("1") & 1
                    out_pm[s, u, j] = 1.0 - 2.0 * bit
                next_state[s, u] = (u << (m - 1)) | (s >> 1) if m > 0 else 0
        return next_state, out_pm


def encode(code, info_bits):
    """Encode information bits (0/1) into a +/-1 coded symbol sequence.

    Output order is [c1_0, c2_0, c1_1, c2_1, ...]; terminated codes
    append the tail that flushes the register to zero.
    """
    info_bits = np.asarray(info_bits, dtype=int)
    if info_bits.ndim != 1 or info_bits.size < 1:
        raise ValueError("info_bits must be a nonempty 1-D array")
    next_state, out_pm = code._tables()
    bits = info_bits
    if code.termination == TERMINATED:
        bits = np.concatenate([bits, np.zeros(code.memory, dtype=int)])
    out = np.empty(2 * bits.size)
    s = 0
    for t, u in enumerate(bits):
        out[2 * t: 2 * t + 2] = out_pm[s, u]
        s = next_state[s, u]
    return out


@dataclass(frozen=True)
class BcjrResult:
    extrinsic: np.ndarray       # coded positions
    posterior: np.ndarray       # coded positions
    info_posterior: np.ndarray  # information positions only


def bcjr_decode(code, channel_llrs, prior_info_llrs=None):
    """Exact log-domain APP decoding over the code trellis.

    ``channel_llrs`` holds one LLR per coded symbol; an optional prior
    may be supplied per information bit.  Forward/backward metrics are
    renormalized every step (a pure shift in the log domain, so LLRs
    are unchanged) and all sums use exact log-sum-exp, not the max-log
    approximation.
    """
    Lc = np.asarray(channel_llrs, dtype=float)
    if Lc.ndim != 1 or Lc.size % 2 != 0:
        raise LengthMismatch("channel LLRs must pair up per trellis step")
    n_steps = Lc.size // 2
    tail = code.memory if code.termination == TERMINATED else 0
    n_info = n_steps - tail
    if n_info < 1:
        raise LengthMismatch("no information positions in channel LLR array")
    La = np.zeros(n_info) if prior_info_llrs is None else \
        np.asarray(prior_info_llrs, dtype=float)
    if La.shape != (n_info,):
        raise LengthMismatch(
            f"prior length {La.shape} does not match {n_info} info bits"
        )

    next_state, out_pm = code._tables()
    S = code.n_states
    Lc2 = Lc.reshape(n_steps, 2)

    # branch metrics: gamma[t, s, u]
    gamma = 0.5 * (out_pm[None, :, :, 0] * Lc2[:, None, None, 0]
                   + out_pm[None, :, :, 1] * Lc2[:, None, None, 1])
    upm = np.array([1.0, -1.0])  # bit 0 -> +1
    gamma[:n_info] += 0.5 * upm[None, None, :] * La[:, None, None]
    gamma[n_info:, :, 1] = -np.inf  # tail forced to the flushing input

    alpha = np.full((n_steps + 1, S), -np.inf)
    alpha[0, 0] = 0.0
    for t in range(n_steps):
        nxt = np.full(S, -np.inf)
        cand = alpha[t][:, None] + gamma[t]
        np.logaddexp.at(nxt, next_state.ravel(), cand.ravel())
        alpha[t + 1] = nxt - np.max(nxt)

    beta = np.full((n_steps + 1, S), -np.inf)
    if code.termination == TERMINATED:
        beta[n_steps, 0] = 0.0
    else:
        beta[n_steps] = 0.0
    for t in range(n_steps - 1, -1, -1):
        cand = gamma[t] + beta[t + 1][next_state]
        b = np.logaddexp(cand[:, 0], cand[:, 1])
        beta[t] = b - np.max(b)

    # edge mass: e[t, s, u] = alpha[t, s] + gamma[t, s, u] + beta[t+1, ns]
    edge = alpha[:-1, :, None] + gamma
    edge += beta[1:, :][:, next_state.ravel()].reshape(n_steps, S, 2)

    def _llr(mask_pm):
        pos = np.where(mask_pm > 0, edge, -np.inf)
        neg = np.where(mask_pm < 0, edge, -np.inf)
        return (_logsumexp2(pos.reshape(n_steps, -1))
                - _logsumexp2(neg.reshape(n_steps, -1)))

    posterior = np.empty_like(Lc2)
    posterior[:, 0] = _llr(np.broadcast_to(out_pm[None, :, :, 0],
                                           edge.shape))
    posterior[:, 1] = _llr(np.broadcast_to(out_pm[None, :, :, 1],
                                           edge.shape))
    posterior = posterior.ravel()
    extrinsic = posterior - Lc

    info_mask = np.broadcast_to(upm[None, None, :], edge.shape)
    info_posterior = _llr(info_mask)[:n_info]
    return BcjrResult(extrinsic=extrinsic, posterior=posterior,
                      info_posterior=info_posterior)


def _logsumexp2(x):
    """Row-wise exact log-sum-exp tolerating -inf entries."""
    m = np.max(x, axis=1)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = safe + np.log(np.sum(np.exp(x - safe[:, None]), axis=1))
    return np.where(np.isfinite(m), out, -np.inf)


def _check_perm(perm, n):
    perm = np.asarray(perm, dtype=int)
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise InvalidPermutation("not a permutation of the block indices")
    return perm


def interleave(perm, seq):
    """out[i] = seq[perm[i]]."""
    seq = np.asarray(seq)
    perm = _check_perm(perm, seq.shape[0])
    return seq[perm]


def deinterleave(perm, seq):
    """Inverse of ``interleave`` with the same permutation."""
    seq = np.asarray(seq)
    perm = _check_perm(perm, seq.shape[0])
    out = np.empty_like(seq)
    out[perm] = seq
    return out


def user_permutations(n, K, master_seed):
    """Per-user interleaver permutations, seeded from (master_seed, user)."""
    return [np.random.default_rng([master_seed, k]).permutation(n)
            for k in range(K)]


@dataclass(frozen=True)
class LlrFrame:
    """One turbo iteration's message exchange for a whole block.

    Arrays are (T, K): detector extrinsics (llr_mud), decoder
    extrinsics (llr_dec) and their sum, the posterior.  Per-user
    info-bit posteriors ride along for error counting when a real
    decoder is in the loop.
    """

    llr_mud: np.ndarray
    llr_dec: np.ndarray
    llr_post: np.ndarray
    info_posterior: list = field(default=None, repr=False)

    @classmethod
    def from_exchange(cls, llr_mud, llr_dec, info_posterior=None):
        return cls(llr_mud=np.asarray(llr_mud, dtype=float),
                   llr_dec=np.asarray(llr_dec, dtype=float),
                   llr_post=np.asarray(llr_mud, dtype=float)
                   + np.asarray(llr_dec, dtype=float),
                   info_posterior=info_posterior)

    @property
    def T(self):
        return self.llr_mud.shape[0]


class IdentityDecoder:
    """Pass-through decoder: LLR_dec = LLR_mud (no code constraint)."""

    def decode_user(self, k, llr_mud):
        return np.asarray(llr_mud, dtype=float), None


class ConvTurboDecoder:
    """Per-user convolutional chains behind the detector.

    Owns the code, block length and per-user interleavers; encodes the
    transmit block and decodes each user's channel-domain LLRs back to
    channel-domain extrinsics.
    """

    def __init__(self, code, K, n_info, master_seed=0):
        self.code = code
        self.K = K
        self.n_info = n_info
        self.n_coded = code.n_coded(n_info)
        self.perms = user_permutations(self.n_coded, K, master_seed)

    def encode_block(self, info_bits):
        """(n_info, K) 0/1 bits -> (n_coded, K) interleaved +/-1 symbols."""
        info_bits = np.asarray(info_bits, dtype=int)
        out = np.empty((self.n_coded, self.K))
        for k in range(self.K):
            out[:, k] = interleave(self.perms[k], encode(self.code,
                                                         info_bits[:, k]))
        return out

    def decode_user(self, k, llr_mud):
        """Channel-domain extrinsic in, channel-domain extrinsic out."""
        res = bcjr_decode(self.code, deinterleave(self.perms[k], llr_mud))
        return interleave(self.perms[k], res.extrinsic), res.info_posterior
