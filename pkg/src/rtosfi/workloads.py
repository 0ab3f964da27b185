"""The five benchmark task bodies and golden-output comparison.

Each benchmark is a generator that yields once every ``yield_stride``
iterations (a cooperative yield point) and returns its full result as bytes.
Inputs are fixed and generated with integer arithmetic only, so results are
bit-exact on every platform.
"""

from __future__ import annotations

import functools
import hashlib
import heapq
import math
from dataclasses import dataclass
from typing import Callable, Generator, Mapping

__all__ = [
    "WorkloadSpec", "WorkloadOutput", "MissingOutput", "WorkloadOverrun",
    "DEFAULT_WORKLOADS", "WORKLOAD_IDS", "run_workload", "verify_outputs",
    "digest64", "workload_trace", "task_entry",
    "sha1", "fft_fixed", "solve_cubic", "huffman_encode", "huffman_decode",
    "adpcm_encode",
]

WORKLOAD_IDS = ("SHA", "FFT", "CUBIC", "HUFF_DEC", "ADPCM_ENC")

# Desk-scale input sizes.
SHA_INPUT_BYTES = 4096
FFT_POINTS = 64
HUFF_CORPUS_BYTES = 2048
ADPCM_SAMPLES = 1024


class MissingOutput(Exception):
    def __init__(self, ids):
        super().__init__(f"no output from {', '.join(ids)}")
        self.ids = tuple(ids)


class WorkloadOverrun(Exception):
    """A body ran past ten times its golden iteration count."""


@dataclass(frozen=True)
class WorkloadSpec:
    id: str
    priority: int
    yield_stride: int
    stack_words: int = 128


@dataclass(frozen=True)
class WorkloadOutput:
    id: str
    digest: int
    completion_tick: int


DEFAULT_WORKLOADS = (
    WorkloadSpec("SHA", 1, 8),
    WorkloadSpec("FFT", 1, 1),
    WorkloadSpec("CUBIC", 1, 2),
    WorkloadSpec("HUFF_DEC", 2, 256),
    WorkloadSpec("ADPCM_ENC", 3, 128),
)


def digest64(payload: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def _lcg_bytes(n, seed):
    out = bytearray(n)
    x = seed
    for i in range(n):
        x = (1103515245 * x + 12345) & 0x7FFFFFFF
        out[i] = (x >> 16) & 0xFF
    return bytes(out)


# -- SHA-1 -----------------------------------------------------------------

def _rol(x, n):
    return ((x << n) | (x >> (32 - n))) & 0xFFFFFFFF


def _sha1_pad(message: bytes) -> bytes:
    ml = len(message) * 8
    padded = message + b"\x80" + b"\0" * ((55 - len(message)) % 64)
    return padded + ml.to_bytes(8, "big")


def _sha1_blocks(message: bytes, stride: int) -> Generator[None, None, bytes]:
    h = [0x67452301, 0xEFCDAB89, 0x98BADCFE, 0x10325476, 0xC3D2E1F0]
    data = _sha1_pad(message)
    for n, off in enumerate(range(0, len(data), 64)):
        if n and n % stride == 0:
            yield
        w = [int.from_bytes(data[off + 4 * i:off + 4 * i + 4], "big") for i in range(16)]
        for i in range(16, 80):
            w.append(_rol(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1))
        a, b, c, d, e = h
        for i in range(80):
            if i < 20:
                f, k = (b & c) | (~b & d), 0x5A827999
            elif i < 40:
                f, k = b ^ c ^ d, 0x6ED9EBA1
            elif i < 60:
                f, k = (b & c) | (b & d) | (c & d), 0x8F1BBCDC
            else:
                f, k = b ^ c ^ d, 0xCA62C1D6
            a, b, c, d, e = (_rol(a, 5) + f + e + k + w[i]) & 0xFFFFFFFF, a, _rol(b, 30), c, d
        h = [(x + y) & 0xFFFFFFFF for x, y in zip(h, (a, b, c, d, e))]
    return b"".join(x.to_bytes(4, "big") for x in h)


def sha1(message: bytes) -> bytes:
    return _drain(_sha1_blocks(message, 1 << 30))


def sha_input() -> bytes:
    return _lcg_bytes(SHA_INPUT_BYTES, 0x5A17)


# -- fixed-point FFT -------------------------------------------------------

Q15 = 15


@functools.lru_cache(maxsize=None)
def _twiddles(n):
    return tuple((round(32767 * math.cos(2 * math.pi * k / n)),
                  round(-32767 * math.sin(2 * math.pi * k / n))) for k in range(n // 2))


def _fft_stages(re, im, stride=1) -> Generator[None, None, tuple]:
    """Radix-2 decimation-in-time FFT on Q15 integers, halving every stage."""
    n = len(re)
    bits = n.bit_length() - 1
    if 1 << bits != n:
        raise ValueError("length must be a power of two")
    re, im = list(re), list(im)
    for i in range(n):
        j = int(format(i, f"0{bits}b")[::-1], 2)
        if j > i:
            re[i], re[j] = re[j], re[i]
            im[i], im[j] = im[j], im[i]
    tw = _twiddles(n)
    size = 2
    stage = 0
    while size <= n:
        if stage and stage % stride == 0:
            yield
        half = size // 2
        step = n // size
        for start in range(0, n, size):
            for k in range(half):
                wr, wi = tw[k * step]
                a, b = start + k, start + k + half
                tr = (wr * re[b] - wi * im[b]) >> Q15
                ti = (wr * im[b] + wi * re[b]) >> Q15
                re[a], re[b] = (re[a] + tr) >> 1, (re[a] - tr) >> 1
                im[a], im[b] = (im[a] + ti) >> 1, (im[a] - ti) >> 1
        size *= 2
        stage += 1
    return re, im


def fft_fixed(re, im=None):
    """Scaled Q15 FFT; output equals DFT(x) / N up to rounding."""
    if im is None:
        im = [0] * len(re)
    return _drain(_fft_stages(re, im, 1 << 30))


def fft_input():
    return [(((n * 37) % 64) - 32) * 512 + ((n * n) % 17) * 64 for n in range(FFT_POINTS)]


# -- cubic solver ----------------------------------------------------------

def solve_cubic(a, b, c, d):
    """Real roots of a*x^3 + b*x^2 + c*x + d = 0, ascending."""
    a1, a2, a3 = b / a, c / a, d / a
    q = (a1 * a1 - 3.0 * a2) / 9.0
    r = (2.0 * a1 ** 3 - 9.0 * a1 * a2 + 27.0 * a3) / 54.0
    r2_q3 = r * r - q ** 3
    if q == 0 and r == 0:
        return [-a1 / 3.0] * 3
    if r2_q3 <= 0:
        theta = math.acos(max(-1.0, min(1.0, r / math.sqrt(q ** 3))))
        s = -2.0 * math.sqrt(q)
        roots = [s * math.cos((theta + 2.0 * math.pi * k) / 3.0) - a1 / 3.0 for k in range(3)]
        return sorted(roots)
    e = (math.sqrt(r2_q3) + abs(r)) ** (1.0 / 3.0)
    if r > 0:
        e = -e
    return [e + q / e - a1 / 3.0] if e else [-a1 / 3.0]


CUBIC_INPUTS = (
    (1.0, -6.0, 11.0, -6.0),
    (1.0, -10.5, 32.0, -30.0),
    (1.0, -4.5, 17.0, -30.0),
    (1.0, -3.5, 22.0, -31.0),
    (1.0, -13.7, 1.0, -35.0),
    (3.0, 12.34, 5.0, 12.0),
    (-8.67, -23.45, 5.0, 12.0),
    (1.0, 0.0, -1.0, 0.0),
    (2.0, -4.0, -22.0, 24.0),
    (1.0, 3.0, 3.0, 1.0),
    (5.0, -1.0, 0.5, -7.0),
    (1.0, -2.0, -5.0, 6.0),
    (4.0, 2.0, -8.0, 1.0),
    (1.0, 6.0, 12.0, 9.0),
    (-1.0, 2.0, 1.0, -2.0),
    (1.0, 0.0, 0.0, -27.0),
)


def _cubic_batches(inputs, stride) -> Generator[None, None, bytes]:
    out = []
    for i, coeffs in enumerate(inputs):
        if i and i % stride == 0:
            yield
        out.append(",".join(f"{x:.9f}" for x in solve_cubic(*coeffs)))
    return ";".join(out).encode()


# -- Huffman ---------------------------------------------------------------

_WORDS = (b"the", b"kernel", b"task", b"list", b"tick", b"of", b"a", b"and", b"timer",
          b"queue", b"ready", b"priority", b"is", b"to", b"scheduler", b"idle", b"in")


def huff_corpus() -> bytes:
    out = bytearray()
    x = 0x2545F491
    while len(out) < HUFF_CORPUS_BYTES:
        x = (1103515245 * x + 12345) & 0x7FFFFFFF
        out += _WORDS[(x >> 16) % len(_WORDS)]
        out += b". " if (x >> 8) % 11 == 0 else b" "
    return bytes(out[:HUFF_CORPUS_BYTES])


def _huffman_tree(data: bytes):
    freq = {}
    for byte in data:
        freq[byte] = freq.get(byte, 0) + 1
    heap = [(f, sym, sym) for sym, f in sorted(freq.items())]
    heapq.heapify(heap)
    seq = 256
    if len(heap) == 1:
        f, _, node = heap[0]
        return (node, node)
    while len(heap) > 1:
        f1, _, n1 = heapq.heappop(heap)
        f2, _, n2 = heapq.heappop(heap)
        heapq.heappush(heap, (f1 + f2, seq, (n1, n2)))
        seq += 1
    return heap[0][2]


def _codes(tree, prefix="", table=None):
    table = {} if table is None else table
    if isinstance(tree, int):
        table[tree] = prefix or "0"
    else:
        _codes(tree[0], prefix + "0", table)
        _codes(tree[1], prefix + "1", table)
    return table


def huffman_encode(data: bytes):
    """Returns (tree, packed bits, bit count)."""
    tree = _huffman_tree(data)
    table = _codes(tree)
    bits = "".join(table[b] for b in data)
    nbits = len(bits)
    # left-aligned: bit 0 of the stream is the MSB of byte 0
    packed = (int(bits + "0" * (-nbits % 8), 2).to_bytes((nbits + 7) // 8, "big")
              if nbits else b"")
    return tree, packed, nbits


def _huff_decode_steps(tree, packed, nbits, count, stride) -> Generator[None, None, bytes]:
    out = bytearray()
    pos = 0
    while len(out) < count:
        if out and len(out) % stride == 0:
            yield
        node = tree
        while not isinstance(node, int):
            if pos >= nbits:
                raise ValueError("bitstream exhausted")
            bit = (packed[pos >> 3] >> (7 - (pos & 7))) & 1
            node = node[bit]
            pos += 1
        out.append(node)
    return bytes(out)


def huffman_decode(tree, packed, nbits, count) -> bytes:
    return _drain(_huff_decode_steps(tree, packed, nbits, count, 1 << 30))


# -- IMA ADPCM encoder -----------------------------------------------------

_INDEX_TABLE = (-1, -1, -1, -1, 2, 4, 6, 8)
_STEP_TABLE = (
    7, 8, 9, 10, 11, 12, 13, 14, 16, 17, 19, 21, 23, 25, 28, 31, 34, 37, 41, 45,
    50, 55, 60, 66, 73, 80, 88, 97, 107, 118, 130, 143, 157, 173, 190, 209, 230,
    253, 279, 307, 337, 371, 408, 449, 494, 544, 598, 658, 724, 796, 876, 963,
    1060, 1166, 1282, 1411, 1552, 1707, 1878, 2066, 2272, 2499, 2749, 3024, 3327,
    3660, 4026, 4428, 4871, 5358, 5894, 6484, 7132, 7845, 8630, 9493, 10442,
    11487, 12635, 13899, 15289, 16818, 18500, 20350, 22385, 24623, 27086, 29794,
    32767,
)


def adpcm_input():
    out = []
    x = 0x1234
    for n in range(ADPCM_SAMPLES):
        x = (1103515245 * x + 12345) & 0x7FFFFFFF
        tri = (n * 211) % 8192
        tri = tri if tri < 4096 else 8192 - tri
        out.append((tri - 2048) * 6 + ((x >> 16) % 512) - 256)
    return out


def _adpcm_steps(samples, stride) -> Generator[None, None, bytes]:
    valpred = 0
    index = 0
    codes = bytearray()
    for i, sample in enumerate(samples):
        if i and i % stride == 0:
            yield
        step = _STEP_TABLE[index]
        diff = sample - valpred
        sign = 8 if diff < 0 else 0
        if sign:
            diff = -diff
        delta = 0
        vpdiff = step >> 3
        if diff >= step:
            delta = 4
            diff -= step
            vpdiff += step
        step >>= 1
        if diff >= step:
            delta |= 2
            diff -= step
            vpdiff += step
        step >>= 1
        if diff >= step:
            delta |= 1
            vpdiff += step
        valpred = valpred - vpdiff if sign else valpred + vpdiff
        valpred = max(-32768, min(32767, valpred))
        delta |= sign
        index = max(0, min(88, index + _INDEX_TABLE[delta & 7]))
        codes.append(delta)
    packed = bytes((codes[i] << 4) | (codes[i + 1] if i + 1 < len(codes) else 0)
                   for i in range(0, len(codes), 2))
    return packed


def adpcm_encode(samples) -> bytes:
    """IMA ADPCM, two 4-bit codes per byte, first code in the high nibble."""
    return _drain(_adpcm_steps(samples, 1 << 30))


# -- drivers ---------------------------------------------------------------

def _drain(gen):
    try:
        while True:
            next(gen)
    except StopIteration as stop:
        return stop.value


def _fft_result(stride):
    re, im = yield from _fft_stages(fft_input(), [0] * FFT_POINTS, stride)
    return b"".join(v.to_bytes(4, "little", signed=True) for v in re + im)


@functools.lru_cache(maxsize=None)
def _huff_fixture():
    corpus = huff_corpus()
    tree, packed, nbits = huffman_encode(corpus)
    return corpus, tree, packed, nbits


def _body(spec: WorkloadSpec) -> Generator[None, None, bytes]:
    if spec.id == "SHA":
        return _sha1_blocks(sha_input(), spec.yield_stride)
    if spec.id == "FFT":
        return _fft_result(spec.yield_stride)
    if spec.id == "CUBIC":
        return _cubic_batches(CUBIC_INPUTS, spec.yield_stride)
    if spec.id == "HUFF_DEC":
        corpus, tree, packed, nbits = _huff_fixture()
        return _huff_decode_steps(tree, packed, nbits, len(corpus), spec.yield_stride)
    if spec.id == "ADPCM_ENC":
        return _adpcm_steps(adpcm_input(), spec.yield_stride)
    raise KeyError(f"unknown workload {spec.id!r}")


@functools.lru_cache(maxsize=None)
def workload_trace(spec: WorkloadSpec) -> tuple[int, int]:
    """(number of slices, result digest) for one body, computed once per process."""
    gen = _body(spec)
    slices = 1
    try:
        while True:
            next(gen)
            slices += 1
    except StopIteration as stop:
        return slices, digest64(stop.value)


def run_workload(spec: WorkloadSpec, completion_tick: int = 0) -> WorkloadOutput:
    _, digest = workload_trace(spec)
    return WorkloadOutput(spec.id, digest, completion_tick)


def task_entry(spec: WorkloadSpec, live: bool = False) -> Callable:
    """Kernel task body for a workload.

    The first slice runs the mutex and self-notification check.  With
    ``live=False`` the arithmetic is taken from :func:`workload_trace`; the
    bodies never read kernel state, so the slice structure and result are the
    same as executing them in place.
    """
    slices, digest = workload_trace(spec)
    cap = 10 * slices

    def entry(k):
        m = k.mutex
        k.mutex_take(m)
        k.mutex_give(m)
        k.notify_give(k.current_tcb())
        k.notify_take(True)
        if live:
            gen = _body(spec)
            n = 1
            try:
                while True:
                    next(gen)
                    n += 1
                    if n > cap:
                        raise WorkloadOverrun(spec.id)
                    k.task_yield()
                    yield
            except StopIteration as stop:
                result = digest64(stop.value)
        else:
            for _ in range(slices - 1):
                k.task_yield()
                yield
            result = digest
        k.outputs[spec.id] = WorkloadOutput(spec.id, result, k.now)
        k.task_delete_self()
        yield

    return entry


def verify_outputs(run_outputs: Mapping[str, WorkloadOutput],
                   golden_outputs: Mapping[str, WorkloadOutput]):
    """Returns ``("match", [])`` or ``("mismatch", ids)``; raises MissingOutput."""
    missing = [i for i in golden_outputs if i not in run_outputs]
    if missing:
        raise MissingOutput(missing)
    bad = [i for i, g in golden_outputs.items() if run_outputs[i].digest != g.digest]
    return ("mismatch", bad) if bad else ("match", [])
