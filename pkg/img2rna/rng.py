"""
Seeded random substreams.

All randomness in img2rna flows from a single integer seed. Each consumer asks
for a named substream (optionally with extra integer keys such as an epoch,
batch or gene index) and gets an independent ``numpy.random.Generator``.
Streams are stable across processes and worker counts.
"""
import zlib

import numpy as np

STREAMS = ("split", "init", "dropout", "shuffle", "synth", "permutation")


def _stream_key(name):
    return zlib.crc32(name.encode("utf-8"))


def substream(seed, name, *keys):
    """
    Return the generator for substream ``name`` of ``seed``.

    Parameters
    ----------
    seed : int
        The run seed.
    name : str
        Substream name, one of ``STREAMS``.
    keys : int
        Extra non-negative integers that further split the stream
        (e.g. patient index, epoch, batch, gene index).
    """
    if name not in STREAMS:
        raise ValueError("Unknown random stream '%s'. Available streams are %s"
                         % (name, ", ".join(STREAMS)))
    spawn_key = (_stream_key(name),) + tuple(int(k) for k in keys)
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.PCG64(seq))
