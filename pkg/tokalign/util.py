"""
Useful functions used by the rest of tokalign.
"""

import hashlib
import logging
import threading

import numpy as np

from tokalign.common import DEBUG


_g_thread_data = threading.local()
_g_thread_counter = 0
_g_thread_lock = threading.Lock()


def get_thread_id():
    global _g_thread_data, _g_thread_counter, _g_thread_lock
    try:
        return _g_thread_data.id
    except AttributeError:
        with _g_thread_lock:
            _g_thread_counter += 1
            _g_thread_data.id = _g_thread_counter
        return _g_thread_data.id


def log_to_file(filename, level=DEBUG):
    """send tokalign logs to a logfile,
    if they're not already going somewhere"""
    logger = logging.getLogger("tokalign")
    if len(logger.handlers) > 0:
        return
    logger.setLevel(level)
    f = open(filename, "a")
    handler = logging.StreamHandler(f)
    frm = "%(levelname)-.3s [%(asctime)s.%(msecs)03d] thr=%(_threadid)-3d"
    frm += " %(name)s: %(message)s"
    handler.setFormatter(logging.Formatter(frm, "%Y%m%d-%H:%M:%S"))
    logger.addHandler(handler)


# make only one filter object, so it doesn't get applied more than once
class PFilter:
    def filter(self, record):
        record._threadid = get_thread_id()
        return True


_pfilter = PFilter()


def get_logger(name):
    logger = logging.getLogger(name)
    logger.addFilter(_pfilter)
    return logger


def clamp_value(minimum, val, maximum):
    return max(minimum, min(val, maximum))


def file_digest(path):
    """
    Return the hex SHA-256 of the file at ``path``, read in chunks.
    """
    digest = hashlib.sha256()
    with open(path, "rb") as fd:
        for chunk in iter(lambda: fd.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


class Rng:
    """
    Seeded random source shared by initialization, batching, sampling and the
    synthetic generator.

    Draws come from numpy's ``PCG64`` bit generator, whose output stream is
    fixed by the seed on every platform numpy supports. Independent streams
    for separate concerns are derived with `spawn`, so that e.g. drawing an
    extra random negative never shifts the batch order.

    :param int seed: 64-bit seed
    """

    algorithm = "PCG64"

    def __init__(self, seed):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._seq = np.random.SeedSequence(self.seed)
        self.generator = np.random.Generator(np.random.PCG64(self._seq))

    def __repr__(self):
        return "Rng(seed={}, algorithm={!r})".format(self.seed, self.algorithm)

    def spawn(self, name):
        """
        Derive a child `Rng` for the named concern. Same parent seed and name
        always give the same child.
        """
        digest = hashlib.sha256(name.encode()).digest()
        salt = int.from_bytes(digest[:8], "big")
        return Rng(self.seed ^ salt)

    def uniform(self, low, high, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, scale=1.0, size=None):
        return self.generator.normal(0.0, scale, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def choice(self, a, size=None, replace=True, p=None):
        return self.generator.choice(a, size=size, replace=replace, p=p)
