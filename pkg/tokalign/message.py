"""
Big-endian binary stream used by the checkpoint format.
"""

import struct
from io import BytesIO

import numpy as np

from tokalign.align_exception import CheckpointError


# dtype tags written ahead of array payloads
ARRAY_TAGS = {"float64": b"f8", "float32": b"f4"}
_TAG_DTYPES = {v: k for k, v in ARRAY_TAGS.items()}


class Message:
    """
    A stream of bytes encoding a sequence of ints, doubles, strings, string
    lists and float arrays. This class builds or breaks down such a stream;
    every ``add_*`` has a matching ``get_*`` and all integers and floats are
    big-endian.

    Reading past the end raises `.CheckpointError` rather than padding.
    """

    def __init__(self, content=None):
        """
        :param bytes content:
            the byte stream to decompose; omit to build a new one
        """
        if content is not None:
            self.packet = BytesIO(content)
        else:
            self.packet = BytesIO()

    def __bytes__(self):
        return self.asbytes()

    def __repr__(self):
        return "tokalign.Message(" + repr(self.packet.getvalue()) + ")"

    def asbytes(self):
        return self.packet.getvalue()

    def rewind(self):
        self.packet.seek(0)

    def get_remainder(self):
        """
        Return the `bytes` of this message that haven't been parsed yet.
        """
        position = self.packet.tell()
        remainder = self.packet.read()
        self.packet.seek(position)
        return remainder

    def get_bytes(self, n):
        b = self.packet.read(n)
        if len(b) < n:
            raise CheckpointError(
                "truncated stream: wanted {} bytes, got {}".format(n, len(b))
            )
        return b

    def get_boolean(self):
        return self.get_bytes(1) != b"\x00"

    def get_int(self):
        """
        Fetch a 32-bit unsigned int.
        """
        return struct.unpack(">I", self.get_bytes(4))[0]

    def get_int64(self):
        return struct.unpack(">Q", self.get_bytes(8))[0]

    def get_double(self):
        return struct.unpack(">d", self.get_bytes(8))[0]

    def get_string(self):
        """
        Fetch a length-prefixed `bytes` string.
        """
        return self.get_bytes(self.get_int())

    def get_text(self):
        try:
            return self.get_string().decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError("invalid text in stream ({})".format(e))

    def get_list(self):
        """
        Fetch a list of `str`, stored as a count followed by each string.
        """
        return [self.get_text() for _ in range(self.get_int())]

    def get_array(self):
        """
        Fetch a float array stored by `add_array`.

        :return: a native-endian `numpy.ndarray`
        """
        tag = self.get_bytes(2)
        if tag not in _TAG_DTYPES:
            raise CheckpointError("unknown array dtype tag {!r}".format(tag))
        dims = tuple(self.get_int() for _ in range(self.get_int()))
        dtype = np.dtype(_TAG_DTYPES[tag]).newbyteorder(">")
        count = int(np.prod(dims, dtype=np.int64))
        raw = self.get_bytes(count * dtype.itemsize)
        data = np.frombuffer(raw, dtype=dtype).reshape(dims)
        return data.astype(_TAG_DTYPES[tag])

    def add_bytes(self, b):
        self.packet.write(b)
        return self

    def add_boolean(self, b):
        self.packet.write(b"\x01" if b else b"\x00")
        return self

    def add_int(self, n):
        """
        Add a 32-bit unsigned int.

        :param int n: integer to add
        """
        self.packet.write(struct.pack(">I", n))
        return self

    def add_int64(self, n):
        self.packet.write(struct.pack(">Q", n))
        return self

    def add_double(self, x):
        self.packet.write(struct.pack(">d", x))
        return self

    def add_string(self, s):
        """
        Add a length-prefixed string; `str` is encoded as UTF-8.

        :param s: `bytes` or `str` to add
        """
        if isinstance(s, str):
            s = s.encode("utf-8")
        self.add_int(len(s))
        self.packet.write(s)
        return self

    def add_list(self, items):
        """
        Add a list of strings as a count followed by each string.
        """
        self.add_int(len(items))
        for item in items:
            self.add_string(item)
        return self

    def add_array(self, array):
        """
        Add a float array: dtype tag, ndim, dims, then big-endian values in
        C order.

        :param numpy.ndarray array: 32- or 64-bit float array
        """
        array = np.asarray(array)
        if array.dtype.name not in ARRAY_TAGS:
            raise CheckpointError(
                "cannot store arrays of dtype {}".format(array.dtype)
            )
        self.packet.write(ARRAY_TAGS[array.dtype.name])
        self.add_int(array.ndim)
        for dim in array.shape:
            self.add_int(dim)
        big = array.astype(array.dtype.newbyteorder(">"), order="C")
        self.packet.write(big.tobytes())
        return self
