"""
Some unit tests for the checkpoint byte stream.
"""

import unittest

import numpy as np

from tokalign import CheckpointError
from tokalign.message import Message


class MessageTest(unittest.TestCase):

    __a = (
        b"\x00\x00\x00\x17\x00\x00\x00\x01\x71\x01\x3f\xf8\x00\x00\x00\x00\x00\x00"  # noqa
        + b"\x00\x00\x00\x02\x00\x00\x00\x01\x61\x00\x00\x00\x02\x62\x63"
    )
    __b = (
        b"f8\x00\x00\x00\x02\x00\x00\x00\x01\x00\x00\x00\x02"
        + b"\x3f\xf0\x00\x00\x00\x00\x00\x00\x40\x00\x00\x00\x00\x00\x00\x00"
    )
    __c = b"f4\x00\x00\x00\x01\x00\x00\x00\x01\x3f\x80\x00\x00"

    def test_encode(self):
        msg = Message()
        msg.add_int(23)
        msg.add_string("q")
        msg.add_boolean(True)
        msg.add_double(1.5)
        msg.add_list(["a", "bc"])
        self.assertEqual(msg.asbytes(), self.__a)

        msg = Message()
        msg.add_array(np.array([[1.0, 2.0]]))
        self.assertEqual(msg.asbytes(), self.__b)

        msg = Message()
        msg.add_array(np.array([1.0], dtype=np.float32))
        self.assertEqual(msg.asbytes(), self.__c)

    def test_decode(self):
        msg = Message(self.__a)
        self.assertEqual(msg.get_int(), 23)
        self.assertEqual(msg.get_text(), "q")
        self.assertEqual(msg.get_boolean(), True)
        self.assertEqual(msg.get_double(), 1.5)
        self.assertEqual(msg.get_list(), ["a", "bc"])
        self.assertEqual(msg.get_remainder(), b"")

        array = Message(self.__b).get_array()
        self.assertEqual(array.dtype, np.float64)
        self.assertEqual(array.tolist(), [[1.0, 2.0]])

        array = Message(self.__c).get_array()
        self.assertEqual(array.dtype, np.float32)
        self.assertEqual(array.shape, (1,))

    def test_int64(self):
        msg = Message()
        msg.add_int64(0xF5E4D3C2B109)
        self.assertEqual(msg.asbytes(), b"\x00\x00\xf5\xe4\xd3\xc2\xb1\x09")
        msg.rewind()
        self.assertEqual(msg.get_int64(), 0xF5E4D3C2B109)

    def test_misc(self):
        msg = Message(self.__a)
        msg.get_int()
        self.assertEqual(msg.get_remainder(), self.__a[4:])
        msg.rewind()
        self.assertEqual(msg.get_int(), 23)

    def test_truncated(self):
        msg = Message(self.__b[:-3])
        with self.assertRaises(CheckpointError):
            msg.get_array()
        with self.assertRaises(CheckpointError):
            Message(b"\x00\x00").get_int()

    def test_unknown_dtype_tag(self):
        with self.assertRaises(CheckpointError):
            Message(b"i8" + self.__b[2:]).get_array()
        with self.assertRaises(CheckpointError):
            Message().add_array(np.array([1, 2]))

    def test_invalid_text(self):
        with self.assertRaises(CheckpointError):
            Message(b"\x00\x00\x00\x01\xff").get_text()

    def test_bytes_and_repr(self):
        msg = Message(self.__c)
        assert repr(msg) == f"tokalign.Message({self.__c!r})"
        assert bytes(msg) == msg.asbytes() == self.__c
