class AlignException(Exception):
    """
    Exception raised by failures anywhere in the alignment pipeline.
    """

    pass


class DimensionError(AlignException):
    """
    Two operands, or a tensor and a model, disagree about a dimension.
    """

    pass


class EmptySequenceError(AlignException):
    """
    A video or token sequence with no elements was handed to an encoder or a
    similarity that needs at least one.
    """

    pass


class VocabularyError(AlignException):
    """
    A token id outside the model's vocabulary was encountered.

    :param int token_id: the offending id
    :param int vocab_size: size of the vocabulary it was checked against
    """

    def __init__(self, token_id, vocab_size):
        AlignException.__init__(self, token_id, vocab_size)
        self.token_id = token_id
        self.vocab_size = vocab_size

    def __str__(self):
        return "Token id {} outside vocabulary of size {}".format(
            self.token_id, self.vocab_size
        )


class BatchSizeError(AlignException):
    """
    A contrastive loss was asked to contrast fewer than two pairs.
    """

    def __init__(self, size, minimum=2):
        AlignException.__init__(self, size, minimum)
        self.size = size
        self.minimum = minimum

    def __str__(self):
        return "Batch of {} pairs; need at least {}".format(
            self.size, self.minimum
        )


class NumericError(AlignException):
    """
    A non-finite value appeared where finite values are required.

    :param str message: what went non-finite
    :param int step: training step it happened at, when known
    """

    def __init__(self, message, step=None):
        AlignException.__init__(self, message, step)
        self.message = message
        self.step = step

    def __str__(self):
        if self.step is None:
            return self.message
        return "{} (at step {})".format(self.message, self.step)


class InputError(AlignException):
    """
    Caller-supplied data violates an operation's precondition.
    """

    pass


class CorpusParseError(AlignException):
    """
    A corpus line could not be parsed into a record.

    :param int lineno: 1-based line number in the corpus file
    :param str field: the field that was missing or malformed
    :param str reason: human readable detail
    """

    def __init__(self, lineno, field, reason):
        AlignException.__init__(self, lineno, field, reason)
        self.lineno = lineno
        self.field = field
        self.reason = reason

    def __str__(self):
        return "Corpus line {}: field {!r}: {}".format(
            self.lineno, self.field, self.reason
        )


class CorpusValidationError(CorpusParseError):
    """
    A corpus line parsed, but its record breaks an invariant (e.g. a video
    with no frames).
    """

    pass


class ConfigurationError(AlignException):
    """
    A run configuration violated one of its invariants, or could not be
    parsed at all.
    """

    pass


class CheckpointError(AlignException):
    """
    A checkpoint is unreadable, of a different format version, or does not
    fit the configured model.
    """

    pass


class ConsistencyError(AlignException):
    """
    Internal bookkeeping disagreed with itself, e.g. a selected pair has no
    fused output.
    """

    pass


class SelfCheckFailure(AlignException):
    """
    One or more self-check properties failed.

    :param list failures: names of the failing properties
    """

    def __init__(self, failures):
        AlignException.__init__(self, failures)
        self.failures = list(failures)

    def __str__(self):
        return "Self-check failed: {}".format(", ".join(self.failures))
