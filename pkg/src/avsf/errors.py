"""Exception hierarchy shared across the avsf package.

Every error raised by the library derives from :class:`AvsfError` so callers
can catch one base type at pipeline boundaries (the CLI maps them to exit
code 2, validation problems to exit code 1).
"""

from __future__ import annotations


class AvsfError(Exception):
    """Base class for all avsf errors."""


# --- manifest / ingest ------------------------------------------------------

class ManifestError(AvsfError):
    """A manifest record failed validation."""


class MissingField(ManifestError):
    def __init__(self, field: str, record: str):
        self.field = field
        self.record = record
        super().__init__(f"record {record}: missing field {field!r}")


class DuplicateClipId(ManifestError):
    def __init__(self, clip_id: str):
        self.clip_id = clip_id
        super().__init__(f"duplicate clip_id {clip_id!r}")


class UnknownLabel(ManifestError):
    def __init__(self, value: object, record: str):
        self.value = value
        self.record = record
        super().__init__(f"record {record}: unknown label {value!r}")


class InvalidFieldValue(ManifestError):
    def __init__(self, field: str, value: object, record: str):
        self.field = field
        self.value = value
        self.record = record
        super().__init__(f"record {record}: invalid {field} value {value!r}")


class NoFaceInFirstFrame(AvsfError):
    """The landmark provider found no face in the first frame of a video."""


class DecodeFailure(AvsfError):
    """A media file could not be decoded."""


class EmptyAudio(AvsfError):
    """Waveform shorter than one analysis window (or empty)."""


class UnsupportedSampleRate(AvsfError):
    def __init__(self, rate: float):
        self.rate = rate
        super().__init__(f"sample rate {rate} Hz unsupported; need >= 16000 Hz")


class EmptyModality(AvsfError):
    """One side of an audio-visual pair has zero frames."""


# --- models -----------------------------------------------------------------

class ShapeMismatch(AvsfError):
    """Tensor shape violates an operation's contract."""


class KindMismatch(AvsfError):
    """EmbeddingSequence kind violates an operation's contract."""


class NonFiniteActivation(AvsfError):
    """A forward pass produced NaN or inf."""


class ShapeConflict(AvsfError):
    def __init__(self, name: str, expected: tuple, got: tuple):
        self.name = name
        self.expected = tuple(expected)
        self.got = tuple(got)
        super().__init__(f"parameter {name!r}: expected shape {self.expected}, got {self.got}")


class UnmappedParameter(AvsfError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"parameter {name!r} not covered by the mapping file (no source, no 'init' marker)")


class CorruptCheckpoint(AvsfError):
    """Checkpoint directory or mapping file is malformed or wrong version."""


class CorruptArchive(AvsfError):
    """Embedding archive is malformed or has an unsupported version."""


class EmptySequence(AvsfError):
    """Temporal operation received a zero-length sequence."""


class EmptyVideo(AvsfError):
    """Clip extraction received a video with no frames."""


# --- training ---------------------------------------------------------------

class LengthMismatch(AvsfError):
    """Paired label/score lists differ in length."""


class EmptyBatch(AvsfError):
    """Loss or metric computation received zero samples."""


class UnknownMode(AvsfError):
    def __init__(self, mode: object):
        self.mode = mode
        super().__init__(f"unknown freeze mode {mode!r}")


class SingleClassDataset(AvsfError):
    """Oversampling requires both classes to be present."""


class DivergenceDetected(AvsfError):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"non-finite training loss at epoch {epoch}")


class EmptySplit(AvsfError):
    """Training requires non-empty train and validation sets."""


class TooFewSubjects(AvsfError):
    def __init__(self, n_subjects: int, k: int):
        self.n_subjects = n_subjects
        self.k = k
        super().__init__(f"{n_subjects} subjects cannot be split into {k} folds")


# --- evaluation -------------------------------------------------------------

class EmptyPredictionList(AvsfError):
    """Video scoring needs at least one window prediction."""


class EmptyEvaluation(AvsfError):
    """Metric computation received zero scored videos."""


class SingleClassLabels(AvsfError):
    """ROC/AUC require both classes among the labels."""


class UnknownKind(AvsfError):
    def __init__(self, kind: object):
        self.kind = kind
        super().__init__(f"unknown embedding kind {kind!r}")
