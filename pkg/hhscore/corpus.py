# =============================================================================
# This file is part of hhscore.
#
# hhscore is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 2 of the License, or
# (at your option) any later version.
#
# hhscore is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with hhscore.  If not, see <http://www.gnu.org/licenses/>.
# =============================================================================

"""Embedding corpora and their file formats.

Utterances are expected to hold embeddings of already-cropped audio; no
audio is handled here.

Binary format (little-endian):

    Name        Bytes    Type
    MAGIC       4        ASCII "HHEB"
    VERSION     2        u16
    D           4        u32
    COUNT       8        u64
    then COUNT records of
    SPK_LEN     4        u32
    SPK         SPK_LEN  UTF-8
    UTT_LEN     4        u32
    UTT         UTT_LEN  UTF-8
    VALUES      4*D      f32

Text format: one record per line, "speaker<TAB>utterance<TAB>v0,v1,...".
"""

import logging
from struct import calcsize, pack, unpack_from

import numpy as np

from . import consts, errors


log = logging.getLogger("hhscore.lib.corpus")

formats = {}

UNIT_TOLERANCE = 1e-12


def _as_unit(v):
    """Promote to float64 and rescale unless already unit length."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm == 0.0 or not np.isfinite(norm):
        raise errors.NormalizationError("embedding norm is %r" % norm)
    if abs(norm - 1.0) > UNIT_TOLERANCE:
        v = v / norm
    return v


class Corpus:
    """Utterance embeddings grouped by speaker.

    dimension       int     Embedding dimension D
    environments    dict    Optional speaker -> acoustic environment id (synthetic corpora)
    """

    def __init__(self, dimension):
        if dimension <= 0:
            raise errors.DimensionError("corpus dimension must be positive")
        self.dimension = int(dimension)
        self.environments = {}
        self._speakers = {}
        self._matrices = {}

    def add(self, speaker_id, utterance_id, embedding):
        """Add one utterance; the embedding is stored unit-normalized in float64."""
        embedding = np.ravel(embedding)
        if embedding.shape[0] != self.dimension:
            raise errors.DimensionError(
                "embedding of %r/%r has length %d, corpus has %d"
                % (speaker_id, utterance_id, embedding.shape[0], self.dimension)
            )
        utterances = self._speakers.setdefault(speaker_id, {})
        if utterance_id in utterances:
            raise errors.DuplicateUtteranceError(
                "utterance %r of speaker %r already exists" % (utterance_id, speaker_id)
            )
        utterances[utterance_id] = _as_unit(embedding)
        self._matrices.pop(speaker_id, None)

    def speaker_ids(self):
        return sorted(self._speakers)

    def __contains__(self, speaker_id):
        return speaker_id in self._speakers

    def _utterances(self, speaker_id):
        try:
            return self._speakers[speaker_id]
        except KeyError:
            raise errors.NotFoundError("speaker %r is not in the corpus" % (speaker_id,))

    def utterance_ids(self, speaker_id):
        return list(self._utterances(speaker_id))

    def utterance_count(self, speaker_id):
        return len(self._utterances(speaker_id))

    def embedding(self, speaker_id, utterance_id):
        try:
            return self._utterances(speaker_id)[utterance_id]
        except KeyError:
            raise errors.NotFoundError(
                "utterance %r of speaker %r was not found" % (utterance_id, speaker_id)
            )

    def embeddings(self, speaker_id, utterance_ids):
        """Stack the given utterances of one speaker into an (n, D) array."""
        if not utterance_ids:
            return np.zeros((0, self.dimension))
        return np.stack([self.embedding(speaker_id, u) for u in utterance_ids])

    def matrix(self, speaker_id):
        """All utterances of a speaker as an (n, D) array, in insertion order."""
        if speaker_id not in self._matrices:
            self._matrices[speaker_id] = np.stack(list(self._utterances(speaker_id).values()))
        return self._matrices[speaker_id]

    def records(self):
        """Yield (speaker_id, utterance_id, embedding), speakers in sorted order."""
        for speaker_id in self.speaker_ids():
            for utterance_id, embedding in self._speakers[speaker_id].items():
                yield speaker_id, utterance_id, embedding

    def merge(self, other):
        if other.dimension != self.dimension:
            raise errors.DimensionError(
                "can't merge corpora of dimension %d and %d" % (self.dimension, other.dimension)
            )
        for speaker_id, utterance_id, embedding in other.records():
            self.add(speaker_id, utterance_id, embedding)
        self.environments.update(other.environments)

    def __len__(self):
        return sum(len(u) for u in self._speakers.values())

    def __eq__(self, other):
        if not isinstance(other, Corpus):
            return NotImplemented
        if self.dimension != other.dimension or self.speaker_ids() != other.speaker_ids():
            return False
        for speaker_id in self.speaker_ids():
            if self.utterance_ids(speaker_id) != other.utterance_ids(speaker_id):
                return False
            if not np.array_equal(self.matrix(speaker_id), other.matrix(speaker_id)):
                return False
        return True

    def __repr__(self):
        return "Corpus(D=%d, speakers=%d, utterances=%d)" % (
            self.dimension,
            len(self._speakers),
            len(self),
        )


class _FormatType(type):
    def __init__(cls, name, bases, dct):
        super().__init__(name, bases, dct)
        # Skip the base class
        if cls.NAME:
            assert cls.NAME not in formats
            formats[cls.NAME] = cls


class CorpusFormat(metaclass=_FormatType):
    """A corpus file format. Should be extended.

    NAME        str      Format name
    MAGIC       bytes    Leading bytes identifying the format, if any
    SUFFIXES    tuple    File name suffixes written in this format
    """

    NAME = None
    MAGIC = None
    SUFFIXES = ()

    def read(self, data):
        """Parse file contents into a Corpus. Should be overridden."""
        raise NotImplementedError

    def write(self, corpus):
        """Return file contents for a Corpus. Should be overridden."""
        raise NotImplementedError


class BinaryCorpusFormat(CorpusFormat):
    NAME = "binary"
    MAGIC = consts.CORPUS_MAGIC
    SUFFIXES = (".hheb", ".bin")

    HEAD = "<4sHIQ"
    LEN = "<I"

    def write(self, corpus):
        chunks = [
            pack(
                self.HEAD,
                self.MAGIC,
                consts.corpus_versions["float32"],
                corpus.dimension,
                len(corpus),
            )
        ]
        for speaker_id, utterance_id, embedding in corpus.records():
            for text in (speaker_id, utterance_id):
                raw = str(text).encode("utf-8")
                chunks.append(pack(self.LEN, len(raw)) + raw)
            chunks.append(np.asarray(embedding, dtype="<f4").tobytes())
        return b"".join(chunks)

    def read(self, data):
        head = calcsize(self.HEAD)
        if len(data) < head:
            raise errors.FormatError("corpus file is truncated")
        magic, version, dimension, count = unpack_from(self.HEAD, data, 0)
        if magic != self.MAGIC:
            raise errors.MagicError("not a binary corpus (magic %r)" % magic)
        if version != consts.corpus_versions["float32"]:
            raise errors.FormatVersionError("unsupported corpus version %d" % version)
        log.debug("Binary corpus: D=%d, %d records", dimension, count)
        corpus = Corpus(dimension)
        offset = head
        width = 4 * dimension
        for _ in range(count):
            ids = []
            for _ in range(2):
                if offset + 4 > len(data):
                    raise errors.FormatError("corpus file is truncated")
                (size,) = unpack_from(self.LEN, data, offset)
                offset += 4
                if offset + size > len(data):
                    raise errors.FormatError("corpus file is truncated")
                ids.append(data[offset:offset + size].decode("utf-8"))
                offset += size
            if offset + width > len(data):
                raise errors.FormatError("corpus file is truncated")
            values = np.frombuffer(data, dtype="<f4", count=dimension, offset=offset)
            offset += width
            corpus.add(ids[0], ids[1], values.astype(np.float64))
        if offset != len(data):
            raise errors.FormatError("%d trailing bytes in corpus file" % (len(data) - offset))
        return corpus


class TextCorpusFormat(CorpusFormat):
    NAME = "text"
    SUFFIXES = (".tsv", ".txt")

    def write(self, corpus):
        lines = []
        for speaker_id, utterance_id, embedding in corpus.records():
            values = ",".join(repr(float(x)) for x in embedding)
            lines.append("%s\t%s\t%s\n" % (speaker_id, utterance_id, values))
        return "".join(lines).encode("utf-8")

    def read(self, data):
        corpus = None
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError:
            raise errors.FormatError("text corpus is not valid UTF-8")
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise errors.FormatError("line %d: expected 3 tab-separated fields" % lineno)
            try:
                values = np.array([float(x) for x in fields[2].split(",")])
            except ValueError:
                raise errors.FormatError("line %d: bad embedding values" % lineno)
            if corpus is None:
                corpus = Corpus(values.shape[0])
            corpus.add(fields[0], fields[1], values)
        if corpus is None:
            raise errors.EmptyInputError("text corpus has no records")
        return corpus


def format_for_filename(filename):
    """Pick a format from the file name suffix, binary by default."""
    name = str(filename).lower()
    for fmt in formats.values():
        if any(name.endswith(s) for s in fmt.SUFFIXES):
            return fmt()
    return BinaryCorpusFormat()


def format_for_data(data):
    """Pick a format by sniffing the leading bytes."""
    for fmt in formats.values():
        if fmt.MAGIC and data.startswith(fmt.MAGIC):
            return fmt()
    return TextCorpusFormat()


def load_corpus(filename):
    with open(filename, "rb") as fl:
        data = fl.read()
    fmt = format_for_data(data)
    corpus = fmt.read(data)
    log.info("Loaded %r from %r (%s format)", corpus, str(filename), fmt.NAME)
    return corpus


def load_corpora(filenames):
    """Load and merge several corpus files."""
    filenames = list(filenames)
    if not filenames:
        raise errors.EmptyInputError("no corpus files given")
    corpus = load_corpus(filenames[0])
    for filename in filenames[1:]:
        corpus.merge(load_corpus(filename))
    return corpus


def save_corpus(corpus, filename, fmt=None):
    if fmt is None:
        fmt = format_for_filename(filename)
    elif isinstance(fmt, str):
        fmt = formats[fmt]()
    with open(filename, "wb") as fl:
        fl.write(fmt.write(corpus))
    log.info("Saved %r to %r (%s format)", corpus, str(filename), fmt.NAME)
