"""Content/question store, answerability matrices, and on-disk persistence.

The store is mutable while a build pipeline runs (single writer) and can be
frozen afterwards, at which point it is safe to share across threads. The
directory layout written by :meth:`KnowledgeBase.save` is:

  contents.jsonl     {"id","text","created_at"} per line
  questions.jsonl    {"id","content_id","text","answerable"} per line
  embeddings.qbem.c  binary content embeddings (format below)
  embeddings.qbem.q  binary question embeddings
  matrix.jsonl       header {"kind","m","n"[,"threshold"]}, then entry lines

Embedding files are little-endian: magic "QBEM", u8 version=1, u32 dim,
u32 count, count*dim float32 row-major (one row per item), u32 CRC32 of the
float payload. Values are float32 on disk, float64 in memory.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    ChecksumMismatchError,
    DimensionMismatchError,
    EmptyTextError,
    FormatError,
    StoreIoError,
    TargetTooHighError,
    UnknownContentError,
)
from .vectors import EmbeddingMatrix

ANSWERABLE_STATES = ("unfiltered", "yes", "no")
MATRIX_KINDS = ("observed", "oracle", "estimate")

_QBEM_MAGIC = b"QBEM"
_QBEM_VERSION = 1
_SPARSE_PROB_FLOOR = 1e-6


@dataclass(frozen=True)
class Content:
    id: str
    text: str
    created_at: int = 0


@dataclass(frozen=True)
class Question:
    id: str
    content_id: str
    text: str
    answerable: str = "unfiltered"

    def __post_init__(self):
        if self.answerable not in ANSWERABLE_STATES:
            raise ValueError(f"bad answerable state {self.answerable!r}")


class AnswerabilityMatrix:
    """M x N content-answers-question matrix in binary or probabilistic form.

    Binary kinds ("observed", "oracle") hold a set of (row, col) positions
    with value 1. The "estimate" kind holds a dense probability matrix in
    [0, 1] plus the threshold used to binarize it.
    """

    def __init__(self, kind, m, n, entries=None, probs=None, threshold=None):
        if kind not in MATRIX_KINDS:
            raise ValueError(f"bad matrix kind {kind!r}")
        self.kind = kind
        self.m = int(m)
        self.n = int(n)
        if kind == "estimate":
            if probs is None or threshold is None:
                raise ValueError("estimate matrices need probs and threshold")
            probs = np.asarray(probs, dtype=np.float64)
            if probs.shape != (self.m, self.n):
                raise DimensionMismatchError(
                    f"probs shape {probs.shape} != ({self.m}, {self.n})"
                )
            if probs.size and (probs.min() < 0.0 or probs.max() > 1.0):
                raise ValueError("estimate probabilities must lie in [0, 1]")
            if not 0.0 < float(threshold) < 1.0:
                raise ValueError("binarization threshold must lie in (0, 1)")
            self.probs = probs
            self.threshold = float(threshold)
            self.entries = None
        else:
            if entries is None:
                entries = set()
            self.entries = frozenset((int(i), int(j)) for i, j in entries)
            for i, j in self.entries:
                if not (0 <= i < self.m and 0 <= j < self.n):
                    raise ValueError(f"entry ({i}, {j}) out of bounds for {self.m}x{self.n}")
            self.probs = None
            self.threshold = None

    @classmethod
    def observed(cls, m, n, entries):
        return cls("observed", m, n, entries=entries)

    @classmethod
    def oracle(cls, m, n, entries):
        return cls("oracle", m, n, entries=entries)

    @classmethod
    def estimate(cls, probs, threshold):
        probs = np.asarray(probs, dtype=np.float64)
        return cls("estimate", probs.shape[0], probs.shape[1], probs=probs, threshold=threshold)

    def binary_entries(self) -> frozenset:
        """Positions with value 1 (estimate kind: probability >= threshold)."""
        if self.entries is not None:
            return self.entries
        rows, cols = np.nonzero(self.probs >= self.threshold)
        return frozenset(zip(rows.tolist(), cols.tolist()))

    def dense(self, weighting: str = "binary") -> np.ndarray:
        """Dense float array; "probability" keeps estimate probs unthresholded."""
        if weighting == "probability":
            if self.kind != "estimate":
                raise ValueError("probability weighting requires an estimate matrix")
            return self.probs.copy()
        if weighting != "binary":
            raise ValueError(f"bad weighting {weighting!r}")
        out = np.zeros((self.m, self.n))
        for i, j in self.binary_entries():
            out[i, j] = 1.0
        return out

    def rows_for_column(self, j: int) -> list[int]:
        return sorted(i for i, jj in self.binary_entries() if jj == j)

    def column_map(self) -> dict[int, list[int]]:
        """Column index -> sorted rows with a 1; missing keys have none."""
        out: dict[int, list[int]] = {}
        for i, j in sorted(self.binary_entries()):
            out.setdefault(j, []).append(i)
        return out

    def select_columns(self, cols) -> "AnswerabilityMatrix":
        cols = list(cols)
        pos = {c: p for p, c in enumerate(cols)}
        if self.kind == "estimate":
            return AnswerabilityMatrix.estimate(self.probs[:, cols], self.threshold)
        kept = {(i, pos[j]) for i, j in self.entries if j in pos}
        return AnswerabilityMatrix(self.kind, self.m, len(cols), entries=kept)

    def __eq__(self, other):
        if not isinstance(other, AnswerabilityMatrix):
            return NotImplemented
        if (self.kind, self.m, self.n) != (other.kind, other.m, other.n):
            return False
        if self.kind == "estimate":
            return self.threshold == other.threshold and np.array_equal(self.probs, other.probs)
        return self.entries == other.entries


@dataclass
class KnowledgeBase:
    """Contents, their generated questions, embeddings, and matrices.

    ``matrix`` holds an explicitly built matrix (an estimate, or an oracle
    supplied from outside); when it is None the effective matrix is the
    observed generation matrix derived from question provenance.
    """

    contents: list[Content] = field(default_factory=list)
    questions: list[Question] = field(default_factory=list)
    content_embeddings: EmbeddingMatrix | None = None
    question_embeddings: EmbeddingMatrix | None = None
    matrix: AnswerabilityMatrix | None = None
    _frozen: bool = field(default=False, repr=False)

    # -- build phase ---------------------------------------------------

    def _check_mutable(self):
        if self._frozen:
            raise RuntimeError("knowledge base is frozen")

    def freeze(self) -> "KnowledgeBase":
        self._frozen = True
        return self

    def add_content(self, text: str, created_at: int = 0) -> str:
        self._check_mutable()
        if not text or not text.strip():
            raise EmptyTextError("content text must be non-empty")
        cid = f"c{len(self.contents):06d}"
        self.contents.append(Content(id=cid, text=text, created_at=int(created_at)))
        self.content_embeddings = None
        self.matrix = None
        return cid

    def attach_question(self, content_id: str, text: str) -> str:
        self._check_mutable()
        if not text or not text.strip():
            raise EmptyTextError("question text must be non-empty")
        if content_id not in self.content_index():
            raise UnknownContentError(content_id)
        qid = f"q{len(self.questions):06d}"
        self.questions.append(Question(id=qid, content_id=content_id, text=text))
        self.question_embeddings = None
        self.matrix = None
        return qid

    def set_answerable(self, question_id: str, verdict: str) -> None:
        self._check_mutable()
        if verdict not in ("yes", "no"):
            raise ValueError(f"verdict must be yes/no, got {verdict!r}")
        for pos, q in enumerate(self.questions):
            if q.id == question_id:
                self.questions[pos] = replace(q, answerable=verdict)
                return
        raise KeyError(question_id)

    def embed_contents(self, client) -> None:
        self._check_mutable()
        mat = client.embed([c.text for c in self.contents])
        self.content_embeddings = EmbeddingMatrix(mat.vectors, tuple(c.id for c in self.contents))

    def embed_questions(self, client) -> None:
        self._check_mutable()
        mat = client.embed([q.text for q in self.questions])
        self.question_embeddings = EmbeddingMatrix(mat.vectors, tuple(q.id for q in self.questions))

    # -- views -----------------------------------------------------------

    def content_index(self) -> dict[str, int]:
        return {c.id: i for i, c in enumerate(self.contents)}

    def question_index(self) -> dict[str, int]:
        return {q.id: j for j, q in enumerate(self.questions)}

    def content_by_id(self, content_id: str) -> Content:
        try:
            return self.contents[self.content_index()[content_id]]
        except KeyError:
            raise UnknownContentError(content_id) from None

    def questions_by_content(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {c.id: [] for c in self.contents}
        for j, q in enumerate(self.questions):
            out[q.content_id].append(j)
        return out

    def observed_matrix(self) -> AnswerabilityMatrix:
        """Generation provenance as a binary matrix: one row entry per column."""
        cidx = self.content_index()
        entries = {(cidx[q.content_id], j) for j, q in enumerate(self.questions)}
        return AnswerabilityMatrix.observed(len(self.contents), len(self.questions), entries)

    def effective_matrix(self) -> AnswerabilityMatrix:
        return self.matrix if self.matrix is not None else self.observed_matrix()

    def active_question_mask(self) -> np.ndarray:
        """True where a question is still eligible for retrieval (not judged 'no')."""
        return np.array([q.answerable != "no" for q in self.questions], dtype=bool)

    def mean_questions_per_content(self) -> float:
        if not self.contents:
            return 0.0
        return len(self.questions) / len(self.contents)

    # -- downsampling ------------------------------------------------------

    def downsample_questions(self, target_mbar: float, seed: int) -> "KnowledgeBase":
        """A new store keeping ~target_mbar questions per content on average.

        Per-content keep counts are round(n_c * target / current average),
        floored at 1 so no content loses all of its questions. The original
        store is untouched.
        """
        if target_mbar <= 0:
            raise TargetTooHighError("target coverage must be positive")
        current = self.mean_questions_per_content()
        if target_mbar > current + 1e-9:
            raise TargetTooHighError(
                f"target coverage {target_mbar} exceeds current average {current:.3f}"
            )
        rng = np.random.default_rng(seed)
        kept: list[int] = []
        for cid, qidx in self.questions_by_content().items():
            if not qidx:
                continue
            k = max(1, int(round(len(qidx) * target_mbar / current)))
            k = min(k, len(qidx))
            chosen = rng.choice(len(qidx), size=k, replace=False)
            kept.extend(qidx[i] for i in sorted(chosen.tolist()))
        kept.sort()
        new = KnowledgeBase(
            contents=list(self.contents),
            questions=[self.questions[j] for j in kept],
            content_embeddings=self.content_embeddings,
            question_embeddings=(
                self.question_embeddings.select(kept)
                if self.question_embeddings is not None and kept
                else None
            ),
            matrix=self.matrix.select_columns(kept) if self.matrix is not None else None,
        )
        return new

    # -- persistence ---------------------------------------------------

    def save(self, directory) -> None:
        from pathlib import Path

        path = Path(directory)
        try:
            path.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StoreIoError(f"cannot create {path}: {exc}") from exc
        try:
            _write_jsonl(
                path / "contents.jsonl",
                ({"id": c.id, "text": c.text, "created_at": c.created_at} for c in self.contents),
            )
            _write_jsonl(
                path / "questions.jsonl",
                (
                    {"id": q.id, "content_id": q.content_id, "text": q.text, "answerable": q.answerable}
                    for q in self.questions
                ),
            )
            _write_qbem(path / "embeddings.qbem.c", self.content_embeddings)
            _write_qbem(path / "embeddings.qbem.q", self.question_embeddings)
            _write_matrix(path / "matrix.jsonl", self.effective_matrix())
        except OSError as exc:
            raise StoreIoError(f"cannot write to {path}: {exc}") from exc

    @classmethod
    def load(cls, directory) -> "KnowledgeBase":
        from pathlib import Path

        path = Path(directory)
        required = [
            "contents.jsonl",
            "questions.jsonl",
            "embeddings.qbem.c",
            "embeddings.qbem.q",
            "matrix.jsonl",
        ]
        for name in required:
            if not (path / name).is_file():
                raise StoreIoError(f"missing {name} in {path}")

        contents = []
        for line_no, obj in _read_jsonl(path / "contents.jsonl"):
            try:
                contents.append(
                    Content(id=obj["id"], text=obj["text"], created_at=int(obj.get("created_at", 0)))
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"bad content record: {exc}", "contents.jsonl", line_no) from exc
        questions = []
        for line_no, obj in _read_jsonl(path / "questions.jsonl"):
            try:
                questions.append(
                    Question(
                        id=obj["id"],
                        content_id=obj["content_id"],
                        text=obj["text"],
                        answerable=obj.get("answerable", "unfiltered"),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"bad question record: {exc}", "questions.jsonl", line_no) from exc

        kb = cls(contents=contents, questions=questions)
        if len(set(c.id for c in contents)) != len(contents):
            raise FormatError("duplicate content ids", "contents.jsonl")
        if len(set(q.id for q in questions)) != len(questions):
            raise FormatError("duplicate question ids", "questions.jsonl")
        cidx = kb.content_index()
        for q in questions:
            if q.content_id not in cidx:
                raise FormatError(f"question {q.id} references unknown content {q.content_id}", "questions.jsonl")

        kb.content_embeddings = _read_qbem(path / "embeddings.qbem.c", [c.id for c in contents])
        kb.question_embeddings = _read_qbem(path / "embeddings.qbem.q", [q.id for q in questions])

        matrix = _read_matrix(path / "matrix.jsonl")
        if (matrix.m, matrix.n) != (len(contents), len(questions)):
            raise FormatError(
                f"matrix is {matrix.m}x{matrix.n} but store has "
                f"{len(contents)} contents and {len(questions)} questions",
                "matrix.jsonl",
            )
        if matrix.kind == "observed":
            if matrix != kb.observed_matrix():
                raise FormatError("observed matrix disagrees with question provenance", "matrix.jsonl")
            kb.matrix = None
        else:
            kb.matrix = matrix
        return kb


# -- file helpers -----------------------------------------------------------


def _write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def _read_jsonl(path):
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", path.name, line_no) from exc
            if not isinstance(obj, dict):
                raise FormatError("expected a JSON object", path.name, line_no)
            out.append((line_no, obj))
    return out


def _write_qbem(path, matrix: EmbeddingMatrix | None) -> None:
    if matrix is None:
        dim, count = 0, 0
        payload = b""
    else:
        dim, count = matrix.dim, matrix.count
        payload = np.ascontiguousarray(matrix.vectors.T, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_QBEM_MAGIC)
        fh.write(struct.pack("<B", _QBEM_VERSION))
        fh.write(struct.pack("<II", dim, count))
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def _read_qbem(path, ids) -> EmbeddingMatrix | None:
    data = path.read_bytes()
    if len(data) < 13:
        raise FormatError("truncated header", path.name)
    if data[:4] != _QBEM_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}", path.name)
    version = data[4]
    if version != _QBEM_VERSION:
        raise FormatError(f"unsupported version {version}", path.name)
    dim, count = struct.unpack_from("<II", data, 5)
    expected = 13 + 4 * dim * count + 4
    if len(data) != expected:
        raise FormatError(
            f"expected {expected} bytes for {count}x{dim} payload, found {len(data)}", path.name
        )
    payload = data[13:-4]
    (crc_stored,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc_stored:
        raise ChecksumMismatchError("payload CRC32 mismatch", path.name)
    if count == 0:
        return None
    if count != len(ids):
        raise FormatError(f"{count} embeddings for {len(ids)} items", path.name)
    rows = np.frombuffer(payload, dtype="<f4").reshape(count, dim)
    return EmbeddingMatrix(rows.T.astype(np.float64), tuple(ids))


def _write_matrix(path, matrix: AnswerabilityMatrix) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        header = {"kind": matrix.kind, "m": matrix.m, "n": matrix.n}
        if matrix.kind == "estimate":
            header["threshold"] = matrix.threshold
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        if matrix.kind == "estimate":
            rows, cols = np.nonzero(matrix.probs >= _SPARSE_PROB_FLOOR)
            for i, j in sorted(zip(rows.tolist(), cols.tolist())):
                fh.write(json.dumps({"i": i, "j": j, "p": float(matrix.probs[i, j])}) + "\n")
        else:
            for i, j in sorted(matrix.entries):
                fh.write(json.dumps({"i": i, "j": j}) + "\n")


def _read_matrix(path) -> AnswerabilityMatrix:
    records = _read_jsonl(path)
    if not records:
        raise FormatError("missing header line", path.name)
    line_no, header = records[0]
    try:
        kind = header["kind"]
        m, n = int(header["m"]), int(header["n"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad matrix header: {exc}", path.name, line_no) from exc
    if kind not in MATRIX_KINDS:
        raise FormatError(f"unknown matrix kind {kind!r}", path.name, line_no)
    try:
        if kind == "estimate":
            probs = np.zeros((m, n))
            for line_no, obj in records[1:]:
                probs[int(obj["i"]), int(obj["j"])] = float(obj["p"])
            return AnswerabilityMatrix.estimate(probs, float(header["threshold"]))
        entries = {(int(obj["i"]), int(obj["j"])) for _, obj in records[1:]}
        return AnswerabilityMatrix(kind, m, n, entries=entries)
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise FormatError(f"bad matrix entry: {exc}", path.name, line_no) from exc
