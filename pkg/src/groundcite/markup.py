"""Sentence segmentation, [n]-citation markup, and prompt rendering.

This module owns the textual surface of the pipeline: splitting model
output into sentences, parsing and rendering the "Answer:" /
"Sentences Not Supported by Citations:" format, and instantiating the
two prompt templates (zero-shot answering and grounded answering with
citations). The templates are golden files under ``templates/`` and
rendering is byte-deterministic.

Parsing is total: any input string produces a MarkedResponse, with
problems reported as warning strings. Warnings are prefixed by kind:
``structure:`` (missing Answer header, degenerate shape), ``citation:``
(out-of-range index), ``unsupported:`` (unsupported statement not
matching an answer sentence).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources

from .corpus import Passage

ANSWER_HEADER = "Answer:"
UNSUPPORTED_HEADER = "Sentences Not Supported by Citations:"
NO_UNSUPPORTED_BODY = "None."

STRUCTURE_WARNING_PREFIX = "structure:"

# Words that end with a period without ending a sentence. Lowercased,
# trailing period stripped; internal periods kept ("u.s").
ABBREVIATIONS = frozenset(
    {
        "dr", "mr", "mrs", "ms", "prof", "rev", "gen", "sen", "rep",
        "st", "jr", "sr", "etc", "vs", "cf", "al", "approx",
        "e.g", "i.e", "u.s", "u.k", "u.n",
        "inc", "ltd", "co", "corp", "dept", "univ",
        "fig", "eq", "vol", "pp", "ca", "mt", "ft",
        "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec",
    }
)

_TERMINAL = ".?!"
_CITATION_MARKER_RE = re.compile(r"\[(\d+)\]")
_TRAILING_CITATIONS_RE = re.compile(r"([.?!])\s*((?:\[\d+\]\s*)+)")
_ANSWER_HEADER_RE = re.compile(r"^[ \t]*Answer:[ \t]*", re.IGNORECASE | re.MULTILINE)
_UNSUPPORTED_HEADER_RE = re.compile(
    r"^[ \t]*Sentences Not Supported by Citations:[ \t]*", re.IGNORECASE | re.MULTILINE
)
_PARAGRAPH_RE = re.compile(r"\n\s*\n")


@dataclass(frozen=True)
class SentenceSpan:
    text: str
    index: int


@dataclass
class MarkedSentence:
    """One answer sentence with its 1-based working-set citation indices."""

    text: str
    citations: list[int] = field(default_factory=list)


@dataclass
class MarkedResponse:
    sentences: list[MarkedSentence]
    unsupported_texts: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    passage_order: tuple[str, ...]


def _load_template(name: str) -> str:
    data = resources.files("groundcite.templates").joinpath(name).read_text(encoding="utf-8")
    return data.rstrip("\n")


def segment(text: str) -> list[SentenceSpan]:
    """Split text into sentence spans.

    A boundary is a terminal punctuation mark (. ? !) followed by
    whitespace or end of text, unless the preceding word is a known
    abbreviation or a single-letter initial. Spans never cross a blank
    line; joining the spans with single spaces reproduces the
    whitespace-collapsed input.
    """
    spans: list[SentenceSpan] = []
    if not text or not text.strip():
        return spans
    for paragraph in _PARAGRAPH_RE.split(text):
        flat = " ".join(paragraph.split())
        if not flat:
            continue
        start = 0
        for i, ch in enumerate(flat):
            if ch not in _TERMINAL:
                continue
            at_end = i == len(flat) - 1
            if not at_end and flat[i + 1] != " ":
                continue
            if ch == "." and _is_abbreviation(flat, i):
                continue
            piece = flat[start : i + 1].strip()
            if piece:
                spans.append(SentenceSpan(text=piece, index=len(spans)))
            start = i + 1
        tail = flat[start:].strip()
        if tail:
            spans.append(SentenceSpan(text=tail, index=len(spans)))
    return spans


def _is_abbreviation(flat: str, dot_pos: int) -> bool:
    word_start = flat.rfind(" ", 0, dot_pos) + 1
    word = flat[word_start:dot_pos].rstrip(".")
    if not word:
        return False
    if len(word) == 1 and word.isalpha() and word.isupper():
        return True  # capitalized initial, as in "J. Smith"
    return word.lower() in ABBREVIATIONS


def parse_marked_response(raw: str, working_set_size: int) -> tuple[MarkedResponse, list[str]]:
    """Parse a model output in the Answer / unsupported-sentences format.

    Never raises on malformed input. Citation indices outside
    [1, working_set_size] are dropped with a warning; markers appearing
    after sentence-final punctuation are normalized onto the preceding
    sentence; an unsupported section body of "None." means no
    unsupported statements.
    """
    if working_set_size < 0:
        raise ValueError("working_set_size must be >= 0")
    warnings: list[str] = []

    unsup_match = _UNSUPPORTED_HEADER_RE.search(raw)
    if unsup_match:
        head = raw[: unsup_match.start()]
        unsupported_texts = _parse_unsupported_section(raw[unsup_match.end() :])
    else:
        head = raw
        unsupported_texts = []

    answer_match = _ANSWER_HEADER_RE.search(head)
    if answer_match:
        body = head[answer_match.end() :]
    else:
        body = head
        warnings.append(f"{STRUCTURE_WARNING_PREFIX} no 'Answer:' header found")

    sentences = _parse_body(body, working_set_size, warnings)

    texts = [s.text for s in sentences]
    for unsup in unsupported_texts:
        matches = texts.count(unsup)
        if matches == 0:
            warnings.append(f"unsupported: statement not found among answer sentences: {unsup!r}")
        elif matches > 1:
            warnings.append(f"unsupported: statement matches {matches} answer sentences: {unsup!r}")

    return MarkedResponse(sentences=sentences, unsupported_texts=unsupported_texts), warnings


def _parse_unsupported_section(section: str) -> list[str]:
    lines = [ln.strip() for ln in section.splitlines()]
    lines = [ln for ln in lines if ln]
    if len(lines) == 1 and lines[0].rstrip(".").lower() == "none":
        return []
    return lines


def _parse_body(body: str, working_set_size: int, warnings: list[str]) -> list[MarkedSentence]:
    # Pull citation markers that trail terminal punctuation back before
    # it, so they land inside the sentence they follow.
    canonical = _TRAILING_CITATIONS_RE.sub(
        lambda m: " " + "".join(re.findall(r"\[\d+\]", m.group(2))) + m.group(1) + " ", body
    )
    sentences: list[MarkedSentence] = []
    for span in segment(canonical):
        indices = [int(n) for n in _CITATION_MARKER_RE.findall(span.text)]
        text = " ".join(re.sub(r"\s*\[\d+\]", "", span.text).split())
        if not text:
            warnings.append(f"{STRUCTURE_WARNING_PREFIX} citation markers without sentence text dropped")
            continue
        valid: list[int] = []
        for idx in indices:
            if 1 <= idx <= working_set_size:
                valid.append(idx)
            else:
                warnings.append(
                    f"citation: index {idx} out of range (working set size {working_set_size})"
                )
        sentences.append(MarkedSentence(text=text, citations=sorted(set(valid))))
    return sentences


def has_structural_warning(warnings: list[str]) -> bool:
    return any(w.startswith(STRUCTURE_WARNING_PREFIX) for w in warnings)


def render_marked_response(marked: MarkedResponse) -> str:
    """Render a MarkedResponse to the Answer / unsupported-sentences format.

    Citations are placed before sentence-final punctuation (or appended
    when the sentence has none). Round trip: parsing the rendered text
    with the same working-set size reproduces the response.
    """
    rendered_sentences = []
    for sentence in marked.sentences:
        rendered_sentences.append(_render_sentence(sentence))
    body = " ".join(rendered_sentences)
    if marked.unsupported_texts:
        unsupported = "\n".join(marked.unsupported_texts)
    else:
        unsupported = NO_UNSUPPORTED_BODY
    return f"{ANSWER_HEADER}\n{body}\n\n{UNSUPPORTED_HEADER}\n{unsupported}"


def _render_sentence(sentence: MarkedSentence) -> str:
    text = sentence.text
    if not sentence.citations:
        return text
    markers = "".join(f"[{i}]" for i in sentence.citations)
    if text and text[-1] in _TERMINAL:
        return f"{text[:-1].rstrip()} {markers}{text[-1]}"
    return f"{text} {markers}"


def _render_search_results(passages: list[Passage]) -> str:
    return "\n\n".join(f"[{n}] {p.title}\n{p.text}" for n, p in enumerate(passages, start=1))


def _instantiate(template: str, question: str, passages: list[Passage]) -> str:
    text = template.replace("{search_results}", _render_search_results(passages))
    return text.replace("{question}", question)


def render_zero_shot_prompt(query: str, passages: list[Passage]) -> RenderedPrompt:
    """Instantiate the zero-shot answering prompt for sampling responses."""
    if not query or not query.strip():
        raise ValueError("query must be non-empty")
    if not passages:
        raise ValueError("passages must be non-empty")
    text = _instantiate(_load_template("zero_shot.txt"), query, passages)
    return RenderedPrompt(text=text, passage_order=tuple(p.id for p in passages))


def render_grounded_prompt(query: str, passages: list[Passage]) -> RenderedPrompt:
    """Instantiate the grounded answering prompt (citations requested)."""
    if not query or not query.strip():
        raise ValueError("query must be non-empty")
    if not passages:
        raise ValueError("passages must be non-empty")
    text = _instantiate(_load_template("grounded.txt"), query, passages)
    return RenderedPrompt(text=text, passage_order=tuple(p.id for p in passages))


def render_training_output(response, working_set: list[str]) -> str:
    """Render a grounded response as a training target string.

    ``response`` is a grounding.GroundedResponse; citations are turned
    into 1-based indices into ``working_set``. Citing a passage outside
    the working set is an error.
    """
    order = {pid: n for n, pid in enumerate(working_set, start=1)}
    sentences: list[MarkedSentence] = []
    for i, text in enumerate(response.statements):
        indices = []
        for pid in response.citations[i]:
            if pid not in order:
                raise ValueError(f"cited passage {pid!r} is not in the working set")
            indices.append(order[pid])
        sentences.append(MarkedSentence(text=text, citations=sorted(set(indices))))
    unsupported = [response.statements[i] for i in sorted(response.unsupported)]
    return render_marked_response(MarkedResponse(sentences=sentences, unsupported_texts=unsupported))
