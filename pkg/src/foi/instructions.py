"""Composite edit instructions: sub-instruction spans, keywords, intensities.

A composite instruction is one piece of edit text made up of one or more
sub-instructions.  Each sub carries a keyword used to localize its region
of interest and an intensity scale (alpha) applied during attention
modulation.  Splitting the text into subs and choosing keywords is the
caller's job (CLI flags, config, or request fields); ``split_instruction``
is a convenience heuristic only.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Protocol, Sequence

import numpy as np

from .errors import KeywordNotFound, OverlappingSubs, SpanUnresolvable, SubNotFound

Span = tuple[int, int]


def _overlap(a: Span, b: Span) -> int:
    return max(0, min(a[1], b[1]) - max(a[0], b[0]))


@dataclass(frozen=True)
class TokenizedText:
    """Fixed-length token ids plus per-token [start, end) character offsets.

    Padding positions carry empty offsets (start == end), so they never
    intersect a character span.
    """

    ids: tuple[int, ...]
    offsets: tuple[Span, ...]

    def __post_init__(self):
        if len(self.ids) != len(self.offsets):
            raise ValueError("ids and offsets must have equal length")

    def __len__(self) -> int:
        return len(self.ids)


class Tokenizer(Protocol):
    def tokenize(self, text: str) -> TokenizedText: ...


@dataclass(frozen=True)
class SubInstruction:
    """One edit directive inside a composite instruction."""

    text: str
    char_span: Span
    keyword: str
    keyword_char_span: Span
    alpha: float = 1.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")


@dataclass(frozen=True)
class Instruction:
    """A composite instruction plus, once resolved, its token-level spans.

    ``token_spans[i]`` is the [start, end) token-index range of sub ``i``;
    ``keyword_token_indices[i]`` are the indices of its keyword tokens.
    Both are empty until :func:`resolve_token_spans` has run.
    """

    composite_text: str
    subs: tuple[SubInstruction, ...] = ()
    token_spans: tuple[Span, ...] = ()
    keyword_token_indices: tuple[tuple[int, ...], ...] = ()
    token_count: int = 0

    @property
    def resolved(self) -> bool:
        return self.token_count > 0 and len(self.token_spans) == len(self.subs)


def parse_edit_request(
    composite_text: str,
    sub_specs: Sequence[tuple[str, str, float]],
) -> Instruction:
    """Locate each sub-instruction and its keyword inside the composite text.

    Sub texts are matched left to right: each must occur verbatim at or
    after the end of the previous one, which keeps character spans
    pairwise disjoint.  Token fields stay empty; run
    :func:`resolve_token_spans` against a backend tokenizer to fill them.

    Raises:
        SubNotFound: a sub text does not occur in the composite text.
        OverlappingSubs: a sub text occurs only before the end of an
            earlier sub, so spans cannot be placed disjointly in order.
        KeywordNotFound: a keyword does not occur inside its sub text.
    """
    subs: list[SubInstruction] = []
    cursor = 0
    for text, keyword, alpha in sub_specs:
        if not text:
            raise SubNotFound("sub-instruction text must be nonempty")
        start = composite_text.find(text, cursor)
        if start < 0:
            if composite_text.find(text) >= 0:
                raise OverlappingSubs(
                    f"sub {text!r} only occurs overlapping an earlier sub"
                )
            raise SubNotFound(f"sub text {text!r} not found in instruction")
        end = start + len(text)
        at = text.find(keyword) if keyword else -1
        if at < 0:
            raise KeywordNotFound(f"keyword {keyword!r} not found in sub {text!r}")
        kw_span = (start + at, start + at + len(keyword))
        subs.append(SubInstruction(text, (start, end), keyword, kw_span, float(alpha)))
        cursor = end
    return Instruction(composite_text, tuple(subs))


def resolve_token_spans(instruction: Instruction, tokenizer: Tokenizer) -> Instruction:
    """Assign token indices to every sub-instruction and keyword.

    A token belongs to a sub when its character range overlaps the sub's
    span.  A token straddling two subs goes to the one with the larger
    character overlap (ties to the earlier sub), so spans stay disjoint.
    Keyword tokens are the sub's tokens overlapping the keyword span.

    Raises:
        SpanUnresolvable: a sub or keyword maps to zero tokens, e.g.
            because it fell past the tokenizer's fixed length.
    """
    tokenized = tokenizer.tokenize(instruction.composite_text)
    n = len(tokenized)

    owners: dict[int, int] = {}
    for j, offsets in enumerate(tokenized.offsets):
        best, best_overlap = -1, 0
        for i, sub in enumerate(instruction.subs):
            shared = _overlap(offsets, sub.char_span)
            if shared > best_overlap:
                best, best_overlap = i, shared
        if best >= 0:
            owners[j] = best

    token_spans: list[Span] = []
    keyword_indices: list[tuple[int, ...]] = []
    for i, sub in enumerate(instruction.subs):
        mine = sorted(j for j, owner in owners.items() if owner == i)
        if not mine:
            raise SpanUnresolvable(f"sub {sub.text!r} maps to no tokens")
        if mine[-1] - mine[0] + 1 != len(mine):
            raise SpanUnresolvable(
                f"sub {sub.text!r} maps to a non-contiguous token range"
            )
        kw = tuple(
            j for j in mine if _overlap(tokenized.offsets[j], sub.keyword_char_span) > 0
        )
        if not kw:
            raise SpanUnresolvable(
                f"keyword {sub.keyword!r} of sub {sub.text!r} maps to no tokens"
            )
        token_spans.append((mine[0], mine[-1] + 1))
        keyword_indices.append(kw)

    return replace(
        instruction,
        token_spans=tuple(token_spans),
        keyword_token_indices=tuple(keyword_indices),
        token_count=n,
    )


def build_alpha_vector(instruction: Instruction) -> np.ndarray:
    """Per-token intensity vector: each sub's alpha over its token span, zero elsewhere.

    Structural tokens (sequence markers, padding, connectives) sit outside
    every span and get zero, which leaves their attention untouched by the
    in-mask enhancement.
    """
    if not instruction.resolved:
        raise SpanUnresolvable("token spans are not resolved")
    values = np.zeros(instruction.token_count, dtype=float)
    for sub, (start, end) in zip(instruction.subs, instruction.token_spans):
        values[start:end] = sub.alpha
    return values


def split_instruction(composite_text: str) -> list[tuple[str, str, float]]:
    """Heuristic splitter: break on '.'/';' and take the last alphabetic word as keyword.

    Convenience only; edits that need precise grounding should pass
    explicit sub specs.  Pieces without an alphabetic word are dropped.
    """
    specs: list[tuple[str, str, float]] = []
    for match in re.finditer(r"[^.;]+[.;]?", composite_text):
        piece = match.group().strip()
        words = re.findall(r"[A-Za-z]+", piece)
        if piece and words:
            specs.append((piece, words[-1], 1.0))
    return specs
