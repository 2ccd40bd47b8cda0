# core/promptgen.py
from __future__ import annotations

import json
import logging
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

from .errors import ConfigError, DataError, ParseError, UnknownIdError
from .idgen import EntityRef, IdAssignment, TokenSeq
from .ingest import DatasetIndex, DatasetSplits

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

TASKS = ("sequential", "direct", "rating", "explanation", "review")
SEQUENTIAL_TASKS = ("sequential", "direct")
PLACEHOLDERS = ("user", "history", "item", "target", "rating", "review", "feature")
MAX_HISTORY = 20
# continuation token that closes a complete item ID
END_OF_ID = "</id>"


@dataclass(frozen=True)
class PromptTemplate:
    task: str
    input_template: str
    output_template: str


# One exemplar per task family; more can be added through a template file.
DEFAULT_TEMPLATES: Dict[str, Tuple[PromptTemplate, ...]] = {
    "sequential": (PromptTemplate(
        "sequential",
        "Considering {user} has interacted with items {history}. What is the next recommendation for the user?",
        "{target}",
    ),),
    "direct": (PromptTemplate(
        "direct",
        "What should we recommend for {user}?",
        "{target}",
    ),),
    "rating": (PromptTemplate(
        "rating",
        "Which star rating will {user} give to item {item}? (1 being the lowest and 5 being the highest).",
        "{target}",
    ),),
    "explanation": (PromptTemplate(
        "explanation",
        "According to the feature word {feature}, generate a {rating}-star explanation for {user} about {item}.",
        "{target}",
    ),),
    "review": (PromptTemplate(
        "review",
        "Write a short sentence to summarize the following product review from {user}: {review}",
        "{target}",
    ),),
}


def load_templates(path: PathLike) -> Dict[str, Tuple[PromptTemplate, ...]]:
    """
    Read "task<TAB>input template<TAB>output template" lines. Lines starting
    with '#' are comments. Tasks missing from the file keep their default.
    """
    pools: Dict[str, List[PromptTemplate]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"expected 3 tab-separated fields, got {len(parts)}", line_no)
            task, inp, out = parts
            if task not in TASKS:
                raise ParseError(f"unknown task '{task}'", line_no)
            for text in (inp, out):
                try:
                    names = {name for _, name, _, _ in string.Formatter().parse(text) if name}
                except ValueError as e:
                    raise ParseError(f"malformed template ({e})", line_no) from None
                unknown = names - set(PLACEHOLDERS)
                if unknown:
                    raise ParseError(f"unknown placeholders {sorted(unknown)}", line_no)
            pools.setdefault(task, []).append(PromptTemplate(task, inp, out))
    templates = dict(DEFAULT_TEMPLATES)
    templates.update({task: tuple(pool) for task, pool in pools.items()})
    return templates


@dataclass(frozen=True)
class PromptExample:
    task: str
    input_text: str
    output_text: str
    user: int
    items: Tuple[int, ...] = ()

    def to_json(self, split: str) -> str:
        return json.dumps(
            {"task": self.task, "input": self.input_text, "output": self.output_text, "split": split},
            ensure_ascii=False,
            sort_keys=True,
        )


def _fill(template: str, values: Mapping[str, str]) -> str:
    try:
        return template.format_map(values)
    except (KeyError, IndexError, ValueError) as e:
        raise ConfigError(f"Bad prompt template {template!r}: {e}") from None


def render_example(
    task: str,
    assignment: IdAssignment,
    user: int,
    history: Sequence[int] = (),
    target: Union[int, str, None] = None,
    *,
    item: Optional[int] = None,
    rating: Optional[int] = None,
    review: str = "",
    feature: str = "",
    templates: Mapping[str, Sequence[PromptTemplate]] = DEFAULT_TEMPLATES,
    variant: int = 0,
    max_history: int = MAX_HISTORY,
) -> PromptExample:
    """
    Instantiate a task template. For sequential/direct `target` is an item
    index; for rating it is the star value; for explanation and review it
    is the expected text.
    """
    if task not in TASKS:
        raise ConfigError(f"Unknown task '{task}'; expected one of {', '.join(TASKS)}.")
    pool = templates.get(task) or DEFAULT_TEMPLATES[task]
    template = pool[variant % len(pool)]

    history = list(history)[-max_history:] if max_history > 0 else []
    if task in SEQUENTIAL_TASKS:
        if target is None or isinstance(target, str):
            raise UnknownIdError(f"Task '{task}' needs a target item index.")
        target_text = assignment.surface("item", int(target))
        items = tuple(history) + (int(target),)
    else:
        if target is None:
            raise DataError(f"Task '{task}' needs a target value.")
        target_text = str(target)
        items = (item,) if item is not None else ()

    values = {
        "user": assignment.surface("user", user),
        "history": ", ".join(assignment.surface("item", i) for i in history),
        "item": assignment.surface("item", item) if item is not None else "",
        "target": target_text,
        "rating": str(rating) if rating is not None else "",
        "review": review,
        "feature": feature,
    }
    return PromptExample(
        task=task,
        input_text=_fill(template.input_template, values),
        output_text=_fill(template.output_template, values),
        user=user,
        items=items,
    )


# ========================
# Corpus emission
# ========================

def _examples_for(
    task: str,
    index: DatasetIndex,
    assignment: IdAssignment,
    split_of: Dict[int, str],
    templates: Mapping[str, Sequence[PromptTemplate]],
    max_history: int,
) -> Iterator[Tuple[PromptExample, str]]:
    row = 0
    for u, seq in enumerate(index.user_sequences):
        ids = seq.tolist()
        for pos, k in enumerate(ids):
            if k not in split_of:
                continue
            common = dict(templates=templates, variant=row, max_history=max_history)
            if task == "sequential":
                if pos == 0:
                    continue
                history = [int(index.items[h]) for h in ids[:pos]]
                ex = render_example(task, assignment, u, history, int(index.items[k]), **common)
            elif task == "direct":
                ex = render_example(task, assignment, u, (), int(index.items[k]), **common)
            elif task == "rating":
                ex = render_example(
                    task, assignment, u, (), int(index.ratings[k]), item=int(index.items[k]), **common
                )
            elif task == "explanation":
                text = index.text(k, "explanation")
                if not text:
                    continue
                ex = render_example(
                    task, assignment, u, (), text,
                    item=int(index.items[k]), rating=int(index.ratings[k]),
                    feature=index.text(k, "feature_word") or "", **common,
                )
            else:
                review, summary = index.text(k, "review_text"), index.text(k, "summary")
                if not review or not summary:
                    continue
                ex = render_example(task, assignment, u, (), summary, item=int(index.items[k]), review=review, **common)
            row += 1
            yield ex, split_of[k]


def emit_corpus(
    index: DatasetIndex,
    splits: Mapping[str, Optional[DatasetSplits]],
    assignment: IdAssignment,
    tasks: Iterable[str],
    sink: PathLike,
    templates: Mapping[str, Sequence[PromptTemplate]] = DEFAULT_TEMPLATES,
    max_history: int = MAX_HISTORY,
) -> Dict[str, int]:
    """
    Write one JSON object per line ({task, input, output, split}). Sequential
    and direct tasks follow the "leave_one_out" split, the others "random".
    Order: task, then user index, then position in the user's sequence.
    """
    wanted = set(tasks)
    unknown = wanted - set(TASKS)
    if unknown:
        raise ConfigError(f"Unknown tasks: {', '.join(sorted(unknown))}.")

    counts: Dict[str, int] = {}
    with open(sink, "w", encoding="utf-8") as fh:
        for task in TASKS:
            if task not in wanted:
                continue
            key = "leave_one_out" if task in SEQUENTIAL_TASKS else "random"
            split = splits.get(key)
            if split is None:
                logger.warning("No %s split available; task '%s' skipped", key, task)
                counts[task] = 0
                continue
            n = 0
            for ex, name in _examples_for(task, index, assignment, split.split_of(), templates, max_history):
                fh.write(ex.to_json(name))
                fh.write("\n")
                n += 1
            counts[task] = n
            logger.info("Task %s: %d examples", task, n)
    return counts


# ========================
# Constrained decoding trie
# ========================

@dataclass
class TrieNode:
    children: Dict[str, "TrieNode"] = field(default_factory=dict)
    entity: Optional[EntityRef] = None


@dataclass
class IdTrie:
    root: TrieNode
    size: int = 0

    def insert(self, tokens: TokenSeq, entity: EntityRef) -> None:
        node = self.root
        for tok in tokens:
            node = node.children.setdefault(tok, TrieNode())
        if node.entity is not None:
            raise DataError(f"ID {' '.join(tokens)} inserted twice.")
        node.entity = entity
        self.size += 1

    def find(self, prefix: Sequence[str]) -> Optional[TrieNode]:
        node = self.root
        for tok in prefix:
            node = node.children.get(tok)
            if node is None:
                return None
        return node

    def paths(self) -> List[TokenSeq]:
        out: List[TokenSeq] = []
        stack: List[Tuple[TrieNode, TokenSeq]] = [(self.root, ())]
        while stack:
            node, path = stack.pop()
            if node.entity is not None:
                out.append(path)
            for tok in sorted(node.children, reverse=True):
                stack.append((node.children[tok], path + (tok,)))
        return out

    def to_dict(self, item_names: Optional[Sequence[str]] = None) -> Dict[str, Any]:
        """
        Nested {"next": {token: node}} maps; a node that ends an ID also
        carries "item" (its key, or its index without names). An ID may end
        at an inner node when it is a prefix of a longer one (RID, SID).
        """
        def encode(node: TrieNode) -> Dict[str, Any]:
            out: Dict[str, Any] = {}
            if node.entity is not None:
                idx = node.entity.index
                out["item"] = item_names[idx] if item_names is not None else idx
            if node.children:
                out["next"] = {tok: encode(child) for tok, child in sorted(node.children.items())}
            return out
        return encode(self.root)


def build_id_trie(assignment: IdAssignment) -> IdTrie:
    """Prefix tree over the item ID token sequences."""
    trie = IdTrie(TrieNode())
    for i, seq in enumerate(assignment.item_ids):
        trie.insert(seq, EntityRef("item", i))
    return trie


def valid_continuations(trie: IdTrie, prefix: Sequence[str]) -> frozenset:
    """
    Tokens that extend `prefix` along some valid item ID, plus END_OF_ID when
    `prefix` is itself a complete ID. Empty when the prefix is invalid.
    """
    node = trie.find(prefix)
    if node is None:
        return frozenset()
    if node.entity is not None:
        return frozenset(node.children) | {END_OF_ID}
    return frozenset(node.children)
