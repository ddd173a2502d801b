"""Seeded random document-tree generator for fuzz checks.

Generates Raw-free trees over normal-content tags only: elements with a
special content model (script, style, title, textarea) are excluded because
their children are not parsed as markup, and tag/attribute names are kept
lowercase so the comparison is exact under a case-folding parser.
"""

from __future__ import annotations

import random

from hdb.doctree import Element, Text

CONTENT_TAGS = [
    "div", "p", "span", "a", "ul", "ol", "li", "table", "tr", "td", "th",
    "h1", "h2", "h3", "b", "i", "em", "strong", "code", "pre", "form",
    "label", "section", "nav", "footer", "header", "main", "article",
    "aside", "small", "u", "dl", "dt", "dd", "blockquote",
]
VOID_TAGS = ["br", "hr", "img", "input", "meta", "link", "wbr", "col"]
ATTR_NAMES = [
    "id", "class", "href", "title", "name", "value", "type", "alt",
    "lang", "dir", "data-x", "data-hdb-enhance",
]

# Printable pool including the characters escaping must handle.
_CHARS = (
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"
    " \t\n&<>\"'/=;:.,!?()[]{}-_@#%^*+|~`"
    "äöüßéèñλπ漢字✓€"
)


def random_text(rng: random.Random, max_len: int = 24) -> str:
    return "".join(rng.choice(_CHARS) for _ in range(rng.randint(0, max_len)))


def random_tree(rng: random.Random, depth: int = 3) -> Element:
    tag = rng.choice(CONTENT_TAGS)
    names = rng.sample(ATTR_NAMES, rng.randint(0, 3))
    attrs = tuple((name, random_text(rng, 16)) for name in names)
    children: list = []
    for _ in range(rng.randint(0, 4)):
        pick = rng.random()
        if pick < 0.45 or depth <= 0:
            content = random_text(rng)
            if content:
                children.append(Text(content))
        elif pick < 0.55:
            children.append(Element(rng.choice(VOID_TAGS), ((rng.choice(ATTR_NAMES), random_text(rng, 8)),)))
        else:
            children.append(random_tree(rng, depth - 1))
    # Adjacent Text nodes would be merged by any parser; keep the generated
    # tree in normal form so equality is exact.
    squashed: list = []
    for child in children:
        if isinstance(child, Text) and squashed and isinstance(squashed[-1], Text):
            squashed[-1] = Text(squashed[-1].content + child.content)
        else:
            squashed.append(child)
    return Element(tag, attrs, tuple(squashed))
