"""bAbI en-10k ingestion: story-delimited samples over all 20 tasks jointly.

Preprocessing: lowercase, strip numeric tokens, split '?' and '.' into
their own tokens, and replace each answer word with the answer marker '-'
at the position where the model must produce it (comma-separated answers
become one marker per word). A story starts whenever the running line id
resets to 1; training stories longer than ``max_words`` tokens are
dropped. The standard corpus yields 62,493 train / 6,267 test stories and
a vocabulary of 156 words plus the four symbols.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .objectives import PhaseMask
from .tasks import EpisodeBatch

PAD, QMARK, PERIOD, MARKER = "[PAD]", "?", ".", "-"
SYMBOLS = (PAD, QMARK, PERIOD, MARKER)

EXPECTED_WORDS = 156
EXPECTED_TRAIN = 62_493
EXPECTED_TEST = 6_267


class BabiFormatError(ValueError):
    """The directory does not look like (or count like) standard en-10k."""


@dataclass
class BabiSample:
    tokens: np.ndarray    # [T] int32 ids, answers already replaced by '-'
    targets: np.ndarray   # [T] int32 answer ids at marker positions, else -1


@dataclass
class BabiCorpus:
    itos: list
    stoi: dict
    train: list
    test: list

    @property
    def vocab_size(self):
        return len(self.itos)


def _tokenize(text):
    text = text.lower().replace("?", " ? ").replace(".", " . ")
    toks = [t for t in re.split(r"[\s,]+", text) if t]
    return [t for t in toks if not t.isdigit()]


def _parse_file(path):
    """Token/answer word sequences, one pair of lists per story."""
    stories = []
    cur_toks, cur_answers = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            raw = raw.strip()
            if not raw:
                continue
            head, _, rest = raw.partition(" ")
            line_id = int(head)
            if line_id == 1 and cur_toks:
                stories.append((cur_toks, cur_answers))
                cur_toks, cur_answers = [], []
            if "\t" in rest:
                question, answer = rest.split("\t")[:2]
                cur_toks.extend(_tokenize(question))
                for word in _tokenize(answer):
                    cur_toks.append(MARKER)
                    cur_answers.append(word)
            else:
                cur_toks.extend(_tokenize(rest))
    if cur_toks:
        stories.append((cur_toks, cur_answers))
    return stories


def _data_dir(path):
    path = Path(path)
    for candidate in (path, path / "en-10k", path / "tasks_1-20_v1-2" / "en-10k"):
        if list(candidate.glob("qa*_train.txt")):
            return candidate
    raise BabiFormatError(f"no qa*_train.txt files under {path}")


def _task_number(p):
    m = re.match(r"qa(\d+)_", p.name)
    if not m:
        raise BabiFormatError(f"unrecognized file name {p.name}")
    return int(m.group(1))


def load_babi(path, strict=True, max_words=800):
    """Load the joint 20-task corpus from an en-10k directory layout.

    strict verifies the standard-corpus counts (train/test stories,
    vocabulary size, length bound) and raises BabiFormatError on any
    mismatch rather than silently accepting a deviating dataset.
    """
    root = _data_dir(path)
    train_files = sorted(root.glob("qa*_train.txt"), key=_task_number)
    test_files = sorted(root.glob("qa*_test.txt"), key=_task_number)
    if strict and (len(train_files) != 20 or len(test_files) != 20):
        raise BabiFormatError(
            f"expected 20 train and 20 test files, found {len(train_files)}/{len(test_files)}")

    raw_train, raw_test = [], []
    for f in train_files:
        raw_train.extend(_parse_file(f))
    for f in test_files:
        raw_test.extend(_parse_file(f))
    raw_train = [(t, a) for t, a in raw_train if len(t) <= max_words]

    words = set()
    for toks, answers in raw_train + raw_test:
        words.update(toks)
        words.update(answers)
    words.discard(MARKER)
    words -= set(SYMBOLS)
    itos = list(SYMBOLS) + sorted(words)
    stoi = {w: i for i, w in enumerate(itos)}

    def encode(stories):
        out = []
        for toks, answers in stories:
            ids = np.array([stoi[t] for t in toks], dtype=np.int32)
            tgt = np.full(len(toks), -1, dtype=np.int32)
            marker_pos = np.nonzero(ids == stoi[MARKER])[0]
            if len(marker_pos) != len(answers):
                raise BabiFormatError("marker/answer count mismatch in a story")
            for pos, word in zip(marker_pos, answers):
                tgt[pos] = stoi[word]
            out.append(BabiSample(tokens=ids, targets=tgt))
        return out

    corpus = BabiCorpus(itos=itos, stoi=stoi,
                        train=encode(raw_train), test=encode(raw_test))

    if strict:
        problems = []
        if len(words) != EXPECTED_WORDS:
            problems.append(f"vocabulary has {len(words)} words, expected {EXPECTED_WORDS}")
        if len(corpus.train) != EXPECTED_TRAIN:
            problems.append(f"{len(corpus.train)} train stories, expected {EXPECTED_TRAIN}")
        if len(corpus.test) != EXPECTED_TEST:
            problems.append(f"{len(corpus.test)} test stories, expected {EXPECTED_TEST}")
        if any(len(s.tokens) > max_words for s in corpus.train):
            problems.append(f"a training story exceeds {max_words} words")
        if problems:
            raise BabiFormatError("; ".join(problems))
    return corpus


def babi_batch(corpus, rng, batch, split="train"):
    """Sample stories into an EpisodeBatch of token ids.

    Story steps are every non-marker position; answer steps the marker
    positions. There is no padding inside an episode, so the refresh loss
    never has pad tokens to skip.
    """
    pool = corpus.train if split == "train" else corpus.test
    idx = rng.integers(0, len(pool), batch)
    return _assemble(corpus, [pool[i] for i in idx])


def _assemble(corpus, samples):
    t_max = max(len(s.tokens) for s in samples)
    batch = len(samples)
    inputs = np.zeros((batch, t_max), dtype=np.int32)
    targets = np.full((batch, t_max), -1, dtype=np.int32)
    masks = []
    for b, s in enumerate(samples):
        n = len(s.tokens)
        inputs[b, :n] = s.tokens
        targets[b, :n] = s.targets
        answer = (s.targets >= 0).astype(np.uint8)
        masks.append(PhaseMask(story=1 - answer, answer=answer))
    return EpisodeBatch(inputs, targets, masks, meta={"task": "babi"})


def episodes_from(corpus, indices, split="test"):
    pool = corpus.train if split == "train" else corpus.test
    return _assemble(corpus, [pool[i] for i in indices])
