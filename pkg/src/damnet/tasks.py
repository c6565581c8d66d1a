"""Seedable episode generators for the synthetic benchmark tasks.

Every generator is a pure function of (rng state, sizes): identical seeds
give bit-identical batches. Each task also ships an oracle that re-derives
the targets through an independent code path, plus ``self_check`` which
generates and audits many episodes at once.

Episode encodings (flag channels are never shared with data channels):

copy          W data channels + 2 flag channels. Steps: L_i data steps,
              one answer-flag step, L_i answer steps. The first flag
              channel is reserved (used by the recall task below).
assoc_recall  items of n_items vectors, each item preceded by an
              input-flag step; then answer-flag, query item, answer-flag,
              and n_items answer steps expecting the successor item.
repr_recall   8 stored vectors of W bits; each later cue step shows one
              vector with half its 2N segments zeroed and the target is
              the zeroed half, ascending, W/2 bits wide.
nth_farthest  8 steps of [vector(16); id one-hot(8); n one-hot(8); query
              one-hot(8)], then one zero-input answer step classifying
              which vector is n-th farthest from the query vector.
convex_hull   points as [x, y, flag]; after the flag step, one answer
              step per hull vertex, one-hot over 20 input positions, in
              counterclockwise order from the lowest-y (then lowest-x)
              point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .objectives import PhaseMask


@dataclass
class EpisodeBatch:
    """A batch of episodes padded to the longest sequence.

    inputs: [B, T, d_i] float64 (token-id tasks use [B, T] int32 instead);
    targets: [B, T, d_o] float64 (or [B, T] int32 class ids, -1 where
    undefined); masks: one PhaseMask per element, possibly shorter than T
    (padding steps are simply never visited); meta: task name, seed and
    size annotations, plus generator-private audit data under "aux".
    """
    inputs: np.ndarray
    targets: np.ndarray
    masks: list
    meta: dict = field(default_factory=dict)

    @property
    def batch_size(self):
        return self.inputs.shape[0]


@dataclass
class TaskSpec:
    """Loss kinds, head layout, and default hyperparameters for one task."""
    name: str
    d_i: int
    d_o: int
    task_kind: str           # loss over answer steps
    mr_kind: str             # loss for refreshed story inputs
    recon: str               # 'reuse' task head or dedicated 'linear' head
    metric: str              # 'bits' | 'argmax' | 'wer'
    mlp: tuple | None = None
    vocab: int | None = None
    defaults: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# copy

def gen_copy(rng, batch, W=8, li_lo=8, li_hi=32):
    """Binary sequence reproduction; one episode length per batch."""
    li = int(rng.integers(li_lo, li_hi + 1))
    d = W + 2
    T = 2 * li + 1
    bits = rng.integers(0, 2, (batch, li, W)).astype(np.float64)
    inputs = np.zeros((batch, T, d))
    targets = np.zeros((batch, T, d))
    inputs[:, :li, :W] = bits
    inputs[:, li, W + 1] = 1.0          # answer flag on its own step
    targets[:, li + 1:, :W] = bits
    story = np.zeros(T, dtype=np.uint8)
    story[:li + 1] = 1
    answer = np.zeros(T, dtype=np.uint8)
    answer[li + 1:] = 1
    masks = [PhaseMask(story=story.copy(), answer=answer.copy()) for _ in range(batch)]
    return EpisodeBatch(inputs, targets, masks,
                        meta={"task": "copy", "W": W, "li": li})


def _audit_copy(ep, b):
    W = ep.meta["W"]
    li = ep.meta["li"]
    x, y = ep.inputs[b], ep.targets[b]
    m = ep.masks[b]
    T = m.T
    assert T == 2 * li + 1
    flag_col = x[:, W + 1]
    assert flag_col.sum() == 1.0 and flag_col[li] == 1.0, "answer flag not one-hot"
    assert not x[:, W].any(), "input-flag channel must stay clear on copy"
    assert not x[li, :W].any(), "flag step may not carry data"
    assert not x[li + 1:].any(), "answer steps have no input"
    assert np.array_equal(y[li + 1:, :W], x[:li, :W]), "answer must echo the story"
    assert not y[:li + 1].any(), "story steps have zero targets"
    assert np.array_equal(np.nonzero(m.answer)[0], np.arange(li + 1, T))
    assert np.array_equal(np.nonzero(m.story)[0], np.arange(0, li + 1))


# ---------------------------------------------------------------------------
# associative recall

def _distinct_items(rng, count, n_items, W):
    while True:
        items = rng.integers(0, 2, (count, n_items, W))
        flat = {tuple(v.reshape(-1)) for v in items}
        if len(flat) == count:
            return items.astype(np.float64)


def gen_assoc_recall(rng, batch, W=8, n_items=3, li_lo=2, li_hi=8):
    """Recall the item that followed the queried item."""
    li = int(rng.integers(li_lo, li_hi + 1))
    d = W + 2
    T = li * (n_items + 1) + 2 * n_items + 2
    inputs = np.zeros((batch, T, d))
    targets = np.zeros((batch, T, d))
    queries = np.empty(batch, dtype=np.int64)
    for b in range(batch):
        items = _distinct_items(rng, li, n_items, W)
        q = int(rng.integers(0, li - 1))
        queries[b] = q
        step = 0
        for j in range(li):
            inputs[b, step, W] = 1.0                     # item delimiter
            inputs[b, step + 1:step + 1 + n_items, :W] = items[j]
            step += n_items + 1
        inputs[b, step, W + 1] = 1.0                     # query delimiter
        inputs[b, step + 1:step + 1 + n_items, :W] = items[q]
        inputs[b, step + 1 + n_items, W + 1] = 1.0       # query end
        targets[b, step + n_items + 2:, :W] = items[q + 1]
    story = np.zeros(T, dtype=np.uint8)
    story[:T - n_items] = 1
    answer = np.zeros(T, dtype=np.uint8)
    answer[T - n_items:] = 1
    masks = [PhaseMask(story=story.copy(), answer=answer.copy()) for _ in range(batch)]
    return EpisodeBatch(inputs, targets, masks,
                        meta={"task": "assoc_recall", "W": W, "li": li,
                              "n_items": n_items, "aux": {"query": queries}})


def _audit_assoc_recall(ep, b):
    W = ep.meta["W"]
    li, n_items = ep.meta["li"], ep.meta["n_items"]
    x, y = ep.inputs[b], ep.targets[b]
    # re-parse purely from the input stream
    item_flags = np.nonzero(x[:, W])[0]
    assert len(item_flags) == li
    items = [x[s + 1:s + 1 + n_items, :W] for s in item_flags]
    q_flags = np.nonzero(x[:, W + 1])[0]
    assert len(q_flags) == 2 and q_flags[1] == q_flags[0] + n_items + 1
    query = x[q_flags[0] + 1:q_flags[1], :W]
    for s in item_flags.tolist() + q_flags.tolist():
        assert not x[s, :W].any(), "flag steps may not carry data"
    # brute-force scan: the query must appear and the target is its successor
    hits = [j for j, it in enumerate(items) if np.array_equal(it, query)]
    assert len(hits) == 1, "items are generated distinct"
    j = hits[0]
    assert j < li - 1
    got = y[q_flags[1] + 1:q_flags[1] + 1 + n_items, :W]
    assert np.array_equal(got, items[j + 1])
    assert j == ep.meta["aux"]["query"][b]


# ---------------------------------------------------------------------------
# representation recall

def gen_repr_recall(rng, batch, W=64, li=8, n_seg=2, lc_lo=8, lc_hi=16):
    """Cues show N of 2N segments of a stored vector; predict the rest."""
    two_n = 2 * n_seg
    if W % two_n:
        raise ValueError(f"word width {W} not divisible by {two_n} segments")
    seg_w = W // two_n
    lc = int(rng.integers(lc_lo, lc_hi + 1))
    T = li + lc
    vectors = rng.integers(0, 2, (batch, li, W)).astype(np.float64)
    inputs = np.zeros((batch, T, W))
    targets = np.zeros((batch, T, n_seg * seg_w))
    inputs[:, :li] = vectors
    src = rng.integers(0, li, (batch, lc))
    kept = np.empty((batch, lc, n_seg), dtype=np.int64)
    for b in range(batch):
        for c in range(lc):
            keep = np.sort(rng.permutation(two_n)[:n_seg])
            kept[b, c] = keep
            v = vectors[b, src[b, c]]
            cue = np.zeros(W)
            hidden = []
            for s in range(two_n):
                lo = s * seg_w
                if s in keep:
                    cue[lo:lo + seg_w] = v[lo:lo + seg_w]
                else:
                    hidden.append(v[lo:lo + seg_w])
            inputs[b, li + c] = cue
            targets[b, li + c] = np.concatenate(hidden)
    story = np.zeros(T, dtype=np.uint8)
    story[:li] = 1
    answer = np.zeros(T, dtype=np.uint8)
    answer[li:] = 1
    masks = [PhaseMask(story=story.copy(), answer=answer.copy()) for _ in range(batch)]
    return EpisodeBatch(inputs, targets, masks,
                        meta={"task": "repr_recall", "W": W, "li": li, "n_seg": n_seg,
                              "lc": lc, "aux": {"src": src, "kept": kept}})


def _audit_repr_recall(ep, b):
    W, li, n_seg = ep.meta["W"], ep.meta["li"], ep.meta["n_seg"]
    lc = ep.meta["lc"]
    seg_w = W // (2 * n_seg)
    x, y = ep.inputs[b], ep.targets[b]
    src, kept = ep.meta["aux"]["src"][b], ep.meta["aux"]["kept"][b]
    for c in range(lc):
        v = x[src[c]]                      # the stored story vector
        cue = x[li + c]
        hidden = []
        for s in range(2 * n_seg):
            seg = slice(s * seg_w, (s + 1) * seg_w)
            if s in kept[c]:
                # a kept segment shows the source bits verbatim
                assert np.array_equal(cue[seg], v[seg])
            else:
                assert not cue[seg].any(), "dropped segments are zeroed"
                hidden.append(v[seg])
        assert np.array_equal(y[li + c], np.concatenate(hidden))
    assert not y[:li].any()


# ---------------------------------------------------------------------------
# n-th farthest

def gen_nth_farthest(rng, batch):
    """Classify which of 8 16-dim vectors is n-th farthest from vector m."""
    n_vec, dim = 8, 16
    vectors = rng.uniform(-1.0, 1.0, (batch, n_vec, dim))
    n = rng.integers(1, n_vec + 1, batch)          # 1 = farthest
    m = rng.integers(0, n_vec, batch)
    T = n_vec + 1
    d_i = dim + 3 * n_vec
    inputs = np.zeros((batch, T, d_i))
    inputs[:, :n_vec, :dim] = vectors
    ids = np.eye(n_vec)
    inputs[:, :n_vec, dim:dim + n_vec] = ids[None, :, :]
    inputs[:, :n_vec, dim + n_vec:dim + 2 * n_vec] = ids[n - 1][:, None, :]
    inputs[:, :n_vec, dim + 2 * n_vec:] = ids[m][:, None, :]

    query = vectors[np.arange(batch), m]
    dist = ((vectors - query[:, None, :]) ** 2).sum(axis=2)
    order = np.argsort(-dist, axis=1, kind="stable")
    labels = order[np.arange(batch), n - 1]

    targets = np.zeros((batch, T, n_vec))
    targets[np.arange(batch), T - 1, labels] = 1.0
    story = np.zeros(T, dtype=np.uint8)
    story[:n_vec] = 1
    answer = np.zeros(T, dtype=np.uint8)
    answer[n_vec:] = 1
    masks = [PhaseMask(story=story.copy(), answer=answer.copy()) for _ in range(batch)]
    return EpisodeBatch(inputs, targets, masks,
                        meta={"task": "nth_farthest", "aux": {"n": n, "m": m,
                                                              "label": labels}})


def _audit_nth_farthest(ep, b):
    # decode everything back from the input encoding alone
    x = ep.inputs[b]
    vectors = x[:8, :16]
    assert np.array_equal(x[:8, 16:24], np.eye(8))
    n = int(np.argmax(x[0, 24:32])) + 1
    m = int(np.argmax(x[0, 32:40]))
    for t in range(8):  # the question fields repeat on every story step
        assert np.array_equal(x[t, 24:32], x[0, 24:32])
        assert np.array_equal(x[t, 32:40], x[0, 32:40])
    dist = [float(np.linalg.norm(vectors[j] - vectors[m])) for j in range(8)]
    ranking = sorted(range(8), key=lambda j: (-dist[j], j))
    want = ranking[n - 1]
    assert not x[8].any(), "answer step input is zero"
    assert int(np.argmax(ep.targets[b, 8])) == want
    assert ep.targets[b, 8].sum() == 1.0


# ---------------------------------------------------------------------------
# convex hull

def _cross(pts, o, a, b):
    return ((pts[a, 0] - pts[o, 0]) * (pts[b, 1] - pts[o, 1])
            - (pts[a, 1] - pts[o, 1]) * (pts[b, 0] - pts[o, 0]))


def _degenerate(pts, eps=1e-9):
    n = len(pts)
    for a, b, c in combinations(range(n), 3):
        if abs(_cross(pts, a, b, c)) < eps:
            return True
    return False


def hull_indices(pts):
    """Hull vertex indices, counterclockwise from lowest-y (then lowest-x)."""
    n = len(pts)
    order = sorted(range(n), key=lambda i: (pts[i, 0], pts[i, 1]))
    lower = []
    for i in order:
        while len(lower) >= 2 and _cross(pts, lower[-2], lower[-1], i) <= 0:
            lower.pop()
        lower.append(i)
    upper = []
    for i in reversed(order):
        while len(upper) >= 2 and _cross(pts, upper[-2], upper[-1], i) <= 0:
            upper.pop()
        upper.append(i)
    hull = lower[:-1] + upper[:-1]
    start = min(range(len(hull)), key=lambda j: (pts[hull[j], 1], pts[hull[j], 0]))
    return hull[start:] + hull[:start]


def hull_set_oracle(pts):
    """Brute force: on the hull iff not strictly inside any triangle of others."""
    n = len(pts)
    x, y = pts[:, 0], pts[:, 1]
    on_hull = np.ones(n, dtype=bool)
    for p in range(n):
        others = np.array([i for i in range(n) if i != p])
        tri = np.array(list(combinations(others, 3)))
        a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]

        def side(i, j):
            return (x[j] - x[i]) * (y[p] - y[i]) - (y[j] - y[i]) * (x[p] - x[i])

        s1, s2, s3 = side(a, b), side(b, c), side(c, a)
        inside = ((s1 > 0) & (s2 > 0) & (s3 > 0)) | ((s1 < 0) & (s2 < 0) & (s3 < 0))
        if inside.any():
            on_hull[p] = False
    return {int(i) for i in range(n) if on_hull[i]}


def gen_convex_hull(rng, batch, n_points):
    """Point sequences whose answers enumerate the hull counterclockwise."""
    max_pts = 20
    if not (3 <= n_points <= max_pts):
        raise ValueError(f"point count {n_points} outside [3, {max_pts}]")
    pts_all = []
    hulls = []
    for _ in range(batch):
        pts = rng.random((n_points, 2))
        while _degenerate(pts):
            pts = rng.random((n_points, 2))  # collinear triple: resample
        pts_all.append(pts)
        hulls.append(hull_indices(pts))
    h_max = max(len(h) for h in hulls)
    T = n_points + 1 + h_max
    inputs = np.zeros((batch, T, 3))
    targets = np.zeros((batch, T, max_pts))
    masks = []
    for b, (pts, hull) in enumerate(zip(pts_all, hulls)):
        inputs[b, :n_points, :2] = pts
        inputs[b, n_points, 2] = 1.0
        for j, idx in enumerate(hull):
            targets[b, n_points + 1 + j, idx] = 1.0
        tb = n_points + 1 + len(hull)
        story = np.zeros(tb, dtype=np.uint8)
        story[:n_points + 1] = 1
        answer = np.zeros(tb, dtype=np.uint8)
        answer[n_points + 1:] = 1
        masks.append(PhaseMask(story=story, answer=answer))
    return EpisodeBatch(inputs, targets, masks,
                        meta={"task": "convex_hull", "n_points": n_points})


def _audit_convex_hull(ep, b):
    n = ep.meta["n_points"]
    m = ep.masks[b]
    pts = ep.inputs[b, :n, :2]
    assert ep.inputs[b, n, 2] == 1.0 and not ep.inputs[b, n, :2].any()
    steps = np.nonzero(m.answer)[0]
    got = [int(np.argmax(ep.targets[b, t])) for t in steps]
    assert all(ep.targets[b, t].sum() == 1.0 for t in steps)
    assert set(got) == hull_set_oracle(pts), "hull set disagrees with oracle"
    assert len(set(got)) == len(got)
    start = min(range(n), key=lambda i: (pts[i, 1], pts[i, 0]))
    assert got[0] == start
    for i in range(len(got)):
        o, a, c = got[i - 1], got[i], got[(i + 1) % len(got)]
        assert _cross(pts, o, a, c) > 0, "hull walk must turn counterclockwise"


# ---------------------------------------------------------------------------
# registry and self-check

_AUDITORS = {
    "copy": _audit_copy,
    "assoc_recall": _audit_assoc_recall,
    "repr_recall": _audit_repr_recall,
    "nth_farthest": _audit_nth_farthest,
    "convex_hull": _audit_convex_hull,
}


def validate_batch(ep):
    """Run the task's construction audit on every episode of the batch."""
    audit = _AUDITORS[ep.meta["task"]]
    for b in range(ep.batch_size):
        audit(ep, b)
        m = ep.masks[b]
        assert not (m.story & m.answer).any()
        story_steps = np.nonzero(m.story)[0]
        assert not ep.targets[b, story_steps].any(), "story steps have no targets"
        if ep.meta["task"] in ("nth_farthest", "convex_hull"):
            answer_steps = np.nonzero(m.answer)[0]
            assert (ep.targets[b, answer_steps].sum(axis=-1) == 1.0).all(), \
                "classification answers are one-hot"


def task_spec(name, **params):
    """Assemble the TaskSpec (dims, losses, heads, training defaults)."""
    if name == "copy":
        W = params.get("W", 8)
        return TaskSpec(
            name, d_i=W + 2, d_o=W + 2, task_kind="sigmoid_ce",
            mr_kind="sigmoid_ce", recon="reuse", metric="bits",
            defaults=dict(K=2, A=64, L=36, R=1, d_h=128, batch=16,
                          lr=1e-4, iterations=10_000, p=0.3))
    if name == "assoc_recall":
        W = params.get("W", 8)
        return TaskSpec(
            name, d_i=W + 2, d_o=W + 2, task_kind="sigmoid_ce",
            mr_kind="sigmoid_ce", recon="reuse", metric="bits",
            defaults=dict(K=2, A=32, L=36, R=1, d_h=128, batch=16,
                          lr=1e-4, iterations=10_000, p=0.3))
    if name == "repr_recall":
        W = params.get("W", 64)
        return TaskSpec(
            name, d_i=W, d_o=W // 2, task_kind="sigmoid_ce",
            mr_kind="sigmoid_ce", recon="linear", metric="bits",
            defaults=dict(K=2, A=32, L=128, R=1, d_h=128, batch=16,
                          lr=1e-4, iterations=20_000, p=0.3))
    if name == "nth_farthest":
        return TaskSpec(
            name, d_i=40, d_o=8, task_kind="softmax_ce",
            mr_kind="l2", recon="linear", metric="argmax", mlp=(256, 4),
            defaults=dict(K=6, A=16, L=128, R=4, d_h=1024, batch=16,
                          lr=1e-4, iterations=20_000, p=0.3))
    if name == "convex_hull":
        return TaskSpec(
            name, d_i=3, d_o=20, task_kind="softmax_ce",
            mr_kind="l2", recon="linear", metric="argmax", mlp=(256, 2),
            defaults=dict(K=6, A=20, L=64, R=4, d_h=256, batch=128,
                          lr=1e-4, iterations=20_000, p=0.3))
    if name == "babi":
        return TaskSpec(
            name, d_i=64, d_o=160, task_kind="softmax_ce",
            mr_kind="softmax_ce", recon="reuse", metric="wer", vocab=160,
            defaults=dict(K=2, A=128, L=48, R=4, d_h=256, batch=32,
                          lr=3e-5, iterations=100_000, p=0.1))
    raise ValueError(f"unknown task {name!r}")


TASK_NAMES = ("copy", "assoc_recall", "repr_recall", "nth_farthest",
              "convex_hull", "babi")


def generate(name, rng, batch, **params):
    """Dispatch to the task's generator with its keyword parameters."""
    if name == "copy":
        return gen_copy(rng, batch, **params)
    if name == "assoc_recall":
        return gen_assoc_recall(rng, batch, **params)
    if name == "repr_recall":
        return gen_repr_recall(rng, batch, **params)
    if name == "nth_farthest":
        return gen_nth_farthest(rng, batch, **params)
    if name == "convex_hull":
        n_pts = params.pop("n_points", None)
        rng_n = params.pop("n_range", (5, 20))
        if n_pts is None:
            n_pts = int(rng.integers(rng_n[0], rng_n[1] + 1))
        return gen_convex_hull(rng, batch, n_pts, **params)
    raise ValueError(f"no episode generator for task {name!r}")


def self_check(name, episodes=10_000, seed=0, batch=256, **params):
    """Generate `episodes` episodes and audit each against the task oracle."""
    rng = np.random.default_rng(seed)
    done = 0
    while done < episodes:
        b = min(batch, episodes - done)
        validate_batch(generate(name, rng, b, **params))
        done += b
    return done
