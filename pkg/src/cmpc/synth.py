"""Procedural referring-segmentation data: coloured shapes, typed expressions,
exact masks and oracle word-type labels.

Every sample is a pure function of (dataset seed, sample seed, attempt).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .imageio import read_pgm, read_ppm, write_pgm, write_ppm
from .language import ATTR, ENT, REL, UN, Vocabulary, tokenize

IMAGE_SIZE = 32
SHAPES = ("square", "circle", "triangle")
COLORS = {
    "red": (0.9, 0.1, 0.1),
    "green": (0.1, 0.8, 0.15),
    "blue": (0.15, 0.25, 0.95),
    "yellow": (0.95, 0.9, 0.1),
    "white": (0.95, 0.95, 0.95),
}
BACKGROUND = 0.08
RELATIONS = {"left": ("left", "of"), "right": ("right", "of"),
             "above": ("above",), "below": ("below",)}
SIZE_RANGE = (8, 12)
MAX_ATTEMPTS = 1000
VAL_SEED_OFFSET = 10_000_000

VOCAB_TOKENS = ("the", "of", "left", "right", "above", "below") + SHAPES + tuple(COLORS)


def default_vocabulary() -> Vocabulary:
    return Vocabulary(VOCAB_TOKENS)


class GenerationError(RuntimeError):
    pass


@dataclass
class Entity:
    shape: str
    color: str
    top: int
    left: int
    size: int

    @property
    def center(self):
        return (self.top + self.size / 2.0, self.left + self.size / 2.0)

    @property
    def attrs(self):
        return (self.color, self.shape)

    def bbox(self):
        return (self.top, self.left, self.top + self.size, self.left + self.size)


@dataclass
class Scene:
    entities: list
    template: str
    image_size: int = IMAGE_SIZE


@dataclass
class ExpressionSpec:
    template: str
    referent: int
    words: list
    types: list

    @property
    def text(self):
        return " ".join(self.words)


@dataclass
class Sample:
    id: int
    seed: int
    attempt: int
    image: np.ndarray
    tokens: list
    gt_mask: np.ndarray
    oracle_types: list
    expression: ExpressionSpec
    scene: Scene = field(repr=False, default=None)


def sample_rng(dataset_seed, sample_seed, attempt=0):
    ss = np.random.SeedSequence([int(dataset_seed), int(sample_seed), int(attempt)])
    return np.random.Generator(np.random.Philox(ss))


# ----------------------------------------------------------------- geometry

def relation_holds(a: Entity, b: Entity, rel: str) -> bool:
    """'a <rel> b' on entity centres; horizontal relations need |drow| <= |dcol|."""
    (ar, ac), (br, bc) = a.center, b.center
    dr, dc = abs(ar - br), abs(ac - bc)
    if rel == "left":
        return ac < bc and dr <= dc
    if rel == "right":
        return ac > bc and dr <= dc
    if rel == "above":
        return ar < br and dc <= dr
    if rel == "below":
        return ar > br and dc <= dr
    raise ValueError(f"unknown relation {rel!r}")


def _boxes_clear(a: Entity, b: Entity, gap=1):
    at, al, ab, ar = a.bbox()
    bt, bl, bb, br = b.bbox()
    return ab + gap <= bt or bb + gap <= at or ar + gap <= bl or br + gap <= al


def footprint(entity: Entity, image_size=IMAGE_SIZE) -> np.ndarray:
    """Exact boolean rasterisation sampled at pixel centres."""
    mask = np.zeros((image_size, image_size), dtype=bool)
    t, l, s = entity.top, entity.left, entity.size
    if entity.shape == "square":
        mask[t:t + s, l:l + s] = True
        return mask
    yy, xx = np.mgrid[t:t + s, l:l + s]
    u = (xx + 0.5 - l) / s
    v = (yy + 0.5 - t) / s
    if entity.shape == "circle":
        inside = (u - 0.5) ** 2 + (v - 0.5) ** 2 <= 0.25
    elif entity.shape == "triangle":
        inside = np.abs(u - 0.5) <= v / 2.0
    else:
        raise ValueError(f"unknown shape {entity.shape!r}")
    mask[t:t + s, l:l + s] = inside
    return mask


def render(scene: Scene):
    """Returns (image [H, W, 3] in [0, 1] on the 8-bit grid, [footprints])."""
    n = scene.image_size
    img = np.full((n, n, 3), BACKGROUND)
    masks = []
    for e in scene.entities:
        m = footprint(e, n)
        img[m] = COLORS[e.color]
        masks.append(m)
    img = np.rint(img * 255.0) / 255.0
    return img, masks


# ------------------------------------------------------------------ scenes

def _other(rng, options, exclude):
    pool = [o for o in options if o != exclude]
    return pool[int(rng.integers(len(pool)))]


def _attribute_plan(rng, template):
    shapes, colors = list(SHAPES), list(COLORS)
    ref = (colors[int(rng.integers(5))], shapes[int(rng.integers(3))])
    plan = [ref]
    if template == "REL":
        plan.append(ref)
        landmark = ref
        while landmark == ref:
            landmark = (colors[int(rng.integers(5))], shapes[int(rng.integers(3))])
        plan.append(landmark)
        if rng.random() < 0.5:
            extra = ref
            while extra in (ref, landmark):
                extra = (colors[int(rng.integers(5))], shapes[int(rng.integers(3))])
            plan.append(extra)
        return plan
    for _ in range(int(rng.integers(1, 4))):
        u = rng.random()
        if u < 0.4:
            plan.append((ref[0], _other(rng, shapes, ref[1])))
        elif u < 0.8:
            plan.append((_other(rng, colors, ref[0]), ref[1]))
        else:
            d = ref
            while d == ref:
                d = (colors[int(rng.integers(5))], shapes[int(rng.integers(3))])
            plan.append(d)
    return plan


def place_entities(rng, plan, image_size=IMAGE_SIZE):
    entities = []
    attempts = 0
    for color, shape in plan:
        while True:
            attempts += 1
            if attempts > MAX_ATTEMPTS:
                raise GenerationError("could not place entities without overlap")
            size = int(rng.integers(SIZE_RANGE[0], SIZE_RANGE[1] + 1))
            top = int(rng.integers(0, image_size - size + 1))
            left = int(rng.integers(0, image_size - size + 1))
            cand = Entity(shape, color, top, left, size)
            if all(_boxes_clear(cand, e) for e in entities):
                entities.append(cand)
                break
    return entities


def generate_scene(rng, template=None, rel_fraction=0.5):
    """2-4 non-overlapping entities. REL scenes contain an attribute twin of
    the intended referent so that a relation is needed to disambiguate."""
    if isinstance(rng, (int, np.integer)):
        rng = sample_rng(0, rng)
    if template is None:
        template = "REL" if rng.random() < rel_fraction else "ATTR-ENT"
    plan = _attribute_plan(rng, template)
    order = rng.permutation(len(plan))
    plan = [plan[i] for i in order]
    return Scene(entities=place_entities(rng, plan), template=template)


# ------------------------------------------------------------- expressions

def expression_words(color, shape, rel=None, landmark=None):
    words = ["the", color, shape]
    types = [UN, ATTR, ENT]
    if rel is not None:
        phrase = RELATIONS[rel]
        words += list(phrase) + ["the", landmark[0], landmark[1]]
        types += [REL] + [UN] * (len(phrase) - 1) + [UN, ATTR, ENT]
    return words, types


def parse_expression(words):
    """Inverse of expression_words: (color, shape, rel | None, landmark | None)."""
    words = list(words)
    color, shape = words[1], words[2]
    if len(words) == 3:
        return color, shape, None, None
    rel = words[3]
    return color, shape, rel, (words[-2], words[-1])


def matching_entities(scene: Scene, words):
    """Brute-force reading of an expression against a scene."""
    color, shape, rel, landmark = parse_expression(words)
    hits = []
    for i, e in enumerate(scene.entities):
        if e.attrs != (color, shape):
            continue
        if rel is None:
            hits.append(i)
            continue
        if any(j != i and l.attrs == landmark and relation_holds(e, l, rel)
               for j, l in enumerate(scene.entities)):
            hits.append(i)
    return hits


def _attr_counts(scene):
    counts = {}
    for e in scene.entities:
        counts[e.attrs] = counts.get(e.attrs, 0) + 1
    return counts


def expression_candidates(scene: Scene, template: str):
    counts = _attr_counts(scene)
    out = []
    for i, e in enumerate(scene.entities):
        if template == "ATTR-ENT":
            if counts[e.attrs] == 1:
                out.append((i, None, None))
            continue
        if counts[e.attrs] < 2:
            continue
        for j, l in enumerate(scene.entities):
            if j == i or counts[l.attrs] != 1:
                continue
            for rel in RELATIONS:
                if not relation_holds(e, l, rel):
                    continue
                words, _ = expression_words(*e.attrs, rel, l.attrs)
                if matching_entities(scene, words) == [i]:
                    out.append((i, rel, l.attrs))
    return out


def generate_expression(scene: Scene, rng, template=None) -> ExpressionSpec:
    template = template or scene.template
    cands = expression_candidates(scene, template)
    if not cands:
        raise GenerationError(f"no unambiguous {template} expression for this scene")
    i, rel, landmark = cands[int(rng.integers(len(cands)))]
    words, types = expression_words(*scene.entities[i].attrs, rel, landmark)
    return ExpressionSpec(template=template, referent=i, words=words, types=types)


def make_sample(dataset_seed, sample_seed, sample_id=0, vocab=None, rel_fraction=0.5):
    """Generate one sample, retrying with the next attempt index on failure."""
    vocab = vocab or default_vocabulary()
    for attempt in range(MAX_ATTEMPTS):
        rng = sample_rng(dataset_seed, sample_seed, attempt)
        try:
            scene = generate_scene(rng, rel_fraction=rel_fraction)
            spec = generate_expression(scene, rng)
        except GenerationError:
            continue
        image, masks = render(scene)
        return Sample(id=sample_id, seed=int(sample_seed), attempt=attempt, image=image,
                      tokens=tokenize(spec.text, vocab),
                      gt_mask=masks[spec.referent].astype(np.uint8),
                      oracle_types=list(spec.types), expression=spec, scene=scene)
    raise GenerationError(f"sample seed {sample_seed} failed {MAX_ATTEMPTS} times")


def sample_seeds(n_train, n_val):
    """Train seeds 0..n_train-1, val seeds from VAL_SEED_OFFSET; never collide."""
    if n_train >= VAL_SEED_OFFSET:
        raise ValueError("n_train too large for the seed layout")
    return ([("train", k) for k in range(n_train)]
            + [("val", VAL_SEED_OFFSET + k) for k in range(n_val)])


# ----------------------------------------------------------------- dataset

def _record(sample: Sample, split, dataset_seed):
    e = sample.scene.entities[sample.expression.referent]
    return {
        "id": sample.id,
        "split": split,
        "dataset_seed": int(dataset_seed),
        "seed": sample.seed,
        "attempt": sample.attempt,
        "image": f"images/{sample.id:05d}.ppm",
        "mask": f"masks/{sample.id:05d}.pgm",
        "expression": sample.expression.text,
        "tokens": list(sample.tokens),
        "oracle_types": list(sample.oracle_types),
        "template": sample.expression.template,
        "referent": {"shape": e.shape, "color": e.color, "bbox": list(e.bbox())},
        "entities": [asdict(x) for x in sample.scene.entities],
    }


def build_dataset(out_dir, seed=7, n_train=2000, n_val=500, rel_fraction=0.5):
    """Write images, masks, vocab.txt and manifest.jsonl; returns the records."""
    if n_train < 1 or n_val < 1:
        raise ValueError("n_train and n_val must be at least 1")
    out = Path(out_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out}: {exc}") from exc
    vocab = default_vocabulary()
    vocab.save(out / "vocab.txt")
    records = []
    for sid, (split, sseed) in enumerate(sample_seeds(n_train, n_val)):
        s = make_sample(seed, sseed, sid, vocab, rel_fraction)
        write_ppm(out / f"images/{sid:05d}.ppm", s.image)
        write_pgm(out / f"masks/{sid:05d}.pgm", s.gt_mask * 255)
        records.append(_record(s, split, seed))
    write_manifest(out / "manifest.jsonl", records)
    meta = {"seed": seed, "n_train": n_train, "n_val": n_val, "rel_fraction": rel_fraction,
            "image_size": IMAGE_SIZE}
    (out / "dataset.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    return records


def write_manifest(path, records):
    lines = [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


@dataclass
class Split:
    records: list
    images: np.ndarray
    tokens: list
    masks: np.ndarray

    def __len__(self):
        return len(self.records)

    def subset(self, n):
        return Split(self.records[:n], self.images[:n], self.tokens[:n], self.masks[:n])

    def inputs(self):
        return list(zip(self.images, self.tokens))


def load_split(root, split="train", limit=None):
    root = Path(root)
    recs = [r for r in read_manifest(root / "manifest.jsonl") if r["split"] == split]
    if limit is not None:
        recs = recs[:limit]
    images = np.stack([read_ppm(root / r["image"]) for r in recs]).astype(np.float64) / 255.0
    masks = np.stack([(read_pgm(root / r["mask"]) > 127).astype(np.uint8) for r in recs])
    tokens = [list(r["tokens"]) for r in recs]
    return Split(recs, images, tokens, masks)


def split_from_samples(samples):
    recs = [_record(s, "mem", 0) for s in samples]
    return Split(recs, np.stack([s.image for s in samples]), [list(s.tokens) for s in samples],
                 np.stack([s.gt_mask for s in samples]))


def generate_split(dataset_seed, seeds, rel_fraction=0.5):
    """In-memory equivalent of a dataset split (no files)."""
    vocab = default_vocabulary()
    return split_from_samples([make_sample(dataset_seed, s, i, vocab, rel_fraction)
                               for i, s in enumerate(seeds)])


# --------------------------------------------------------- contrast pairs

def make_contrast_pair(rng, kind):
    """Two-candidate scene plus two expressions each naming a different one.

    kind "attribute": same shape, different colour; kind "relation":
    attribute twins on opposite sides of a unique landmark.
    Returns (scene, [(ExpressionSpec, candidate index)] * 2).
    """
    for _ in range(MAX_ATTEMPTS):
        shapes, colors = list(SHAPES), list(COLORS)
        shape = shapes[int(rng.integers(3))]
        c1 = colors[int(rng.integers(5))]
        if kind == "attribute":
            c2 = _other(rng, colors, c1)
            plan = [(c1, shape), (c2, shape)]
        else:
            landmark = (c1, shape)
            while landmark == (c1, shape):
                landmark = (colors[int(rng.integers(5))], shapes[int(rng.integers(3))])
            plan = [(c1, shape), (c1, shape), landmark]
        try:
            ents = place_entities(rng, plan)
        except GenerationError:
            continue
        scene = Scene(entities=ents, template="ATTR-ENT" if kind == "attribute" else "REL")
        if kind == "attribute":
            exprs = []
            for i in (0, 1):
                w, t = expression_words(*ents[i].attrs)
                exprs.append((ExpressionSpec("ATTR-ENT", i, w, t), i))
            return scene, exprs
        exprs = []
        for i in (0, 1):
            options = [r for r in RELATIONS
                       if matching_entities(scene, expression_words(c1, shape, r, ents[2].attrs)[0]) == [i]]
            if not options:
                break
            r = options[int(rng.integers(len(options)))]
            w, t = expression_words(c1, shape, r, ents[2].attrs)
            exprs.append((ExpressionSpec("REL", i, w, t), i))
        if len(exprs) == 2:
            return scene, exprs
    raise GenerationError(f"could not build a {kind} contrast pair")
