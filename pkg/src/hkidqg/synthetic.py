"""Synthetic DiagramQG-style corpus used by the demo and the tests.

Each diagram is a small canvas with a few coloured shapes; every shape has an
element name, and questions are built from templates that mention the target
element and the concept.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .core import Diagram, make_rng
from .dataset import DatasetRecord

SUBJECTS = {
    "biology": ("Life science", ["Ecological interactions", "Circulation", "Plant parts"]),
    "earth science": ("Geology", ["Rock cycle", "Water cycle"]),
    "physics": ("Electricity", ["Circuits", "Energy transfer"]),
}

ELEMENTS = [
    "heart", "valve", "aorta", "leaf", "root", "stem", "flower", "mussels", "sea star",
    "algae", "volcano", "magma", "cloud", "river", "battery", "bulb", "switch", "wire",
    "sun", "ocean",
]

TEMPLATES = [
    "What is the role of the {t} in {c}?",
    "How does the {t} relate to the {e} in this diagram?",
    "Which statement about the {t} and {c} is correct?",
    "What would happen to the {e} if the {t} were removed?",
]

_COLORS = np.array([
    [230, 60, 60], [60, 160, 60], [60, 90, 220], [240, 200, 40],
    [150, 80, 200], [40, 190, 200], [250, 130, 30], [120, 120, 120],
], dtype=np.uint8)


def draw_diagram(diagram_id: str, rng, size=(96, 96)) -> Diagram:
    h, w = size
    px = np.full((h, w, 3), 255, dtype=np.uint8)
    for _ in range(int(rng.integers(3, 7))):
        color = _COLORS[int(rng.integers(len(_COLORS)))]
        r0, c0 = int(rng.integers(0, h - 8)), int(rng.integers(0, w - 8))
        r1, c1 = r0 + int(rng.integers(6, h // 2)), c0 + int(rng.integers(6, w // 2))
        if rng.random() < 0.5:
            px[r0:r1, c0:c1] = color
        else:
            rr, cc = np.ogrid[:h, :w]
            cy, cx = (r0 + r1) / 2, (c0 + c1) / 2
            ry, rx = max((r1 - r0) / 2, 1), max((c1 - c0) / 2, 1)
            px[((rr - cy) / ry) ** 2 + ((cc - cx) / rx) ** 2 <= 1] = color
    return Diagram(id=diagram_id, pixels=px)


def make_corpus(n_records=64, per_diagram=4, seed=7):
    """Returns ``(records, diagrams)`` with diagrams keyed by their relative path."""
    rng = make_rng(seed)
    subjects = sorted(SUBJECTS)
    records, diagrams = [], {}
    n_diagrams = -(-n_records // per_diagram)
    for d in range(n_diagrams):
        path = f"diagrams/d{d:04d}.png"
        diagrams[path] = draw_diagram(path, rng)
        subject = subjects[d % len(subjects)]
        course, concepts = SUBJECTS[subject]
        picks = rng.choice(len(ELEMENTS), size=5, replace=False)
        elements = [ELEMENTS[i] for i in picks]
        for k in range(per_diagram):
            if len(records) == n_records:
                break
            concept = concepts[int(rng.integers(len(concepts)))]
            target = elements[k % len(elements)]
            other = elements[(k + 1) % len(elements)]
            template = TEMPLATES[int(rng.integers(len(TEMPLATES)))]
            records.append(DatasetRecord(
                combination_id=f"c{len(records):05d}",
                diagram_path=path,
                subject=subject,
                course=course,
                concept=concept,
                target=target,
                question=template.format(t=target, c=concept.lower(), e=other),
                element_list=elements,
            ))
    return records, diagrams


def write_corpus(records, diagrams, out_dir) -> Path:
    """Write PNGs and ``corpus.jsonl`` under ``out_dir``; returns the JSONL path."""
    from .dataset import save

    out_dir = Path(out_dir)
    for rel, diagram in diagrams.items():
        target = out_dir / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(diagram.pixels, mode="RGB").save(target, format="PNG")
    path = out_dir / "corpus.jsonl"
    save(records, path)
    return path
