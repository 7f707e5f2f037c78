"""Attention trace export: a versioned JSON document and an SVG heatmap.

The document holds, for one sample, every attention distribution the model
produced: temporal attention over frames and words per reasoning step, the
two-way modality weights, and (when the variant has them) the memory write,
read and operation weights per frame or word.
"""

import json
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import jsonschema
import numpy as np

from . import tensor as T
from .data import collate
from .errors import ContractError

SCHEMA_VERSION = 1
SUM_TOL = 1e-6

_dist = {"type": "array", "items": {"type": "number", "minimum": 0}}
_dist_seq = {"type": "array", "items": _dist}

TRACE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "TraceDocument",
    "type": "object",
    "required": ["schema_version", "sample_id", "variant", "task", "frames", "words",
                 "gamma_v", "gamma_q", "phi", "visual_memory", "question_memory",
                 "predicted", "target"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "sample_id": {"type": "string"},
        "variant": {"enum": ["EF", "LF", "VM", "QM", "VQ"]},
        "task": {"enum": ["open", "mc"]},
        "frames": {"type": "integer", "minimum": 1},
        "words": {"type": "integer", "minimum": 1},
        "candidate": {"type": ["integer", "null"]},
        "gamma_v": _dist_seq,
        "gamma_q": _dist_seq,
        "phi": _dist_seq,
        "visual_memory": {
            "type": ["object", "null"],
            "required": ["alpha_m", "alpha_a", "epsilon", "beta"],
            "additionalProperties": False,
            "properties": {k: _dist_seq for k in ("alpha_m", "alpha_a", "epsilon", "beta")},
        },
        "question_memory": {
            "type": ["object", "null"],
            "required": ["alpha", "beta"],
            "additionalProperties": False,
            "properties": {k: _dist_seq for k in ("alpha", "beta")},
        },
        "predicted": {"type": "integer"},
        "target": {"type": "integer"},
    },
}


@dataclass
class TraceDocument:
    sample_id: str
    variant: str
    task: str
    frames: int
    words: int
    gamma_v: list  # one list of per-frame weights per reasoning step
    gamma_q: list
    phi: list
    predicted: int
    target: int
    candidate: int = None  # candidate row traced for multiple choice
    visual_memory: dict = None
    question_memory: dict = None
    schema_version: int = field(default=SCHEMA_VERSION)

    def distributions(self):
        """Yield ``(label, weights)`` for every distribution in the document."""
        for name in ("gamma_v", "gamma_q", "phi"):
            for step, d in enumerate(getattr(self, name)):
                yield f"{name}[{step}]", d
        for block_name in ("visual_memory", "question_memory"):
            block = getattr(self, block_name) or {}
            for name, seq in block.items():
                for t, d in enumerate(seq):
                    yield f"{block_name}.{name}[{t}]", d

    def check(self, tol=SUM_TOL):
        for label, d in self.distributions():
            d = np.asarray(d, dtype=np.float64)
            if d.size == 0 or (d < 0).any() or abs(d.sum() - 1.0) > tol:
                raise ContractError(f"trace distribution {label} is not normalised (sum {d.sum():.9f})")

    def to_dict(self):
        self.check()
        return {
            "schema_version": self.schema_version,
            "sample_id": self.sample_id,
            "variant": self.variant,
            "task": self.task,
            "frames": self.frames,
            "words": self.words,
            "candidate": self.candidate,
            "gamma_v": self.gamma_v,
            "gamma_q": self.gamma_q,
            "phi": self.phi,
            "visual_memory": self.visual_memory,
            "question_memory": self.question_memory,
            "predicted": self.predicted,
            "target": self.target,
        }

    def to_json(self):
        doc = self.to_dict()
        validate_trace(doc)
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def validate_trace(doc):
    """Validate a trace dict against ``TRACE_SCHEMA``; raises ContractError."""
    try:
        jsonschema.validate(doc, TRACE_SCHEMA)
    except jsonschema.ValidationError as e:
        raise ContractError(f"trace does not match schema: {e.message}") from e


def _rows(arrays, row, length):
    return [[float(x) for x in a[row, :length]] for a in arrays]


def build_trace(model, record):
    """Run ``model`` on one record and collect its attention weights."""
    batch = collate([record])
    with T.no_grad():
        out = model.forward(batch)
    pred = int(out.predictions[0])
    n_v = int(batch.v_len[0])
    if batch.task == "mc":
        row, target = pred, int(batch.positive[0])
    else:
        row, target = 0, int(batch.labels[0])
    n_q = int(batch.q_len[row])
    fu = out.traces["fusion"]
    vm = qm = None
    if out.traces["visual"]:
        vt = out.traces["visual"][:n_v]
        vm = {
            "alpha_m": _rows([t.alpha_m for t in vt], 0, None),
            "alpha_a": _rows([t.alpha_a for t in vt], 0, None),
            "epsilon": _rows([t.epsilon for t in vt], 0, None),
            "beta": _rows([t.beta for t in vt], 0, None),
        }
    if out.traces["question"]:
        qt = out.traces["question"][:n_q]
        qm = {
            "alpha": _rows([t.alpha for t in qt], row, None),
            "beta": _rows([t.beta for t in qt], row, None),
        }
    return TraceDocument(
        sample_id=record.id,
        variant=model.cfg.variant,
        task=batch.task,
        frames=n_v,
        words=n_q,
        gamma_v=_rows([t.gamma_v for t in fu], row, n_v),
        gamma_q=_rows([t.gamma_q for t in fu], row, n_q),
        phi=_rows([t.phi for t in fu], row, None),
        predicted=pred,
        target=target,
        candidate=row if batch.task == "mc" else None,
        visual_memory=vm,
        question_memory=qm,
    )


CELL = 28
LABEL_W = 64
TITLE_H = 22


def _panel(title, weights, x0, y0, kind):
    rows = [f'<text x="{x0}" y="{y0 + 15}" font-size="13">{escape(title)}</text>']
    y0 += TITLE_H
    for step, dist in enumerate(weights):
        y = y0 + step * CELL
        rows.append(f'<text x="{x0}" y="{y + CELL * 0.65:.1f}" font-size="11">step {step + 1}</text>')
        for i, w in enumerate(dist):
            x = x0 + LABEL_W + i * CELL
            rows.append(
                f'<rect class="cell" data-panel="{kind}" data-step="{step}" data-index="{i}" '
                f'data-weight="{w:.9f}" x="{x}" y="{y}" width="{CELL - 2}" height="{CELL - 2}" '
                f'fill="#08306b" fill-opacity="{w:.6f}" stroke="#999" stroke-width="0.5"/>')
    return rows, y0 + len(weights) * CELL


def render_svg(doc):
    """Heatmap of ``gamma_v`` and ``gamma_q``: rows are reasoning steps,
    columns are frames (or words), fill opacity equals the weight."""
    body, y = _panel(f"frames (sample {doc.sample_id})", doc.gamma_v, 8, 4, "gamma_v")
    more, y = _panel("words", doc.gamma_q, 8, y + 10, "gamma_q")
    body += more
    width = 8 + LABEL_W + CELL * max(doc.frames, doc.words) + 8
    height = y + 8
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif">')
    return "\n".join([head, *body, "</svg>"]) + "\n"


def write_trace(doc, out_path, svg=True):
    """Write ``<out_path>.json`` and, if asked, ``<out_path>.svg``; returns the paths."""
    paths = [f"{out_path}.json"]
    with open(paths[0], "w", encoding="utf-8") as fh:
        fh.write(doc.to_json())
    if svg:
        paths.append(f"{out_path}.svg")
        with open(paths[1], "w", encoding="utf-8") as fh:
            fh.write(render_svg(doc))
    return paths
