"""Study and result file formats.

A study file is one JSON document::

    {"format": "cvinenma-studies", "version": 1, "K": 2,
     "studies": [
       {"id": "s1", "design": "gold_one_test", "tests": [1],
        "n_diseased": 40, "n_nondiseased": 60,
        "counts": {"1": {"tp": 35, "fn": 5, "fp": 6, "tn": 54}}},
       {"id": "s2", "design": "no_gold_pair", "tests": [1, 2],
        "m11": 30, "m10": 8, "m01": 5, "m00": 57}]}

``m10`` counts subjects positive on the first listed test and negative on the
second. A flat CSV with columns ``id,test,tp,fn,fp,tn`` is accepted for
gold_one_test studies.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from .model import StudyRecord

FORMAT = "cvinenma-studies"
RESULT_FORMAT = "cvinenma-fit"
VERSION = 1

_COUNT = {"type": "integer", "minimum": 0}
_CELL = {"type": "object", "required": ["tp", "fn", "fp", "tn"],
         "properties": {k: _COUNT for k in ("tp", "fn", "fp", "tn")},
         "additionalProperties": False}

STUDY_SCHEMA = {
    "type": "object",
    "required": ["format", "version", "K", "studies"],
    "properties": {
        "format": {"const": FORMAT},
        "version": {"const": VERSION},
        "K": {"type": "integer", "minimum": 1},
        "description": {"type": "string"},
        "studies": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "design", "tests"],
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "design": {"enum": ["gold_one_test", "gold_multi_test", "no_gold_pair"]},
                    "tests": {"type": "array", "items": {"type": "integer", "minimum": 1},
                              "minItems": 1},
                    "n_diseased": _COUNT,
                    "n_nondiseased": _COUNT,
                    "counts": {"type": "object", "patternProperties": {"^[0-9]+$": _CELL},
                               "additionalProperties": False},
                    **{m: _COUNT for m in ("m11", "m10", "m01", "m00")},
                },
                "allOf": [
                    {"if": {"properties": {"design": {"const": "no_gold_pair"}}},
                     "then": {"required": ["m11", "m10", "m01", "m00"],
                              "properties": {"tests": {"minItems": 2, "maxItems": 2}}},
                     "else": {"required": ["n_diseased", "n_nondiseased", "counts"]}},
                    {"if": {"properties": {"design": {"const": "gold_one_test"}}},
                     "then": {"properties": {"tests": {"maxItems": 1}}}},
                ],
            },
        },
    },
}


class InputError(ValueError):
    """Invalid input file; the message points at the offending line when possible."""


@dataclass
class StudyFile:
    K: int
    studies: list[StudyRecord]
    digest: str = ""
    description: str = ""

    def to_dict(self) -> dict:
        d = {"format": FORMAT, "version": VERSION, "K": self.K}
        if self.description:
            d["description"] = self.description
        d["studies"] = [s.to_dict() for s in self.studies]
        return d


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _line_of(text: str, study_id) -> int | None:
    if study_id is None:
        return None
    m = re.search(r'"id"\s*:\s*' + re.escape(json.dumps(study_id)), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _where(text, doc, path) -> str:
    parts = list(path)
    loc = "/".join(str(p) for p in parts) or "<root>"
    sid = None
    if len(parts) >= 2 and parts[0] == "studies" and isinstance(parts[1], int):
        try:
            sid = doc["studies"][parts[1]].get("id")
        except (AttributeError, IndexError, KeyError, TypeError):
            sid = None
    line = _line_of(text, sid)
    return f"line {line}, {loc}" if line else loc


def _record(entry: dict) -> StudyRecord:
    design = entry["design"]
    tests = entry["tests"]
    if design == "no_gold_pair":
        return StudyRecord.no_gold(entry["id"], tests, entry["m11"], entry["m10"], entry["m01"],
                                   entry["m00"])
    counts = entry["counts"]
    if sorted(int(k) for k in counts) != sorted(tests):
        raise ValueError(f"study {entry['id']}: counts given for tests "
                         f"{sorted(int(k) for k in counts)} but tests lists {sorted(tests)}")
    if design == "gold_multi_test" and len(tests) < 2:
        raise ValueError(f"study {entry['id']}: gold_multi_test needs at least two tests")
    cells = {int(k): (v["tp"], v["fn"], v["fp"], v["tn"]) for k, v in counts.items()}
    return StudyRecord.gold_standard(entry["id"], entry["n_diseased"], entry["n_nondiseased"],
                                     cells)


def _null_counts(doc) -> list[list]:
    if not isinstance(doc, dict) or not isinstance(doc.get("studies"), list):
        return []
    out = []
    for i, e in enumerate(doc["studies"]):
        if not isinstance(e, dict):
            continue
        for key in ("n_diseased", "n_nondiseased", "m11", "m10", "m01", "m00"):
            if key in e and e[key] is None:
                out.append(["studies", i, key])
        for k, cell in (e.get("counts") or {}).items():
            if isinstance(cell, dict):
                out.extend(["studies", i, "counts", k, c] for c, v in cell.items() if v is None)
    return out


def parse_studies(text: str, source: str = "<input>") -> StudyFile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    unfilled = _null_counts(doc)
    if unfilled:
        raise InputError(f"{source}: {len(unfilled)} study count(s) are null (a template?); "
                         f"first: {_where(text, doc, unfilled[0])}")
    validator = jsonschema.Draft202012Validator(STUDY_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = [f"{source}: {_where(text, doc, e.absolute_path)}: {e.message}" for e in errors[:10]]
        raise InputError("\n".join(msgs))
    K = doc["K"]
    seen: set[str] = set()
    studies = []
    for i, entry in enumerate(doc["studies"]):
        where = _where(text, doc, ["studies", i])
        if entry["id"] in seen:
            raise InputError(f"{source}: {where}: duplicate study id {entry['id']!r}")
        seen.add(entry["id"])
        if max(entry["tests"]) > K:
            raise InputError(f"{source}: {where}: test index {max(entry['tests'])} exceeds K={K}")
        try:
            studies.append(_record(entry))
        except ValueError as exc:
            raise InputError(f"{source}: {where}: {exc}") from None
    if not studies:
        raise InputError(f"{source}: the file contains no studies")
    digest = hashlib.sha256(text.encode()).hexdigest()
    return StudyFile(K, studies, digest, doc.get("description", ""))


def parse_flat_csv(text: str, K: int | None = None, source: str = "<input>") -> StudyFile:
    """Rows ``id,test,tp,fn,fp,tn``: one gold-standard 2x2 table per study."""
    reader = csv.DictReader(io.StringIO(text))
    need = {"id", "test", "tp", "fn", "fp", "tn"}
    if reader.fieldnames is None or not need <= set(reader.fieldnames):
        raise InputError(f"{source}: line 1: header must contain {sorted(need)}")
    studies, seen = [], set()
    for row in reader:
        line = reader.line_num
        try:
            sid = row["id"].strip()
            k, tp, fn, fp, tn = (int(row[c]) for c in ("test", "tp", "fn", "fp", "tn"))
            if sid in seen:
                raise ValueError(f"duplicate study id {sid!r}")
            seen.add(sid)
            studies.append(StudyRecord.gold_standard(sid, tp + fn, fp + tn, {k: (tp, fn, fp, tn)}))
        except (TypeError, ValueError) as exc:
            raise InputError(f"{source}: line {line}: {exc}") from None
    if not studies:
        raise InputError(f"{source}: the file contains no studies")
    K = K or max(s.tests[0] for s in studies)
    if max(s.tests[0] for s in studies) > K:
        raise InputError(f"{source}: a test index exceeds K={K}")
    return StudyFile(K, studies, hashlib.sha256(text.encode()).hexdigest())


def load_studies(path, K: int | None = None) -> StudyFile:
    path = Path(path)
    try:
        raw = path.read_bytes()
        text = raw.decode("utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    except UnicodeDecodeError:
        raise InputError(f"{path}: not UTF-8 text") from None
    if path.suffix.lower() == ".csv":
        sf = parse_flat_csv(text, K, str(path))
    else:
        sf = parse_studies(text, str(path))
    sf.digest = hashlib.sha256(raw).hexdigest()
    return sf


def dumps_studies(sf: StudyFile) -> str:
    return json.dumps(sf.to_dict(), indent=2) + "\n"


def atomic_write_text(path, text: str):
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_studies(sf: StudyFile, path):
    atomic_write_text(path, dumps_studies(sf))


# ---------------------------------------------------------------------------
# result files


def result_document(fit_result, input_path, input_digest, options, tool_version,
                    comparison=None, seed=None) -> dict:
    return {
        "format": RESULT_FORMAT,
        "version": VERSION,
        "tool_version": tool_version,
        "input": {"path": str(input_path), "sha256": input_digest},
        "options": options,
        "seed": seed,
        "fit": fit_result.to_dict(),
        "comparison": comparison,
    }


def load_result(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != RESULT_FORMAT:
        raise InputError(f"{path}: not a fit result file")
    return doc
