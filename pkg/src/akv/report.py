"""Machine-readable reports: canonical JSON, a text table view and atomic writes."""
import json
import math
import os
import tempfile
from importlib import resources

from . import __version__

SCHEMA_FILE = "report_schema.json"


def sanitize(obj):
    """Recursively convert numpy scalars and tuples; non-finite floats become None."""
    if isinstance(obj, dict):
        return {str(k): sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        obj = obj.item()
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, (bool, int, str)) or obj is None:
        return obj
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def build_document(spec_label, config, outcomes=None, integrals=None, classification=None,
                   summary=None, extra=None):
    doc = {
        "tool_version": __version__,
        "spec_label": spec_label,
        "config": config,
        "outcomes": outcomes or [],
        "integrals": integrals,
        "classification": classification or [],
        "summary": summary or {},
    }
    if extra:
        doc.update(extra)
    return sanitize(doc)


def to_json(doc):
    """Canonical encoding; encoding a decoded report reproduces the same bytes."""
    return json.dumps(sanitize(doc), sort_keys=True, indent=2, ensure_ascii=False,
                      allow_nan=False) + "\n"


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        return f"{v:.3e}"
    return str(v)


def to_text(doc):
    """Human-readable table of the same data."""
    lines = [f"akv {doc['tool_version']}  spec: {doc['spec_label']}"]
    cfg = doc.get("config") or {}
    lines.append("config: " + ", ".join(f"{k}={_fmt(cfg[k])}" for k in sorted(cfg)
                                        if not isinstance(cfg[k], (dict, list))))
    summ = doc.get("summary") or {}
    if summ:
        lines.append("summary: " + ", ".join(f"{k}={_fmt(summ[k])}" for k in sorted(summ)
                                             if not isinstance(summ[k], (dict, list))))
    if doc.get("outcomes"):
        lines.append("")
        lines.append(f"{'identity':<10} {'points':>6} {'failed':>6} {'worst':>11} {'tolerance':>11}")
        groups = {}
        for o in doc["outcomes"]:
            groups.setdefault(o["id"], []).append(o)
        for tag, outs in groups.items():
            worst = max((o["residual"] for o in outs if o["residual"] is not None), default=None)
            failed = sum(not o["pass"] for o in outs)
            lines.append(f"{tag:<10} {len(outs):>6} {failed:>6} {_fmt(worst):>11} "
                         f"{_fmt(outs[0]['tolerance']):>11}")
    if doc.get("integrals"):
        lines.append("")
        ints = doc["integrals"]
        for k in sorted(ints):
            if isinstance(ints[k], dict):
                continue
            v = ints[k]
            shown = ", ".join(_fmt(x) for x in v) if isinstance(v, list) else _fmt(v)
            lines.append(f"{k:<10} {shown}")
    if doc.get("classification"):
        lines.append("")
        lines.append(f"{'result':<10} {'predicted':<28} {'consistent':<10} failed hypotheses")
        for e in doc["classification"]:
            failed = ", ".join(e["failed_hypotheses"]) or "-"
            if e["status"] != "evaluated":
                failed = e["status"]
            lines.append(f"{e['theorem']:<10} {e['predicted']:<28} {_fmt(e['consistent']):<10} {failed}")
    return "\n".join(lines) + "\n"


def render(doc, fmt="json"):
    if fmt == "json":
        return to_json(doc)
    if fmt == "text":
        return to_text(doc)
    raise ValueError(f"unknown format {fmt!r}")


def write_atomic(path, text):
    """Write via a temporary file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".akv-", suffix=".tmp", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit_report(doc, fmt="json", path=None, stream=None):
    """Render ``doc``; write it atomically to ``path`` or to ``stream``."""
    text = render(doc, fmt)
    if path:
        write_atomic(path, text)
    elif stream is not None:
        stream.write(text)
    return text


def load_schema():
    with resources.files("akv").joinpath(SCHEMA_FILE).open(encoding="utf-8") as fh:
        return json.load(fh)
