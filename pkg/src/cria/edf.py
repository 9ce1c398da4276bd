"""Minimal EDF reader and writer.

Only what ingestion needs: the fixed 256-byte header, the per-signal header
blocks, and 16-bit little-endian data records with physical calibration.
Annotation signals are skipped. Parsing is fail-closed: any inconsistency
raises ``ParseError`` with the byte offset of the offending field and no
partial recording is returned.
"""

from __future__ import annotations

import numpy as np

from .dsp import EegRecording
from .errors import DataFormatError, ParseError

HEADER_BYTES = 256
ANNOTATION_LABEL = "EDF Annotations"

# (name, width) of the fixed header fields, in file order
_FIXED = (
    ("version", 8),
    ("patient", 80),
    ("recording", 80),
    ("startdate", 8),
    ("starttime", 8),
    ("header_bytes", 8),
    ("reserved", 44),
    ("n_records", 8),
    ("record_seconds", 8),
    ("n_signals", 4),
)

# per-signal fields, each stored as n_signals consecutive entries
_SIGNAL = (
    ("label", 16),
    ("transducer", 80),
    ("unit", 8),
    ("phys_min", 8),
    ("phys_max", 8),
    ("dig_min", 8),
    ("dig_max", 8),
    ("prefilter", 80),
    ("samples", 8),
    ("reserved", 32),
)
SIGNAL_HEADER_BYTES = sum(w for _, w in _SIGNAL)


def _number(raw, offset, name, kind=float):
    text = raw.decode("ascii", errors="replace").strip()
    try:
        return kind(text) if kind is float else int(text)
    except ValueError:
        raise ParseError(f"field {name!r} is not numeric: {text!r}", offset) from None


def read_header(buf):
    """Parse both header blocks; returns (fixed dict, list of per-signal dicts)."""
    if len(buf) < HEADER_BYTES:
        raise ParseError(f"truncated header: {len(buf)} of {HEADER_BYTES} bytes", len(buf))
    fixed, pos = {}, 0
    for name, width in _FIXED:
        fixed[name] = (buf[pos : pos + width], pos)
        pos += width
    head = {name: raw.decode("ascii", errors="replace").strip() for name, (raw, _) in fixed.items()}
    for name in ("header_bytes", "n_records", "n_signals"):
        head[name] = _number(*fixed[name], name, int)
    head["record_seconds"] = _number(*fixed["record_seconds"], "record_seconds")
    ns = head["n_signals"]
    if ns < 0:
        raise ParseError(f"negative signal count {ns}", fixed["n_signals"][1])
    need = HEADER_BYTES + ns * SIGNAL_HEADER_BYTES
    if len(buf) < need:
        raise ParseError(f"header declares {ns} signals ({need} header bytes) but file has {len(buf)}", len(buf))
    if head["header_bytes"] != need:
        raise ParseError(f"header size field says {head['header_bytes']}, expected {need}", fixed["header_bytes"][1])
    signals = [{} for _ in range(ns)]
    for name, width in _SIGNAL:
        for i in range(ns):
            raw = buf[pos : pos + width]
            if name in ("phys_min", "phys_max"):
                signals[i][name] = _number(raw, pos, name)
            elif name in ("dig_min", "dig_max", "samples"):
                signals[i][name] = _number(raw, pos, name, int)
            else:
                signals[i][name] = raw.decode("ascii", errors="replace").strip()
            signals[i][name + "_offset"] = pos
            pos += width
    for s in signals:
        if s["samples"] < 0:
            raise ParseError(f"negative samples per record for {s['label']!r}", s["samples_offset"])
        if s["dig_max"] <= s["dig_min"]:
            raise ParseError(f"digital range of {s['label']!r} is empty", s["dig_max_offset"])
    return head, signals


def parse_edf_bytes(buf) -> EegRecording:
    head, signals = read_header(buf)
    per_record = sum(s["samples"] for s in signals)
    payload = len(buf) - head["header_bytes"]
    n_rec = head["n_records"]
    if n_rec == -1 and per_record:  # unknown duration: infer from file size
        n_rec = payload // (2 * per_record)
    if n_rec < 0 or payload != 2 * per_record * n_rec:
        raise ParseError(
            f"{n_rec} records of {2 * per_record} bytes do not match the {payload} data bytes",
            head["header_bytes"],
        )
    keep = [i for i, s in enumerate(signals) if s["label"] != ANNOTATION_LABEL]
    if not keep:
        raise DataFormatError("file contains no data signals")
    counts = {signals[i]["samples"] for i in keep}
    if len(counts) != 1:
        raise DataFormatError(f"data signals have different sample counts per record: {sorted(counts)}")
    if head["record_seconds"] <= 0:
        raise ParseError("record duration must be positive", 244)
    rate = counts.pop() / head["record_seconds"]
    raw = np.frombuffer(buf, dtype="<i2", offset=head["header_bytes"]).reshape(n_rec, per_record)
    starts = np.cumsum([0] + [s["samples"] for s in signals])
    data = np.empty((len(keep), n_rec * signals[keep[0]]["samples"]))
    for row, i in enumerate(keep):
        s = signals[i]
        digital = raw[:, starts[i] : starts[i + 1]].reshape(-1).astype(np.float64)
        gain = (s["phys_max"] - s["phys_min"]) / (s["dig_max"] - s["dig_min"])
        data[row] = (digital - s["dig_min"]) * gain + s["phys_min"]
    return EegRecording([signals[i]["label"] for i in keep], rate, data)


def parse_edf(path) -> EegRecording:
    with open(path, "rb") as fh:
        return parse_edf_bytes(fh.read())


def _field(value, width):
    text = value if isinstance(value, str) else f"{value:g}" if isinstance(value, float) else str(value)
    if len(text) > width:
        raise ValueError(f"{text!r} does not fit in {width} characters")
    return text.ljust(width).encode("ascii")


def write_edf_bytes(rec: EegRecording, record_seconds=1.0, dig_range=(-32768, 32767), phys_range=None) -> bytes:
    """Encode a recording as EDF; the trailing partial record (if any) is dropped."""
    per_record = int(round(rec.sample_rate * record_seconds))
    if per_record <= 0:
        raise ValueError("record must hold at least one sample")
    c = len(rec.channel_names)
    n_rec = rec.n_samples // per_record
    d_lo, d_hi = dig_range
    if phys_range is None:
        lo = float(rec.data.min()) if rec.data.size else -1.0
        hi = float(rec.data.max()) if rec.data.size else 1.0
        if hi <= lo:
            lo, hi = lo - 1.0, hi + 1.0
        # round outward so the ascii fields keep the full range
        phys = [(float(f"{lo:.6g}") - abs(lo) * 1e-5, float(f"{hi:.6g}") + abs(hi) * 1e-5)] * c
    else:
        phys = [tuple(phys_range)] * c
    phys = [(float(f"{a:.6g}"), float(f"{b:.6g}")) for a, b in phys]
    header_bytes = HEADER_BYTES + c * SIGNAL_HEADER_BYTES
    fixed = b"".join(
        _field(v, w)
        for v, (_, w) in zip(
            ("0", "X X X X", "Startdate X X X X", "01.01.00", "00.00.00", header_bytes, "",
             n_rec, f"{record_seconds:g}", c),
            _FIXED,
        )
    )
    columns = {
        "label": list(rec.channel_names),
        "transducer": [""] * c,
        "unit": ["uV"] * c,
        "phys_min": [f"{p[0]:.6g}" for p in phys],
        "phys_max": [f"{p[1]:.6g}" for p in phys],
        "dig_min": [d_lo] * c,
        "dig_max": [d_hi] * c,
        "prefilter": [""] * c,
        "samples": [per_record] * c,
        "reserved": [""] * c,
    }
    sig = b"".join(_field(v, w) for name, w in _SIGNAL for v in columns[name])
    x = rec.data[:, : n_rec * per_record]
    digital = np.empty_like(x)
    for i, (p_lo, p_hi) in enumerate(phys):
        digital[i] = (x[i] - p_lo) * (d_hi - d_lo) / (p_hi - p_lo) + d_lo
    digital = np.clip(np.rint(digital), d_lo, d_hi).astype("<i2")
    records = digital.reshape(c, n_rec, per_record).transpose(1, 0, 2)
    return fixed + sig + records.tobytes()


def write_edf(path, rec: EegRecording, record_seconds=1.0, **kw):
    with open(path, "wb") as fh:
        fh.write(write_edf_bytes(rec, record_seconds, **kw))


def quantization_step(phys_min, phys_max, dig_min=-32768, dig_max=32767):
    return (phys_max - phys_min) / (dig_max - dig_min)
