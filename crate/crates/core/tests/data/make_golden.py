"""Writes the hand-specified EDF fixtures used by the parser tests.

Every header field is padded here, independently of the Rust writer, and the
expected decoded values live in golden.json.
"""
import json
import struct
from pathlib import Path

HERE = Path(__file__).parent


def field(text, width):
    raw = text.encode("ascii")
    assert len(raw) <= width, text
    return raw + b" " * (width - len(raw))


def header(fixed, signals):
    ns = len(signals)
    out = b"".join(
        [
            field(fixed["version"], 8),
            field(fixed["patient_id"], 80),
            field(fixed["recording_id"], 80),
            field(fixed["start_date"], 8),
            field(fixed["start_time"], 8),
            field(str(256 * (1 + ns)), 8),
            field(fixed["reserved"], 44),
            field(str(fixed["n_records"]), 8),
            field(fixed["record_duration"], 8),
            field(str(ns), 4),
        ]
    )
    for key, width in [
        ("label", 16),
        ("transducer", 80),
        ("physical_dimension", 8),
        ("physical_min", 8),
        ("physical_max", 8),
        ("digital_min", 8),
        ("digital_max", 8),
        ("prefiltering", 80),
        ("samples_per_record", 8),
        ("reserved", 32),
    ]:
        out += b"".join(field(str(s[key]), width) for s in signals)
    assert len(out) == 256 * (1 + ns)
    return out


def signal(label, spr, pmin="-1024", pmax="1023.5", dmin="-2048", dmax="2047", dim="uV", prefilter="HP:0.1Hz"):
    return {
        "label": label,
        "transducer": "AgAgCl electrode",
        "physical_dimension": dim,
        "physical_min": pmin,
        "physical_max": pmax,
        "digital_min": dmin,
        "digital_max": dmax,
        "prefiltering": prefilter,
        "samples_per_record": spr,
        "reserved": "",
    }


def samples(values):
    return b"".join(struct.pack("<h", v) for v in values)


def tal_block(text, spr):
    raw = text.encode("utf-8")
    assert len(raw) <= 2 * spr
    return raw + b"\x00" * (2 * spr - len(raw))


golden = {}

# Plain EDF: two signals, two one-second records of four samples.
plain_fixed = {
    "version": "0",
    "patient_id": "golden-plain",
    "recording_id": "fixture one",
    "start_date": "18.10.26",
    "start_time": "12.34.56",
    "reserved": "",
    "n_records": 2,
    "record_duration": "1",
}
plain_signals = [signal("C3", 4), signal("C4", 4)]
plain_records = [([0, 1, -1, 2047], [-2048, 10, 20, 30]), ([4, 5, 6, 7], [-1, -2, -3, -4])]
body = b"".join(samples(a) + samples(b) for a, b in plain_records)
(HERE / "golden_plain.edf").write_bytes(header(plain_fixed, plain_signals) + body)
golden["golden_plain.edf"] = {
    "header": {**{k: v for k, v in plain_fixed.items()}, "n_records": "2", "header_bytes": "768", "n_signals": "2"},
    "signals": plain_signals,
    "fs": 4.0,
    "labels": ["C3", "C4"],
    # Physical = digital / 2 for this calibration.
    "samples": [[a[k] / 2, b[k] / 2] for a, b in plain_records for k in range(4)],
    "annotations": [],
}

# EDF+C: two signals plus an annotation channel, half-second records.
plus_fixed = {
    "version": "0",
    "patient_id": "X M 01-JAN-1970 Golden",
    "recording_id": "Startdate 18-OCT-2026 X X X",
    "start_date": "18.10.26",
    "start_time": "07.00.00",
    "reserved": "EDF+C",
    "n_records": 2,
    "record_duration": "0.5",
}
plus_signals = [
    signal("Fc5.", 2, pmin="-100", pmax="100", dmin="-32768", dmax="32767"),
    signal("C3..", 2, pmin="-100", pmax="100", dmin="-32768", dmax="32767"),
    signal("EDF Annotations", 30, pmin="-1", pmax="1", dmin="-32768", dmax="32767", dim="", prefilter=""),
]
plus_records = [
    ([-32768, 32767], [0, 1], "+0\x14\x14\x00+0.25\x151.25\x14T1\x14\x00"),
    ([100, -100], [7, -7], "+0.5\x14\x14\x00+0.75\x14T0\x14T2\x14\x00"),
]
body = b"".join(samples(a) + samples(b) + tal_block(t, 30) for a, b, t in plus_records)
(HERE / "golden_plus.edf").write_bytes(header(plus_fixed, plus_signals) + body)


def phys(d):
    return -100 + (d + 32768) * 200 / 65535


golden["golden_plus.edf"] = {
    "header": {**plus_fixed, "n_records": "2", "header_bytes": "1024", "n_signals": "3"},
    "signals": plus_signals,
    "fs": 4.0,
    "labels": ["Fc5.", "C3.."],
    "samples": [[phys(a[k]), phys(b[k])] for a, b, _ in plus_records for k in range(2)],
    "annotations": [
        {"onset": 0.25, "duration": 1.25, "code": "T1"},
        {"onset": 0.75, "duration": 0.0, "code": "T0"},
        {"onset": 0.75, "duration": 0.0, "code": "T2"},
    ],
}

for g in golden.values():
    for s in g["signals"]:
        s["samples_per_record"] = str(s["samples_per_record"])
(HERE / "golden.json").write_text(json.dumps(golden, indent=2) + "\n")
