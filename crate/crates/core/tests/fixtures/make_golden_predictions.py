"""Write golden_predictions.bin with the standard library only.

Layout (little-endian): b"TAAP", u32 version, u32 id length, id bytes,
u32 count, then per prediction u64 sample id and two maps (theta_ce,
theta_delta). Each map: u8 kind, u8 dtype (1 = f32), u16 reserved,
u32 rows, u32 cols, u32 crc32 of the payload, row-major f32 payload.
"""

import json
import struct
import zlib
from pathlib import Path

ROWS, COLS = 41, 41
KIND_CE, KIND_DELTA = 2, 3
DTYPE_F32 = 1
MODEL_ID = "golden-unet"
SAMPLE_IDS = [3, 17, 42]


def value(sample_id, channel, i, j):
    return ((sample_id * 7 + channel * 13 + i * COLS + j) % 97) / 96.0


def map_bytes(kind, sample_id, channel):
    payload = b"".join(
        struct.pack("<f", value(sample_id, channel, i, j)) for i in range(ROWS) for j in range(COLS)
    )
    header = struct.pack("<BBHIII", kind, DTYPE_F32, 0, ROWS, COLS, zlib.crc32(payload))
    return header + payload


def main():
    here = Path(__file__).resolve().parent
    out = bytearray(b"TAAP")
    out += struct.pack("<I", 1)
    mid = MODEL_ID.encode()
    out += struct.pack("<I", len(mid)) + mid
    out += struct.pack("<I", len(SAMPLE_IDS))
    for sid in SAMPLE_IDS:
        out += struct.pack("<Q", sid)
        out += map_bytes(KIND_CE, sid, 0)
        out += map_bytes(KIND_DELTA, sid, 1)
    (here / "golden_predictions.bin").write_bytes(bytes(out))
    meta = {"model_id": MODEL_ID, "seed": 0, "budget": 0, "sample_ids": SAMPLE_IDS}
    (here / "golden_predictions.json").write_text(json.dumps(meta, indent=2) + "\n")


if __name__ == "__main__":
    main()
