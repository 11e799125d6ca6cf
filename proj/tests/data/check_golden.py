"""Independent reader for the golden scene; exits non-zero on mismatch."""
import json
import pathlib
import struct
import sys

here = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else pathlib.Path(__file__).parent)
meta = json.loads((here / "golden_minimal.json").read_text())
assert list(meta) == ["scene_id", "points_file", "instances", "relationships"], list(meta)
raw = (here / meta["points_file"]).read_bytes()
assert raw[:8] == b"L3DPTS1\0"
(n,) = struct.unpack_from("<I", raw, 8)
assert len(raw) == 12 + 24 * n, "size"
pts = [struct.unpack_from("<6f", raw, 12 + 24 * k) for k in range(n)]

insts = meta["instances"]
assert len(insts) == 2 and len(meta["relationships"]) == 1
seen = set()
for inst in insts:
    idx = inst["point_indices"]
    assert idx == sorted(set(idx)) and idx, idx
    assert not seen & set(idx)
    seen |= set(idx)
    assert all(0 <= i < n for i in idx)
ids = {i["id"] for i in insts}
for r in meta["relationships"]:
    assert r["subject_id"] in ids and r["object_id"] in ids and r["subject_id"] != r["object_id"]

# bbox of instance 0 spans (1,1,0)-(2,2,0.75)
xs = [pts[i] for i in insts[0]["point_indices"]]
lo = [min(p[a] for p in xs) for a in range(3)]
hi = [max(p[a] for p in xs) for a in range(3)]
assert lo == [1.0, 1.0, 0.0] and hi == [2.0, 2.0, 0.75], (lo, hi)
print("golden scene ok:", n, "points,", len(insts), "instances")
