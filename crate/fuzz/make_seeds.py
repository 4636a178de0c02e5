"""Regenerates the checked-in seed corpora under fuzz/corpus/."""

import json
import struct
from pathlib import Path

ROOT = Path(__file__).parent / "corpus"


def cpgt(dtype, dims, values):
    fmt = "<f" if dtype == 0 else "<i"
    head = b"CPGT" + bytes([1, dtype, len(dims), 0])
    head += b"".join(struct.pack("<I", d) for d in dims)
    return head + b"".join(struct.pack(fmt, v) for v in values)


def step_labels(h, w):
    return [int(j >= w // 2) for i in range(h) for j in range(w)]


def write(target, name, data):
    d = ROOT / target
    d.mkdir(parents=True, exist_ok=True)
    (d / name).write_bytes(data)


write("tensor_read", "f32_scalar", cpgt(0, [1], [0.0]))
write("tensor_read", "f32_rank0", cpgt(0, [], [1.5]))
write("tensor_read", "f32_chw", cpgt(0, [2, 2, 3], [i / 7 for i in range(12)]))
write("tensor_read", "i32_labels", cpgt(1, [4, 4], step_labels(4, 4)))
write("tensor_read", "empty_axis", cpgt(1, [3, 0], []))
write("tensor_read", "truncated", cpgt(0, [4], [1.0, 2.0])[:-3])

poles = {
    "height": 128, "width": 128, "background": 0, "classes": 2, "seed": 0,
    "shapes": [
        {"kind": "bar", "class": 1, "orientation": "vertical", "position": 4 + 8 * k,
         "thickness": 1, "start": 16, "length": 96}
        for k in range(16)
    ],
}
step = {
    "height": 16, "width": 16, "background": 0, "seed": 1,
    "shapes": [{"kind": "rect", "class": 1, "top": 0, "left": 8, "height": 16, "width": 8}],
}
mixed = {
    "height": 32, "width": 24, "background": 2, "seed": 7,
    "shapes": [
        {"kind": "disk", "class": 0, "center_row": 10, "center_col": 12, "radius": 6},
        {"kind": "bar", "class": 1, "orientation": "horizontal", "position": 20, "thickness": 3},
        {"kind": "rect", "class": 3, "top": 2, "left": 1, "height": 4, "width": 5},
    ],
}
for name, spec in [("poles", poles), ("step", step), ("mixed", mixed)]:
    write("scene_spec", name + ".json", json.dumps(spec, indent=1).encode())
write("scene_spec", "empty.json", b'{"height": 3, "width": 5, "background": 0}')

write("label_map", "step4", bytes([2, 255]) + cpgt(1, [4, 4], step_labels(4, 4)))
write("label_map", "ignored", bytes([3, 255]) + cpgt(1, [2, 3], [0, 255, 2, 1, 1, 255]))
write("label_map", "out_of_range", bytes([2, 255]) + cpgt(1, [2, 2], [0, 1, 2, 0]))
write("label_map", "wrong_dtype", bytes([2, 255]) + cpgt(0, [2, 2], [0.0, 1.0, 1.0, 0.0]))
