"""Write a contact sheet of one sign per class and domain, plus the element images.

Run: python3 demos/render_samples.py [out.png]
"""

import sys

import numpy as np

from kgv.synth import generate, load_spec, write_png

out = sys.argv[1] if len(sys.argv) > 1 else "samples.png"
bench = load_spec()
data = generate(bench, {"A": {"test": 1}, "B": {"test": 1}}, seed=0, per_element=1)

rows = []
for domain in ("A", "B", "element"):
    imgs = data.select(domain=domain).images
    rows.append(np.concatenate(list(imgs), axis=1))
width = max(r.shape[1] for r in rows)
sheet = np.concatenate([np.pad(r, ((0, 0), (0, width - r.shape[1]), (0, 0)), constant_values=255) for r in rows])
write_png(out, sheet)
print(f"wrote {out} ({sheet.shape[1]}x{sheet.shape[0]})")
