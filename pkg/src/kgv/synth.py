"""Procedural road-sign-analog images and the element images of the KG.

Everything is rendered on a 32x32 RGB canvas from signed distance fields
(pixel centres at ``i + 0.5``). Colour values are drawn inside per-channel
bands and quantized to 8-bit levels that stay inside the band, so a PNG
round trip is lossless.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

SHAPES = ("circle", "triangle_up", "triangle_down", "diamond", "octagon")
PROVENANCE = ("real-analog", "synthetic-element")
ELEMENT_DOMAIN = "element"
RELATIONS = ("instanceOf", "hasShape", "hasLegend", "hasBackgroundColor", "hasBorderColor")


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class ColorSpec:
    name: str
    bands: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.bands) != 3 or any(not 0.0 <= lo <= hi <= 1.0 for lo, hi in self.bands):
            raise SynthError(f"invalid colour band for {self.name!r}: {self.bands}")

    def levels(self) -> tuple[np.ndarray, np.ndarray]:
        """Inclusive 8-bit level range per channel that lies inside the band."""
        lo = np.array([np.ceil(lo * 255 - 1e-9) for lo, _ in self.bands])
        hi = np.array([np.floor(hi * 255 + 1e-9) for _, hi in self.bands])
        return lo, hi

    def contains(self, pixels: np.ndarray) -> np.ndarray:
        px = pixels.reshape(-1, 3)
        ok = np.ones(len(px), dtype=bool)
        for c, (lo, hi) in enumerate(self.bands):
            ok &= (px[:, c] >= lo - 1e-12) & (px[:, c] <= hi + 1e-12)
        return ok


@dataclass(frozen=True)
class ShapeSpec:
    name: str
    thickness: tuple[int, int] = (1, 3)
    size: tuple[float, float] = (0.5, 0.85)   # circumradius as a fraction of half the canvas
    jitter: int = 3

    def __post_init__(self):
        if self.name not in SHAPES:
            raise SynthError(f"unknown shape {self.name!r}")


@dataclass(frozen=True)
class LegendSpec:
    name: str
    glyph: tuple[str, ...]
    scale: tuple[float, float] = (1.0, 2.2)
    jitter: int = 5

    def bitmap(self) -> np.ndarray:
        rows = {len(r) for r in self.glyph}
        if len(rows) != 1:
            raise SynthError(f"glyph {self.name!r} rows have unequal length")
        return np.array([[ch == "#" for ch in row] for row in self.glyph], dtype=bool)


@dataclass(frozen=True)
class SignClassSpec:
    name: str
    group: str
    shape: str
    background: str
    border: str
    legend: str | None
    legend_color: str
    domain: str


@dataclass(frozen=True)
class StyleSpec:
    domain: str
    scene: ColorSpec
    brightness: float = 0.15
    blur: float = 0.0   # probability of a 3x3 box blur


@dataclass
class BenchmarkSpec:
    canvas: int
    colors: dict[str, ColorSpec]
    shapes: dict[str, ShapeSpec]
    legends: dict[str, LegendSpec]
    class_names: list[str]
    classes: dict[str, dict[str, SignClassSpec]]   # domain -> class name -> spec
    styles: dict[str, StyleSpec]
    geometry: dict
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def domains(self) -> list[str]:
        return list(self.classes)

    def element_names(self) -> dict[str, list[str]]:
        return {"color": list(self.colors), "shape": list(self.shapes), "legend": list(self.legends)}

    def sign(self, domain: str, name: str) -> SignClassSpec:
        try:
            return self.classes[domain][name]
        except KeyError:
            raise SynthError(f"no class {name!r} in domain {domain!r}") from None


def parse_spec(raw: dict) -> BenchmarkSpec:
    colors = {n: ColorSpec(n, tuple(tuple(b) for b in bands)) for n, bands in raw["colors"].items()}
    shapes = {n: ShapeSpec(n, tuple(s["thickness"]), tuple(s["size"]), s["jitter"])
              for n, s in raw["shapes"].items()}
    ld = raw.get("legend_defaults", {})
    legends = {n: LegendSpec(n, tuple(g), tuple(ld.get("scale", (1.0, 2.2))), ld.get("jitter", 5))
               for n, g in raw["legends"].items()}
    names = [c["name"] for c in raw["classes"]]
    if len(set(names)) != len(names):
        raise SynthError("duplicate class names in benchmark spec")
    classes, styles = {}, {}
    for domain, dspec in raw["domains"].items():
        pal = dspec["palette"]
        classes[domain] = {}
        for c in raw["classes"]:
            colors_for = pal.get(c["name"]) or pal.get(c["group"])
            if colors_for is None:
                raise SynthError(f"domain {domain!r} has no palette for {c['name']!r}")
            spec = SignClassSpec(c["name"], c["group"], c["shape"], colors_for["background"],
                                 colors_for["border"], c["legend"], colors_for["legend"], domain)
            for k in (spec.background, spec.border, spec.legend_color):
                if k not in colors:
                    raise SynthError(f"unknown colour {k!r}")
            if spec.shape not in shapes:
                raise SynthError(f"unknown shape {spec.shape!r}")
            if spec.legend is not None and spec.legend not in legends:
                raise SynthError(f"unknown legend {spec.legend!r}")
            classes[domain][c["name"]] = spec
        styles[domain] = StyleSpec(domain, ColorSpec(f"scene-{domain}", tuple(tuple(b) for b in dspec["scene"])),
                                   dspec.get("brightness", 0.15), dspec.get("blur", 0.0))
    return BenchmarkSpec(raw.get("canvas", 32), colors, shapes, legends, names, classes, styles,
                         raw["sign_geometry"], raw)


def load_spec(path=None) -> BenchmarkSpec:
    """Load a benchmark spec file; the packaged default when ``path`` is None."""
    if path is None:
        text = resources.files("kgv").joinpath("data/benchmark.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_spec(json.loads(text))


# -- rasterization ------------------------------------------------------------------


def pixel_grid(size: int = 32):
    c = np.arange(size) + 0.5
    return np.meshgrid(c, c)  # xs, ys


def shape_vertices(name: str, cx: float, cy: float, radius: float) -> np.ndarray:
    if name == "triangle_up":
        angles = np.deg2rad([-90.0, 30.0, 150.0])
    elif name == "triangle_down":
        angles = np.deg2rad([90.0, 210.0, 330.0])
    elif name == "diamond":
        angles = np.deg2rad([-90.0, 0.0, 90.0, 180.0])
    elif name == "octagon":
        angles = np.deg2rad(22.5 + 45.0 * np.arange(8))
    else:
        raise SynthError(f"{name!r} is not a polygon")
    v = np.stack([cx + radius * np.cos(angles), cy + radius * np.sin(angles)], axis=1)
    # snap float noise from cos/sin so mirror-symmetric specs render symmetrically
    return np.round(v, 9)


def shape_sdf(name: str, cx: float, cy: float, radius: float, size: int = 32) -> np.ndarray:
    """Signed distance of every pixel centre to the shape boundary (negative inside)."""
    xs, ys = pixel_grid(size)
    if name == "circle":
        return np.hypot(xs - cx, ys - cy) - radius
    v = shape_vertices(name, cx, cy, radius)
    p = np.stack([xs, ys], axis=-1)[..., None, :]            # (H, W, 1, 2)
    a, b = v, np.roll(v, -1, axis=0)                          # edges a -> b
    ab = b - a
    t = np.clip(((p - a) * ab).sum(-1) / (ab * ab).sum(-1), 0.0, 1.0)
    dist = np.linalg.norm(p - (a + t[..., None] * ab), axis=-1).min(axis=-1)
    # convex polygon: inside iff on the same side of every edge as the centroid
    cross = ab[:, 0] * (p[..., 1] - a[:, 1]) - ab[:, 1] * (p[..., 0] - a[:, 0])
    c = v.mean(axis=0)
    ref = ab[:, 0] * (c[1] - a[:, 1]) - ab[:, 1] * (c[0] - a[:, 0])
    inside = np.all(cross * np.sign(ref) > 0, axis=-1)
    return np.where(inside, -dist, dist)


def quantize_in_band(values: np.ndarray, color: ColorSpec) -> np.ndarray:
    lo, hi = color.levels()
    return np.clip(np.round(values * 255.0), lo, hi) / 255.0


def sample_color(rng, color: ColorSpec, n: int, noise: float = 0.03) -> np.ndarray:
    """``n`` pixels around one base colour drawn inside the band."""
    lo = np.array([b[0] for b in color.bands])
    hi = np.array([b[1] for b in color.bands])
    base = rng.uniform(lo, hi)
    px = base + rng.uniform(-noise, noise, size=(n, 3))
    return quantize_in_band(np.clip(px, lo, hi), color)


def _overlap(n_out: int, n_in: int) -> np.ndarray:
    """(n_out, n_in) fraction of each output cell covered by each input cell."""
    edges_out = np.arange(n_out + 1) * (n_in / n_out)
    lo = np.maximum(edges_out[:-1, None], np.arange(n_in)[None, :])
    hi = np.minimum(edges_out[1:, None], np.arange(1, n_in + 1)[None, :])
    return np.clip(hi - lo, 0.0, None) * (n_out / n_in)


def resize_glyph(bitmap: np.ndarray, height: int, width: int) -> np.ndarray:
    """Area resampling of a boolean bitmap: ink where at least half of the pixel is covered."""
    h, w = bitmap.shape
    cover = _overlap(height, h) @ bitmap.astype(np.float64) @ _overlap(width, w).T
    return cover >= 0.5 - 1e-9


def glyph_mask(bitmap: np.ndarray, height: int, width: int, top: int, left: int, size: int = 32) -> np.ndarray:
    mask = np.zeros((size, size), dtype=bool)
    g = resize_glyph(bitmap, height, width)
    mask[top:top + height, left:left + width] = g
    return mask


def _rng(seed, *stream):
    return np.random.default_rng([int(seed), *[int(s) for s in stream]])


def _lookup(table: dict, name: str, what: str):
    try:
        return table[name]
    except KeyError:
        raise SynthError(f"unknown {what} {name!r}") from None


# -- element images --------------------------------------------------------------------


def gen_color_image(spec: ColorSpec | str, seed, colors: dict | None = None, size: int = 32) -> np.ndarray:
    if isinstance(spec, str):
        spec = _lookup(colors if colors is not None else load_spec().colors, spec, "colour")
    rng = _rng(seed, 1)
    return sample_color(rng, spec, size * size).reshape(size, size, 3)


def shape_params(spec: ShapeSpec, seed, size: int = 32) -> dict:
    half = size / 2.0
    t_lo, t_hi = spec.thickness
    r_min = spec.size[0] * half
    if r_min + t_hi / 2.0 + spec.jitter > half - 0.5:
        raise SynthError(f"shape {spec.name!r}: minimum size {spec.size[0]} cannot fit with jitter {spec.jitter}")
    rng = _rng(seed, 2)
    thickness = int(rng.integers(t_lo, t_hi + 1))
    r_max = min(spec.size[1] * half, half - 0.5 - thickness / 2.0 - spec.jitter)
    radius = float(rng.uniform(r_min, max(r_min, r_max)))
    dx, dy = (int(v) for v in rng.integers(-spec.jitter, spec.jitter + 1, size=2))
    return {"cx": half + dx, "cy": half + dy, "radius": radius, "thickness": thickness}


def gen_shape_image(spec: ShapeSpec, seed, size: int = 32, return_info: bool = False):
    """Black outline of the shape on a white canvas."""
    info = shape_params(spec, seed, size)
    sd = shape_sdf(spec.name, info["cx"], info["cy"], info["radius"], size)
    outline = np.abs(sd) <= info["thickness"] / 2.0
    img = np.ones((size, size, 3))
    img[outline] = 0.0
    return (img, {**info, "mask": outline}) if return_info else img


def legend_params(spec: LegendSpec, seed, size: int = 32) -> dict:
    h, w = spec.bitmap().shape
    max_side = int(round(max(h, w) * spec.scale[1]))
    if max_side + 2 * spec.jitter > size:
        raise SynthError(f"legend {spec.name!r} overflows the canvas with jitter {spec.jitter}")
    rng = _rng(seed, 3)
    scale = float(rng.uniform(*spec.scale))
    gh, gw = max(1, int(round(h * scale))), max(1, int(round(w * scale)))
    top0, left0 = (size - gh) // 2, (size - gw) // 2
    dy, dx = (int(v) for v in rng.integers(-spec.jitter, spec.jitter + 1, size=2))
    top = int(np.clip(top0 + dy, 0, size - gh))
    left = int(np.clip(left0 + dx, 0, size - gw))
    return {"scale": scale, "height": gh, "width": gw, "top": top, "left": left}


def gen_legend_image(spec: LegendSpec, seed, size: int = 32, return_info: bool = False):
    """Black glyph, randomly resized and placed, on a white canvas."""
    info = legend_params(spec, seed, size)
    mask = glyph_mask(spec.bitmap(), info["height"], info["width"], info["top"], info["left"], size)
    img = np.ones((size, size, 3))
    img[mask] = 0.0
    return (img, {**info, "mask": mask}) if return_info else img


# -- composed signs --------------------------------------------------------------------


def sign_params(spec: SignClassSpec, bench: BenchmarkSpec, seed) -> dict:
    g = bench.geometry
    size = bench.canvas
    half = size / 2.0
    rng = _rng(seed, 4)
    radius = float(rng.uniform(*g["size"])) * half
    border = float(rng.uniform(*g["border"]))
    jit = min(g["jitter"], int(np.floor(half - radius)))
    dx, dy = (int(v) for v in rng.integers(-jit, jit + 1, size=2))
    info = {"cx": half + dx, "cy": half + dy, "radius": radius, "border": border}
    if spec.legend is not None:
        bmp = bench.legends[spec.legend].bitmap()
        side = max(3, int(round(2 * radius * g["legend_fraction"][spec.shape] / np.sqrt(2))))
        gh = side
        gw = max(1, int(round(side * bmp.shape[1] / bmp.shape[0])))
        lj = g.get("legend_jitter", 0)
        ly, lx = (int(v) for v in rng.integers(-lj, lj + 1, size=2))
        offset = g.get("legend_offset", {}).get(spec.shape, 0.0) * radius
        top = int(np.clip(round(info["cy"] + offset - gh / 2.0) + ly, 0, size - gh))
        left = int(np.clip(round(info["cx"] - gw / 2.0) + lx, 0, size - gw))
        info.update(legend_height=gh, legend_width=gw, legend_top=top, legend_left=left)
    return info


def sign_regions(spec: SignClassSpec, bench: BenchmarkSpec, info: dict) -> dict[str, np.ndarray]:
    size = bench.canvas
    sd = shape_sdf(spec.shape, info["cx"], info["cy"], info["radius"], size)
    regions = {"outside": sd > 0, "border": (sd <= 0) & (sd >= -info["border"]), "interior": sd < -info["border"]}
    if spec.legend is not None:
        legend = glyph_mask(bench.legends[spec.legend].bitmap(), info["legend_height"], info["legend_width"],
                            info["legend_top"], info["legend_left"], size)
        regions["legend"] = legend
    else:
        regions["legend"] = np.zeros((size, size), dtype=bool)
    return regions


def blur3(img: np.ndarray) -> np.ndarray:
    p = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="edge")
    h, w = img.shape[:2]
    return sum(p[i:i + h, j:j + w] for i in range(3) for j in range(3)) / 9.0


def compose_sign(spec: SignClassSpec, bench: BenchmarkSpec, seed, photometric: bool = True,
                 return_info: bool = False):
    """Background fill inside the shape, border band, legend overlay, then domain style noise."""
    size = bench.canvas
    info = sign_params(spec, bench, seed)
    regions = sign_regions(spec, bench, info)
    rng = _rng(seed, 5)
    style = bench.styles[spec.domain]
    img = np.zeros((size, size, 3))
    layers = [("outside", style.scene), ("interior", bench.colors[spec.background]),
              ("border", bench.colors[spec.border]), ("legend", bench.colors[spec.legend_color])]
    for region, color in layers:
        m = regions[region]
        if region == "legend":
            m = m & ~regions["outside"]
        colors = sample_color(rng, color, size * size)
        img[m] = colors[m.reshape(-1)]
        if region == "legend":
            regions["interior"] = regions["interior"] & ~m
            regions["border"] = regions["border"] & ~m
    if photometric:
        img = img * rng.uniform(1.0 - style.brightness, 1.0 + style.brightness)
        if rng.uniform() < style.blur:
            img = blur3(img)
        img = np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
    return (img, {**info, "regions": regions}) if return_info else img


# -- datasets -------------------------------------------------------------------------


@dataclass
class ImageSet:
    """In-memory images (uint8 NHWC) with one manifest record per image."""

    images: np.ndarray
    records: list[dict]
    classes: list[str]
    class_nodes: dict[str, dict[str, str]]   # domain -> class name -> KG entity name

    def select(self, **criteria) -> "ImageSet":
        idx = [i for i, r in enumerate(self.records) if all(r[k] == v for k, v in criteria.items())]
        return self.subset(idx)

    def subset(self, idx) -> "ImageSet":
        idx = list(idx)
        return ImageSet(self.images[idx], [self.records[i] for i in idx], self.classes, self.class_nodes)

    def __len__(self):
        return len(self.records)

    def float_images(self, dtype=np.float32) -> np.ndarray:
        return self.images.astype(dtype) / 255.0

    def class_indices(self) -> np.ndarray:
        """Decoder index per record, -1 for element images."""
        lookup = {c: i for i, c in enumerate(self.classes)}
        return np.array([lookup.get(r["label"], -1) if r["provenance"] == "real-analog" else -1
                         for r in self.records], dtype=np.int64)


def _to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(img * 255.0).astype(np.uint8)


def element_images(bench: BenchmarkSpec, per_element: int, seed) -> tuple[list[np.ndarray], list[dict]]:
    images, records = [], []
    for kind_idx, (kind, names) in enumerate(bench.element_names().items()):
        for name_idx, name in enumerate(names):
            for i in range(per_element):
                s = [seed, 7, kind_idx, name_idx, i]
                s_int = int(np.random.SeedSequence(s).generate_state(1)[0])
                if kind == "color":
                    img = gen_color_image(bench.colors[name], s_int, size=bench.canvas)
                elif kind == "shape":
                    img = gen_shape_image(bench.shapes[name], s_int, size=bench.canvas)
                else:
                    img = gen_legend_image(bench.legends[name], s_int, size=bench.canvas)
                images.append(_to_uint8(img))
                records.append({"path": f"images/element/{kind}/{name}_{i:04d}.png", "label": name,
                                "domain": ELEMENT_DOMAIN, "provenance": "synthetic-element", "split": "train",
                                "kind": kind})
    return images, records


def generate(bench: BenchmarkSpec, counts: dict[str, dict[str, int]], seed=0, per_element: int = 20) -> ImageSet:
    """Render the whole benchmark in memory.

    ``counts`` maps domain -> split -> images per class, e.g.
    ``{"A": {"train": 100, "test": 30}, "B": {"test": 100}}``.
    """
    if len(bench.class_names) < 2:
        raise SynthError("a benchmark needs at least 2 classes")
    images, records = [], []
    domain_ids = {d: i for i, d in enumerate(bench.domains)}
    split_ids = {"train": 0, "val": 1, "test": 2}
    for domain, splits in counts.items():
        if domain not in bench.classes:
            raise SynthError(f"unknown domain {domain!r}")
        for split, n in splits.items():
            if split not in split_ids:
                raise SynthError(f"unknown split {split!r}")
            if n < 0:
                raise SynthError("per-class counts must be >= 0")
            for ci, name in enumerate(bench.class_names):
                spec = bench.sign(domain, name)
                for i in range(n):
                    s = int(np.random.SeedSequence([seed, 11, domain_ids[domain], split_ids[split], ci, i])
                            .generate_state(1)[0])
                    images.append(_to_uint8(compose_sign(spec, bench, s)))
                    records.append({"path": f"images/{domain}/{split}/{name}_{i:04d}.png", "label": name,
                                    "domain": domain, "provenance": "real-analog", "split": split})
    if per_element > 0:
        el_imgs, el_recs = element_images(bench, per_element, seed)
        images += el_imgs
        records += el_recs
    arr = np.stack(images) if images else np.zeros((0, bench.canvas, bench.canvas, 3), np.uint8)
    class_nodes = {d: {c: class_entity(c, d) for c in bench.class_names} for d in bench.domains}
    return ImageSet(arr, records, list(bench.class_names), class_nodes)


def class_entity(class_name: str, domain: str) -> str:
    return f"{class_name}@{domain}"


def benchmark_kg_text(bench: BenchmarkSpec) -> tuple[str, str]:
    """(triples_text, registry_text) of the road-sign-analog knowledge graph."""
    ent: list[tuple[str, str]] = []
    triples: list[tuple[str, str, str]] = []

    def add(name, kind="category"):
        if name not in {e for e, _ in ent}:
            ent.append((name, kind))

    add("RoadSign")
    add("RoadSignFeature")
    for group in ("Shape", "Color", "Legend"):
        add(group)
        triples.append((group, "instanceOf", "RoadSignFeature"))
    for kind, group, names in (("shape", "Shape", bench.shapes), ("color", "Color", bench.colors),
                               ("legend", "Legend", bench.legends)):
        for n in names:
            add(n, "element")
            triples.append((n, "instanceOf", group))
    groups_seen = []
    for name in bench.class_names:
        base = bench.sign(bench.domains[0], name)
        if base.group not in groups_seen:
            groups_seen.append(base.group)
            add(base.group)
            triples.append((base.group, "instanceOf", "RoadSign"))
        add(name)
        triples.append((name, "instanceOf", base.group))
        triples.append((name, "hasShape", base.shape))
        if base.legend is not None:
            triples.append((name, "hasLegend", base.legend))
    for domain in bench.domains:
        for name in bench.class_names:
            spec = bench.sign(domain, name)
            node = class_entity(name, domain)
            add(node)
            triples.append((node, "instanceOf", name))
            triples.append((node, "hasBackgroundColor", spec.background))
            triples.append((node, "hasBorderColor", spec.border))
    registry = [f"entity\t{n}\t{k}" for n, k in ent] + [f"relation\t{r}" for r in RELATIONS]
    return "\n".join("\t".join(t) for t in triples) + "\n", "\n".join(registry) + "\n"


def benchmark_kg(bench: BenchmarkSpec):
    from .kg import load_kg

    return load_kg(*benchmark_kg_text(bench))


# -- on-disk datasets -------------------------------------------------------------------


def write_png(path: Path | str, img_u8: np.ndarray):
    from PIL import Image

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img_u8, mode="RGB").save(path, format="PNG", optimize=False)


def read_png(path: Path | str) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def build_dataset(bench: BenchmarkSpec, counts, seed, out_dir, per_element: int = 20) -> Path:
    """Write PNGs, ``manifest.jsonl``, ``dataset.json`` and the KG files under ``out_dir``."""
    out = Path(out_dir)
    data = generate(bench, counts, seed, per_element)
    paths = [r["path"] for r in data.records]
    if len(set(paths)) != len(paths):
        raise SynthError("duplicate image paths in manifest")
    for img, rec in zip(data.images, data.records):
        write_png(out / rec["path"], img)
    fields = ("path", "label", "domain", "provenance", "split")
    with open(out / "manifest.jsonl", "w", encoding="utf-8") as f:
        for rec in data.records:
            f.write(json.dumps({k: rec[k] for k in fields}, sort_keys=True) + "\n")
    triples, registry = benchmark_kg_text(bench)
    (out / "kg").mkdir(exist_ok=True)
    (out / "kg" / "triples.tsv").write_text(triples, encoding="utf-8")
    (out / "kg" / "registry.tsv").write_text(registry, encoding="utf-8")
    meta = {
        "classes": data.classes,
        "class_nodes": data.class_nodes,
        "seed": seed,
        "counts": counts,
        "per_element": per_element,
        "spec": bench.raw,
        "sign_specs": {d: {c: vars(s) for c, s in cls.items()} for d, cls in bench.classes.items()},
    }
    (out / "dataset.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return out / "manifest.jsonl"


def load_dataset(data_dir) -> ImageSet:
    d = Path(data_dir)
    meta = json.loads((d / "dataset.json").read_text(encoding="utf-8"))
    records = []
    with open(d / "manifest.jsonl", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                records.append(json.loads(line))
    images = np.stack([read_png(d / r["path"]) for r in records]) if records else np.zeros((0, 32, 32, 3), np.uint8)
    labels = set(meta["classes"])
    for r in records:
        if r["provenance"] == "real-analog" and r["label"] not in labels:
            raise SynthError(f"label {r['label']!r} not in the declared class set")
    return ImageSet(images, records, meta["classes"], meta["class_nodes"])
