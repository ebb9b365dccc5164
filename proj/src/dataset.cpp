#include "pseqseg/dataset.hpp"

#include "pseqseg/png_io.hpp"
#include "pseqseg/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

namespace pseqseg {

namespace fs = std::filesystem;
using json = nlohmann::json;

void AnnotationSet::validate() const {
  std::set<int> image_ids;
  for (const auto& img : images) {
    if (!image_ids.insert(img.id).second) {
      throw CorruptAnnotationError("duplicate image id " + std::to_string(img.id));
    }
    if (img.height <= 0 || img.width <= 0) {
      throw CorruptAnnotationError("image " + std::to_string(img.id) + " has bad dimensions");
    }
  }
  std::set<int> category_ids;
  for (const auto& cat : categories) {
    if (!category_ids.insert(cat.id).second) {
      throw CorruptAnnotationError("duplicate category id " + std::to_string(cat.id));
    }
  }
  std::set<int> annotation_ids;
  for (const auto& ann : annotations) {
    if (!annotation_ids.insert(ann.id).second) {
      throw CorruptAnnotationError("duplicate annotation id " + std::to_string(ann.id));
    }
    if (!image_ids.count(ann.image_id)) {
      throw CorruptAnnotationError("annotation " + std::to_string(ann.id) +
                                   " references unknown image " + std::to_string(ann.image_id));
    }
    if (!category_ids.count(ann.category_id)) {
      throw CorruptAnnotationError("annotation " + std::to_string(ann.id) +
                                   " references unknown category " +
                                   std::to_string(ann.category_id));
    }
    std::uint64_t sum = 0;
    for (const auto run : ann.mask.runs) sum += run;
    if (sum != static_cast<std::uint64_t>(ann.mask.height) *
                   static_cast<std::uint64_t>(ann.mask.width)) {
      throw CorruptAnnotationError("annotation " + std::to_string(ann.id) + " has malformed RLE");
    }
  }
}

namespace {

struct Hsv {
  Scalar h, s, v;
};

std::array<Scalar, 3> hsv_to_rgb(const Hsv& hsv) {
  const Scalar h6 = hsv.h * 6.0;
  const int i = static_cast<int>(std::floor(h6)) % 6;
  const Scalar f = h6 - std::floor(h6);
  const Scalar p = hsv.v * (1 - hsv.s);
  const Scalar q = hsv.v * (1 - hsv.s * f);
  const Scalar t = hsv.v * (1 - hsv.s * (1 - f));
  switch (i) {
    case 0: return {hsv.v, t, p};
    case 1: return {q, hsv.v, p};
    case 2: return {p, hsv.v, t};
    case 3: return {p, q, hsv.v};
    case 4: return {t, p, hsv.v};
    default: return {hsv.v, p, q};
  }
}

ImageRGB tote_background(Index h, Index w, Rng& rng) {
  ImageRGB img(h, w);
  const Scalar base_v = rng.uniform(0.35, 0.55);
  const Scalar tint_r = rng.uniform(0.9, 1.1);
  const Scalar tint_b = rng.uniform(0.8, 1.0);
  const Scalar fu = rng.uniform(1.0, 3.0), fv = rng.uniform(1.0, 3.0);
  const Scalar phase = rng.uniform(0.0, 2 * M_PI);
  const Index border = std::max<Index>(2, std::min(h, w) / 14);
  for (Index v = 0; v < h; ++v) {
    for (Index u = 0; u < w; ++u) {
      const Scalar texture =
          0.05 * std::sin(2 * M_PI * fu * u / static_cast<Scalar>(w) + phase) *
          std::cos(2 * M_PI * fv * v / static_cast<Scalar>(h));
      const Scalar noise = 0.03 * (rng.uniform() - 0.5);
      const bool wall = v < border || u < border || v >= h - border || u >= w - border;
      const Scalar shade = wall ? 0.6 : 1.0;
      const Scalar val = std::clamp<Scalar>((base_v + texture + noise) * shade, 0.0, 1.0);
      img.ch[0](v, u) = std::clamp<Scalar>(val * tint_r, 0.0, 1.0);
      img.ch[1](v, u) = val;
      img.ch[2](v, u) = std::clamp<Scalar>(val * tint_b, 0.0, 1.0);
    }
  }
  return img;
}

struct Shape {
  int kind = 0;  // 0 ellipse, 1 rectangle, 2 polygon
  Scalar cx = 0, cy = 0;
  Scalar a = 0, b = 0;  // half extents
  Scalar theta = 0;
  std::vector<std::pair<Scalar, Scalar>> poly;  // for kind == 2
  std::array<Scalar, 3> color{};
  Scalar grad_angle = 0, grad_strength = 0;
};

bool point_in_polygon(const std::vector<std::pair<Scalar, Scalar>>& poly, Scalar x, Scalar y) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& [xi, yi] = poly[i];
    const auto& [xj, yj] = poly[j];
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) inside = !inside;
  }
  return inside;
}

bool inside_shape(const Shape& s, Scalar u, Scalar v) {
  const Scalar dx = u - s.cx, dy = v - s.cy;
  const Scalar x = dx * std::cos(-s.theta) - dy * std::sin(-s.theta);
  const Scalar y = dx * std::sin(-s.theta) + dy * std::cos(-s.theta);
  switch (s.kind) {
    case 0: return (x * x) / (s.a * s.a) + (y * y) / (s.b * s.b) <= 1.0;
    case 1: return std::abs(x) <= s.a && std::abs(y) <= s.b;
    default: return point_in_polygon(s.poly, x, y);
  }
}

BinaryMask rasterize(const Shape& s, Index h, Index w) {
  BinaryMask m(h, w);
  const Scalar r = std::max(s.a, s.b) + 1;
  const Index u0 = std::max<Index>(0, static_cast<Index>(std::floor(s.cx - r)));
  const Index u1 = std::min<Index>(w - 1, static_cast<Index>(std::ceil(s.cx + r)));
  const Index v0 = std::max<Index>(0, static_cast<Index>(std::floor(s.cy - r)));
  const Index v1 = std::min<Index>(h - 1, static_cast<Index>(std::ceil(s.cy + r)));
  for (Index v = v0; v <= v1; ++v) {
    for (Index u = u0; u <= u1; ++u) {
      if (inside_shape(s, static_cast<Scalar>(u), static_cast<Scalar>(v))) m.values(v, u) = 1;
    }
  }
  return m;
}

void paint_shape(ImageRGB& img, const Shape& s, const BinaryMask& mask, Rng& rng) {
  const Scalar gu = std::cos(s.grad_angle), gv = std::sin(s.grad_angle);
  const Scalar span = std::max(s.a, s.b);
  for (Index v = 0; v < img.height(); ++v) {
    for (Index u = 0; u < img.width(); ++u) {
      if (!mask.values(v, u)) continue;
      const Scalar proj = ((u - s.cx) * gu + (v - s.cy) * gv) / span;
      const Scalar shade = 1.0 + s.grad_strength * proj + 0.02 * (rng.uniform() - 0.5);
      for (int c = 0; c < 3; ++c) {
        img.ch[c](v, u) = std::clamp<Scalar>(s.color[c] * shade, 0.0, 1.0);
      }
    }
  }
}

}  // namespace

AnnotationSet gen_shapes_dataset(const std::string& out_dir, int n_images, std::uint64_t seed,
                                 const ShapesConfig& config) {
  if (n_images < 1) throw ConfigError("gen_shapes_dataset: n_images must be >= 1");
  if (config.min_instances < 1 || config.max_instances < config.min_instances) {
    throw ConfigError("gen_shapes_dataset: bad instance bounds");
  }
  fs::create_directories(fs::path(out_dir) / "images");

  AnnotationSet set;
  set.categories.push_back(CategoryRecord{1, "object"});
  int next_ann_id = 1;

  const Index h = config.height, w = config.width;
  const Scalar base = static_cast<Scalar>(std::min(h, w));

  for (int idx = 0; idx < n_images; ++idx) {
    Rng rng(seed, 0x696d616765ULL, static_cast<std::uint64_t>(idx));
    ImageRGB img = tote_background(h, w, rng);

    const int target_count =
        static_cast<int>(rng.uniform_int(config.min_instances, config.max_instances));

    std::vector<BinaryMask> amodal;
    std::vector<BinaryMask> visible;
    std::vector<Index> areas;
    std::vector<Shape> shapes;

    for (int k = 0; k < target_count; ++k) {
      bool placed = false;
      for (int attempt = 0; attempt < 30 && !placed; ++attempt) {
        Shape s;
        s.kind = static_cast<int>(rng.uniform_int(0, 2));
        s.a = 0.5 * base * rng.uniform(config.min_size_frac, config.max_size_frac);
        s.b = 0.5 * base * rng.uniform(config.min_size_frac, config.max_size_frac);
        s.cx = rng.uniform(0.12, 0.88) * static_cast<Scalar>(w);
        s.cy = rng.uniform(0.12, 0.88) * static_cast<Scalar>(h);
        s.theta = rng.uniform(0.0, M_PI);
        if (s.kind == 2) {
          const int sides = static_cast<int>(rng.uniform_int(5, 7));
          std::vector<Scalar> angles(sides);
          for (auto& a : angles) a = rng.uniform(0.0, 2 * M_PI);
          std::sort(angles.begin(), angles.end());
          const Scalar r = std::max(s.a, s.b);
          for (const Scalar a : angles) {
            const Scalar rr = r * rng.uniform(0.6, 1.0);
            s.poly.emplace_back(rr * std::cos(a), rr * std::sin(a));
          }
        }
        const Hsv hsv{rng.uniform(0.0, 1.0), rng.uniform(0.55, 0.95), rng.uniform(0.45, 0.95)};
        s.color = hsv_to_rgb(hsv);
        s.grad_angle = rng.uniform(0.0, 2 * M_PI);
        s.grad_strength = rng.uniform(0.05, 0.25);

        BinaryMask mask = rasterize(s, h, w);
        if (mask.area() < 16) continue;
        // Keep every earlier instance visible enough after this paint.
        bool ok = true;
        for (std::size_t i = 0; i < visible.size(); ++i) {
          const auto covered =
              (visible[i].values.cast<std::int64_t>() * mask.values.cast<std::int64_t>()).sum();
          const Index left = visible[i].area() - static_cast<Index>(covered);
          if (static_cast<Scalar>(left) <
              config.min_visible_frac * static_cast<Scalar>(areas[i])) {
            ok = false;
            break;
          }
        }
        if (!ok) continue;

        for (std::size_t i = 0; i < visible.size(); ++i) {
          visible[i].values =
              (visible[i].values.cast<int>() * (1 - mask.values.cast<int>())).cast<std::uint8_t>();
        }
        paint_shape(img, s, mask, rng);
        areas.push_back(mask.area());
        visible.push_back(mask);
        amodal.push_back(std::move(mask));
        shapes.push_back(std::move(s));
        placed = true;
      }
    }

    char name[32];
    std::snprintf(name, sizeof(name), "%06d.png", idx);
    const std::string file = std::string("images/") + name;
    write_png((fs::path(out_dir) / file).string(), img);

    const int image_id = idx + 1;
    set.images.push_back(ImageRecord{image_id, file, h, w});
    for (const auto& mask : visible) {
      AnnotationRecord ann;
      ann.id = next_ann_id++;
      ann.image_id = image_id;
      ann.category_id = 1;
      ann.bbox = mask_to_box(mask);
      ann.mask = rle_encode(mask);
      set.annotations.push_back(std::move(ann));
    }
  }

  set.validate();
  save_annotations((fs::path(out_dir) / "annotations.json").string(), set);
  return set;
}

namespace {

json rle_to_json(const RLEMask& r) {
  return json{{"height", r.height}, {"width", r.width}, {"runs", r.runs}};
}

RLEMask rle_from_json(const json& j) {
  RLEMask r;
  r.height = j.at("height");
  r.width = j.at("width");
  r.runs = j.at("runs").get<std::vector<std::uint64_t>>();
  return r;
}

}  // namespace

void save_annotations(const std::string& path, const AnnotationSet& set) {
  json j;
  j["images"] = json::array();
  for (const auto& img : set.images) {
    j["images"].push_back(
        {{"id", img.id}, {"file", img.file}, {"height", img.height}, {"width", img.width}});
  }
  j["annotations"] = json::array();
  for (const auto& ann : set.annotations) {
    j["annotations"].push_back({{"id", ann.id},
                                {"image_id", ann.image_id},
                                {"category_id", ann.category_id},
                                {"rle", rle_to_json(ann.mask)},
                                {"bbox",
                                 {static_cast<std::int64_t>(ann.bbox.x_min),
                                  static_cast<std::int64_t>(ann.bbox.y_min),
                                  static_cast<std::int64_t>(ann.bbox.x_max),
                                  static_cast<std::int64_t>(ann.bbox.y_max)}}});
  }
  j["categories"] = json::array();
  for (const auto& cat : set.categories) {
    j["categories"].push_back({{"id", cat.id}, {"name", cat.name}});
  }
  std::ofstream out(path);
  if (!out) throw IoError("save_annotations: cannot open " + path);
  out << j.dump(1, '\t') << "\n";
  if (!out) throw IoError("save_annotations: write failed");
}

AnnotationSet load_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_annotations: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw CorruptAnnotationError(std::string("load_annotations: bad JSON: ") + e.what());
  }

  AnnotationSet set;
  try {
    for (const auto& img : j.at("images")) {
      set.images.push_back(ImageRecord{img.at("id"), img.at("file"), img.at("height"),
                                       img.at("width")});
    }
    for (const auto& ann : j.at("annotations")) {
      AnnotationRecord rec;
      rec.id = ann.at("id");
      rec.image_id = ann.at("image_id");
      rec.category_id = ann.at("category_id");
      rec.mask = rle_from_json(ann.at("rle"));
      const auto& bbox = ann.at("bbox");
      rec.bbox = BBox(bbox.at(0), bbox.at(1), bbox.at(2), bbox.at(3));
      set.annotations.push_back(std::move(rec));
    }
    if (j.contains("categories")) {
      for (const auto& cat : j.at("categories")) {
        set.categories.push_back(CategoryRecord{cat.at("id"), cat.at("name")});
      }
    } else {
      set.categories.push_back(CategoryRecord{1, "object"});
    }
  } catch (const json::exception& e) {
    throw CorruptAnnotationError(std::string("load_annotations: bad schema: ") + e.what());
  }
  set.validate();
  return set;
}

std::pair<std::vector<int>, std::vector<int>> split_labeled(const AnnotationSet& set,
                                                            const SplitSpec& spec) {
  if (!(spec.labeled_fraction > 0.0 && spec.labeled_fraction <= 1.0)) {
    throw ConfigError("split_labeled: fraction must be in (0,1]");
  }
  std::vector<int> ids;
  ids.reserve(set.images.size());
  for (const auto& img : set.images) ids.push_back(img.id);
  std::sort(ids.begin(), ids.end());

  Rng rng(spec.seed, 0x73706c6974ULL);
  rng.shuffle(ids);

  const std::size_t n_labeled = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(spec.labeled_fraction *
                                             static_cast<double>(ids.size()))));
  std::vector<int> labeled(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_labeled));
  std::vector<int> unlabeled(ids.begin() + static_cast<std::ptrdiff_t>(n_labeled), ids.end());
  std::sort(labeled.begin(), labeled.end());
  std::sort(unlabeled.begin(), unlabeled.end());
  return {labeled, unlabeled};
}

}  // namespace pseqseg
