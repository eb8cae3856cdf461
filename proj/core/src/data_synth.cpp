#include "inmemo/data_synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "inmemo/util.hpp"

namespace inmemo {

namespace {

constexpr std::array<const char*, kShapeClassCount> kClassNames = {
    "circle", "square", "triangle", "star", "cross", "ring", "crescent", "ellipse", "diamond", "bar"};

struct Vec2 {
  double x, y;
};

// Even-odd crossing test.
bool point_in_polygon(const std::vector<Vec2>& poly, double x, double y) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[j];
    if ((a.y > y) != (b.y > y)) {
      const double xi = a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (x < xi) inside = !inside;
    }
  }
  return inside;
}

std::vector<Vec2> regular_star(int points, double outer, double inner) {
  std::vector<Vec2> v;
  const int n = inner > 0 ? points * 2 : points;
  for (int k = 0; k < n; ++k) {
    const double r = (inner > 0 && k % 2 == 1) ? inner : outer;
    const double t = -std::numbers::pi / 2 + k * 2 * std::numbers::pi / n;
    v.push_back({r * std::cos(t), r * std::sin(t)});
  }
  return v;
}

double lum(const std::array<double, 3>& c) { return (c[0] + c[1] + c[2]) / 3.0; }

std::array<double, 3> contrasting_color(std::mt19937_64& rng, const std::array<double, 3>& fg,
                                        double min_gap) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (;;) {
    std::array<double, 3> c{u(rng), u(rng), u(rng)};
    if (std::abs(lum(c) - lum(fg)) >= min_gap) return c;
  }
}

std::uint64_t pair_key(int class_id, int index) {
  return (static_cast<std::uint64_t>(class_id) << 32) | static_cast<std::uint32_t>(index);
}

}  // namespace

std::string to_string(TaskKind kind) {
  return kind == TaskKind::segmentation ? "segmentation" : "detection";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "segmentation") return TaskKind::segmentation;
  if (s == "detection") return TaskKind::detection;
  throw std::invalid_argument("unknown task kind: " + s);
}

std::string shape_class_name(int class_id) {
  if (class_id < 0 || class_id >= kShapeClassCount)
    throw std::invalid_argument("unknown shape class id " + std::to_string(class_id));
  return kClassNames[class_id];
}

bool shape_contains(const Shape& s, double x, double y) {
  const double dx = x - s.cx;
  const double dy = y - s.cy;
  const double ca = std::cos(s.angle);
  const double sa = std::sin(s.angle);
  const double u = ca * dx + sa * dy;
  const double v = -sa * dx + ca * dy;
  const double r = s.size;
  switch (static_cast<ShapeClass>(s.class_id)) {
    case ShapeClass::circle:
      return u * u + v * v <= r * r;
    case ShapeClass::square:
      return std::abs(u) <= 0.7 * r && std::abs(v) <= 0.7 * r;
    case ShapeClass::triangle:
      return point_in_polygon(regular_star(3, r, 0), u, v);
    case ShapeClass::star:
      return point_in_polygon(regular_star(5, r, 0.45 * r), u, v);
    case ShapeClass::cross:
      return (std::abs(u) <= 0.95 * r && std::abs(v) <= 0.28 * r) ||
             (std::abs(u) <= 0.28 * r && std::abs(v) <= 0.95 * r);
    case ShapeClass::ring: {
      const double d2 = u * u + v * v;
      return d2 <= r * r && d2 >= 0.55 * 0.55 * r * r;
    }
    case ShapeClass::crescent: {
      const double ox = u - 0.45 * r;
      return u * u + v * v <= r * r && ox * ox + v * v > 0.85 * 0.85 * r * r;
    }
    case ShapeClass::ellipse: {
      const double b = r * s.aspect;
      return (u * u) / (r * r) + (v * v) / (b * b) <= 1.0;
    }
    case ShapeClass::diamond:
      return std::abs(u) / r + std::abs(v) / (0.6 * r) <= 1.0;
    case ShapeClass::bar:
      return std::abs(u) <= 0.95 * r && std::abs(v) <= 0.22 * r;
  }
  throw std::invalid_argument("shape_contains: unknown class");
}

std::vector<int> Dataset::class_ids() const {
  std::set<int> ids;
  for (const auto& p : pairs) ids.insert(p.class_id);
  return {ids.begin(), ids.end()};
}

const TaskPair& Dataset::by_id(std::uint32_t id) const {
  for (const auto& p : pairs)
    if (p.id == id) return p;
  throw std::out_of_range("Dataset::by_id: no pair with id " + std::to_string(id));
}

Dataset Dataset::subset(const std::vector<std::size_t>& positions) const {
  Dataset out;
  out.task_kind = task_kind;
  out.class_roster = class_roster;
  out.pairs.reserve(positions.size());
  for (std::size_t p : positions) out.pairs.push_back(pairs.at(p));
  return out;
}

Dataset Dataset::filter_classes(const std::vector<int>& classes) const {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    if (std::find(classes.begin(), classes.end(), pairs[i].class_id) != classes.end()) keep.push_back(i);
  return subset(keep);
}

Shape sample_shape(const DatasetSpec& spec, int class_id, int index) {
  std::mt19937_64 rng(derive_seed(spec.seed, "shape", pair_key(class_id, index)));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double n = spec.image_size;
  Shape s;
  s.class_id = class_id;
  s.size = n * (0.2 + 0.14 * u(rng));
  const double lo = s.size + 1.0;
  const double hi = n - s.size - 1.0;
  s.cx = lo + (hi - lo) * u(rng);
  s.cy = lo + (hi - lo) * u(rng);
  s.angle = 2 * std::numbers::pi * u(rng);
  s.aspect = 0.45 + 0.25 * u(rng);
  return s;
}

std::vector<std::uint8_t> rasterize_shape(const Shape& s, int image_size) {
  std::vector<std::uint8_t> fg(static_cast<std::size_t>(image_size) * image_size, 0);
  for (int r = 0; r < image_size; ++r)
    for (int c = 0; c < image_size; ++c)
      fg[static_cast<std::size_t>(r) * image_size + c] = shape_contains(s, c + 0.5, r + 0.5) ? 1 : 0;
  return fg;
}

std::vector<std::uint8_t> bounding_box_fill(const std::vector<std::uint8_t>& fg, int image_size) {
  int r0 = image_size, r1 = -1, c0 = image_size, c1 = -1;
  for (int r = 0; r < image_size; ++r)
    for (int c = 0; c < image_size; ++c)
      if (fg[static_cast<std::size_t>(r) * image_size + c]) {
        r0 = std::min(r0, r);
        r1 = std::max(r1, r);
        c0 = std::min(c0, c);
        c1 = std::max(c1, c);
      }
  std::vector<std::uint8_t> box(fg.size(), 0);
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) box[static_cast<std::size_t>(r) * image_size + c] = 1;
  return box;
}

Dataset generate_dataset(const DatasetSpec& spec) {
  if (spec.classes.empty()) throw std::invalid_argument("generate_dataset: spec has zero classes");
  if (spec.per_class_count < 1) throw std::invalid_argument("generate_dataset: per_class_count must be >= 1");
  if (spec.image_size < 16) throw std::invalid_argument("generate_dataset: image_size must be >= 16");
  if (spec.domain_id != 0 && spec.domain_id != 1)
    throw std::invalid_argument("generate_dataset: domain_id must be 0 or 1");
  std::set<int> seen;
  for (int c : spec.classes) {
    shape_class_name(c);
    if (!seen.insert(c).second) throw std::invalid_argument("generate_dataset: duplicate class id");
  }

  Dataset d;
  d.task_kind = spec.task_kind;
  for (int c : spec.classes) d.class_roster[c] = shape_class_name(c);

  const int n = spec.image_size;
  std::uint32_t next_id = spec.id_offset;
  for (int c : spec.classes) {
    for (int i = 0; i < spec.per_class_count; ++i) {
      const Shape shape = sample_shape(spec, c, i);
      std::mt19937_64 color_rng(derive_seed(spec.seed, "foreground", pair_key(c, i)));
      std::uniform_real_distribution<double> u(0.05, 0.95);
      const std::array<double, 3> fg_color{u(color_rng), u(color_rng), u(color_rng)};

      std::mt19937_64 bg_rng(
          derive_seed(spec.seed, spec.domain_id == 0 ? "background/flat" : "background/noise", pair_key(c, i)));
      const std::array<double, 3> bg_color = contrasting_color(bg_rng, fg_color, 0.25);
      std::uniform_real_distribution<double> noise(-0.3, 0.3);

      const std::vector<std::uint8_t> fg = rasterize_shape(shape, n);
      const std::vector<std::uint8_t> label_fg =
          spec.task_kind == TaskKind::detection ? bounding_box_fill(fg, n) : fg;

      TaskPair p;
      p.id = next_id++;
      p.class_id = c;
      p.domain_id = spec.domain_id;
      p.input = Image(n, n);
      p.label = Image(n, n);
      for (int r = 0; r < n; ++r) {
        for (int col = 0; col < n; ++col) {
          const std::size_t k = static_cast<std::size_t>(r) * n + col;
          for (int ch = 0; ch < 3; ++ch) {
            double v = fg[k] ? fg_color[ch] : bg_color[ch];
            if (!fg[k] && spec.domain_id == 1) v = std::clamp(v + noise(bg_rng), 0.0, 1.0);
            p.input.at(r, col, ch) = v;
            p.label.at(r, col, ch) = label_fg[k] ? 1.0 : 0.0;
          }
        }
      }
      quantize_8bit(p.input);
      d.pairs.push_back(std::move(p));
    }
  }
  return d;
}

std::vector<Fold> split_folds(const Dataset& d, int fold_count) {
  if (fold_count < 1) throw std::invalid_argument("split_folds: fold_count must be >= 1");
  const std::vector<int> classes = d.class_ids();
  if (classes.empty() || classes.size() % static_cast<std::size_t>(fold_count) != 0)
    throw std::invalid_argument("split_folds: " + std::to_string(classes.size()) +
                                " classes not divisible into " + std::to_string(fold_count) + " folds");
  const std::size_t per = classes.size() / fold_count;
  std::vector<Fold> folds;
  for (int f = 0; f < fold_count; ++f) {
    Fold fold;
    fold.index = f;
    fold.test_classes.assign(classes.begin() + f * per, classes.begin() + (f + 1) * per);
    std::vector<int> train_classes;
    for (int c : classes)
      if (std::find(fold.test_classes.begin(), fold.test_classes.end(), c) == fold.test_classes.end())
        train_classes.push_back(c);
    fold.test = d.filter_classes(fold.test_classes);
    fold.train = d.filter_classes(train_classes);
    folds.push_back(std::move(fold));
  }
  return folds;
}

double foreground_fraction(const Image& label) {
  const std::vector<double> l = luminance(label);
  std::size_t count = 0;
  for (double v : l)
    if (v > 0.5) ++count;
  return l.empty() ? 0.0 : static_cast<double>(count) / static_cast<double>(l.size());
}

Dataset apply_area_filter(const Dataset& d, double max_fraction) {
  if (!(max_fraction > 0.0 && max_fraction <= 1.0))
    throw std::invalid_argument("apply_area_filter: max_fraction must lie in (0, 1]");
  if (d.task_kind != TaskKind::detection)
    throw std::invalid_argument("apply_area_filter: dataset is not a detection dataset");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < d.pairs.size(); ++i)
    if (foreground_fraction(d.pairs[i].label) < max_fraction) keep.push_back(i);
  return d.subset(keep);
}

void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json m;
  m["task_kind"] = to_string(d.task_kind);
  nlohmann::ordered_json roster = nlohmann::ordered_json::object();
  for (const auto& [id, name] : d.class_roster) roster[std::to_string(id)] = name;
  m["class_roster"] = roster;
  nlohmann::ordered_json pairs = nlohmann::ordered_json::array();
  for (const auto& p : d.pairs) {
    const std::string stem = std::to_string(p.id);
    write_png(dir / (stem + "_input.png"), p.input);
    write_png(dir / (stem + "_label.png"), p.label);
    pairs.push_back({{"id", p.id},
                     {"class_id", p.class_id},
                     {"domain_id", p.domain_id},
                     {"input", stem + "_input.png"},
                     {"label", stem + "_label.png"}});
  }
  m["pairs"] = pairs;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("save_dataset: cannot write manifest in " + dir.string());
  out << m.dump(2) << "\n";
  if (!out) throw std::runtime_error("save_dataset: write failed in " + dir.string());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("load_dataset: missing manifest.json in " + dir.string());
  const nlohmann::json m = nlohmann::json::parse(in);
  Dataset d;
  d.task_kind = task_kind_from_string(m.at("task_kind").get<std::string>());
  for (const auto& [k, v] : m.at("class_roster").items()) d.class_roster[std::stoi(k)] = v.get<std::string>();
  std::set<std::uint32_t> ids;
  for (const auto& e : m.at("pairs")) {
    TaskPair p;
    p.id = e.at("id").get<std::uint32_t>();
    if (!ids.insert(p.id).second) throw std::runtime_error("load_dataset: duplicate pair id in manifest");
    p.class_id = e.at("class_id").get<int>();
    p.domain_id = e.at("domain_id").get<int>();
    p.input = read_png(dir / e.at("input").get<std::string>());
    p.label = read_png(dir / e.at("label").get<std::string>());
    if (p.input.height != p.label.height || p.input.width != p.label.width)
      throw std::runtime_error("load_dataset: input/label size mismatch for pair " + std::to_string(p.id));
    d.pairs.push_back(std::move(p));
  }
  return d;
}

}  // namespace inmemo
