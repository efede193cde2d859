#include "glcf/data.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "glcf/errors.hpp"
#include "glcf/json_util.hpp"

namespace glcf {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Spec

LogicShapesSpec LogicShapesSpec::defaults() {
  LogicShapesSpec s;
  s.vocabulary = {{"circle", "red"}, {"square", "blue"}, {"triangle", "green"}};
  Rule circles;
  circles.kind = RuleKind::kExactCount;
  circles.shape = "circle";
  circles.count = 2;
  Rule squares;
  squares.kind = RuleKind::kExactCount;
  squares.shape = "square";
  squares.count = 1;
  Rule blue;
  blue.kind = RuleKind::kColorPairing;
  blue.shape = "square";
  blue.color = "blue";
  s.rules = {circles, squares, blue};
  return s;
}

namespace {

const char* rule_kind_name(RuleKind k) {
  switch (k) {
    case RuleKind::kExactCount: return "exact_count";
    case RuleKind::kCellBinding: return "cell_binding";
    case RuleKind::kColorPairing: return "color_pairing";
  }
  return "?";
}

const std::vector<std::string>& shape_names() {
  static const std::vector<std::string> names{"circle", "square", "triangle"};
  return names;
}

bool known_shape(const std::string& s) {
  const auto& n = shape_names();
  return std::find(n.begin(), n.end(), s) != n.end();
}

bool known_color(const std::string& c) {
  for (const auto& [name, _] : palette()) {
    if (name == c) return true;
  }
  return false;
}

std::array<uint8_t, 3> color_rgb(const std::string& c) {
  for (const auto& [name, rgb] : palette()) {
    if (name == c) return rgb;
  }
  throw ConfigError("unknown colour '" + c + "'");
}

}  // namespace

const std::vector<std::pair<std::string, std::array<uint8_t, 3>>>& palette() {
  static const std::vector<std::pair<std::string, std::array<uint8_t, 3>>> p{
      {"red", {220, 50, 50}},
      {"green", {50, 190, 70}},
      {"blue", {60, 100, 235}},
      {"yellow", {235, 215, 50}},
  };
  return p;
}

void to_json(nlohmann::json& j, const LogicShapesSpec& s) {
  auto vocab = nlohmann::json::array();
  for (const auto& v : s.vocabulary) vocab.push_back({{"shape", v.shape}, {"color", v.color}});
  auto rules = nlohmann::json::array();
  for (const auto& r : s.rules) {
    nlohmann::json jr{{"kind", rule_kind_name(r.kind)}, {"shape", r.shape}};
    if (r.kind == RuleKind::kExactCount) jr["count"] = r.count;
    if (r.kind == RuleKind::kCellBinding) jr["cell"] = r.cell;
    if (r.kind != RuleKind::kExactCount) jr["color"] = r.color;
    rules.push_back(std::move(jr));
  }
  j = nlohmann::json{{"canvas", s.canvas},
                     {"grid", s.grid},
                     {"vocabulary", vocab},
                     {"rules", rules},
                     {"n_train", s.n_train},
                     {"n_test_normal", s.n_test_normal},
                     {"n_test_structural", s.n_test_structural},
                     {"n_test_logical", s.n_test_logical},
                     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, LogicShapesSpec& s) {
  const std::string sec = "logicshapes";
  json_util::reject_unknown(j,
                            {"canvas", "grid", "vocabulary", "rules", "n_train", "n_test_normal", "n_test_structural",
                             "n_test_logical", "seed"},
                            sec);
  json_util::read(j, "canvas", s.canvas, sec);
  json_util::read(j, "grid", s.grid, sec);
  json_util::read(j, "n_train", s.n_train, sec);
  json_util::read(j, "n_test_normal", s.n_test_normal, sec);
  json_util::read(j, "n_test_structural", s.n_test_structural, sec);
  json_util::read(j, "n_test_logical", s.n_test_logical, sec);
  json_util::read(j, "seed", s.seed, sec);
  if (j.contains("vocabulary")) {
    s.vocabulary.clear();
    for (const auto& v : j.at("vocabulary")) {
      json_util::reject_unknown(v, {"shape", "color"}, sec + ".vocabulary");
      VocabEntry e;
      json_util::read(v, "shape", e.shape, sec);
      json_util::read(v, "color", e.color, sec);
      s.vocabulary.push_back(e);
    }
  }
  if (j.contains("rules")) {
    s.rules.clear();
    for (const auto& jr : j.at("rules")) {
      json_util::reject_unknown(jr, {"kind", "shape", "count", "cell", "color"}, sec + ".rules");
      Rule r;
      std::string kind;
      json_util::read(jr, "kind", kind, sec);
      if (kind == "exact_count") {
        r.kind = RuleKind::kExactCount;
      } else if (kind == "cell_binding") {
        r.kind = RuleKind::kCellBinding;
      } else if (kind == "color_pairing") {
        r.kind = RuleKind::kColorPairing;
      } else {
        throw ConfigError("unknown rule kind '" + kind + "'");
      }
      json_util::read(jr, "shape", r.shape, sec);
      json_util::read(jr, "count", r.count, sec);
      json_util::read(jr, "cell", r.cell, sec);
      json_util::read(jr, "color", r.color, sec);
      s.rules.push_back(r);
    }
  }
}

// ---------------------------------------------------------------------------
// Rules

std::vector<int> verify_rules(const std::vector<SceneObject>& objects, const LogicShapesSpec& spec) {
  std::vector<int> violated;
  for (size_t id = 0; id < spec.rules.size(); ++id) {
    const auto& r = spec.rules[id];
    bool ok = true;
    switch (r.kind) {
      case RuleKind::kExactCount: {
        const auto n = std::count_if(objects.begin(), objects.end(), [&](const auto& o) { return o.shape == r.shape; });
        ok = n == r.count;
        break;
      }
      case RuleKind::kCellBinding: {
        ok = std::any_of(objects.begin(), objects.end(), [&](const auto& o) {
          return o.row == r.cell[0] && o.col == r.cell[1] && o.shape == r.shape && o.color == r.color;
        });
        break;
      }
      case RuleKind::kColorPairing: {
        ok = std::all_of(objects.begin(), objects.end(),
                         [&](const auto& o) { return o.shape != r.shape || o.color == r.color; });
        break;
      }
    }
    if (!ok) violated.push_back(static_cast<int>(id));
  }
  return violated;
}

std::string to_string(SampleKind k) {
  switch (k) {
    case SampleKind::kNormal: return "normal";
    case SampleKind::kStructural: return "structural";
    case SampleKind::kLogical: return "logical";
  }
  return "?";
}

namespace {

// Deterministic per-sample random source; avoids the implementation-defined
// std distributions so streams match across standard libraries.
class SampleRng {
 public:
  explicit SampleRng(uint64_t seed) : state_(seed) {}

  uint64_t next() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  int uniform(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(next() % static_cast<uint64_t>(hi - lo + 1));
  }
  double unit() { return static_cast<double>(next() >> 11) * (1.0 / 9007199254740992.0); }
  template <class T>
  const T& pick(const std::vector<T>& v) {
    return v[static_cast<size_t>(uniform(0, static_cast<int>(v.size()) - 1))];
  }
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<size_t>(uniform(0, static_cast<int>(i) - 1))]);
  }

 private:
  uint64_t state_;
};

uint64_t sample_seed(uint64_t seed, int split_tag, int index) {
  SampleRng r(seed * 1000003ULL + static_cast<uint64_t>(split_tag) * 0x100000001B3ULL + static_cast<uint64_t>(index));
  r.next();
  return r.next();
}

struct CellContent {
  std::string shape;
  std::string color;
};

struct Layout {
  std::vector<std::optional<CellContent>> cells;  // row-major
};

std::vector<SceneObject> to_objects(const Layout& layout, int cols) {
  std::vector<SceneObject> out;
  for (size_t i = 0; i < layout.cells.size(); ++i) {
    if (!layout.cells[i]) continue;
    out.push_back({static_cast<int>(i) / cols, static_cast<int>(i) % cols, layout.cells[i]->shape,
                   layout.cells[i]->color});
  }
  return out;
}

std::vector<std::string> colors_for(const LogicShapesSpec& spec, const std::string& shape) {
  std::vector<std::string> out;
  for (const auto& v : spec.vocabulary) {
    if (v.shape == shape && std::find(out.begin(), out.end(), v.color) == out.end()) out.push_back(v.color);
  }
  return out;
}

std::optional<std::string> paired_color(const LogicShapesSpec& spec, const std::string& shape) {
  for (const auto& r : spec.rules) {
    if (r.kind == RuleKind::kColorPairing && r.shape == shape) return r.color;
  }
  return std::nullopt;
}

std::string choose_color(const LogicShapesSpec& spec, const std::string& shape, SampleRng& rng) {
  if (auto c = paired_color(spec, shape)) return *c;
  const auto colors = colors_for(spec, shape);
  if (colors.empty()) throw ConfigError("vocabulary has no colour for shape '" + shape + "'");
  return rng.pick(colors);
}

// Constructs a rule-satisfying layout; throws ConfigError when impossible.
Layout plan_normal(const LogicShapesSpec& spec, SampleRng& rng) {
  const int rows = spec.grid[0], cols = spec.grid[1];
  if (rows <= 0 || cols <= 0) throw ConfigError("logicshapes grid must be positive");
  if (spec.canvas < 8 * std::max(rows, cols)) throw ConfigError("logicshapes canvas too small for the grid");
  for (const auto& v : spec.vocabulary) {
    if (!known_shape(v.shape)) throw ConfigError("unknown shape '" + v.shape + "' in vocabulary");
    if (!known_color(v.color)) throw ConfigError("unknown colour '" + v.color + "' in vocabulary");
  }
  Layout layout;
  layout.cells.resize(static_cast<size_t>(rows * cols));
  std::vector<bool> bound(layout.cells.size(), false);
  std::map<std::string, int> required;
  std::map<std::string, std::string> pairing;

  for (const auto& r : spec.rules) {
    if (!known_shape(r.shape)) throw ConfigError("rule refers to unknown shape '" + r.shape + "'");
    if (r.kind == RuleKind::kColorPairing) {
      if (!known_color(r.color)) throw ConfigError("rule refers to unknown colour '" + r.color + "'");
      auto [it, fresh] = pairing.emplace(r.shape, r.color);
      if (!fresh && it->second != r.color) throw ConfigError("conflicting colour pairings for '" + r.shape + "'");
    }
    if (r.kind == RuleKind::kExactCount) {
      if (r.count < 0) throw ConfigError("exact_count must be non-negative");
      auto [it, fresh] = required.emplace(r.shape, r.count);
      if (!fresh && it->second != r.count) throw ConfigError("conflicting exact_count rules for '" + r.shape + "'");
    }
  }
  for (const auto& r : spec.rules) {
    if (r.kind != RuleKind::kCellBinding) continue;
    if (!known_color(r.color)) throw ConfigError("rule refers to unknown colour '" + r.color + "'");
    if (r.cell[0] < 0 || r.cell[0] >= rows || r.cell[1] < 0 || r.cell[1] >= cols) {
      throw ConfigError("cell_binding outside the grid");
    }
    const auto idx = static_cast<size_t>(r.cell[0] * cols + r.cell[1]);
    if (bound[idx] && (layout.cells[idx]->shape != r.shape || layout.cells[idx]->color != r.color)) {
      throw ConfigError("conflicting cell bindings");
    }
    if (auto it = pairing.find(r.shape); it != pairing.end() && it->second != r.color) {
      throw ConfigError("cell binding contradicts colour pairing for '" + r.shape + "'");
    }
    bound[idx] = true;
    layout.cells[idx] = CellContent{r.shape, r.color};
  }

  std::vector<std::string> to_place;
  for (const auto& [shape, n] : required) {
    int have = 0;
    for (size_t i = 0; i < layout.cells.size(); ++i) have += bound[i] && layout.cells[i]->shape == shape;
    if (have > n) throw ConfigError("cell bindings place more '" + shape + "' than exact_count allows");
    for (int k = have; k < n; ++k) to_place.push_back(shape);
  }
  std::vector<size_t> free_cells;
  for (size_t i = 0; i < layout.cells.size(); ++i) {
    if (!bound[i]) free_cells.push_back(i);
  }
  if (to_place.size() > free_cells.size()) throw ConfigError("exact_count rules need more cells than the grid has");

  std::vector<std::string> fillers;
  for (const auto& v : spec.vocabulary) {
    if (!required.count(v.shape) && std::find(fillers.begin(), fillers.end(), v.shape) == fillers.end()) {
      if (auto it = pairing.find(v.shape); it == pairing.end() || !colors_for(spec, v.shape).empty()) {
        fillers.push_back(v.shape);
      }
    }
  }

  rng.shuffle(free_cells);
  for (size_t k = 0; k < free_cells.size(); ++k) {
    std::string shape;
    if (k < to_place.size()) {
      shape = to_place[k];
    } else if (!fillers.empty()) {
      shape = rng.pick(fillers);
    } else {
      continue;  // left empty
    }
    layout.cells[free_cells[k]] = CellContent{shape, choose_color(spec, shape, rng)};
  }
  if (!verify_rules(to_objects(layout, cols), spec).empty()) {
    throw ConfigError("logicshapes rules are not jointly satisfiable");
  }
  return layout;
}

struct LogicalMutation {
  std::string type;
  Layout layout;
  std::vector<size_t> cells;  // cells covered by the mask
  int rule = -1;
};

std::vector<LogicalMutation> logical_candidates(const LogicShapesSpec& spec, const Layout& base, SampleRng& rng) {
  const int cols = spec.grid[1];
  std::vector<bool> bound(base.cells.size(), false);
  for (const auto& r : spec.rules) {
    if (r.kind == RuleKind::kCellBinding) bound[static_cast<size_t>(r.cell[0] * cols + r.cell[1])] = true;
  }
  std::set<std::string> counted;
  for (const auto& r : spec.rules) {
    if (r.kind == RuleKind::kExactCount) counted.insert(r.shape);
  }

  std::vector<LogicalMutation> out;
  auto accept = [&](LogicalMutation m) {
    const auto v = verify_rules(to_objects(m.layout, cols), spec);
    if (v.size() == 1) {
      m.rule = v[0];
      out.push_back(std::move(m));
    }
  };

  for (size_t i = 0; i < base.cells.size(); ++i) {
    const auto& c = base.cells[i];
    if (bound[i]) continue;
    // Missing object.
    if (c && counted.count(c->shape)) {
      LogicalMutation m{"missing_object", base, {i}};
      m.layout.cells[i].reset();
      accept(std::move(m));
    }
    // Extra object: a filler or empty cell becomes a counted shape.
    if (!c || !counted.count(c->shape)) {
      for (const auto& shape : counted) {
        LogicalMutation m{"extra_object", base, {i}};
        m.layout.cells[i] = CellContent{shape, choose_color(spec, shape, rng)};
        accept(std::move(m));
      }
    }
    // Wrong colour pairing, drawn from colours other vocabulary entries use;
    // the whole palette only when the vocabulary offers none.
    if (c) {
      if (auto want = paired_color(spec, c->shape)) {
        std::vector<std::string> wrong;
        for (const auto& v : spec.vocabulary) {
          if (v.color != *want && std::find(wrong.begin(), wrong.end(), v.color) == wrong.end()) wrong.push_back(v.color);
        }
        if (wrong.empty()) {
          for (const auto& [name, _] : palette()) {
            if (name != *want) wrong.push_back(name);
          }
        }
        for (const auto& name : wrong) {
          LogicalMutation m{"wrong_color", base, {i}};
          m.layout.cells[i]->color = name;
          accept(std::move(m));
        }
      }
    }
  }
  // Swapped cells: a bound cell exchanges content with an unbound one.
  for (size_t i = 0; i < base.cells.size(); ++i) {
    if (!bound[i]) continue;
    for (size_t k = 0; k < base.cells.size(); ++k) {
      if (bound[k] || k == i) continue;
      LogicalMutation m{"swapped_cells", base, {i, k}};
      std::swap(m.layout.cells[i], m.layout.cells[k]);
      accept(std::move(m));
    }
  }
  return out;
}

cv::Scalar bgr(const std::array<uint8_t, 3>& rgb) { return cv::Scalar(rgb[2], rgb[1], rgb[0]); }

cv::Rect cell_rect(const LogicShapesSpec& spec, size_t cell) {
  const int rows = spec.grid[0], cols = spec.grid[1];
  const int r = static_cast<int>(cell) / cols, c = static_cast<int>(cell) % cols;
  const int x0 = c * spec.canvas / cols, x1 = (c + 1) * spec.canvas / cols;
  const int y0 = r * spec.canvas / rows, y1 = (r + 1) * spec.canvas / rows;
  return {x0, y0, x1 - x0, y1 - y0};
}

struct Placed {
  cv::Point center;
  int radius;
};

void draw_shape(cv::Mat& img, const std::string& shape, const Placed& p, const cv::Scalar& color) {
  const int r = p.radius;
  if (shape == "circle") {
    cv::circle(img, p.center, r, color, cv::FILLED, cv::LINE_AA);
  } else if (shape == "square") {
    const int h = static_cast<int>(r * 0.85);
    cv::rectangle(img, cv::Point(p.center.x - h, p.center.y - h), cv::Point(p.center.x + h, p.center.y + h), color,
                  cv::FILLED, cv::LINE_AA);
  } else {
    std::vector<cv::Point> pts{{p.center.x, p.center.y - r},
                               {p.center.x - static_cast<int>(r * 0.95), p.center.y + static_cast<int>(r * 0.8)},
                               {p.center.x + static_cast<int>(r * 0.95), p.center.y + static_cast<int>(r * 0.8)}};
    cv::fillConvexPoly(img, pts, color, cv::LINE_AA);
  }
}

// Renders the layout; returns per-cell placements for later corruption.
std::vector<Placed> render(const LogicShapesSpec& spec, const Layout& layout, SampleRng& rng, cv::Mat& img) {
  img.create(spec.canvas, spec.canvas, CV_8UC3);
  for (int y = 0; y < spec.canvas; ++y) {
    for (int x = 0; x < spec.canvas; ++x) {
      const auto v = static_cast<uint8_t>(64 + rng.uniform(-1, 1));
      img.at<cv::Vec3b>(y, x) = cv::Vec3b(v, v, v);
    }
  }
  std::vector<Placed> placed(layout.cells.size());
  for (size_t i = 0; i < layout.cells.size(); ++i) {
    const auto rect = cell_rect(spec, i);
    const int cell = std::min(rect.width, rect.height);
    const int jitter = std::max(1, cell / 10);
    Placed p;
    p.center = {rect.x + rect.width / 2 + rng.uniform(-jitter, jitter), rect.y + rect.height / 2 + rng.uniform(-jitter, jitter)};
    p.radius = std::max(2, static_cast<int>(cell * 0.3) + rng.uniform(-1, 1));
    placed[i] = p;
    if (layout.cells[i]) draw_shape(img, layout.cells[i]->shape, p, bgr(color_rgb(layout.cells[i]->color)));
  }
  return placed;
}

const std::vector<std::array<uint8_t, 3>>& defect_colors() {
  static const std::vector<std::array<uint8_t, 3>> c{{20, 20, 20}, {245, 245, 245}, {255, 140, 0}, {140, 80, 30}};
  return c;
}

// Draws one local defect on an object and records its exact footprint, clipped to the cell.
std::string corrupt(const LogicShapesSpec& spec, size_t cell, const Placed& p, SampleRng& rng, cv::Mat& img,
                    cv::Mat& mask) {
  cv::Mat footprint = cv::Mat::zeros(img.size(), CV_8UC1);
  const int r = p.radius;
  const int type = rng.uniform(0, 2);
  std::string name;
  const auto color = rng.pick(defect_colors());
  if (type == 0) {
    name = "blob";
    cv::Point c{p.center.x + rng.uniform(-r / 2, r / 2), p.center.y + rng.uniform(-r / 2, r / 2)};
    cv::Size axes{rng.uniform(2, std::max(3, r / 2)), rng.uniform(2, std::max(3, r / 2))};
    const double angle = rng.uniform(0, 179);
    cv::ellipse(footprint, c, axes, angle, 0, 360, cv::Scalar(255), cv::FILLED, cv::LINE_8);
  } else if (type == 1) {
    name = "scratch";
    cv::Point a{p.center.x + rng.uniform(-r, r), p.center.y - r + rng.uniform(0, r / 2)};
    cv::Point b{p.center.x + rng.uniform(-r, r), p.center.y + r - rng.uniform(0, r / 2)};
    cv::line(footprint, a, b, cv::Scalar(255), rng.uniform(1, 2), cv::LINE_8);
  } else {
    name = "texture_patch";
    const int w = rng.uniform(std::max(3, r / 2), std::max(4, r)), h = rng.uniform(std::max(3, r / 2), std::max(4, r));
    cv::Rect rect{p.center.x - w / 2 + rng.uniform(-r / 3, r / 3), p.center.y - h / 2 + rng.uniform(-r / 3, r / 3), w, h};
    cv::rectangle(footprint, rect, cv::Scalar(255), cv::FILLED);
  }
  cv::Mat clip = cv::Mat::zeros(img.size(), CV_8UC1);
  cv::rectangle(clip, cell_rect(spec, cell), cv::Scalar(255), cv::FILLED);
  cv::bitwise_and(footprint, clip, footprint);

  for (int y = 0; y < img.rows; ++y) {
    for (int x = 0; x < img.cols; ++x) {
      if (!footprint.at<uint8_t>(y, x)) continue;
      if (name == "texture_patch") {
        const bool on = ((x / 2) + (y / 2)) % 2 == 0;
        const auto v = static_cast<uint8_t>(on ? 235 : 25);
        img.at<cv::Vec3b>(y, x) = cv::Vec3b(v, static_cast<uint8_t>(255 - v), v);
      } else {
        img.at<cv::Vec3b>(y, x) = cv::Vec3b(color[2], color[1], color[0]);
      }
    }
  }
  cv::bitwise_or(mask, footprint, mask);
  return name;
}

}  // namespace

void check_spec(const LogicShapesSpec& spec) {
  if (spec.n_train < 0 || spec.n_test_normal < 0 || spec.n_test_structural < 0 || spec.n_test_logical < 0) {
    throw ConfigError("logicshapes sample counts must be non-negative");
  }
  SampleRng rng(spec.seed);
  const auto layout = plan_normal(spec, rng);
  if (spec.n_test_structural > 0) {
    bool any = false;
    for (const auto& c : layout.cells) any = any || c.has_value();
    if (!any) throw ConfigError("structural anomalies need at least one object per scene");
  }
  if (spec.n_test_logical > 0 && logical_candidates(spec, layout, rng).empty()) {
    throw ConfigError("no rule can be violated by exactly one edit; logical split impossible");
  }
}

GeneratedSample generate_sample(const LogicShapesSpec& spec, SampleKind kind, int split_tag, int index) {
  SampleRng rng(sample_seed(spec.seed, split_tag, index));
  auto layout = plan_normal(spec, rng);
  GeneratedSample s;
  s.kind = kind;
  s.mask = cv::Mat::zeros(spec.canvas, spec.canvas, CV_8UC1);

  std::vector<size_t> mask_cells;
  if (kind == SampleKind::kLogical) {
    auto cands = logical_candidates(spec, layout, rng);
    if (cands.empty()) throw ConfigError("no applicable logical violation");
    std::vector<std::string> types;
    for (const auto& c : cands) {
      if (std::find(types.begin(), types.end(), c.type) == types.end()) types.push_back(c.type);
    }
    const auto type = rng.pick(types);
    std::vector<LogicalMutation> of_type;
    for (auto& c : cands) {
      if (c.type == type) of_type.push_back(std::move(c));
    }
    auto m = rng.pick(of_type);
    layout = m.layout;
    mask_cells = m.cells;
    s.violated_rule = m.rule;
    s.anomaly_type = m.type;
  }

  const auto placed = render(spec, layout, rng, s.image);
  s.objects = to_objects(layout, spec.grid[1]);

  if (kind == SampleKind::kStructural) {
    std::vector<size_t> occupied;
    for (size_t i = 0; i < layout.cells.size(); ++i) {
      if (layout.cells[i]) occupied.push_back(i);
    }
    if (occupied.empty()) throw ConfigError("structural anomaly needs an object");
    const auto cell = rng.pick(occupied);
    // Footprints clipped away entirely are redrawn.
    for (int attempt = 0; attempt < 16 && cv::countNonZero(s.mask) == 0; ++attempt) {
      s.anomaly_type = corrupt(spec, cell, placed[cell], rng, s.image, s.mask);
    }
    if (cv::countNonZero(s.mask) == 0) throw ContractError("structural corruption produced an empty mask");
  }
  for (auto c : mask_cells) cv::rectangle(s.mask, cell_rect(spec, c), cv::Scalar(255), cv::FILLED);
  return s;
}

void generate_logicshapes(const LogicShapesSpec& spec, const fs::path& out_dir) {
  check_spec(spec);
  struct Split {
    const char* dir;
    const char* gt;
    SampleKind kind;
    int count;
    int tag;
    const char* split;
  };
  const Split splits[] = {
      {"train/good", nullptr, SampleKind::kNormal, spec.n_train, 0, "train"},
      {"test/good", nullptr, SampleKind::kNormal, spec.n_test_normal, 1, "test"},
      {"test/structural_anomalies", "ground_truth/structural_anomalies", SampleKind::kStructural,
       spec.n_test_structural, 2, "test"},
      {"test/logical_anomalies", "ground_truth/logical_anomalies", SampleKind::kLogical, spec.n_test_logical, 3,
       "test"},
  };
  fs::create_directories(out_dir);
  std::ofstream meta(out_dir / "meta.jsonl", std::ios::trunc);
  std::array<double, 3> sum{}, sq{};
  double pixels = 0;
  for (const auto& sp : splits) {
    fs::create_directories(out_dir / sp.dir);
    if (sp.gt) fs::create_directories(out_dir / sp.gt);
    for (int i = 0; i < sp.count; ++i) {
      auto s = generate_sample(spec, sp.kind, sp.tag, i);
      char stem[16];
      std::snprintf(stem, sizeof(stem), "%06d", i);
      const auto rel = fs::path(sp.dir) / (std::string(stem) + ".png");
      if (!cv::imwrite((out_dir / rel).string(), s.image)) throw MissingInputError("cannot write " + rel.string());
      nlohmann::json m{{"split", sp.split}, {"path", rel.generic_string()}, {"kind", to_string(sp.kind)}};
      m["violated_rule"] = s.violated_rule ? nlohmann::json(*s.violated_rule) : nlohmann::json(nullptr);
      m["anomaly_type"] = s.anomaly_type.empty() ? nlohmann::json(nullptr) : nlohmann::json(s.anomaly_type);
      if (sp.gt) {
        const auto mrel = fs::path(sp.gt) / (std::string(stem) + "_mask.png");
        cv::imwrite((out_dir / mrel).string(), s.mask);
        m["mask"] = mrel.generic_string();
      } else {
        m["mask"] = nullptr;
      }
      auto objs = nlohmann::json::array();
      for (const auto& o : s.objects) {
        objs.push_back({{"row", o.row}, {"col", o.col}, {"shape", o.shape}, {"color", o.color}});
      }
      m["objects"] = objs;
      meta << m.dump() << "\n";

      if (sp.tag == 0) {
        for (int y = 0; y < s.image.rows; ++y) {
          for (int x = 0; x < s.image.cols; ++x) {
            const auto px = s.image.at<cv::Vec3b>(y, x);
            for (int c = 0; c < 3; ++c) {
              const double v = px[2 - c] / 255.0;  // BGR -> RGB
              sum[c] += v;
              sq[c] += v * v;
            }
          }
        }
        pixels += s.image.rows * s.image.cols;
      }
    }
  }
  nlohmann::json stats;
  if (pixels > 0) {
    std::array<double, 3> mean{}, sd{};
    for (int c = 0; c < 3; ++c) {
      mean[c] = sum[c] / pixels;
      sd[c] = std::sqrt(std::max(0.0, sq[c] / pixels - mean[c] * mean[c]));
    }
    stats = {{"mean", mean}, {"std", sd}, {"n_images", spec.n_train}};
  } else {
    stats = {{"mean", NormConstants::imagenet().mean}, {"std", NormConstants::imagenet().std}, {"n_images", 0}};
  }
  std::ofstream(out_dir / "stats.json", std::ios::trunc) << stats.dump(2) << "\n";
  std::ofstream(out_dir / "spec.json", std::ios::trunc) << nlohmann::json(spec).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Folder loader

namespace {

bool is_image(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".tif" || ext == ".tiff";
}

std::vector<fs::path> sorted_images(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_image(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

FolderDataset load_folder_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw MissingInputError("dataset root not found: " + root.string());
  FolderDataset ds;
  ds.root = root;
  for (const auto& p : sorted_images(root / "train" / "good")) ds.train.push_back({p, {}, SampleKind::kNormal, {}});

  std::map<std::string, int> violated;
  if (std::ifstream meta(root / "meta.jsonl"); meta) {
    std::string line;
    while (std::getline(meta, line)) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded()) throw ConfigError("malformed meta.jsonl line in " + root.string());
      if (j.contains("violated_rule") && j["violated_rule"].is_number_integer()) {
        violated[j["path"].get<std::string>()] = j["violated_rule"].get<int>();
      }
    }
  }

  std::vector<std::string> missing;
  const auto test_root = root / "test";
  if (fs::is_directory(test_root)) {
    std::vector<fs::path> kinds;
    for (const auto& e : fs::directory_iterator(test_root)) {
      if (e.is_directory()) kinds.push_back(e.path());
    }
    std::sort(kinds.begin(), kinds.end());
    for (const auto& kdir : kinds) {
      const auto name = kdir.filename().string();
      const bool good = name == "good";
      const auto kind = good ? SampleKind::kNormal
                             : (name.find("logical") != std::string::npos ? SampleKind::kLogical
                                                                           : SampleKind::kStructural);
      for (const auto& p : sorted_images(kdir)) {
        SampleRecord rec{p, {}, kind, {}};
        if (!good) {
          const auto gt_dir = root / "ground_truth" / name;
          for (const auto& cand : sorted_images(gt_dir)) {
            if (cand.stem().string() == p.stem().string() + "_mask") {
              rec.mask_path = cand;
              break;
            }
          }
          if (rec.mask_path.empty()) missing.push_back(p.string());
        }
        const auto rel = fs::relative(p, root).generic_string();
        if (auto it = violated.find(rel); it != violated.end()) rec.violated_rule = it->second;
        ds.test.push_back(std::move(rec));
      }
    }
  }
  if (!missing.empty()) {
    std::string msg = "missing ground_truth masks for:";
    for (const auto& m : missing) msg += " " + m;
    throw MissingInputError(msg);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Preprocessing

std::optional<NormConstants> load_dataset_norm(const fs::path& root) {
  std::ifstream f(root / "stats.json");
  if (!f) return std::nullopt;
  try {
    auto j = nlohmann::json::parse(f);
    NormConstants n;
    n.mean = j.at("mean").get<std::array<double, 3>>();
    n.std = j.at("std").get<std::array<double, 3>>();
    return n;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed stats.json in " + root.string() + ": " + e.what());
  }
}

cv::Mat read_image(const fs::path& path) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (img.empty()) throw MissingInputError("cannot decode image: " + path.string());
  return img;
}

cv::Mat read_mask(const fs::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw MissingInputError("cannot decode mask: " + path.string());
  return m;
}

torch::Tensor preprocess(const cv::Mat& bgr, int resolution, const NormConstants& norm) {
  if (bgr.empty() || bgr.type() != CV_8UC3) throw ContractError("preprocess expects an 8-bit 3-channel image");
  cv::Mat resized = bgr;
  if (bgr.rows != resolution || bgr.cols != resolution) {
    cv::resize(bgr, resized, cv::Size(resolution, resolution), 0, 0, cv::INTER_LINEAR);
  }
  cv::Mat rgb;
  cv::cvtColor(resized, rgb, cv::COLOR_BGR2RGB);
  auto t = torch::from_blob(rgb.data, {resolution, resolution, 3}, torch::kUInt8).clone();
  t = t.permute({2, 0, 1}).to(torch::kFloat32).div(255.0);
  auto mean = torch::tensor(std::vector<double>(norm.mean.begin(), norm.mean.end()), torch::kFloat32).view({3, 1, 1});
  auto sd = torch::tensor(std::vector<double>(norm.std.begin(), norm.std.end()), torch::kFloat32).view({3, 1, 1});
  return ((t - mean) / sd).contiguous();
}

torch::Tensor preprocess_mask(const cv::Mat& mask, int resolution) {
  cv::Mat m = mask;
  if (m.channels() != 1) cv::cvtColor(mask, m, cv::COLOR_BGR2GRAY);
  if (m.rows != resolution || m.cols != resolution) {
    cv::resize(m, m, cv::Size(resolution, resolution), 0, 0, cv::INTER_NEAREST);
  }
  auto t = torch::from_blob(m.data, {resolution, resolution}, torch::kUInt8).clone();
  return (t > 0).to(torch::kFloat32);
}

torch::Tensor load_images(const std::vector<SampleRecord>& records, int resolution, const NormConstants& norm) {
  std::vector<torch::Tensor> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(preprocess(read_image(r.image_path), resolution, norm));
  if (out.empty()) return torch::empty({0, 3, resolution, resolution});
  return torch::stack(out);
}

torch::Tensor load_masks(const std::vector<SampleRecord>& records, int resolution) {
  std::vector<torch::Tensor> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    out.push_back(r.mask_path.empty() ? torch::zeros({resolution, resolution})
                                      : preprocess_mask(read_mask(r.mask_path), resolution));
  }
  if (out.empty()) return torch::empty({0, resolution, resolution});
  return torch::stack(out);
}

}  // namespace glcf
