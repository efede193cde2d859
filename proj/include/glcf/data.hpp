#pragma once

#include <torch/torch.h>

#include <opencv2/core.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace glcf {

// ---------------------------------------------------------------------------
// LogicShapes: synthetic scenes on a grid with checkable composition rules.

enum class RuleKind { kExactCount, kCellBinding, kColorPairing };

struct Rule {
  RuleKind kind = RuleKind::kExactCount;
  std::string shape;           // all kinds
  int count = 0;               // exact_count
  std::array<int, 2> cell{};   // cell_binding (row, col)
  std::string color;           // cell_binding, color_pairing
};

struct VocabEntry {
  std::string shape;  // circle | square | triangle
  std::string color;  // key of the palette
};

struct LogicShapesSpec {
  int canvas = 64;
  std::array<int, 2> grid{2, 2};  // rows, cols
  std::vector<VocabEntry> vocabulary;
  std::vector<Rule> rules;
  int n_train = 500;
  int n_test_normal = 100;
  int n_test_structural = 100;
  int n_test_logical = 100;
  uint64_t seed = 0;

  static LogicShapesSpec defaults();
};

void to_json(nlohmann::json& j, const LogicShapesSpec& s);
void from_json(const nlohmann::json& j, LogicShapesSpec& s);

struct SceneObject {
  int row = 0, col = 0;
  std::string shape;
  std::string color;
};

// RGB palette used for rendering; names are the vocabulary colour keys.
const std::vector<std::pair<std::string, std::array<uint8_t, 3>>>& palette();

// Ids (indices into spec.rules) of every violated rule; empty means the scene passes.
std::vector<int> verify_rules(const std::vector<SceneObject>& objects, const LogicShapesSpec& spec);

// Throws ConfigError when the rules cannot all hold at once, the vocabulary
// cannot realise them, or a requested logical split has no applicable violation.
void check_spec(const LogicShapesSpec& spec);

enum class SampleKind { kNormal, kStructural, kLogical };
std::string to_string(SampleKind k);

struct GeneratedSample {
  cv::Mat image;  // BGR, canvas x canvas
  cv::Mat mask;   // single channel {0,255}
  SampleKind kind = SampleKind::kNormal;
  std::optional<int> violated_rule;
  std::string anomaly_type;  // e.g. "missing_object", "scratch"
  std::vector<SceneObject> objects;
};

// One sample; a pure function of (spec, split tag, index).
GeneratedSample generate_sample(const LogicShapesSpec& spec, SampleKind kind, int split_tag, int index);

// Writes an MVTec-style tree (train/good, test/{good,structural_anomalies,
// logical_anomalies}, ground_truth/...), meta.jsonl, spec.json and stats.json.
// The spec is checked before anything is written.
void generate_logicshapes(const LogicShapesSpec& spec, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Folder datasets

struct SampleRecord {
  std::filesystem::path image_path;
  std::filesystem::path mask_path;  // empty for normal samples
  SampleKind kind = SampleKind::kNormal;
  std::optional<int> violated_rule;
};

struct FolderDataset {
  std::filesystem::path root;
  std::vector<SampleRecord> train;
  std::vector<SampleRecord> test;
};

// Layout: train/good/*, test/<kind>/*, ground_truth/<kind>/<stem>_mask.*.
// Test directories other than "good" are structural unless the name contains
// "logical". Anomalous images without a mask -> MissingInputError naming them.
FolderDataset load_folder_dataset(const std::filesystem::path& root);

// ---------------------------------------------------------------------------
// Preprocessing

struct NormConstants {
  std::array<double, 3> mean{0.485, 0.456, 0.406};  // RGB
  std::array<double, 3> std{0.229, 0.224, 0.225};

  static NormConstants imagenet() { return {}; }
};

// Reads stats.json written by the generator, if present.
std::optional<NormConstants> load_dataset_norm(const std::filesystem::path& root);

cv::Mat read_image(const std::filesystem::path& path);  // BGR; undecodable -> MissingInputError
cv::Mat read_mask(const std::filesystem::path& path);   // single channel

// Bilinear resize, scale to [0,1], per-channel (x - mean) / std. Returns 3 x R x R (RGB).
torch::Tensor preprocess(const cv::Mat& bgr, int resolution, const NormConstants& norm);
// Nearest-neighbour resize to R x R with values {0, 1}.
torch::Tensor preprocess_mask(const cv::Mat& mask, int resolution);

torch::Tensor load_images(const std::vector<SampleRecord>& records, int resolution, const NormConstants& norm);
torch::Tensor load_masks(const std::vector<SampleRecord>& records, int resolution);

}  // namespace glcf
