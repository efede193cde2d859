#include "glcf/checkpoint.hpp"

#include "glcf/errors.hpp"

namespace glcf {

void save_checkpoint(const std::filesystem::path& path, GlcfModel& model, const RunConfig& config,
                     const std::vector<LossRecord>& history) {
  TensorArchive ar;
  for (auto& [name, t] : model->trainable_state()) ar.tensors[name] = t.detach().to(torch::kFloat32).contiguous();
  ar.metadata["__config__"] = config;
  auto h = nlohmann::json::array();
  for (const auto& r : history) {
    h.push_back({{"epoch", r.epoch}, {"loss_c", r.loss_c}, {"loss_el", r.loss_el}, {"loss_eg", r.loss_eg},
                 {"total", r.total}});
  }
  ar.metadata["history"] = h;
  ar.metadata["backbone"] = {
      {"seed", config.backbone.seed},
      {"source", config.backbone.source == WeightSource::kArchive ? "archive" : "random_frozen"},
      {"digest", parameter_digest(*model->backbone)}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  save_tensor_archive(path, ar);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto ar = read_tensor_archive(path);
  if (!ar.metadata.contains("__config__")) throw ContractError("checkpoint has no __config__: " + path.string());
  Checkpoint ck;
  try {
    ck.config = ar.metadata["__config__"].get<RunConfig>();
    if (ar.metadata.contains("history")) {
      for (const auto& r : ar.metadata["history"]) {
        ck.history.push_back({r.at("epoch").get<int64_t>(), r.at("loss_c").get<double>(), r.at("loss_el").get<double>(),
                              r.at("loss_eg").get<double>(), r.at("total").get<double>()});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ContractError("malformed checkpoint metadata in " + path.string() + ": " + e.what());
  }
  ck.model = GlcfModel(ck.config.model(), ck.config.training.seed);
  if (ar.metadata.contains("backbone") && ar.metadata["backbone"].contains("digest")) {
    const auto want = ar.metadata["backbone"]["digest"].get<std::string>();
    const auto have = parameter_digest(*ck.model->backbone);
    if (want != have) {
      throw ContractError("backbone digest mismatch for " + path.string() + " (recorded " + want + ", rebuilt " + have +
                          ")");
    }
  }
  ck.model->load_trainable_state(ar.tensors);
  ck.model->eval();
  return ck;
}

}  // namespace glcf
