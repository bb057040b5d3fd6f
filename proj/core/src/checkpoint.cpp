#include <fstream>
#include <sstream>

#include "json.hpp"
#include "tabsage/error.hpp"
#include "tabsage/sage_model.hpp"

namespace tabsage {

namespace {

using nlohmann::json;

constexpr const char* kFormat = "tabsage.checkpoint";

json to_json_array(std::span<const double> values) { return json(std::vector<double>(values.begin(), values.end())); }

void copy_into(const json& values, std::span<double> dst, const std::string& what) {
  if (!values.is_array() || values.size() != dst.size()) {
    throw Error(ErrorCode::CheckpointFormat, what + ": expected " + std::to_string(dst.size()) + " values");
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = values[i].get<double>();
}

}  // namespace

std::string checkpoint_to_json(const Checkpoint& checkpoint) {
  const auto& model = checkpoint.model;
  json doc;
  doc["format"] = kFormat;
  doc["version"] = kCheckpointVersion;
  doc["config"] = {{"hidden", model.config.hidden}, {"depth", model.config.depth}, {"dropout", model.config.dropout}};
  doc["input_dim"] = model.input_dim;
  doc["record"] = {{"feature_group", std::string(1, checkpoint.record.feature_group)},
                   {"k", checkpoint.record.k},
                   {"task", std::string(to_string(checkpoint.record.task))},
                   {"seed", checkpoint.record.seed}};

  json params = json::array();
  for (const auto& [name, tensor] : model.named_parameters()) {
    params.push_back({{"name", name}, {"shape", {tensor.rows(), tensor.cols()}}, {"values", to_json_array(tensor.values())}});
  }
  doc["parameters"] = std::move(params);

  json norms = json::array();
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    norms.push_back({{"layer", l},
                     {"running_mean", model.layers[l].norm.running_mean},
                     {"running_var", model.layers[l].norm.running_var}});
  }
  doc["batch_norm"] = std::move(norms);

  json features = json::array();
  for (const auto& r : checkpoint.normalizer.feature_ranges()) features.push_back({{"min", r.min}, {"max", r.max}});
  const auto target = checkpoint.normalizer.target_scale();
  doc["normalizer"] = {{"features", std::move(features)}, {"target", {{"mean", target.mean}, {"std", target.std}}}};
  return doc.dump(1) + "\n";
}

Checkpoint checkpoint_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CheckpointFormat, e.what());
  }
  try {
    if (doc.value("format", "") != kFormat) throw Error(ErrorCode::CheckpointFormat, "not a tabsage checkpoint");
    if (doc.at("version").get<int>() != kCheckpointVersion) {
      throw Error(ErrorCode::CheckpointFormat, "unsupported version " + doc.at("version").dump());
    }
    SageConfig config;
    config.hidden = doc.at("config").at("hidden").get<std::size_t>();
    config.depth = doc.at("config").at("depth").get<std::size_t>();
    config.dropout = doc.at("config").at("dropout").get<double>();

    Checkpoint cp{init_model(doc.at("input_dim").get<std::size_t>(), config, 0), {}, {}};

    const auto& record = doc.at("record");
    const auto group = record.at("feature_group").get<std::string>();
    if (group.size() != 1) throw Error(ErrorCode::CheckpointFormat, "bad feature group '" + group + "'");
    cp.record.feature_group = group[0];
    cp.record.k = record.at("k").get<std::size_t>();
    cp.record.task = parse_task(record.at("task").get<std::string>());
    cp.record.seed = record.at("seed").get<std::uint64_t>();

    const auto named = cp.model.named_parameters();
    const auto& params = doc.at("parameters");
    if (params.size() != named.size()) throw Error(ErrorCode::CheckpointFormat, "parameter count mismatch");
    for (std::size_t i = 0; i < named.size(); ++i) {
      auto tensor = named[i].second;
      if (params[i].at("name").get<std::string>() != named[i].first) {
        throw Error(ErrorCode::CheckpointFormat, "expected parameter " + named[i].first);
      }
      const auto shape = params[i].at("shape").get<std::vector<std::size_t>>();
      if (shape != std::vector<std::size_t>{tensor.rows(), tensor.cols()}) {
        throw Error(ErrorCode::CheckpointFormat, named[i].first + ": shape mismatch");
      }
      copy_into(params[i].at("values"), tensor.mutable_values(), named[i].first);
    }

    const auto& norms = doc.at("batch_norm");
    if (norms.size() != cp.model.layers.size()) throw Error(ErrorCode::CheckpointFormat, "batch_norm layer count mismatch");
    for (std::size_t l = 0; l < cp.model.layers.size(); ++l) {
      auto& norm = cp.model.layers[l].norm;
      copy_into(norms[l].at("running_mean"), norm.running_mean, "running_mean");
      copy_into(norms[l].at("running_var"), norm.running_var, "running_var");
    }

    std::vector<Normalizer::Range> ranges;
    for (const auto& r : doc.at("normalizer").at("features")) ranges.push_back({r.at("min").get<double>(), r.at("max").get<double>()});
    const auto& t = doc.at("normalizer").at("target");
    cp.normalizer = Normalizer(std::move(ranges), {t.at("mean").get<double>(), t.at("std").get<double>()});
    return cp;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CheckpointFormat, e.what());
  }
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << checkpoint_to_json(checkpoint);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return checkpoint_from_json(buffer.str());
}

}  // namespace tabsage
