#include "bermo/checkpoint.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "bermo/error.hpp"

namespace bermo {

using nlohmann::json;

json to_json(const EncoderConfig& c) {
  return {{"num_layers", c.num_layers},     {"hidden_dim", c.hidden_dim},
          {"num_heads", c.num_heads},       {"ffn_dim", c.ffn_dim},
          {"vocab_size", c.vocab_size},     {"max_seq_len", c.max_seq_len},
          {"num_segments", c.num_segments}, {"dropout_p", c.dropout_p},
          {"layer_norm_eps", c.layer_norm_eps}, {"initializer_range", c.initializer_range}};
}

namespace {

void require_known(const json& j, std::initializer_list<const char*> known, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      throw ConfigError(std::string("unknown ") + where + " key '" + key + "'");
    }
  }
}

}  // namespace

EncoderConfig encoder_config_from_json(const json& j) {
  require_known(j,
                {"num_layers", "hidden_dim", "num_heads", "ffn_dim", "vocab_size", "max_seq_len", "num_segments",
                 "dropout_p", "layer_norm_eps", "initializer_range"},
                "encoder");
  EncoderConfig c;
  c.num_layers = j.value("num_layers", c.num_layers);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.num_heads = j.value("num_heads", c.num_heads);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.num_segments = j.value("num_segments", c.num_segments);
  c.dropout_p = j.value("dropout_p", c.dropout_p);
  c.layer_norm_eps = j.value("layer_norm_eps", c.layer_norm_eps);
  c.initializer_range = j.value("initializer_range", c.initializer_range);
  return c;
}

json to_json(const ModelConfig& c) {
  return {{"encoder", to_json(c.encoder)},
          {"use_combine", c.use_combine},
          {"num_classes", c.num_classes},
          {"pruning_method", std::string(to_string(c.pruning))},
          {"mask_scale", c.mask_scale},
          {"mask_scope", std::string(to_string(c.mask_scope))},
          {"combine_dropout", c.combine_dropout},
          {"combine_epsilon", c.combine_epsilon},
          {"hard_concrete", {{"beta", c.hard_concrete.beta}, {"gamma", c.hard_concrete.gamma},
                             {"epsilon", c.hard_concrete.epsilon}}}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  if (j.contains("encoder")) c.encoder = encoder_config_from_json(j.at("encoder"));
  c.use_combine = j.value("use_combine", c.use_combine);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.pruning = parse_pruning_method(j.value("pruning_method", std::string(to_string(c.pruning))));
  c.mask_scale = j.value("mask_scale", c.mask_scale);
  c.mask_scope = parse_mask_scope(j.value("mask_scope", std::string(to_string(c.mask_scope))));
  c.combine_dropout = j.value("combine_dropout", c.combine_dropout);
  c.combine_epsilon = j.value("combine_epsilon", c.combine_epsilon);
  if (j.contains("hard_concrete")) {
    const json& h = j.at("hard_concrete");
    require_known(h, {"beta", "gamma", "epsilon"}, "hard_concrete");
    c.hard_concrete.beta = h.value("beta", c.hard_concrete.beta);
    c.hard_concrete.gamma = h.value("gamma", c.hard_concrete.gamma);
    c.hard_concrete.epsilon = h.value("epsilon", c.hard_concrete.epsilon);
  }
  return c;
}

json checkpoint_json(const BermoModel& model, double eval_threshold) {
  json params = json::array();
  for (const auto& p : model.parameters()) {
    params.push_back({{"name", p.name},
                      {"group", std::string(to_string(p.group))},
                      {"shape", p.tensor.shape()},
                      {"values", std::vector<double>(p.tensor.data().begin(), p.tensor.data().end())}});
  }
  return {{"format", "bermo-checkpoint"},
          {"version", kCheckpointVersion},
          {"model", to_json(model.config())},
          {"eval_threshold", eval_threshold},
          {"parameters", std::move(params)}};
}

void save_checkpoint(const BermoModel& model, double eval_threshold, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << checkpoint_json(model, eval_threshold).dump() << '\n';
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

LoadedCheckpoint checkpoint_from_json(const json& j) {
  try {
    if (j.value("format", "") != "bermo-checkpoint") throw ConfigError("not a bermo checkpoint manifest");
    if (j.value("version", 0) != kCheckpointVersion) {
      throw ConfigError("unsupported checkpoint version " + std::to_string(j.value("version", 0)));
    }
    LoadedCheckpoint out;
    out.model = BermoModel(model_config_from_json(j.at("model")), 0);
    out.eval_threshold = j.value("eval_threshold", 1.0);

    std::map<std::string, const json*> stored;
    for (const json& p : j.at("parameters")) stored[p.at("name").get<std::string>()] = &p;
    for (auto& p : out.model.parameters()) {
      auto it = stored.find(p.name);
      if (it == stored.end()) throw ConfigError("checkpoint is missing parameter '" + p.name + "'");
      const auto shape = it->second->at("shape").get<Shape>();
      const auto values = it->second->at("values").get<std::vector<double>>();
      if (shape != p.tensor.shape() || values.size() != p.tensor.numel()) {
        throw ConfigError("parameter '" + p.name + "' has shape " + to_string(shape) + ", model expects " +
                          to_string(p.tensor.shape()));
      }
      std::copy(values.begin(), values.end(), p.tensor.mutable_data().begin());
      stored.erase(it);
    }
    if (!stored.empty()) throw ConfigError("checkpoint has unexpected parameter '" + stored.begin()->first + "'");
    return out;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("corrupt checkpoint " + path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace bermo
