#include "bermo/config.hpp"

#include <fstream>
#include <set>

#include "bermo/checkpoint.hpp"
#include "bermo/error.hpp"

namespace bermo {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown " + where + " key '" + key + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

template <class T>
void read_optional(const json& j, const char* key, std::optional<T>& out) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null()) {
    out.reset();
  } else {
    out = j.at(key).get<T>();
  }
}

}  // namespace

json to_json(const SyntheticTask& t) {
  return {{"kind", std::string(to_string(t.kind))}, {"vocab_size", t.vocab_size},   {"seq_len", t.seq_len},
          {"num_classes", t.num_classes},           {"train_size", t.train_size},   {"val_size", t.val_size},
          {"test_size", t.test_size},               {"seed", t.seed}};
}

SyntheticTask task_from_json(const json& j) {
  reject_unknown(j, {"kind", "vocab_size", "seq_len", "num_classes", "train_size", "val_size", "test_size", "seed"},
                 "task");
  SyntheticTask t;
  if (j.contains("kind")) t.kind = parse_task_kind(j.at("kind").get<std::string>());
  read(j, "vocab_size", t.vocab_size);
  read(j, "seq_len", t.seq_len);
  read(j, "num_classes", t.num_classes);
  read(j, "train_size", t.train_size);
  read(j, "val_size", t.val_size);
  read(j, "test_size", t.test_size);
  read(j, "seed", t.seed);
  return t;
}

json to_json(const RunConfig& c) {
  json model = to_json(c.model);
  // Pruning and architecture selection live at the top level under their
  // hyperparameter names.
  model.erase("pruning_method");
  model.erase("mask_scale");
  model.erase("use_combine");
  return {
      {"model_type", c.model.use_combine ? "masked_elbert" : "masked_bert"},
      {"model_name", c.model_name},
      {"n_gpu", 1},
      {"per_gpu_train_batch_size", c.per_gpu_train_batch_size},
      {"per_gpu_eval_batch_size", c.per_gpu_eval_batch_size},
      {"num_train_epochs", c.num_train_epochs},
      {"max_seq_length", c.task.seq_len},
      {"learning_rate", c.learning_rate},
      {"warmup_steps", c.warmup_steps ? json(*c.warmup_steps) : json(nullptr)},
      {"mask_scores_learning_rate", c.mask_scores_learning_rate},
      {"skip_connection_lr", c.skip_connection_lr ? json(*c.skip_connection_lr) : json(nullptr)},
      {"initial_threshold", c.initial_threshold},
      {"final_threshold", c.final_threshold},
      {"initial_warmup", c.initial_warmup},
      {"final_warmup", c.final_warmup},
      {"pruning_method", std::string(to_string(c.model.pruning))},
      {"mask_init", "constant"},
      {"mask_scale", c.model.mask_scale},
      {"regularization", std::string(to_string(c.regularization))},
      {"final_lambda", c.final_lambda},
      {"teacher_type", c.teacher_type},
      {"teacher_name_or_path", c.teacher_name_or_path},
      {"alpha_ce", c.distill.alpha_ce},
      {"alpha_distill", c.distill.alpha_distill},
      {"temperature", c.distill.temperature},
      {"optimizer", std::string(to_string(c.optimizer))},
      {"weight_decay", c.weight_decay},
      {"max_grad_norm", c.max_grad_norm},
      {"lr_schedule", c.linear_lr_schedule ? "linear" : "constant"},
      {"seed", c.seed},
      {"model", std::move(model)},
      {"task", to_json(c.task)},
  };
}

RunConfig run_config_from_json(const json& j) {
  reject_unknown(j,
                 {"model_type", "model_name", "n_gpu", "per_gpu_train_batch_size", "per_gpu_eval_batch_size",
                  "num_train_epochs", "max_seq_length", "learning_rate", "warmup_steps", "mask_scores_learning_rate",
                  "skip_connection_lr", "initial_threshold", "final_threshold", "initial_warmup", "final_warmup",
                  "pruning_method", "mask_init", "mask_scale", "regularization", "final_lambda", "teacher_type",
                  "teacher_name_or_path", "alpha_ce", "alpha_distill", "temperature", "optimizer", "weight_decay",
                  "max_grad_norm", "lr_schedule", "seed", "model", "task"},
                 "config");
  try {
    RunConfig c;
    if (j.contains("model")) {
      const json& m = j.at("model");
      reject_unknown(m,
                     {"encoder", "num_classes", "mask_scope", "combine_dropout", "combine_epsilon", "hard_concrete",
                      "use_combine", "pruning_method", "mask_scale"},
                     "model");
      c.model = model_config_from_json(m);
    }
    if (j.contains("task")) c.task = task_from_json(j.at("task"));
    if (j.contains("model_type")) {
      const auto type = j.at("model_type").get<std::string>();
      if (type == "masked_elbert") {
        c.model.use_combine = true;
      } else if (type == "masked_bert") {
        c.model.use_combine = false;
      } else {
        throw ConfigError("unknown model_type '" + type + "' (expected masked_bert or masked_elbert)");
      }
    }
    read(j, "model_name", c.model_name);
    if (j.contains("n_gpu") && j.at("n_gpu").get<int>() != 1) throw ConfigError("only n_gpu = 1 is supported");
    read(j, "per_gpu_train_batch_size", c.per_gpu_train_batch_size);
    read(j, "per_gpu_eval_batch_size", c.per_gpu_eval_batch_size);
    read(j, "num_train_epochs", c.num_train_epochs);
    if (j.contains("max_seq_length")) {
      c.task.seq_len = j.at("max_seq_length").get<std::size_t>();
      c.model.encoder.max_seq_len = std::max(c.model.encoder.max_seq_len, c.task.seq_len);
    }
    read(j, "learning_rate", c.learning_rate);
    read_optional(j, "warmup_steps", c.warmup_steps);
    read(j, "mask_scores_learning_rate", c.mask_scores_learning_rate);
    read_optional(j, "skip_connection_lr", c.skip_connection_lr);
    read(j, "initial_threshold", c.initial_threshold);
    read(j, "final_threshold", c.final_threshold);
    read(j, "initial_warmup", c.initial_warmup);
    read(j, "final_warmup", c.final_warmup);
    if (j.contains("pruning_method")) c.model.pruning = parse_pruning_method(j.at("pruning_method").get<std::string>());
    if (j.contains("mask_init") && j.at("mask_init").get<std::string>() != "constant") {
      throw ConfigError("only mask_init = constant is supported");
    }
    read(j, "mask_scale", c.model.mask_scale);
    if (j.contains("regularization")) c.regularization = parse_regularization(j.at("regularization").get<std::string>());
    read(j, "final_lambda", c.final_lambda);
    read(j, "teacher_type", c.teacher_type);
    read(j, "teacher_name_or_path", c.teacher_name_or_path);
    read(j, "alpha_ce", c.distill.alpha_ce);
    read(j, "alpha_distill", c.distill.alpha_distill);
    read(j, "temperature", c.distill.temperature);
    if (j.contains("optimizer")) c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
    read(j, "weight_decay", c.weight_decay);
    read(j, "max_grad_norm", c.max_grad_norm);
    if (j.contains("lr_schedule")) {
      const auto s = j.at("lr_schedule").get<std::string>();
      if (s != "linear" && s != "constant") throw ConfigError("lr_schedule must be linear or constant");
      c.linear_lr_schedule = s == "linear";
    }
    read(j, "seed", c.seed);
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config value: ") + e.what());
  }
}

namespace {

// Shortcut flag -> JSON pointers it writes.
const std::vector<std::pair<std::string, std::vector<std::string>>>& shortcuts() {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> table = {
      {"task_kind", {"/task/kind"}},
      {"train_size", {"/task/train_size"}},
      {"val_size", {"/task/val_size"}},
      {"test_size", {"/task/test_size"}},
      {"task_seed", {"/task/seed"}},
      {"num_classes", {"/task/num_classes", "/model/num_classes"}},
      {"num_layers", {"/model/encoder/num_layers"}},
      {"hidden_dim", {"/model/encoder/hidden_dim"}},
      {"num_heads", {"/model/encoder/num_heads"}},
      {"ffn_dim", {"/model/encoder/ffn_dim"}},
      {"mask_scope", {"/model/mask_scope"}},
      {"combine_dropout", {"/model/combine_dropout"}},
  };
  return table;
}

json parse_override(const json& current, const std::string& key, const std::string& text) {
  if (current.is_string()) return text;
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    throw ConfigError("invalid value '" + text + "' for " + key);
  }
  if (value.is_null() || value.is_number() || value.is_boolean()) return value;
  throw ConfigError("invalid value '" + text + "' for " + key);
}

}  // namespace

const std::vector<std::string>& override_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    const json defaults = to_json(RunConfig{});
    for (const auto& [key, _] : defaults.items()) {
      if (key != "model" && key != "task") out.push_back(key);
    }
    for (const auto& [key, _] : shortcuts()) out.push_back(key);
    return out;
  }();
  return keys;
}

void apply_override(json& doc, const std::string& key, const std::string& text) {
  for (const auto& [name, pointers] : shortcuts()) {
    if (name != key) continue;
    for (const auto& p : pointers) {
      const json::json_pointer ptr(p);
      doc[ptr] = parse_override(doc.contains(ptr) ? doc[ptr] : json(0), key, text);
    }
    return;
  }
  const json defaults = to_json(RunConfig{});
  if (!defaults.contains(key) || key == "model" || key == "task") throw ConfigError("unknown option '" + key + "'");
  doc[key] = parse_override(defaults.at(key), key, text);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

void save_run_config(const RunConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config file " + path.string());
  out << to_json(cfg).dump(2) << '\n';
}

}  // namespace bermo
