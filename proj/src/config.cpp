// Copyright (c) 2026, The teamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "teamoe/config.hpp"

#include "json.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace teamoe {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string join_errors(const std::vector<FieldError>& errors) {
  std::string out = "invalid run config:";
  for (const auto& e : errors) out += "\n  " + e.field + ": " + e.message;
  return out;
}

// Assigns one JSON value into a config field, recording a field error on a
// type mismatch.
template <typename T>
std::function<void(const json&)> setter(T& field, const std::string& name, std::vector<FieldError>& errors) {
  return [&field, name, &errors](const json& v) {
    try {
      field = v.get<T>();
    } catch (const json::exception&) {
      errors.push_back({name, "wrong type: " + v.dump()});
    }
  };
}

template <typename T>
std::function<void(const json&)> optional_setter(std::optional<T>& field, const std::string& name,
                                                 std::vector<FieldError>& errors) {
  return [&field, name, &errors](const json& v) {
    if (v.is_null()) {
      field.reset();
      return;
    }
    try {
      field = v.get<T>();
    } catch (const json::exception&) {
      errors.push_back({name, "wrong type: " + v.dump()});
    }
  };
}

template <typename T, typename Parse>
std::function<void(const json&)> enum_setter(T& field, const std::string& name, std::vector<FieldError>& errors,
                                             Parse parse) {
  return [&field, name, &errors, parse](const json& v) {
    if (!v.is_string()) {
      errors.push_back({name, "expected a string, got " + v.dump()});
      return;
    }
    try {
      field = parse(v.get<std::string>());
    } catch (const ConfigError& e) {
      errors.push_back({name, e.what()});
    }
  };
}

}  // namespace

ConfigValidationError::ConfigValidationError(std::vector<FieldError> errors)
    : ConfigError(join_errors(errors)), errors_(std::move(errors)) {}

RunConfig parse_run_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigValidationError(std::vector<FieldError>{{"<document>", e.what()}});
  }
  if (!doc.is_object()) throw ConfigValidationError(std::vector<FieldError>{{"<document>", "top level must be an object"}});

  RunConfig c;
  std::vector<FieldError> errors;
  using Table = std::map<std::string, std::function<void(const json&)>>;
  std::map<std::string, Table> sections;
  sections["data"] = {
      {"n_tasks", setter(c.n_tasks, "data.n_tasks", errors)},
      {"n_eras", setter(c.n_eras, "data.n_eras", errors)},
      {"d_in", setter(c.d_in, "data.d_in", errors)},
      {"n_classes", setter(c.n_classes, "data.n_classes", errors)},
      {"train_per_cell", setter(c.train_per_cell, "data.train_per_cell", errors)},
      {"dev_per_cell", setter(c.dev_per_cell, "data.dev_per_cell", errors)},
      {"test_per_cell", setter(c.test_per_cell, "data.test_per_cell", errors)},
      {"conflict", setter(c.conflict, "data.conflict", errors)},
      {"noise_sigma", setter(c.noise_sigma, "data.noise_sigma", errors)},
  };
  sections["model"] = {
      {"d_model", setter(c.d_model, "model.d_model", errors)},
      {"depth", setter(c.depth, "model.depth", errors)},
      {"rank", setter(c.rank, "model.rank", errors)},
      {"n_experts", setter(c.n_experts, "model.n_experts", errors)},
      {"alpha", optional_setter(c.alpha, "model.alpha", errors)},
      {"dropout", setter(c.dropout, "model.dropout", errors)},
      {"d_task", setter(c.d_task, "model.d_task", errors)},
      {"d_era", setter(c.d_era, "model.d_era", errors)},
      {"d_hidden", setter(c.d_hidden, "model.d_hidden", errors)},
      {"per_layer_router", setter(c.per_layer_router, "model.per_layer_router", errors)},
      {"mode", enum_setter(c.mode, "model.mode", errors, parse_routing_mode)},
      {"granularity", enum_setter(c.granularity, "model.granularity", errors, parse_granularity)},
      {"coarse_task_map", setter(c.coarse_task_map, "model.coarse_task_map", errors)},
      {"fine_task_map", setter(c.fine_task_map, "model.fine_task_map", errors)},
  };
  sections["train"] = {
      {"epochs", setter(c.epochs, "train.epochs", errors)},
      {"batch_size", setter(c.batch_size, "train.batch_size", errors)},
      {"learning_rate", setter(c.learning_rate, "train.learning_rate", errors)},
      {"optimizer", enum_setter(c.optimizer, "train.optimizer", errors, parse_optimizer)},
      {"lr_schedule", enum_setter(c.lr_schedule, "train.lr_schedule", errors, parse_lr_schedule)},
      {"beta1", setter(c.beta1, "train.beta1", errors)},
      {"beta2", setter(c.beta2, "train.beta2", errors)},
      {"eps", setter(c.eps, "train.eps", errors)},
  };
  std::string out_text = c.out.string();
  Table top = {
      {"seed", setter(c.seed, "seed", errors)},
      {"out", setter(out_text, "out", errors)},
      {"jobs", setter(c.jobs, "jobs", errors)},
  };

  // A partial fine map in the file would otherwise be silently replaced.
  bool fine_given = false;
  for (const auto& [key, value] : doc.items()) {
    if (auto s = sections.find(key); s != sections.end()) {
      if (!value.is_object()) {
        errors.push_back({key, "expected an object"});
        continue;
      }
      for (const auto& [field, v] : value.items()) {
        auto f = s->second.find(field);
        if (f == s->second.end()) {
          errors.push_back({key + "." + field, "unknown field"});
        } else {
          f->second(v);
          if (key == "model" && field == "fine_task_map") fine_given = true;
        }
      }
    } else if (auto t = top.find(key); t != top.end()) {
      t->second(value);
    } else {
      errors.push_back({key, "unknown field"});
    }
  }
  c.out = out_text;
  if (!fine_given) {
    c.fine_task_map.resize(static_cast<std::size_t>(std::max(c.n_tasks, 0)));
    for (int i = 0; i < c.n_tasks; ++i) c.fine_task_map[static_cast<std::size_t>(i)] = i;
  }
  if (!errors.empty()) throw ConfigValidationError(std::move(errors));
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigValidationError({{"--config", "cannot read " + path.string()}});
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

std::string dump_run_config(const RunConfig& c) {
  ordered_json j;
  j["data"] = {{"n_tasks", c.n_tasks},           {"n_eras", c.n_eras},
               {"d_in", c.d_in},                 {"n_classes", c.n_classes},
               {"train_per_cell", c.train_per_cell}, {"dev_per_cell", c.dev_per_cell},
               {"test_per_cell", c.test_per_cell}, {"conflict", c.conflict},
               {"noise_sigma", c.noise_sigma}};
  ordered_json model;
  model["d_model"] = c.d_model;
  model["depth"] = c.depth;
  model["rank"] = c.rank;
  model["n_experts"] = c.n_experts;
  model["alpha"] = c.alpha ? ordered_json(*c.alpha) : ordered_json(nullptr);
  model["dropout"] = c.dropout;
  model["d_task"] = c.d_task;
  model["d_era"] = c.d_era;
  model["d_hidden"] = c.d_hidden;
  model["per_layer_router"] = c.per_layer_router;
  model["mode"] = std::string(to_string(c.mode));
  model["granularity"] = std::string(to_string(c.granularity));
  model["coarse_task_map"] = c.coarse_task_map;
  model["fine_task_map"] = c.fine_task_map;
  j["model"] = std::move(model);
  j["train"] = {{"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"learning_rate", c.learning_rate},
                {"optimizer", std::string(to_string(c.optimizer))},
                {"lr_schedule", std::string(to_string(c.lr_schedule))},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"eps", c.eps}};
  j["seed"] = c.seed;
  j["out"] = c.out.string();
  j["jobs"] = c.jobs;
  return j.dump(2) + "\n";
}

void apply_overrides(RunConfig& c, const ConfigOverrides& o) {
  std::vector<FieldError> errors;
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.out = *o.out;
  if (o.n_experts) c.n_experts = *o.n_experts;
  if (o.rank) c.rank = *o.rank;
  if (o.conflict) c.conflict = *o.conflict;
  if (o.mode) {
    try {
      c.mode = parse_routing_mode(*o.mode);
    } catch (const ConfigError& e) {
      errors.push_back({"--mode", e.what()});
    }
  }
  if (o.granularity) {
    try {
      c.granularity = parse_granularity(*o.granularity);
    } catch (const ConfigError& e) {
      errors.push_back({"--granularity", e.what()});
    }
  }
  if (!errors.empty()) throw ConfigValidationError(std::move(errors));
}

std::vector<FieldError> check_run_config(const RunConfig& c) {
  std::vector<FieldError> errors;
  auto need = [&](bool ok, const char* field, const std::string& message) {
    if (!ok) errors.push_back({field, message});
  };
  need(c.n_tasks >= 1, "data.n_tasks", "must be >= 1");
  need(c.n_eras >= 1, "data.n_eras", "must be >= 1");
  need(c.d_in >= 1, "data.d_in", "must be >= 1");
  need(static_cast<int>(c.n_classes.size()) == c.n_tasks, "data.n_classes", "needs one entry per task");
  for (int k : c.n_classes) need(k >= 2, "data.n_classes", "entries must be >= 2");
  need(c.train_per_cell >= 1, "data.train_per_cell", "must be >= 1");
  need(c.dev_per_cell >= 1, "data.dev_per_cell", "must be >= 1");
  need(c.test_per_cell >= 1, "data.test_per_cell", "must be >= 1");
  need(c.conflict >= 0.0 && c.conflict <= 1.0, "data.conflict", "must lie in [0, 1]");
  need(c.noise_sigma >= 0.0, "data.noise_sigma", "must be >= 0");

  need(c.d_model >= 1, "model.d_model", "must be >= 1");
  need(c.depth >= 1, "model.depth", "must be >= 1");
  need(c.rank >= 1, "model.rank", "must be >= 1");
  need(c.n_experts >= 1, "model.n_experts", "must be >= 1");
  if (c.rank >= 1 && c.n_experts >= 1) {
    need(c.rank % c.n_experts == 0, "model.rank",
         std::to_string(c.rank) + " is not divisible by model.n_experts = " + std::to_string(c.n_experts));
  }
  need(c.mode != RoutingMode::NoMoE || c.n_experts == 1, "model.n_experts", "no-moe mode needs exactly 1 expert");
  need(!c.alpha || *c.alpha > 0.0, "model.alpha", "must be positive");
  need(c.dropout >= 0.0 && c.dropout < 1.0, "model.dropout", "must lie in [0, 1)");
  need(c.d_task >= 1 && c.d_era >= 1 && c.d_hidden >= 1, "model.d_task", "router widths must be >= 1");
  for (auto [name, table] : {std::pair{"model.coarse_task_map", &c.coarse_task_map},
                             std::pair{"model.fine_task_map", &c.fine_task_map}}) {
    if (static_cast<int>(table->size()) != c.n_tasks) {
      errors.push_back({name, "needs one task id per dataset (" + std::to_string(c.n_tasks) + ")"});
      continue;
    }
    std::set<int> ids(table->begin(), table->end());
    if (ids.empty() || *ids.begin() != 0 || *ids.rbegin() != static_cast<int>(ids.size()) - 1) {
      errors.push_back({name, "task ids must cover 0..k-1 without gaps"});
    }
  }

  need(c.epochs >= 0, "train.epochs", "must be >= 0");
  need(c.batch_size >= 1, "train.batch_size", "must be >= 1");
  need(c.learning_rate > 0.0, "train.learning_rate", "must be > 0");
  need(c.beta1 >= 0.0 && c.beta1 < 1.0, "train.beta1", "must lie in [0, 1)");
  need(c.beta2 >= 0.0 && c.beta2 < 1.0, "train.beta2", "must lie in [0, 1)");
  need(c.eps > 0.0, "train.eps", "must be > 0");
  need(!c.out.empty(), "out", "must not be empty");
  need(c.jobs >= 1, "jobs", "must be >= 1");
  return errors;
}

void validate(const RunConfig& config) {
  auto errors = check_run_config(config);
  if (!errors.empty()) throw ConfigValidationError(std::move(errors));
}

SynthSpec synth_spec(const RunConfig& c) {
  SynthSpec s;
  s.n_tasks = c.n_tasks;
  s.n_eras = c.n_eras;
  s.d_in = c.d_in;
  s.n_classes = c.n_classes;
  s.train_per_cell = c.train_per_cell;
  s.dev_per_cell = c.dev_per_cell;
  s.test_per_cell = c.test_per_cell;
  s.conflict = c.conflict;
  s.noise_sigma = c.noise_sigma;
  s.seed = derive_seed(c.seed, seed_stream::kData);
  return s;
}

TaskGranularity coarse_granularity(const RunConfig& c) {
  return TaskGranularity(TaskGranularity::Kind::Coarse, c.coarse_task_map);
}

TaskGranularity fine_granularity(const RunConfig& c) { return TaskGranularity(TaskGranularity::Kind::Fine, c.fine_task_map); }

TrainConfig train_config(const RunConfig& c) {
  TrainConfig t;
  auto& m = t.model;
  m.backbone.d_in = c.d_in;
  m.backbone.d_model = c.d_model;
  m.backbone.depth = c.depth;
  m.backbone.head_widths.assign(c.n_classes.begin(), c.n_classes.end());
  m.adapter.rank = c.rank;
  m.adapter.n_experts = c.n_experts;
  m.adapter.alpha = c.alpha;
  m.adapter.dropout_rate = c.dropout;
  m.n_eras = c.n_eras;
  m.d_task = c.d_task;
  m.d_era = c.d_era;
  m.d_hidden = c.d_hidden;
  m.mode = c.mode;
  m.granularity = c.granularity == TaskGranularity::Kind::Coarse ? coarse_granularity(c) : fine_granularity(c);
  m.per_layer_router = c.per_layer_router;
  t.epochs = c.epochs;
  t.batch_size = c.batch_size;
  t.learning_rate = c.learning_rate;
  t.optimizer = c.optimizer;
  t.schedule = c.lr_schedule;
  t.beta1 = c.beta1;
  t.beta2 = c.beta2;
  t.eps = c.eps;
  t.seed = c.seed;
  return t;
}

}  // namespace teamoe
