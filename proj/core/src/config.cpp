#include "eediff/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace eediff {

using nlohmann::json;

SamplerKind parse_sampler(const std::string& name) {
  if (name == "ancestral") return SamplerKind::Ancestral;
  if (name == "deterministic") return SamplerKind::Deterministic;
  throw ConfigError("unknown sampler '" + name + "' (expected ancestral|deterministic)");
}

std::string to_string(SamplerKind kind) {
  return kind == SamplerKind::Ancestral ? "ancestral" : "deterministic";
}

namespace {

std::vector<int> data_shape(const DataConfig& d) {
  if (d.kind == DatasetKind::TinyImage) return {d.image_size, d.image_size, 1};
  return {2};
}

bool compatible(const json& def, const json& value) {
  if (def.is_null()) return true;
  if (def.is_boolean()) return value.is_boolean();
  if (def.is_number_integer()) return value.is_number_integer();
  if (def.is_number()) return value.is_number();
  if (def.is_string()) return value.is_string();
  if (def.is_array()) return value.is_array();
  if (def.is_object()) return value.is_object();
  return false;
}

void merge_into(json& base, const json& user, const std::string& prefix,
                std::vector<std::string>& problems) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) {
      problems.push_back("unknown key '" + key + "'");
      continue;
    }
    json& slot = base[it.key()];
    if (!compatible(slot, it.value())) {
      problems.push_back("key '" + key + "' expects " + std::string(slot.type_name()) + ", got " +
                         it.value().type_name());
      continue;
    }
    if (slot.is_object()) {
      merge_into(slot, it.value(), key, problems);
    } else {
      slot = it.value();
    }
  }
}

void diff(const json& a, const json& b, const std::string& prefix, std::vector<std::string>& out) {
  if (a.is_object() && b.is_object()) {
    for (auto it = a.begin(); it != a.end(); ++it) {
      const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
      if (!b.contains(it.key())) {
        out.push_back(key);
      } else {
        diff(it.value(), b[it.key()], key, out);
      }
    }
    for (auto it = b.begin(); it != b.end(); ++it) {
      if (!a.contains(it.key())) out.push_back(prefix.empty() ? it.key() : prefix + "." + it.key());
    }
    return;
  }
  if (a != b) out.push_back(prefix);
}

template <typename T>
T get(const json& doc, const char* section, const char* key) {
  try {
    return doc.at(section).at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for ") + section + "." + key + ": " + e.what());
  }
}

}  // namespace

json default_config_json() { return RunConfig{}.to_json(); }

json RunConfig::to_json() const {
  json skip = json::array();
  for (const auto& [s, d] : model.skip_pairs) skip.push_back({s, d});
  return json{
      {"seed", seed},
      {"schedule", {{"T", schedule.T}, {"beta_start", schedule.beta_start}, {"beta_end", schedule.beta_end}}},
      {"model",
       {{"depth", model.depth},
        {"hidden_dim", model.hidden_dim},
        {"num_heads", model.num_heads},
        {"patch_size", model.patch_size},
        {"mlp_ratio", model.mlp_ratio},
        {"share_final_head", model.share_final_head},
        {"skip_pairs", skip}}},
      {"uem", {{"share_params", uem_share_params}, {"aggregation", eediff::to_string(exit.aggregation)}}},
      {"loss",
       {{"lambda_u", loss.lambda_u},
        {"beta_ual", loss.beta_ual},
        {"layerwise", eediff::to_string(loss.layerwise)}}},
      {"train",
       {{"learning_rate", train.learning_rate},
        {"adam_beta1", train.adam_beta1},
        {"adam_beta2", train.adam_beta2},
        {"weight_decay", train.weight_decay},
        {"batch_size", train.batch_size},
        {"total_steps", train.total_steps},
        {"checkpoint_every", checkpoint_every},
        {"log_every", log_every}}},
      {"data",
       {{"kind", eediff::to_string(data.kind)},
        {"n", data.n},
        {"image_size", data.image_size},
        {"seed", data.seed}}},
      {"exit", {{"threshold", exit.threshold}, {"min_layer", exit.min_layer}}},
      {"sample",
       {{"sampler", eediff::to_string(sample.sampler)},
        {"steps", sample.steps},
        {"n", sample.n},
        {"export_steps", sample.export_steps},
        {"export_samples", sample.export_samples}}},
      {"eval",
       {{"reference_n", eval.reference_n},
        {"bandwidths", eval.bandwidths},
        {"thresholds", eval.thresholds},
        {"probe_n", eval.probe_n},
        {"probe_seed", eval.probe_seed},
        {"t_grid", eval.t_grid}}},
      {"paths", {{"out_root", out_root}}},
  };
}

RunConfig RunConfig::from_json(const json& doc) {
  const json full = merge_config(doc);
  RunConfig c;
  try {
    c.seed = full.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for seed: ") + e.what());
  }
  c.schedule.T = get<int>(full, "schedule", "T");
  c.schedule.beta_start = get<double>(full, "schedule", "beta_start");
  c.schedule.beta_end = get<double>(full, "schedule", "beta_end");

  c.data.kind = parse_dataset_kind(get<std::string>(full, "data", "kind"));
  c.data.n = get<Index>(full, "data", "n");
  c.data.image_size = get<int>(full, "data", "image_size");
  c.data.seed = get<std::uint64_t>(full, "data", "seed");

  c.model.depth = get<int>(full, "model", "depth");
  c.model.hidden_dim = get<int>(full, "model", "hidden_dim");
  c.model.num_heads = get<int>(full, "model", "num_heads");
  c.model.patch_size = get<int>(full, "model", "patch_size");
  c.model.mlp_ratio = get<int>(full, "model", "mlp_ratio");
  c.model.share_final_head = get<bool>(full, "model", "share_final_head");
  c.model.input_shape = data_shape(c.data);
  // An untouched skip list follows the depth; an explicit one is taken as is.
  const json& skip = full.at("model").at("skip_pairs");
  const json default_skip = default_config_json().at("model").at("skip_pairs");
  const bool user_skip = doc.contains("model") && doc.at("model").contains("skip_pairs");
  if (!user_skip || skip == default_skip) {
    c.model.skip_pairs = default_skip_pairs(c.model.depth);
  } else {
    c.model.skip_pairs.clear();
    for (const auto& p : skip) {
      if (!p.is_array() || p.size() != 2) throw ConfigError("model.skip_pairs entries must be [shallow, deep]");
      c.model.skip_pairs.emplace_back(p[0].get<int>(), p[1].get<int>());
    }
  }

  c.uem_share_params = get<bool>(full, "uem", "share_params");
  c.exit.aggregation = parse_aggregation(get<std::string>(full, "uem", "aggregation"));
  c.loss.lambda_u = get<double>(full, "loss", "lambda_u");
  c.loss.beta_ual = get<double>(full, "loss", "beta_ual");
  c.loss.layerwise = parse_layerwise_mode(get<std::string>(full, "loss", "layerwise"));

  c.train.learning_rate = get<double>(full, "train", "learning_rate");
  c.train.adam_beta1 = get<double>(full, "train", "adam_beta1");
  c.train.adam_beta2 = get<double>(full, "train", "adam_beta2");
  c.train.weight_decay = get<double>(full, "train", "weight_decay");
  c.train.batch_size = get<int>(full, "train", "batch_size");
  c.train.total_steps = get<std::int64_t>(full, "train", "total_steps");
  c.train.seed = c.seed;
  c.checkpoint_every = get<int>(full, "train", "checkpoint_every");
  c.log_every = get<int>(full, "train", "log_every");

  c.exit.threshold = get<double>(full, "exit", "threshold");
  c.exit.min_layer = get<int>(full, "exit", "min_layer");

  c.sample.sampler = parse_sampler(get<std::string>(full, "sample", "sampler"));
  c.sample.steps = get<int>(full, "sample", "steps");
  c.sample.n = get<Index>(full, "sample", "n");
  c.sample.export_steps = get<std::vector<int>>(full, "sample", "export_steps");
  c.sample.export_samples = get<Index>(full, "sample", "export_samples");

  c.eval.reference_n = get<Index>(full, "eval", "reference_n");
  c.eval.bandwidths = get<std::vector<double>>(full, "eval", "bandwidths");
  c.eval.thresholds = get<std::vector<double>>(full, "eval", "thresholds");
  c.eval.probe_n = get<Index>(full, "eval", "probe_n");
  c.eval.probe_seed = get<std::uint64_t>(full, "eval", "probe_seed");
  c.eval.t_grid = get<std::vector<int>>(full, "eval", "t_grid");
  c.out_root = get<std::string>(full, "paths", "out_root");
  c.validate();
  return c;
}

void RunConfig::validate() const {
  std::ostringstream err;
  if (schedule.T < 1) err << "schedule.T must be >= 1; ";
  if (!(schedule.beta_start >= 0.0 && schedule.beta_start <= schedule.beta_end && schedule.beta_end < 1.0)) {
    err << "schedule betas must satisfy 0 <= beta_start <= beta_end < 1; ";
  }
  if (data.n < 2) err << "data.n must be >= 2; ";
  if (data.image_size < 1) err << "data.image_size must be >= 1; ";
  if (checkpoint_every < 0) err << "train.checkpoint_every must be >= 0; ";
  if (log_every < 1) err << "train.log_every must be >= 1; ";
  if (sample.steps < 1 || sample.steps > schedule.T) err << "sample.steps must lie in [1, schedule.T]; ";
  if (sample.n < 1) err << "sample.n must be >= 1; ";
  if (sample.export_samples < 0) err << "sample.export_samples must be >= 0; ";
  for (int s : sample.export_steps) {
    if (s < 1) err << "sample.export_steps entries must be >= 1; ";
  }
  if (eval.reference_n < 2) err << "eval.reference_n must be >= 2; ";
  if (eval.probe_n < 1) err << "eval.probe_n must be >= 1; ";
  if (eval.bandwidths.empty()) err << "eval.bandwidths must be nonempty; ";
  for (double h : eval.bandwidths) {
    if (!(h > 0.0)) err << "eval.bandwidths entries must be > 0; ";
  }
  for (double t : eval.thresholds) {
    if (!(t >= 0.0)) {
      err << "eval.thresholds entries must be >= 0; ";
      break;
    }
  }
  if (eval.t_grid.empty()) err << "eval.t_grid must be nonempty; ";
  if (std::any_of(eval.t_grid.begin(), eval.t_grid.end(), [&](int t) { return t < 1 || t > schedule.T; })) {
    err << "eval.t_grid entries must lie in [1, schedule.T]; ";
  }
  const std::string problems = err.str();
  if (!problems.empty()) throw ConfigError(problems.substr(0, problems.size() - 2));
  try {
    model.validate();
    loss.validate();
    train.validate();
    exit.validate(model.depth);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

std::pair<Dataset, Dataset> RunConfig::datasets() const {
  const Dataset all = make_toy_dataset(data.kind, data.n + eval.reference_n, data.seed, data.image_size);
  return split_dataset(all, data.n);
}

json merge_config(const json& user) {
  if (!user.is_object()) throw ConfigError("config document must be a JSON object");
  json base = default_config_json();
  std::vector<std::string> problems;
  merge_into(base, user, "", problems);
  if (!problems.empty()) {
    std::string msg = "invalid config: ";
    for (std::size_t i = 0; i < problems.size(); ++i) msg += (i ? "; " : "") + problems[i];
    throw ConfigError(msg);
  }
  return base;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    json& next = (*node)[key];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) throw ConfigError("override '" + assignment + "' descends into a non-section");
    node = &next;
    start = dot + 1;
  }
}

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
  for (const auto& o : overrides) apply_override(doc, o);
  return RunConfig::from_json(doc);
}

RunConfig config_from_overrides(const std::vector<std::string>& overrides) {
  json doc = json::object();
  for (const auto& o : overrides) apply_override(doc, o);
  return RunConfig::from_json(doc);
}

std::vector<std::string> config_differences(const json& a, const json& b) {
  std::vector<std::string> out;
  diff(a, b, "", out);
  return out;
}

}  // namespace eediff
