#include "eediff/checkpoint.hpp"

#include "eediff/tensor_archive.hpp"

namespace eediff {

namespace {

constexpr const char* kKind = "eediff-checkpoint";

}  // namespace

TrainingState initial_state(const RunConfig& config) {
  TrainingState state;
  state.model = EarlyExitModel(config.model, config.uem_share_params, config.seed);
  state.optimizer = AdamW(config.train.optimizer());
  state.histogram = TimestepLossHistogram(config.schedule.T);
  state.step = 0;
  return state;
}

void save_checkpoint(const std::filesystem::path& path, const RunConfig& config,
                     const TrainingState& state) {
  EarlyExitModel model = state.model;
  const auto params = model.parameters();
  TensorArchive ar;
  ar.header["kind"] = kKind;
  ar.header["step"] = state.step;
  ar.header["optimizer_steps"] = state.optimizer.steps();
  ar.header["config"] = config.to_json();
  const auto& m = state.optimizer.first_moments();
  const auto& v = state.optimizer.second_moments();
  for (std::size_t i = 0; i < params.size(); ++i) {
    ar.tensors.push_back(NamedTensor::from_matrix("param/" + params[i]->name, params[i]->value));
    if (i < m.size()) {
      ar.tensors.push_back(NamedTensor::from_matrix("adam_m/" + params[i]->name, m[i]));
      ar.tensors.push_back(NamedTensor::from_matrix("adam_v/" + params[i]->name, v[i]));
    }
  }
  NamedTensor counts{"histogram/counts", {state.histogram.counts().size()}, {}};
  for (auto c : state.histogram.counts()) counts.values.push_back(static_cast<double>(c));
  NamedTensor sums{"histogram/sums", {state.histogram.sums().size()}, state.histogram.sums()};
  ar.tensors.push_back(std::move(counts));
  ar.tensors.push_back(std::move(sums));
  write_archive(path, ar);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw IoError("checkpoint not found: " + path.string());
  }
  const TensorArchive ar = read_archive(path);
  if (ar.header.value("kind", std::string{}) != kKind || !ar.header.contains("config")) {
    throw IoError(path.string() + " is not a checkpoint archive");
  }
  Checkpoint ck;
  ck.config = RunConfig::from_json(ar.header.at("config"));
  TrainingState state = initial_state(ck.config);
  const auto params = state.model.parameters();
  const auto restore_into = [&](const std::string& name, Matrix& dst) {
    const Matrix src = ar.at(name).to_matrix();
    if (src.rows() != dst.rows() || src.cols() != dst.cols()) {
      throw ShapeError("checkpoint tensor " + name + " has the wrong shape");
    }
    dst = src;
  };
  for (auto* p : params) restore_into("param/" + p->name, p->value);
  const auto opt_steps = ar.header.at("optimizer_steps").get<std::int64_t>();
  if (opt_steps > 0) {
    std::vector<Matrix> m, v;
    for (auto* p : params) {
      m.emplace_back(p->value.rows(), p->value.cols());
      v.emplace_back(p->value.rows(), p->value.cols());
      restore_into("adam_m/" + p->name, m.back());
      restore_into("adam_v/" + p->name, v.back());
    }
    state.optimizer.restore(opt_steps, std::move(m), std::move(v));
  }
  const auto& counts = ar.at("histogram/counts").values;
  std::vector<std::int64_t> c(counts.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = static_cast<std::int64_t>(counts[i]);
  state.histogram.restore(std::move(c), ar.at("histogram/sums").values);
  state.step = ar.header.at("step").get<std::int64_t>();
  ck.state = std::move(state);
  return ck;
}

void check_resume_compatible(const RunConfig& saved, const RunConfig& requested) {
  auto a = saved.to_json();
  auto b = requested.to_json();
  // Extending a run and changing what is evaluated afterwards are fine.
  for (auto* doc : {&a, &b}) {
    (*doc)["train"].erase("total_steps");
    (*doc)["train"].erase("checkpoint_every");
    (*doc)["train"].erase("log_every");
    doc->erase("exit");
    doc->erase("sample");
    doc->erase("eval");
    doc->erase("paths");
    (*doc)["uem"].erase("aggregation");
  }
  const auto keys = config_differences(a, b);
  if (!keys.empty()) {
    std::string msg = "config does not match the checkpoint; differing keys:";
    for (const auto& k : keys) msg += " " + k;
    throw ConfigError(msg);
  }
}

}  // namespace eediff
