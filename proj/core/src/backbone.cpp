#include "eediff/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace eediff {

std::vector<std::pair<int, int>> default_skip_pairs(int depth) {
  std::vector<std::pair<int, int>> pairs;
  const int half = (depth + 1) / 2;  // ceil(depth / 2)
  for (int i = 1; i < half; ++i) {
    pairs.emplace_back(i, depth + 1 - i);
  }
  return pairs;
}

int BackboneConfig::data_dim() const {
  int d = 1;
  for (int s : input_shape) d *= s;
  return d;
}

void BackboneConfig::validate() const {
  std::ostringstream err;
  if (depth < 2) err << "model.depth must be >= 2; ";
  if (hidden_dim < 2 || hidden_dim % 2 != 0) err << "model.hidden_dim must be even and >= 2; ";
  if (num_heads < 1 || hidden_dim % num_heads != 0) {
    err << "model.hidden_dim must be divisible by model.num_heads; ";
  }
  if (mlp_ratio < 1) err << "model.mlp_ratio must be >= 1; ";
  if (patch_size < 1) err << "model.patch_size must be >= 1; ";
  if (input_shape.size() != 1 && input_shape.size() != 3) {
    err << "input shape must be {D} or {H, W, C}; ";
  } else {
    for (int s : input_shape) {
      if (s < 1) err << "input shape entries must be positive; ";
    }
    if (input_shape.size() == 1 && patch_size != 1) {
      err << "vector inputs require model.patch_size = 1; ";
    }
    if (input_shape.size() == 3 && patch_size >= 1 &&
        (input_shape[0] % patch_size != 0 || input_shape[1] % patch_size != 0)) {
      err << "image size not divisible by model.patch_size; ";
    }
  }
  std::vector<int> consumed(static_cast<std::size_t>(std::max(depth, 0)) + 1, 0);
  for (const auto& [shallow, deep] : skip_pairs) {
    if (shallow < 1 || deep > depth || shallow >= deep) {
      err << "skip pair (" << shallow << ", " << deep << ") invalid; ";
    } else if (consumed[static_cast<std::size_t>(deep)]++ > 0) {
      err << "layer " << deep << " has two skip sources; ";
    }
  }
  const auto msg = err.str();
  if (!msg.empty()) {
    throw ConfigError("invalid backbone config: " + msg.substr(0, msg.size() - 2));
  }
}

TokenLayout::TokenLayout(const BackboneConfig& config) {
  vector_mode_ = config.vector_mode();
  data_dim_ = config.data_dim();
  if (vector_mode_) {
    token_len_ = data_dim_;
    element_token_.assign(static_cast<std::size_t>(data_dim_), 0);
    element_slot_.resize(static_cast<std::size_t>(data_dim_));
    for (int e = 0; e < data_dim_; ++e) element_slot_[static_cast<std::size_t>(e)] = e;
    return;
  }
  height_ = config.input_shape[0];
  width_ = config.input_shape[1];
  channels_ = config.input_shape[2];
  patch_ = config.patch_size;
  if (patch_ < 1 || height_ % patch_ != 0 || width_ % patch_ != 0) {
    throw ShapeError("image size not divisible by patch size");
  }
  grid_h_ = height_ / patch_;
  grid_w_ = width_ / patch_;
  token_len_ = patch_ * patch_ * channels_;
  element_token_.resize(static_cast<std::size_t>(data_dim_));
  element_slot_.resize(static_cast<std::size_t>(data_dim_));
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      for (int c = 0; c < channels_; ++c) {
        const auto e = static_cast<std::size_t>((y * width_ + x) * channels_ + c);
        element_token_[e] = (y / patch_) * grid_w_ + (x / patch_);
        element_slot_[e] = ((y % patch_) * patch_ + (x % patch_)) * channels_ + c;
      }
    }
  }
}

Matrix TokenLayout::patchify(const Matrix& batch) const {
  if (batch.cols() != data_dim_) {
    throw ShapeError("patchify: row length does not match input shape");
  }
  const Index nt = data_tokens();
  Matrix out(batch.rows() * nt, token_len_);
  for (Index b = 0; b < batch.rows(); ++b) {
    for (Index e = 0; e < data_dim_; ++e) {
      const auto ue = static_cast<std::size_t>(e);
      out(b * nt + element_token_[ue], element_slot_[ue]) = batch(b, e);
    }
  }
  return out;
}

Matrix TokenLayout::unpatchify(const Matrix& tokens) const {
  const Index nt = data_tokens();
  if (tokens.cols() != token_len_ || tokens.rows() % nt != 0) {
    throw ShapeError("unpatchify: token matrix has the wrong shape");
  }
  const Index batch = tokens.rows() / nt;
  Matrix out(batch, data_dim_);
  for (Index b = 0; b < batch; ++b) {
    for (Index e = 0; e < data_dim_; ++e) {
      const auto ue = static_cast<std::size_t>(e);
      out(b, e) = tokens(b * nt + element_token_[ue], element_slot_[ue]);
    }
  }
  return out;
}

Matrix TokenLayout::token_means(const Matrix& batch) const {
  if (batch.cols() != data_dim_) {
    throw ShapeError("token_means: row length does not match input shape");
  }
  Matrix out = Matrix::Zero(batch.rows(), data_tokens());
  const double inv = 1.0 / token_len_;
  for (Index b = 0; b < batch.rows(); ++b) {
    for (Index e = 0; e < data_dim_; ++e) {
      out(b, element_token_[static_cast<std::size_t>(e)]) += batch(b, e) * inv;
    }
  }
  return out;
}

Matrix TokenLayout::spread_token_grad(const Matrix& per_token) const {
  if (per_token.cols() != data_tokens()) {
    throw ShapeError("spread_token_grad: column count must equal token count");
  }
  Matrix out(per_token.rows(), data_dim_);
  const double inv = 1.0 / token_len_;
  for (Index b = 0; b < per_token.rows(); ++b) {
    for (Index e = 0; e < data_dim_; ++e) {
      out(b, e) = per_token(b, element_token_[static_cast<std::size_t>(e)]) * inv;
    }
  }
  return out;
}

RowVector timestep_embedding(double t, int dim) {
  if (dim < 2 || dim % 2 != 0) {
    throw ShapeError("timestep embedding dimension must be even");
  }
  if (t < 0) {
    throw RangeError("timestep embedding requires t >= 0");
  }
  const int half = dim / 2;
  RowVector e(dim);
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * k / half);
    e(2 * k) = std::sin(t * freq);
    e(2 * k + 1) = std::cos(t * freq);
  }
  return e;
}

Matrix timestep_embeddings(const std::vector<int>& timesteps, int dim) {
  Matrix out(static_cast<Index>(timesteps.size()), dim);
  for (std::size_t i = 0; i < timesteps.size(); ++i) {
    out.row(static_cast<Index>(i)) = timestep_embedding(timesteps[i], dim);
  }
  return out;
}

namespace {

Matrix gather_samples(const Matrix& m, const std::vector<Index>& rows, Index per_sample) {
  Matrix out(static_cast<Index>(rows.size()) * per_sample, m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.middleRows(static_cast<Index>(i) * per_sample, per_sample) =
        m.middleRows(rows[i] * per_sample, per_sample);
  }
  return out;
}

Matrix concat_cols(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

Matrix block_forward(const Block& block, const Matrix& h, const Matrix* skip_src, Index tokens,
                     BlockCache* cache) {
  Matrix x;
  if (block.skip) {
    Matrix cat = concat_cols(h, *skip_src);
    x = block.skip->forward(cat);
    if (cache != nullptr) cache->concat = std::move(cat);
  } else {
    x = h;
  }
  Matrix r1 = x + block.attn.forward(block.ln1.forward(x, cache ? &cache->ln1 : nullptr), tokens,
                                     cache ? &cache->attn : nullptr);
  Matrix out = r1 + block.mlp.forward(block.ln2.forward(r1, cache ? &cache->ln2 : nullptr),
                                      cache ? &cache->mlp : nullptr);
  if (cache != nullptr) {
    cache->input = std::move(x);
    cache->r1 = std::move(r1);
  }
  return out;
}

// Returns (dL/dh, dL/dskip_src).
std::pair<Matrix, Matrix> block_backward(Block& block, const BlockCache& cache, Index tokens,
                                         const Matrix& dout) {
  Matrix dr1 = dout + block.ln2.backward(cache.ln2, block.mlp.backward(cache.mlp, dout));
  Matrix dx = dr1 + block.ln1.backward(cache.ln1, block.attn.backward(cache.attn, tokens, dr1));
  if (!block.skip) {
    return {std::move(dx), Matrix()};
  }
  Matrix dcat = block.skip->backward(cache.concat, dx);
  const Index d = dx.cols();
  return {dcat.leftCols(d), dcat.rightCols(d)};
}

}  // namespace

Denoiser::Denoiser(const BackboneConfig& config, std::uint64_t seed)
    : config_(config), layout_((config.validate(), config)) {
  const Index d = config_.hidden_dim;
  const Index n = config_.depth;
  std::mt19937_64 rng(seed);
  const auto lin_init = [&](Linear& l, double gain) {
    init_normal(l.weight, gain / std::sqrt(static_cast<double>(l.in_dim())), rng);
  };

  time_proj_ = Linear("time_proj", d, d);
  lin_init(time_proj_, 1.0);
  patch_embed_ = Linear("patch_embed", layout_.token_len(), d);
  lin_init(patch_embed_, 1.0);
  pos_embed_ = Parameter("pos_embed", tokens_per_sample(), d);
  init_normal(pos_embed_, 0.02, rng);

  const double resid_gain = 1.0 / std::sqrt(2.0 * static_cast<double>(n));
  blocks_.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const std::string name = "blocks." + std::to_string(i + 1);
    Block& b = blocks_[static_cast<std::size_t>(i)];
    for (const auto& [shallow, deep] : config_.skip_pairs) {
      if (deep == i + 1) {
        b.skip = Linear(name + ".skip", 2 * d, d);
        b.skip_source = shallow;
        lin_init(*b.skip, 1.0);
      }
    }
    b.ln1 = LayerNorm(name + ".ln1", d);
    b.attn = Attention(name + ".attn", d, config_.num_heads);
    lin_init(b.attn.qkv, 1.0);
    lin_init(b.attn.proj, resid_gain);
    b.ln2 = LayerNorm(name + ".ln2", d);
    b.mlp = Mlp(name + ".mlp", d, d * config_.mlp_ratio);
    lin_init(b.mlp.fc1, 1.0);
    lin_init(b.mlp.fc2, resid_gain);
  }
  const auto make_head = [&](const std::string& name) {
    OutputHead h{LayerNorm(name + ".norm", d), Linear(name + ".proj", d, layout_.token_len())};
    lin_init(h.proj, 1.0);
    return h;
  };
  for (Index i = 0; i < n; ++i) {
    heads_.push_back(make_head("heads." + std::to_string(i + 1)));
  }
  if (!config_.share_final_head) {
    final_head_ = make_head("final_head");
  }
}

std::vector<Parameter*> Denoiser::parameters() {
  std::vector<Parameter*> out;
  for_each_parameter([&](Parameter& p) { out.push_back(&p); });
  return out;
}

Matrix Denoiser::embed(const Matrix& x_t, const std::vector<int>& timesteps) const {
  if (x_t.cols() != layout_.data_dim()) {
    throw ShapeError("denoiser input does not match the configured input shape");
  }
  if (static_cast<Index>(timesteps.size()) != x_t.rows()) {
    throw ShapeError("denoiser needs one timestep per input row");
  }
  const Index batch = x_t.rows();
  const Index lt = tokens_per_sample();
  const Index nt = layout_.data_tokens();
  const Matrix time_rows = time_proj_.forward(timestep_embeddings(timesteps, config_.hidden_dim));
  const Matrix data = patch_embed_.forward(layout_.patchify(x_t));
  Matrix h(batch * lt, config_.hidden_dim);
  for (Index s = 0; s < batch; ++s) {
    h.row(s * lt) = time_rows.row(s) + pos_embed_.value.row(0);
    for (Index k = 0; k < nt; ++k) {
      h.row(s * lt + 1 + k) = data.row(s * nt + k) + pos_embed_.value.row(1 + k);
    }
  }
  return h;
}

Matrix Denoiser::data_rows(const Matrix& hidden) const {
  const Index lt = tokens_per_sample();
  const Index nt = layout_.data_tokens();
  const Index batch = hidden.rows() / lt;
  Matrix out(batch * nt, hidden.cols());
  for (Index s = 0; s < batch; ++s) {
    out.middleRows(s * nt, nt) = hidden.middleRows(s * lt + 1, nt);
  }
  return out;
}

Matrix Denoiser::run_block(int layer, const Matrix& h, const Matrix* skip_src) const {
  return block_forward(blocks_[static_cast<std::size_t>(layer - 1)], h, skip_src,
                       tokens_per_sample(), nullptr);
}

Matrix Denoiser::apply_head(const OutputHead& head, const Matrix& hidden) const {
  return layout_.unpatchify(head.proj.forward(head.norm.forward(data_rows(hidden))));
}

const OutputHead& Denoiser::exit_head(int layer) const {
  if (layer == config_.depth && final_head_) {
    return *final_head_;
  }
  return heads_[static_cast<std::size_t>(layer - 1)];
}

IncrementalPass::IncrementalPass(const Denoiser& model, const Matrix& x_t,
                                 std::vector<int> timesteps)
    : model_(&model), hidden_(model.embed(x_t, timesteps)), timesteps_(std::move(timesteps)) {
  active_.resize(static_cast<std::size_t>(x_t.rows()));
  for (std::size_t i = 0; i < active_.size(); ++i) active_[i] = static_cast<int>(i);
}

bool IncrementalPass::finished() const { return layer_ >= model_->depth(); }

void IncrementalPass::advance() {
  if (finished()) {
    throw RangeError("incremental pass already at full depth");
  }
  ++layer_;
  const Block& block = model_->blocks_[static_cast<std::size_t>(layer_ - 1)];
  const Matrix* src = nullptr;
  if (block.skip) {
    for (const auto& [layer, m] : skip_store_) {
      if (layer == block.skip_source) src = &m;
    }
  }
  hidden_ = model_->run_block(layer_, hidden_, src);
  for (const auto& [shallow, deep] : model_->config().skip_pairs) {
    if (shallow == layer_) skip_store_.emplace_back(layer_, hidden_);
  }
}

Matrix IncrementalPass::predict(const std::vector<Index>& rows) const {
  if (layer_ < 1) {
    throw RangeError("no layer evaluated yet");
  }
  const OutputHead& head = model_->exit_head(layer_);
  if (rows.empty()) {
    return model_->apply_head(head, hidden_);
  }
  return model_->apply_head(head, gather_samples(hidden_, rows, model_->tokens_per_sample()));
}

void IncrementalPass::retain(const std::vector<Index>& rows) {
  const Index lt = model_->tokens_per_sample();
  hidden_ = gather_samples(hidden_, rows, lt);
  for (auto& entry : skip_store_) {
    entry.second = gather_samples(entry.second, rows, lt);
  }
  std::vector<int> active, steps;
  for (Index r : rows) {
    active.push_back(active_[static_cast<std::size_t>(r)]);
    steps.push_back(timesteps_[static_cast<std::size_t>(r)]);
  }
  active_ = std::move(active);
  timesteps_ = std::move(steps);
}

ForwardResult Denoiser::forward_incremental(const Matrix& x_t, const std::vector<int>& timesteps,
                                            const StopFn& stop, bool record_trace) const {
  const int n = config_.depth;
  ForwardResult result;
  result.eps_hat = Matrix(x_t.rows(), layout_.data_dim());
  LayerTrace& trace = result.trace;
  trace.exit_layer.assign(static_cast<std::size_t>(x_t.rows()), n);
  trace.t = timesteps;

  IncrementalPass pass(*this, x_t, timesteps);
  while (!pass.finished() && !pass.active().empty()) {
    pass.advance();
    const int layer = pass.layer();
    const auto n_active = pass.active().size();
    Matrix preds;
    if (record_trace) {
      preds = apply_head(heads_[static_cast<std::size_t>(layer - 1)], pass.hidden());
      trace.hidden.push_back(pass.hidden());
      trace.active.push_back(pass.active());
      trace.preds.push_back(preds);
    }
    // The predicate also runs at full depth so observers see every layer;
    // its verdict there is irrelevant since everything exits anyway.
    std::vector<char> flags = stop(layer, pass);
    if (flags.size() != n_active) {
      throw ShapeError("stop function must return one flag per active sample");
    }
    if (layer == n) flags.assign(n_active, 1);
    std::vector<Index> leaving, staying;
    for (std::size_t i = 0; i < n_active; ++i) {
      (flags[i] ? leaving : staying).push_back(static_cast<Index>(i));
    }
    if (leaving.empty()) continue;
    Matrix out;
    if (record_trace && !(layer == n && final_head_)) {
      out.resize(static_cast<Index>(leaving.size()), preds.cols());
      for (std::size_t k = 0; k < leaving.size(); ++k) {
        out.row(static_cast<Index>(k)) = preds.row(leaving[k]);
      }
    } else {
      out = pass.predict(leaving);
    }
    for (std::size_t k = 0; k < leaving.size(); ++k) {
      const auto sample = static_cast<std::size_t>(pass.active()[static_cast<std::size_t>(leaving[k])]);
      result.eps_hat.row(static_cast<Index>(sample)) = out.row(static_cast<Index>(k));
      trace.exit_layer[sample] = layer;
    }
    if (!staying.empty()) {
      pass.retain(staying);
    } else {
      break;
    }
  }
  return result;
}

ForwardResult Denoiser::forward_collect(const Matrix& x_t, const std::vector<int>& timesteps) const {
  const auto never = [](int, const IncrementalPass& pass) {
    return std::vector<char>(pass.active().size(), 0);
  };
  return forward_incremental(x_t, timesteps, never, true);
}

ForwardResult Denoiser::forward_collect(const Matrix& x_t, int t) const {
  return forward_collect(x_t, std::vector<int>(static_cast<std::size_t>(x_t.rows()), t));
}

Matrix Denoiser::forward_full(const Matrix& x_t, const std::vector<int>& timesteps) const {
  IncrementalPass pass(*this, x_t, timesteps);
  while (!pass.finished()) pass.advance();
  std::vector<Index> all(pass.active().size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<Index>(i);
  return pass.predict(all);
}

namespace {

Matrix head_forward(const Denoiser& model, const OutputHead& head, const Matrix& hidden,
                    HeadCache& cache) {
  cache.rows = model.data_rows(hidden);
  cache.normed = head.norm.forward(cache.rows, &cache.norm);
  return model.layout().unpatchify(head.proj.forward(cache.normed));
}

}  // namespace

TrainForward Denoiser::forward_train(const Matrix& x_t, const std::vector<int>& timesteps) const {
  if (x_t.cols() != layout_.data_dim() || static_cast<Index>(timesteps.size()) != x_t.rows()) {
    throw ShapeError("forward_train: input shape mismatch");
  }
  const Index batch = x_t.rows();
  const Index lt = tokens_per_sample();
  const Index nt = layout_.data_tokens();
  const auto n = static_cast<std::size_t>(config_.depth);
  TrainForward fwd;
  fwd.timesteps = timesteps;
  fwd.temb = timestep_embeddings(timesteps, config_.hidden_dim);
  fwd.patches = layout_.patchify(x_t);
  const Matrix time_rows = time_proj_.forward(fwd.temb);
  const Matrix data = patch_embed_.forward(fwd.patches);
  Matrix h(batch * lt, config_.hidden_dim);
  for (Index s = 0; s < batch; ++s) {
    h.row(s * lt) = time_rows.row(s) + pos_embed_.value.row(0);
    for (Index k = 0; k < nt; ++k) {
      h.row(s * lt + 1 + k) = data.row(s * nt + k) + pos_embed_.value.row(1 + k);
    }
  }
  fwd.blocks.resize(n);
  fwd.heads.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Block& block = blocks_[i];
    const Matrix* src = block.skip ? &fwd.hidden[static_cast<std::size_t>(block.skip_source - 1)] : nullptr;
    h = block_forward(block, h, src, lt, &fwd.blocks[i]);
    fwd.hidden.push_back(h);
    fwd.preds.push_back(head_forward(*this, heads_[i], h, fwd.heads[i]));
  }
  fwd.output = final_head_ ? head_forward(*this, *final_head_, h, fwd.final_head) : fwd.preds.back();
  return fwd;
}

void Denoiser::backward(const TrainForward& fwd, const std::vector<Matrix>& dpreds,
                        const Matrix& dfinal, const std::vector<Matrix>& dhidden) {
  const auto n = static_cast<std::size_t>(config_.depth);
  const Index lt = tokens_per_sample();
  const Index nt = layout_.data_tokens();
  const Index batch = static_cast<Index>(fwd.timesteps.size());
  const Index rows = batch * lt;

  const auto head_backward = [&](OutputHead& head, const HeadCache& cache, const Matrix& dpred) {
    Matrix dnormed = head.proj.backward(cache.normed, layout_.patchify(dpred));
    Matrix drows = head.norm.backward(cache.norm, dnormed);
    Matrix dh = Matrix::Zero(rows, config_.hidden_dim);
    for (Index s = 0; s < batch; ++s) {
      dh.middleRows(s * lt + 1, nt) = drows.middleRows(s * nt, nt);
    }
    return dh;
  };

  std::vector<Matrix> dL(n, Matrix::Zero(rows, config_.hidden_dim));
  for (std::size_t i = 0; i < n; ++i) {
    Matrix dpred = i < dpreds.size() ? dpreds[i] : Matrix();
    if (i + 1 == n && !final_head_ && dfinal.size() > 0) {
      dpred = dpred.size() > 0 ? Matrix(dpred + dfinal) : dfinal;
    }
    if (dpred.size() > 0) dL[i] += head_backward(heads_[i], fwd.heads[i], dpred);
    if (i < dhidden.size() && dhidden[i].size() > 0) dL[i] += dhidden[i];
  }
  if (final_head_ && dfinal.size() > 0) {
    dL[n - 1] += head_backward(*final_head_, fwd.final_head, dfinal);
  }

  Matrix dh0;
  for (std::size_t i = n; i-- > 0;) {
    Block& block = blocks_[i];
    auto [dh, dsrc] = block_backward(block, fwd.blocks[i], lt, dL[i]);
    if (block.skip) dL[static_cast<std::size_t>(block.skip_source - 1)] += dsrc;
    if (i > 0) {
      dL[i - 1] += dh;
    } else {
      dh0 = std::move(dh);
    }
  }

  Matrix dtime(batch, config_.hidden_dim);
  Matrix ddata(batch * nt, config_.hidden_dim);
  for (Index s = 0; s < batch; ++s) {
    dtime.row(s) = dh0.row(s * lt);
    pos_embed_.grad.row(0) += dh0.row(s * lt);
    for (Index k = 0; k < nt; ++k) {
      ddata.row(s * nt + k) = dh0.row(s * lt + 1 + k);
      pos_embed_.grad.row(1 + k) += dh0.row(s * lt + 1 + k);
    }
  }
  time_proj_.backward(fwd.temb, dtime);
  patch_embed_.backward(fwd.patches, ddata);
}

}  // namespace eediff
