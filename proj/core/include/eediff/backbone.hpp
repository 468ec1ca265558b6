#pragma once

#include "eediff/common.hpp"
#include "eediff/layers.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

namespace eediff {

// Pairs layer i with layer depth + 1 - i for i < ceil(depth / 2).
std::vector<std::pair<int, int>> default_skip_pairs(int depth);

struct BackboneConfig {
  int depth = 13;
  int hidden_dim = 64;
  int num_heads = 4;
  int patch_size = 1;
  int mlp_ratio = 4;
  // {D} selects vector mode (one data token); {H, W, C} selects image mode.
  std::vector<int> input_shape{2};
  // (shallow, deep) 1-based layer pairs; the deep layer consumes the shallow
  // layer's output through a concat + linear projection.
  std::vector<std::pair<int, int>> skip_pairs = default_skip_pairs(13);
  bool share_final_head = true;

  void validate() const;
  bool vector_mode() const { return input_shape.size() == 1; }
  int data_dim() const;
};

// Geometry of the mapping between flattened data rows and token rows.
class TokenLayout {
 public:
  explicit TokenLayout(const BackboneConfig& config);

  bool vector_mode() const { return vector_mode_; }
  int data_dim() const { return data_dim_; }
  int data_tokens() const { return grid_h_ * grid_w_; }
  int token_len() const { return token_len_; }
  int grid_h() const { return grid_h_; }
  int grid_w() const { return grid_w_; }

  // (B x data_dim) -> (B * data_tokens) x token_len.
  Matrix patchify(const Matrix& batch) const;
  Matrix unpatchify(const Matrix& tokens) const;

  // Per-token mean of an elementwise data-space map: (B x D) -> (B x tokens).
  Matrix token_means(const Matrix& batch) const;
  // Adjoint of token_means: spreads each token value / token_len over its elements.
  Matrix spread_token_grad(const Matrix& per_token) const;

 private:
  bool vector_mode_ = true;
  int data_dim_ = 0;
  int height_ = 1, width_ = 1, channels_ = 1;
  int patch_ = 1;
  int grid_h_ = 1, grid_w_ = 1;
  int token_len_ = 0;
  std::vector<int> element_token_;  // data element -> token index
  std::vector<int> element_slot_;   // data element -> position inside token
};

// Interleaved sin/cos embedding: e[2k] = sin(t f_k), e[2k+1] = cos(t f_k),
// f_k = 10000^(-k / (dim/2)).
RowVector timestep_embedding(double t, int dim);
Matrix timestep_embeddings(const std::vector<int>& timesteps, int dim);

struct Block {
  LayerNorm ln1;
  Attention attn;
  LayerNorm ln2;
  Mlp mlp;
  std::optional<Linear> skip;
  int skip_source = 0;  // 1-based layer whose output is concatenated in

  template <typename F>
  void for_each_parameter(F&& f) {
    if (skip) skip->for_each_parameter(f);
    ln1.for_each_parameter(f);
    attn.for_each_parameter(f);
    ln2.for_each_parameter(f);
    mlp.for_each_parameter(f);
  }
};

struct OutputHead {
  LayerNorm norm;
  Linear proj;

  template <typename F>
  void for_each_parameter(F&& f) {
    norm.for_each_parameter(f);
    proj.for_each_parameter(f);
  }
};

// Per-layer record of a forward pass. Entry i-1 describes layer i and only
// covers samples still running at that layer (`active[i-1]`, original batch
// row indices). Hidden rows are laid out sample-major, tokens_per_sample rows
// per sample with the time token first.
struct LayerTrace {
  std::vector<Matrix> hidden;
  std::vector<Matrix> preds;
  std::vector<std::vector<int>> active;
  std::vector<int> exit_layer;  // per sample
  std::vector<int> t;           // per sample
};

struct ForwardResult {
  Matrix eps_hat;
  LayerTrace trace;
};

class Denoiser;

// Layer-by-layer evaluation over a shrinking set of samples.
class IncrementalPass {
 public:
  IncrementalPass(const Denoiser& model, const Matrix& x_t, std::vector<int> timesteps);

  int layer() const { return layer_; }
  bool finished() const;
  void advance();

  const Matrix& hidden() const { return hidden_; }
  const std::vector<int>& active() const { return active_; }
  const std::vector<int>& timesteps() const { return timesteps_; }

  // Prediction of the current layer's exit head for local rows `rows`
  // (all rows when empty). At full depth this is the model output.
  Matrix predict(const std::vector<Index>& rows = {}) const;
  // Keeps only the given local rows.
  void retain(const std::vector<Index>& rows);

 private:
  const Denoiser* model_;
  int layer_ = 0;
  Matrix hidden_;
  std::vector<int> active_;
  std::vector<int> timesteps_;
  std::vector<std::pair<int, Matrix>> skip_store_;
};

// Given the layer just completed and the pass state, returns one flag per
// active sample; a set flag exits that sample at this layer.
using StopFn = std::function<std::vector<char>(int layer, const IncrementalPass& pass)>;

struct TrainForward;

class Denoiser {
 public:
  Denoiser() = default;
  Denoiser(const BackboneConfig& config, std::uint64_t seed);

  const BackboneConfig& config() const { return config_; }
  const TokenLayout& layout() const { return layout_; }
  int depth() const { return config_.depth; }
  int hidden_dim() const { return config_.hidden_dim; }
  Index tokens_per_sample() const { return layout_.data_tokens() + 1; }

  ForwardResult forward_collect(const Matrix& x_t, const std::vector<int>& timesteps) const;
  ForwardResult forward_collect(const Matrix& x_t, int t) const;
  ForwardResult forward_incremental(const Matrix& x_t, const std::vector<int>& timesteps,
                                    const StopFn& stop, bool record_trace = true) const;
  // Full-depth output only, no per-layer heads evaluated.
  Matrix forward_full(const Matrix& x_t, const std::vector<int>& timesteps) const;

  // Training path: runs every layer with caches, evaluating every head.
  TrainForward forward_train(const Matrix& x_t, const std::vector<int>& timesteps) const;
  // dpreds[i-1] is dL/d g_i (B x D, may be empty); dfinal is dL/d output when
  // the final head is unshared; dhidden[i-1] (may be empty) is extra gradient
  // flowing into L_i from outside the backbone.
  void backward(const TrainForward& fwd, const std::vector<Matrix>& dpreds,
                const Matrix& dfinal, const std::vector<Matrix>& dhidden);

  // Rows of a hidden-state matrix holding data tokens (time token dropped).
  Matrix data_rows(const Matrix& hidden) const;

  template <typename F>
  void for_each_parameter(F&& f) {
    time_proj_.for_each_parameter(f);
    patch_embed_.for_each_parameter(f);
    f(pos_embed_);
    for (auto& b : blocks_) b.for_each_parameter(f);
    for (auto& h : heads_) h.for_each_parameter(f);
    if (final_head_) final_head_->for_each_parameter(f);
  }
  std::vector<Parameter*> parameters();

 private:
  friend class IncrementalPass;

  Matrix embed(const Matrix& x_t, const std::vector<int>& timesteps) const;
  Matrix run_block(int layer, const Matrix& h, const Matrix* skip_src) const;
  Matrix apply_head(const OutputHead& head, const Matrix& hidden) const;
  const OutputHead& exit_head(int layer) const;

  BackboneConfig config_;
  TokenLayout layout_{BackboneConfig{}};
  Linear time_proj_;
  Linear patch_embed_;
  Parameter pos_embed_;
  std::vector<Block> blocks_;
  std::vector<OutputHead> heads_;
  std::optional<OutputHead> final_head_;
};

struct BlockCache {
  Matrix concat;
  Matrix input;
  LayerNormCache ln1;
  AttentionCache attn;
  Matrix r1;
  LayerNormCache ln2;
  MlpCache mlp;
};

struct HeadCache {
  Matrix rows;
  LayerNormCache norm;
  Matrix normed;
};

struct TrainForward {
  std::vector<int> timesteps;
  Matrix temb;
  Matrix patches;
  std::vector<Matrix> hidden;  // L_1..L_N, all samples
  std::vector<Matrix> preds;   // g_1..g_N in data space
  Matrix output;               // model output (g_N when shared)
  std::vector<BlockCache> blocks;
  std::vector<HeadCache> heads;
  HeadCache final_head;
};

}  // namespace eediff
