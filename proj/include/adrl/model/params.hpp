#pragma once

#include "adrl/common.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace adrl {

struct ModelConfig {
  int n_layers = 8;
  int n_heads = 4;
  int d_model = 128;
  int d_ff = 512;
  int vocab_size = 0;
  int max_seq_len = 64;
  bool parallel_residual = true;  // GPT-J style: attention and MLP read the same block input
  std::uint64_t rng_seed = 0;

  int d_head() const { return d_model / n_heads; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Weights are stored for row-vector activations: y = x W.
struct LayerParams {
  Matrix ln1_gain, ln1_bias;  // [1 x d_model]
  Matrix ln2_gain, ln2_bias;  // used only when parallel_residual is false
  Matrix w_q, w_k, w_v, w_o;  // [d_model x d_model]
  Matrix w_in;                // [d_model x d_ff]; gelu(x w_in + b_in) is the MLP key
  Matrix b_in;                // [1 x d_ff]
  Matrix w_out;               // [d_ff x d_model]; the editable second MLP layer
};

struct ModelParams {
  ModelConfig config;
  Matrix tok_embed;  // [V x d_model]
  Matrix pos_embed;  // [T_max x d_model]
  std::vector<LayerParams> layers;
  Matrix lnf_gain, lnf_bias;  // [1 x d_model]
  Matrix unembed;             // [d_model x V]

  static ModelParams initialize(const ModelConfig& config);

  // Visits every tensor in checkpoint order with its canonical name.
  void for_each_tensor(const std::function<void(const std::string&, Matrix&)>& fn);
  void for_each_tensor(const std::function<void(const std::string&, const Matrix&)>& fn) const;

  // Expected [rows, cols] of a named tensor under `config`.
  static std::pair<Eigen::Index, Eigen::Index> expected_shape(const ModelConfig& config, const std::string& name);

  void validate() const;
  std::size_t parameter_count() const;
};

}  // namespace adrl
