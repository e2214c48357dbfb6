#include "adrl/model/params.hpp"

#include <random>

namespace adrl {

void ModelConfig::validate() const {
  require(n_layers >= 1, "n_layers must be >= 1");
  require(n_heads >= 1, "n_heads must be >= 1");
  require(d_model >= 1 && d_ff >= 1, "model dimensions must be >= 1");
  require(d_model % n_heads == 0, "d_model (" + std::to_string(d_model) + ") is not divisible by n_heads (" +
                                      std::to_string(n_heads) + ")");
  require(vocab_size >= 1, "vocab_size must be >= 1");
  require(max_seq_len >= 8, "max_seq_len must be >= 8");
}

namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = dist(rng);
  }
  return m;
}

}  // namespace

ModelParams ModelParams::initialize(const ModelConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.rng_seed);
  const int d = config.d_model;
  const double std_embed = 0.02 * 5.0;
  const double std_proj = 1.0 / std::sqrt(static_cast<double>(d));
  const double std_resid = std_proj / std::sqrt(2.0 * config.n_layers);

  ModelParams p;
  p.config = config;
  p.tok_embed = gaussian(config.vocab_size, d, std_embed, rng);
  p.pos_embed = gaussian(config.max_seq_len, d, std_embed, rng);
  for (int l = 0; l < config.n_layers; ++l) {
    LayerParams lp;
    lp.ln1_gain = Matrix::Ones(1, d);
    lp.ln1_bias = Matrix::Zero(1, d);
    lp.ln2_gain = Matrix::Ones(1, d);
    lp.ln2_bias = Matrix::Zero(1, d);
    lp.w_q = gaussian(d, d, std_proj, rng);
    lp.w_k = gaussian(d, d, std_proj, rng);
    lp.w_v = gaussian(d, d, std_proj, rng);
    lp.w_o = gaussian(d, d, std_resid, rng);
    lp.w_in = gaussian(d, config.d_ff, std_proj, rng);
    lp.b_in = Matrix::Zero(1, config.d_ff);
    lp.w_out = gaussian(config.d_ff, d, std_resid * std::sqrt(static_cast<double>(d) / config.d_ff), rng);
    p.layers.push_back(std::move(lp));
  }
  p.lnf_gain = Matrix::Ones(1, d);
  p.lnf_bias = Matrix::Zero(1, d);
  p.unembed = gaussian(d, config.vocab_size, std_proj, rng);
  return p;
}

void ModelParams::for_each_tensor(const std::function<void(const std::string&, Matrix&)>& fn) {
  fn("tok_embed", tok_embed);
  fn("pos_embed", pos_embed);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    LayerParams& lp = layers[l];
    fn(pre + "ln1_gain", lp.ln1_gain);
    fn(pre + "ln1_bias", lp.ln1_bias);
    fn(pre + "ln2_gain", lp.ln2_gain);
    fn(pre + "ln2_bias", lp.ln2_bias);
    fn(pre + "w_q", lp.w_q);
    fn(pre + "w_k", lp.w_k);
    fn(pre + "w_v", lp.w_v);
    fn(pre + "w_o", lp.w_o);
    fn(pre + "w_in", lp.w_in);
    fn(pre + "b_in", lp.b_in);
    fn(pre + "w_out", lp.w_out);
  }
  fn("lnf_gain", lnf_gain);
  fn("lnf_bias", lnf_bias);
  fn("unembed", unembed);
}

void ModelParams::for_each_tensor(const std::function<void(const std::string&, const Matrix&)>& fn) const {
  const_cast<ModelParams*>(this)->for_each_tensor([&fn](const std::string& name, Matrix& m) { fn(name, m); });
}

std::pair<Eigen::Index, Eigen::Index> ModelParams::expected_shape(const ModelConfig& c, const std::string& name) {
  const auto dot = name.rfind('.');
  const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
  if (name == "tok_embed") return {c.vocab_size, c.d_model};
  if (name == "pos_embed") return {c.max_seq_len, c.d_model};
  if (name == "unembed") return {c.d_model, c.vocab_size};
  if (leaf == "w_q" || leaf == "w_k" || leaf == "w_v" || leaf == "w_o") return {c.d_model, c.d_model};
  if (leaf == "w_in") return {c.d_model, c.d_ff};
  if (leaf == "b_in") return {1, c.d_ff};
  if (leaf == "w_out") return {c.d_ff, c.d_model};
  return {1, c.d_model};  // layer-norm gains and biases
}

void ModelParams::validate() const {
  config.validate();
  require(static_cast<int>(layers.size()) == config.n_layers, "layer count does not match config");
  for_each_tensor([this](const std::string& name, const Matrix& m) {
    const auto [r, c] = expected_shape(config, name);
    require(m.rows() == r && m.cols() == c, "tensor " + name + " has shape " + std::to_string(m.rows()) + "x" +
                                                std::to_string(m.cols()) + ", expected " + std::to_string(r) +
                                                "x" + std::to_string(c));
    require(all_finite(m), "tensor " + name + " has non-finite entries");
  });
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor([&n](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

}  // namespace adrl
