// iGAN-GR networks.
//
// Generator: multi-head self-attention plus a fixed sinusoidal position
// encoding, summed, followed by ReLU dense layers and a softmax output over
// the rock-soil types. Discriminator: ReLU dense layers over concat(x, y) with
// two sigmoid heads, column 0 answering real-vs-generated and column 1
// fresh-vs-original.
//
// All weights of one model live in a single ParameterSet. Generator entries
// are prefixed "gen.", discriminator entries "disc.". The per-head attention
// projections are stored stacked: rows [l*d_k, (l+1)*d_k) of "gen.msa.query"
// hold head l's query matrix, and likewise for key and value.

#ifndef ALIGAN_MODEL_HPP
#define ALIGAN_MODEL_HPP

#include "aligan/core.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace aligan {

inline constexpr std::string_view kGeneratorPrefix = "gen.";
inline constexpr std::string_view kDiscriminatorPrefix = "disc.";

inline constexpr int kRealGeneratedHead = 0;
inline constexpr int kFreshOriginalHead = 1;

struct ModelConfig {
  Eigen::Index input_dim = 69;
  Eigen::Index output_dim = 11;
  Eigen::Index heads = 8;
  Eigen::Index head_dim = 8;
  std::vector<Eigen::Index> generator_hidden{20, 7};
  std::vector<Eigen::Index> discriminator_hidden{20, 7};

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct Model {
  ModelConfig config;
  ParameterSet weights;

  [[nodiscard]] ParameterSet generator() const { return weights.filtered(kGeneratorPrefix); }
  [[nodiscard]] ParameterSet discriminator() const { return weights.filtered(kDiscriminatorPrefix); }
};

// Glorot-uniform weights, zero biases.
Model init_model(const ModelConfig& config, std::uint64_t seed);

// Position encoding of sample `index` over `dim` components:
// [2k] = sin(i / 10000^(2k/dim)), [2k+1] = cos(i / 10000^(2k/dim)).
Vector pe_encode(std::int64_t index, Eigen::Index dim);

Matrix pe_encode_rows(std::span<const std::int64_t> indices, Eigen::Index dim);

// Graph builders. `x` and `pe` are B x d_x, `y` is B x d_y.
Expr msa(Graph& g, Expr x, const ModelConfig& config);
Expr generator(Graph& g, Expr x, Expr pe, const ModelConfig& config);
Expr discriminator(Graph& g, Expr x, Expr y, const ModelConfig& config);

// Direct evaluation, one sample per row.
Matrix msa_forward(const Model& model, const Matrix& x);
Matrix generator_forward(const Model& model, const Matrix& x, const Matrix& pe);
Matrix generator_forward(const Model& model, const Batch& batch);
Matrix discriminator_forward(const Model& model, const Matrix& x, const Matrix& y);

// Text checkpoint with hex-float payloads; load(save(m)) == m bit for bit.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
void write_checkpoint(const Model& model, std::ostream& out);
Model load_checkpoint(const std::filesystem::path& path);
Model read_checkpoint(std::istream& in);

}  // namespace aligan

#endif  // ALIGAN_MODEL_HPP
