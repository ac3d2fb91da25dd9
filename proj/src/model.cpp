#include "aligan/model.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

namespace aligan {

namespace {

constexpr std::string_view kCheckpointMagic = "aligan-checkpoint";
constexpr int kCheckpointVersion = 1;

std::string layer_name(std::string_view prefix, std::size_t layer, std::string_view what) {
  return std::string(prefix) + "fc" + std::to_string(layer) + "." + std::string(what);
}

Matrix glorot(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  const Real limit = std::sqrt(6.0 / static_cast<Real>(rows + cols));
  std::uniform_real_distribution<Real> dist(-limit, limit);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

// Dense ReLU stack followed by a final linear layer; returns the pre-activation output.
Expr dense_stack(Graph& g, Expr h, std::string_view prefix, std::size_t layers) {
  for (std::size_t l = 0; l < layers; ++l) {
    h = ad::matmul_nt(h, g.parameter(layer_name(prefix, l, "weight"))) + g.parameter(layer_name(prefix, l, "bias"));
    if (l + 1 < layers) h = ad::relu(h);
  }
  return h;
}

void add_dense_layers(ParameterSet& w, std::string_view prefix, Eigen::Index in, const std::vector<Eigen::Index>& hidden,
                      Eigen::Index out, std::mt19937_64& rng) {
  std::vector<Eigen::Index> widths{in};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(out);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    w.set(layer_name(prefix, l, "weight"), glorot(widths[l + 1], widths[l], rng));
    w.set(layer_name(prefix, l, "bias"), Matrix::Zero(1, widths[l + 1]));
  }
}

void write_dims(std::ostream& out, std::string_view key, const std::vector<Eigen::Index>& dims) {
  out << key;
  for (auto d : dims) out << ' ' << d;
  out << '\n';
}

}  // namespace

void ModelConfig::validate() const {
  if (input_dim < 1 || output_dim < 1) throw std::invalid_argument("model dimensions must be positive");
  if (heads < 1 || head_dim < 1) throw std::invalid_argument("attention needs at least one head of width >= 1");
  for (auto w : generator_hidden)
    if (w < 1) throw std::invalid_argument("generator hidden widths must be positive");
  for (auto w : discriminator_hidden)
    if (w < 1) throw std::invalid_argument("discriminator hidden widths must be positive");
}

Model init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  Model m{config, {}};
  const Eigen::Index width = config.heads * config.head_dim;
  m.weights.set("gen.msa.query", glorot(width, config.input_dim, rng));
  m.weights.set("gen.msa.key", glorot(width, config.input_dim, rng));
  m.weights.set("gen.msa.value", glorot(width, config.input_dim, rng));
  m.weights.set("gen.msa.output", glorot(config.input_dim, width, rng));
  add_dense_layers(m.weights, kGeneratorPrefix, config.input_dim, config.generator_hidden, config.output_dim, rng);
  add_dense_layers(m.weights, kDiscriminatorPrefix, config.input_dim + config.output_dim, config.discriminator_hidden, 2,
                   rng);
  return m;
}

Vector pe_encode(std::int64_t index, Eigen::Index dim) {
  if (dim < 1) throw std::invalid_argument("position encoding dimension must be >= 1");
  Vector out(dim);
  const Real i = static_cast<Real>(index);
  for (Eigen::Index c = 0; c < dim; ++c) {
    const Eigen::Index two_k = c - (c % 2);
    const Real angle = i / std::pow(10000.0, static_cast<Real>(two_k) / static_cast<Real>(dim));
    out(c) = (c % 2 == 0) ? std::sin(angle) : std::cos(angle);
  }
  return out;
}

Matrix pe_encode_rows(std::span<const std::int64_t> indices, Eigen::Index dim) {
  Matrix out(static_cast<Eigen::Index>(indices.size()), dim);
  for (Eigen::Index r = 0; r < out.rows(); ++r) out.row(r) = pe_encode(indices[static_cast<std::size_t>(r)], dim).transpose();
  return out;
}

Expr msa(Graph& g, Expr x, const ModelConfig& config) {
  const Expr q = ad::matmul_nt(x, g.parameter("gen.msa.query"));
  const Expr k = ad::matmul_nt(x, g.parameter("gen.msa.key"));
  const Expr v = ad::matmul_nt(x, g.parameter("gen.msa.value"));
  const Real scale = 1.0 / std::sqrt(static_cast<Real>(config.input_dim));
  const Expr heads = ad::rank_one_attention(q, k, v, config.heads, scale);
  return ad::matmul_nt(heads, g.parameter("gen.msa.output"));
}

Expr generator(Graph& g, Expr x, Expr pe, const ModelConfig& config) {
  const Expr features = msa(g, x, config) + pe;
  return ad::softmax_rows(dense_stack(g, features, kGeneratorPrefix, config.generator_hidden.size() + 1));
}

Expr discriminator(Graph& g, Expr x, Expr y, const ModelConfig& config) {
  return ad::sigmoid(dense_stack(g, ad::concat(x, y), kDiscriminatorPrefix, config.discriminator_hidden.size() + 1));
}

Matrix msa_forward(const Model& model, const Matrix& x) {
  Graph g;
  const Expr out = msa(g, g.input("x"), model.config);
  return g.forward({{"x", x}}, model.weights, {out})[out];
}

Matrix generator_forward(const Model& model, const Matrix& x, const Matrix& pe) {
  Graph g;
  const Expr out = generator(g, g.input("x"), g.input("pe"), model.config);
  return g.forward({{"x", x}, {"pe", pe}}, model.weights, {out})[out];
}

Matrix generator_forward(const Model& model, const Batch& batch) { return generator_forward(model, batch.x, batch.pe); }

Matrix discriminator_forward(const Model& model, const Matrix& x, const Matrix& y) {
  Graph g;
  const Expr out = discriminator(g, g.input("x"), g.input("y"), model.config);
  return g.forward({{"x", x}, {"y", y}}, model.weights, {out})[out];
}

void write_checkpoint(const Model& model, std::ostream& out) {
  const auto& c = model.config;
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "input_dim " << c.input_dim << '\n';
  out << "output_dim " << c.output_dim << '\n';
  out << "heads " << c.heads << '\n';
  out << "head_dim " << c.head_dim << '\n';
  write_dims(out, "generator_hidden", c.generator_hidden);
  write_dims(out, "discriminator_hidden", c.discriminator_hidden);
  out << "tensors " << model.weights.size() << '\n';
  out << std::hexfloat;
  for (const auto& [name, t] : model.weights) {
    out << "tensor " << name << ' ' << t.rows() << ' ' << t.cols() << '\n';
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index col = 0; col < t.cols(); ++col) out << (col ? " " : "") << t(r, col);
      out << '\n';
    }
  }
  out << std::defaultfloat << "end\n";
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path.string());
  write_checkpoint(model, out);
  if (!out) throw DataError("failed writing checkpoint: " + path.string());
}

Model read_checkpoint(std::istream& in) {
  auto fail = [](const std::string& what) { return DataError("checkpoint: " + what); };
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kCheckpointMagic) throw fail("bad header");
  if (version != kCheckpointVersion) throw fail("unsupported version " + std::to_string(version));

  auto expect_key = [&](std::string_view key) {
    std::string k;
    if (!(in >> k) || k != key) throw fail("expected '" + std::string(key) + "'");
  };
  auto read_index = [&](std::string_view key) {
    expect_key(key);
    Eigen::Index v = 0;
    if (!(in >> v)) throw fail("bad value for " + std::string(key));
    return v;
  };
  auto read_dims = [&](std::string_view key) {
    expect_key(key);
    std::string line;
    std::getline(in, line);
    std::istringstream ls(line);
    std::vector<Eigen::Index> dims;
    Eigen::Index d = 0;
    while (ls >> d) dims.push_back(d);
    return dims;
  };

  Model m;
  m.config.input_dim = read_index("input_dim");
  m.config.output_dim = read_index("output_dim");
  m.config.heads = read_index("heads");
  m.config.head_dim = read_index("head_dim");
  m.config.generator_hidden = read_dims("generator_hidden");
  m.config.discriminator_hidden = read_dims("discriminator_hidden");
  m.config.validate();
  const Eigen::Index count = read_index("tensors");
  for (Eigen::Index i = 0; i < count; ++i) {
    expect_key("tensor");
    std::string name;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    if (!(in >> name >> rows >> cols) || rows < 0 || cols < 0) throw fail("bad tensor header");
    Matrix t(rows, cols);
    for (Eigen::Index k = 0; k < t.size(); ++k) {
      std::string token;
      if (!(in >> token)) throw fail("truncated tensor " + name);
      char* end = nullptr;
      t.data()[k] = std::strtod(token.c_str(), &end);
      if (end == token.c_str() || *end != '\0') throw fail("bad number '" + token + "' in " + name);
    }
    m.weights.set(name, std::move(t));
  }
  expect_key("end");
  return m;
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  return read_checkpoint(in);
}

}  // namespace aligan
