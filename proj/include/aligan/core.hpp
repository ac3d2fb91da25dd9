#ifndef ALIGAN_CORE_HPP
#define ALIGAN_CORE_HPP

#include "aligan/autodiff.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace aligan {

using Real = double;
using Matrix = ad::Tensor<Real>;
using Vector = Eigen::VectorXd;
using ParameterSet = ad::ParameterSet<Real>;
using Graph = ad::Graph<Real>;
using Expr = ad::Expr<Real>;
using Evaluation = ad::Evaluation<Real>;
using Bindings = ad::Bindings<Real>;
using Adam = ad::Adam<Real>;
using AdamConfig = ad::AdamConfig<Real>;

using ad::NonFiniteError;
using ad::ShapeError;
using ad::UnboundInputError;

// Raised for malformed or inconsistent input data (CSV files, labels, splits).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Sensor record at one chainage. `index` is the ordinal of the record in the
// full chainage-sorted record stream and drives the position encoding.
struct OperationalRecord {
  Real chainage = 0;
  std::int64_t index = 0;
  Vector features;
};

// A record paired with its thickness fractions. `tau` is 1 for samples that
// entered through a query round, 0 for the original training data.
struct LabeledSample {
  OperationalRecord record;
  Vector label;
  int location_id = -1;
  int round = 0;
  int tau = 0;
};

using LabeledSet = std::vector<LabeledSample>;

// Struct-of-arrays view of labeled samples, one sample per row.
struct Batch {
  Matrix x;    // B x d_x features
  Matrix pe;   // B x d_x position encodings
  Matrix y;    // B x d_y labels
  Matrix tau;  // B x 1 freshness tags

  [[nodiscard]] Eigen::Index size() const { return x.rows(); }
  [[nodiscard]] bool empty() const { return x.rows() == 0; }

  // Rows `rows` of this batch, in the given order.
  [[nodiscard]] Batch gather(std::span<const Eigen::Index> rows) const;
};

// Builds a batch; position encodings are computed from each record's index.
Batch make_batch(std::span<const LabeledSample> samples);

// Inputs-only batch for unlabeled records (y and tau are empty).
Batch make_input_batch(std::span<const OperationalRecord> records);

// True when `p` is a probability vector: entries in [0, 1] summing to one within `tol`.
bool is_probability_vector(const Eigen::Ref<const Vector>& p, Real tol = 1e-9);

}  // namespace aligan

#endif  // ALIGAN_CORE_HPP
