#include "aligan/core.hpp"

#include "aligan/model.hpp"

namespace aligan {

Batch Batch::gather(std::span<const Eigen::Index> rows) const {
  Batch out;
  const auto n = static_cast<Eigen::Index>(rows.size());
  out.x.resize(n, x.cols());
  out.pe.resize(n, pe.cols());
  out.y.resize(n, y.cols());
  out.tau.resize(n, tau.cols());
  for (Eigen::Index r = 0; r < n; ++r) {
    const Eigen::Index src = rows[static_cast<std::size_t>(r)];
    out.x.row(r) = x.row(src);
    out.pe.row(r) = pe.row(src);
    if (y.rows() > 0) out.y.row(r) = y.row(src);
    if (tau.rows() > 0) out.tau.row(r) = tau.row(src);
  }
  if (y.rows() == 0) out.y.resize(0, y.cols());
  if (tau.rows() == 0) out.tau.resize(0, tau.cols());
  return out;
}

Batch make_batch(std::span<const LabeledSample> samples) {
  Batch b;
  if (samples.empty()) return b;
  const auto n = static_cast<Eigen::Index>(samples.size());
  const Eigen::Index dx = samples.front().record.features.size();
  const Eigen::Index dy = samples.front().label.size();
  b.x.resize(n, dx);
  b.pe.resize(n, dx);
  b.y.resize(n, dy);
  b.tau.resize(n, 1);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& s = samples[static_cast<std::size_t>(r)];
    if (s.record.features.size() != dx || s.label.size() != dy) throw ShapeError("inconsistent sample dimensions");
    b.x.row(r) = s.record.features.transpose();
    b.pe.row(r) = pe_encode(s.record.index, dx).transpose();
    b.y.row(r) = s.label.transpose();
    b.tau(r, 0) = static_cast<Real>(s.tau);
  }
  return b;
}

Batch make_input_batch(std::span<const OperationalRecord> records) {
  Batch b;
  if (records.empty()) return b;
  const auto n = static_cast<Eigen::Index>(records.size());
  const Eigen::Index dx = records.front().features.size();
  b.x.resize(n, dx);
  b.pe.resize(n, dx);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& rec = records[static_cast<std::size_t>(r)];
    if (rec.features.size() != dx) throw ShapeError("inconsistent record dimensions");
    b.x.row(r) = rec.features.transpose();
    b.pe.row(r) = pe_encode(rec.index, dx).transpose();
  }
  return b;
}

bool is_probability_vector(const Eigen::Ref<const Vector>& p, Real tol) {
  if (p.size() == 0 || !p.allFinite()) return false;
  if ((p.array() < -tol).any() || (p.array() > 1 + tol).any()) return false;
  return std::abs(p.sum() - 1) <= tol;
}

}  // namespace aligan
