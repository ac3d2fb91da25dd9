#include "aligan/active_learning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace aligan {

namespace {

constexpr Real kNaN = std::numeric_limits<Real>::quiet_NaN();
constexpr Real kProbabilityTolerance = 1e-6;

void require_nonempty(const Pool& pool) {
  if (pool.empty()) throw EmptyPoolError("query on an empty pool");
}

Eigen::Index argmax(const Eigen::Ref<const Vector>& p) {
  Eigen::Index best = 0;
  p.maxCoeff(&best);
  return best;
}

}  // namespace

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::Random: return "RS";
    case Strategy::Entropy: return "EUS";
    case Strategy::Committee: return "QBC";
  }
  return "?";
}

Strategy parse_strategy(std::string_view name) {
  if (name == "RS") return Strategy::Random;
  if (name == "EUS") return Strategy::Entropy;
  if (name == "QBC") return Strategy::Committee;
  throw std::invalid_argument("unknown strategy '" + std::string(name) + "' (expected RS, EUS or QBC)");
}

Pool::Pool(std::vector<PoolRecord> records) : records_(std::move(records)) {}

std::size_t Pool::location_count() const {
  std::set<int> ids;
  for (const auto& r : records_) ids.insert(r.location_id);
  return ids.size();
}

void Pool::remove_location(int location_id) {
  if (queried_.contains(location_id)) throw std::logic_error("location queried twice");
  const auto before = records_.size();
  std::erase_if(records_, [&](const PoolRecord& r) { return r.location_id == location_id; });
  if (records_.size() == before) throw std::invalid_argument("location not in pool");
  queried_.insert(location_id);
}

Predictor make_predictor(const Model& model) {
  return [&model](std::span<const PoolRecord> records) {
    std::vector<OperationalRecord> plain;
    plain.reserve(records.size());
    for (const auto& r : records) plain.push_back(r.record);
    return generator_forward(model, make_input_batch(plain));
  };
}

QueryResult select_max(const Pool& pool, std::span<const Real> scores) {
  require_nonempty(pool);
  const auto recs = pool.records();
  if (scores.size() != recs.size()) throw std::invalid_argument("one score per pool record required");
  std::size_t best = 0;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    if (std::isnan(scores[i])) throw std::invalid_argument("NaN query score");
    if (i == 0) continue;
    if (scores[i] > scores[best] || (scores[i] == scores[best] && recs[i].record.chainage < recs[best].record.chainage))
      best = i;
  }
  QueryResult q;
  q.pool_index = best;
  q.location_id = recs[best].location_id;
  q.chainage = recs[best].record.chainage;
  q.score = scores[best];
  q.runner_up = kNaN;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    if (recs[i].location_id == q.location_id) continue;
    if (std::isnan(q.runner_up) || scores[i] > q.runner_up) q.runner_up = scores[i];
  }
  return q;
}

QueryResult query_random(const Pool& pool, std::mt19937_64& rng) {
  require_nonempty(pool);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  const std::size_t i = pick(rng);
  const auto& r = pool.records()[i];
  return {i, r.location_id, r.record.chainage, kNaN, kNaN};
}

Real entropy_score(const Eigen::Ref<const Vector>& p) {
  if (!is_probability_vector(p, kProbabilityTolerance))
    throw std::invalid_argument("entropy_score: input is not a probability vector");
  Real h = 0;
  for (Eigen::Index j = 0; j < p.size(); ++j)
    if (p[j] > 0) h -= p[j] * std::log(p[j]);
  return h;
}

std::vector<Real> entropy_scores(const Pool& pool, const Predictor& predict) {
  require_nonempty(pool);
  const Matrix probs = predict(pool.records());
  if (probs.rows() != static_cast<Eigen::Index>(pool.size()))
    throw std::invalid_argument("predictor returned the wrong number of rows");
  std::vector<Real> scores(pool.size());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) scores[static_cast<std::size_t>(i)] = entropy_score(probs.row(i).transpose());
  return scores;
}

QueryResult query_eus(const Pool& pool, const Predictor& predict) {
  const auto scores = entropy_scores(pool, predict);
  return select_max(pool, scores);
}

Real vote_entropy(std::span<const int> votes, Eigen::Index classes) {
  if (votes.empty()) throw std::invalid_argument("vote entropy needs at least one vote");
  std::vector<int> counts(static_cast<std::size_t>(classes), 0);
  for (const int v : votes) {
    if (v < 0 || v >= classes) throw std::invalid_argument("vote outside the class range");
    ++counts[static_cast<std::size_t>(v)];
  }
  const Real c = static_cast<Real>(votes.size());
  Real h = 0;
  for (const int n : counts) {
    if (n == 0) continue;
    const Real share = n / c;
    h -= share * std::log(share);
  }
  return h;
}

std::vector<Real> vote_entropy_scores(const Pool& pool, std::span<const Predictor> members) {
  require_nonempty(pool);
  if (members.empty()) throw std::logic_error("query by committee with an untrained committee");
  const auto n = static_cast<Eigen::Index>(pool.size());
  std::vector<std::vector<int>> votes(pool.size());
  Eigen::Index classes = -1;
  for (const auto& member : members) {
    const Matrix probs = member(pool.records());
    if (probs.rows() != n) throw std::invalid_argument("committee member returned the wrong number of rows");
    if (classes < 0) classes = probs.cols();
    if (probs.cols() != classes) throw std::invalid_argument("committee members disagree on the class count");
    for (Eigen::Index i = 0; i < n; ++i) votes[static_cast<std::size_t>(i)].push_back(static_cast<int>(argmax(probs.row(i).transpose())));
  }
  std::vector<Real> scores(pool.size());
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = vote_entropy(votes[i], classes);
  return scores;
}

QueryResult query_qbc(const Pool& pool, std::span<const Predictor> members) {
  const auto scores = vote_entropy_scores(pool, members);
  return select_max(pool, scores);
}

Committee::Committee(std::vector<Model> members) : members_(std::move(members)) {
  for (const auto& m : members_)
    if (!(m.config == members_.front().config)) throw std::invalid_argument("committee members must share one config");
}

std::vector<Predictor> Committee::predictors() const {
  std::vector<Predictor> out;
  out.reserve(members_.size());
  for (const auto& m : members_) out.push_back(make_predictor(m));
  return out;
}

QueryResult query_qbc(const Pool& pool, const Committee& committee) {
  if (!committee.trained()) throw std::logic_error("query by committee with an untrained committee");
  const auto preds = committee.predictors();
  return query_qbc(pool, std::span<const Predictor>(preds));
}

}  // namespace aligan
