// Pool-based query strategies: random sampling, entropy-based uncertainty
// sampling (EUS) and query-by-committee with vote entropy (QBC).
//
// Scores are computed per pool record; the winning record's drill location
// is what gets labeled. Ties go to the lowest chainage.

#ifndef ALIGAN_ACTIVE_LEARNING_HPP
#define ALIGAN_ACTIVE_LEARNING_HPP

#include "aligan/model.hpp"

#include <functional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace aligan {

enum class Strategy { Random, Entropy, Committee };

std::string_view strategy_name(Strategy s);  // "RS", "EUS", "QBC"
Strategy parse_strategy(std::string_view name);

struct PoolRecord {
  OperationalRecord record;
  int location_id = -1;
  Real offset = 0;  // signed distance from the drill location, meters
};

class EmptyPoolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Candidates still available for querying. Removing a location drops all of
// its records at once; a removed location is never re-issued.
class Pool {
 public:
  Pool() = default;
  explicit Pool(std::vector<PoolRecord> records);

  [[nodiscard]] std::span<const PoolRecord> records() const { return records_; }
  [[nodiscard]] std::size_t size() const { return records_.size(); }
  [[nodiscard]] bool empty() const { return records_.empty(); }
  [[nodiscard]] std::size_t location_count() const;
  [[nodiscard]] bool was_queried(int location_id) const { return queried_.contains(location_id); }
  [[nodiscard]] const std::set<int>& queried() const { return queried_; }

  void remove_location(int location_id);

 private:
  std::vector<PoolRecord> records_;
  std::set<int> queried_;
};

struct QueryResult {
  std::size_t pool_index = 0;  // into Pool::records() at query time
  int location_id = -1;
  Real chainage = 0;
  Real score = 0;
  Real runner_up = 0;  // best score among other locations; NaN when none
};

// Maps a batch of records to their predicted fraction vectors, one row each.
using Predictor = std::function<Matrix(std::span<const PoolRecord>)>;

Predictor make_predictor(const Model& model);

// Argmax of `scores` over the pool, lowest chainage on ties.
QueryResult select_max(const Pool& pool, std::span<const Real> scores);

QueryResult query_random(const Pool& pool, std::mt19937_64& rng);

// Shannon entropy -sum p log p with 0 log 0 = 0. Throws std::invalid_argument
// unless `p` is a probability vector within 1e-6.
Real entropy_score(const Eigen::Ref<const Vector>& p);

std::vector<Real> entropy_scores(const Pool& pool, const Predictor& predict);
QueryResult query_eus(const Pool& pool, const Predictor& predict);

// Vote entropy of per-member argmax votes over `classes` labels.
Real vote_entropy(std::span<const int> votes, Eigen::Index classes);

std::vector<Real> vote_entropy_scores(const Pool& pool, std::span<const Predictor> members);
QueryResult query_qbc(const Pool& pool, std::span<const Predictor> members);

// Independently trained iGAN-GRs sharing one architecture.
class Committee {
 public:
  Committee() = default;
  explicit Committee(std::vector<Model> members);

  [[nodiscard]] bool trained() const { return !members_.empty(); }
  [[nodiscard]] std::size_t size() const { return members_.size(); }
  [[nodiscard]] std::vector<Model>& members() { return members_; }
  [[nodiscard]] const std::vector<Model>& members() const { return members_; }
  [[nodiscard]] std::vector<Predictor> predictors() const;

 private:
  std::vector<Model> members_;
};

QueryResult query_qbc(const Pool& pool, const Committee& committee);

}  // namespace aligan

#endif  // ALIGAN_ACTIVE_LEARNING_HPP
