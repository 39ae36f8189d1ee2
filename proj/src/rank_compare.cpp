#include "tabshap/rank_compare.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include <Eigen/Core>

#include "tabshap/error.hpp"

namespace tabshap {
namespace {

std::vector<ScoredKey> positions_as_scores(const std::vector<std::string>& order) {
  std::vector<ScoredKey> out;
  out.reserve(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    out.push_back({order[i], static_cast<double>(order.size() - i)});
  }
  return out;
}

}  // namespace

std::vector<std::string> GlobalRanking::keys() const {
  std::vector<std::string> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.key);
  return out;
}

GlobalRanking global_ranking(std::span<const AttributionResult> results) {
  if (results.empty()) throw ContractError("global ranking needs at least one result");
  GlobalRanking ranking;
  ranking.metric = results.front().metric;
  ranking.instance_count = results.size();

  std::map<std::string, double> sums;
  for (const auto& key : results.front().feature_keys) sums.emplace(key, 0.0);
  if (sums.size() != results.front().feature_keys.size()) {
    throw ContractError("attribution result repeats a feature key");
  }
  for (const auto& r : results) {
    if (r.metric != ranking.metric) {
      throw ContractError("cannot aggregate results computed with different metrics");
    }
    if (r.feature_keys.size() != sums.size() ||
        static_cast<std::size_t>(r.phi.size()) != r.feature_keys.size()) {
      throw ContractError("results do not share one feature schema");
    }
    for (std::size_t j = 0; j < r.feature_keys.size(); ++j) {
      const auto it = sums.find(r.feature_keys[j]);
      if (it == sums.end()) {
        throw ContractError("feature '" + r.feature_keys[j] + "' is not in every result");
      }
      it->second += r.phi[static_cast<Eigen::Index>(j)];
    }
  }
  const auto n = static_cast<double>(results.size());
  for (const auto& [key, sum] : sums) ranking.entries.push_back({key, sum / n});
  // std::map iteration is key-ordered, so a stable sort leaves ties by key.
  std::stable_sort(ranking.entries.begin(), ranking.entries.end(),
                   [](const ScoredKey& a, const ScoredKey& b) { return a.score > b.score; });
  for (std::size_t i = 1; i < ranking.entries.size(); ++i) {
    if (ranking.entries[i].score == ranking.entries[i - 1].score) ranking.tie = true;
  }
  return ranking;
}

nlohmann::ordered_json to_json(const GlobalRanking& ranking) {
  nlohmann::ordered_json j;
  j["metric"] = std::string(to_string(ranking.metric));
  j["instance_count"] = ranking.instance_count;
  j["tie"] = ranking.tie;
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  for (const auto& e : ranking.entries) entries.push_back({{"key", e.key}, {"score", e.score}});
  j["ranking"] = std::move(entries);
  return j;
}

std::vector<double> average_ranks(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<double> ranks(scores.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    // positions i..j (0-based) share ranks i+1..j+1.
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double spearman_rho(const std::vector<std::string>& r1, const std::vector<std::string>& r2) {
  const auto s1 = positions_as_scores(r1);
  const auto s2 = positions_as_scores(r2);
  return spearman_rho(std::span<const ScoredKey>(s1), std::span<const ScoredKey>(s2));
}

double spearman_rho(std::span<const ScoredKey> r1, std::span<const ScoredKey> r2) {
  const std::size_t n = r1.size();
  if (n < 2) throw ContractError("Spearman correlation needs at least two keys");
  std::map<std::string, std::size_t> slot;
  for (std::size_t i = 0; i < n; ++i) {
    if (!slot.emplace(r1[i].key, i).second) {
      throw ContractError("ranking repeats key '" + r1[i].key + "'");
    }
  }
  if (r2.size() != n) throw ContractError("rankings cover different key sets");
  std::vector<double> a(n), b(n, std::nan(""));
  for (std::size_t i = 0; i < n; ++i) a[i] = r1[i].score;
  for (const auto& e : r2) {
    const auto it = slot.find(e.key);
    if (it == slot.end()) {
      throw ContractError("key '" + e.key + "' is missing from the other ranking");
    }
    if (!std::isnan(b[it->second])) throw ContractError("ranking repeats key '" + e.key + "'");
    b[it->second] = e.score;
  }
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);

  const bool tie_free = std::all_of(ra.begin(), ra.end(), [](double r) { return r == std::floor(r); }) &&
                        std::all_of(rb.begin(), rb.end(), [](double r) { return r == std::floor(r); }) &&
                        std::set<double>(ra.begin(), ra.end()).size() == n &&
                        std::set<double>(rb.begin(), rb.end()).size() == n;
  if (tie_free) {
    // 1 - 6 sum d^2 / (n (n^2 - 1)), integer arithmetic up to the division.
    long long d2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto d = static_cast<long long>(ra[i]) - static_cast<long long>(rb[i]);
      d2 += d * d;
    }
    const auto nn = static_cast<long long>(n);
    return 1.0 - static_cast<double>(6 * d2) / static_cast<double>(nn * (nn * nn - 1));
  }

  const Eigen::Map<const Eigen::VectorXd> va(ra.data(), static_cast<Eigen::Index>(n));
  const Eigen::Map<const Eigen::VectorXd> vb(rb.data(), static_cast<Eigen::Index>(n));
  const Eigen::VectorXd ca = va.array() - va.mean();
  const Eigen::VectorXd cb = vb.array() - vb.mean();
  const double denom = std::sqrt(ca.squaredNorm() * cb.squaredNorm());
  if (denom == 0.0) throw ContractError("Spearman correlation undefined: all scores tied");
  return std::clamp(ca.dot(cb) / denom, -1.0, 1.0);
}

}  // namespace tabshap
