#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "tabshap/backend.hpp"

namespace tabshap {

template <typename Scalar>
using Distribution = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Probability vector aligned with VerbalizerMap::classes().
using ClassDistribution = Distribution<double>;

// Class label -> set of canonical token surface forms.
class VerbalizerMap {
 public:
  // Forms are canonicalized on construction. Throws ConfigError when a class
  // has no forms, a class is repeated, or two classes share a form.
  explicit VerbalizerMap(std::vector<std::pair<std::string, std::vector<std::string>>> classes);

  // {"class": ["form", ...], ...}; class order follows the file.
  static VerbalizerMap from_json_text(std::string_view text);
  static VerbalizerMap from_file(const std::filesystem::path& path);

  const std::vector<std::string>& classes() const noexcept { return classes_; }
  std::size_t size() const noexcept { return classes_.size(); }
  const std::set<std::string>& surface_set(std::size_t c) const { return surface_.at(c); }
  std::optional<std::size_t> class_of(std::string_view canonical_token) const;

  std::string to_json_text() const;

 private:
  std::vector<std::string> classes_;
  std::vector<std::set<std::string>> surface_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

// Strip surrounding whitespace, lowercase.
std::string canonicalize_token(std::string_view token);

// Per-class probability mass over the top-k entries; unmatched tokens are
// ignored.
Eigen::VectorXd aggregate_raw(const TopKDistribution& topk, const VerbalizerMap& vmap);

struct NormalizedClasses {
  ClassDistribution probs;
  // No class received any mass; probs is uniform.
  bool degenerate = false;
};

NormalizedClasses normalize_classes(const Eigen::Ref<const Eigen::VectorXd>& raw);

inline NormalizedClasses class_distribution(const TopKDistribution& topk,
                                            const VerbalizerMap& vmap) {
  return normalize_classes(aggregate_raw(topk, vmap));
}

}  // namespace tabshap
