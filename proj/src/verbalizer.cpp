#include "tabshap/verbalizer.hpp"

#include <cctype>
#include <cmath>

#include <json.hpp>

#include "atomic_file.hpp"
#include "tabshap/error.hpp"

namespace tabshap {

std::string canonicalize_token(std::string_view token) {
  auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)); };
  while (!token.empty() && is_space(token.front())) token.remove_prefix(1);
  while (!token.empty() && is_space(token.back())) token.remove_suffix(1);
  std::string out(token);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

VerbalizerMap::VerbalizerMap(
    std::vector<std::pair<std::string, std::vector<std::string>>> classes) {
  if (classes.size() < 2) throw ConfigError("verbalizer needs at least two classes");
  for (auto& [label, forms] : classes) {
    for (const auto& existing : classes_) {
      if (existing == label) throw ConfigError("duplicate class '" + label + "'");
    }
    std::set<std::string> canon;
    for (const auto& f : forms) {
      auto c = canonicalize_token(f);
      if (c.empty()) throw ConfigError("class '" + label + "' has an empty surface form");
      canon.insert(std::move(c));
    }
    if (canon.empty()) throw ConfigError("class '" + label + "' has no surface forms");
    const std::size_t index = classes_.size();
    for (const auto& c : canon) {
      if (!lookup_.emplace(c, index).second) {
        throw ConfigError("surface form '" + c + "' is claimed by more than one class");
      }
    }
    classes_.push_back(std::move(label));
    surface_.push_back(std::move(canon));
  }
}

VerbalizerMap VerbalizerMap::from_json_text(std::string_view text) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("verbalizer: ") + e.what(), e.byte);
  }
  if (!j.is_object()) throw ConfigError("verbalizer must be a JSON object");
  std::vector<std::pair<std::string, std::vector<std::string>>> classes;
  for (const auto& [label, forms] : j.items()) {
    if (!forms.is_array()) {
      throw ConfigError("verbalizer forms for '" + label + "' must be an array");
    }
    std::vector<std::string> v;
    for (const auto& f : forms) {
      if (!f.is_string()) throw ConfigError("verbalizer form must be a string");
      v.push_back(f.get<std::string>());
    }
    classes.emplace_back(label, std::move(v));
  }
  return VerbalizerMap(std::move(classes));
}

VerbalizerMap VerbalizerMap::from_file(const std::filesystem::path& path) {
  return from_json_text(detail::read_text_file(path));
}

std::optional<std::size_t> VerbalizerMap::class_of(std::string_view canonical_token) const {
  const auto it = lookup_.find(std::string(canonical_token));
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

std::string VerbalizerMap::to_json_text() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (std::size_t c = 0; c < classes_.size(); ++c) {
    j[classes_[c]] = std::vector<std::string>(surface_[c].begin(), surface_[c].end());
  }
  return j.dump();
}

Eigen::VectorXd aggregate_raw(const TopKDistribution& topk, const VerbalizerMap& vmap) {
  Eigen::VectorXd raw = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(vmap.size()));
  for (const auto& e : topk.entries) {
    if (auto c = vmap.class_of(canonicalize_token(e.token))) {
      raw[static_cast<Eigen::Index>(*c)] += std::exp(e.logprob);
    }
  }
  return raw;
}

NormalizedClasses normalize_classes(const Eigen::Ref<const Eigen::VectorXd>& raw) {
  if (raw.size() == 0) throw ContractError("cannot normalize an empty class vector");
  if (!raw.allFinite() || (raw.array() < 0.0).any()) {
    throw ContractError("raw class masses must be finite and non-negative");
  }
  const double total = raw.sum();
  if (total > 0.0) return {raw / total, false};
  return {ClassDistribution::Constant(raw.size(), 1.0 / static_cast<double>(raw.size())),
          true};
}

}  // namespace tabshap
