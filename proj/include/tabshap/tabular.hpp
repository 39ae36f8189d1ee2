#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tabshap {

enum class ColumnKind { numeric, categorical, label };

// One serialized `key:value` field of a row.
struct FeatureField {
  std::string key;
  std::string value;
  std::string raw_value;

  // "key:value"
  std::string serialized() const { return key + ':' + value; }
};

struct TabularInstance {
  std::size_t index = 0;
  std::vector<FeatureField> fields;
  std::optional<std::string> label;

  std::size_t num_features() const noexcept { return fields.size(); }
  std::vector<std::string> keys() const;
  // Position of `key` in fields, or nullopt.
  std::optional<std::size_t> find(std::string_view key) const;
};

// Column name -> kind, in the order the schema file lists them.
struct Schema {
  std::vector<std::pair<std::string, ColumnKind>> columns;

  std::optional<ColumnKind> kind_of(std::string_view column) const;
  std::size_t num_features() const;

  static Schema from_json_file(const std::filesystem::path& path);
};

// Fixed framing around the serialized feature string. The built prompt is
//
//   instruction + input_marker + input_separator + <features>
//     + response_separator + response_marker + trailer
//
// Every piece outside <features> is byte-identical for all coalitions of an
// instance.
struct PromptTemplate {
  std::string instruction;
  std::string input_marker = "### Input:";
  std::string response_marker = "### Response:";
  std::string input_separator = "\n";
  std::string response_separator = "\n\n";
  std::string trailer = "\n";

  static PromptTemplate deepseek_default();

  // Parses a template text containing exactly one `{features}` placeholder
  // located between the input marker and the response marker.
  static PromptTemplate from_text(std::string_view text,
                                  std::string_view input_marker = "### Input:",
                                  std::string_view response_marker =
                                      "### Response:");
  static PromptTemplate from_file(const std::filesystem::path& path);

  // Inverse of from_text.
  std::string to_text() const;
};

inline constexpr std::string_view kMissingValue = "unknown";

// Column name -> key: lowercase, whitespace runs and '-' become '_'.
// Throws NormalizationError if the name is empty or contains a colon.
std::string normalize_key(std::string_view column);

// Numeric values are truncated toward zero and rendered as integers;
// categorical values are lowercased with whitespace runs replaced by '_'.
std::string normalize_value(std::string_view raw, ColumnKind kind,
                            std::string_view column = {});

std::string serialize_features(std::span<const FeatureField> fields);

std::string build_prompt(const PromptTemplate& tmpl,
                         std::span<const FeatureField> fields);

// Prompt for the subset of `instance` whose feature indices are in `members`
// (ascending). Field order follows the instance.
std::string build_prompt(const PromptTemplate& tmpl,
                         const TabularInstance& instance,
                         std::span<const std::size_t> members);

// Splits a serialized feature string back into (key, value) pairs.
std::vector<std::pair<std::string, std::string>> parse_features(
    std::string_view serialized);

// Returns the text strictly between the input marker (plus separator) and the
// response separator, or nullopt if the markers are not found.
std::optional<std::string_view> extract_input_block(const PromptTemplate& tmpl,
                                                    std::string_view prompt);

std::vector<TabularInstance> load_dataset(const std::filesystem::path& path,
                                          const Schema& schema);
std::vector<TabularInstance> parse_dataset(std::string_view csv_text,
                                           const Schema& schema);

}  // namespace tabshap
