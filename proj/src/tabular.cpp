#include "tabshap/tabular.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "csv.hpp"
#include "tabshap/error.hpp"

namespace tabshap {
namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)); }
char to_lower(char c) {
  return static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

// Lowercases and collapses each whitespace run into one '_'.
std::string underscore_lower(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool in_space = false;
  for (char c : s) {
    if (is_space(c)) {
      if (!in_space) out.push_back('_');
      in_space = true;
    } else {
      out.push_back(to_lower(c));
      in_space = false;
    }
  }
  return out;
}

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return 0;
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string_view::npos;
       pos = haystack.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool is_missing(std::string_view trimmed) {
  return trimmed.empty() || trimmed == "?";
}

}  // namespace

std::vector<std::string> TabularInstance::keys() const {
  std::vector<std::string> out;
  out.reserve(fields.size());
  for (const auto& f : fields) out.push_back(f.key);
  return out;
}

std::optional<std::size_t> TabularInstance::find(std::string_view key) const {
  for (std::size_t j = 0; j < fields.size(); ++j) {
    if (fields[j].key == key) return j;
  }
  return std::nullopt;
}

std::optional<ColumnKind> Schema::kind_of(std::string_view column) const {
  for (const auto& [name, kind] : columns) {
    if (name == column) return kind;
  }
  return std::nullopt;
}

std::size_t Schema::num_features() const {
  return static_cast<std::size_t>(
      std::count_if(columns.begin(), columns.end(),
                    [](const auto& c) { return c.second != ColumnKind::label; }));
}

Schema Schema::from_json_file(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  nlohmann::ordered_json doc;
  try {
    doc = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), e.byte);
  }
  if (!doc.is_object() || doc.empty()) {
    throw LoadError(path.string() + ": schema must be a non-empty object");
  }
  Schema schema;
  int labels = 0;
  for (const auto& [name, kind] : doc.items()) {
    if (!kind.is_string()) {
      throw LoadError(path.string() + ": kind of column '" + name +
                      "' must be a string");
    }
    const auto k = kind.get<std::string>();
    ColumnKind ck;
    if (k == "numeric") {
      ck = ColumnKind::numeric;
    } else if (k == "categorical") {
      ck = ColumnKind::categorical;
    } else if (k == "label") {
      ck = ColumnKind::label;
      ++labels;
    } else {
      throw LoadError(path.string() + ": unknown kind '" + k +
                      "' for column '" + name + "'");
    }
    schema.columns.emplace_back(name, ck);
  }
  if (labels > 1) throw LoadError(path.string() + ": more than one label column");
  return schema;
}

PromptTemplate PromptTemplate::deepseek_default() {
  PromptTemplate t;
  t.instruction =
      "Below is an instruction that describes a task, paired with an input "
      "that provides further context. Write a response that appropriately "
      "completes the request.\n\n"
      "### Instruction:\n"
      "Classify the record described by the key:value features below. "
      "Answer with the class label only.\n\n";
  return t;
}

PromptTemplate PromptTemplate::from_text(std::string_view text,
                                         std::string_view input_marker,
                                         std::string_view response_marker) {
  constexpr std::string_view kPlaceholder = "{features}";
  if (count_occurrences(text, kPlaceholder) != 1) {
    throw ConfigError("template must contain exactly one {features} placeholder");
  }
  if (count_occurrences(text, input_marker) != 1 ||
      count_occurrences(text, response_marker) != 1) {
    throw ConfigError("template must contain each marker exactly once");
  }
  const auto slot = text.find(kPlaceholder);
  const auto in_pos = text.find(input_marker);
  const auto resp_pos = text.find(response_marker);
  if (!(in_pos < slot && slot < resp_pos)) {
    throw ConfigError(
        "template must place {features} between the input and response markers");
  }
  PromptTemplate t;
  t.input_marker = std::string(input_marker);
  t.response_marker = std::string(response_marker);
  t.instruction = std::string(text.substr(0, in_pos));
  const auto after_marker = in_pos + input_marker.size();
  t.input_separator = std::string(text.substr(after_marker, slot - after_marker));
  const auto after_slot = slot + kPlaceholder.size();
  t.response_separator = std::string(text.substr(after_slot, resp_pos - after_slot));
  t.trailer = std::string(text.substr(resp_pos + response_marker.size()));
  return t;
}

PromptTemplate PromptTemplate::from_file(const std::filesystem::path& path) {
  return from_text(read_file(path));
}

std::string PromptTemplate::to_text() const {
  return instruction + input_marker + input_separator + "{features}" +
         response_separator + response_marker + trailer;
}

std::string normalize_key(std::string_view column) {
  const auto t = trim(column);
  if (t.empty()) throw NormalizationError(std::string(column), "empty column name");
  if (t.find(':') != std::string_view::npos) {
    throw NormalizationError(std::string(column),
                             "column name '" + std::string(column) + "' contains ':'");
  }
  std::string key = underscore_lower(t);
  std::replace(key.begin(), key.end(), '-', '_');
  return key;
}

std::string normalize_value(std::string_view raw, ColumnKind kind,
                            std::string_view column) {
  const auto t = trim(raw);
  if (t.empty()) {
    throw NormalizationError(std::string(column),
                             "empty value in column '" + std::string(column) + "'");
  }
  if (kind != ColumnKind::numeric) return underscore_lower(t);

  std::string_view digits = t;
  if (digits.front() == '+') digits.remove_prefix(1);
  double x = 0.0;
  const auto [ptr, ec] =
      std::from_chars(digits.data(), digits.data() + digits.size(), x);
  if (ec != std::errc{} || ptr != digits.data() + digits.size() || !std::isfinite(x)) {
    throw NormalizationError(std::string(column), "non-numeric value '" +
                                                      std::string(t) + "' in column '" +
                                                      std::string(column) + "'");
  }
  const double truncated = std::trunc(x);
  if (std::fabs(truncated) >= 9.2e18) {
    throw NormalizationError(std::string(column), "value '" + std::string(t) +
                                                      "' out of integer range in column '" +
                                                      std::string(column) + "'");
  }
  return std::to_string(static_cast<long long>(truncated));
}

std::string serialize_features(std::span<const FeatureField> fields) {
  if (fields.empty()) throw ContractError("cannot serialize an empty coalition");
  std::string out;
  for (const auto& f : fields) {
    if (!out.empty()) out.push_back(' ');
    out += f.key;
    out.push_back(':');
    out += f.value;
  }
  return out;
}

std::string build_prompt(const PromptTemplate& tmpl,
                         std::span<const FeatureField> fields) {
  std::string prompt = tmpl.instruction;
  prompt += tmpl.input_marker;
  prompt += tmpl.input_separator;
  prompt += serialize_features(fields);
  prompt += tmpl.response_separator;
  prompt += tmpl.response_marker;
  prompt += tmpl.trailer;
  if (count_occurrences(prompt, tmpl.input_marker) != 1 ||
      count_occurrences(prompt, tmpl.response_marker) != 1) {
    throw ContractError("prompt markers are not unique; a feature value collides "
                        "with the template");
  }
  return prompt;
}

std::string build_prompt(const PromptTemplate& tmpl,
                         const TabularInstance& instance,
                         std::span<const std::size_t> members) {
  std::vector<FeatureField> subset;
  subset.reserve(members.size());
  for (auto j : members) {
    if (j >= instance.fields.size()) {
      throw ContractError("coalition member out of range");
    }
    subset.push_back(instance.fields[j]);
  }
  return build_prompt(tmpl, subset);
}

std::vector<std::pair<std::string, std::string>> parse_features(
    std::string_view serialized) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t start = 0;
  while (start <= serialized.size()) {
    auto end = serialized.find(' ', start);
    if (end == std::string_view::npos) end = serialized.size();
    const auto token = serialized.substr(start, end - start);
    const auto colon = token.find(':');
    if (token.empty() || colon == std::string_view::npos) {
      throw ContractError("malformed feature token '" + std::string(token) + "'");
    }
    out.emplace_back(std::string(token.substr(0, colon)),
                     std::string(token.substr(colon + 1)));
    start = end + 1;
  }
  return out;
}

std::optional<std::string_view> extract_input_block(const PromptTemplate& tmpl,
                                                    std::string_view prompt) {
  const std::string open = tmpl.input_marker + tmpl.input_separator;
  const std::string close = tmpl.response_separator + tmpl.response_marker;
  const auto begin = prompt.find(open);
  if (begin == std::string_view::npos) return std::nullopt;
  const auto body = begin + open.size();
  const auto end = prompt.rfind(close);
  if (end == std::string_view::npos || end < body) return std::nullopt;
  return prompt.substr(body, end - body);
}

std::vector<TabularInstance> parse_dataset(std::string_view csv_text,
                                           const Schema& schema) {
  const auto records = detail::parse_csv(csv_text);
  if (records.empty()) throw LoadError("dataset has no header row", 1);

  const auto& header = records.front();
  struct Column {
    std::string name;
    std::string key;
    ColumnKind kind;
  };
  std::vector<Column> columns;
  std::set<std::string> seen_keys;
  for (const auto& raw_name : header.cells) {
    const std::string name(trim(raw_name));
    const auto kind = schema.kind_of(name);
    if (!kind) {
      throw LoadError("column '" + name + "' is not in the schema", header.line);
    }
    std::string key = normalize_key(name);
    if (*kind != ColumnKind::label && !seen_keys.insert(key).second) {
      throw LoadError("duplicate feature key '" + key + "'", header.line);
    }
    columns.push_back({name, std::move(key), *kind});
  }
  for (const auto& [name, kind] : schema.columns) {
    const bool present = std::any_of(columns.begin(), columns.end(),
                                     [&](const Column& c) { return c.name == name; });
    if (!present) {
      throw LoadError("missing column '" + name + "' in header", header.line);
    }
  }

  std::vector<TabularInstance> instances;
  instances.reserve(records.size() - 1);
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.cells.size() != columns.size()) {
      throw LoadError("row " + std::to_string(rec.line) + " has " +
                          std::to_string(rec.cells.size()) + " cells, expected " +
                          std::to_string(columns.size()),
                      rec.line);
    }
    TabularInstance inst;
    inst.index = instances.size();
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const auto& col = columns[c];
      const auto& raw = rec.cells[c];
      const auto t = trim(raw);
      if (col.kind == ColumnKind::label) {
        if (!is_missing(t)) inst.label = std::string(t);
        continue;
      }
      FeatureField field;
      field.key = col.key;
      field.raw_value = raw;
      try {
        field.value = is_missing(t) ? std::string(kMissingValue)
                                    : normalize_value(t, col.kind, col.name);
      } catch (const NormalizationError& e) {
        throw LoadError("row " + std::to_string(rec.line) + ": " + e.what(), rec.line);
      }
      inst.fields.push_back(std::move(field));
    }
    if (inst.fields.empty()) {
      throw LoadError("schema declares no feature columns", rec.line);
    }
    instances.push_back(std::move(inst));
  }
  return instances;
}

std::vector<TabularInstance> load_dataset(const std::filesystem::path& path,
                                          const Schema& schema) {
  return parse_dataset(read_file(path), schema);
}

}  // namespace tabshap
