#pragma once

#include "radfl/analysis.hpp"
#include "radfl/learning.hpp"
#include "radfl/netmodel.hpp"
#include "radfl/routing.hpp"
#include "radfl/schedule.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace radfl::io {

using Json = nlohmann::ordered_json;

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

/// Line of every key and array element in a JSON document, addressed by
/// JSON pointer ("/protocols/0/kind"). Used for config diagnostics.
class SourceMap {
 public:
  SourceMap() = default;
  explicit SourceMap(std::string_view text);
  /// Line of `pointer`, or of its nearest mapped ancestor; 0 if none.
  int line_of(const std::string& pointer) const;

 private:
  std::map<std::string, int> lines_;
};

/// Parses JSON text; syntax errors become ConfigError with a line number.
Json parse_json(std::string_view text, const std::string& origin);

/// Throws ConfigError naming the first key of `object` not in `allowed`.
void check_keys(const Json& object, std::initializer_list<std::string_view> allowed,
                const std::string& pointer, const SourceMap& source, const std::string& origin);

// -- graph ---------------------------------------------------------------------

Json channel_to_json(const net::ChannelParams& channel);
net::ChannelParams channel_from_json(const Json& j);
Json graph_to_json(const net::NetworkGraph& graph);
/// Links need {m, n, bit_success}; distance, path loss and SNR are optional.
net::NetworkGraph graph_from_json(const Json& j);

// -- routing -------------------------------------------------------------------

/// {elements, pairs: [{src, dst, hops, e2e_success}]}; src and dst are node ids.
Json plan_to_json(const routing::RoutePlan& plan);
/// Budgets as {"max_transmissions": [...]} with one entry per node; a
/// negative or missing entry means unlimited.
routing::BandwidthBudget budget_from_json(const Json& j, const net::NetworkGraph& graph);

// -- learning ------------------------------------------------------------------

Json task_to_json(const learning::Task& task);
learning::Task task_from_json(const Json& j);

/// 16-byte header ("RAFL", M as u64, K as u32, all little-endian) followed
/// by M little-endian binary64 values.
void write_checkpoint(const std::filesystem::path& path, const learning::ModelVector& model);
learning::ModelVector read_checkpoint(const std::filesystem::path& path);
std::string encode_checkpoint(const learning::ModelVector& model);
learning::ModelVector decode_checkpoint(std::string_view bytes);

// -- analysis ------------------------------------------------------------------

analysis::BoundInputs bound_inputs_from_json(const Json& j);
Json bound_inputs_to_json(const analysis::BoundInputs& in);
Json bound_report_to_json(const analysis::BoundReport& report);
/// Rows: pair,bin_lo,bin_hi,count with pair written as "m->n".
std::string histogram_csv(const analysis::CoefficientDistribution& dist);

/// Full-precision decimal for CSV output.
std::string format_double(double x);

}  // namespace radfl::io
