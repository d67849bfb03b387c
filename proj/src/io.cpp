#include "radfl/io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

namespace radfl::io {

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("IoError", "cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IoError", "cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error("IoError", "write failed for " + path.string());
}

// -- source map ----------------------------------------------------------------

namespace {

std::string escape_pointer_token(const std::string& key) {
  std::string out;
  for (char c : key) {
    if (c == '~')
      out += "~0";
    else if (c == '/')
      out += "~1";
    else
      out += c;
  }
  return out;
}

}  // namespace

SourceMap::SourceMap(std::string_view text) {
  struct Frame {
    bool object;
    std::string path;
    int index = 0;
    std::string key;
  };
  std::vector<Frame> stack;
  int line = 1;
  auto element_path = [&]() -> std::string {
    if (stack.empty()) return "";
    const Frame& f = stack.back();
    return f.object ? f.path + "/" + escape_pointer_token(f.key) : f.path + "/" + std::to_string(f.index);
  };
  auto mark_element = [&]() {
    if (!stack.empty() && !stack.back().object) lines_.emplace(element_path(), line);
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\n') {
      ++line;
    } else if (c == '"') {
      const int start = line;
      std::string s;
      for (++i; i < text.size() && text[i] != '"'; ++i) {
        if (text[i] == '\\' && i + 1 < text.size()) {
          s += text[++i];
        } else {
          if (text[i] == '\n') ++line;
          s += text[i];
        }
      }
      std::size_t k = i + 1;
      while (k < text.size() && std::isspace(static_cast<unsigned char>(text[k]))) ++k;
      if (!stack.empty() && stack.back().object && k < text.size() && text[k] == ':') {
        stack.back().key = s;
        lines_.emplace(stack.back().path + "/" + escape_pointer_token(s), start);
      } else {
        if (!stack.empty() && !stack.back().object) lines_.emplace(element_path(), start);
      }
    } else if (c == '{' || c == '[') {
      mark_element();
      const std::string path = element_path();
      stack.push_back({c == '{', path, 0, {}});
    } else if (c == '}' || c == ']') {
      if (!stack.empty()) stack.pop_back();
    } else if (c == ',') {
      if (!stack.empty() && !stack.back().object) ++stack.back().index;
    } else if (!std::isspace(static_cast<unsigned char>(c)) && c != ':') {
      mark_element();
    }
  }
}

int SourceMap::line_of(const std::string& pointer) const {
  std::string p = pointer;
  while (!p.empty()) {
    if (auto it = lines_.find(p); it != lines_.end()) return it->second;
    p = p.substr(0, p.rfind('/'));
  }
  return 0;
}

Json parse_json(std::string_view text, const std::string& origin) {
  try {
    return Json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    int line = 1;
    for (std::size_t i = 0; i < std::min<std::size_t>(e.byte, text.size()); ++i) line += text[i] == '\n';
    throw Error("ConfigError", origin + ":" + std::to_string(line) + ": invalid JSON (" + e.what() + ")");
  }
}

void check_keys(const Json& object, std::initializer_list<std::string_view> allowed,
                const std::string& pointer, const SourceMap& source, const std::string& origin) {
  if (!object.is_object())
    throw Error("ConfigError", origin + ":" + std::to_string(source.line_of(pointer)) + ": " +
                                   (pointer.empty() ? "/" : pointer) + " must be an object");
  for (const auto& [key, value] : object.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == key;
    if (!ok) {
      const std::string at = pointer + "/" + escape_pointer_token(key);
      throw Error("ConfigError", origin + ":" + std::to_string(source.line_of(at)) + ": unknown key '" +
                                     key + "' in " + (pointer.empty() ? "/" : pointer));
    }
  }
}

// -- graph ---------------------------------------------------------------------

Json channel_to_json(const net::ChannelParams& c) {
  return Json{{"carrier_ghz", c.carrier_ghz},
              {"bandwidth_hz", c.bandwidth_hz},
              {"tx_power_dbm", c.tx_power_dbm},
              {"noise_psd_dbm_hz", c.noise_psd_dbm_hz},
              {"modulation", c.modulation == net::Modulation::BPSK ? "BPSK" : "QPSK"},
              {"bits_per_element", c.bits_per_element},
              {"frequency_unit", c.frequency_unit == net::FrequencyUnit::GHz ? "GHz" : "MHz"}};
}

net::ChannelParams channel_from_json(const Json& j) {
  net::ChannelParams c;
  c.carrier_ghz = j.value("carrier_ghz", c.carrier_ghz);
  c.bandwidth_hz = j.value("bandwidth_hz", c.bandwidth_hz);
  c.tx_power_dbm = j.value("tx_power_dbm", c.tx_power_dbm);
  c.noise_psd_dbm_hz = j.value("noise_psd_dbm_hz", c.noise_psd_dbm_hz);
  c.bits_per_element = j.value("bits_per_element", c.bits_per_element);
  const std::string mod = j.value("modulation", std::string("BPSK"));
  if (mod == "BPSK")
    c.modulation = net::Modulation::BPSK;
  else if (mod == "QPSK")
    c.modulation = net::Modulation::QPSK;
  else
    throw Error("ConfigError", "unknown modulation '" + mod + "'");
  const std::string unit = j.value("frequency_unit", std::string("GHz"));
  if (unit == "GHz")
    c.frequency_unit = net::FrequencyUnit::GHz;
  else if (unit == "MHz")
    c.frequency_unit = net::FrequencyUnit::MHz;
  else
    throw Error("ConfigError", "unknown frequency unit '" + unit + "'");
  require(c.bits_per_element > 0, "ConfigError", "bits_per_element must be positive");
  require(c.carrier_ghz > 0.0 && c.bandwidth_hz > 0.0, "ConfigError", "carrier and bandwidth must be positive");
  return c;
}

Json graph_to_json(const net::NetworkGraph& g) {
  Json nodes = Json::array();
  for (const auto& n : g.nodes())
    nodes.push_back({{"id", n.id},
                     {"x_m", n.coords.x},
                     {"y_m", n.coords.y},
                     {"kind", n.kind == net::NodeKind::Participant ? "participant" : "relay"}});
  Json links = Json::array();
  for (const auto& l : g.links())
    links.push_back({{"m", l.m},
                     {"n", l.n},
                     {"bit_success", l.bit_success},
                     {"distance_m", l.distance_m},
                     {"path_loss_db", l.path_loss_db},
                     {"snr_linear", l.snr_linear}});
  return Json{{"edge_density", g.edge_density()},
              {"channel", channel_to_json(g.channel())},
              {"nodes", std::move(nodes)},
              {"links", std::move(links)}};
}

net::NetworkGraph graph_from_json(const Json& j) {
  try {
    const net::ChannelParams channel = j.contains("channel") ? channel_from_json(j.at("channel")) : net::ChannelParams{};
    std::vector<net::Node> nodes;
    for (const auto& n : j.at("nodes")) {
      net::Node node;
      node.id = n.at("id").get<NodeId>();
      node.coords = {n.at("x_m").get<double>(), n.at("y_m").get<double>()};
      const std::string kind = n.value("kind", std::string("participant"));
      require(kind == "participant" || kind == "relay", "InvalidGraph", "unknown node kind '" + kind + "'");
      node.kind = kind == "participant" ? net::NodeKind::Participant : net::NodeKind::Relay;
      nodes.push_back(node);
    }
    std::sort(nodes.begin(), nodes.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    std::vector<net::Link> links;
    for (const auto& l : j.at("links")) {
      net::Link link;
      link.m = l.at("m").get<NodeId>();
      link.n = l.at("n").get<NodeId>();
      link.bit_success = l.at("bit_success").get<double>();
      require(link.m >= 0 && link.n >= 0 && static_cast<std::size_t>(link.m) < nodes.size() &&
                  static_cast<std::size_t>(link.n) < nodes.size(),
              "InvalidGraph", "link endpoint out of range");
      if (l.contains("distance_m")) {
        link.distance_m = l.at("distance_m").get<double>();
      } else {
        const auto& a = nodes[link.m].coords;
        const auto& b = nodes[link.n].coords;
        link.distance_m = std::hypot(a.x - b.x, a.y - b.y);
      }
      if (l.contains("path_loss_db")) {
        link.path_loss_db = l.at("path_loss_db").get<double>();
      } else if (link.distance_m > 0.0) {
        link.path_loss_db = net::path_loss_db(link.distance_m / 1000.0, channel.carrier_in_formula_unit());
      }
      link.snr_linear = l.contains("snr_linear") ? l.at("snr_linear").get<double>()
                                                 : net::snr_linear(channel, link.path_loss_db);
      links.push_back(link);
    }
    return net::NetworkGraph(std::move(nodes), std::move(links), channel, j.value("edge_density", 1.0));
  } catch (const nlohmann::json::exception& e) {
    throw Error("InvalidGraph", std::string("malformed graph document: ") + e.what());
  }
}

// -- routing -------------------------------------------------------------------

Json plan_to_json(const routing::RoutePlan& plan) {
  Json pairs = Json::array();
  const auto& parts = plan.participants();
  for (std::size_t m = 0; m < plan.size(); ++m)
    for (std::size_t n = 0; n < plan.size(); ++n) {
      if (m == n) continue;
      const auto& r = plan.route(m, n);
      Json pair{{"src", parts[m]}, {"dst", parts[n]}, {"hops", r.hops}, {"e2e_success", r.e2e_success}};
      if (!r.reachable) pair["reachable"] = false;
      pairs.push_back(std::move(pair));
    }
  return Json{{"elements", plan.elements()}, {"pairs", std::move(pairs)}};
}

routing::BandwidthBudget budget_from_json(const Json& j, const net::NetworkGraph& graph) {
  auto b = routing::BandwidthBudget::unlimited_for(graph);
  const auto& list = j.at("max_transmissions");
  require(list.is_array() && list.size() <= graph.num_nodes(), "InvalidBudget",
          "max_transmissions must list at most one entry per node");
  for (std::size_t i = 0; i < list.size(); ++i) {
    if (list[i].is_null()) continue;
    const auto v = list[i].get<long long>();
    if (v >= 0) b.max_transmissions[i] = static_cast<int>(std::min<long long>(v, routing::BandwidthBudget::unlimited));
  }
  return b;
}

// -- learning ------------------------------------------------------------------

namespace {

Json matrix_to_json(const MatrixXd& a) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index k = 0; k < a.cols(); ++k) row.push_back(a(i, k));
    rows.push_back(std::move(row));
  }
  return rows;
}

MatrixXd matrix_from_json(const Json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
  MatrixXd a(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    require(static_cast<Eigen::Index>(j[i].size()) == cols, "InvalidTask", "ragged matrix");
    for (Eigen::Index k = 0; k < cols; ++k) a(i, k) = j[i][k].get<double>();
  }
  return a;
}

Json vector_to_json(const VectorXd& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

VectorXd vector_from_json(const Json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

Json task_to_json(const learning::Task& task) {
  Json clients = Json::array();
  Json out{{"kind", task.kind()}, {"data_sizes", task.data_sizes()}};
  std::visit(
      [&](const auto& t) {
        using T = std::decay_t<decltype(t)>;
        for (std::size_t n = 0; n < task.num_clients(); ++n) {
          if constexpr (std::is_same_v<T, learning::QuadraticTask>) {
            clients.push_back({{"A", matrix_to_json(t.A[n])}, {"b", vector_to_json(t.b[n])}, {"offset", t.offset[n]}});
          } else {
            clients.push_back({{"features", matrix_to_json(t.features[n])}, {"labels", vector_to_json(t.labels[n])}});
          }
        }
        if constexpr (!std::is_same_v<T, learning::QuadraticTask>) out["l2"] = t.l2;
        if constexpr (std::is_same_v<T, learning::MlpTask>) out["hidden"] = t.hidden;
      },
      task.variant());
  out["clients"] = std::move(clients);
  return out;
}

learning::Task task_from_json(const Json& j) {
  try {
    const std::string kind = j.at("kind").get<std::string>();
    const auto sizes = j.at("data_sizes").get<std::vector<double>>();
    const auto& clients = j.at("clients");
    if (kind == "quadratic") {
      learning::QuadraticTask t;
      for (const auto& c : clients) {
        t.A.push_back(matrix_from_json(c.at("A")));
        t.b.push_back(vector_from_json(c.at("b")));
        t.offset.push_back(c.at("offset").get<double>());
      }
      return learning::Task(std::move(t), sizes);
    }
    std::vector<MatrixXd> features;
    std::vector<VectorXd> labels;
    for (const auto& c : clients) {
      features.push_back(matrix_from_json(c.at("features")));
      labels.push_back(vector_from_json(c.at("labels")));
    }
    if (kind == "logistic")
      return learning::Task(learning::LogisticTask{std::move(features), std::move(labels), j.at("l2").get<double>()}, sizes);
    if (kind == "mlp")
      return learning::Task(learning::MlpTask{std::move(features), std::move(labels), j.at("hidden").get<int>(),
                                              j.at("l2").get<double>()},
                            sizes);
    throw Error("InvalidTask", "unknown task kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw Error("InvalidTask", std::string("malformed task document: ") + e.what());
  }
}

namespace {

void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

std::uint64_t get_le(std::string_view in, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

}  // namespace

std::string encode_checkpoint(const learning::ModelVector& model) {
  std::string out = "RAFL";
  put_le(out, static_cast<std::uint64_t>(model.dim()), 8);
  put_le(out, static_cast<std::uint64_t>(model.segment_size()), 4);
  for (Eigen::Index i = 0; i < model.dim(); ++i) put_le(out, std::bit_cast<std::uint64_t>(model.params()(i)), 8);
  return out;
}

learning::ModelVector decode_checkpoint(std::string_view bytes) {
  require(bytes.size() >= 16 && bytes.substr(0, 4) == "RAFL", "CorruptCheckpoint", "bad checkpoint header");
  const std::uint64_t dim = get_le(bytes, 4, 8);
  const auto k = static_cast<std::uint32_t>(get_le(bytes, 12, 4));
  require(k >= 1, "CorruptCheckpoint", "segment size must be >= 1");
  require(dim <= (bytes.size() - 16) / 8 && bytes.size() == 16 + 8 * dim, "CorruptCheckpoint",
          "checkpoint length does not match its header");
  VectorXd params(static_cast<Eigen::Index>(dim));
  for (std::uint64_t i = 0; i < dim; ++i)
    params(static_cast<Eigen::Index>(i)) = std::bit_cast<double>(get_le(bytes, 16 + 8 * i, 8));
  return learning::ModelVector(std::move(params), static_cast<int>(k));
}

void write_checkpoint(const std::filesystem::path& path, const learning::ModelVector& model) {
  write_text(path, encode_checkpoint(model));
}

learning::ModelVector read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_text(path));
}

// -- analysis ------------------------------------------------------------------

analysis::BoundInputs bound_inputs_from_json(const Json& j) {
  try {
    analysis::BoundInputs in;
    in.L = j.at("L").get<double>();
    in.mu = j.at("mu").get<double>();
    in.eta = j.at("eta").get<double>();
    in.I = j.at("I").get<int>();
    in.p = j.at("p").get<std::vector<double>>();
    in.rho = matrix_from_json(j.at("rho"));
    in.sigma_bar_sq = j.value("sigma_bar_sq", 0.0);
    in.tau = j.contains("tau") ? j.at("tau").get<double>() : analysis::calibrate_tau(in.rho);
    return in;
  } catch (const nlohmann::json::exception& e) {
    throw Error("InvalidBoundInputs", std::string("malformed bound inputs: ") + e.what());
  }
}

Json bound_inputs_to_json(const analysis::BoundInputs& in) {
  return Json{{"L", in.L},   {"mu", in.mu}, {"eta", in.eta}, {"I", in.I}, {"tau", in.tau},
              {"p", in.p},   {"rho", matrix_to_json(in.rho)}, {"sigma_bar_sq", in.sigma_bar_sq}};
}

namespace {

Json finite_or_null(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

}  // namespace

Json bound_report_to_json(const analysis::BoundReport& r) {
  Json out{{"zeta1", finite_or_null(r.zeta.z1)},
           {"zeta2", finite_or_null(r.zeta.z2)},
           {"zeta3", finite_or_null(r.zeta.z3)},
           {"zeta4", finite_or_null(r.zeta.z4)},
           {"bias_factor", finite_or_null(r.bias_factor)},
           {"routing_objective", r.objective},
           {"lemma3_norm_bound", r.lemma3.norm_bound},
           {"lemma3_entry_bounds", matrix_to_json(r.lemma3.entry)},
           {"lemma3_exact", r.lemma3.exact}};
  if (!r.lemma3.exact) {
    out["lemma3_entry_std_error"] = matrix_to_json(r.lemma3.entry_std_error);
    out["warning"] = "SizeWarning: entry bounds estimated by sampling";
  }
  out["theorem1"] = Json{{"delta_coefficient", finite_or_null(r.zeta.z1)},
                         {"constant", finite_or_null(r.zeta.z2)},
                         {"sum_w2_coefficient", finite_or_null(r.objective > 0.0 ? r.bias_factor * r.objective : 0.0)}};
  if (r.theorem2) {
    out["theorem2"] = r.theorem2->divergent ? Json{{"divergent", true}}
                                             : Json{{"divergent", false}, {"asymptote", finite_or_null(r.theorem2->value)}};
  }
  return out;
}

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

std::string histogram_csv(const analysis::CoefficientDistribution& d) {
  std::ostringstream out;
  out << "pair,bin_lo,bin_hi,count\n";
  for (const auto& s : d.pairs)
    for (int b = 0; b < d.bins; ++b)
      out << s.src << "->" << s.dst << ',' << format_double(static_cast<double>(b) / d.bins) << ','
          << format_double(static_cast<double>(b + 1) / d.bins) << ',' << s.histogram[b] << '\n';
  return out.str();
}

}  // namespace radfl::io
