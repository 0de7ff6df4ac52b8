#pragma once

// File formats: key = value configs with [sections], membership CSV,
// hypergraph TSV (1-based triples), index lists and rank-test diagnostics.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "mmsf/errors.hpp"
#include "mmsf/linalg.hpp"
#include "mmsf/model.hpp"
#include "mmsf/pipeline.hpp"
#include "mmsf/pure_detect.hpp"

namespace mmsf {

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <class T>
std::optional<T> parse_number(std::string_view s) {
  T v{};
  const char* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return v;
}

/// Shortest round-trip decimal form; identical bytes for identical values.
inline std::string format_double(double x) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  if (ec != std::errc()) return "nan";
  return std::string(buf, ptr);
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open '" + path + "' for reading");
  return in;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot open '" + path + "' for writing");
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Config

class Config {
 public:
  static Config parse(std::istream& in) {
    Config cfg;
    std::string line;
    std::string section;
    long lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      const std::string body = detail::trim(hash == std::string::npos ? line : line.substr(0, hash));
      if (body.empty()) continue;
      if (body.front() == '[') {
        if (body.back() != ']' || body.size() < 3) throw ParseError("malformed section header '" + body + "'", lineno);
        section = detail::trim(std::string_view(body).substr(1, body.size() - 2));
        continue;
      }
      const auto eq = body.find('=');
      if (eq == std::string::npos) throw ParseError("expected 'key = value', got '" + body + "'", lineno);
      const std::string key = detail::trim(std::string_view(body).substr(0, eq));
      const std::string value = detail::trim(std::string_view(body).substr(eq + 1));
      if (key.empty()) throw ParseError("empty key", lineno);
      auto& sec = cfg.values_[section];
      if (sec.count(key)) throw ParseError("duplicate key '" + key + "'", lineno);
      sec[key] = value;
    }
    return cfg;
  }

  static Config parse_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  static Config load(const std::string& path) {
    auto in = detail::open_in(path);
    return parse(in);
  }

  bool has(const std::string& section, const std::string& key) const {
    const auto it = values_.find(section);
    return it != values_.end() && it->second.count(key) > 0;
  }

  std::optional<std::string> raw(const std::string& section, const std::string& key) const {
    const auto it = values_.find(section);
    if (it == values_.end()) return std::nullopt;
    const auto jt = it->second.find(key);
    if (jt == it->second.end()) return std::nullopt;
    return jt->second;
  }

  std::string get_string(const std::string& section, const std::string& key, const std::string& fallback) const {
    return raw(section, key).value_or(fallback);
  }

  std::string require_string(const std::string& section, const std::string& key) const {
    auto v = raw(section, key);
    if (!v) throw ArgumentError("config: missing [" + section + "] " + key);
    return *v;
  }

  template <class T>
  std::optional<T> get(const std::string& section, const std::string& key) const {
    auto v = raw(section, key);
    if (!v) return std::nullopt;
    return convert<T>(section, key, *v);
  }

  template <class T>
  T get_or(const std::string& section, const std::string& key, T fallback) const {
    return get<T>(section, key).value_or(fallback);
  }

  template <class T>
  T require(const std::string& section, const std::string& key) const {
    auto v = get<T>(section, key);
    if (!v) throw ArgumentError("config: missing [" + section + "] " + key);
    return *v;
  }

  template <class T>
  std::optional<std::vector<T>> get_list(const std::string& section, const std::string& key) const {
    auto v = raw(section, key);
    if (!v) return std::nullopt;
    std::vector<T> out;
    for (const auto& item : detail::split(*v, ',')) out.push_back(convert<T>(section, key, item));
    return out;
  }

  void set(const std::string& section, const std::string& key, const std::string& value) {
    values_[section][key] = value;
  }

  /// Canonical text form (sections and keys sorted); parses back to an equal config.
  std::string dump() const {
    std::ostringstream out;
    bool first = true;
    for (const auto& [section, kv] : values_) {
      if (!first) out << '\n';
      first = false;
      if (!section.empty()) out << '[' << section << "]\n";
      for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
    }
    return out.str();
  }

  bool operator==(const Config&) const = default;

 private:
  template <class T>
  static T convert(const std::string& section, const std::string& key, const std::string& v) {
    if constexpr (std::is_same_v<T, std::string>) {
      return v;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (v == "true" || v == "1" || v == "yes") return true;
      if (v == "false" || v == "0" || v == "no") return false;
      throw ArgumentError("config: [" + section + "] " + key + ": expected a boolean, got '" + v + "'");
    } else {
      auto parsed = detail::parse_number<T>(v);
      if (!parsed) throw ArgumentError("config: [" + section + "] " + key + ": not a valid number '" + v + "'");
      return *parsed;
    }
  }

  std::map<std::string, std::map<std::string, std::string>> values_;
};

/// [model]: k, n (or n_u, n_t, n_r), p, q, rho, alpha (scalar or list), seed.
inline ModelParams model_params_from_config(const Config& cfg) {
  ModelParams mp;
  mp.k = cfg.require<int>("model", "k");
  const auto n = cfg.get<long long>("model", "n");
  auto count = [&](const char* key) -> Index {
    if (auto v = cfg.get<long long>("model", key)) return static_cast<Index>(*v);
    if (n) return static_cast<Index>(*n);
    throw ArgumentError(std::string("config: missing [model] ") + key + " (or n)");
  };
  mp.n_u = count("n_u");
  mp.n_t = count("n_t");
  mp.n_r = count("n_r");
  mp.p = cfg.require<double>("model", "p");
  mp.q = cfg.require<double>("model", "q");
  mp.rho = cfg.require<double>("model", "rho");
  auto alpha = cfg.get_list<double>("model", "alpha").value_or(std::vector<double>{1.0});
  if (alpha.size() == 1 && mp.k > 1) alpha.assign(static_cast<std::size_t>(mp.k), alpha[0]);
  mp.alpha = alpha;
  mp.seed = cfg.get_or<std::uint64_t>("model", "seed", 0);
  mp.validate();
  return mp;
}

/// [learn] plus k, seed, p and q from [model].
inline LearnConfig learn_config_from_config(const Config& cfg) {
  LearnConfig lc;
  lc.k = cfg.require<int>("model", "k");
  lc.seed = cfg.get_or<std::uint64_t>("learn", "seed", cfg.get_or<std::uint64_t>("model", "seed", 0));
  lc.mode = parse_threshold_mode(cfg.get_string("learn", "threshold_mode", "heuristic"));
  lc.tau1 = cfg.get_or<double>("learn", "tau1", 0.0);
  lc.tau2 = cfg.get_or<double>("learn", "tau2", 0.0);
  lc.eps_r = cfg.get<double>("learn", "eps_r");
  const std::string src = cfg.get_string("learn", "eps_source", "realized");
  if (src == "realized") lc.eps_source = PerturbationSource::realized;
  else if (src == "subspace_bound") lc.eps_source = PerturbationSource::subspace_bound;
  else throw ArgumentError("config: [learn] eps_source must be realized or subspace_bound");
  lc.power.inits = cfg.get_or<int>("learn", "power_inits", 0);
  lc.power.iterations = cfg.get_or<int>("learn", "power_iterations", 50);
  lc.power.xi = cfg.get_or<double>("learn", "xi", 1e-6);
  lc.membership_tau = cfg.get<double>("learn", "membership_tau");
  lc.p = cfg.get<double>("model", "p");
  lc.q = cfg.get<double>("model", "q");
  lc.recover_users_tags = cfg.get_or<bool>("learn", "recover_users_tags", true);
  if (lc.mode == ThresholdMode::manual) RankTestConfig{lc.tau1, lc.tau2, lc.mode}.validate();
  if (lc.power.iterations < 1) throw ArgumentError("config: [learn] power_iterations must be at least 1");
  return lc;
}

// ---------------------------------------------------------------------------
// Membership CSV: header community_1..community_k, one row per node.

inline void write_memberships(std::ostream& out, const Matrix& pi) {
  for (Index i = 0; i < pi.rows(); ++i) out << (i ? "," : "") << "community_" << (i + 1);
  out << '\n';
  for (Index j = 0; j < pi.cols(); ++j) {
    for (Index i = 0; i < pi.rows(); ++i) out << (i ? "," : "") << detail::format_double(pi(i, j));
    out << '\n';
  }
}

inline void write_memberships(const std::string& path, const Matrix& pi) {
  auto out = detail::open_out(path);
  write_memberships(out, pi);
}

inline Matrix read_memberships(std::istream& in) {
  std::string line;
  long lineno = 0;
  if (!std::getline(in, line)) throw ParseError("empty membership file", 1);
  ++lineno;
  const auto header = detail::split(detail::trim(line), ',');
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] != "community_" + std::to_string(i + 1)) {
      throw ParseError("membership header must be community_1..community_k", lineno);
    }
  }
  const Index k = static_cast<Index>(header.size());
  std::vector<double> values;
  Index rows = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const auto cells = detail::split(body, ',');
    if (static_cast<Index>(cells.size()) != k) {
      throw ParseError("expected " + std::to_string(k) + " values, got " + std::to_string(cells.size()), lineno);
    }
    for (const auto& c : cells) {
      auto v = detail::parse_number<double>(c);
      if (!v) throw ParseError("not a number: '" + c + "'", lineno);
      values.push_back(*v);
    }
    ++rows;
  }
  Matrix pi(k, rows);
  for (Index j = 0; j < rows; ++j) {
    for (Index i = 0; i < k; ++i) pi(i, j) = values[static_cast<std::size_t>(j * k + i)];
  }
  return pi;
}

inline Matrix read_memberships(const std::string& path) {
  auto in = detail::open_in(path);
  return read_memberships(in);
}

// ---------------------------------------------------------------------------
// Hypergraph TSV: "#dims<TAB>n_u<TAB>n_t<TAB>n_r", then 1-based "u<TAB>t<TAB>r".

inline void write_hypergraph(std::ostream& out, const HypergraphSample& s) {
  const Dims& d = s.dims();
  out << "#dims\t" << d.n_u << '\t' << d.n_t << '\t' << d.n_r << '\n';
  for (const Triple& e : s.triples()) out << (e.u + 1) << '\t' << (e.t + 1) << '\t' << (e.r + 1) << '\n';
}

inline void write_hypergraph(const std::string& path, const HypergraphSample& s) {
  auto out = detail::open_out(path);
  write_hypergraph(out, s);
}

struct IngestReport {
  HypergraphSample sample;
  std::size_t lines_read = 0;
  std::size_t duplicates_removed = 0;
};

/// Parses a triple list. Dims come from the header line unless given
/// explicitly; duplicates are dropped and counted.
inline IngestReport read_hypergraph(std::istream& in, std::optional<Dims> dims = std::nullopt) {
  std::string line;
  long lineno = 0;
  std::vector<Triple> triples;
  IngestReport rep;
  bool seen_data = false;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    if (body.front() == '#') {
      if (body.rfind("#dims", 0) == 0) {
        if (seen_data) throw ParseError("dims header after data", lineno);
        std::istringstream hs(body.substr(5));
        long long a = 0, b = 0, c = 0;
        if (!(hs >> a >> b >> c) || a < 1 || b < 1 || c < 1) throw ParseError("malformed dims header", lineno);
        const Dims header{static_cast<Index>(a), static_cast<Index>(b), static_cast<Index>(c)};
        if (dims && !(*dims == header)) throw ParseError("dims header disagrees with the given dims", lineno);
        dims = header;
      }
      continue;
    }
    if (!dims) throw ParseError("missing #dims header and no dims given", lineno);
    seen_data = true;
    const auto fields = detail::split(body, '\t');
    std::vector<std::string> parts;
    if (fields.size() == 3) {
      parts = fields;
    } else {
      std::istringstream ws(body);
      std::string w;
      while (ws >> w) parts.push_back(w);
    }
    if (parts.size() != 3) throw ParseError("expected three indices u, t, r", lineno);
    long long idx[3];
    const Index limit[3] = {dims->n_u, dims->n_t, dims->n_r};
    const char* names[3] = {"user", "tag", "resource"};
    for (int i = 0; i < 3; ++i) {
      auto v = detail::parse_number<long long>(parts[static_cast<std::size_t>(i)]);
      if (!v) throw ParseError("not an integer: '" + parts[static_cast<std::size_t>(i)] + "'", lineno);
      if (*v < 1 || *v > limit[i]) {
        throw ParseError(std::string(names[i]) + " index " + std::to_string(*v) + " out of range 1.." +
                             std::to_string(limit[i]),
                         lineno);
      }
      idx[i] = *v - 1;
    }
    triples.push_back({static_cast<std::uint32_t>(idx[0]), static_cast<std::uint32_t>(idx[1]),
                       static_cast<std::uint32_t>(idx[2])});
    ++rep.lines_read;
  }
  if (!dims) throw ParseError("missing #dims header and no dims given", lineno);
  std::sort(triples.begin(), triples.end(), canonical_less);
  const auto last = std::unique(triples.begin(), triples.end());
  rep.duplicates_removed = static_cast<std::size_t>(triples.end() - last);
  triples.erase(last, triples.end());
  rep.sample = HypergraphSample(*dims, std::move(triples));
  return rep;
}

inline IngestReport read_hypergraph(const std::string& path, std::optional<Dims> dims = std::nullopt) {
  auto in = detail::open_in(path);
  return read_hypergraph(in, dims);
}

// ---------------------------------------------------------------------------
// Index lists (one 1-based index per line) and rank-test diagnostics.

inline void write_index_list(std::ostream& out, const std::vector<Index>& idx) {
  for (Index i : idx) out << (i + 1) << '\n';
}

inline void write_index_list(const std::string& path, const std::vector<Index>& idx) {
  auto out = detail::open_out(path);
  write_index_list(out, idx);
}

inline std::vector<Index> read_index_list(std::istream& in, Index limit) {
  std::vector<Index> out;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    auto v = detail::parse_number<long long>(body);
    if (!v) throw ParseError("not an integer: '" + body + "'", lineno);
    if (*v < 1 || *v > limit) throw ParseError("index " + body + " out of range 1.." + std::to_string(limit), lineno);
    out.push_back(static_cast<Index>(*v - 1));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline std::vector<Index> read_index_list(const std::string& path, Index limit) {
  auto in = detail::open_in(path);
  return read_index_list(in, limit);
}

inline void write_diagnostics(std::ostream& out, const RankProfiles& prof, const RankTestConfig& cfg) {
  out << "node,sigma1,sigma2,verdict\n";
  for (Index x = 0; x < prof.sigma1.size(); ++x) {
    out << (x + 1) << ',' << detail::format_double(prof.sigma1[x]) << ',' << detail::format_double(prof.sigma2[x])
        << ',' << (passes(cfg, prof.sigma1[x], prof.sigma2[x]) ? "pure" : "mixed") << '\n';
  }
}

inline void write_diagnostics(const std::string& path, const RankProfiles& prof, const RankTestConfig& cfg) {
  auto out = detail::open_out(path);
  write_diagnostics(out, prof, cfg);
}

}  // namespace mmsf
