#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace acopf {

enum class BusType { slack, pv, pq };

struct Bus {
  int id = 0;  // internal 0-based index
  int ext_id = 0;  // original number in the case file
  BusType bus_type = BusType::pq;
  double v_min = 0.94, v_max = 1.06;  // p.u.
  double base_kv = 0.0;
  double shunt_g = 0.0, shunt_b = 0.0;  // p.u. at V = 1
  double default_pd = 0.0, default_qd = 0.0;  // MW / MVAr

  bool operator==(const Bus&) const = default;
};

struct Branch {
  int from_bus = 0, to_bus = 0;  // internal indices
  double r = 0.0, x = 0.0;  // p.u. series impedance
  double b_charging = 0.0;  // p.u. total line charging
  double tap_ratio = 1.0;
  double s_max = 0.0;  // MVA; 0 = unlimited

  bool operator==(const Branch&) const = default;
};

struct Generator {
  int bus = 0;  // internal index
  double p_min = 0.0, p_max = 0.0;  // MW
  double q_min = 0.0, q_max = 0.0;  // MVAr
  double cost_c2 = 0.0, cost_c1 = 0.0, cost_c0 = 0.0;  // $/MW^2, $/MW, $

  bool operator==(const Generator&) const = default;
};

struct NetworkCase {
  std::string name;
  double base_mva = 100.0;
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<Generator> generators;

  bool operator==(const NetworkCase&) const = default;

  int n_bus() const { return static_cast<int>(buses.size()); }
  int n_branch() const { return static_cast<int>(branches.size()); }
  int n_gen() const { return static_cast<int>(generators.size()); }

  int slack_bus() const {
    for (const auto& b : buses)
      if (b.bus_type == BusType::slack) return b.id;
    return -1;
  }
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

class ParseError : public std::runtime_error {
 public:
  ParseError(int line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

inline double to_per_unit(const NetworkCase& c, double value_mw) {
  if (c.base_mva <= 0.0) throw std::invalid_argument("base_mva must be > 0");
  return value_mw / c.base_mva;
}

inline double from_per_unit(const NetworkCase& c, double value_pu) {
  if (c.base_mva <= 0.0) throw std::invalid_argument("base_mva must be > 0");
  return value_pu * c.base_mva;
}

namespace detail {

struct Matrix {
  std::vector<std::vector<double>> rows;
  std::vector<int> row_lines;  // source line of each row
};

// Parses the MATPOWER-subset grammar documented in docs/case_format.md.
class CaseReader {
 public:
  explicit CaseReader(const std::string& text) : text_(text) {}

  std::string name;
  double base_mva = 100.0;
  bool base_seen = false;
  std::map<std::string, Matrix> matrices;
  std::vector<std::string> warnings;

  void run() {
    std::istringstream in(text_);
    std::string raw;
    int lineno = 0;
    std::string pending_matrix;
    while (std::getline(in, raw)) {
      ++lineno;
      std::string line = strip_comment(raw);
      trim(line);
      if (line.empty()) continue;

      if (!pending_matrix.empty()) {
        consume_matrix_line(pending_matrix, line, lineno);
        continue;
      }

      if (line.rfind("function", 0) == 0) {
        auto eq = line.find('=');
        if (eq != std::string::npos) {
          name = line.substr(eq + 1);
          trim(name);
        }
        continue;
      }
      if (line.rfind("mpc.version", 0) == 0) continue;
      if (line.rfind("mpc.baseMVA", 0) == 0) {
        auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError(lineno, "malformed baseMVA");
        std::string v = line.substr(eq + 1);
        strip_semicolon(v);
        base_mva = parse_number(v, lineno);
        base_seen = true;
        continue;
      }
      if (line.rfind("mpc.", 0) == 0) {
        auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError(lineno, "malformed assignment");
        std::string key = line.substr(4, eq - 4);
        trim(key);
        std::string rest = line.substr(eq + 1);
        trim(rest);
        if (rest.empty() || rest[0] != '[')
          throw ParseError(lineno, "expected '[' to open matrix " + key);
        matrices[key];  // create (possibly empty) matrix
        rest = rest.substr(1);
        trim(rest);
        pending_matrix = key;
        if (!rest.empty()) consume_matrix_line(pending_matrix, rest, lineno);
        continue;
      }
      throw ParseError(lineno, "unrecognized statement: " + line);
    }
    if (!pending_matrix.empty())
      throw ParseError(lineno, "unterminated matrix " + pending_matrix);
  }

 private:
  void consume_matrix_line(std::string& pending, std::string line, int lineno) {
    bool closed = false;
    auto close = line.find(']');
    if (close != std::string::npos) {
      line = line.substr(0, close);
      closed = true;
    }
    trim(line);
    if (!line.empty()) {
      // rows may be separated by ';' within a line
      std::istringstream rows(line);
      std::string row;
      while (std::getline(rows, row, ';')) {
        trim(row);
        if (row.empty()) continue;
        Matrix& m = matrices[pending];
        m.rows.emplace_back();
        m.row_lines.push_back(lineno);
        std::istringstream vals(row);
        std::string tok;
        while (vals >> tok) m.rows.back().push_back(parse_number(tok, lineno));
      }
    }
    if (closed) pending.clear();
  }

  static std::string strip_comment(const std::string& s) {
    auto pos = s.find('%');
    return pos == std::string::npos ? s : s.substr(0, pos);
  }

  static void trim(std::string& s) {
    auto notspace = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), notspace));
    s.erase(std::find_if(s.rbegin(), s.rend(), notspace).base(), s.end());
  }

  static void strip_semicolon(std::string& s) {
    trim(s);
    if (!s.empty() && s.back() == ';') s.pop_back();
    trim(s);
  }

  static double parse_number(const std::string& tok, int lineno) {
    std::size_t used = 0;
    double v;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      throw ParseError(lineno, "not a number: " + tok);
    }
    if (used != tok.size()) throw ParseError(lineno, "trailing junk in: " + tok);
    if (!std::isfinite(v)) throw ParseError(lineno, "non-finite value: " + tok);
    return v;
  }

  const std::string& text_;
};

inline double col(const std::vector<double>& row, std::size_t i, int lineno,
                  const char* table) {
  if (i >= row.size())
    throw ParseError(lineno, std::string(table) + " row has too few columns");
  return row[i];
}

}  // namespace detail

// Parses a MATPOWER-subset case text into internal numbering. Out-of-service
// branches and generators (status 0) are dropped here; downstream modules
// never see a status flag.
inline NetworkCase parse_case(const std::string& text,
                              std::vector<std::string>* warnings = nullptr) {
  detail::CaseReader rd(text);
  rd.run();

  NetworkCase c;
  c.name = rd.name.empty() ? "unnamed" : rd.name;
  c.base_mva = rd.base_seen ? rd.base_mva : 100.0;
  if (c.base_mva <= 0.0) throw ParseError(0, "baseMVA must be positive");

  auto it = rd.matrices.find("bus");
  if (it == rd.matrices.end() || it->second.rows.empty())
    throw ParseError(0, "no buses");
  const detail::Matrix& busm = it->second;

  std::map<int, int> ext_to_int;
  int n_slack = 0;
  for (std::size_t k = 0; k < busm.rows.size(); ++k) {
    const auto& row = busm.rows[k];
    const int ln = busm.row_lines[k];
    Bus b;
    b.ext_id = static_cast<int>(detail::col(row, 0, ln, "bus"));
    const int type = static_cast<int>(detail::col(row, 1, ln, "bus"));
    switch (type) {
      case 1: b.bus_type = BusType::pq; break;
      case 2: b.bus_type = BusType::pv; break;
      case 3: b.bus_type = BusType::slack; ++n_slack; break;
      default: throw ParseError(ln, "unknown bus type " + std::to_string(type));
    }
    b.default_pd = detail::col(row, 2, ln, "bus");
    b.default_qd = detail::col(row, 3, ln, "bus");
    b.shunt_g = detail::col(row, 4, ln, "bus") / c.base_mva;
    b.shunt_b = detail::col(row, 5, ln, "bus") / c.base_mva;
    b.base_kv = detail::col(row, 9, ln, "bus");
    b.v_max = detail::col(row, 11, ln, "bus");
    b.v_min = detail::col(row, 12, ln, "bus");
    if (row.size() > 13 && warnings)
      warnings->push_back("bus row " + std::to_string(k + 1) +
                          ": extra columns ignored");
    b.id = static_cast<int>(c.buses.size());
    if (!ext_to_int.emplace(b.ext_id, b.id).second)
      throw ParseError(ln, "duplicate bus id " + std::to_string(b.ext_id));
    c.buses.push_back(b);
  }
  if (n_slack == 0) throw ParseError(0, "no slack bus");
  if (n_slack > 1) throw ParseError(0, "more than one slack bus");

  auto lookup = [&](double ext, int ln) {
    auto f = ext_to_int.find(static_cast<int>(ext));
    if (f == ext_to_int.end())
      throw ParseError(ln, "reference to missing bus " +
                               std::to_string(static_cast<int>(ext)));
    return f->second;
  };

  if (auto g = rd.matrices.find("gen"); g != rd.matrices.end()) {
    for (std::size_t k = 0; k < g->second.rows.size(); ++k) {
      const auto& row = g->second.rows[k];
      const int ln = g->second.row_lines[k];
      const double status = detail::col(row, 7, ln, "gen");
      if (status == 0.0) continue;
      Generator gen;
      gen.bus = lookup(detail::col(row, 0, ln, "gen"), ln);
      gen.q_max = detail::col(row, 3, ln, "gen");
      gen.q_min = detail::col(row, 4, ln, "gen");
      gen.p_max = detail::col(row, 8, ln, "gen");
      gen.p_min = detail::col(row, 9, ln, "gen");
      c.generators.push_back(gen);
    }
  }

  if (auto br = rd.matrices.find("branch"); br != rd.matrices.end()) {
    for (std::size_t k = 0; k < br->second.rows.size(); ++k) {
      const auto& row = br->second.rows[k];
      const int ln = br->second.row_lines[k];
      const double status = detail::col(row, 10, ln, "branch");
      if (status == 0.0) continue;
      Branch b;
      b.from_bus = lookup(detail::col(row, 0, ln, "branch"), ln);
      b.to_bus = lookup(detail::col(row, 1, ln, "branch"), ln);
      b.r = detail::col(row, 2, ln, "branch");
      b.x = detail::col(row, 3, ln, "branch");
      b.b_charging = detail::col(row, 4, ln, "branch");
      b.s_max = detail::col(row, 5, ln, "branch");
      const double tap = detail::col(row, 8, ln, "branch");
      b.tap_ratio = tap == 0.0 ? 1.0 : tap;
      const double shift = detail::col(row, 9, ln, "branch");
      if (shift != 0.0) throw ParseError(ln, "phase-shift angle unsupported");
      if (b.r == 0.0 && b.x == 0.0)
        throw ParseError(ln, "branch with r = x = 0");
      if (b.from_bus == b.to_bus) throw ParseError(ln, "branch endpoints equal");
      if (b.s_max < 0.0) throw ParseError(ln, "negative branch limit");
      c.branches.push_back(b);
    }
  }

  // gencost rows pair with in-service gen rows in order
  if (auto gc = rd.matrices.find("gencost"); gc != rd.matrices.end()) {
    std::size_t gi = 0;
    const auto& genm = rd.matrices["gen"];
    for (std::size_t k = 0; k < gc->second.rows.size(); ++k) {
      const auto& row = gc->second.rows[k];
      const int ln = gc->second.row_lines[k];
      if (k < genm.rows.size() && detail::col(genm.rows[k], 7, ln, "gen") == 0.0)
        continue;  // cost of an out-of-service generator
      if (gi >= c.generators.size())
        throw ParseError(ln, "more gencost rows than generators");
      const int model = static_cast<int>(detail::col(row, 0, ln, "gencost"));
      if (model != 2) throw ParseError(ln, "only polynomial costs supported");
      const int ncoef = static_cast<int>(detail::col(row, 3, ln, "gencost"));
      if (ncoef < 1 || ncoef > 3)
        throw ParseError(ln, "polynomial cost degree must be <= 2");
      double coef[3] = {0.0, 0.0, 0.0};  // c2, c1, c0
      for (int j = 0; j < ncoef; ++j)
        coef[3 - ncoef + j] = detail::col(row, 4 + j, ln, "gencost");
      c.generators[gi].cost_c2 = coef[0];
      c.generators[gi].cost_c1 = coef[1];
      c.generators[gi].cost_c0 = coef[2];
      ++gi;
    }
  }

  if (warnings && !rd.warnings.empty())
    warnings->insert(warnings->end(), rd.warnings.begin(), rd.warnings.end());
  return c;
}

inline ValidationReport validate_case(const NetworkCase& c) {
  ValidationReport rep;
  auto add = [&](const std::string& s) { rep.violations.push_back(s); };

  int n_slack = 0;
  for (const auto& b : c.buses) {
    if (b.bus_type == BusType::slack) ++n_slack;
    if (!(b.v_min > 0.0))
      add("bus " + std::to_string(b.ext_id) + ": v_min must be positive");
    if (b.v_min > b.v_max)
      add("bus " + std::to_string(b.ext_id) + ": v_min > v_max");
  }
  if (n_slack != 1) add("case must have exactly one slack bus");

  for (std::size_t i = 0; i < c.branches.size(); ++i) {
    const auto& br = c.branches[i];
    const std::string tag = "branch " + std::to_string(i);
    if (br.from_bus < 0 || br.from_bus >= c.n_bus() || br.to_bus < 0 ||
        br.to_bus >= c.n_bus())
      add(tag + ": endpoint out of range");
    if (br.r == 0.0 && br.x == 0.0) add(tag + ": r = x = 0");
    if (br.s_max < 0.0) add(tag + ": negative s_max");
  }
  for (std::size_t i = 0; i < c.generators.size(); ++i) {
    const auto& g = c.generators[i];
    const std::string tag = "generator " + std::to_string(i);
    if (g.bus < 0 || g.bus >= c.n_bus()) add(tag + ": bus out of range");
    if (g.p_min > g.p_max) add(tag + ": p_min > p_max");
    if (g.q_min > g.q_max) add(tag + ": q_min > q_max");
    if (g.cost_c2 < 0.0) add(tag + ": negative quadratic cost coefficient");
  }

  // connectivity over in-service branches
  if (c.n_bus() > 0) {
    std::vector<std::vector<int>> adj(c.n_bus());
    for (const auto& br : c.branches) {
      if (br.from_bus >= 0 && br.from_bus < c.n_bus() && br.to_bus >= 0 &&
          br.to_bus < c.n_bus()) {
        adj[br.from_bus].push_back(br.to_bus);
        adj[br.to_bus].push_back(br.from_bus);
      }
    }
    std::vector<char> seen(c.n_bus(), 0);
    std::vector<int> stack = {0};
    seen[0] = 1;
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (int v : adj[u])
        if (!seen[v]) {
          seen[v] = 1;
          stack.push_back(v);
        }
    }
    for (const auto& b : c.buses)
      if (!seen[b.id])
        add("bus " + std::to_string(b.ext_id) + ": disconnected from bus " +
            std::to_string(c.buses[0].ext_id));
  }
  return rep;
}

// Canonical serialization; parse_case(serialize_case(c)) == c.
inline std::string serialize_case(const NetworkCase& c) {
  std::ostringstream out;
  out.precision(17);
  out << "function mpc = " << c.name << "\n";
  out << "mpc.version = '2';\n";
  out << "mpc.baseMVA = " << c.base_mva << ";\n";
  out << "mpc.bus = [\n";
  for (const auto& b : c.buses) {
    int type = b.bus_type == BusType::pq ? 1 : (b.bus_type == BusType::pv ? 2 : 3);
    out << b.ext_id << " " << type << " " << b.default_pd << " " << b.default_qd
        << " " << b.shunt_g * c.base_mva << " " << b.shunt_b * c.base_mva
        << " 1 1 0 " << b.base_kv << " 1 " << b.v_max << " " << b.v_min
        << ";\n";
  }
  out << "];\n";
  out << "mpc.gen = [\n";
  for (const auto& g : c.generators)
    out << c.buses[g.bus].ext_id << " 0 0 " << g.q_max << " " << g.q_min
        << " 1 " << c.base_mva << " 1 " << g.p_max << " " << g.p_min << ";\n";
  out << "];\n";
  out << "mpc.branch = [\n";
  for (const auto& br : c.branches)
    out << c.buses[br.from_bus].ext_id << " " << c.buses[br.to_bus].ext_id
        << " " << br.r << " " << br.x << " " << br.b_charging << " " << br.s_max
        << " 0 0 " << (br.tap_ratio == 1.0 ? 0.0 : br.tap_ratio) << " 0 1;\n";
  out << "];\n";
  out << "mpc.gencost = [\n";
  for (const auto& g : c.generators)
    out << "2 0 0 3 " << g.cost_c2 << " " << g.cost_c1 << " " << g.cost_c0
        << ";\n";
  out << "];\n";
  return out.str();
}

}  // namespace acopf
