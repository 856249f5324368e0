#include <cmath>
#include <sstream>
#include <vector>

#include "gridarb/netcase.hpp"

namespace gridarb::net {

namespace {

[[noreturn]] void fail(const std::string& origin, const std::string& msg) {
  throw ParseError(origin + ": " + msg);
}

std::string strip_comments(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    auto pct = line.find('%');
    if (pct != std::string::npos) line.erase(pct);
    out += line;
    out += '\n';
  }
  return out;
}

// Returns the rows of "mpc.<field> = [ ... ];", empty if the field is absent.
std::vector<std::vector<double>> read_matrix(const std::string& text,
                                             const std::string& field,
                                             const std::string& origin) {
  std::string needle = "mpc." + field;
  size_t pos = 0;
  while (true) {
    pos = text.find(needle, pos);
    if (pos == std::string::npos) return {};
    char after = pos + needle.size() < text.size() ? text[pos + needle.size()] : ' ';
    if (after == ' ' || after == '\t' || after == '=' || after == '\n') break;
    pos += needle.size();
  }
  auto open = text.find('[', pos);
  if (open == std::string::npos) fail(origin, needle + ": missing [");
  auto close = text.find(']', open);
  if (close == std::string::npos) fail(origin, needle + ": missing ]");

  std::vector<std::vector<double>> rows;
  std::vector<double> row;
  std::string cur;
  auto flush_number = [&] {
    if (cur.empty()) return;
    try {
      row.push_back(std::stod(cur));
    } catch (const std::exception&) {
      fail(origin, needle + ": malformed number \"" + cur + "\"");
    }
    cur.clear();
  };
  auto flush_row = [&] {
    if (!row.empty()) rows.push_back(row);
    row.clear();
  };
  for (char ch : text.substr(open + 1, close - open - 1)) {
    if (ch == ';' || ch == '\n') {
      flush_number();
      flush_row();
    } else if (ch == ' ' || ch == '\t' || ch == '\r' || ch == ',') {
      flush_number();
    } else {
      cur += ch;
    }
  }
  flush_number();
  flush_row();
  return rows;
}

double scalar_field(const std::string& text, const std::string& field, double def,
                    const std::string& origin) {
  std::string needle = "mpc." + field;
  auto pos = text.find(needle);
  if (pos == std::string::npos) return def;
  auto eq = text.find('=', pos);
  if (eq == std::string::npos) fail(origin, needle + ": missing =");
  auto semi = text.find(';', eq);
  std::string num = text.substr(eq + 1, semi == std::string::npos ? std::string::npos
                                                                  : semi - eq - 1);
  try {
    return std::stod(num);
  } catch (const std::exception&) {
    fail(origin, needle + ": malformed number");
  }
}

constexpr double kPi = 3.14159265358979323846;

}  // namespace

NetworkCase parse_matpower(const std::string& raw, const std::string& origin) {
  std::string text = strip_comments(raw);
  NetworkCase c;

  auto fn = text.find("function");
  if (fn != std::string::npos) {
    auto eq = text.find('=', fn);
    if (eq != std::string::npos) {
      std::istringstream ns(text.substr(eq + 1));
      ns >> c.name;
    }
  }
  c.base_mva = scalar_field(text, "baseMVA", 100.0, origin);
  if (c.base_mva <= 0) fail(origin, "baseMVA must be positive");
  double base = c.base_mva;
  c.horizon = 1;

  auto bus_rows = read_matrix(text, "bus", origin);
  if (bus_rows.empty()) fail(origin, "mpc.bus is missing or empty");
  for (const auto& r : bus_rows) {
    if (r.size() < 13) fail(origin, "mpc.bus: row has fewer than 13 columns");
    int id = static_cast<int>(r[0]);
    Bus b;
    b.id = id;
    b.is_reference = static_cast<int>(r[1]) == 3;
    b.v_max = r[11];
    b.v_min = r[12];
    c.buses.push_back(b);
    if (r[2] != 0 || r[3] != 0) {
      Load l;
      l.id = id;
      l.bus = id;
      l.p_d = {r[2] / base};
      l.q_d = {r[3] / base};
      c.loads.push_back(l);
    }
    if (r[4] != 0 || r[5] != 0) {
      Shunt s;
      s.id = id;
      s.bus = id;
      s.g_sh = r[4] / base;
      s.b_sh = r[5] / base;
      c.shunts.push_back(s);
    }
  }

  auto br_rows = read_matrix(text, "branch", origin);
  int next_branch_id = 1;
  for (const auto& r : br_rows) {
    if (r.size() < 11) fail(origin, "mpc.branch: row has fewer than 11 columns");
    int id = next_branch_id++;
    if (r[10] == 0) continue;  // out of service
    double res = r[2], x = r[3], z2 = res * res + x * x;
    if (z2 <= 0) fail(origin, "mpc.branch: zero series impedance in row " +
                                  std::to_string(id));
    Branch br;
    br.id = id;
    br.from_bus = static_cast<int>(r[0]);
    br.to_bus = static_cast<int>(r[1]);
    br.g = res / z2;
    br.b = -x / z2;
    br.b_fr = br.b_to = r[4] / 2.0;
    br.s_max = r[5] / base;
    br.tau = r[8] == 0 ? 1.0 : r[8];
    br.sigma = r[9] * kPi / 180.0;
    c.branches.push_back(br);
  }

  auto gen_rows = read_matrix(text, "gen", origin);
  auto cost_rows = read_matrix(text, "gencost", origin);
  if (!cost_rows.empty() && cost_rows.size() != gen_rows.size())
    fail(origin, "mpc.gencost: row count differs from mpc.gen");
  for (size_t k = 0; k < gen_rows.size(); ++k) {
    const auto& r = gen_rows[k];
    if (r.size() < 10) fail(origin, "mpc.gen: row has fewer than 10 columns");
    int id = static_cast<int>(k) + 1;
    if (r[7] <= 0) continue;  // out of service
    Generator g;
    g.id = id;
    g.bus = static_cast<int>(r[0]);
    g.q_max = r[3] / base;
    g.q_min = r[4] / base;
    g.p_max = r[8] / base;
    g.p_min = r[9] / base;
    if (!cost_rows.empty()) {
      const auto& cr = cost_rows[k];
      if (cr.size() < 4) fail(origin, "mpc.gencost: row has fewer than 4 columns");
      if (static_cast<int>(cr[0]) != 2)
        fail(origin, "mpc.gencost: only polynomial cost model 2 is supported");
      int ncost = static_cast<int>(cr[3]);
      if (cr.size() < 4 + static_cast<size_t>(ncost))
        fail(origin, "mpc.gencost: row shorter than its declared ncost");
      if (ncost == 3) {
        g.c2 = cr[4] * base * base;
        g.c1 = cr[5] * base;
        g.c0 = cr[6];
      } else if (ncost == 2) {
        g.c1 = cr[4] * base;
        g.c0 = cr[5];
      } else if (ncost == 1) {
        g.c0 = cr[4];
      } else {
        fail(origin, "mpc.gencost: unsupported ncost " + std::to_string(ncost));
      }
    }
    c.generators.push_back(g);
  }

  normalize_case(c);
  return c;
}

}  // namespace gridarb::net
