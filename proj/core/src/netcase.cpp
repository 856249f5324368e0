#include "gridarb/netcase.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace gridarb::net {

using ordered_json = nlohmann::ordered_json;

namespace {

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (size_t k = 0; k < parts.size(); ++k) {
    if (k) out += sep;
    out += parts[k];
  }
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path + ": cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

[[noreturn]] void fail(const std::string& origin, const std::string& msg) {
  throw ParseError(origin + ": " + msg);
}

void check_keys(const ordered_json& obj, const std::set<std::string>& allowed,
                const std::string& origin, const std::string& where) {
  for (const auto& item : obj.items()) {
    if (!allowed.count(item.key()))
      fail(origin, where + ": unknown key \"" + item.key() + "\"");
  }
}

double get_num(const ordered_json& obj, const char* key, const std::string& origin,
               const std::string& where) {
  if (!obj.contains(key)) fail(origin, where + ": missing key \"" + key + "\"");
  const auto& v = obj.at(key);
  if (!v.is_number()) fail(origin, where + ": key \"" + key + "\" must be a number");
  return v.get<double>();
}

double get_num_or(const ordered_json& obj, const char* key, double def,
                  const std::string& origin, const std::string& where) {
  if (!obj.contains(key)) return def;
  const auto& v = obj.at(key);
  if (!v.is_number()) fail(origin, where + ": key \"" + key + "\" must be a number");
  return v.get<double>();
}

int get_int(const ordered_json& obj, const char* key, const std::string& origin,
            const std::string& where) {
  if (!obj.contains(key)) fail(origin, where + ": missing key \"" + key + "\"");
  const auto& v = obj.at(key);
  if (!v.is_number_integer()) fail(origin, where + ": key \"" + key + "\" must be an integer");
  return v.get<int>();
}

bool get_bool_or(const ordered_json& obj, const char* key, bool def,
                 const std::string& origin, const std::string& where) {
  if (!obj.contains(key)) return def;
  const auto& v = obj.at(key);
  if (!v.is_boolean()) fail(origin, where + ": key \"" + key + "\" must be a boolean");
  return v.get<bool>();
}

// Scalar broadcasts over the horizon; an array is taken as-is.
std::vector<double> get_series(const ordered_json& obj, const char* key, int horizon,
                               double def, const std::string& origin,
                               const std::string& where) {
  if (!obj.contains(key))
    return std::vector<double>(static_cast<size_t>(horizon), def);
  const auto& v = obj.at(key);
  if (v.is_number())
    return std::vector<double>(static_cast<size_t>(horizon), v.get<double>());
  if (!v.is_array()) fail(origin, where + ": key \"" + key + "\" must be a number or array");
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& x : v) {
    if (!x.is_number()) fail(origin, where + ": key \"" + key + "\" has a non-number entry");
    out.push_back(x.get<double>());
  }
  return out;
}

}  // namespace

ValidationError::ValidationError(std::vector<std::string> v)
    : std::runtime_error("invalid case: " + join(v, "; ")), violations(std::move(v)) {}

void normalize_case(NetworkCase& c) {
  auto by_id = [](const auto& a, const auto& b) { return a.id < b.id; };
  std::sort(c.buses.begin(), c.buses.end(), by_id);
  std::sort(c.branches.begin(), c.branches.end(), by_id);
  std::sort(c.generators.begin(), c.generators.end(), by_id);
  std::sort(c.loads.begin(), c.loads.end(), by_id);
  std::sort(c.shunts.begin(), c.shunts.end(), by_id);
}

NetworkCase parse_native_json(const std::string& text, const std::string& origin) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(text);
  } catch (const std::exception& e) {
    fail(origin, std::string("JSON parse failure: ") + e.what());
  }
  if (!doc.is_object()) fail(origin, "top level must be an object");
  check_keys(doc,
             {"name", "base_mva", "horizon", "buses", "branches", "generators",
              "loads", "shunts", "storage"},
             origin, "top level");

  NetworkCase c;
  if (doc.contains("name")) {
    if (!doc.at("name").is_string()) fail(origin, "\"name\" must be a string");
    c.name = doc.at("name").get<std::string>();
  }
  c.base_mva = get_num_or(doc, "base_mva", 100.0, origin, "top level");
  c.horizon = doc.contains("horizon") ? get_int(doc, "horizon", origin, "top level") : 1;

  auto array_of = [&](const char* key) {
    if (!doc.contains(key)) return ordered_json::array();
    if (!doc.at(key).is_array()) fail(origin, std::string("\"") + key + "\" must be an array");
    return doc.at(key);
  };

  int n = 0;
  for (const auto& o : array_of("buses")) {
    std::string where = "buses[" + std::to_string(n++) + "]";
    check_keys(o, {"id", "v_min", "v_max", "reference"}, origin, where);
    Bus b;
    b.id = get_int(o, "id", origin, where);
    b.v_min = get_num_or(o, "v_min", 0.9, origin, where);
    b.v_max = get_num_or(o, "v_max", 1.1, origin, where);
    b.is_reference = get_bool_or(o, "reference", false, origin, where);
    c.buses.push_back(b);
  }
  n = 0;
  for (const auto& o : array_of("branches")) {
    std::string where = "branches[" + std::to_string(n++) + "]";
    check_keys(o,
               {"id", "from", "to", "g", "b", "g_fr", "b_fr", "g_to", "b_to", "tau",
                "sigma", "s_max"},
               origin, where);
    Branch br;
    br.id = get_int(o, "id", origin, where);
    br.from_bus = get_int(o, "from", origin, where);
    br.to_bus = get_int(o, "to", origin, where);
    br.g = get_num(o, "g", origin, where);
    br.b = get_num(o, "b", origin, where);
    br.g_fr = get_num_or(o, "g_fr", 0.0, origin, where);
    br.b_fr = get_num_or(o, "b_fr", 0.0, origin, where);
    br.g_to = get_num_or(o, "g_to", 0.0, origin, where);
    br.b_to = get_num_or(o, "b_to", 0.0, origin, where);
    br.tau = get_num_or(o, "tau", 1.0, origin, where);
    br.sigma = get_num_or(o, "sigma", 0.0, origin, where);
    br.s_max = get_num_or(o, "s_max", 0.0, origin, where);
    c.branches.push_back(br);
  }
  n = 0;
  for (const auto& o : array_of("generators")) {
    std::string where = "generators[" + std::to_string(n++) + "]";
    check_keys(o, {"id", "bus", "c2", "c1", "c0", "p_min", "p_max", "q_min", "q_max"},
               origin, where);
    Generator g;
    g.id = get_int(o, "id", origin, where);
    g.bus = get_int(o, "bus", origin, where);
    g.c2 = get_num_or(o, "c2", 0.0, origin, where);
    g.c1 = get_num_or(o, "c1", 0.0, origin, where);
    g.c0 = get_num_or(o, "c0", 0.0, origin, where);
    g.p_min = get_num(o, "p_min", origin, where);
    g.p_max = get_num(o, "p_max", origin, where);
    g.q_min = get_num(o, "q_min", origin, where);
    g.q_max = get_num(o, "q_max", origin, where);
    c.generators.push_back(g);
  }
  n = 0;
  for (const auto& o : array_of("loads")) {
    std::string where = "loads[" + std::to_string(n++) + "]";
    check_keys(o, {"id", "bus", "p_d", "q_d"}, origin, where);
    Load l;
    l.id = get_int(o, "id", origin, where);
    l.bus = get_int(o, "bus", origin, where);
    l.p_d = get_series(o, "p_d", c.horizon, 0.0, origin, where);
    l.q_d = get_series(o, "q_d", c.horizon, 0.0, origin, where);
    c.loads.push_back(l);
  }
  n = 0;
  for (const auto& o : array_of("shunts")) {
    std::string where = "shunts[" + std::to_string(n++) + "]";
    check_keys(o, {"id", "bus", "g_sh", "b_sh"}, origin, where);
    Shunt s;
    s.id = get_int(o, "id", origin, where);
    s.bus = get_int(o, "bus", origin, where);
    s.g_sh = get_num_or(o, "g_sh", 0.0, origin, where);
    s.b_sh = get_num_or(o, "b_sh", 0.0, origin, where);
    c.shunts.push_back(s);
  }
  if (doc.contains("storage")) {
    const auto& o = doc.at("storage");
    if (!o.is_object()) fail(origin, "\"storage\" must be an object");
    std::string where = "storage";
    check_keys(o, {"bus", "soe_max", "s_max", "eta_ch", "eta_dis", "soe_init"}, origin,
               where);
    StorageUnit s;
    s.bus = get_int(o, "bus", origin, where);
    s.soe_max = get_num(o, "soe_max", origin, where);
    s.s_max = get_num(o, "s_max", origin, where);
    s.eta_ch = get_num_or(o, "eta_ch", 1.0, origin, where);
    s.eta_dis = get_num_or(o, "eta_dis", 1.0, origin, where);
    s.soe_init = get_num_or(o, "soe_init", 0.0, origin, where);
    c.storage = s;
  }
  normalize_case(c);
  return c;
}

std::string serialize_case(const NetworkCase& c) {
  ordered_json doc;
  doc["name"] = c.name;
  doc["base_mva"] = c.base_mva;
  doc["horizon"] = c.horizon;
  doc["buses"] = ordered_json::array();
  for (const auto& b : c.buses)
    doc["buses"].push_back(ordered_json{{"id", b.id},
                                        {"v_min", b.v_min},
                                        {"v_max", b.v_max},
                                        {"reference", b.is_reference}});
  doc["branches"] = ordered_json::array();
  for (const auto& br : c.branches)
    doc["branches"].push_back(ordered_json{{"id", br.id},
                                           {"from", br.from_bus},
                                           {"to", br.to_bus},
                                           {"g", br.g},
                                           {"b", br.b},
                                           {"g_fr", br.g_fr},
                                           {"b_fr", br.b_fr},
                                           {"g_to", br.g_to},
                                           {"b_to", br.b_to},
                                           {"tau", br.tau},
                                           {"sigma", br.sigma},
                                           {"s_max", br.s_max}});
  doc["generators"] = ordered_json::array();
  for (const auto& g : c.generators)
    doc["generators"].push_back(ordered_json{{"id", g.id},
                                             {"bus", g.bus},
                                             {"c2", g.c2},
                                             {"c1", g.c1},
                                             {"c0", g.c0},
                                             {"p_min", g.p_min},
                                             {"p_max", g.p_max},
                                             {"q_min", g.q_min},
                                             {"q_max", g.q_max}});
  doc["loads"] = ordered_json::array();
  for (const auto& l : c.loads)
    doc["loads"].push_back(
        ordered_json{{"id", l.id}, {"bus", l.bus}, {"p_d", l.p_d}, {"q_d", l.q_d}});
  doc["shunts"] = ordered_json::array();
  for (const auto& s : c.shunts)
    doc["shunts"].push_back(ordered_json{
        {"id", s.id}, {"bus", s.bus}, {"g_sh", s.g_sh}, {"b_sh", s.b_sh}});
  if (c.storage) {
    const auto& s = *c.storage;
    doc["storage"] = ordered_json{{"bus", s.bus},         {"soe_max", s.soe_max},
                                  {"s_max", s.s_max},     {"eta_ch", s.eta_ch},
                                  {"eta_dis", s.eta_dis}, {"soe_init", s.soe_init}};
  }
  return doc.dump(2) + "\n";
}

NetworkCase load_case(const std::string& path, CaseFormat format) {
  std::string text = read_text_file(path);
  NetworkCase c = format == CaseFormat::native_json ? parse_native_json(text, path)
                                                    : parse_matpower(text, path);
  if (c.name.empty()) c.name = path;
  return c;
}

NetworkCase load_case(const std::string& path) {
  auto dot = path.rfind('.');
  std::string ext = dot == std::string::npos ? "" : path.substr(dot);
  if (ext == ".m") return load_case(path, CaseFormat::matpower_subset);
  if (ext == ".json") return load_case(path, CaseFormat::native_json);
  throw ParseError(path + ": cannot infer case format from extension \"" + ext + "\"");
}

void apply_load_series_csv(NetworkCase& c, const std::string& csv_text,
                           const std::string& origin) {
  // rows: load_id,t,p_d,q_d   (t is 1-based; '#' starts a comment; header allowed)
  std::map<int, std::map<int, std::pair<double, double>>> rows;
  int horizon = 0;
  std::istringstream in(csv_text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r,") == std::string::npos) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    std::string a, b, p, q;
    if (!(ls >> a >> b >> p >> q))
      fail(origin, "line " + std::to_string(lineno) + ": expected 4 fields");
    std::string rest;
    if (ls >> rest)
      fail(origin, "line " + std::to_string(lineno) + ": expected 4 fields");
    if (lineno == 1 && !std::isdigit(static_cast<unsigned char>(a[0])) && a[0] != '-')
      continue;  // header row
    try {
      int id = std::stoi(a);
      int t = std::stoi(b);
      if (t < 1) fail(origin, "line " + std::to_string(lineno) + ": t must be >= 1");
      auto& cell = rows[id][t];
      cell = {std::stod(p), std::stod(q)};
      horizon = std::max(horizon, t);
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception&) {
      fail(origin, "line " + std::to_string(lineno) + ": malformed number");
    }
  }
  if (horizon == 0) fail(origin, "no data rows");

  for (auto& l : c.loads) {
    auto it = rows.find(l.id);
    if (it == rows.end()) {
      double p0 = l.p_d.empty() ? 0.0 : l.p_d.front();
      double q0 = l.q_d.empty() ? 0.0 : l.q_d.front();
      l.p_d.assign(static_cast<size_t>(horizon), p0);
      l.q_d.assign(static_cast<size_t>(horizon), q0);
      continue;
    }
    l.p_d.assign(static_cast<size_t>(horizon), 0.0);
    l.q_d.assign(static_cast<size_t>(horizon), 0.0);
    for (int t = 1; t <= horizon; ++t) {
      auto cell = it->second.find(t);
      if (cell == it->second.end())
        fail(origin, "load " + std::to_string(l.id) + ": missing period " +
                         std::to_string(t));
      l.p_d[static_cast<size_t>(t - 1)] = cell->second.first;
      l.q_d[static_cast<size_t>(t - 1)] = cell->second.second;
    }
  }
  for (const auto& [id, _] : rows) {
    bool known = std::any_of(c.loads.begin(), c.loads.end(),
                             [&](const Load& l) { return l.id == id; });
    if (!known) fail(origin, "load id " + std::to_string(id) + " not in case");
  }
  c.horizon = horizon;
}

void apply_load_series_file(NetworkCase& c, const std::string& path) {
  apply_load_series_csv(c, read_text_file(path), path);
}

std::vector<std::string> validate_case(const NetworkCase& c) {
  std::vector<std::string> v;
  auto bad = [&](const std::string& msg) { v.push_back(msg); };

  if (c.base_mva <= 0) bad("base_mva must be positive");
  if (c.horizon < 1) bad("horizon must be >= 1");
  if (c.buses.empty()) bad("case has no buses");

  std::set<int> bus_ids;
  int refs = 0;
  for (const auto& b : c.buses) {
    std::string tag = "bus " + std::to_string(b.id);
    if (!bus_ids.insert(b.id).second) bad(tag + ": duplicate id");
    if (b.is_reference) ++refs;
    if (!(b.v_min > 0)) bad(tag + ": v_min must be positive");
    if (!(b.v_min <= b.v_max)) bad(tag + ": v_min exceeds v_max");
  }
  if (refs != 1 && !c.buses.empty())
    bad("case must have exactly one reference bus, found " + std::to_string(refs));

  std::set<int> ids;
  for (const auto& br : c.branches) {
    std::string tag = "branch " + std::to_string(br.id);
    if (!ids.insert(br.id).second) bad(tag + ": duplicate id");
    if (!bus_ids.count(br.from_bus)) bad(tag + ": unknown from bus");
    if (!bus_ids.count(br.to_bus)) bad(tag + ": unknown to bus");
    if (br.from_bus == br.to_bus) bad(tag + ": from and to coincide");
    if (!(br.tau > 0)) bad(tag + ": tau must be positive");
    if (br.s_max < 0) bad(tag + ": s_max must be nonnegative");
    if (br.g == 0 && br.b == 0) bad(tag + ": zero series admittance");
  }
  ids.clear();
  for (const auto& g : c.generators) {
    std::string tag = "generator " + std::to_string(g.id);
    if (!ids.insert(g.id).second) bad(tag + ": duplicate id");
    if (!bus_ids.count(g.bus)) bad(tag + ": unknown bus");
    if (!(g.p_min <= g.p_max)) bad(tag + ": p_min exceeds p_max");
    if (!(g.q_min <= g.q_max)) bad(tag + ": q_min exceeds q_max");
    if (g.c2 < 0) bad(tag + ": c2 must be nonnegative");
  }
  ids.clear();
  for (const auto& l : c.loads) {
    std::string tag = "load " + std::to_string(l.id);
    if (!ids.insert(l.id).second) bad(tag + ": duplicate id");
    if (!bus_ids.count(l.bus)) bad(tag + ": unknown bus");
    if (l.p_d.size() != static_cast<size_t>(c.horizon))
      bad(tag + ": p_d length differs from horizon");
    if (l.q_d.size() != static_cast<size_t>(c.horizon))
      bad(tag + ": q_d length differs from horizon");
  }
  ids.clear();
  for (const auto& s : c.shunts) {
    std::string tag = "shunt " + std::to_string(s.id);
    if (!ids.insert(s.id).second) bad(tag + ": duplicate id");
    if (!bus_ids.count(s.bus)) bad(tag + ": unknown bus");
  }
  if (c.storage) {
    const auto& s = *c.storage;
    if (!bus_ids.count(s.bus)) bad("storage: unknown bus");
    if (s.soe_max < 0) bad("storage: soe_max must be nonnegative");
    if (s.s_max < 0) bad("storage: s_max must be nonnegative");
    if (!(s.eta_ch > 0 && s.eta_ch <= 1)) bad("storage: eta_ch must lie in (0, 1]");
    if (!(s.eta_dis > 0 && s.eta_dis <= 1)) bad("storage: eta_dis must lie in (0, 1]");
    if (s.soe_init < 0 || s.soe_init > s.soe_max)
      bad("storage: soe_init outside [0, soe_max]");
  }
  return v;
}

void require_valid(const NetworkCase& c) {
  auto v = validate_case(c);
  if (!v.empty()) throw ValidationError(std::move(v));
}

IndexSets build_index_sets(const NetworkCase& c) {
  IndexSets s;
  s.n_bus = static_cast<int>(c.buses.size());
  s.n_branch = static_cast<int>(c.branches.size());
  s.n_gen = static_cast<int>(c.generators.size());
  s.n_load = static_cast<int>(c.loads.size());
  s.n_shunt = static_cast<int>(c.shunts.size());

  for (int i = 0; i < s.n_bus; ++i) {
    s.bus_index[c.buses[static_cast<size_t>(i)].id] = i;
    if (c.buses[static_cast<size_t>(i)].is_reference) s.ref_bus = i;
  }
  for (int e = 0; e < s.n_branch; ++e) s.branch_index[c.branches[static_cast<size_t>(e)].id] = e;
  for (int k = 0; k < s.n_gen; ++k) s.gen_index[c.generators[static_cast<size_t>(k)].id] = k;
  for (int l = 0; l < s.n_load; ++l) s.load_index[c.loads[static_cast<size_t>(l)].id] = l;
  for (int h = 0; h < s.n_shunt; ++h) s.shunt_index[c.shunts[static_cast<size_t>(h)].id] = h;
  if (c.storage) s.storage_bus = s.bus_index.at(c.storage->bus);

  // Unordered bus pairs keyed canonically; each pair's ordered form is that of
  // the lowest-id branch spanning it.
  std::map<std::pair<int, int>, int> pair_of;
  s.fwd.resize(static_cast<size_t>(s.n_branch));
  s.rev.resize(static_cast<size_t>(s.n_branch));
  for (int e = 0; e < s.n_branch; ++e) {
    const auto& br = c.branches[static_cast<size_t>(e)];
    int i = s.bus_index.at(br.from_bus);
    int j = s.bus_index.at(br.to_bus);
    auto key = std::minmax(i, j);
    auto it = pair_of.find(key);
    int p;
    if (it == pair_of.end()) {
      p = s.n_pair++;
      pair_of.emplace(key, p);
      s.pairs.emplace_back(i, j);
      s.branches_of_pair.emplace_back();
    } else {
      p = it->second;
    }
    s.branches_of_pair[static_cast<size_t>(p)].push_back(e);
    s.fwd[static_cast<size_t>(e)] = FlowTuple{e, i, j, p};
    s.rev[static_cast<size_t>(e)] = FlowTuple{e, j, i, p};
  }

  s.tuples_at.assign(static_cast<size_t>(s.n_bus), {});
  for (int a = 0; a < 2 * s.n_branch; ++a)
    s.tuples_at[static_cast<size_t>(s.tuple(a).i)].push_back(a);
  s.gens_at.assign(static_cast<size_t>(s.n_bus), {});
  for (int k = 0; k < s.n_gen; ++k)
    s.gens_at[static_cast<size_t>(s.bus_index.at(c.generators[static_cast<size_t>(k)].bus))]
        .push_back(k);
  s.loads_at.assign(static_cast<size_t>(s.n_bus), {});
  for (int l = 0; l < s.n_load; ++l)
    s.loads_at[static_cast<size_t>(s.bus_index.at(c.loads[static_cast<size_t>(l)].bus))]
        .push_back(l);
  s.shunts_at.assign(static_cast<size_t>(s.n_bus), {});
  for (int h = 0; h < s.n_shunt; ++h)
    s.shunts_at[static_cast<size_t>(s.bus_index.at(c.shunts[static_cast<size_t>(h)].bus))]
        .push_back(h);
  return s;
}

}  // namespace gridarb::net
