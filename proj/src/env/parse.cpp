#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "common.hpp"

namespace nco {
namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string upper(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return s;
}

struct RawFile {
  std::map<std::string, std::string> spec;
  std::map<std::string, std::vector<std::string>> sections;
};

bool is_section(const std::string& key) { return key.size() > 8 && key.rfind("_SECTION") == key.size() - 8; }

// Splits a TSPLib-family file into "KEY : value" entries and the raw lines of
// each *_SECTION block.
RawFile split_file(const std::string& text) {
  RawFile out;
  std::istringstream in(text);
  std::string line, section;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty()) continue;
    const std::string head = upper(t.substr(0, t.find_first_of(" \t:")));
    if (head == "EOF") break;
    if (is_section(head)) {
      section = head;
      out.sections[section];
      continue;
    }
    const auto colon = t.find(':');
    if (colon != std::string::npos && !std::isdigit(static_cast<unsigned char>(t[0])) && t[0] != '-') {
      section.clear();
      out.spec[upper(trim(t.substr(0, colon)))] = trim(t.substr(colon + 1));
      continue;
    }
    if (section.empty()) fail(ErrorCode::MalformedSection, "unexpected line outside any section: " + t);
    out.sections[section].push_back(t);
  }
  return out;
}

Index dimension_of(const RawFile& f) {
  auto it = f.spec.find("DIMENSION");
  if (it == f.spec.end()) fail(ErrorCode::MalformedSection, "missing DIMENSION");
  try {
    const long v = std::stol(it->second);
    if (v < 1) throw std::invalid_argument("dimension");
    return v;
  } catch (const std::exception&) {
    fail(ErrorCode::MalformedSection, "bad DIMENSION '" + it->second + "'");
  }
}

void require_euc2d(const RawFile& f) {
  auto it = f.spec.find("EDGE_WEIGHT_TYPE");
  const std::string type = it == f.spec.end() ? std::string("<missing>") : upper(it->second);
  if (type != "EUC_2D") fail(ErrorCode::UnsupportedEdgeWeightType, "edge weight type " + type + " (only EUC_2D is supported)");
}

// Node id (1-based in the file) -> row of numbers that follow it.
std::vector<std::vector<double>> read_indexed(const RawFile& f, const std::string& name, Index dim, std::size_t width) {
  auto it = f.sections.find(name);
  if (it == f.sections.end()) fail(ErrorCode::MalformedSection, "missing " + name);
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(dim));
  std::vector<bool> filled(static_cast<std::size_t>(dim), false);
  for (const auto& line : it->second) {
    std::istringstream in(line);
    long id = 0;
    std::vector<double> vals(width);
    if (!(in >> id)) fail(ErrorCode::MalformedSection, name + ": cannot read node id in '" + line + "'");
    for (auto& v : vals)
      if (!(in >> v)) fail(ErrorCode::MalformedSection, name + ": too few values in '" + line + "'");
    if (id < 1 || id > dim) fail(ErrorCode::MalformedSection, name + ": node id " + std::to_string(id) + " out of range");
    if (filled[static_cast<std::size_t>(id - 1)]) fail(ErrorCode::MalformedSection, name + ": node " + std::to_string(id) + " listed twice");
    rows[static_cast<std::size_t>(id - 1)] = vals;
    filled[static_cast<std::size_t>(id - 1)] = true;
  }
  for (std::size_t i = 0; i < filled.size(); ++i)
    if (!filled[i]) fail(ErrorCode::MalformedSection, name + ": node " + std::to_string(i + 1) + " missing");
  return rows;
}

// Shared min-max scaling: per-axis offset, one factor (the larger extent).
void scale_coordinates(ParsedInstance& p) {
  const Index n = p.original.dim(0);
  double lo[2] = {p.original[0], p.original[1]}, hi[2] = {lo[0], lo[1]};
  for (Index i = 0; i < n; ++i)
    for (int a = 0; a < 2; ++a) {
      lo[a] = std::min(lo[a], p.original[2 * i + a]);
      hi[a] = std::max(hi[a], p.original[2 * i + a]);
    }
  p.scale = std::max(hi[0] - lo[0], hi[1] - lo[1]);
  if (!(p.scale > 0)) p.scale = 1.0;
  p.instance.locs = TensorF({1, n, 2});
  for (Index i = 0; i < n; ++i)
    for (int a = 0; a < 2; ++a)
      p.instance.locs[2 * i + a] = static_cast<float>((p.original[2 * i + a] - lo[a]) / p.scale);
}

std::string name_of(const RawFile& f) {
  auto it = f.spec.find("NAME");
  return it == f.spec.end() ? std::string() : it->second;
}

}  // namespace

ParsedInstance parse_tsplib(const std::string& text) {
  const RawFile f = split_file(text);
  require_euc2d(f);
  const Index dim = dimension_of(f);
  const auto coords = read_indexed(f, "NODE_COORD_SECTION", dim, 2);
  ParsedInstance p;
  p.name = name_of(f);
  p.instance.env = EnvId::TSP;
  p.original = TensorD({dim, 2});
  for (Index i = 0; i < dim; ++i) {
    p.original[2 * i] = coords[static_cast<std::size_t>(i)][0];
    p.original[2 * i + 1] = coords[static_cast<std::size_t>(i)][1];
  }
  scale_coordinates(p);
  return p;
}

ParsedInstance parse_cvrplib(const std::string& text) {
  const RawFile f = split_file(text);
  require_euc2d(f);
  const Index dim = dimension_of(f);
  auto cap = f.spec.find("CAPACITY");
  if (cap == f.spec.end()) fail(ErrorCode::MalformedSection, "missing CAPACITY");
  ParsedInstance p;
  try {
    p.capacity = std::stod(cap->second);
  } catch (const std::exception&) {
    fail(ErrorCode::MalformedSection, "bad CAPACITY '" + cap->second + "'");
  }
  if (!(p.capacity > 0)) fail(ErrorCode::MalformedSection, "CAPACITY must be positive");
  const auto coords = read_indexed(f, "NODE_COORD_SECTION", dim, 2);
  const auto demands = read_indexed(f, "DEMAND_SECTION", dim, 1);
  Index depot = 0;
  if (auto it = f.sections.find("DEPOT_SECTION"); it != f.sections.end() && !it->second.empty()) {
    try {
      depot = std::stol(it->second.front()) - 1;
    } catch (const std::exception&) {
      fail(ErrorCode::MalformedSection, "bad DEPOT_SECTION entry '" + it->second.front() + "'");
    }
    if (depot < 0 || depot >= dim) fail(ErrorCode::MalformedSection, "depot id out of range");
  }
  // Depot first, customers in file order.
  std::vector<Index> order{depot};
  for (Index i = 0; i < dim; ++i)
    if (i != depot) order.push_back(i);
  p.name = name_of(f);
  p.instance.env = EnvId::CVRP;
  p.original = TensorD({dim, 2});
  p.instance.demand = TensorF({1, dim});
  for (Index k = 0; k < dim; ++k) {
    const auto i = static_cast<std::size_t>(order[static_cast<std::size_t>(k)]);
    p.original[2 * k] = coords[i][0];
    p.original[2 * k + 1] = coords[i][1];
    const double d = demands[i][0];
    if (k > 0 && (d <= 0 || d > p.capacity))
      fail(ErrorCode::MalformedSection, "customer demand " + std::to_string(d) + " outside (0, CAPACITY]");
    p.instance.demand[k] = k == 0 ? 0.0f : static_cast<float>(d / p.capacity);
  }
  scale_coordinates(p);
  return p;
}

std::vector<std::int32_t> parse_tour(const std::string& text) {
  const RawFile f = split_file(text);
  auto it = f.sections.find("TOUR_SECTION");
  if (it == f.sections.end()) fail(ErrorCode::MalformedSection, "missing TOUR_SECTION");
  std::vector<std::int32_t> tour;
  for (const auto& line : it->second) {
    std::istringstream in(line);
    long id = 0;
    while (in >> id) {
      if (id == -1) return tour;
      if (id < 1) fail(ErrorCode::MalformedSection, "tour node id " + std::to_string(id));
      tour.push_back(static_cast<std::int32_t>(id - 1));
    }
  }
  return tour;
}

double tsplib_cost(const ParsedInstance& p, const std::int32_t* actions, Index length) {
  auto nint_leg = [&](Index i, Index j) {
    const double dx = p.original[2 * i] - p.original[2 * j];
    const double dy = p.original[2 * i + 1] - p.original[2 * j + 1];
    return std::floor(std::sqrt(dx * dx + dy * dy) + 0.5);
  };
  double total = 0.0;
  if (p.instance.env == EnvId::TSP) {
    const Index t = std::min(length, p.original.dim(0));
    for (Index k = 1; k < t; ++k) total += nint_leg(actions[k - 1], actions[k]);
    if (t > 1) total += nint_leg(actions[t - 1], actions[0]);
    return total;
  }
  Index prev = 0;
  for (Index k = 0; k < length; ++k) {
    total += nint_leg(prev, actions[k]);
    prev = actions[k];
  }
  return total + nint_leg(prev, 0);
}

}  // namespace nco
