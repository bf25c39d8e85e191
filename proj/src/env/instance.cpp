#include <algorithm>

#include "nco/env/env.hpp"

namespace nco {

EnvId parse_env(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "tsp") return EnvId::TSP;
  if (s == "cvrp") return EnvId::CVRP;
  if (s == "op") return EnvId::OP;
  if (s == "pctsp") return EnvId::PCTSP;
  if (s == "pdp") return EnvId::PDP;
  fail(ErrorCode::UnknownEnv, "unknown environment '" + std::string(name) + "'");
}

std::string_view env_name(EnvId env) {
  switch (env) {
    case EnvId::TSP: return "tsp";
    case EnvId::CVRP: return "cvrp";
    case EnvId::OP: return "op";
    case EnvId::PCTSP: return "pctsp";
    case EnvId::PDP: return "pdp";
  }
  return "?";
}

bool maximize(EnvId env) { return env == EnvId::OP; }

InstanceBatch InstanceBatch::take(const std::vector<Index>& rows) const {
  InstanceBatch out;
  out.env = env;
  out.num_pairs = num_pairs;
  out.locs = gather_rows(locs, rows);
  out.demand = gather_rows(demand, rows);
  out.prize = gather_rows(prize, rows);
  out.penalty = gather_rows(penalty, rows);
  out.max_length = gather_rows(max_length, rows);
  out.required_prize = gather_rows(required_prize, rows);
  return out;
}

InstanceBatch InstanceBatch::repeat_interleave(Index k) const {
  std::vector<Index> rows;
  rows.reserve(static_cast<std::size_t>(batch() * k));
  for (Index b = 0; b < batch(); ++b)
    for (Index r = 0; r < k; ++r) rows.push_back(b);
  return take(rows);
}

bool operator==(const InstanceBatch& a, const InstanceBatch& b) {
  return a.env == b.env && a.num_pairs == b.num_pairs && a.locs == b.locs && a.demand == b.demand &&
         a.prize == b.prize && a.penalty == b.penalty && a.max_length == b.max_length &&
         a.required_prize == b.required_prize;
}

InstanceBatch concat_batches(const std::vector<InstanceBatch>& parts) {
  if (parts.empty()) fail(ErrorCode::ShapeMismatch, "concatenating zero batches");
  InstanceBatch out;
  out.env = parts[0].env;
  out.num_pairs = parts[0].num_pairs;
  auto gather = [&](auto member) {
    std::vector<const TensorF*> ts;
    for (const auto& p : parts) {
      if (p.env != out.env || p.num_pairs != out.num_pairs)
        fail(ErrorCode::ShapeMismatch, "concatenating batches of different problems");
      ts.push_back(&(p.*member));
    }
    return concat_rows(ts);
  };
  out.locs = gather(&InstanceBatch::locs);
  out.demand = gather(&InstanceBatch::demand);
  out.prize = gather(&InstanceBatch::prize);
  out.penalty = gather(&InstanceBatch::penalty);
  out.max_length = gather(&InstanceBatch::max_length);
  out.required_prize = gather(&InstanceBatch::required_prize);
  return out;
}

bool KeyedBatch::all_done() const {
  const TensorB& d = done();
  for (Index i = 0; i < d.size(); ++i)
    if (!d[i]) return false;
  return true;
}

KeyedBatch KeyedBatch::take(const std::vector<Index>& rows) const {
  KeyedBatch out;
  for (const auto& [key, value] : data_)
    std::visit([&, k = key](const auto& t) { out.data_[k] = gather_rows(t, rows); }, value);
  return out;
}

}  // namespace nco
