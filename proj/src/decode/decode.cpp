#include "nco/decode/decode.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <ostream>

#include "nco/core/philox.hpp"

namespace nco {

PlaneMap PlaneMap::dihedral(int k) {
  if (k < 0 || k > 7) fail(ErrorCode::InvalidConfig, "dihedral index must be in 0..7");
  // (x, y) -> (1 - x, y) and (x, y) -> (y, x) generate the group.
  static const PlaneMap table[8] = {
      {1, 0, 0, 1, 0, 0},   // (x, y)
      {-1, 0, 0, 1, 1, 0},  // (1 - x, y)
      {1, 0, 0, -1, 0, 1},  // (x, 1 - y)
      {-1, 0, 0, -1, 1, 1}, // (1 - x, 1 - y)
      {0, 1, 1, 0, 0, 0},   // (y, x)
      {0, -1, 1, 0, 1, 0},  // (1 - y, x)
      {0, 1, -1, 0, 0, 1},  // (y, 1 - x)
      {0, -1, -1, 0, 1, 1}, // (1 - y, 1 - x)
  };
  return table[k];
}

PlaneMap PlaneMap::rotation(double theta, bool reflect) {
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double s = reflect ? -1.0 : 1.0;
  // p' = R (S p - o) + o with S = diag(s, 1) and o the center, after the
  // optional reflection x -> 1 - x (S p + (reflect ? (1, 0) : 0)).
  PlaneMap m;
  m.a = cs * s;
  m.b = -sn;
  m.c = sn * s;
  m.d = cs;
  const double ox = reflect ? 1.0 : 0.0;
  const double px = ox - 0.5, py = -0.5;
  m.e = cs * px - sn * py + 0.5;
  m.f = sn * px + cs * py + 0.5;
  return m;
}

InstanceBatch transform(const InstanceBatch& in, const PlaneMap& m) {
  InstanceBatch out = in;
  for (Index i = 0; i < in.locs.size(); i += 2) {
    const double x = in.locs[i], y = in.locs[i + 1];
    out.locs[i] = static_cast<float>(m.a * x + m.b * y + m.e);
    out.locs[i + 1] = static_cast<float>(m.c * x + m.d * y + m.f);
  }
  return out;
}

std::vector<InstanceBatch> dihedral8(const InstanceBatch& in) {
  std::vector<InstanceBatch> out;
  for (int k = 0; k < 8; ++k) out.push_back(transform(in, PlaneMap::dihedral(k)));
  return out;
}

std::vector<PlaneMap> augmentation_maps(Index k, std::uint64_t seed) {
  if (k < 1) fail(ErrorCode::InvalidConfig, "augmentation count must be at least 1");
  std::vector<PlaneMap> maps;
  for (Index i = 0; i < std::min<Index>(k, 8); ++i) maps.push_back(PlaneMap::dihedral(static_cast<int>(i)));
  PhiloxStream rng(seed, 0xa06);
  for (Index i = 8; i < k; ++i) {
    const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
    maps.push_back(PlaneMap::rotation(theta, rng.uniform() < 0.5));
  }
  return maps;
}

InstanceBatch augment(const InstanceBatch& in, const std::vector<PlaneMap>& maps) {
  const Index k = static_cast<Index>(maps.size());
  InstanceBatch out = in.repeat_interleave(k);
  const Index per_row = in.nodes() * 2;
  for (Index r = 0; r < out.batch(); ++r) {
    const PlaneMap& m = maps[static_cast<std::size_t>(r % k)];
    for (Index i = r * per_row; i < (r + 1) * per_row; i += 2) {
      const double x = out.locs[i], y = out.locs[i + 1];
      out.locs[i] = static_cast<float>(m.a * x + m.b * y + m.e);
      out.locs[i + 1] = static_cast<float>(m.c * x + m.d * y + m.f);
    }
  }
  return out;
}

DecodeScheme DecodeScheme::parse(const std::string& text) {
  const auto colon = text.find(':');
  const std::string head = text.substr(0, colon);
  Index arg = -1;
  if (colon != std::string::npos) {
    try {
      std::size_t used = 0;
      arg = std::stol(text.substr(colon + 1), &used);
      if (used != text.size() - colon - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      fail(ErrorCode::InvalidConfig, "bad scheme parameter in '" + text + "'");
    }
    if (arg < 1) fail(ErrorCode::InvalidConfig, "scheme parameter must be at least 1 in '" + text + "'");
  }
  DecodeScheme s;
  if (head == "greedy" && arg < 0) {
    s.kind = SchemeKind::Greedy;
  } else if (head == "sampling") {
    s.kind = SchemeKind::Sampling;
    s.samples = arg < 0 ? 1280 : arg;
  } else if (head == "multistart") {
    s.kind = SchemeKind::Multistart;
    s.starts = arg < 0 ? 0 : arg;
  } else if (head == "augmentation") {
    s.kind = SchemeKind::Augmentation;
    s.augments = arg < 0 ? 8 : arg;
  } else if (head == "ms_aug") {
    s.kind = SchemeKind::MultistartAugmentation;
    s.augments = arg < 0 ? 16 : arg;
  } else {
    fail(ErrorCode::InvalidConfig, "unknown decoding scheme '" + text + "'");
  }
  return s;
}

std::string DecodeScheme::name() const {
  switch (kind) {
    case SchemeKind::Greedy: return "greedy";
    case SchemeKind::Sampling: return "sampling:" + std::to_string(samples);
    case SchemeKind::Multistart: return starts ? "multistart:" + std::to_string(starts) : "multistart";
    case SchemeKind::Augmentation: return "augmentation:" + std::to_string(augments);
    case SchemeKind::MultistartAugmentation: return "ms_aug:" + std::to_string(augments);
  }
  return "greedy";
}

std::vector<Index> multistart_actions(const InstanceBatch& in, Index starts) {
  std::vector<Index> all = start_actions(in);
  if (starts > static_cast<Index>(all.size()))
    fail(ErrorCode::SchemeUnsupported, std::string(env_name(in.env)) + " admits " + std::to_string(all.size()) +
                                           " forced starts, " + std::to_string(starts) + " requested");
  if (starts > 0) all.resize(static_cast<std::size_t>(starts));
  return all;
}

namespace {

// Rows of `in` repeated per candidate: candidate c of instance b is row b*C + c.
struct Candidates {
  InstanceBatch rows;
  TensorI first;                    // forced first action per row (-1 = free)
  std::vector<std::uint64_t> streams;
  DecodeType type = DecodeType::Greedy;
  Index per_instance = 1;
};

Candidates expand(const InstanceBatch& in, const DecodeScheme& s, std::uint64_t seed) {
  Candidates c;
  std::vector<PlaneMap> maps{PlaneMap::identity()};
  std::vector<Index> starts;
  switch (s.kind) {
    case SchemeKind::Greedy: break;
    case SchemeKind::Sampling:
      if (s.samples < 1) fail(ErrorCode::InvalidConfig, "sampling needs M >= 1");
      c.type = DecodeType::Sampling;
      break;
    case SchemeKind::Multistart: starts = multistart_actions(in, s.starts); break;
    case SchemeKind::Augmentation: maps = augmentation_maps(s.augments, seed); break;
    case SchemeKind::MultistartAugmentation:
      starts = multistart_actions(in, s.starts);
      maps = augmentation_maps(s.augments, seed);
      break;
  }
  const Index k = static_cast<Index>(maps.size());
  const Index n_starts = starts.empty() ? 1 : static_cast<Index>(starts.size());
  const Index m = s.kind == SchemeKind::Sampling ? s.samples : 1;
  c.per_instance = k * n_starts * m;
  // augment copies outermost within an instance, then starts, then samples
  InstanceBatch augmented = k == 1 ? in : augment(in, maps);
  c.rows = augmented.repeat_interleave(n_starts * m);
  const Index total = c.rows.batch();
  c.first = TensorI({total}, -1);
  if (!starts.empty()) {
    const KeyedBatch init = reset(c.rows);
    const Index nodes = c.rows.nodes();
    for (Index r = 0; r < total; ++r) {
      const Index a = starts[static_cast<std::size_t>((r / m) % n_starts)];
      // A start that is infeasible at reset (e.g. an OP customer out of reach)
      // falls back to the policy's own choice.
      c.first[r] = init.mask()[r * nodes + a] ? static_cast<std::int32_t>(a) : -1;
    }
  }
  if (c.type == DecodeType::Sampling) {
    c.streams.resize(static_cast<std::size_t>(total));
    for (Index r = 0; r < total; ++r) {
      const auto b = static_cast<std::uint64_t>(r / c.per_instance);
      const auto sample = static_cast<std::uint64_t>(r % c.per_instance);
      c.streams[static_cast<std::size_t>(r)] = (b << 32) | sample;
    }
  }
  return c;
}

}  // namespace

DecodeResult decode(Policy<float>& policy, const InstanceBatch& in, const DecodeScheme& scheme, std::uint64_t seed,
                    Index chunk_rows) {
  const auto t0 = std::chrono::steady_clock::now();
  const bool was = policy.training;
  policy.training = false;
  const Candidates cand = expand(in, scheme, seed);
  const Index batch = in.batch(), per = cand.per_instance;
  const Index group = std::max<Index>(1, chunk_rows / per);  // instances per chunk

  DecodeResult out;
  out.samples = per;
  out.reward = TensorF({batch});
  out.cost.assign(static_cast<std::size_t>(batch), 0.0);
  std::vector<TensorI> best(static_cast<std::size_t>(batch));
  for (Index start = 0; start < batch; start += group) {
    const Index len = std::min(group, batch - start);
    std::vector<Index> rows(static_cast<std::size_t>(len * per));
    for (Index r = 0; r < len * per; ++r) rows[r] = start * per + r;
    const InstanceBatch part = cand.rows.take(rows);
    const TensorI first = gather_rows(cand.first, rows);
    RolloutOptions opt;
    opt.type = cand.type;
    opt.seed = seed;
    opt.first_actions = &first;
    if (!cand.streams.empty())
      for (Index r : rows) opt.streams.push_back(cand.streams[static_cast<std::size_t>(r)]);
    Tape<float> tape(false);
    const Trajectory<float> tr = rollout(policy, tape, part, opt);
    const Index t = tr.actions.dim(1);
    for (Index i = 0; i < len; ++i) {
      Index arg = i * per;
      for (Index c = i * per + 1; c < (i + 1) * per; ++c)
        if (tr.reward[c] > tr.reward[arg]) arg = c;
      const Index b = start + i;
      out.reward[b] = tr.reward[arg];
      out.cost[static_cast<std::size_t>(b)] = maximize(in.env) ? tr.reward[arg] : -static_cast<double>(tr.reward[arg]);
      best[static_cast<std::size_t>(b)] = TensorI({1, t});
      std::copy_n(tr.actions.data() + arg * t, t, best[static_cast<std::size_t>(b)].data());
    }
  }
  Index width = 0;
  for (const auto& a : best) width = std::max(width, a.dim(1));
  out.actions = TensorI({batch, width});
  for (Index b = 0; b < batch; ++b) {
    const auto& a = best[static_cast<std::size_t>(b)];
    std::copy_n(a.data(), a.dim(1), out.actions.data() + b * width);
  }
  policy.training = was;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

double gap(double cost, double best_known, bool maximize) {
  if (best_known == 0.0) fail(ErrorCode::ZeroReference, "gap against a best-known value of 0");
  return maximize ? (best_known - cost) / best_known * 100.0 : (cost - best_known) / std::abs(best_known) * 100.0;
}

void write_eval_csv(std::ostream& out, const std::vector<EvalRow>& rows) {
  out << "instance_id,scheme,cost,gap_pct,samples,seconds\n";
  for (const auto& r : rows) {
    // a float-precision tie with the reference must not print as -0.00
    const double g = std::abs(r.gap_pct) < 0.005 ? 0.0 : r.gap_pct;
    out << r.instance << ',' << r.scheme << ',' << std::fixed << std::setprecision(2) << r.cost << ','
        << std::setprecision(2) << g << ',' << r.samples << ',' << std::setprecision(4) << r.seconds
        << std::defaultfloat << '\n';
  }
}

}  // namespace nco
