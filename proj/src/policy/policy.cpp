#include "nco/policy/policy.hpp"

#include <cmath>

#include "nco/core/philox.hpp"

namespace nco {

void PolicyConfig::validate() const {
  if (embedding_dim <= 0 || hidden_dim <= 0 || num_layers < 0)
    fail(ErrorCode::InvalidConfig, "embedding_dim, hidden_dim must be positive and num_layers non-negative");
  if (num_heads <= 0 || embedding_dim % num_heads != 0)
    fail(ErrorCode::HeadDivisibility, "embedding_dim " + std::to_string(embedding_dim) + " is not divisible by " +
                                          std::to_string(num_heads) + " heads");
  if (!(softmax_temp > 0)) fail(ErrorCode::NonPositiveTemperature, "softmax_temp must be positive");
  if (tanh_clipping < 0) fail(ErrorCode::InvalidConfig, "tanh_clipping must be non-negative");
}

namespace {

template <typename T>
struct Builder {
  ParamSet<T>& ps;
  PhiloxStream rng;

  void uniform(const std::string& name, Shape shape, double bound) {
    Tensor<T> t(std::move(shape));
    for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(-bound, bound));
    ps.add(name, std::move(t));
  }
  void affine(const std::string& name, Index in, Index out, bool bias = true) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    uniform(name + ".weight", {in, out}, bound);
    if (bias) uniform(name + ".bias", {out}, bound);
  }
  void norm(const std::string& name, Index d, Normalization kind) {
    ps.add(name + ".gamma", Tensor<T>({d}, T(1)));
    ps.add(name + ".beta", Tensor<T>({d}));
    if (kind == Normalization::Batch) {
      ps.add(name + ".running_mean", Tensor<T>({d}), false);
      ps.add(name + ".running_var", Tensor<T>({d}, T(1)), false);
    }
  }
};

Index node_features(EnvId env) {
  switch (env) {
    case EnvId::TSP: return 2;
    case EnvId::CVRP: return 3;
    case EnvId::OP: return 3;
    case EnvId::PCTSP: return 4;
    case EnvId::PDP: return 4;
  }
  return 2;
}

template <typename T>
void add_init_params(Builder<T>& b, const std::string& prefix, const PolicyConfig& c) {
  const Index d = c.embedding_dim;
  if (c.env != EnvId::TSP) b.affine(prefix + "init.depot", 2, d);
  if (c.env == EnvId::PDP) {
    b.affine(prefix + "init.pickup", 4, d);
    b.affine(prefix + "init.delivery", 2, d);
  } else {
    b.affine(prefix + "init.node", node_features(c.env), d);
  }
}

template <typename T>
void add_encoder_params(Builder<T>& b, const std::string& prefix, const PolicyConfig& c) {
  const Index d = c.embedding_dim;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  for (Index l = 0; l < c.num_layers; ++l) {
    const std::string block = prefix + "encoder.block" + std::to_string(l);
    for (const char* w : {".mha.wq", ".mha.wk", ".mha.wv", ".mha.wo"}) b.uniform(block + w, {d, d}, bound);
    b.norm(block + ".norm1", d, c.normalization);
    b.affine(block + ".ff.0", d, c.hidden_dim);
    b.affine(block + ".ff.1", c.hidden_dim, d);
    b.norm(block + ".norm2", d, c.normalization);
  }
}

template <typename T>
Var<T> param(Tape<T>& tape, ParamSet<T>& ps, const std::string& name) {
  return tape.param(ps.at(name));
}

template <typename T>
Var<T> affine(Tape<T>& tape, ParamSet<T>& ps, const std::string& name, const Var<T>& x) {
  return linear(x, param(tape, ps, name + ".weight"), param(tape, ps, name + ".bias"));
}

// Constant feature block rows[b, j, :] for nodes [from, to) of every instance.
template <typename T>
Tensor<T> features(const InstanceBatch& in, Index from, Index to, Index width,
                   const std::function<void(Index b, Index j, T* out)>& fill) {
  const Index batch = in.batch();
  Tensor<T> f({batch, to - from, width});
  for (Index b = 0; b < batch; ++b)
    for (Index j = from; j < to; ++j) fill(b, j, f.data() + ((b * (to - from)) + (j - from)) * width);
  return f;
}

template <typename T>
Var<T> embed(Tape<T>& tape, ParamSet<T>& ps, const std::string& prefix, const PolicyConfig& c, const InstanceBatch& in) {
  if (in.env != c.env)
    fail(ErrorCode::UnknownEnv, "policy built for " + std::string(env_name(c.env)) + " got " + std::string(env_name(in.env)) + " instances");
  const Index n = in.nodes();
  auto xy = [&](Index b, Index j, T* out) {
    out[0] = static_cast<T>(in.locs[(b * n + j) * 2]);
    out[1] = static_cast<T>(in.locs[(b * n + j) * 2 + 1]);
  };
  if (c.env == EnvId::TSP)
    return affine(tape, ps, prefix + "init.node", tape.constant(features<T>(in, 0, n, 2, xy)));
  const Var<T> depot = affine(tape, ps, prefix + "init.depot", tape.constant(features<T>(in, 0, 1, 2, xy)));
  if (c.env == EnvId::PDP) {
    const Index p = in.num_pairs;
    auto pickup = [&](Index b, Index j, T* out) {
      xy(b, j, out);
      xy(b, j + p, out + 2);
    };
    const Var<T> pick_emb = affine(tape, ps, prefix + "init.pickup", tape.constant(features<T>(in, 1, p + 1, 4, pickup)));
    const Var<T> drop_emb = affine(tape, ps, prefix + "init.delivery", tape.constant(features<T>(in, p + 1, n, 2, xy)));
    return concat<T>({depot, pick_emb, drop_emb}, 1);
  }
  const Index width = node_features(c.env);
  auto node = [&](Index b, Index j, T* out) {
    xy(b, j, out);
    switch (c.env) {
      case EnvId::CVRP: out[2] = static_cast<T>(in.demand[b * n + j]); break;
      case EnvId::OP: out[2] = static_cast<T>(in.prize[b * n + j]); break;
      case EnvId::PCTSP:
        out[2] = static_cast<T>(in.prize[b * n + j]);
        out[3] = static_cast<T>(in.penalty[b * n + j]);
        break;
      default: break;
    }
  };
  const Var<T> nodes = affine(tape, ps, prefix + "init.node", tape.constant(features<T>(in, 1, n, width, node)));
  return concat<T>({depot, nodes}, 1);
}

template <typename T>
Var<T> normalize(Tape<T>& tape, ParamSet<T>& ps, const std::string& name, const PolicyConfig& c, const Var<T>& x,
                 bool training) {
  const Var<T> gamma = param(tape, ps, name + ".gamma"), beta = param(tape, ps, name + ".beta");
  if (c.normalization == Normalization::Instance) return instance_norm(x, gamma, beta);
  return batch_norm(x, gamma, beta, &ps.at(name + ".running_mean").value, &ps.at(name + ".running_var").value, training);
}

template <typename T>
Var<T> run_encoder(Tape<T>& tape, ParamSet<T>& ps, const std::string& prefix, const PolicyConfig& c, Var<T> h,
                   bool training) {
  if (h.shape().size() != 3 || h.dim(2) != c.embedding_dim)
    fail(ErrorCode::ShapeMismatch, "encoder expects [B, N, " + std::to_string(c.embedding_dim) + "], got " + to_string(h.shape()));
  for (Index l = 0; l < c.num_layers; ++l) {
    const std::string block = prefix + "encoder.block" + std::to_string(l);
    const MhaWeights<T> w{param(tape, ps, block + ".mha.wq"), param(tape, ps, block + ".mha.wk"),
                          param(tape, ps, block + ".mha.wv"), param(tape, ps, block + ".mha.wo")};
    h = normalize(tape, ps, block + ".norm1", c, h + mha(h, h, h, w, c.num_heads), training);
    const Var<T> ff = affine(tape, ps, block + ".ff.1", relu(affine(tape, ps, block + ".ff.0", h)));
    h = normalize(tape, ps, block + ".norm2", c, h + ff, training);
  }
  return h;
}

// h[b, index[b]] where use[b], otherwise the placeholder vector.
template <typename T>
Var<T> node_or_placeholder(Tape<T>& tape, const Var<T>& h, const TensorI& index, const std::vector<bool>& use,
                           const Var<T>& placeholder) {
  const Index batch = h.dim(0), d = h.dim(2);
  std::size_t used = 0;
  for (bool u : use) used += u;
  const Var<T> ph = take_rows(reshape(placeholder, {1, d}), std::vector<Index>(static_cast<std::size_t>(batch), 0));
  if (used == 0) return ph;
  if (used == use.size()) return gather_nodes(h, index);
  Tensor<T> keep({batch, d}), drop({batch, d});
  for (Index b = 0; b < batch; ++b) {
    keep.array().segment(b * d, d).setConstant(use[b] ? T(1) : T(0));
    drop.array().segment(b * d, d).setConstant(use[b] ? T(0) : T(1));
  }
  return gather_nodes(h, index) * tape.constant(std::move(keep)) + ph * tape.constant(std::move(drop));
}

}  // namespace

template <typename T>
EncoderOutput<T> DynamicEmbedding<T>::apply(Tape<T>&, const EncoderOutput<T>& enc, const InstanceBatch&,
                                            const KeyedBatch&) const {
  return enc;
}

template <typename T>
EncoderOutput<T> FeatureDynamicEmbedding<T>::apply(Tape<T>& tape, const EncoderOutput<T>& enc, const InstanceBatch& in,
                                                   const KeyedBatch& state) const {
  const Index d = enc.h.dim(2);
  const Var<T> delta = linear(tape.constant(features_(in, state)), tape.param(*weight_));
  EncoderOutput<T> out = enc;
  out.glimpse_key = enc.glimpse_key + slice(delta, 2, 0, d);
  out.glimpse_value = enc.glimpse_value + slice(delta, 2, d, d);
  out.logit_key = enc.logit_key + slice(delta, 2, 2 * d, d);
  return out;
}

template <typename T>
void add_eas_params(ParamSet<T>& params, Index dim, std::uint64_t seed) {
  Builder<T> b{params, PhiloxStream(seed, 0)};
  b.affine("eas.w1", dim, dim);
  params.add("eas.w2.weight", Tensor<T>({dim, dim}));
  params.add("eas.w2.bias", Tensor<T>({dim}));
}

template <typename T>
Policy<T>::Policy(const PolicyConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Builder<T> b{params_, PhiloxStream(seed, 0)};
  const Index d = config_.embedding_dim;
  add_init_params(b, "", config_);
  add_encoder_params(b, "", config_);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  for (const char* w : {"decoder.project.glimpse_key", "decoder.project.glimpse_value", "decoder.project.logit_key"})
    b.uniform(w, {d, d}, bound);
  Index ctx = config_.use_graph_context ? d : 0;
  if (config_.env == EnvId::TSP) {
    ctx += 2 * d;
    b.uniform("decoder.placeholder.first", {d}, 1.0);
    b.uniform("decoder.placeholder.current", {d}, 1.0);
  } else {
    ctx += d + (config_.env == EnvId::PDP ? 0 : 1);
  }
  b.uniform("decoder.context.weight", {ctx, d}, 1.0 / std::sqrt(static_cast<double>(ctx)));
  b.uniform("decoder.glimpse.wo", {d, d}, bound);
}

template <typename T>
Var<T> Policy<T>::init_embedding(Tape<T>& tape, const InstanceBatch& in) {
  return embed(tape, params_, "", config_, in);
}

template <typename T>
EncoderOutput<T> Policy<T>::encode(Tape<T>& tape, const Var<T>& embeddings) {
  EncoderOutput<T> out;
  out.h = run_encoder(tape, params_, "", config_, embeddings, training);
  out.graph = mean_axis(out.h, 1);
  out.glimpse_key = linear(out.h, param(tape, params_, "decoder.project.glimpse_key"));
  out.glimpse_value = linear(out.h, param(tape, params_, "decoder.project.glimpse_value"));
  out.logit_key = linear(out.h, param(tape, params_, "decoder.project.logit_key"));
  return out;
}

template <typename T>
Var<T> Policy<T>::context(Tape<T>& tape, const EncoderOutput<T>& enc, const InstanceBatch& in, const KeyedBatch& state) {
  const Index batch = in.batch();
  std::vector<Var<T>> parts;
  if (config_.use_graph_context) parts.push_back(enc.graph);
  const TensorI& current = state.current();
  if (config_.env == EnvId::TSP) {
    const TensorI& step = state.get<std::int32_t>("i");
    std::vector<bool> started(static_cast<std::size_t>(batch));
    for (Index b = 0; b < batch; ++b) started[b] = step[b] > 0;
    parts.push_back(node_or_placeholder(tape, enc.h, state.get<std::int32_t>("first_node"), started,
                                        param(tape, params_, "decoder.placeholder.first")));
    parts.push_back(node_or_placeholder(tape, enc.h, current, started, param(tape, params_, "decoder.placeholder.current")));
  } else {
    parts.push_back(gather_nodes(enc.h, current));
    if (config_.env != EnvId::PDP) {
      Tensor<T> scalar({batch, 1});
      for (Index b = 0; b < batch; ++b) {
        switch (config_.env) {
          case EnvId::CVRP: scalar[b] = T(1) - static_cast<T>(state.get<float>("used_capacity")[b]); break;
          case EnvId::OP:
            scalar[b] = static_cast<T>(in.max_length[b]) - static_cast<T>(state.get<float>("tour_length")[b]);
            break;
          case EnvId::PCTSP:
            scalar[b] = std::max(T(0), static_cast<T>(in.required_prize[b]) -
                                           static_cast<T>(state.get<float>("collected_prize")[b]));
            break;
          default: break;
        }
      }
      parts.push_back(tape.constant(std::move(scalar)));
    }
  }
  return linear(concat(parts, 1), param(tape, params_, "decoder.context.weight"));
}

template <typename T>
Var<T> Policy<T>::decode_step(Tape<T>& tape, const EncoderOutput<T>& base, const Var<T>& query, const InstanceBatch& in,
                              const KeyedBatch& state, const DecodeHooks<T>& hooks) {
  const EncoderOutput<T> enc = hooks.dynamic ? hooks.dynamic->apply(tape, base, in, state) : base;
  const Index batch = query.dim(0), d = query.dim(1), n = enc.h.dim(1);
  const TensorB& mask = state.mask();
  const TensorB glimpse_mask = mask.reshaped({batch, 1, n});
  Var<T> glimpse = attention(reshape(query, {batch, 1, d}), enc.glimpse_key, enc.glimpse_value, config_.num_heads,
                             config_.mask_glimpse ? &glimpse_mask : nullptr);
  glimpse = linear(reshape(glimpse, {batch, d}), param(tape, params_, "decoder.glimpse.wo"));
  if (hooks.eas) {
    ParamSet<T>& e = *hooks.eas;
    const Var<T> hidden = relu(affine(tape, e, "eas.w1", glimpse));
    glimpse = glimpse + affine(tape, e, "eas.w2", hidden);
  }
  Var<T> logits = scale(batched_dot(glimpse, enc.logit_key), T(1) / std::sqrt(static_cast<T>(d)));
  if (config_.tanh_clipping > 0) logits = tanh_clip(logits, static_cast<T>(config_.tanh_clipping));
  return masked_log_softmax(logits, mask, static_cast<T>(config_.softmax_temp));
}

template <typename T>
void load_params(ParamSet<T>& target, const ParamSet<T>& source) {
  if (target.size() != source.size()) {
    for (std::size_t i = 0; i < target.size(); ++i)
      if (!source.contains(target.name(i)))
        fail(ErrorCode::ShapeMismatchOnLoad, "checkpoint has no array " + target.name(i));
    for (std::size_t i = 0; i < source.size(); ++i)
      if (!target.contains(source.name(i)))
        fail(ErrorCode::ShapeMismatchOnLoad, "model has no array " + source.name(i));
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    const std::string& name = target.name(i);
    if (!source.contains(name)) fail(ErrorCode::ShapeMismatchOnLoad, "checkpoint has no array " + name);
    const auto& src = source.at(name).value;
    if (src.shape() != target[i].value.shape())
      fail(ErrorCode::ShapeMismatchOnLoad, name + ": checkpoint " + to_string(src.shape()) + " vs model " +
                                               to_string(target[i].value.shape()));
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    target[i].value = source.at(target.name(i)).value;
    target[i].zero_grad();
  }
}

// ---- rollout -------------------------------------------------------------------------

template <typename T>
Trajectory<T> rollout(Policy<T>& policy, Tape<T>& tape, const InstanceBatch& in, const RolloutOptions& options,
                      const DecodeHooks<T>& hooks) {
  const Index batch = in.batch(), n = in.nodes();
  if (!options.streams.empty() && static_cast<Index>(options.streams.size()) != batch)
    fail(ErrorCode::ShapeMismatch, "rollout: one sampling stream per row expected");
  if (options.first_actions && options.first_actions->size() != batch)
    fail(ErrorCode::ShapeMismatch, "rollout: first_actions must have one entry per row");
  if (options.actions && (options.actions->rank() != 2 || options.actions->dim(0) != batch))
    fail(ErrorCode::ShapeMismatch, "rollout: teacher-forced actions must be [B, T]");
  const Index forced_len = options.actions ? options.actions->dim(1) : 0;
  const Philox gen(options.seed);

  const EncoderOutput<T> enc = policy.encode(tape, in);
  KeyedBatch state = reset(in);
  std::vector<std::int32_t> taken;  // step-major
  Var<T> logprob, entropy;
  Tensor<T> steps_alive({batch});
  const Index limit = max_steps(in);
  Index t = 0;
  for (; t < limit && !state.all_done(); ++t) {
    const Var<T> query = policy.context(tape, enc, in, state);
    const Var<T> logp = policy.decode_step(tape, enc, query, in, state, hooks);
    const TensorB& mask = state.mask();
    const TensorB& done = state.done();
    const T* lp = logp.value().data();
    TensorI action({batch});
    Tensor<T> alive({batch});
    std::vector<T> prob(static_cast<std::size_t>(n));
    for (Index b = 0; b < batch; ++b) {
      if (done[b]) continue;
      alive[b] = T(1);
      steps_alive[b] += T(1);
      const T* row = lp + b * n;
      const std::uint8_t* m = mask.data() + b * n;
      std::int32_t a;
      if (options.actions) {
        a = t < forced_len ? (*options.actions)[b * forced_len + t] : 0;
      } else if (t == 0 && options.first_actions && (*options.first_actions)[b] >= 0) {
        a = (*options.first_actions)[b];
      } else if (options.type == DecodeType::Greedy) {
        a = masked_argmax(row, m, n);
      } else {
        for (Index j = 0; j < n; ++j) prob[j] = m[j] ? std::exp(row[j]) : T(0);
        const std::uint64_t stream = options.streams.empty() ? static_cast<std::uint64_t>(b) : options.streams[b];
        a = inverse_cdf(prob.data(), m, n, gen.uniform(stream, static_cast<std::uint64_t>(t)));
      }
      if (a < 0 || a >= n || !m[a])
        fail(ErrorCode::InfeasibleAction, "rollout row " + std::to_string(b) + " step " + std::to_string(t) +
                                              ": action " + std::to_string(a) + " is masked");
      action[b] = a;
    }
    const Var<T> alive_v = tape.constant(alive);
    const Var<T> step_lp = pick(logp, action) * alive_v;
    logprob = logprob.valid() ? logprob + step_lp : step_lp;
    if (options.entropy) {
      const Var<T> h = masked_entropy(logp, mask) * alive_v;
      entropy = entropy.valid() ? entropy + h : h;
    }
    taken.insert(taken.end(), action.data(), action.data() + batch);
    state = step(in, state, action);
  }
  if (!state.all_done()) fail(ErrorCode::InfeasibleSolution, "rollout did not finish within the step limit");

  Trajectory<T> out;
  out.actions = TensorI({batch, t});
  for (Index k = 0; k < t; ++k)
    for (Index b = 0; b < batch; ++b) out.actions[b * t + k] = taken[static_cast<std::size_t>(k * batch + b)];
  out.logprob = logprob.valid() ? logprob : tape.constant(Tensor<T>({batch}));
  if (options.entropy) {
    Tensor<T> inv({batch});
    for (Index b = 0; b < batch; ++b) inv[b] = steps_alive[b] > 0 ? T(1) / steps_alive[b] : T(0);
    out.entropy = entropy.valid() ? entropy * tape.constant(std::move(inv)) : tape.constant(Tensor<T>({batch}));
  }
  if (options.reward) out.reward = reward(in, out.actions);
  return out;
}

TensorF greedy_reward(Policy<float>& policy, const InstanceBatch& in, Index chunk) {
  const bool was = policy.training;
  policy.training = false;
  TensorF out({in.batch()});
  for (Index start = 0; start < in.batch(); start += chunk) {
    const Index len = std::min(chunk, in.batch() - start);
    std::vector<Index> rows(static_cast<std::size_t>(len));
    for (Index r = 0; r < len; ++r) rows[r] = start + r;
    Tape<float> tape(false);
    const auto traj = rollout(policy, tape, in.take(rows));
    std::copy_n(traj.reward.data(), len, out.data() + start);
  }
  policy.training = was;
  return out;
}

// ---- critic --------------------------------------------------------------------------

template <typename T>
Critic<T>::Critic(const PolicyConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Builder<T> b{params_, PhiloxStream(seed, 1)};
  add_init_params(b, "critic.", config_);
  add_encoder_params(b, "critic.", config_);
  b.affine("critic.head.0", config_.embedding_dim, config_.hidden_dim);
  b.affine("critic.head.1", config_.hidden_dim, 1);
}

template <typename T>
Var<T> Critic<T>::value(Tape<T>& tape, const InstanceBatch& in) {
  Var<T> h = run_encoder(tape, params_, "critic.", config_, embed(tape, params_, "critic.", config_, in), training);
  const Var<T> pooled = mean_axis(h, 1);
  const Var<T> v = affine(tape, params_, "critic.head.1", relu(affine(tape, params_, "critic.head.0", pooled)));
  return reshape(v, {in.batch()});
}

#define NCO_INSTANTIATE_POLICY(T)                                                                          \
  template class DynamicEmbedding<T>;                                                                      \
  template class FeatureDynamicEmbedding<T>;                                                               \
  template void add_eas_params<T>(ParamSet<T>&, Index, std::uint64_t);                                    \
  template class Policy<T>;                                                                                \
  template void load_params<T>(ParamSet<T>&, const ParamSet<T>&);                                          \
  template Trajectory<T> rollout<T>(Policy<T>&, Tape<T>&, const InstanceBatch&, const RolloutOptions&,     \
                                    const DecodeHooks<T>&);                                                \
  template class Critic<T>;

NCO_INSTANTIATE_POLICY(float)
NCO_INSTANTIATE_POLICY(double)

}  // namespace nco
