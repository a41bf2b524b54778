#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "quadleague/checkpoint.hpp"
#include "quadleague/env.hpp"
#include "quadleague/policy.hpp"
#include "quadleague/rng.hpp"
#include "quadleague/tape.hpp"

namespace quadleague {

// ---------------------------------------------------------------------------
// PPO configuration and schedules
// ---------------------------------------------------------------------------

struct PPOConfig {
  double gamma = 0.985;
  double gae_lambda = 0.95;
  double clip_range = 0.2;
  double entropy_coef = 0.001;
  int epochs = 10;
  double lr_init = 3e-4;
  double lr_final = 5e-5;
  int environments = 144;
  int rollout_steps = 250;
  int iterations = 5500;
  int minibatches = 8;
  int bptt_segment = 32;
  double value_coef = 0.5;
  double max_grad_norm = 0.5;

  int batch_size() const { return environments * rollout_steps; }
};

// Linear decay over the first half of training, constant afterwards.
inline double learning_rate(const PPOConfig& cfg, int iteration) {
  const double half = 0.5 * cfg.iterations;
  if (iteration >= half) return cfg.lr_final;
  const double f = iteration / half;
  return cfg.lr_init + f * (cfg.lr_final - cfg.lr_init);
}

// ---------------------------------------------------------------------------
// Generalized advantage estimation
// ---------------------------------------------------------------------------

// delta_t = r_t + gamma*V_{t+1}*(1-done_t) - V_t
// A_t     = delta_t + gamma*lambda*(1-done_t)*A_{t+1}
inline std::pair<std::vector<double>, std::vector<double>> compute_gae(
    const std::vector<double>& rewards, const std::vector<double>& values,
    const std::vector<uint8_t>& terminals, double gamma, double lambda,
    double bootstrap_value = 0.0) {
  if (rewards.size() != values.size() || rewards.size() != terminals.size())
    throw std::invalid_argument("compute_gae: length mismatch");
  const int n = static_cast<int>(rewards.size());
  std::vector<double> adv(static_cast<size_t>(n), 0.0);
  std::vector<double> ret(static_cast<size_t>(n), 0.0);
  double gae = 0.0;
  for (int t = n - 1; t >= 0; --t) {
    const double nonterminal = terminals[static_cast<size_t>(t)] ? 0.0 : 1.0;
    const double v_next = (t == n - 1) ? bootstrap_value : values[static_cast<size_t>(t) + 1];
    const double delta = rewards[static_cast<size_t>(t)] + gamma * v_next * nonterminal -
                         values[static_cast<size_t>(t)];
    gae = delta + gamma * lambda * nonterminal * gae;
    adv[static_cast<size_t>(t)] = gae;
    ret[static_cast<size_t>(t)] = gae + values[static_cast<size_t>(t)];
  }
  return {adv, ret};
}

// ---------------------------------------------------------------------------
// League opponent sampling
// ---------------------------------------------------------------------------

struct LeagueConfig {
  double alpha = 0.9;           // power-law exponent over checkpoint history
  double self_play_prob = 0.75; // probability of drawing from own history
  int checkpoint_every = 100;   // iterations between history snapshots
  int roster_single = 4;        // fixed-pool single-agent policies
  int roster_independent = 16;  // fixed-pool independent-PPO policies
};

// P(k) = k^alpha / sum_j j^alpha over k in 1..K (K most recent).
inline std::vector<double> power_law_probs(int K, double alpha) {
  std::vector<double> p(static_cast<size_t>(K));
  double total = 0.0;
  for (int k = 1; k <= K; ++k) total += std::pow(static_cast<double>(k), alpha);
  for (int k = 1; k <= K; ++k) p[static_cast<size_t>(k) - 1] = std::pow(k, alpha) / total;
  return p;
}

inline int sample_checkpoint_index(int K, double alpha, Rng& rng) {
  if (K < 1) throw std::invalid_argument("sample_checkpoint_index: K must be >= 1");
  double total = 0.0;
  for (int k = 1; k <= K; ++k) total += std::pow(static_cast<double>(k), alpha);
  double u = rng.uniform() * total;
  for (int k = 1; k <= K; ++k) {
    u -= std::pow(static_cast<double>(k), alpha);
    if (u < 0.0) return k;
  }
  return K;
}

template <class S>
struct LeaguePool {
  std::vector<PolicyHandle<S>> history;  // chronological, index 0 = earliest
  std::vector<PolicyHandle<S>> roster;   // fixed league opponents
  double alpha = 0.9;
  double self_play_prob = 0.75;

  void add_checkpoint(PolicyHandle<S> h) { history.push_back(std::move(h)); }

  // One draw per opponent slot: 75% own history (power-law over recency),
  // otherwise uniform from the fixed roster. Falls back to a copy of the
  // current policy when both pools are empty. `history_slots`, when given,
  // counts slots served from the agent's own lineage (history or self-copy).
  std::vector<PolicyHandle<S>> assign_opponents(int n_opponents, Rng& rng,
                                                const PolicyHandle<S>& current,
                                                int* history_slots = nullptr) const {
    std::vector<PolicyHandle<S>> out;
    out.reserve(static_cast<size_t>(n_opponents));
    for (int i = 0; i < n_opponents; ++i) {
      const bool from_history = rng.uniform() < self_play_prob;
      if (from_history) {
        if (!history.empty()) {
          const int k = sample_checkpoint_index(static_cast<int>(history.size()), alpha, rng);
          out.push_back(history[static_cast<size_t>(k) - 1]);
        } else {
          out.push_back(current);  // self-copy before the first checkpoint
        }
        if (history_slots) ++*history_slots;
      } else if (!roster.empty()) {
        out.push_back(roster[rng.uniform_int(roster.size())]);
      } else if (!history.empty()) {
        const int k = sample_checkpoint_index(static_cast<int>(history.size()), alpha, rng);
        out.push_back(history[static_cast<size_t>(k) - 1]);
        if (history_slots) ++*history_slots;
      } else {
        out.push_back(current);
        if (history_slots) ++*history_slots;
      }
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Adam with global-norm gradient clipping
// ---------------------------------------------------------------------------

template <class S>
class Adam {
 public:
  explicit Adam(std::vector<nn::Tensor<S>*> params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto* p : params_) {
      m_.push_back(nn::Mat<S>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(nn::Mat<S>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  double gradient_norm() const {
    double sq = 0.0;
    for (const auto* p : params_) {
      const S* g = p->grad.data();
      for (Eigen::Index i = 0; i < p->grad.size(); ++i)
        sq += static_cast<double>(g[i]) * static_cast<double>(g[i]);
    }
    return std::sqrt(sq);
  }

  // Applies one update from the accumulated gradients, then clears them.
  void step(double lr, double max_grad_norm = 0.0) {
    S scale = S(1);
    if (max_grad_norm > 0.0) {
      const double norm = gradient_norm();
      if (norm > max_grad_norm) scale = static_cast<S>(max_grad_norm / norm);
    }
    ++t_;
    const S b1 = static_cast<S>(beta1_), b2 = static_cast<S>(beta2_);
    const S one_b1 = S(1) - b1, one_b2 = S(1) - b2;
    const S inv_bc1 = static_cast<S>(1.0 / (1.0 - std::pow(beta1_, t_)));
    const S inv_bc2 = static_cast<S>(1.0 / (1.0 - std::pow(beta2_, t_)));
    const S eps = static_cast<S>(eps_);
    const S step_size = static_cast<S>(lr);
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      const Eigen::Index n = p.value.size();
      Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> val(p.value.data(), n);
      Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> grad(p.grad.data(), n);
      Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> m(m_[i].data(), n);
      Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> v(v_[i].data(), n);
      m = b1 * m + (one_b1 * scale) * grad;
      v = b2 * v + (one_b2 * scale * scale) * grad.square();
      val -= (step_size * inv_bc1) * m / ((v * inv_bc2).sqrt() + eps);
      grad.setZero();
    }
  }

  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }

  const std::vector<nn::Mat<S>>& moments_m() const { return m_; }
  const std::vector<nn::Mat<S>>& moments_v() const { return v_; }
  nn::Mat<S>& moment_m(size_t i) { return m_[i]; }
  nn::Mat<S>& moment_v(size_t i) { return v_[i]; }
  const std::vector<nn::Tensor<S>*>& params() const { return params_; }

 private:
  std::vector<nn::Tensor<S>*> params_;
  std::vector<nn::Mat<S>> m_, v_;
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Rollout storage
// ---------------------------------------------------------------------------

// Transitions of one learner over (rollout_steps x environments); row t*E+e.
template <class S>
struct RolloutBuffer {
  int T = 0, E = 0;
  int bptt = 32;
  nn::Mat<S> ego;                                                // (T*E) x ego_dim
  std::vector<std::vector<std::vector<Eigen::VectorXd>>> records;  // [t][e] record set
  nn::Mat<S> pretanh;                                            // (T*E) x act
  std::vector<double> log_prob, value, reward;                   // T*E
  std::vector<uint8_t> reset_before;  // recurrent state reset before this row's step
  std::vector<uint8_t> terminal_after;
  std::vector<uint8_t> valid;
  std::vector<double> bootstrap;      // per env
  std::vector<nn::Mat<S>> seg_h, seg_c;  // per segment boundary: E x hidden
  std::vector<double> advantage, ret;    // filled by finish()

  void allocate(int steps, int envs, int ego_dim, int act_dim, int hidden, int bptt_segment) {
    T = steps;
    E = envs;
    bptt = bptt_segment;
    const int rows = T * E;
    ego = nn::Mat<S>::Zero(rows, ego_dim);
    records.assign(static_cast<size_t>(T), std::vector<std::vector<Eigen::VectorXd>>(
                                               static_cast<size_t>(E)));
    pretanh = nn::Mat<S>::Zero(rows, act_dim);
    log_prob.assign(static_cast<size_t>(rows), 0.0);
    value.assign(static_cast<size_t>(rows), 0.0);
    reward.assign(static_cast<size_t>(rows), 0.0);
    reset_before.assign(static_cast<size_t>(rows), 0);
    terminal_after.assign(static_cast<size_t>(rows), 0);
    valid.assign(static_cast<size_t>(rows), 1);
    bootstrap.assign(static_cast<size_t>(E), 0.0);
    const int n_segs = (T + bptt - 1) / bptt;
    seg_h.assign(static_cast<size_t>(n_segs), nn::Mat<S>::Zero(E, hidden));
    seg_c.assign(static_cast<size_t>(n_segs), nn::Mat<S>::Zero(E, hidden));
    advantage.assign(static_cast<size_t>(rows), 0.0);
    ret.assign(static_cast<size_t>(rows), 0.0);
  }

  int row(int t, int e) const { return t * E + e; }

  // GAE per environment sequence, then batch-normalized advantages over the
  // valid rows.
  void finish(double gamma, double lambda) {
    for (int e = 0; e < E; ++e) {
      std::vector<double> r(static_cast<size_t>(T)), v(static_cast<size_t>(T));
      std::vector<uint8_t> d(static_cast<size_t>(T));
      for (int t = 0; t < T; ++t) {
        r[static_cast<size_t>(t)] = reward[static_cast<size_t>(row(t, e))];
        v[static_cast<size_t>(t)] = value[static_cast<size_t>(row(t, e))];
        d[static_cast<size_t>(t)] = terminal_after[static_cast<size_t>(row(t, e))];
      }
      auto [adv, rt] = compute_gae(r, v, d, gamma, lambda, bootstrap[static_cast<size_t>(e)]);
      for (int t = 0; t < T; ++t) {
        advantage[static_cast<size_t>(row(t, e))] = adv[static_cast<size_t>(t)];
        ret[static_cast<size_t>(row(t, e))] = rt[static_cast<size_t>(t)];
      }
    }
    double mean = 0.0;
    int count = 0;
    for (size_t i = 0; i < advantage.size(); ++i)
      if (valid[i]) {
        mean += advantage[i];
        ++count;
      }
    if (count == 0) return;
    mean /= count;
    double var = 0.0;
    for (size_t i = 0; i < advantage.size(); ++i)
      if (valid[i]) var += (advantage[i] - mean) * (advantage[i] - mean);
    const double stddev = std::sqrt(var / count) + 1e-8;
    for (size_t i = 0; i < advantage.size(); ++i)
      if (valid[i]) advantage[i] = (advantage[i] - mean) / stddev;
  }
};

// ---------------------------------------------------------------------------
// PPO update
// ---------------------------------------------------------------------------

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
  int minibatches = 0;
};

namespace detail {

// Builds one tape minibatch from a set of environment sequences: every
// bptt-segment of every chosen sequence becomes one batched instance,
// initialized from the recurrent state stored at collection time.
template <class S>
typename Policy<S>::SegmentBatch make_segment_batch(const RolloutBuffer<S>& buf,
                                                    const std::vector<int>& env_ids,
                                                    const PolicyConfig& pc) {
  using SB = typename Policy<S>::SegmentBatch;
  const int n_segs = (buf.T + buf.bptt - 1) / buf.bptt;
  const int B = static_cast<int>(env_ids.size()) * n_segs;
  const int T = buf.bptt;
  SB sb;
  sb.T = T;
  sb.B = B;
  sb.ego = nn::Mat<S>::Zero(static_cast<Eigen::Index>(T) * B, pc.ego_dim);
  sb.pretanh = nn::Mat<S>::Zero(static_cast<Eigen::Index>(T) * B, pc.action_dim);
  sb.old_logp = nn::Mat<S>::Zero(static_cast<Eigen::Index>(T) * B, 1);
  sb.advantage = nn::Mat<S>::Zero(static_cast<Eigen::Index>(T) * B, 1);
  sb.ret = nn::Mat<S>::Zero(static_cast<Eigen::Index>(T) * B, 1);
  sb.valid = nn::Mat<S>::Zero(static_cast<Eigen::Index>(T) * B, 1);
  sb.reset = nn::Mat<S>::Zero(static_cast<Eigen::Index>(T) * B, 1);
  sb.h0 = nn::Mat<S>::Zero(B, pc.lstm_hidden);
  sb.c0 = nn::Mat<S>::Zero(B, pc.lstm_hidden);

  // gather record sets (padded to a common slot count across the minibatch)
  std::vector<std::vector<Eigen::VectorXd>> sets(static_cast<size_t>(T) * B);

  int b = 0;
  for (int seg = 0; seg < n_segs; ++seg) {
    for (int e : env_ids) {
      sb.h0.row(b) = buf.seg_h[static_cast<size_t>(seg)].row(e);
      sb.c0.row(b) = buf.seg_c[static_cast<size_t>(seg)].row(e);
      for (int t = 0; t < T; ++t) {
        const int gt = seg * buf.bptt + t;  // global step
        const int out_row = t * B + b;
        if (gt >= buf.T) continue;  // padded tail rows stay zero/invalid
        const int in_row = buf.row(gt, e);
        sb.ego.row(out_row) = buf.ego.row(in_row);
        sb.pretanh.row(out_row) = buf.pretanh.row(in_row);
        sb.old_logp(out_row, 0) = static_cast<S>(buf.log_prob[static_cast<size_t>(in_row)]);
        sb.advantage(out_row, 0) = static_cast<S>(buf.advantage[static_cast<size_t>(in_row)]);
        sb.ret(out_row, 0) = static_cast<S>(buf.ret[static_cast<size_t>(in_row)]);
        sb.valid(out_row, 0) = buf.valid[static_cast<size_t>(in_row)] ? S(1) : S(0);
        // the state stored at the segment boundary already accounts for a
        // reset at t == 0
        sb.reset(out_row, 0) =
            (t > 0 && buf.reset_before[static_cast<size_t>(in_row)]) ? S(1) : S(0);
        sets[static_cast<size_t>(out_row)] = buf.records[static_cast<size_t>(gt)][static_cast<size_t>(e)];
      }
      ++b;
    }
  }
  auto rb = RecordBatch<S>::build(sets, pc.record_dim);
  sb.records = std::move(rb.flat);
  sb.rec_mask = std::move(rb.mask);
  sb.slots = rb.slots;
  sb.all_empty = rb.all_empty;
  return sb;
}

}  // namespace detail

// Clipped-surrogate update over recurrent minibatches.
template <class S>
UpdateStats ppo_update(const RolloutBuffer<S>& buf, Policy<S>& policy, Adam<S>& optimizer,
                       const PPOConfig& cfg, double lr, Rng& rng) {
  UpdateStats stats;
  const PolicyConfig& pc = policy.config();
  std::vector<int> env_order(static_cast<size_t>(buf.E));
  std::iota(env_order.begin(), env_order.end(), 0);
  const int n_minibatches = std::min(cfg.minibatches, buf.E);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = env_order.size(); i > 1; --i)
      std::swap(env_order[i - 1], env_order[rng.uniform_int(i)]);
    for (int mb = 0; mb < n_minibatches; ++mb) {
      std::vector<int> ids;
      for (size_t j = static_cast<size_t>(mb); j < env_order.size();
           j += static_cast<size_t>(n_minibatches))
        ids.push_back(env_order[j]);
      if (ids.empty()) continue;
      auto sb = detail::make_segment_batch(buf, ids, pc);

      nn::Tape<S> tape(policy.generation());
      auto fwd = policy.forward_on_tape(tape, sb);
      using Ref = typename nn::Tape<S>::Ref;
      const int rows = sb.T * sb.B;

      // new log-prob of the stored pre-tanh samples
      Ref logp = policy.log_prob_on_tape(tape, fwd, sb.pretanh);
      Ref ratio = tape.exp(tape.sub(logp, tape.constant(sb.old_logp)));
      Ref adv = tape.constant(sb.advantage);
      Ref surr1 = tape.mul(ratio, adv);
      Ref surr2 = tape.mul(tape.clamp(ratio, S(1.0 - cfg.clip_range), S(1.0 + cfg.clip_range)), adv);
      Ref surr = tape.cwise_min(surr1, surr2);
      Ref valid = tape.constant(sb.valid);
      const double n_valid = std::max<double>(1.0, sb.valid.template cast<double>().sum());
      Ref policy_loss = tape.scale(tape.sum_all(tape.mul(surr, valid)), S(-1.0 / n_valid));

      Ref v_err = tape.sub(fwd.value, tape.constant(sb.ret));
      Ref value_loss =
          tape.scale(tape.sum_all(tape.mul(tape.square(v_err), valid)), S(0.5 / n_valid));

      // state-independent Gaussian entropy; the constant offset has no grad
      Ref entropy = tape.sum_all(fwd.logstd);

      Ref loss = tape.add(tape.add(policy_loss, tape.scale(value_loss, S(cfg.value_coef))),
                          tape.scale(entropy, S(-cfg.entropy_coef)));
      if (!std::isfinite(static_cast<double>(tape.scalar(loss)))) {
        std::ostringstream oss;
        oss << "ppo_update: non-finite loss (policy=" << tape.scalar(policy_loss)
            << " value=" << tape.scalar(value_loss) << " minibatch=" << mb
            << " epoch=" << epoch << ")";
        throw std::runtime_error(oss.str());
      }

      stats.policy_loss += static_cast<double>(tape.scalar(policy_loss));
      stats.value_loss += static_cast<double>(tape.scalar(value_loss));
      stats.entropy += static_cast<double>(tape.scalar(entropy)) +
                       0.5 * (1.0 + kLogTwoPi) * pc.action_dim;
      double clipped = 0.0;
      for (int r = 0; r < rows; ++r)
        if (sb.valid(r, 0) > S(0.5) &&
            std::abs(static_cast<double>(tape.val(ratio)(r, 0)) - 1.0) > cfg.clip_range)
          clipped += 1.0;
      stats.clip_fraction += clipped / n_valid;

      tape.backward(loss, policy.generation());
      stats.grad_norm += optimizer.gradient_norm();
      optimizer.step(lr, cfg.max_grad_norm);
      policy.bump_generation();
      ++stats.minibatches;
    }
  }
  if (stats.minibatches > 0) {
    stats.policy_loss /= stats.minibatches;
    stats.value_loss /= stats.minibatches;
    stats.entropy /= stats.minibatches;
    stats.clip_fraction /= stats.minibatches;
    stats.grad_norm /= stats.minibatches;
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Checkpoint composition
// ---------------------------------------------------------------------------

template <class S>
Checkpoint<S> make_policy_checkpoint(Policy<S>& policy, const Adam<S>* optimizer = nullptr,
                                     int64_t iteration = 0, double curriculum_progress = 0.0) {
  Checkpoint<S> c;
  const auto& pc = policy.config();
  c.meta_int["iteration"] = iteration;
  c.meta_int["ego_dim"] = pc.ego_dim;
  c.meta_int["record_dim"] = pc.record_dim;
  c.meta_int["latents"] = pc.latents;
  c.meta_int["heads"] = pc.heads;
  c.meta_int["head_dim"] = pc.head_dim;
  c.meta_int["embed_dim"] = pc.embed_dim;
  c.meta_int["lstm_hidden"] = pc.lstm_hidden;
  c.meta_int["mlp_hidden"] = pc.mlp_hidden;
  c.meta_int["action_dim"] = pc.action_dim;
  c.meta_int["flat_encoder"] = pc.flat_encoder ? 1 : 0;
  c.meta_int["adam_steps"] = optimizer ? optimizer->step_count() : 0;
  c.meta_double["curriculum_progress"] = curriculum_progress;
  c.meta_double["logstd_min"] = pc.logstd_min;
  c.meta_double["logstd_max"] = pc.logstd_max;
  for (auto* t : policy.tensors()) c.put_tensor(t->name, t->value);
  if (optimizer) {
    const auto& params = optimizer->params();
    for (size_t i = 0; i < params.size(); ++i) {
      c.put_tensor("adam.m." + params[i]->name, optimizer->moments_m()[i]);
      c.put_tensor("adam.v." + params[i]->name, optimizer->moments_v()[i]);
    }
  }
  return c;
}

template <class S>
PolicyConfig config_from_checkpoint(const Checkpoint<S>& c) {
  PolicyConfig pc;
  pc.ego_dim = static_cast<int>(c.meta_int.at("ego_dim"));
  pc.record_dim = static_cast<int>(c.meta_int.at("record_dim"));
  pc.latents = static_cast<int>(c.meta_int.at("latents"));
  pc.heads = static_cast<int>(c.meta_int.at("heads"));
  pc.head_dim = static_cast<int>(c.meta_int.at("head_dim"));
  pc.embed_dim = static_cast<int>(c.meta_int.at("embed_dim"));
  pc.lstm_hidden = static_cast<int>(c.meta_int.at("lstm_hidden"));
  pc.mlp_hidden = static_cast<int>(c.meta_int.at("mlp_hidden"));
  pc.action_dim = static_cast<int>(c.meta_int.at("action_dim"));
  pc.flat_encoder = c.meta_int.at("flat_encoder") != 0;
  pc.logstd_min = c.meta_double.at("logstd_min");
  pc.logstd_max = c.meta_double.at("logstd_max");
  return pc;
}

template <class S>
void load_policy_tensors(Policy<S>& policy, const Checkpoint<S>& c,
                         Adam<S>* optimizer = nullptr) {
  for (auto* t : policy.tensors()) {
    const auto& src = c.tensor(t->name);
    if (src.rows() != t->value.rows() || src.cols() != t->value.cols())
      throw std::runtime_error("load_policy_tensors: shape mismatch for " + t->name);
    t->value = src;
    t->grad.setZero();
  }
  policy.bump_generation();
  if (optimizer) {
    const auto& params = optimizer->params();
    for (size_t i = 0; i < params.size(); ++i) {
      if (c.has_tensor("adam.m." + params[i]->name)) {
        optimizer->moment_m(i) = c.tensor("adam.m." + params[i]->name);
        optimizer->moment_v(i) = c.tensor("adam.v." + params[i]->name);
      }
    }
    optimizer->set_step_count(c.meta_int.at("adam_steps"));
  }
}

template <class S>
PolicyHandle<S> load_policy_handle(const std::string& path) {
  auto c = Checkpoint<S>::load(path);
  auto policy = std::make_shared<Policy<S>>(config_from_checkpoint(c));
  load_policy_tensors(*policy, c);
  return policy;
}

// ---------------------------------------------------------------------------
// Trainer: rollout collection + updates for single / league / independent
// ---------------------------------------------------------------------------

struct IterationStats {
  int iteration = 0;
  int learner = 0;
  double lr = 0.0;
  double reward_mean = 0.0;
  double prog_mean = 0.0, omega_mean = 0.0, prox_mean = 0.0, rank_mean = 0.0, penalty_mean = 0.0;
  int episodes_ended = 0;
  int term_finished = 0, term_gate = 0, term_wall = 0, term_opponent = 0, term_timeout = 0;
  int max_gates_in_episode = 0;
  double completion_rate = 0.0;
  double policy_loss = 0.0, value_loss = 0.0, entropy = 0.0, clip_fraction = 0.0;
  double opponent_history_fraction = 0.0;  // league: share of slots from own history
};

enum class TrainMode { single_agent, league, independent };

struct TrainerOptions {
  TrainMode mode = TrainMode::single_agent;
  PPOConfig ppo;
  LeagueConfig league;
  CurriculumConfig curriculum;
  EnvConfig env;
  PolicyConfig policy;
  Track track;
  uint64_t seed = 1;
  std::string checkpoint_dir;  // empty: keep history in memory only
  std::function<void(const IterationStats&)> on_iteration;
};

template <class S>
class Trainer {
 public:
  explicit Trainer(TrainerOptions opts) : opts_(std::move(opts)), rng_(opts_.seed) {
    const int learners = opts_.mode == TrainMode::independent ? opts_.env.n_agents : 1;
    if (opts_.mode == TrainMode::single_agent) opts_.env.n_agents = 1;
    if (opts_.mode != TrainMode::independent && opts_.env.n_agents < 1)
      throw std::invalid_argument("Trainer: bad agent count");

    opts_.policy.ego_dim = kEgoObservationDim;
    opts_.policy.record_dim = kOpponentRecordDim;
    for (int l = 0; l < learners; ++l) {
      auto p = std::make_shared<Policy<S>>(opts_.policy);
      Rng init_rng = rng_.child(0x9100 + l);
      p->init(init_rng);
      learners_.push_back(std::move(p));
      optimizers_.emplace_back(std::make_unique<Adam<S>>(learners_.back()->tensors()));
      pools_.emplace_back();
      pools_.back().alpha = opts_.league.alpha;
      pools_.back().self_play_prob = opts_.league.self_play_prob;
    }
    curriculum_.cfg = opts_.curriculum;
    curriculum_.buffer = InitStateBuffer(opts_.curriculum.buffer_capacity);

    envs_.reserve(static_cast<size_t>(opts_.ppo.environments));
    for (int e = 0; e < opts_.ppo.environments; ++e)
      envs_.emplace_back(opts_.env, opts_.track, rng_.child(0x2000 + e).state());
    sample_rng_ = rng_.child(0x3000);
    league_rng_ = rng_.child(0x4000);

    const int E = opts_.ppo.environments;
    const int H = opts_.policy.lstm_hidden;
    for (int l = 0; l < learners; ++l) {
      rec_h_.push_back(nn::Mat<S>::Zero(E, H));
      rec_c_.push_back(nn::Mat<S>::Zero(E, H));
    }
    opp_h_.assign(static_cast<size_t>(E), {});
    opp_c_.assign(static_cast<size_t>(E), {});
    opp_rng_.assign(static_cast<size_t>(E), {});
    opp_handles_.assign(static_cast<size_t>(E), {});
  }

  Policy<S>& learner(int l = 0) { return *learners_[static_cast<size_t>(l)]; }
  const LeaguePool<S>& pool(int l = 0) const { return pools_[static_cast<size_t>(l)]; }
  LeaguePool<S>& pool_mut(int l = 0) { return pools_[static_cast<size_t>(l)]; }
  CurriculumState& curriculum() { return curriculum_; }
  int learner_count() const { return static_cast<int>(learners_.size()); }
  const std::vector<std::string>& checkpoint_paths() const { return checkpoint_paths_; }

  // Single training iteration: assign opponents, collect one rollout per
  // learner, run GAE + PPO, advance the curriculum, snapshot on cadence.
  std::vector<IterationStats> iterate() {
    const int it = iteration_;
    curriculum_.training_progress =
        opts_.ppo.iterations > 0 ? static_cast<double>(it) / opts_.ppo.iterations : 0.0;
    const double lr = learning_rate(opts_.ppo, it);

    for (auto& env : envs_) env.set_interactions_enabled(curriculum_.opponents_enabled());

    double history_fraction = 0.0;
    if (opts_.mode == TrainMode::league) history_fraction = assign_opponents_for_iteration();

    if (it == 0)
      for (auto& env : envs_) env.reset(curriculum_);

    std::vector<IterationStats> all_stats;
    collect_rollout();
    for (int l = 0; l < learner_count(); ++l) {
      buffers_[static_cast<size_t>(l)].finish(opts_.ppo.gamma, opts_.ppo.gae_lambda);
      const auto upd = ppo_update(buffers_[static_cast<size_t>(l)], *learners_[static_cast<size_t>(l)],
                                  *optimizers_[static_cast<size_t>(l)], opts_.ppo, lr, sample_rng_);
      IterationStats s = rollout_stats_[static_cast<size_t>(l)];
      s.iteration = it;
      s.learner = l;
      s.lr = lr;
      s.policy_loss = upd.policy_loss;
      s.value_loss = upd.value_loss;
      s.entropy = upd.entropy;
      s.clip_fraction = upd.clip_fraction;
      s.opponent_history_fraction = history_fraction;
      if (opts_.on_iteration) opts_.on_iteration(s);
      all_stats.push_back(s);
    }

    ++iteration_;
    if (iteration_ % opts_.league.checkpoint_every == 0 || iteration_ == opts_.ppo.iterations)
      snapshot_checkpoints();
    return all_stats;
  }

  void run() {
    while (iteration_ < opts_.ppo.iterations) iterate();
  }

  int iteration() const { return iteration_; }

 private:
  int n_opponents() const { return opts_.mode == TrainMode::league ? opts_.env.n_agents - 1 : 0; }

  double assign_opponents_for_iteration() {
    // self-copy fallback is only needed before the first checkpoint
    PolicyHandle<S> current;
    if (pools_[0].history.empty()) current = snapshot_policy(0);
    int history_slots = 0, total_slots = 0;
    for (size_t e = 0; e < envs_.size(); ++e) {
      opp_handles_[e] = pools_[0].assign_opponents(n_opponents(), league_rng_, current,
                                                   &history_slots);
      total_slots += n_opponents();
      opp_h_[e].assign(opp_handles_[e].size(), Eigen::Matrix<S, Eigen::Dynamic, 1>::Zero(
                                                   opts_.policy.lstm_hidden));
      opp_c_[e].assign(opp_handles_[e].size(), Eigen::Matrix<S, Eigen::Dynamic, 1>::Zero(
                                                   opts_.policy.lstm_hidden));
      // per-slot action-sampling streams keep results independent of the
      // batching order across policy handles
      opp_rng_[e].clear();
      for (size_t k = 0; k < opp_handles_[e].size(); ++k)
        opp_rng_[e].push_back(
            rng_.child(0x5000 + static_cast<uint64_t>(iteration_)).child(e).child(k));
    }
    return total_slots > 0 ? static_cast<double>(history_slots) / total_slots : 0.0;
  }

  PolicyHandle<S> snapshot_policy(int l) {
    return std::make_shared<Policy<S>>(*learners_[static_cast<size_t>(l)]);
  }

  void snapshot_checkpoints() {
    for (int l = 0; l < learner_count(); ++l) {
      auto handle = snapshot_policy(l);
      pools_[static_cast<size_t>(l)].add_checkpoint(handle);
      if (!opts_.checkpoint_dir.empty()) {
        auto c = make_policy_checkpoint(*learners_[static_cast<size_t>(l)],
                                        optimizers_[static_cast<size_t>(l)].get(), iteration_,
                                        curriculum_.training_progress);
        c.rng_cursors["trainer"] = rng_.state();
        c.rng_cursors["sampler"] = sample_rng_.state();
        c.rng_cursors["league"] = league_rng_.state();
        for (size_t e = 0; e < envs_.size(); ++e)
          c.rng_cursors["env" + std::to_string(e)] = envs_[e].rng().state();
        std::ostringstream name;
        name << "ckpt_l" << l << "_" << std::setw(6) << std::setfill('0') << iteration_ << ".bin";
        const std::string path =
            (std::filesystem::path(opts_.checkpoint_dir) / name.str()).string();
        c.save(path);
        checkpoint_paths_.push_back(path);
      }
    }
  }

  // Builds observations of one agent for its learner/opponent policy.
  Eigen::VectorXd ego_obs(RaceEnv& env, int agent) const {
    return encode_ego(env.ego_observation(agent), opts_.env.obs_scales);
  }
  std::vector<Eigen::VectorXd> opp_records(RaceEnv& env, int agent) const {
    std::vector<Eigen::VectorXd> out;
    for (const auto& rec : env.opponent_observations(agent))
      out.push_back(encode_opponent(rec, opts_.env.obs_scales));
    return out;
  }

  void collect_rollout() {
    const int T = opts_.ppo.rollout_steps;
    const int E = opts_.ppo.environments;
    const int L = learner_count();
    const PolicyConfig& pc = opts_.policy;

    buffers_.assign(static_cast<size_t>(L), {});
    rollout_stats_.assign(static_cast<size_t>(L), {});
    for (int l = 0; l < L; ++l)
      buffers_[static_cast<size_t>(l)].allocate(T, E, pc.ego_dim, pc.action_dim, pc.lstm_hidden,
                                                opts_.ppo.bptt_segment);

    std::vector<std::vector<Command>> actions(static_cast<size_t>(E));
    for (auto& a : actions) a.resize(static_cast<size_t>(opts_.env.n_agents));

    for (int t = 0; t < T; ++t) {
      if (t % opts_.ppo.bptt_segment == 0) {
        const int seg = t / opts_.ppo.bptt_segment;
        for (int l = 0; l < L; ++l) {
          buffers_[static_cast<size_t>(l)].seg_h[static_cast<size_t>(seg)] = rec_h_[static_cast<size_t>(l)];
          buffers_[static_cast<size_t>(l)].seg_c[static_cast<size_t>(seg)] = rec_c_[static_cast<size_t>(l)];
        }
      }

      // learner actions
      for (int l = 0; l < L; ++l) {
        auto& buf = buffers_[static_cast<size_t>(l)];
        const int agent = learner_agent(l);
        nn::Mat<S> ego(E, pc.ego_dim);
        std::vector<std::vector<Eigen::VectorXd>> sets(static_cast<size_t>(E));
        for (int e = 0; e < E; ++e) {
          if (!envs_[static_cast<size_t>(e)].agent_alive(agent)) {
            ego.row(e).setZero();
            buf.valid[static_cast<size_t>(buf.row(t, e))] = 0;
            continue;
          }
          ego.row(e) = ego_obs(envs_[static_cast<size_t>(e)], agent).template cast<S>().transpose();
          sets[static_cast<size_t>(e)] = opp_records(envs_[static_cast<size_t>(e)], agent);
        }
        auto rb = RecordBatch<S>::build(sets, pc.record_dim);
        auto out = learners_[static_cast<size_t>(l)]->infer(ego, rb, rec_h_[static_cast<size_t>(l)],
                                                            rec_c_[static_cast<size_t>(l)]);
        for (int e = 0; e < E; ++e) {
          if (!buf.valid[static_cast<size_t>(buf.row(t, e))]) continue;
          auto dist = learners_[static_cast<size_t>(l)]->distribution(out.mean, e);
          Rng& r = envs_[static_cast<size_t>(e)].rng();
          const auto sample = sample_action(dist, r, false);
          const int row = buf.row(t, e);
          buf.ego.row(row) = ego.row(e);
          buf.records[static_cast<size_t>(t)][static_cast<size_t>(e)] = sets[static_cast<size_t>(e)];
          buf.pretanh.row(row) = sample.pretanh.template cast<S>().transpose();
          buf.log_prob[static_cast<size_t>(row)] = sample.log_prob;
          buf.value[static_cast<size_t>(row)] = static_cast<double>(out.value(e, 0));
          actions[static_cast<size_t>(e)][static_cast<size_t>(agent)] =
              map_action(sample.action, opts_.env.action);
        }
      }

      // frozen opponents (league mode)
      if (opts_.mode == TrainMode::league) opponent_actions(actions);

      // step environments
      for (int e = 0; e < E; ++e) {
        auto& env = envs_[static_cast<size_t>(e)];
        const auto results = env.step(actions[static_cast<size_t>(e)]);
        for (int l = 0; l < L; ++l) {
          auto& buf = buffers_[static_cast<size_t>(l)];
          const int agent = learner_agent(l);
          const int row = buf.row(t, e);
          if (!buf.valid[static_cast<size_t>(row)]) continue;
          const auto& res = results[static_cast<size_t>(agent)];
          buf.reward[static_cast<size_t>(row)] = res.reward.total();
          accumulate_stats(l, res, env, agent);
          if (res.terminated) {
            buf.terminal_after[static_cast<size_t>(row)] = 1;
          } else if (res.truncated) {
            buf.terminal_after[static_cast<size_t>(row)] = 1;
            buf.reward[static_cast<size_t>(row)] +=
                opts_.ppo.gamma * value_of(l, e, agent);  // bootstrap through the time limit
          }
        }

        // curriculum buffer admission: every N rollout steps, live and
        // collision-free states only
        if ((t + 1) % curriculum_.cfg.buffer_sample_interval == 0 &&
            opts_.env.task == TaskType::race && !env.all_done()) {
          bool any_event = false;
          for (const auto& r : results) any_event = any_event || r.terminated;
          if (!any_event) curriculum_.buffer.add(env.snapshot(), rng_);
        }

        const bool ego_done = opts_.mode != TrainMode::independent
                                  ? !env.agent_alive(learner_agent(0))
                                  : env.all_done();
        if (ego_done) {
          env.reset(curriculum_);
          for (int l = 0; l < L; ++l) {
            rec_h_[static_cast<size_t>(l)].row(e).setZero();
            rec_c_[static_cast<size_t>(l)].row(e).setZero();
            if (t + 1 < T)
              buffers_[static_cast<size_t>(l)]
                  .reset_before[static_cast<size_t>(buffers_[static_cast<size_t>(l)].row(t + 1, e))] = 1;
          }
          for (auto& h : opp_h_[static_cast<size_t>(e)]) h.setZero();
          for (auto& c : opp_c_[static_cast<size_t>(e)]) c.setZero();
        }
      }
    }

    // bootstrap values for rollout tails
    for (int l = 0; l < L; ++l) {
      auto& buf = buffers_[static_cast<size_t>(l)];
      const int agent = learner_agent(l);
      for (int e = 0; e < E; ++e) {
        buf.bootstrap[static_cast<size_t>(e)] =
            envs_[static_cast<size_t>(e)].agent_alive(agent) ? value_of(l, e, agent) : 0.0;
      }
      finalize_stats(l);
    }
  }

  int learner_agent(int l) const { return opts_.mode == TrainMode::independent ? l : 0; }

  // critic value of an agent's current observation without disturbing the
  // stored recurrent state
  double value_of(int l, int e, int agent) {
    auto& env = envs_[static_cast<size_t>(e)];
    nn::Mat<S> ego(1, opts_.policy.ego_dim);
    ego.row(0) = ego_obs(env, agent).template cast<S>().transpose();
    auto rb = RecordBatch<S>::build({opp_records(env, agent)}, opts_.policy.record_dim);
    nn::Mat<S> h = rec_h_[static_cast<size_t>(l)].row(e);
    nn::Mat<S> c = rec_c_[static_cast<size_t>(l)].row(e);
    auto out = learners_[static_cast<size_t>(l)]->infer(ego, rb, h, c);
    return static_cast<double>(out.value(0, 0));
  }

  // Frozen-opponent actions, batched per distinct policy handle. Grouping is
  // in (env, slot) order so results are independent of the pool layout.
  void opponent_actions(std::vector<std::vector<Command>>& actions) {
    const int E = static_cast<int>(envs_.size());
    std::map<const Policy<S>*, std::vector<std::pair<int, int>>> groups;  // (env, slot)
    for (int e = 0; e < E; ++e) {
      auto& env = envs_[static_cast<size_t>(e)];
      for (size_t k = 0; k < opp_handles_[static_cast<size_t>(e)].size(); ++k) {
        if (!env.agent_alive(static_cast<int>(k) + 1)) continue;
        groups[opp_handles_[static_cast<size_t>(e)][k].get()].emplace_back(e, static_cast<int>(k));
      }
    }
    for (auto& [policy, members] : groups) {
      const int B = static_cast<int>(members.size());
      nn::Mat<S> ego(B, opts_.policy.ego_dim);
      nn::Mat<S> h(B, opts_.policy.lstm_hidden), c(B, opts_.policy.lstm_hidden);
      std::vector<std::vector<Eigen::VectorXd>> sets(static_cast<size_t>(B));
      for (int b = 0; b < B; ++b) {
        const auto [e, k] = members[static_cast<size_t>(b)];
        const int agent = k + 1;
        ego.row(b) = ego_obs(envs_[static_cast<size_t>(e)], agent).template cast<S>().transpose();
        sets[static_cast<size_t>(b)] = opp_records(envs_[static_cast<size_t>(e)], agent);
        h.row(b) = opp_h_[static_cast<size_t>(e)][static_cast<size_t>(k)].transpose();
        c.row(b) = opp_c_[static_cast<size_t>(e)][static_cast<size_t>(k)].transpose();
      }
      auto rb = RecordBatch<S>::build(sets, opts_.policy.record_dim);
      const auto out = policy->infer(ego, rb, h, c);
      for (int b = 0; b < B; ++b) {
        const auto [e, k] = members[static_cast<size_t>(b)];
        opp_h_[static_cast<size_t>(e)][static_cast<size_t>(k)] = h.row(b).transpose();
        opp_c_[static_cast<size_t>(e)][static_cast<size_t>(k)] = c.row(b).transpose();
        auto dist = policy->distribution(out.mean, b);
        const auto sample =
            sample_action(dist, opp_rng_[static_cast<size_t>(e)][static_cast<size_t>(k)], false);
        actions[static_cast<size_t>(e)][static_cast<size_t>(k) + 1] =
            map_action(sample.action, opts_.env.action);
      }
    }
  }

  void accumulate_stats(int l, const AgentStepResult& res, RaceEnv& env, int agent) {
    auto& s = rollout_stats_[static_cast<size_t>(l)];
    s.reward_mean += res.reward.total();
    s.prog_mean += res.reward.progress;
    s.omega_mean += res.reward.body_rate;
    s.prox_mean += res.reward.proximity;
    s.rank_mean += res.reward.rank;
    s.penalty_mean += res.reward.collision_penalty;
    if (res.terminated || res.truncated) {
      ++s.episodes_ended;
      s.max_gates_in_episode =
          std::max(s.max_gates_in_episode, env.gates_passed_this_episode(agent));
      switch (res.cause) {
        case TerminationCause::finished: ++s.term_finished; break;
        case TerminationCause::gate: ++s.term_gate; break;
        case TerminationCause::wall: ++s.term_wall; break;
        case TerminationCause::opponent: ++s.term_opponent; break;
        case TerminationCause::timeout: ++s.term_timeout; break;
        default: break;
      }
    }
  }

  void finalize_stats(int l) {
    auto& s = rollout_stats_[static_cast<size_t>(l)];
    const auto& buf = buffers_[static_cast<size_t>(l)];
    double n = 0;
    for (auto v : buf.valid) n += v;
    if (n > 0) {
      s.reward_mean /= n;
      s.prog_mean /= n;
      s.omega_mean /= n;
      s.prox_mean /= n;
      s.rank_mean /= n;
      s.penalty_mean /= n;
    }
    s.completion_rate = s.episodes_ended > 0
                            ? static_cast<double>(s.term_finished) / s.episodes_ended
                            : 0.0;
  }

  TrainerOptions opts_;
  Rng rng_, sample_rng_, league_rng_;
  std::vector<std::shared_ptr<Policy<S>>> learners_;
  std::vector<std::unique_ptr<Adam<S>>> optimizers_;
  std::vector<LeaguePool<S>> pools_;
  CurriculumState curriculum_;
  std::vector<RaceEnv> envs_;
  std::vector<nn::Mat<S>> rec_h_, rec_c_;  // per learner: E x H
  std::vector<std::vector<Eigen::Matrix<S, Eigen::Dynamic, 1>>> opp_h_, opp_c_;  // per env, slot
  std::vector<std::vector<Rng>> opp_rng_;
  std::vector<std::vector<PolicyHandle<S>>> opp_handles_;
  std::vector<RolloutBuffer<S>> buffers_;
  std::vector<IterationStats> rollout_stats_;
  std::vector<std::string> checkpoint_paths_;
  int iteration_ = 0;
};

}  // namespace quadleague
