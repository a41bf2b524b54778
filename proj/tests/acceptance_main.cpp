// Acceptance suite: runs every criterion at its stated tolerance and prints
// one pass/fail line per criterion.
//
//   acceptance                run all criteria (including the training runs)
//   acceptance --quick        criteria 1-5, 7, 8 (skips toy-scale learning)
//   acceptance --learning-only  criterion 6 alone
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "quadleague/config.hpp"
#include "quadleague/eval.hpp"
#include "quadleague/training.hpp"

using namespace quadleague;
using Clock = std::chrono::steady_clock;

namespace {

struct Criterion {
  std::string label;
  std::vector<std::string> failures;
  int checks = 0;

  void expect(bool ok, const std::string& what) {
    ++checks;
    if (!ok) failures.push_back(what);
  }
  void expect_near(double got, double want, double tol, const std::string& what) {
    ++checks;
    if (!(std::abs(got - want) <= tol)) {
      std::ostringstream oss;
      oss << what << " (got " << got << ", want " << want << " +/- " << tol << ")";
      failures.push_back(oss.str());
    }
  }
  void expect_lt(double got, double bound, const std::string& what) {
    ++checks;
    if (!(got < bound)) {
      std::ostringstream oss;
      oss << what << " (got " << got << ", bound " << bound << ")";
      failures.push_back(oss.str());
    }
  }
};

int g_failures = 0;

void run_criterion(const std::string& label, const std::function<void(Criterion&)>& body) {
  Criterion c;
  c.label = label;
  const auto t0 = Clock::now();
  try {
    body(c);
  } catch (const std::exception& e) {
    c.failures.push_back(std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  if (c.failures.empty()) {
    std::printf("[PASS] %s (%d checks, %.1f s)\n", label.c_str(), c.checks, secs);
  } else {
    ++g_failures;
    std::printf("[FAIL] %s (%zu of %d checks failed, %.1f s)\n", label.c_str(),
                c.failures.size(), c.checks, secs);
    for (const auto& f : c.failures) std::printf("       - %s\n", f.c_str());
  }
  std::fflush(stdout);
}

// ---------------------------------------------------------------------------
// 1. Dynamics suite
// ---------------------------------------------------------------------------

void criterion_dynamics(Criterion& c) {
  const auto t0 = Clock::now();
  const QuadParams p;

  // hover fixed point: < 1e-4 m drift over 1 s
  {
    QuadState s = make_hover_state(Vec3(1, 2, 3), 0.3, p);
    Command cmd;
    cmd.collective_thrust = p.gravity.norm();
    QuadState cur = s;
    for (int i = 0; i < 50; ++i) cur = step(cur, cmd, p, Vec3::Zero(), 0.02);
    c.expect_lt((cur.position - s.position).norm(), 1e-4, "hover drift");
    c.expect_lt(cur.body_rates.norm(), 1e-4, "hover body rates");
  }

  // quaternion norm: < 1e-9 after renormalization, < 1e-5 before
  {
    Rng rng(123);
    QuadState s = make_hover_state(Vec3::Zero(), 0.0, p);
    Command cmd;
    double max_prenorm = 0.0, max_err = 0.0;
    for (int i = 0; i < 100000; ++i) {
      if (i % 10 == 0) {
        cmd.collective_thrust = rng.uniform(0.0, p.max_thrust / p.mass);
        for (int k = 0; k < 3; ++k) cmd.body_rates[k] = rng.uniform(-10.0, 10.0);
      }
      double prenorm = 0.0;
      s = integrate_substep(s, motor_setpoint(s, cmd, p), p, Vec3::Zero(), 0.002, &prenorm);
      max_prenorm = std::max(max_prenorm, prenorm);
      max_err = std::max(max_err, std::abs(s.orientation.norm() - 1.0));
      if (s.position.norm() > 1e4 || s.velocity.norm() > 1e3) {
        s.position.setZero();
        s.velocity.setZero();
      }
    }
    c.expect_lt(max_err, 1e-9, "quaternion norm after renormalization");
    c.expect_lt(max_prenorm, 1e-5, "quaternion norm drift per substep");
  }

  // motor first-order response at k_mot within 2%
  {
    QuadState s;
    const Vec4 target = Vec4::Constant(p.hover_motor_speed());
    const QuadState cur = step_with_setpoint(s, target, p, Vec3::Zero(), p.motor_tau);
    const double frac = cur.motor_speeds[0] / target[0];
    c.expect_near(frac, 1.0 - std::exp(-1.0), 0.02 * (1.0 - std::exp(-1.0)),
                  "motor response after one time constant");
  }

  // ballistic fall within 1e-3 relative of the closed form
  {
    QuadParams pd = p;
    pd.drag_coeff.setZero();
    QuadState s = make_hover_state(Vec3(0, 0, 50), 0.0, pd);
    Command cmd;  // zero thrust command from hover
    QuadState cur = s;
    for (int i = 0; i < 50; ++i) cur = step(cur, cmd, pd, Vec3::Zero(), 0.02);
    const double g = pd.gravity.norm(), tau = pd.motor_tau;
    const double expected = g * (tau / 2.0) * (1.0 - std::exp(-2.0 / tau)) - g;
    c.expect_near(cur.velocity.z(), expected, 1e-3 * std::abs(expected),
                  "ballistic fall with motor decay");

    QuadState free = make_hover_state(Vec3::Zero(), 0.0, pd);
    free.motor_speeds.setZero();
    free = step_with_setpoint(free, Vec4::Zero(), pd, Vec3::Zero(), 1.0);
    c.expect_near(free.velocity.z(), -9.81, 1e-3 * 9.81, "instant-motor free fall");
  }

  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  c.expect_lt(secs, 30.0, "dynamics suite runtime (s)");
}

// ---------------------------------------------------------------------------
// 2. Downwash
// ---------------------------------------------------------------------------

void criterion_downwash(Criterion& c) {
  // jet speed: independent closed-form evaluation, Table geometry
  {
    const double area = M_PI * (0.0737 / 2.0) * (0.0737 / 2.0);
    const double thrust = 0.54;  // per-rotor hover thrust
    const double expected = std::sqrt(thrust / (2.0 * 1.204 * area));
    c.expect_lt(std::abs(initial_jet_speed(thrust, 1.204, area) - expected), 1e-9,
                "jet speed matches closed form");
    c.expect_near(expected, 7.25, 0.02, "hover per-rotor jet speed magnitude");
    c.expect_lt(std::abs(initial_jet_speed(4.0, 1.204, area) -
                         2.0 * initial_jet_speed(1.0, 1.204, area)),
                1e-12, "square-root thrust scaling");
  }

  // exponential decay to 1e-9
  {
    WakeConfig wc;
    wc.decay_tau = 0.5;
    WakeField field(wc);
    QuadParams p;
    QuadState s;
    Rng rng(3);
    field.emit(s, 0, Vec4::Constant(0.54), p, rng);
    const double s0 = field.particles()[0].velocity.norm();
    field.advance(0.5);
    c.expect_lt(std::abs(field.particles()[0].velocity.norm() - s0 * std::exp(-1.0)), 1e-9,
                "exponential speed decay");
  }

  // self-exclusion exact + translating anisotropy
  {
    WakeField field;
    QuadParams p;
    QuadState s = make_hover_state(Vec3(0, 0, 2.0), 0.0, p);
    s.velocity = Vec3(3.0, 0.0, 0.0);
    Rng rng(21);
    const Vec4 thrust = Vec4::Constant(p.mass * 9.81 / 4.0);
    for (int i = 0; i < 100; ++i) {
      field.advance(0.02);
      field.emit(s, 0, thrust, p, rng);
      s.position += 0.02 * s.velocity;
    }
    c.expect(field.sample_airspeed(s.position - Vec3(0, 0, 0.5), 0) == Vec3::Zero(),
             "self-exclusion is exact");
    const double below = field.sample_airspeed(s.position + Vec3(-0.2, 0, -0.67), -1).norm();
    const double lateral =
        std::max(field.sample_airspeed(s.position + Vec3(0, 0.686, -0.14), -1).norm(),
                 field.sample_airspeed(s.position + Vec3(0, -0.686, -0.14), -1).norm());
    c.expect(below > lateral, "wake is stronger below/behind than laterally");
    c.expect(below > 0.5, "trailing wake speed is substantial");
  }
}

// ---------------------------------------------------------------------------
// 3. Reward oracle
// ---------------------------------------------------------------------------

void criterion_reward(Criterion& c) {
  const RewardConfig cfg;
  const double d_col = 0.1;

  // 1,000 randomized snapshots: exact sum-of-terms decomposition
  {
    Rng rng(3);
    bool all_exact = true;
    for (int i = 0; i < 1000; ++i) {
      AgentSnapshot prev, cur;
      prev.dist_to_gate = rng.uniform(0.0, 20.0);
      cur.dist_to_gate = rng.uniform(0.0, 20.0);
      cur.body_rates = Vec3(rng.normal(), rng.normal(), rng.normal());
      cur.velocity = 5.0 * Vec3(rng.normal(), rng.normal(), rng.normal());
      const int n = 2 + static_cast<int>(rng.uniform_int(6));
      cur.rank = 1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(n)));
      cur.nearest_opponent_dist = rng.uniform(0.0, 0.5);
      const double r_prog = cfg.lambda1 * (prev.dist_to_gate - cur.dist_to_gate);
      const double r_omega = cfg.lambda2 * cur.body_rates.norm();
      const double r_rank = cfg.lambda3 * (n - (cur.rank - 1)) / static_cast<double>(n);
      double r_prox = 0.0;
      if (cur.nearest_opponent_dist < 2.0 * d_col) {
        const double dt = (cur.nearest_opponent_dist - d_col) / d_col;
        r_prox = (cfg.lambda4 * cur.velocity.norm() + 1.0) * std::exp(-cfg.lambda5 * dt);
      }
      if (step_reward(prev, cur, cfg, n, d_col) != r_prog - r_omega - r_prox + r_rank)
        all_exact = false;
    }
    c.expect(all_exact, "step reward equals independent sum of terms exactly");
  }

  // the four hand-computed examples to 1e-12
  {
    AgentSnapshot prev, cur;
    prev.dist_to_gate = 5.0;
    cur.dist_to_gate = 4.5;
    cur.rank = 1;
    c.expect_near(step_reward(prev, cur, cfg, 4, d_col), 0.51, 1e-12, "progress+rank example");
    AgentSnapshot spin = cur;
    spin.body_rates = Vec3(1, 0, 0);
    c.expect_near(step_reward_terms(prev, spin, cfg, 4, d_col).body_rate, 0.005, 1e-12,
                  "body-rate example");
    AgentSnapshot close = cur;
    close.nearest_opponent_dist = 0.1;
    close.velocity = Vec3(10, 0, 0);
    c.expect_near(step_reward_terms(prev, close, cfg, 4, d_col).proximity, 1.1, 1e-12,
                  "proximity example");
    AgentSnapshot far = close;
    far.nearest_opponent_dist = 0.25;
    c.expect_near(step_reward_terms(prev, far, cfg, 4, d_col).proximity, 0.0, 1e-12,
                  "proximity cutoff example");
  }

  // terminal penalties follow the quoted proportionality rules
  {
    c.expect_near(terminal_reward(TerminationCause::opponent, 10.0, 0.0, cfg), -1.1, 1e-12,
                  "inter-agent terminal penalty");
    c.expect_near(terminal_reward(TerminationCause::gate, 7.0, 0.0, cfg), -1.0, 1e-12,
                  "gate terminal offset at zero error");
    c.expect_near(terminal_reward(TerminationCause::wall, 0.0, 0.0, cfg), -1.0, 1e-12,
                  "wall terminal offset at rest");
    c.expect_near(terminal_reward(TerminationCause::gate, 0.0, 0.5, cfg), -1.25, 1e-12,
                  "gate error enters squared");
  }

  // non-terminal collision fraction 0.10 +/- 0.01 over 1e4 forced contacts
  {
    EnvConfig env_cfg;
    env_cfg.n_agents = 2;
    env_cfg.downwash_enabled = false;
    RaceEnv env(env_cfg, Track::split_s(), 12);
    env.set_interactions_enabled(true);
    int survivals = 0;
    const int trials = 10000;
    const double hover = QuadParams{}.hover_motor_speed();
    for (int i = 0; i < trials; ++i) {
      EnvSnapshot snap;
      QuadState a, b;
      a.position = Vec3(0, 0, 2);
      b.position = Vec3(0.05, 0, 2);
      a.motor_speeds.setConstant(hover);
      b.motor_speeds.setConstant(hover);
      snap.agents.push_back({a, 0});
      snap.agents.push_back({b, 0});
      env.reset_from_snapshot(snap);
      Command hover_cmd;
      hover_cmd.collective_thrust = 9.81;
      const auto res = env.step({hover_cmd, hover_cmd});
      if (!res[0].terminated) ++survivals;
    }
    c.expect_near(survivals / static_cast<double>(trials), 0.10, 0.01,
                  "non-terminal collision fraction");
  }
}

// ---------------------------------------------------------------------------
// 4. Policy
// ---------------------------------------------------------------------------

void criterion_policy(Criterion& c) {
  const auto t0 = Clock::now();
  auto make_records = [](int n, uint64_t seed, int dim) {
    Rng rng(seed);
    std::vector<Eigen::VectorXd> out;
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd r(dim);
      for (int k = 0; k < dim; ++k) r[k] = rng.uniform(-1.0, 1.0);
      out.push_back(r);
    }
    return out;
  };

  // permutation + duplicate invariance, fixed output dimension (full config)
  {
    Policy<double> policy;
    Rng rng(1);
    policy.init(rng);
    auto records = make_records(5, 7, 6);
    const auto base = policy.encode_opponents(records);
    std::vector<Eigen::VectorXd> shuffled = {records[4], records[1], records[0], records[3],
                                             records[2]};
    c.expect_lt((base - policy.encode_opponents(shuffled)).cwiseAbs().maxCoeff(), 1e-6,
                "permutation invariance");
    auto one = make_records(1, 9, 6);
    std::vector<Eigen::VectorXd> dup = {one[0], one[0], one[0]};
    c.expect_lt((policy.encode_opponents(one) - policy.encode_opponents(dup)).cwiseAbs().maxCoeff(),
                1e-9, "duplicate-record invariance");
    const int dim = policy.config().encoder_out_dim();
    bool dims_ok = true;
    for (int n : {0, 1, 3, 7})
      dims_ok = dims_ok &&
                policy.encode_opponents(make_records(n, 40 + n, 6)).size() == dim;
    c.expect(dims_ok, "encoder output dimension fixed for 0/1/3/7 opponents");
  }

  // gradient check vs central finite differences on a miniature network
  {
    PolicyConfig pc;
    pc.ego_dim = 5;
    pc.record_dim = 3;
    pc.latents = 2;
    pc.heads = 2;
    pc.head_dim = 3;
    pc.embed_dim = 4;
    pc.lstm_hidden = 6;
    pc.mlp_hidden = 7;
    pc.action_dim = 2;
    Policy<double> policy(pc);
    Rng rng(12);
    policy.init(rng);

    typename Policy<double>::SegmentBatch sb;
    sb.T = 3;
    sb.B = 2;
    const int rows = sb.T * sb.B;
    sb.ego = nn::Mat<double>::Random(rows, pc.ego_dim);
    std::vector<std::vector<Eigen::VectorXd>> sets;
    for (int r = 0; r < rows; ++r) sets.push_back(make_records(r % 3, 50 + r, pc.record_dim));
    auto rb = RecordBatch<double>::build(sets, pc.record_dim);
    sb.records = rb.flat;
    sb.rec_mask = rb.mask;
    sb.slots = rb.slots;
    sb.all_empty = rb.all_empty;
    sb.h0 = 0.1 * nn::Mat<double>::Random(sb.B, pc.lstm_hidden);
    sb.c0 = 0.1 * nn::Mat<double>::Random(sb.B, pc.lstm_hidden);
    sb.reset = nn::Mat<double>::Zero(rows, 1);
    sb.reset(2, 0) = 1.0;
    sb.pretanh = nn::Mat<double>::Random(rows, pc.action_dim);

    auto forward = [&](bool backward) {
      nn::Tape<double> tape(policy.generation());
      auto fwd = policy.forward_on_tape(tape, sb);
      auto logp = policy.log_prob_on_tape(tape, fwd, sb.pretanh);
      auto loss = tape.add(tape.add(tape.sum_all(logp), tape.sum_all(tape.square(fwd.value))),
                           tape.sum_all(fwd.mean));
      const double out = tape.scalar(loss);
      if (backward) tape.backward(loss, policy.generation());
      return out;
    };
    policy.zero_grad();
    forward(true);
    auto central = [&](nn::Tensor<double>* t, Eigen::Index i, double h) {
      const double saved = t->value.data()[i];
      t->value.data()[i] = saved + h;
      const double fp = forward(false);
      t->value.data()[i] = saved - h;
      const double fm = forward(false);
      t->value.data()[i] = saved;
      return (fp - fm) / (2.0 * h);
    };
    double worst = 0.0;
    for (auto* t : policy.tensors()) {
      for (Eigen::Index i = 0; i < t->value.size(); ++i) {
        // the second, smaller step guards against activation-kink straddles
        const double fd = central(t, i, 1e-5);
        const double fd_fine = central(t, i, 1e-7);
        const double an = t->grad.data()[i];
        const double err = std::min(std::abs(fd - an), std::abs(fd_fine - an));
        worst = std::max(worst,
                         err / std::max({std::abs(fd_fine), std::abs(an), 1e-4}));
      }
    }
    c.expect_lt(worst, 1e-4, "gradient check vs central finite differences");
  }

  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  c.expect_lt(secs, 120.0, "policy suite runtime (s)");
}

// ---------------------------------------------------------------------------
// 5. Training machinery
// ---------------------------------------------------------------------------

void criterion_training(Criterion& c) {
  // GAE vs brute force to 1e-12 on sequences <= 8
  {
    Rng rng(5);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
      const int n = 1 + static_cast<int>(rng.uniform_int(8));
      std::vector<double> r(n), v(n);
      std::vector<uint8_t> done(n);
      for (int i = 0; i < n; ++i) {
        r[i] = rng.normal();
        v[i] = rng.normal();
        done[i] = rng.uniform() < 0.25 ? 1 : 0;
      }
      const double bootstrap = rng.normal();
      auto [adv, ret] = compute_gae(r, v, done, 0.985, 0.95, bootstrap);
      for (int t = 0; t < n; ++t) {
        double expected = 0.0, weight = 1.0;
        for (int l = t; l < n; ++l) {
          const double v_next = (l == n - 1) ? bootstrap : v[l + 1];
          const double nonterm = done[l] ? 0.0 : 1.0;
          expected += weight * (r[l] + 0.985 * v_next * nonterm - v[l]);
          if (done[l]) break;
          weight *= 0.985 * 0.95;
        }
        worst = std::max(worst, std::abs(adv[t] - expected));
      }
    }
    c.expect_lt(worst, 1e-12, "GAE equals brute-force oracle");
  }

  // power-law probabilities, analytic and empirical
  {
    const auto p = power_law_probs(3, 0.9);
    c.expect_near(p[0], 0.180, 1e-3, "P(1) analytic");
    c.expect_near(p[1], 0.336, 1e-3, "P(2) analytic");
    c.expect_near(p[2], 0.484, 1e-3, "P(3) analytic");
    Rng rng(11);
    int counts[3] = {0, 0, 0};
    for (int i = 0; i < 100000; ++i) ++counts[sample_checkpoint_index(3, 0.9, rng) - 1];
    for (int k = 0; k < 3; ++k)
      c.expect_near(counts[k] / 1e5, p[static_cast<size_t>(k)], 0.01, "empirical power law");
  }

  // 75/25 history/roster mix
  {
    PolicyConfig pc;
    pc.lstm_hidden = 4;
    pc.mlp_hidden = 4;
    pc.embed_dim = 4;
    pc.heads = 2;
    pc.head_dim = 2;
    pc.latents = 2;
    LeaguePool<double> pool;
    for (int i = 0; i < 3; ++i) pool.history.push_back(std::make_shared<Policy<double>>(pc));
    for (int i = 0; i < 2; ++i) pool.roster.push_back(std::make_shared<Policy<double>>(pc));
    std::set<const void*> history_ptrs;
    for (const auto& h : pool.history) history_ptrs.insert(h.get());
    Rng rng(13);
    int history_draws = 0;
    for (int i = 0; i < 10000; ++i) {
      const auto picks = pool.assign_opponents(1, rng, nullptr);
      if (history_ptrs.count(picks[0].get())) ++history_draws;
    }
    c.expect_near(history_draws / 1e4, 0.75, 0.01, "75/25 history/roster mix");
  }

  // learning-rate schedule endpoints and midpoint
  {
    PPOConfig cfg;
    c.expect_near(learning_rate(cfg, 0), 3e-4, 1e-15, "lr at iteration 0");
    c.expect_near(learning_rate(cfg, 2750), 5e-5, 1e-15, "lr at the midpoint");
    c.expect_near(learning_rate(cfg, 5000), 5e-5, 1e-15, "lr constant after midpoint");
  }

  // frozen opponents bit-identical across a learner update
  {
    Config cfg = Config::desk_preset();
    cfg.set_int("ppo.environments", 2);
    cfg.set_int("ppo.rollout_steps", 12);
    cfg.set_int("ppo.iterations", 10);
    cfg.set_int("ppo.epochs", 1);
    cfg.set_int("ppo.minibatches", 2);
    cfg.set_int("ppo.bptt_segment", 6);
    cfg.set_int("policy.lstm_hidden", 8);
    cfg.set_int("policy.mlp_hidden", 8);
    cfg.set_int("policy.embed_dim", 8);
    cfg.set_int("policy.head_dim", 2);
    cfg.set_int("policy.heads", 2);
    cfg.set_int("policy.latents", 2);
    cfg.set_int("track.subset_gates", 3);
    cfg.set_int("league.checkpoint_every", 2);
    cfg.set_int("env.agents", 3);
    TrainerOptions opts;
    opts.mode = TrainMode::league;
    opts.ppo = ppo_from(cfg);
    opts.league = league_from(cfg);
    opts.curriculum = curriculum_from(cfg);
    opts.curriculum.opponent_enable_fraction = 0.0;
    opts.env = env_from(cfg);
    opts.policy = policy_from(cfg);
    opts.track = track_from(cfg);
    opts.seed = 7;
    Trainer<float> trainer(opts);
    while (trainer.pool().history.empty()) trainer.iterate();
    const auto opponent = trainer.pool().history[0];
    auto hash = [](const Policy<float>& p) {
      uint64_t h = 0xcbf29ce484222325ull;
      for (const auto* t : p.tensors())
        h = fnv1a64(t->value.data(), sizeof(float) * static_cast<size_t>(t->value.size()), h);
      return h;
    };
    const uint64_t before = hash(*opponent);
    trainer.iterate();
    c.expect(hash(*opponent) == before, "frozen opponent parameters bit-identical");
    c.expect(hash(trainer.learner()) != before, "learner parameters moved");

    // seed-reproducible checkpoints at iteration 10
    namespace fs = std::filesystem;
    const auto base = fs::temp_directory_path() / "ql_accept_repro";
    fs::remove_all(base);
    auto run = [&](const std::string& tag) {
      TrainerOptions o = opts;
      o.mode = TrainMode::single_agent;
      const auto dir = base / tag;
      fs::create_directories(dir);
      o.checkpoint_dir = dir.string();
      Trainer<float> t(o);
      t.run();
      return t.checkpoint_paths();
    };
    const auto a = run("a");
    const auto b = run("b");
    bool identical = a.size() == b.size() && !a.empty();
    for (size_t i = 0; identical && i < a.size(); ++i)
      identical = file_hash(a[i]) == file_hash(b[i]);
    c.expect(identical, "seed-reproducible checkpoints at iteration 10");
    fs::remove_all(base);
  }
}

// ---------------------------------------------------------------------------
// 7. Evaluation harness
// ---------------------------------------------------------------------------

void criterion_eval(Criterion& c) {
  // completion arithmetic
  {
    RaceResult r;
    r.gates_passed = 10;
    c.expect_near(r.completion(21), 0.476190476190476, 1e-9, "10 of 21 gates -> 47.62%");
    r.gates_passed = 21;
    c.expect_near(r.completion(21), 1.0, 1e-15, "21 gates -> 100%");
  }

  PolicyConfig pc;
  pc.latents = 2;
  pc.heads = 2;
  pc.head_dim = 2;
  pc.embed_dim = 8;
  pc.lstm_hidden = 8;
  pc.mlp_hidden = 8;
  auto policy = std::make_shared<Policy<float>>(pc);
  {
    Rng rng(1);
    policy->init(rng);
  }
  EnvConfig env_cfg;
  env_cfg.n_agents = 4;
  env_cfg.downwash_enabled = false;
  env_cfg.episode_length = 5.0;
  const Track track = Track::split_s();

  // the documented 64-race protocol record counts + crash partition
  {
    EvalProtocol protocol;
    protocol.races = 64;
    protocol.seed = 3;
    const auto result = run_self_eval<float>(PolicyHandle<float>(policy), 4, protocol, env_cfg, track);
    int records = 0;
    for (const auto& race : result.races) records += static_cast<int>(race.size());
    c.expect(records == 256, "64 races x 4 agents -> 256 agent results");
    c.expect_near(result.crash_fractions.total(), 1.0, 1e-9, "crash fractions partition to 1");

    const auto again = run_self_eval<float>(PolicyHandle<float>(policy), 4, protocol, env_cfg, track);
    bool identical = true;
    for (size_t r = 0; r < result.races.size(); ++r)
      for (size_t a = 0; a < result.races[r].size(); ++a)
        identical = identical &&
                    result.races[r][a].gates_passed == again.races[r][a].gates_passed &&
                    result.races[r][a].cause == again.races[r][a].cause;
    c.expect(identical, "self-eval deterministic under fixed seeds");
  }

  // value sweep: flat field for a zero critic, documented grid shape
  {
    auto zero_policy = std::make_shared<Policy<float>>(pc);  // zero weights
    ValueSweepScene scene;
    scene.y = 0.0;
    GridSpec grid;
    grid.nx = 50;
    grid.nz = 30;
    grid.x0 = -5;
    grid.x1 = 5;
    grid.z0 = 0.5;
    grid.z1 = 5.0;
    const auto field = value_sweep<float>(PolicyHandle<float>(zero_policy), scene, grid, track,
                                          ObsScales{});
    c.expect(field.value.size() == 1500, "50x30 grid -> 1500 evaluations");
    bool flat = true;
    for (double v : field.value) flat = flat && v == 0.0;
    c.expect(flat, "constant critic -> flat field");
    c.expect(field.x[0] == -5.0 && field.x[29] == -5.0 && field.x[30] != -5.0,
             "row-major output order");
  }
}

// ---------------------------------------------------------------------------
// 8. Protocol-shape reproduction
// ---------------------------------------------------------------------------

void criterion_protocol_shape(Criterion& c) {
  const Config paper = Config::paper_preset();
  const PPOConfig ppo = ppo_from(paper);
  c.expect(ppo.environments * ppo.rollout_steps == 36000, "144 x 250 = 36,000 batch size");
  const double interactions = static_cast<double>(ppo.iterations) * ppo.batch_size();
  c.expect(interactions == 198000000.0, "5,500 x 36,000 = 1.98e8 interactions");
  c.expect(std::abs(interactions - 2e8) < 0.05 * 2e8, "approximately 2e8 interactions");
  const LeagueConfig league = league_from(paper);
  c.expect(ppo.iterations / league.checkpoint_every == 55, "checkpoint cadence -> 55 snapshots");
  c.expect(league.roster_single + league.roster_independent == 20, "fixed league pool holds 20");
  c.expect(paper.content_hash() == 0x64a95d51695fef09ull, "paper preset content hash pinned");

  const Config desk = Config::desk_preset();
  auto diff = desk.diff_keys(paper);
  std::sort(diff.begin(), diff.end());
  const std::vector<std::string> expected = {"league.roster_independent", "league.roster_single",
                                             "ppo.environments", "ppo.iterations",
                                             "ppo.rollout_steps"};
  c.expect(diff == expected, "desk preset shrinks only the scale keys");
}

// ---------------------------------------------------------------------------
// 6. Toy-scale learning (the long criterion)
// ---------------------------------------------------------------------------

struct RunSummary {
  std::vector<double> prog_mean;
  std::vector<int> term_opponent;
  int max_gates = 0;
  std::vector<std::string> checkpoints;
};

RunSummary train_run(TrainMode mode, const Config& cfg, uint64_t seed,
                     const std::vector<PolicyHandle<float>>& roster,
                     const std::string& checkpoint_dir) {
  TrainerOptions opts;
  opts.mode = mode;
  opts.ppo = ppo_from(cfg);
  opts.league = league_from(cfg);
  opts.curriculum = curriculum_from(cfg);
  opts.env = env_from(cfg);
  opts.policy = policy_from(cfg);
  opts.track = track_from(cfg);
  opts.seed = seed;
  opts.checkpoint_dir = checkpoint_dir;
  RunSummary summary;
  opts.on_iteration = [&](const IterationStats& s) {
    if (s.learner == 0) {
      summary.prog_mean.push_back(s.prog_mean);
      summary.term_opponent.push_back(s.term_opponent);
    }
    summary.max_gates = std::max(summary.max_gates, s.max_gates_in_episode);
  };
  Trainer<float> trainer(opts);
  for (const auto& h : roster) trainer.pool_mut().roster.push_back(h);
  trainer.run();
  summary.checkpoints = trainer.checkpoint_paths();
  return summary;
}

void criterion_learning(Criterion& c) {
  const auto t0 = Clock::now();
  namespace fs = std::filesystem;
  const auto base = fs::temp_directory_path() / "ql_accept_learning";
  fs::remove_all(base);
  fs::create_directories(base / "single");
  fs::create_directories(base / "indep");

  // (a) desk-preset single-agent run on the 3-gate subset of the circuit
  Config single_cfg = Config::desk_preset();
  single_cfg.set_int("track.subset_gates", 3);
  const auto single = train_run(TrainMode::single_agent, single_cfg, 1, {},
                                (base / "single").string());

  // smoothed (50-iteration window) progress reward is monotone within slack
  {
    const auto& prog = single.prog_mean;
    c.expect(prog.size() == 300, "single run completed 300 iterations");
    std::vector<double> windows;
    for (size_t start = 0; start + 50 <= prog.size(); start += 50) {
      double mean = 0.0;
      for (size_t i = start; i < start + 50; ++i) mean += prog[i];
      windows.push_back(mean / 50.0);
    }
    bool monotone = true;
    for (size_t k = 0; k + 1 < windows.size(); ++k) {
      const double slack = std::max(0.05 * std::abs(windows[k]), 0.005);
      if (windows[k + 1] < windows[k] - slack) monotone = false;
    }
    std::ostringstream oss;
    oss << "smoothed progress reward is monotone [";
    for (double w : windows) oss << " " << w;
    oss << " ]";
    c.expect(monotone, oss.str());
    c.expect(windows.back() > windows.front(), "progress reward increased overall");
  }
  c.expect(single.max_gates >= 3, "a full gate sequence (3-gate subset) was achieved");

  // (b) league runs: lambda4 = 0.01 vs 0.0 at matched iterations
  Config indep_cfg = Config::desk_preset();
  indep_cfg.set_int("track.subset_gates", 3);
  indep_cfg.set_int("ppo.iterations", 30);
  indep_cfg.set_int("env.agents", 4);
  const auto indep = train_run(TrainMode::independent, indep_cfg, 2, {},
                               (base / "indep").string());

  std::vector<PolicyHandle<float>> roster;
  // desk roster: 1 single-agent + 4 independent policies
  roster.push_back(load_policy_handle<float>(single.checkpoints.back()));
  std::vector<std::string> indep_final(indep.checkpoints.end() - 4, indep.checkpoints.end());
  for (const auto& path : indep_final) roster.push_back(load_policy_handle<float>(path));

  auto league_cfg = [&](double lambda4) {
    Config cfg = Config::desk_preset();
    cfg.set_int("track.subset_gates", 3);
    cfg.set_int("ppo.iterations", 100);
    cfg.set_int("env.agents", 4);
    cfg.set_double("reward.lambda4", lambda4);
    return cfg;
  };
  const auto with_prox = train_run(TrainMode::league, league_cfg(0.01), 3, roster, "");
  const auto without_prox = train_run(TrainMode::league, league_cfg(0.0), 3, roster, "");

  int collisions_with = 0, collisions_without = 0;
  for (int v : with_prox.term_opponent) collisions_with += v;
  for (int v : without_prox.term_opponent) collisions_without += v;
  {
    std::ostringstream oss;
    oss << "lambda4 = 0.01 cuts opponent-collision terminations by >= 25% ("
        << collisions_with << " vs " << collisions_without << ")";
    c.expect(collisions_without > 0 &&
                 collisions_with <= 0.75 * static_cast<double>(collisions_without),
             oss.str());
  }

  fs::remove_all(base);
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  c.expect_lt(secs, 3600.0, "toy-scale learning runtime (s)");
}

}  // namespace

int main(int argc, char** argv) {
  bool quick = false, learning_only = false;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--quick") == 0) quick = true;
    if (std::strcmp(argv[i], "--learning-only") == 0) learning_only = true;
  }

  if (!learning_only) {
    run_criterion("criterion 1: dynamics suite", criterion_dynamics);
    run_criterion("criterion 2: downwash model", criterion_downwash);
    run_criterion("criterion 3: reward oracle", criterion_reward);
    run_criterion("criterion 4: policy architecture", criterion_policy);
    run_criterion("criterion 5: training machinery", criterion_training);
  }
  if (!quick) {
    run_criterion("criterion 6: toy-scale learning", criterion_learning);
  }
  if (!learning_only) {
    run_criterion("criterion 7: evaluation harness", criterion_eval);
    run_criterion("criterion 8: protocol-shape reproduction", criterion_protocol_shape);
  }
  if (g_failures == 0) {
    std::printf("acceptance: all criteria passed\n");
    return 0;
  }
  std::printf("acceptance: %d criteria FAILED\n", g_failures);
  return 1;
}
