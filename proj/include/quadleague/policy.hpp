#pragma once

#include <Eigen/Dense>
#include <Eigen/QR>

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "quadleague/rng.hpp"
#include "quadleague/tape.hpp"

namespace quadleague {

struct PolicyConfig {
  int ego_dim = 39;
  int record_dim = 6;
  int latents = 4;
  int heads = 4;
  int head_dim = 32;
  int embed_dim = 128;
  int lstm_hidden = 256;
  int mlp_hidden = 512;
  int action_dim = 4;
  double logstd_init = -0.5;
  double logstd_min = -5.0;
  double logstd_max = 2.0;
  double leaky_slope = 0.01;
  // pre-tanh bias of the first action channel at initialization; the default
  // puts the initial mean thrust at hover for the nominal platform instead of
  // the violent mid-range of the thrust map (atanh(2*9.81*m/T_max - 1))
  double thrust_bias_init = -0.8513;
  // ablation: fixed-slot concatenation instead of the attention encoder
  bool flat_encoder = false;
  int flat_max_opponents = 10;

  int attn_dim() const { return heads * head_dim; }
  int encoder_out_dim() const {
    return flat_encoder ? flat_max_opponents * record_dim : latents * embed_dim;
  }
  int lstm_input_dim() const { return ego_dim + encoder_out_dim(); }
};

// Opponent records for a batch of agents, padded to a common slot count.
// Slot 0 is the learned null token, active only when an agent's set is empty.
template <class S>
struct RecordBatch {
  nn::Mat<S> flat;  // (batch*slots) x record_dim
  nn::Mat<S> mask;  // (batch*slots) x 1; 1 = participates in attention
  int slots = 1;
  int batch = 0;
  bool all_empty = true;

  static RecordBatch build(const std::vector<std::vector<Eigen::VectorXd>>& sets, int record_dim) {
    RecordBatch rb;
    rb.batch = static_cast<int>(sets.size());
    size_t max_records = 0;
    for (const auto& s : sets) max_records = std::max(max_records, s.size());
    rb.slots = static_cast<int>(max_records) + 1;
    rb.all_empty = max_records == 0;
    rb.flat = nn::Mat<S>::Zero(static_cast<Eigen::Index>(rb.batch) * rb.slots, record_dim);
    rb.mask = nn::Mat<S>::Zero(static_cast<Eigen::Index>(rb.batch) * rb.slots, 1);
    for (int b = 0; b < rb.batch; ++b) {
      const auto& set = sets[static_cast<size_t>(b)];
      rb.mask(b * rb.slots + 0, 0) = set.empty() ? S(1) : S(0);
      for (size_t i = 0; i < set.size(); ++i) {
        if (static_cast<int>(set[i].size()) != record_dim)
          throw std::invalid_argument("RecordBatch: wrong record dimension");
        if (!set[i].allFinite())
          throw std::invalid_argument("RecordBatch: non-finite opponent record");
        rb.flat.row(b * rb.slots + 1 + static_cast<int>(i)) =
            set[i].transpose().template cast<S>();
        rb.mask(b * rb.slots + 1 + static_cast<int>(i), 0) = S(1);
      }
    }
    return rb;
  }
};

template <class S>
struct RecurrentState {
  Eigen::Matrix<S, Eigen::Dynamic, 1> h;
  Eigen::Matrix<S, Eigen::Dynamic, 1> c;

  explicit RecurrentState(int hidden = 256) {
    h = Eigen::Matrix<S, Eigen::Dynamic, 1>::Zero(hidden);
    c = Eigen::Matrix<S, Eigen::Dynamic, 1>::Zero(hidden);
  }
  void reset() {
    h.setZero();
    c.setZero();
  }
};

template <class S>
struct ActionDistribution {
  Eigen::Matrix<S, Eigen::Dynamic, 1> mean;    // tanh-bounded
  Eigen::Matrix<S, Eigen::Dynamic, 1> stddev;  // exp(clamped log-std)
};

struct ActionSample {
  Eigen::VectorXd pretanh;  // z
  Eigen::VectorXd action;   // tanh(z), in (-1, 1)
  double log_prob = 0.0;
};

// log(1 - tanh(z)^2), numerically stable for large |z|.
inline double tanh_log_jacobian(double z) {
  const double az = std::abs(z);
  return 2.0 * (std::log(2.0) - az - std::log1p(std::exp(-2.0 * az)));
}

inline constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

// Gaussian-in-pretanh-space density of the squashed sample.
template <class S>
double squashed_log_prob(const ActionDistribution<S>& dist, const Eigen::VectorXd& pretanh) {
  double lp = 0.0;
  for (int i = 0; i < pretanh.size(); ++i) {
    const double mu = static_cast<double>(dist.mean[i]);
    const double sigma = static_cast<double>(dist.stddev[i]);
    const double t = (pretanh[i] - mu) / sigma;
    lp += -0.5 * t * t - std::log(sigma) - 0.5 * kLogTwoPi - tanh_log_jacobian(pretanh[i]);
  }
  return lp;
}

template <class S>
ActionSample sample_action(const ActionDistribution<S>& dist, Rng& rng, bool deterministic) {
  const int n = static_cast<int>(dist.mean.size());
  ActionSample s;
  s.pretanh.resize(n);
  s.action.resize(n);
  for (int i = 0; i < n; ++i) {
    const double mu = static_cast<double>(dist.mean[i]);
    s.pretanh[i] = deterministic ? mu : mu + static_cast<double>(dist.stddev[i]) * rng.normal();
    s.action[i] = std::tanh(s.pretanh[i]);
  }
  s.log_prob = squashed_log_prob(dist, s.pretanh);
  return s;
}

// All learnable weights plus the registry the optimizer/checkpoint walk.
template <class S>
class Policy {
 public:
  using Mat = nn::Mat<S>;
  using Tensor = nn::Tensor<S>;

  explicit Policy(PolicyConfig cfg = {}) : cfg_(cfg) { allocate(); }

  const PolicyConfig& config() const { return cfg_; }

  std::vector<Tensor*> tensors() {
    std::vector<Tensor*> out = {&lstm_wx_, &lstm_wh_, &lstm_b_, &a1_, &a1b_, &a2_, &a2b_,
                                &mean_w_, &mean_b_, &logstd_, &c1_, &c1b_, &c2_, &c2b_,
                                &vw_, &vb_};
    if (!cfg_.flat_encoder) {
      const std::vector<Tensor*> enc = {&emb_w_, &emb_b_, &null_token_, &latents_, &wq_,
                                        &bq_, &wk_, &bk_, &wv_, &bv_, &wo_, &bo_};
      out.insert(out.begin(), enc.begin(), enc.end());
    }
    return out;
  }
  std::vector<const Tensor*> tensors() const {
    auto v = const_cast<Policy*>(this)->tensors();
    return {v.begin(), v.end()};
  }

  size_t parameter_count() const {
    size_t n = 0;
    for (const auto* t : tensors()) n += static_cast<size_t>(t->size());
    return n;
  }

  void zero_grad() {
    for (auto* t : tensors()) t->zero_grad();
  }

  uint64_t generation() const { return generation_; }
  void bump_generation() { ++generation_; }

  void init(Rng& rng) {
    auto fan_in = [&](Tensor& t, double gain = 1.0) {
      const double bound = gain / std::sqrt(static_cast<double>(t.value.cols()));
      for (Eigen::Index i = 0; i < t.value.rows(); ++i)
        for (Eigen::Index j = 0; j < t.value.cols(); ++j)
          t.value(i, j) = static_cast<S>(rng.uniform(-bound, bound));
    };
    if (!cfg_.flat_encoder) {
      fan_in(emb_w_);
      emb_b_.value.setZero();
      for (Eigen::Index j = 0; j < null_token_.value.cols(); ++j)
        null_token_.value(0, j) = static_cast<S>(rng.uniform(-0.5, 0.5));
      fan_in(latents_);
      fan_in(wq_);
      bq_.value.setZero();
      fan_in(wk_);
      bk_.value.setZero();
      fan_in(wv_);
      bv_.value.setZero();
      fan_in(wo_);
      bo_.value.setZero();
    }
    fan_in(lstm_wx_);
    orthogonal_blocks(lstm_wh_, cfg_.lstm_hidden, rng);
    lstm_b_.value.setZero();
    fan_in(a1_);
    a1b_.value.setZero();
    fan_in(a2_);
    a2b_.value.setZero();
    fan_in(mean_w_, 0.01);  // small head keeps the initial policy near its bias
    mean_b_.value.setZero();
    mean_b_.value(0, 0) = static_cast<S>(cfg_.thrust_bias_init);
    logstd_.value.setConstant(static_cast<S>(cfg_.logstd_init));
    fan_in(c1_);
    c1b_.value.setZero();
    fan_in(c2_);
    c2b_.value.setZero();
    fan_in(vw_);
    vb_.value.setZero();
    ++generation_;
  }

  // -------------------------------------------------------------------------
  // Inference (no tape)
  // -------------------------------------------------------------------------

  // Fixed-size opponent encoding of one record set (test/diagnostic surface).
  Eigen::VectorXd encode_opponents(const std::vector<Eigen::VectorXd>& records) const {
    auto rb = RecordBatch<S>::build({records}, cfg_.record_dim);
    const Mat enc = encode_batch(rb);
    return enc.row(0).transpose().template cast<double>();
  }

  struct InferOut {
    Mat mean;   // batch x action_dim, tanh-bounded
    Mat value;  // batch x 1
  };

  // One recurrent tick for a batch of agents; h and c are batch x hidden and
  // are updated in place.
  InferOut infer(const Mat& ego, const RecordBatch<S>& records, Mat& h, Mat& c) const {
    const int batch = static_cast<int>(ego.rows());
    if (records.batch != batch || h.rows() != batch || c.rows() != batch)
      throw std::invalid_argument("Policy::infer: batch mismatch");
    Mat gates;
    if (!cfg_.flat_encoder && records.all_empty) {
      // constant null encoding: fold its input projection into the bias row
      Mat one_rec = Mat::Zero(1, cfg_.record_dim);
      Mat one_mask = Mat::Ones(1, 1);
      const Mat enc_row = attention_encoding(one_rec, one_mask, 1);  // 1 x enc_dim
      gates = ego * lstm_wx_.value.leftCols(cfg_.ego_dim).transpose();
      gates.noalias() += h * lstm_wh_.value.transpose();
      const Mat base =
          enc_row * lstm_wx_.value.rightCols(cfg_.encoder_out_dim()).transpose() + lstm_b_.value;
      gates.rowwise() += base.row(0);
    } else {
      Mat x(batch, cfg_.lstm_input_dim());
      x << ego, encode_batch(records);
      gates = x * lstm_wx_.value.transpose();
      gates.noalias() += h * lstm_wh_.value.transpose();
      gates.rowwise() += lstm_b_.value.row(0);
    }
    check_finite(gates, "lstm");
    const int H = cfg_.lstm_hidden;
    const Mat ig = sigmoid_m(gates.middleCols(0, H));
    const Mat fg = sigmoid_m(gates.middleCols(H, H));
    const Mat gg = gates.middleCols(2 * H, H).array().tanh();
    const Mat og = sigmoid_m(gates.middleCols(3 * H, H));
    c = fg.cwiseProduct(c) + ig.cwiseProduct(gg);
    h = og.cwiseProduct(Mat(c.array().tanh()));

    InferOut out;
    const Mat a1 = leaky_m(affine(h, a1_, a1b_));
    const Mat a2 = leaky_m(affine(a1, a2_, a2b_));
    out.mean = affine(a2, mean_w_, mean_b_).array().tanh();
    const Mat v1 = leaky_m(affine(h, c1_, c1b_));
    const Mat v2 = leaky_m(affine(v1, c2_, c2b_));
    out.value = affine(v2, vw_, vb_);
    check_finite(out.mean, "actor head");
    check_finite(out.value, "critic head");
    return out;
  }

  ActionDistribution<S> distribution(const Mat& mean, int row) const {
    ActionDistribution<S> d;
    d.mean = mean.row(row).transpose();
    d.stddev = stddev_row().transpose();
    return d;
  }

  Eigen::Matrix<S, 1, Eigen::Dynamic> logstd_row() const {
    return logstd_.value.row(0).cwiseMax(static_cast<S>(cfg_.logstd_min))
        .cwiseMin(static_cast<S>(cfg_.logstd_max));
  }
  Eigen::Matrix<S, 1, Eigen::Dynamic> stddev_row() const {
    return logstd_row().array().exp();
  }

  // Gaussian entropy in pre-tanh space (state independent).
  double entropy() const {
    const auto row = logstd_row();
    double h = 0.0;
    for (int i = 0; i < row.size(); ++i)
      h += static_cast<double>(row[i]) + 0.5 * (1.0 + kLogTwoPi);
    return h;
  }

  // -------------------------------------------------------------------------
  // Tape forward for training
  // -------------------------------------------------------------------------

  // One truncated-BPTT minibatch: B segment instances of T steps, rows in
  // step-major order (row t*B + b).
  struct SegmentBatch {
    int T = 0, B = 0;
    Mat ego;        // (T*B) x ego_dim
    Mat records;    // (T*B*slots) x record_dim
    Mat rec_mask;   // (T*B*slots) x 1
    int slots = 1;
    bool all_empty = true;
    Mat h0, c0;     // B x hidden, stored at segment start
    Mat reset;      // (T*B) x 1: 1 when the recurrent state resets before step t
    Mat pretanh;    // (T*B) x action_dim
    Mat old_logp;   // (T*B) x 1
    Mat advantage;  // (T*B) x 1
    Mat ret;        // (T*B) x 1
    Mat valid;      // (T*B) x 1
  };

  struct TapeForward {
    typename nn::Tape<S>::Ref mean_pretanh;  // (T*B) x act, before the tanh bound
    typename nn::Tape<S>::Ref mean;          // (T*B) x act, tanh-bounded
    typename nn::Tape<S>::Ref value;         // (T*B) x 1
    typename nn::Tape<S>::Ref logstd;        // 1 x act, clamped
  };

  TapeForward forward_on_tape(nn::Tape<S>& tape, const SegmentBatch& sb) {
    using Ref = typename nn::Tape<S>::Ref;
    const int rows = sb.T * sb.B;
    const int H = cfg_.lstm_hidden;

    Ref gates_in;
    if (!cfg_.flat_encoder && sb.all_empty) {
      // Every row sees the constant null encoding: project it through the
      // encoder block of W_x once and broadcast, leaving only the ego block
      // as a per-row product.
      Mat one_rec = Mat::Zero(1, cfg_.record_dim);
      Mat one_mask = Mat::Ones(1, 1);
      Ref enc_row = encode_on_tape(tape, tape.constant(one_rec), tape.constant(one_mask), 1);
      Ref wx = tape.parameter(&lstm_wx_);
      Ref wx_ego = tape.slice_cols(wx, 0, cfg_.ego_dim);
      Ref wx_enc = tape.slice_cols(wx, cfg_.ego_dim, cfg_.encoder_out_dim());
      Ref base = tape.add(tape.matmul_nt(enc_row, wx_enc), tape.parameter(&lstm_b_));
      gates_in = tape.add_rowvec(tape.matmul_nt(tape.constant(sb.ego), wx_ego), base);
    } else {
      Ref enc;
      if (cfg_.flat_encoder) {
        enc = tape.constant(
            flat_encoding(sb.records, sb.rec_mask, sb.slots, rows, cfg_.flat_max_opponents));
      } else {
        enc = encode_on_tape(tape, tape.constant(sb.records), tape.constant(sb.rec_mask), sb.slots);
      }
      Ref x_all = tape.concat_cols(tape.constant(sb.ego), enc);
      gates_in = tape.add_rowvec(tape.matmul_nt(x_all, tape.parameter(&lstm_wx_)),
                                 tape.parameter(&lstm_b_));
    }

    Ref wh = tape.parameter(&lstm_wh_);
    Ref h = tape.constant(sb.h0);
    Ref c = tape.constant(sb.c0);
    std::vector<Ref> h_steps;
    h_steps.reserve(static_cast<size_t>(sb.T));
    for (int t = 0; t < sb.T; ++t) {
      Ref keep = tape.constant(Mat(Mat::Ones(sb.B, 1) - sb.reset.middleRows(t * sb.B, sb.B)));
      h = tape.mul_colvec(h, keep);
      c = tape.mul_colvec(c, keep);
      Ref g = tape.add(tape.slice_rows(gates_in, t * sb.B, sb.B), tape.matmul_nt(h, wh));
      Ref ig = tape.sigmoid(tape.slice_cols(g, 0, H));
      Ref fg = tape.sigmoid(tape.slice_cols(g, H, H));
      Ref gg = tape.tanh(tape.slice_cols(g, 2 * H, H));
      Ref og = tape.sigmoid(tape.slice_cols(g, 3 * H, H));
      c = tape.add(tape.mul(fg, c), tape.mul(ig, gg));
      h = tape.mul(og, tape.tanh(c));
      h_steps.push_back(h);
    }
    Ref h_all = tape.concat_rows(h_steps);

    const S slope = static_cast<S>(cfg_.leaky_slope);
    auto affine_t = [&](Ref in, Tensor& w, Tensor& b) {
      return tape.add_rowvec(tape.matmul_nt(in, tape.parameter(&w)), tape.parameter(&b));
    };
    Ref a1 = tape.leaky_relu(affine_t(h_all, a1_, a1b_), slope);
    Ref a2 = tape.leaky_relu(affine_t(a1, a2_, a2b_), slope);
    TapeForward out;
    out.mean_pretanh = affine_t(a2, mean_w_, mean_b_);
    out.mean = tape.tanh(out.mean_pretanh);
    Ref v1 = tape.leaky_relu(affine_t(h_all, c1_, c1b_), slope);
    Ref v2 = tape.leaky_relu(affine_t(v1, c2_, c2b_), slope);
    out.value = affine_t(v2, vw_, vb_);
    out.logstd = tape.clamp(tape.parameter(&logstd_), static_cast<S>(cfg_.logstd_min),
                            static_cast<S>(cfg_.logstd_max));
    return out;
  }

  // Squashed-Gaussian log-probability of stored pre-tanh samples, on tape:
  // gaussian density at z under (mean, exp(logstd)) plus the constant tanh
  // jacobian correction of the stored samples.
  typename nn::Tape<S>::Ref log_prob_on_tape(nn::Tape<S>& tape, const TapeForward& fwd,
                                             const Mat& pretanh) const {
    using Ref = typename nn::Tape<S>::Ref;
    const int rows = static_cast<int>(pretanh.rows());
    Ref z = tape.constant(pretanh);
    Ref diff = tape.sub(z, fwd.mean);
    Ref inv_sigma = tape.exp(tape.scale(fwd.logstd, S(-1)));
    Ref t_norm = tape.mul_rowvec(diff, inv_sigma);
    Ref gauss = tape.scale(tape.rowsum(tape.square(t_norm)), S(-0.5));
    Ref sum_logstd = tape.sum_all(fwd.logstd);
    Ref logp = tape.add_scalar_node(gauss, tape.scale(sum_logstd, S(-1)));
    Mat corr(rows, 1);
    for (int r = 0; r < rows; ++r) {
      double c = -0.5 * kLogTwoPi * cfg_.action_dim;
      for (int a = 0; a < cfg_.action_dim; ++a)
        c -= tanh_log_jacobian(static_cast<double>(pretanh(r, a)));
      corr(r, 0) = static_cast<S>(c);
    }
    return tape.add(logp, tape.constant(corr));
  }

  // Encoder on tape; `records` rows grouped per agent with `slots` rows each,
  // slot 0 being the null token position.
  typename nn::Tape<S>::Ref encode_on_tape(nn::Tape<S>& tape, typename nn::Tape<S>::Ref records,
                                           typename nn::Tape<S>::Ref mask, int slots) {
    using Ref = typename nn::Tape<S>::Ref;
    if (cfg_.flat_encoder)
      throw std::logic_error("encode_on_tape: flat encoder has no attention graph");
    const int total = static_cast<int>(tape.val(records).rows());
    const int groups = total / slots;
    const S slope = static_cast<S>(cfg_.leaky_slope);

    // embed real records and the learned null token through the same layer
    Ref e_rec = tape.leaky_relu(
        tape.add_rowvec(tape.matmul_nt(records, tape.parameter(&emb_w_)), tape.parameter(&emb_b_)),
        slope);
    Ref e_null = tape.leaky_relu(
        tape.add_rowvec(tape.matmul_nt(tape.parameter(&null_token_), tape.parameter(&emb_w_)),
                        tape.parameter(&emb_b_)),
        slope);
    // null rows (slot 0) take the null embedding; all other rows keep theirs
    Mat null_sel = Mat::Zero(total, 1);
    for (int g = 0; g < groups; ++g) null_sel(g * slots, 0) = S(1);
    Mat rec_sel = Mat::Ones(total, 1) - null_sel;
    Ref e = tape.add(tape.mul_colvec(e_rec, tape.constant(rec_sel)),
                     tape.mul_colvec(tape.broadcast_rows(e_null, total), tape.constant(null_sel)));

    Ref k = tape.add_rowvec(tape.matmul_nt(e, tape.parameter(&wk_)), tape.parameter(&bk_));
    Ref v = tape.add_rowvec(tape.matmul_nt(e, tape.parameter(&wv_)), tape.parameter(&bv_));
    Ref q = tape.add_rowvec(tape.matmul_nt(tape.parameter(&latents_), tape.parameter(&wq_)),
                            tape.parameter(&bq_));

    const S inv_sqrt_d = static_cast<S>(1.0 / std::sqrt(static_cast<double>(cfg_.head_dim)));
    std::vector<Ref> head_outs;
    head_outs.reserve(static_cast<size_t>(cfg_.heads));
    for (int hh = 0; hh < cfg_.heads; ++hh) {
      Ref kh = tape.slice_cols(k, hh * cfg_.head_dim, cfg_.head_dim);
      Ref vh = tape.slice_cols(v, hh * cfg_.head_dim, cfg_.head_dim);
      Ref qh = tape.slice_cols(q, hh * cfg_.head_dim, cfg_.head_dim);
      Ref scores = tape.scale(tape.matmul_nt(kh, qh), inv_sqrt_d);  // (groups*slots) x latents
      Ref probs = tape.softmax_groups(scores, slots, mask);
      head_outs.push_back(tape.attn_mix(probs, vh, slots));  // (groups*latents) x head_dim
    }
    Ref mixed = head_outs[0];
    for (size_t i = 1; i < head_outs.size(); ++i) mixed = tape.concat_cols(mixed, head_outs[i]);
    Ref projected = tape.add_rowvec(tape.matmul_nt(mixed, tape.parameter(&wo_)),
                                    tape.parameter(&bo_));  // (groups*latents) x embed
    return tape.group_flatten(projected, cfg_.latents);     // groups x (latents*embed)
  }

  // checkpoint access
  Tensor& tensor_by_name(const std::string& name) {
    for (auto* t : tensors())
      if (t->name == name) return *t;
    throw std::runtime_error("Policy: unknown tensor " + name);
  }

 private:
  static Mat sigmoid_m(const Mat& x) { return (S(1) / (S(1) + (-x.array()).exp())).matrix(); }
  Mat leaky_m(const Mat& x) const {
    const S slope = static_cast<S>(cfg_.leaky_slope);
    return (x.array().max(S(0)) + slope * x.array().min(S(0))).matrix();
  }
  static Mat affine(const Mat& x, const Tensor& w, const Tensor& b) {
    Mat out = x * w.value.transpose();
    out.rowwise() += b.value.row(0);
    return out;
  }
  static void check_finite(const Mat& m, const char* layer) {
    if (!m.allFinite())
      throw std::runtime_error(std::string("Policy: non-finite activations in ") + layer);
  }

  // Inference-path encoder; mirrors encode_on_tape.
  Mat encode_batch(const RecordBatch<S>& rb) const {
    if (cfg_.flat_encoder)
      return flat_encoding(rb.flat, rb.mask, rb.slots, rb.batch, cfg_.flat_max_opponents);
    if (rb.all_empty) {
      Mat one_rec = Mat::Zero(1, cfg_.record_dim);
      Mat one_mask = Mat::Ones(1, 1);
      const Mat row = attention_encoding(one_rec, one_mask, 1);
      return row.replicate(rb.batch, 1);
    }
    return attention_encoding(rb.flat, rb.mask, rb.slots);
  }

  Mat attention_encoding(const Mat& records, const Mat& mask, int slots) const {
    const int total = static_cast<int>(records.rows());
    const int groups = total / slots;
    Mat e = leaky_m(affine(records, emb_w_, emb_b_));
    const Mat e_null = leaky_m(affine(null_token_.value, emb_w_, emb_b_));
    for (int g = 0; g < groups; ++g) e.row(g * slots) = e_null.row(0);

    const Mat k = affine(e, wk_, bk_);
    const Mat v = affine(e, wv_, bv_);
    const Mat q = affine(latents_.value, wq_, bq_);
    const S inv_sqrt_d = static_cast<S>(1.0 / std::sqrt(static_cast<double>(cfg_.head_dim)));

    Mat mixed(static_cast<Eigen::Index>(groups) * cfg_.latents, cfg_.attn_dim());
    for (int hh = 0; hh < cfg_.heads; ++hh) {
      const Mat kh = k.middleCols(hh * cfg_.head_dim, cfg_.head_dim);
      const Mat vh = v.middleCols(hh * cfg_.head_dim, cfg_.head_dim);
      const Mat qh = q.middleCols(hh * cfg_.head_dim, cfg_.head_dim);
      Mat scores = inv_sqrt_d * (kh * qh.transpose());  // total x latents
      for (int g = 0; g < groups; ++g) {
        for (int l = 0; l < cfg_.latents; ++l) {
          S zmax = std::numeric_limits<S>::lowest();
          for (int i = 0; i < slots; ++i)
            if (mask(g * slots + i, 0) > S(0.5)) zmax = std::max(zmax, scores(g * slots + i, l));
          S denom = S(0);
          for (int i = 0; i < slots; ++i) {
            S p = S(0);
            if (mask(g * slots + i, 0) > S(0.5)) {
              p = std::exp(scores(g * slots + i, l) - zmax);
              denom += p;
            }
            scores(g * slots + i, l) = p;
          }
          if (denom > S(0))
            for (int i = 0; i < slots; ++i) scores(g * slots + i, l) /= denom;
        }
        mixed.block(g * cfg_.latents, hh * cfg_.head_dim, cfg_.latents, cfg_.head_dim).noalias() =
            scores.middleRows(g * slots, slots).transpose() * vh.middleRows(g * slots, slots);
      }
    }
    const Mat projected = affine(mixed, wo_, bo_);
    Mat out(groups, static_cast<Eigen::Index>(cfg_.latents) * cfg_.embed_dim);
    for (int g = 0; g < groups; ++g)
      for (int l = 0; l < cfg_.latents; ++l)
        out.block(g, l * cfg_.embed_dim, 1, cfg_.embed_dim) = projected.row(g * cfg_.latents + l);
    return out;
  }

  static Mat flat_encoding(const Mat& records, const Mat& mask, int slots, int batch,
                           int max_opponents) {
    // slot 0 (null) is dropped; remaining slots packed in order, zero padded
    const int record_dim = static_cast<int>(records.cols());
    Mat out = Mat::Zero(batch, static_cast<Eigen::Index>(max_opponents) * record_dim);
    for (int b = 0; b < batch; ++b) {
      int w = 0;
      for (int i = 1; i < slots && w < max_opponents; ++i) {
        if (mask(b * slots + i, 0) > S(0.5)) {
          out.block(b, w * record_dim, 1, record_dim) = records.row(b * slots + i);
          ++w;
        }
      }
    }
    return out;
  }

  void allocate() {
    using T = Tensor;
    if (!cfg_.flat_encoder) {
      emb_w_ = T("encoder.embed.weight", cfg_.embed_dim, cfg_.record_dim);
      emb_b_ = T("encoder.embed.bias", 1, cfg_.embed_dim);
      null_token_ = T("encoder.null_token", 1, cfg_.record_dim);
      latents_ = T("encoder.latents", cfg_.latents, cfg_.embed_dim);
      wq_ = T("encoder.q.weight", cfg_.attn_dim(), cfg_.embed_dim);
      bq_ = T("encoder.q.bias", 1, cfg_.attn_dim());
      wk_ = T("encoder.k.weight", cfg_.attn_dim(), cfg_.embed_dim);
      bk_ = T("encoder.k.bias", 1, cfg_.attn_dim());
      wv_ = T("encoder.v.weight", cfg_.attn_dim(), cfg_.embed_dim);
      bv_ = T("encoder.v.bias", 1, cfg_.attn_dim());
      wo_ = T("encoder.out.weight", cfg_.embed_dim, cfg_.attn_dim());
      bo_ = T("encoder.out.bias", 1, cfg_.embed_dim);
    }
    lstm_wx_ = T("lstm.wx", 4 * cfg_.lstm_hidden, cfg_.lstm_input_dim());
    lstm_wh_ = T("lstm.wh", 4 * cfg_.lstm_hidden, cfg_.lstm_hidden);
    lstm_b_ = T("lstm.bias", 1, 4 * cfg_.lstm_hidden);
    a1_ = T("actor.fc1.weight", cfg_.mlp_hidden, cfg_.lstm_hidden);
    a1b_ = T("actor.fc1.bias", 1, cfg_.mlp_hidden);
    a2_ = T("actor.fc2.weight", cfg_.mlp_hidden, cfg_.mlp_hidden);
    a2b_ = T("actor.fc2.bias", 1, cfg_.mlp_hidden);
    mean_w_ = T("actor.mean.weight", cfg_.action_dim, cfg_.mlp_hidden);
    mean_b_ = T("actor.mean.bias", 1, cfg_.action_dim);
    logstd_ = T("actor.logstd", 1, cfg_.action_dim);
    c1_ = T("critic.fc1.weight", cfg_.mlp_hidden, cfg_.lstm_hidden);
    c1b_ = T("critic.fc1.bias", 1, cfg_.mlp_hidden);
    c2_ = T("critic.fc2.weight", cfg_.mlp_hidden, cfg_.mlp_hidden);
    c2b_ = T("critic.fc2.bias", 1, cfg_.mlp_hidden);
    vw_ = T("critic.value.weight", 1, cfg_.mlp_hidden);
    vb_ = T("critic.value.bias", 1, 1);
  }

  // Per-gate orthogonal initialization of the recurrent matrix.
  void orthogonal_blocks(Tensor& t, int hidden, Rng& rng) {
    for (int blk = 0; blk < 4; ++blk) {
      Eigen::MatrixXd g(hidden, hidden);
      for (int i = 0; i < hidden; ++i)
        for (int j = 0; j < hidden; ++j) g(i, j) = rng.normal();
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
      Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(hidden, hidden);
      const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
      for (int j = 0; j < hidden; ++j)
        if (r(j, j) < 0) q.col(j) = -q.col(j);
      t.value.middleRows(blk * hidden, hidden) = q.cast<S>();
    }
  }

  PolicyConfig cfg_;
  uint64_t generation_ = 0;

  Tensor emb_w_, emb_b_, null_token_, latents_, wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_;
  Tensor lstm_wx_, lstm_wh_, lstm_b_;
  Tensor a1_, a1b_, a2_, a2b_, mean_w_, mean_b_, logstd_;
  Tensor c1_, c1b_, c2_, c2b_, vw_, vb_;
};

template <class S>
using PolicyHandle = std::shared_ptr<const Policy<S>>;

}  // namespace quadleague
