#include "aftse/predictor.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <limits>
#include <mutex>
#include <random>
#include <string>

#include "aftse/errors.hpp"

namespace aftse {

namespace {

Eigen::MatrixXd gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  std::normal_distribution<double> n(0.0, stddev);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = n(rng);
  }
  return m;
}

void positive(int v, const char* name) {
  if (v <= 0) throw ValidationError(std::string("predictor config: ") + name + " must be positive");
}

// Magnitude floor for log features.
constexpr double kLogFloor = 1e-3;

}  // namespace

double logistic(double x) {
  const double y = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  return std::clamp(y, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
}

void PredictorConfig::validate() const {
  positive(channels, "channels");
  positive(n_blocks, "n_blocks");
  positive(n_heads, "n_heads");
  positive(width, "width");
  positive(mlp_hidden, "mlp_hidden");
  positive(time_embed_dim, "time_embed_dim");
  positive(max_prefix_frames, "max_prefix_frames");
  if (channels % 2 != 0) throw ValidationError("predictor config: channels must be even (2F)");
  if (width % n_heads != 0) throw ValidationError("predictor config: width must be divisible by n_heads");
  if (time_embed_dim % 2 != 0) throw ValidationError("predictor config: time_embed_dim must be even");
}

ad::Var VelocityModel::apply(ad::Tape& tape, const BoundParams& params, const Spectrogram& z,
                             const Spectrogram& enroll, double t, double r) const {
  if (z.rows() != channels() || enroll.rows() != channels()) {
    throw ValidationError("mean_velocity: expected " + std::to_string(channels()) + " channels, got z=" +
                          std::to_string(z.rows()) + " E=" + std::to_string(enroll.rows()));
  }
  if (z.cols() == 0) throw ValidationError("mean_velocity: empty state");
  if (!z.allFinite() || !enroll.allFinite()) throw ValidationError("mean_velocity: non-finite input");
  if (!(t >= 0.0 && t <= r && r <= 1.0)) {
    throw ValidationError("mean_velocity: need 0 <= t <= r <= 1, got t=" + std::to_string(t) +
                          " r=" + std::to_string(r));
  }
  ++evaluations_;
  return forward(tape, params, z, enroll, t, r);
}

UDiTBackbone::UDiTBackbone(PredictorConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const int c = cfg_.channels;
  const int f = c / 2;
  const int w = cfg_.width;
  const int d = cfg_.time_embed_dim;
  auto decl = [this](const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    return layout_.add(name, Eigen::MatrixXd::Zero(rows, cols));
  };
  in_w_ = decl("in.w", w, c + 2 * f);
  in_b_ = decl("in.b", w, 1);
  seg_enroll_ = decl("segment.enroll", w, 1);
  seg_mix_ = decl("segment.mixture", w, 1);
  t1_w_ = decl("time.fc1.w", w, d);
  t1_b_ = decl("time.fc1.b", w, 1);
  t2_w_ = decl("time.fc2.w", w, w);
  t2_b_ = decl("time.fc2.b", w, 1);
  const int half = cfg_.n_blocks / 2;
  for (int i = 0; i < cfg_.n_blocks; ++i) {
    const std::string p = "block" + std::to_string(i) + ".";
    BlockSlots s{};
    // Blocks in the second half receive the output of their mirror block.
    if (i >= cfg_.n_blocks - half) {
      s.has_skip = true;
      s.skip_w = decl(p + "skip.w", w, 2 * w);
      s.skip_b = decl(p + "skip.b", w, 1);
    }
    s.ada_w = decl(p + "ada.w", 6 * w, w);
    s.ada_b = decl(p + "ada.b", 6 * w, 1);
    s.qkv_w = decl(p + "attn.qkv.w", 3 * w, w);
    s.qkv_b = decl(p + "attn.qkv.b", 3 * w, 1);
    s.o_w = decl(p + "attn.out.w", w, w);
    s.o_b = decl(p + "attn.out.b", w, 1);
    s.fc1_w = decl(p + "mlp.fc1.w", cfg_.mlp_hidden, w);
    s.fc1_b = decl(p + "mlp.fc1.b", cfg_.mlp_hidden, 1);
    s.fc2_w = decl(p + "mlp.fc2.w", w, cfg_.mlp_hidden);
    s.fc2_b = decl(p + "mlp.fc2.b", w, 1);
    blocks_.push_back(s);
  }
  final_ada_w_ = decl("final.ada.w", 2 * w, w);
  final_ada_b_ = decl("final.ada.b", 2 * w, 1);
  out_w_ = decl("head.velocity.w", c, w);
  out_b_ = decl("head.velocity.b", c, 1);
  gate_w_ = decl("head.gain.w", f, w);
  gate_b_ = decl("head.gain.b", f, 1);
}

ParamStore UDiTBackbone::init_params(std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  ParamStore p = layout_.zeros_like();
  auto lecun = [&](std::size_t i) { p[i] = gaussian(rng, p[i].rows(), p[i].cols(), 1.0 / std::sqrt(p[i].cols())); };
  lecun(in_w_);
  p[seg_enroll_] = gaussian(rng, cfg_.width, 1, 0.5);
  p[seg_mix_] = gaussian(rng, cfg_.width, 1, 0.5);
  lecun(t1_w_);
  lecun(t2_w_);
  for (const auto& s : blocks_) {
    if (s.has_skip) lecun(s.skip_w);
    lecun(s.qkv_w);
    lecun(s.o_w);
    lecun(s.fc1_w);
    lecun(s.fc2_w);
    // ada.* stay zero: every block starts as the identity map.
  }
  // final.ada and both head tensors stay zero: the untrained output is exactly 0.
  return p;
}

Eigen::VectorXd UDiTBackbone::time_embedding(double t, int dim) {
  const int half = dim / 2;
  Eigen::VectorXd e(dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e(i) = std::sin(1000.0 * t * freq);
    e(half + i) = std::cos(1000.0 * t * freq);
  }
  return e;
}

Eigen::MatrixXd UDiTBackbone::log_magnitude(const Spectrogram& z) {
  return (magnitude(z).array() + kLogFloor).log().matrix();
}

Eigen::MatrixXd UDiTBackbone::token_features(const Spectrogram& z, const Eigen::VectorXd& profile) const {
  const Eigen::Index f = z.rows() / 2;
  Eigen::MatrixXd feats(z.rows() + 2 * f, z.cols());
  feats.topRows(z.rows()) = z;
  feats.middleRows(z.rows(), f) = log_magnitude(z);
  feats.bottomRows(f) = profile.replicate(1, z.cols());
  return feats;
}

ad::Var UDiTBackbone::block(const BlockSlots& s, const BoundParams& p, const ad::Var& x,
                            const ad::Var& cond) const {
  const int w = cfg_.width;
  const ad::Var mod = ad::affine(p[s.ada_w], cond, p[s.ada_b]);
  auto part = [&](int k) { return ad::slice_rows(mod, k * w, w); };

  ad::Var h = ad::modulate(ad::layer_norm(x), part(1), part(0));
  const ad::Var qkv = ad::affine(p[s.qkv_w], h, p[s.qkv_b]);
  ad::Var a = ad::attention(ad::slice_rows(qkv, 0, w), ad::slice_rows(qkv, w, w), ad::slice_rows(qkv, 2 * w, w),
                            cfg_.n_heads);
  a = ad::affine(p[s.o_w], a, p[s.o_b]);
  ad::Var y = ad::add(x, ad::mul_colvec(a, part(2)));

  h = ad::modulate(ad::layer_norm(y), part(4), part(3));
  const ad::Var m = ad::affine(p[s.fc2_w], ad::gelu(ad::affine(p[s.fc1_w], h, p[s.fc1_b])), p[s.fc2_b]);
  return ad::add(y, ad::mul_colvec(m, part(5)));
}

ad::Var UDiTBackbone::forward(ad::Tape& tape, const BoundParams& p, const Spectrogram& z,
                              const Spectrogram& enroll_in, double t, double r) const {
  if (p.size() != layout_.size()) throw ValidationError("UDiTBackbone: parameter count mismatch");
  Spectrogram enroll_trunc;
  const Spectrogram* enroll = &enroll_in;
  if (enroll_in.cols() > cfg_.max_prefix_frames) {
    static std::once_flag warned;
    std::call_once(warned, [&] {
      spdlog::warn("enrollment prefix of {} frames truncated to the last {} frames", enroll_in.cols(),
                   cfg_.max_prefix_frames);
    });
    enroll_trunc = enroll_in.rightCols(cfg_.max_prefix_frames);
    enroll = &enroll_trunc;
  }
  const Eigen::Index te = enroll->cols();
  const Eigen::Index tz = z.cols();

  // Every token also carries the time-averaged log-magnitude of the enrollment.
  const Eigen::VectorXd profile = te > 0 ? Eigen::VectorXd(log_magnitude(*enroll).rowwise().mean())
                                         : Eigen::VectorXd::Constant(z.rows() / 2, std::log(kLogFloor));
  const ad::Var xz =
      ad::add_colvec(ad::affine(p[in_w_], tape.constant(token_features(z, profile)), p[in_b_]), p[seg_mix_]);
  ad::Var x = xz;
  if (te > 0) {
    const ad::Var xe = ad::add_colvec(ad::affine(p[in_w_], tape.constant(token_features(*enroll, profile)), p[in_b_]),
                                      p[seg_enroll_]);
    x = ad::concat_cols(xe, xz);
  }

  const Eigen::VectorXd c_in = time_embedding(t, cfg_.time_embed_dim) + time_embedding(r - t, cfg_.time_embed_dim);
  const ad::Var c = ad::affine(p[t2_w_], ad::silu(ad::affine(p[t1_w_], tape.constant(c_in), p[t1_b_])), p[t2_b_]);
  const ad::Var cond = ad::silu(c);

  std::vector<ad::Var> skips;
  const int half = cfg_.n_blocks / 2;
  for (int i = 0; i < cfg_.n_blocks; ++i) {
    const BlockSlots& s = blocks_[static_cast<std::size_t>(i)];
    if (s.has_skip) {
      x = ad::affine(p[s.skip_w], ad::concat_rows(x, skips.back()), p[s.skip_b]);
      skips.pop_back();
    }
    x = block(s, p, x, cond);
    if (i < half) skips.push_back(x);
  }

  const int w = cfg_.width;
  const ad::Var fmod = ad::affine(p[final_ada_w_], cond, p[final_ada_b_]);
  ad::Var h = ad::modulate(ad::layer_norm(x), ad::slice_rows(fmod, w, w), ad::slice_rows(fmod, 0, w));
  if (te > 0) h = ad::slice_cols(h, te, tz);

  const ad::Var lin = ad::affine(p[out_w_], h, p[out_b_]);
  const ad::Var gain = ad::affine(p[gate_w_], h, p[gate_b_]);
  return ad::add(lin, ad::mul_const(ad::concat_rows(gain, gain), z));
}

Spectrogram mean_velocity(const VelocityModel& model, const ParamStore& params, const Spectrogram& z,
                          const Spectrogram& enroll, double t, double r) {
  ad::Tape tape;
  const BoundParams bound = BoundParams::frozen(tape, params);
  return model.apply(tape, bound, z, enroll, t, r).value();
}

Spectrogram stop_gradient_eval(const VelocityModel& model, const ParamStore& params, const Spectrogram& z,
                               const Spectrogram& enroll, double t, double r) {
  return mean_velocity(model, params, z, enroll, t, r);
}

GradientResult gradient(const ParamStore& params, const LossFn& loss_fn) {
  ad::Tape tape;
  const BoundParams bound = BoundParams::differentiable(tape, params);
  const ad::Var loss = loss_fn(tape, bound);
  if (loss.rows() != 1 || loss.cols() != 1) throw ValidationError("gradient: loss must be a scalar");
  const double value = loss.scalar();
  if (!std::isfinite(value)) throw NonFiniteLoss("total", value);
  tape.backward(loss);
  return {value, bound.gradients(tape)};
}

// ---------------------------------------------------------------------------

void MrConfig::validate() const {
  stft().validate();
  positive(conv_channels, "mr.conv_channels");
  positive(kernel, "mr.kernel");
  positive(stride, "mr.stride");
  positive(hidden, "mr.hidden");
  if (mask_prob < 0.0 || mask_prob > 1.0) throw ValidationError("mr config: mask_prob must lie in [0, 1]");
  if (max_shift_bins < 0) throw ValidationError("mr config: max_shift_bins must be non-negative");
}

MrRegressor::MrRegressor(MrConfig cfg) : cfg_(cfg) { cfg_.validate(); }

ParamStore MrRegressor::init_params(std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  const int f = cfg_.stft().bins();
  const int c = cfg_.conv_channels;
  const int k = cfg_.kernel;
  ParamStore p;
  auto w = [&](const char* name, Eigen::Index rows, Eigen::Index cols) {
    p.add(name, gaussian(rng, rows, cols, std::sqrt(2.0 / static_cast<double>(cols))));
  };
  auto b = [&](const char* name, Eigen::Index rows) { p.add(name, Eigen::MatrixXd::Zero(rows, 1)); };
  w("conv1.w", c, static_cast<Eigen::Index>(k) * f);
  b("conv1.b", c);
  w("conv2.w", c, static_cast<Eigen::Index>(k) * c);
  b("conv2.b", c);
  w("head.fc1.w", cfg_.hidden, 4 * c + kMatchStats);
  b("head.fc1.b", cfg_.hidden);
  p.add("head.fc2.w", gaussian(rng, 1, cfg_.hidden, 0.01));
  b("head.fc2.b", 1);
  return p;
}

Eigen::MatrixXd MrRegressor::features(const Waveform& w) const {
  if (w.size() == 0) throw ValidationError("mr_predict: empty waveform");
  const Spectrogram spec = stft(w, cfg_.stft());
  return (magnitude(spec).array() + kLogFloor).log().matrix();
}

Eigen::VectorXd MrRegressor::match_statistics(const Eigen::MatrixXd& mix_feats, const Eigen::MatrixXd& enroll_feats) {
  const Eigen::ArrayXd pm = (2.0 * mix_feats.array()).exp().rowwise().mean();
  const Eigen::ArrayXd pe = (2.0 * enroll_feats.array()).exp().rowwise().mean();
  Eigen::VectorXd out(kMatchStats);
  out(0) = std::log(static_cast<double>(pm.size()) * (pm * pe).sum() / (pm.sum() * pe.sum()));
  out(1) = std::sqrt((pm * pe).sum() / std::sqrt(pm.square().sum() * pe.square().sum()));
  out(2) = std::log(pm.sum() / pe.sum());
  return out;
}

Eigen::Index MrRegressor::min_frames() const {
  // Two strided convolutions must each see at least one window.
  return static_cast<Eigen::Index>(cfg_.kernel) + static_cast<Eigen::Index>(cfg_.stride) * (cfg_.kernel - 1);
}

ad::Var MrRegressor::encode(const BoundParams& p, ad::Tape& tape, const Eigen::MatrixXd& feats) const {
  if (feats.cols() < min_frames()) {
    throw ValidationError("mr_predict: input of " + std::to_string(feats.cols()) + " frames is shorter than the " +
                          std::to_string(min_frames()) + " frames the encoder needs");
  }
  ad::Var x = tape.constant(feats);
  x = ad::relu(ad::affine(p[c1_w_], ad::unfold_cols(x, cfg_.kernel, cfg_.stride), p[c1_b_]));
  x = ad::relu(ad::affine(p[c2_w_], ad::unfold_cols(x, cfg_.kernel, cfg_.stride), p[c2_b_]));
  // Statistics pooling: per-channel mean and standard deviation over time.
  const ad::Var mean = ad::mean_cols(x);
  const ad::Var second = ad::mean_cols(ad::mul(x, x));
  const ad::Var var = ad::sub(second, ad::mul(mean, mean));
  return ad::concat_rows(mean, ad::sqrt(ad::relu(var), 1e-6));
}

ad::Var MrRegressor::logit(ad::Tape& tape, const BoundParams& p, const Eigen::MatrixXd& mix_feats,
                           const Eigen::MatrixXd& enroll_feats) const {
  ++evaluations_;
  const ad::Var pooled = ad::concat_rows(ad::concat_rows(encode(p, tape, mix_feats), encode(p, tape, enroll_feats)),
                                         tape.constant(match_statistics(mix_feats, enroll_feats)));
  const ad::Var h = ad::relu(ad::affine(p[h1_w_], pooled, p[h1_b_]));
  return ad::affine(p[h2_w_], h, p[h2_b_]);
}

double mr_predict(const MrRegressor& model, const ParamStore& params, const Waveform& y, const Waveform& e) {
  if (y.size() == 0 || e.size() == 0) throw ValidationError("mr_predict: empty input waveform");
  ad::Tape tape;
  const BoundParams bound = BoundParams::frozen(tape, params);
  const double z = model.logit(tape, bound, model.features(y), model.features(e)).scalar();
  return logistic(z);
}

}  // namespace aftse
