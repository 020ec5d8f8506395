#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dfswe/config.hpp"
#include "dfswe/errors.hpp"
#include "dfswe/image.hpp"
#include "dfswe/layers.hpp"
#include "dfswe/tensor.hpp"

namespace dfswe {

/// Latent blocks of a whole batch plus the per-sample log|det dz/dx|.
template <typename Scalar>
struct BatchLatents {
  std::vector<Tensor<Scalar>> blocks;
  Eigen::VectorXd logdet;

  LatentStack<Scalar> sample(int b) const {
    LatentStack<Scalar> zs;
    for (const auto& blk : blocks) zs.blocks.push_back(blk.sample(b));
    return zs;
  }
};

struct LogLikelihood {
  double nats = 0.0;
  double bits_per_dim = 0.0;
};

/// Multi-scale invertible flow: squeeze -> K x (actnorm, 1x1 mixing, affine
/// coupling) -> split, repeated over `levels`. Immutable apart from the
/// explicit training entry points; const members are safe to call
/// concurrently.
template <typename Scalar>
class Glow {
public:
  /// Random initialization: identity actnorm, random rotation for channel
  /// mixing, He-initialized coupling nets with a zeroed output layer.
  Glow(const GlowConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    int c = config_.channels;
    params_.levels.resize(config_.levels);
    for (int level = 0; level < config_.levels; ++level) {
      c *= 4;
      for (int k = 0; k < config_.steps_per_level; ++k)
        params_.levels[level].push_back(init_step(c, config_.hidden_width, rng, normal));
      if (level + 1 < config_.levels) c /= 2;
    }
  }

  Glow(const GlowConfig& config, GlowParams<Scalar> params, bool actnorm_initialized)
      : config_(config), params_(std::move(params)), actnorm_initialized_(actnorm_initialized) {
    config_.validate();
    check_param_shapes();
    validate();
  }

  /// Flow whose every layer is the exact identity (zero log-determinant).
  static Glow identity(const GlowConfig& config) {
    Glow g(config, 0);
    g.params_.visit([](const std::string& name, RowMat<Scalar>& m, bool) {
      if (name.ends_with("mix.perm"))
        m.setIdentity();
      else if (name.ends_with("mix.sign_diag"))
        m.setOnes();
      else
        m.setZero();
    });
    g.actnorm_initialized_ = true;
    return g;
  }

  const GlowConfig& config() const { return config_; }
  const GlowParams<Scalar>& params() const { return params_; }
  GlowParams<Scalar>& mutable_params() { return params_; }
  bool actnorm_initialized() const { return actnorm_initialized_; }
  void set_actnorm_initialized(bool v) { actnorm_initialized_ = v; }
  std::vector<BlockShape> latent_shapes() const { return dfswe::latent_shapes(config_); }

  template <typename Other>
  Glow<Other> cast() const {
    return Glow<Other>(config_, params_.template cast<Other>(), actnorm_initialized_);
  }

  /// Throws ModelCorruption if any layer has lost invertibility.
  void validate() const {
    for (std::size_t li = 0; li < params_.levels.size(); ++li)
      for (std::size_t si = 0; si < params_.levels[li].size(); ++si) {
        const auto& s = params_.levels[li][si];
        const std::string where =
            "level " + std::to_string(li + 1) + " step " + std::to_string(si + 1);
        const auto scale = s.actnorm.log_scale.array().template cast<double>().exp();
        if (!s.actnorm.bias.allFinite() || !scale.allFinite() || (scale == 0.0).any())
          throw ModelCorruption("actnorm scale is zero or non-finite at " + where);
        const auto diag = s.mix.log_diag.array().template cast<double>().exp();
        if (!diag.allFinite() || (diag == 0.0).any() || !s.mix.lower.allFinite() ||
            !s.mix.upper.allFinite())
          throw ModelCorruption("channel mixing is singular at " + where);
        const auto& cp = s.coupling;
        if (!cp.w1.allFinite() || !cp.w2.allFinite() || !cp.w3.allFinite() ||
            !cp.b1.allFinite() || !cp.b2.allFinite() || !cp.b3.allFinite())
          throw ModelCorruption("coupling weights are non-finite at " + where);
      }
  }

  // ---------------------------------------------------------------- inference

  BatchLatents<Scalar> forward_batch(const Tensor<Scalar>& x) const {
    return run_forward(x, nullptr, NoHook{});
  }

  Tensor<Scalar> inverse_batch(const std::vector<Tensor<Scalar>>& blocks) const {
    validate();
    const auto shapes = latent_shapes();
    if (blocks.size() != shapes.size()) throw ShapeError("inverse: wrong number of latent blocks");
    const int n = blocks.front().n;
    for (std::size_t i = 0; i < shapes.size(); ++i)
      if (blocks[i].shape() != shapes[i] || blocks[i].n != n)
        throw ShapeError("inverse: latent block " + std::to_string(i + 1) + " has the wrong shape");

    Tensor<Scalar> x;
    for (int level = config_.levels - 1; level >= 0; --level) {
      if (level == config_.levels - 1) {
        x = blocks[level];
      } else {
        Tensor<Scalar> merged = Tensor<Scalar>::zeros(n, x.c + blocks[level].c, x.h, x.w);
        merged.data.topRows(x.c) = x.data;
        merged.data.bottomRows(blocks[level].c) = blocks[level].data;
        x = std::move(merged);
      }
      const auto& steps = params_.levels[level];
      for (int k = int(steps.size()) - 1; k >= 0; --k) x = step_inverse(steps[k], x);
      x = detail::unsqueeze(x);
    }
    return x;
  }

  /// z = f(x) and log|det dz/dx| for a single model-space image.
  std::pair<LatentStack<Scalar>, double> forward(const ImageTensor<Scalar>& x) const {
    const auto in = to_model_space(x);
    if (in.pixels.n != 1) throw ShapeError("forward expects a single image");
    auto out = forward_batch(in.pixels);
    return {out.sample(0), out.logdet(0)};
  }

  ImageTensor<Scalar> inverse(const LatentStack<Scalar>& zs) const {
    check_shapes(zs, latent_shapes());
    return {inverse_batch(zs.blocks), Domain::model_space};
  }

  // ---------------------------------------------------------------- training

  /// Data-dependent actnorm initialization: every actnorm gets per-channel
  /// zero mean and unit variance on this batch.
  void initialize_actnorm(const Tensor<Scalar>& batch) {
    run_forward(batch, nullptr, [this](int level, int step, const RowMat<Scalar>& x) {
      auto& an = params_.levels[level][step].actnorm;
      const Eigen::ArrayXd mean = x.template cast<double>().rowwise().mean().array();
      const Eigen::ArrayXd var =
          (x.template cast<double>().colwise() - mean.matrix()).array().square().rowwise().mean();
      an.bias = (-mean).template cast<Scalar>().matrix();
      an.log_scale = (-(var.sqrt() + 1e-6).log()).template cast<Scalar>().matrix();
    });
    actnorm_initialized_ = true;
  }

  /// Mean negative log-likelihood of the batch in bits per dimension;
  /// accumulates d(loss)/d(params) into `grad` (same layout as params()).
  double loss_and_gradient(const Tensor<Scalar>& batch, GlowParams<Scalar>& grad) const {
    Tape tape;
    auto out = run_forward(batch, &tape, NoHook{});
    const int n = batch.n;
    const double D = double(config_.dims());
    const double norm = 1.0 / (n * D * std::numbers::ln2);

    Eigen::VectorXd nats = out.logdet.array() - 0.5 * D * std::log(2.0 * std::numbers::pi);
    for (const auto& blk : out.blocks)
      nats -= 0.5 * detail::per_sample_sum(blk.data.array().square().matrix(), n);
    const double loss = -nats.mean() / (D * std::numbers::ln2) + config_.n_bits;

    const Scalar g = Scalar(-norm);  // d loss / d logdet of one sample
    RowMat<Scalar> dx;
    for (int level = config_.levels - 1; level >= 0; --level) {
      RowMat<Scalar> dz = out.blocks[level].data * Scalar(norm);
      if (level == config_.levels - 1) {
        dx = std::move(dz);
      } else {
        RowMat<Scalar> merged(dx.rows() + dz.rows(), dx.cols());
        merged.topRows(dx.rows()) = dx;
        merged.bottomRows(dz.rows()) = dz;
        dx = std::move(merged);
      }
      const auto& lt = tape.levels[level];
      auto& gsteps = grad.levels[level];
      for (int k = int(lt.steps.size()) - 1; k >= 0; --k)
        dx = step_backward(params_.levels[level][k], lt.steps[k], gsteps[k], dx, g, lt.n, lt.h, lt.w);
      Tensor<Scalar> t{lt.n, int(dx.rows()), lt.h, lt.w, std::move(dx)};
      dx = detail::unsqueeze(t).data;
    }
    return loss;
  }

private:
  struct NoHook {
    void operator()(int, int, const RowMat<Scalar>&) const {}
  };

  struct StepCache {
    RowMat<Scalar> actnorm_out;  // input of the mixing layer
    RowMat<Scalar> mix_out;      // input of the coupling layer
    RowMat<Scalar> cols_a;       // im2col of the active half
    RowMat<Scalar> a1, a2;       // pre-activations of the coupling net
    RowMat<Scalar> scale;        // coupling scale s
    RowMat<Scalar> shifted;      // x_b + shift
  };
  struct LevelTape {
    int n = 0, h = 0, w = 0;
    std::vector<StepCache> steps;
  };
  struct Tape {
    std::vector<LevelTape> levels;
  };


  static constexpr double kScaleOffset = 2.0;

  // Coupling scale s = sigmoid(raw + 2) / sigmoid(2): bounded above, and the
  // zero-initialized output layer gives exactly s = 1.
  static double sigmoid_at_offset() { return 1.0 / (1.0 + std::exp(-kScaleOffset)); }

  static StepParams<Scalar> init_step(int c, int hidden, std::mt19937_64& rng,
                                      std::normal_distribution<double>& normal) {
    StepParams<Scalar> s;
    s.actnorm.bias = RowMat<Scalar>::Zero(c, 1);
    s.actnorm.log_scale = RowMat<Scalar>::Zero(c, 1);

    Eigen::MatrixXd g(c, c);
    for (int i = 0; i < c; ++i)
      for (int j = 0; j < c; ++j) g(i, j) = normal(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    const Eigen::MatrixXd q = qr.householderQ();
    // P q = L U, so q = P^T L U.
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(q);
    const Eigen::MatrixXd lu_mat = lu.matrixLU();
    const Eigen::MatrixXd perm = lu.permutationP().transpose() * Eigen::MatrixXd::Identity(c, c);
    const Eigen::MatrixXd lower = lu_mat.triangularView<Eigen::StrictlyLower>();
    const Eigen::MatrixXd upper = lu_mat.triangularView<Eigen::StrictlyUpper>();
    const Eigen::VectorXd diag = lu_mat.diagonal();
    s.mix.perm = perm.cast<Scalar>();
    s.mix.lower = lower.cast<Scalar>();
    s.mix.upper = upper.cast<Scalar>();
    s.mix.log_diag = diag.array().abs().log().matrix().cast<Scalar>();
    s.mix.sign_diag = diag.array().sign().matrix().cast<Scalar>();

    const int ca = c / 2, cb = c - c / 2;
    auto he = [&](int rows, int cols) {
      RowMat<Scalar> m(rows, cols);
      const double sd = std::sqrt(2.0 / cols);
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = Scalar(normal(rng) * sd);
      return m;
    };
    s.coupling.w1 = he(hidden, ca * 9);
    s.coupling.b1 = RowMat<Scalar>::Zero(hidden, 1);
    s.coupling.w2 = he(hidden, hidden);
    s.coupling.b2 = RowMat<Scalar>::Zero(hidden, 1);
    s.coupling.w3 = RowMat<Scalar>::Zero(2 * cb, hidden * 9);
    s.coupling.b3 = RowMat<Scalar>::Zero(2 * cb, 1);
    return s;
  }

  void check_param_shapes() const {
    if (int(params_.levels.size()) != config_.levels)
      throw ShapeError("parameter level count does not match config");
    int c = config_.channels;
    for (int level = 0; level < config_.levels; ++level) {
      c *= 4;
      const int ca = c / 2, cb = c - c / 2, hw = config_.hidden_width;
      if (int(params_.levels[level].size()) != config_.steps_per_level)
        throw ShapeError("parameter step count does not match config");
      for (const auto& s : params_.levels[level]) {
        auto expect = [](const RowMat<Scalar>& m, int r, int cc, const char* what) {
          if (m.rows() != r || m.cols() != cc)
            throw ShapeError(std::string("parameter ") + what + " has the wrong shape");
        };
        expect(s.actnorm.bias, c, 1, "actnorm.bias");
        expect(s.actnorm.log_scale, c, 1, "actnorm.log_scale");
        expect(s.mix.perm, c, c, "mix.perm");
        expect(s.mix.lower, c, c, "mix.lower");
        expect(s.mix.upper, c, c, "mix.upper");
        expect(s.mix.log_diag, c, 1, "mix.log_diag");
        expect(s.mix.sign_diag, c, 1, "mix.sign_diag");
        expect(s.coupling.w1, hw, ca * 9, "coupling.w1");
        expect(s.coupling.b1, hw, 1, "coupling.b1");
        expect(s.coupling.w2, hw, hw, "coupling.w2");
        expect(s.coupling.b2, hw, 1, "coupling.b2");
        expect(s.coupling.w3, 2 * cb, hw * 9, "coupling.w3");
        expect(s.coupling.b3, 2 * cb, 1, "coupling.b3");
      }
      if (level + 1 < config_.levels) c /= 2;
    }
  }

  struct MixFactors {
    Eigen::MatrixXd perm, lower_unit, upper_full, weight;
  };

  static MixFactors mix_factors(const MixParams<Scalar>& p) {
    MixFactors f;
    f.perm = p.perm.template cast<double>();
    f.lower_unit = p.lower.template cast<double>().template triangularView<Eigen::StrictlyLower>();
    f.lower_unit.diagonal().setOnes();
    f.upper_full = p.upper.template cast<double>().template triangularView<Eigen::StrictlyUpper>();
    f.upper_full.diagonal() = (p.sign_diag.template cast<double>().array() *
                               p.log_diag.template cast<double>().array().exp())
                                  .matrix();
    f.weight = f.perm * f.lower_unit * f.upper_full;
    return f;
  }

  static RowMat<Scalar> mix_weight(const MixParams<Scalar>& p) {
    return mix_factors(p).weight.template cast<Scalar>();
  }

  static RowMat<Scalar> mix_weight_inverse(const MixParams<Scalar>& p) {
    const auto f = mix_factors(p);
    // W^-1 = U^-1 L^-1 P^T
    Eigen::MatrixXd inv = f.perm.transpose();
    f.lower_unit.template triangularView<Eigen::UnitLower>().solveInPlace(inv);
    f.upper_full.template triangularView<Eigen::Upper>().solveInPlace(inv);
    return inv.template cast<Scalar>();
  }

  static void check_finite(const RowMat<Scalar>& m, int level, int step, const char* layer) {
    if (!m.allFinite())
      throw NumericError("non-finite activation after " + std::string(layer) + " at level " +
                         std::to_string(level + 1) + " step " + std::to_string(step + 1));
  }

  template <typename Hook>
  BatchLatents<Scalar> run_forward(const Tensor<Scalar>& input, Tape* tape, Hook&& hook) const {
    if (input.c != config_.channels || input.h != config_.height || input.w != config_.width)
      throw ShapeError("input is " + std::to_string(input.c) + "x" + std::to_string(input.h) +
                       "x" + std::to_string(input.w) + ", model expects " +
                       std::to_string(config_.channels) + "x" + std::to_string(config_.height) +
                       "x" + std::to_string(config_.width));
    if (!input.data.allFinite()) throw NumericError("input image contains non-finite values");
    const int n = input.n;
    BatchLatents<Scalar> out;
    out.logdet = Eigen::VectorXd::Zero(n);
    if (tape) tape->levels.resize(config_.levels);

    Tensor<Scalar> x = input;
    for (int level = 0; level < config_.levels; ++level) {
      x = detail::squeeze(x);
      LevelTape* lt = tape ? &tape->levels[level] : nullptr;
      if (lt) {
        lt->n = x.n;
        lt->h = x.h;
        lt->w = x.w;
        lt->steps.resize(params_.levels[level].size());
      }
      for (std::size_t k = 0; k < params_.levels[level].size(); ++k) {
        hook(level, int(k), x.data);
        step_forward(params_.levels[level][k], x, out.logdet, lt ? &lt->steps[k] : nullptr,
                     level, int(k));
      }
      if (level + 1 < config_.levels) {
        const int keep = x.c / 2;
        Tensor<Scalar> z{x.n, x.c - keep, x.h, x.w, x.data.bottomRows(x.c - keep)};
        out.blocks.push_back(std::move(z));
        RowMat<Scalar> rest = x.data.topRows(keep);
        x.data = std::move(rest);
        x.c = keep;
      } else {
        out.blocks.push_back(std::move(x));
      }
    }
    return out;
  }

  void step_forward(const StepParams<Scalar>& p, Tensor<Scalar>& x, Eigen::VectorXd& logdet,
                    StepCache* cache, int level, int step) const {
    const int n = x.n, h = x.h, w = x.w;
    const double hw = double(h) * w;

    // actnorm
    const auto& an = p.actnorm;
    x.data.colwise() += an.bias.col(0);
    x.data.array().colwise() *= an.log_scale.col(0).array().exp();
    logdet.array() += hw * an.log_scale.template cast<double>().sum();
    check_finite(x.data, level, step, "actnorm");
    if (cache) cache->actnorm_out = x.data;

    // 1x1 mixing
    const RowMat<Scalar> wmix = mix_weight(p.mix);
    RowMat<Scalar> mixed;
    mixed.noalias() = wmix * x.data;
    x.data = std::move(mixed);
    logdet.array() += hw * p.mix.log_diag.template cast<double>().sum();
    check_finite(x.data, level, step, "channel mixing");
    if (cache) cache->mix_out = x.data;

    // affine coupling
    const int ca = x.c / 2, cb = x.c - ca;
    const auto& cp = p.coupling;
    RowMat<Scalar> cols_a;
    detail::im2col3x3(x.data.topRows(ca), n, h, w, cols_a);
    RowMat<Scalar> a1;
    a1.noalias() = cp.w1 * cols_a;
    a1.colwise() += cp.b1.col(0);
    RowMat<Scalar> a2;
    a2.noalias() = cp.w2 * a1.cwiseMax(Scalar(0));
    a2.colwise() += cp.b2.col(0);
    RowMat<Scalar> cols_r2;
    detail::im2col3x3(a2.cwiseMax(Scalar(0)), n, h, w, cols_r2);
    RowMat<Scalar> hout;
    hout.noalias() = cp.w3 * cols_r2;
    hout.colwise() += cp.b3.col(0);

    const Scalar inv_sig0 = Scalar(1.0 / sigmoid_at_offset());
    const auto raw = hout.bottomRows(cb).array() + Scalar(kScaleOffset);
    RowMat<Scalar> scale = ((Scalar(1) / (Scalar(1) + (-raw).exp())) * inv_sig0).matrix();
    RowMat<Scalar> shifted = x.data.bottomRows(cb) + hout.topRows(cb);
    x.data.bottomRows(cb) = shifted.cwiseProduct(scale);
    logdet += detail::per_sample_sum(scale.array().log().matrix(), n);
    check_finite(x.data, level, step, "affine coupling");

    if (cache) {
      cache->cols_a = std::move(cols_a);
      cache->a1 = std::move(a1);
      cache->a2 = std::move(a2);
      cache->scale = std::move(scale);
      cache->shifted = std::move(shifted);
    }
  }

  Tensor<Scalar> step_inverse(const StepParams<Scalar>& p, Tensor<Scalar> y) const {
    const int n = y.n, h = y.h, w = y.w;
    const int ca = y.c / 2, cb = y.c - ca;
    const auto& cp = p.coupling;

    RowMat<Scalar> cols_a;
    detail::im2col3x3(y.data.topRows(ca), n, h, w, cols_a);
    RowMat<Scalar> a1;
    a1.noalias() = cp.w1 * cols_a;
    a1.colwise() += cp.b1.col(0);
    RowMat<Scalar> a2;
    a2.noalias() = cp.w2 * a1.cwiseMax(Scalar(0));
    a2.colwise() += cp.b2.col(0);
    RowMat<Scalar> cols_r2;
    detail::im2col3x3(a2.cwiseMax(Scalar(0)), n, h, w, cols_r2);
    RowMat<Scalar> hout;
    hout.noalias() = cp.w3 * cols_r2;
    hout.colwise() += cp.b3.col(0);
    const Scalar inv_sig0 = Scalar(1.0 / sigmoid_at_offset());
    const auto raw = hout.bottomRows(cb).array() + Scalar(kScaleOffset);
    const RowMat<Scalar> scale = ((Scalar(1) / (Scalar(1) + (-raw).exp())) * inv_sig0).matrix();
    y.data.bottomRows(cb) = (y.data.bottomRows(cb).array() / scale.array()).matrix() - hout.topRows(cb);

    RowMat<Scalar> unmixed;
    unmixed.noalias() = mix_weight_inverse(p.mix) * y.data;
    y.data = std::move(unmixed);

    y.data.array().colwise() *= (-p.actnorm.log_scale.col(0).array()).exp();
    y.data.colwise() -= p.actnorm.bias.col(0);
    return y;
  }

  /// Backpropagates dy through one step; returns d(loss)/dx. `g` is the
  /// loss gradient with respect to each sample's log-determinant.
  RowMat<Scalar> step_backward(const StepParams<Scalar>& p, const StepCache& cache,
                               StepParams<Scalar>& grad, const RowMat<Scalar>& dy, Scalar g,
                               int n, int h, int w) const {
    const int c = int(dy.rows());
    const int ca = c / 2, cb = c - ca;
    const Scalar columns = Scalar(dy.cols());
    const auto& cp = p.coupling;
    auto& gc = grad.coupling;

    // affine coupling
    const Scalar sig0 = Scalar(sigmoid_at_offset());
    const auto s = cache.scale.array();
    const auto dyb = dy.bottomRows(cb).array();
    RowMat<Scalar> dh(2 * cb, dy.cols());
    dh.topRows(cb) = (dyb * s).matrix();
    dh.bottomRows(cb) = ((dyb * cache.shifted.array() * s + g) * (Scalar(1) - s * sig0)).matrix();

    gc.b3 += dh.rowwise().sum();
    RowMat<Scalar> cols_r2;
    detail::im2col3x3(cache.a2.cwiseMax(Scalar(0)), n, h, w, cols_r2);
    gc.w3.noalias() += dh * cols_r2.transpose();
    RowMat<Scalar> dcols;
    dcols.noalias() = cp.w3.transpose() * dh;
    RowMat<Scalar> da2 = detail::col2im3x3(dcols, n, h, w);
    da2.array() *= (cache.a2.array() > Scalar(0)).template cast<Scalar>();
    gc.b2 += da2.rowwise().sum();
    gc.w2.noalias() += da2 * cache.a1.cwiseMax(Scalar(0)).transpose();
    RowMat<Scalar> da1;
    da1.noalias() = cp.w2.transpose() * da2;
    da1.array() *= (cache.a1.array() > Scalar(0)).template cast<Scalar>();
    gc.b1 += da1.rowwise().sum();
    gc.w1.noalias() += da1 * cache.cols_a.transpose();
    dcols.noalias() = cp.w1.transpose() * da1;

    RowMat<Scalar> dx(c, dy.cols());
    dx.topRows(ca) = dy.topRows(ca) + detail::col2im3x3(dcols, n, h, w);
    dx.bottomRows(cb) = (dyb * s).matrix();

    // 1x1 mixing
    const auto f = mix_factors(p.mix);
    const Eigen::MatrixXd dw =
        (dx * cache.actnorm_out.transpose()).template cast<double>();
    const Eigen::MatrixXd dlower = f.perm.transpose() * dw * f.upper_full.transpose();
    const Eigen::MatrixXd dupper = f.lower_unit.transpose() * f.perm.transpose() * dw;
    grad.mix.lower += Eigen::MatrixXd(dlower.triangularView<Eigen::StrictlyLower>()).cast<Scalar>();
    grad.mix.upper += Eigen::MatrixXd(dupper.triangularView<Eigen::StrictlyUpper>()).cast<Scalar>();
    const Eigen::VectorXd ddiag = dupper.diagonal().array() * f.upper_full.diagonal().array();
    grad.mix.log_diag += (ddiag.array() + double(g) * double(columns)).matrix().cast<Scalar>();
    RowMat<Scalar> dmix;
    dmix.noalias() = f.weight.template cast<Scalar>().transpose() * dx;

    // actnorm
    const auto& an = p.actnorm;
    const auto scale_an = an.log_scale.col(0).array().exp();
    grad.actnorm.bias += (dmix.rowwise().sum().array() * scale_an).matrix();
    grad.actnorm.log_scale +=
        ((dmix.array() * cache.actnorm_out.array()).rowwise().sum() + g * columns).matrix();
    dmix.array().colwise() *= scale_an;
    return dmix;
  }

  GlowConfig config_;
  GlowParams<Scalar> params_;
  bool actnorm_initialized_ = false;
};

using GlowModel = Glow<float>;

/// Log-density of a single model-space image: nats = log N(f(x); 0, I) +
/// logdet, and bits/dim rescaled for the 2^n_bits input quantization.
template <typename Scalar>
LogLikelihood log_likelihood(const Glow<Scalar>& model, const ImageTensor<Scalar>& x) {
  const auto [zs, logdet] = model.forward(x);
  const double D = double(model.config().dims());
  double nats = logdet - 0.5 * D * std::log(2.0 * std::numbers::pi);
  for (const auto& b : zs.blocks) nats -= 0.5 * b.data.template cast<double>().squaredNorm();
  return {nats, -nats / (D * std::numbers::ln2) + model.config().n_bits};
}

/// i.i.d. N(0, temperature^2) latents, deterministic given the seed.
template <typename Scalar = float>
LatentStack<Scalar> sample_latents(const GlowConfig& config, double temperature,
                                   std::uint64_t seed) {
  if (!(temperature >= 0.0)) throw ConfigError("temperature must be >= 0");
  auto zs = zero_latents<Scalar>(latent_shapes(config));
  if (temperature == 0.0) return zs;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, temperature);
  for (auto& b : zs.blocks)
    for (std::int64_t i = 0; i < b.data.size(); ++i) b.data.data()[i] = Scalar(normal(rng));
  return zs;
}

/// Decode latents and quantize to `bit_depth` (defaults to the model's n_bits).
template <typename Scalar>
QuantizedImage generate(const Glow<Scalar>& model, const LatentStack<Scalar>& zs,
                        int bit_depth = 0) {
  return quantize(model.inverse(zs), bit_depth > 0 ? bit_depth : model.config().n_bits);
}

}  // namespace dfswe
