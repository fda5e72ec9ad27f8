#pragma once

#include <cmath>
#include <vector>

#include "embedder.hpp"

namespace fsearch {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adam with decoupled weight decay. Every parameter is updated each step,
/// including columns with zero gradient (their moments still decay).
class AdamW {
 public:
  AdamW() = default;
  AdamW(std::size_t n, AdamWConfig cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  void step(EncoderParams& p, const ParamGrad& g, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto& w = p.raw();
    const std::size_t d = p.dim();
    const double decay = 1.0 - lr * cfg_.weight_decay;
    for (std::size_t j = 0; j < p.features(); ++j) {
      const auto gcol = g.column(static_cast<std::uint32_t>(j));
      for (std::size_t r = 0; r < d; ++r) {
        const std::size_t i = j * d + r;
        const double gi = gcol[r];
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * gi;
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mhat = m_[i] / bc1;
        const double vhat = v_[i] / bc2;
        // Round on the store: parameters stay on the float32 grid.
        w[i] = static_cast<double>(static_cast<float>(w[i] * decay - lr * mhat / (std::sqrt(vhat) + cfg_.eps)));
      }
    }
  }

  std::uint64_t steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

  void write(BinaryWriter& w) const {
    w.put(cfg_.beta1);
    w.put(cfg_.beta2);
    w.put(cfg_.eps);
    w.put(cfg_.weight_decay);
    w.put(t_);
    w.put(static_cast<std::uint64_t>(m_.size()));
    for (double x : m_) w.put(x);
    for (double x : v_) w.put(x);
  }

  static AdamW read(BinaryReader& r) {
    AdamW a;
    a.cfg_.beta1 = r.get<double>();
    a.cfg_.beta2 = r.get<double>();
    a.cfg_.eps = r.get<double>();
    a.cfg_.weight_decay = r.get<double>();
    a.t_ = r.get<std::uint64_t>();
    const auto n = r.get<std::uint64_t>();
    a.m_.resize(n);
    a.v_.resize(n);
    for (auto& x : a.m_) x = r.get<double>();
    for (auto& x : a.v_) x = r.get<double>();
    return a;
  }

  friend bool operator==(const AdamW& a, const AdamW& b) {
    return a.t_ == b.t_ && a.m_ == b.m_ && a.v_ == b.v_;
  }

 private:
  AdamWConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<double> m_, v_;
};

}  // namespace fsearch
