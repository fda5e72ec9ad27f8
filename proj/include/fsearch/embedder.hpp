#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "text.hpp"
#include "util.hpp"

namespace fsearch {

struct EncoderConfig {
  std::uint32_t feature_dim = 65536;  // F, power of two
  std::uint32_t embed_dim = 64;       // d
  int ngram_min = 3;
  int ngram_max = 5;
  bool word_unigrams = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (feature_dim == 0 || (feature_dim & (feature_dim - 1)) != 0)
      throw Error(ErrorCode::ConfigError, "feature_dim", "must be a positive power of two");
    if (embed_dim == 0) throw Error(ErrorCode::ConfigError, "embed_dim", "must be positive");
    if (ngram_min < 1 || ngram_max < ngram_min)
      throw Error(ErrorCode::ConfigError, "ngram_range", "invalid range");
  }
};

/// Sorted (feature, count) pairs with distinct features.
using SparseVector = std::vector<std::pair<std::uint32_t, double>>;

namespace detail {

// Distinct offset bases keep a word unigram and an equal character n-gram in
// different buckets.
inline const std::uint64_t kWordBasis = fnv1a64("w");
inline const std::uint64_t kCharBasis = fnv1a64("c");

}  // namespace detail

/// Hashed bag of word unigrams plus per-token character n-grams.
inline SparseVector featurize(std::string_view text, const EncoderConfig& cfg) {
  std::vector<std::uint32_t> buckets;
  const std::uint64_t mask = cfg.feature_dim - 1;
  for (const auto& tok : tokenize(text)) {
    if (cfg.word_unigrams)
      buckets.push_back(static_cast<std::uint32_t>(fnv1a64(tok, detail::kWordBasis) & mask));
    for (int n = cfg.ngram_min; n <= cfg.ngram_max; ++n) {
      if (tok.size() < static_cast<std::size_t>(n)) break;
      for (std::size_t i = 0; i + n <= tok.size(); ++i)
        buckets.push_back(static_cast<std::uint32_t>(
            fnv1a64(std::string_view(tok).substr(i, n), detail::kCharBasis) & mask));
    }
  }
  std::sort(buckets.begin(), buckets.end());
  SparseVector x;
  for (auto b : buckets) {
    if (!x.empty() && x.back().first == b)
      x.back().second += 1.0;
    else
      x.emplace_back(b, 1.0);
  }
  return x;
}

/// Encoder weights W (d x F). Stored feature-major in memory so that a sparse
/// input touches contiguous d-length columns; serialized row-major.
class EncoderParams {
 public:
  EncoderParams() = default;
  explicit EncoderParams(const EncoderConfig& cfg)
      : cfg_(cfg), w_(static_cast<std::size_t>(cfg.feature_dim) * cfg.embed_dim, 0.0) {
    cfg_.validate();
  }

  /// W_ij ~ U(-1/sqrt(F), 1/sqrt(F)), rounded to float32.
  static EncoderParams random(const EncoderConfig& cfg) {
    EncoderParams p(cfg);
    std::mt19937_64 rng(cfg.seed);
    const double a = 1.0 / std::sqrt(static_cast<double>(cfg.feature_dim));
    std::uniform_real_distribution<double> u(-a, a);
    // Draw in row-major order so the stream matches the on-disk layout.
    for (std::uint32_t r = 0; r < cfg.embed_dim; ++r)
      for (std::uint32_t j = 0; j < cfg.feature_dim; ++j) p.at(r, j) = u(rng);
    p.round_to_float();
    return p;
  }

  const EncoderConfig& config() const { return cfg_; }
  std::size_t dim() const { return cfg_.embed_dim; }
  std::size_t features() const { return cfg_.feature_dim; }

  double& at(std::size_t row, std::size_t feature) { return w_[feature * dim() + row]; }
  double at(std::size_t row, std::size_t feature) const { return w_[feature * dim() + row]; }

  std::span<const double> column(std::size_t feature) const {
    return {w_.data() + feature * dim(), dim()};
  }
  std::span<double> column(std::size_t feature) { return {w_.data() + feature * dim(), dim()}; }

  std::vector<double>& raw() { return w_; }
  const std::vector<double>& raw() const { return w_; }

  /// Parameters live on the float32 grid so checkpoints round-trip exactly.
  void round_to_float() {
    for (auto& v : w_) v = static_cast<double>(static_cast<float>(v));
  }

  void scale(double s) {
    for (auto& v : w_) v *= s;
  }

  /// Row-major float32 payload, as written to checkpoint files.
  std::string payload() const {
    BinaryWriter w;
    for (std::size_t r = 0; r < dim(); ++r)
      for (std::size_t j = 0; j < features(); ++j) w.put(static_cast<float>(at(r, j)));
    return w.data();
  }

  std::uint64_t checksum() const { return fnv1a64(payload()); }

  static constexpr std::uint32_t kMagic = 0x434E4546;  // "FENC"
  static constexpr std::uint32_t kVersion = 1;

  std::string serialize() const {
    BinaryWriter w;
    w.put(kMagic);
    w.put(kVersion);
    w.put(cfg_.feature_dim);
    w.put(cfg_.embed_dim);
    w.put(cfg_.seed);
    w.put_bytes(payload());
    return w.data();
  }

  /// N-gram settings are not part of the file; defaults from `base` apply.
  static EncoderParams deserialize(std::string_view bytes, const EncoderConfig& base = {}) {
    BinaryReader r(bytes, ErrorCode::BadCheckpoint, "encoder");
    if (r.get<std::uint32_t>() != kMagic)
      throw Error(ErrorCode::BadCheckpoint, "encoder", "bad magic");
    if (r.get<std::uint32_t>() != kVersion)
      throw Error(ErrorCode::BadCheckpoint, "encoder", "unsupported version");
    EncoderConfig cfg = base;
    cfg.feature_dim = r.get<std::uint32_t>();
    cfg.embed_dim = r.get<std::uint32_t>();
    cfg.seed = r.get<std::uint64_t>();
    try {
      cfg.validate();
    } catch (const Error& e) {
      throw Error(ErrorCode::BadCheckpoint, "encoder", e.what());
    }
    EncoderParams p(cfg);
    const std::size_t expect = static_cast<std::size_t>(cfg.feature_dim) * cfg.embed_dim * 4;
    if (r.remaining() != expect)
      throw Error(ErrorCode::BadCheckpoint, "encoder", "payload size mismatch");
    for (std::size_t row = 0; row < p.dim(); ++row)
      for (std::size_t j = 0; j < p.features(); ++j) {
        const float f = r.get<float>();
        if (!std::isfinite(f)) throw Error(ErrorCode::BadCheckpoint, "encoder", "non-finite");
        p.at(row, j) = f;
      }
    return p;
  }

  void save(const std::string& path) const { write_file(path, serialize()); }
  static EncoderParams load(const std::string& path, const EncoderConfig& base = {}) {
    return deserialize(read_file(path), base);
  }

  friend bool operator==(const EncoderParams& a, const EncoderParams& b) {
    return a.cfg_.feature_dim == b.cfg_.feature_dim && a.cfg_.embed_dim == b.cfg_.embed_dim &&
           a.w_ == b.w_;
  }

 private:
  EncoderConfig cfg_;
  std::vector<double> w_;
};

using Embedding = std::vector<double>;

/// Intermediate values of one embedding pass, kept for the backward pass.
struct EncodedText {
  SparseVector x;
  std::vector<double> z;  // W x
  double norm = 0.0;      // ||z||
  Embedding e;            // z / ||z||
};

inline constexpr double kDegenerateNorm = 1e-9;

inline EncodedText encode_features(SparseVector x, const EncoderParams& p,
                                   std::string_view what = {}) {
  EncodedText out;
  out.x = std::move(x);
  out.z.assign(p.dim(), 0.0);
  for (const auto& [j, c] : out.x) {
    const auto col = p.column(j);
    for (std::size_t r = 0; r < col.size(); ++r) out.z[r] += c * col[r];
  }
  double sq = 0.0;
  for (double v : out.z) sq += v * v;
  out.norm = std::sqrt(sq);
  if (!(out.norm >= kDegenerateNorm))
    throw Error(ErrorCode::DegenerateEmbedding, std::string(what), "||Wx|| below 1e-9");
  out.e.resize(out.z.size());
  for (std::size_t r = 0; r < out.z.size(); ++r) out.e[r] = out.z[r] / out.norm;
  return out;
}

inline EncodedText encode(std::string_view text, const EncoderParams& p,
                          std::string_view what = {}) {
  return encode_features(featurize(text, p.config()), p, what.empty() ? text : what);
}

/// e = Wx / ||Wx||.
inline Embedding embed(std::string_view text, const EncoderParams& p) {
  return encode(text, p).e;
}

/// Cosine similarity of unit vectors (plain dot product).
inline double sim(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// dL/dW restricted to the columns that received gradient.
class ParamGrad {
 public:
  ParamGrad() = default;
  ParamGrad(std::size_t dim, std::size_t features)
      : dim_(dim), features_(features), slot_(features, kNoSlot), zero_col_(dim, 0.0) {}

  std::size_t dim() const { return dim_; }
  std::size_t features() const { return features_; }

  /// Mutable column; allocated on first touch. Spans stay valid only until
  /// the next new column is touched.
  std::span<double> column(std::uint32_t j) {
    if (slot_[j] == kNoSlot) {
      slot_[j] = static_cast<std::uint32_t>(touched_.size());
      touched_.push_back(j);
      data_.resize(data_.size() + dim_, 0.0);
    }
    return {data_.data() + static_cast<std::size_t>(slot_[j]) * dim_, dim_};
  }

  std::span<const double> column(std::uint32_t j) const {
    if (slot_.empty() || slot_[j] == kNoSlot) return {zeros(), dim_};
    return {data_.data() + static_cast<std::size_t>(slot_[j]) * dim_, dim_};
  }

  double at(std::size_t row, std::uint32_t feature) const { return column(feature)[row]; }

  const std::vector<std::uint32_t>& touched() const { return touched_; }

  void add_scaled(const ParamGrad& other, double w) {
    for (auto j : other.touched_) {
      auto dst = column(j);
      auto src = other.column(j);
      for (std::size_t r = 0; r < dim_; ++r) dst[r] += w * src[r];
    }
  }

  void scale(double s) {
    for (auto& v : data_) v *= s;
  }

  void clear() {
    for (auto j : touched_) slot_[j] = kNoSlot;
    touched_.clear();
    data_.clear();
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

 private:
  static constexpr std::uint32_t kNoSlot = 0xFFFFFFFFu;

  const double* zeros() const { return zero_col_.data(); }

  std::size_t dim_ = 0;
  std::size_t features_ = 0;
  std::vector<std::uint32_t> slot_;
  std::vector<std::uint32_t> touched_;
  std::vector<double> data_;  // touched columns, in touch order
  std::vector<double> zero_col_;
};

/// Accumulates d(upstream . e)/dW into `grad`. With e = z/||z||,
/// de/dz = (I - e e^T)/||z||, so dz = (u - (u.e) e)/||z|| and dW[:,j] += dz * x_j.
inline void backward(const EncodedText& enc, std::span<const double> upstream, ParamGrad& grad) {
  const double ue = sim(upstream, enc.e);
  std::vector<double> dz(enc.e.size());
  for (std::size_t r = 0; r < dz.size(); ++r) dz[r] = (upstream[r] - ue * enc.e[r]) / enc.norm;
  for (const auto& [j, c] : enc.x) {
    auto col = grad.column(j);
    for (std::size_t r = 0; r < dz.size(); ++r) col[r] += c * dz[r];
  }
}

inline ParamGrad embed_grad(std::string_view text, const EncoderParams& p,
                            std::span<const double> upstream) {
  if (upstream.size() != p.dim())
    throw Error(ErrorCode::PreconditionViolation, "upstream", "length must equal embed_dim");
  ParamGrad g(p.dim(), p.features());
  backward(encode(text, p), upstream, g);
  return g;
}

/// Anything that maps text to a unit vector and identifies its weights.
template <typename E>
concept TextEncoder = requires(const E& enc, std::string_view text) {
  { enc.dim() } -> std::convertible_to<std::size_t>;
  { enc.embed(text) } -> std::convertible_to<Embedding>;
  { enc.checksum() } -> std::convertible_to<std::uint64_t>;
};

/// Non-owning TextEncoder over hashed-feature parameters. The checksum is
/// computed once at construction.
class HashedEncoder {
 public:
  explicit HashedEncoder(const EncoderParams& p) : params_(&p), checksum_(p.checksum()) {}
  std::size_t dim() const { return params_->dim(); }
  Embedding embed(std::string_view text) const { return fsearch::embed(text, *params_); }
  std::uint64_t checksum() const { return checksum_; }
  const EncoderParams& params() const { return *params_; }

 private:
  const EncoderParams* params_;
  std::uint64_t checksum_;
};

static_assert(TextEncoder<HashedEncoder>);

}  // namespace fsearch
