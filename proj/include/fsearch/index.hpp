#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "corpus.hpp"
#include "embedder.hpp"

namespace fsearch {

enum class IndexField { statement_text, informalization };

inline std::string_view to_string(IndexField f) {
  return f == IndexField::statement_text ? "statement_text" : "informalization";
}

struct SearchResult {
  std::string id;
  double score = 0.0;
  std::size_t rank = 0;  // 1-based

  friend bool operator==(const SearchResult&, const SearchResult&) = default;
};

/// Result ordering: score descending, then id ascending.
inline bool result_before(double sa, const std::string& ia, double sb, const std::string& ib) {
  if (sa != sb) return sa > sb;
  return ia < ib;
}

/// Exact cosine index: n unit-norm float32 rows of dimension d.
class VectorIndex {
 public:
  VectorIndex() = default;

  VectorIndex(std::size_t dim, std::vector<std::string> ids, std::vector<float> rows,
              std::uint64_t encoder_checksum)
      : dim_(dim), ids_(std::move(ids)), rows_(std::move(rows)), checksum_(encoder_checksum) {
    if (dim_ == 0 || rows_.size() != ids_.size() * dim_)
      throw Error(ErrorCode::BadIndexFile, "index", "row count does not match id count");
    std::unordered_set<std::string> seen;
    for (const auto& id : ids_)
      if (!seen.insert(id).second) throw Error(ErrorCode::DuplicateId, id);
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      double sq = 0.0;
      for (float v : row(i)) sq += static_cast<double>(v) * v;
      if (std::abs(std::sqrt(sq) - 1.0) > 1e-5)
        throw Error(ErrorCode::BadIndexFile, ids_[i], "row is not unit-norm");
    }
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  std::uint64_t encoder_checksum() const { return checksum_; }
  std::span<const float> row(std::size_t i) const { return {rows_.data() + i * dim_, dim_}; }

  double score(std::size_t i, std::span<const double> q) const {
    const auto r = row(i);
    double s = 0.0;
    for (std::size_t k = 0; k < dim_; ++k) s += q[k] * static_cast<double>(r[k]);
    return s;
  }

  /// Exact top-min(k, n) scan for a precomputed unit query vector.
  std::vector<SearchResult> search_vector(std::span<const double> q, std::size_t k) const {
    if (k < 1) throw Error(ErrorCode::PreconditionViolation, "k", "must be >= 1");
    if (q.size() != dim_) throw Error(ErrorCode::EncoderMismatch, "query", "dimension mismatch");
    std::vector<std::pair<double, std::size_t>> scored(size());
    for (std::size_t i = 0; i < size(); ++i) scored[i] = {score(i, q), i};
    const std::size_t top = std::min(k, size());
    auto cmp = [&](const auto& a, const auto& b) {
      return result_before(a.first, ids_[a.second], b.first, ids_[b.second]);
    };
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(top),
                      scored.end(), cmp);
    std::vector<SearchResult> out;
    out.reserve(top);
    for (std::size_t r = 0; r < top; ++r)
      out.push_back({ids_[scored[r].second], scored[r].first, r + 1});
    return out;
  }

  template <TextEncoder E>
  std::vector<SearchResult> search(std::string_view query, const E& enc, std::size_t k) const {
    if (enc.checksum() != checksum_)
      throw Error(ErrorCode::EncoderMismatch, hex64(enc.checksum()),
                  "index built with " + hex64(checksum_));
    return search_vector(enc.embed(query), k);
  }

  static constexpr std::uint32_t kMagic = 0x58444946;  // "FIDX"
  static constexpr std::uint32_t kVersion = 1;

  std::string serialize() const {
    BinaryWriter w;
    w.put(kMagic);
    w.put(kVersion);
    w.put(static_cast<std::uint32_t>(dim_));
    w.put(static_cast<std::uint64_t>(ids_.size()));
    w.put(checksum_);
    for (const auto& id : ids_) w.put_string(id);
    for (float v : rows_) w.put(v);
    return w.data();
  }

  static VectorIndex deserialize(std::string_view bytes) {
    BinaryReader r(bytes, ErrorCode::BadIndexFile, "index");
    if (r.get<std::uint32_t>() != kMagic) throw Error(ErrorCode::BadIndexFile, "index", "bad magic");
    if (r.get<std::uint32_t>() != kVersion)
      throw Error(ErrorCode::BadIndexFile, "index", "unsupported version");
    const auto d = r.get<std::uint32_t>();
    const auto n = r.get<std::uint64_t>();
    const auto checksum = r.get<std::uint64_t>();
    std::vector<std::string> ids;
    ids.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) ids.push_back(r.get_string());
    if (r.remaining() != n * d * sizeof(float))
      throw Error(ErrorCode::BadIndexFile, "index", "matrix size mismatch");
    std::vector<float> rows(n * d);
    for (auto& v : rows) v = r.get<float>();
    return VectorIndex(d, std::move(ids), std::move(rows), checksum);
  }

  void save(const std::string& path) const { write_file(path, serialize()); }
  static VectorIndex load(const std::string& path) { return deserialize(read_file(path)); }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<float> rows_;
  std::uint64_t checksum_ = 0;
};

/// Rows in corpus order. Rows are renormalized after the float32 cast.
template <TextEncoder E>
VectorIndex build_index(const Corpus& corpus, const E& enc,
                        IndexField field = IndexField::statement_text) {
  std::vector<std::string> ids;
  std::vector<float> rows;
  ids.reserve(corpus.size());
  rows.reserve(corpus.size() * enc.dim());
  for (const auto& s : corpus.statements()) {
    if (field == IndexField::informalization && !s.informalization)
      throw Error(ErrorCode::DegenerateEmbedding, s.id, "no informalization to embed");
    const std::string& text =
        field == IndexField::statement_text ? s.statement_text : *s.informalization;
    Embedding e;
    try {
      e = enc.embed(text);
    } catch (const Error& err) {
      if (err.code() == ErrorCode::DegenerateEmbedding)
        throw Error(ErrorCode::DegenerateEmbedding, s.id);
      throw;
    }
    std::vector<float> f(e.begin(), e.end());
    double sq = 0.0;
    for (float v : f) sq += static_cast<double>(v) * v;
    const double inv = 1.0 / std::sqrt(sq);
    for (float v : f) rows.push_back(static_cast<float>(v * inv));
    ids.push_back(s.id);
  }
  return VectorIndex(enc.dim(), std::move(ids), std::move(rows), enc.checksum());
}

}  // namespace fsearch
