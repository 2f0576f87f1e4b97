#pragma once

// Synthetic token source and downstream task stand-in.
//
// Tokens follow a first-order Markov chain over an alphabet of K symbols.
// Each token maps to a row of an embedding table, and a linear-softmax task
// head classifies the pooled embedding sequence. The label of a sample is the
// head's own prediction on the clean tokens, so a perfect link always
// classifies correctly and any accuracy loss is caused by the channel.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tonic/matrix.hpp"
#include "tonic/rng.hpp"

namespace tonic {

using Token = std::int32_t;
using TokenSequence = std::vector<Token>;

/// Erasure marker for gated sequences. Lies outside every alphabet [0, K).
inline constexpr Token kErased = -1;

/// Number of bits per token: ceil(log2 K).
inline int bits_for_alphabet(std::int64_t alphabet_size) {
  if (alphabet_size < 2) throw std::invalid_argument("alphabet size must be >= 2");
  int m = 0;
  while ((std::int64_t{1} << m) < alphabet_size) ++m;
  return m;
}

class SourceModel {
 public:
  SourceModel(int alphabet_size, int length, Matrix transition, std::vector<double> initial,
              std::uint64_t seed = 0)
      : alphabet_size_(alphabet_size),
        length_(length),
        bits_(bits_for_alphabet(alphabet_size)),
        transition_(std::move(transition)),
        initial_(std::move(initial)),
        seed_(seed) {
    if (length_ < 1) throw std::invalid_argument("SourceModel: length must be >= 1");
    const auto k = static_cast<std::size_t>(alphabet_size_);
    if (transition_.rows() != k || transition_.cols() != k || initial_.size() != k)
      throw std::invalid_argument("SourceModel: kernel shape does not match alphabet");
    auto check_row = [](std::span<const double> row) {
      double s = 0.0;
      for (double p : row) {
        if (!(p >= 0.0) || !std::isfinite(p))
          throw std::invalid_argument("SourceModel: negative or non-finite probability");
        s += p;
      }
      if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument("SourceModel: row does not sum to 1");
    };
    for (std::size_t r = 0; r < k; ++r) check_row(transition_.row(r));
    check_row(initial_);
  }

  /// Random kernel: each row mixes a self-transition of weight `stickiness`
  /// with a peaked random distribution. The initial distribution is random.
  static SourceModel random(int alphabet_size, int length, double stickiness, std::uint64_t seed) {
    if (stickiness < 0.0 || stickiness > 1.0)
      throw std::invalid_argument("SourceModel: stickiness must lie in [0, 1]");
    if (alphabet_size < 2) throw std::invalid_argument("alphabet size must be >= 2");
    Rng rng(derive_seed(seed, "source-kernel"));
    const auto k = static_cast<std::size_t>(alphabet_size);
    Matrix t(k, k);
    for (std::size_t r = 0; r < k; ++r) {
      std::vector<double> w(k);
      for (auto& x : w) {
        const double e = rng.exponential();
        x = e * e;
      }
      const double s = std::accumulate(w.begin(), w.end(), 0.0);
      for (std::size_t c = 0; c < k; ++c) t(r, c) = (1.0 - stickiness) * w[c] / s;
      t(r, r) += stickiness;
      renormalize(t.row(r));
    }
    std::vector<double> init(k);
    for (auto& x : init) x = rng.exponential();
    renormalize(init);
    return SourceModel(alphabet_size, length, std::move(t), std::move(init), seed);
  }

  int alphabet_size() const { return alphabet_size_; }
  int length() const { return length_; }
  int bits_per_token() const { return bits_; }
  std::uint64_t seed() const { return seed_; }
  const Matrix& transition() const { return transition_; }
  const std::vector<double>& initial() const { return initial_; }

  /// Exact marginal distribution of the token at `position`.
  std::vector<double> marginal(int position) const {
    std::vector<double> p = initial_;
    for (int i = 0; i < position; ++i) p = step(p);
    return p;
  }

  /// Most probable token averaged over all L positions (ties to lowest index).
  Token mode_token() const {
    std::vector<double> avg(initial_.size(), 0.0);
    std::vector<double> p = initial_;
    for (int i = 0; i < length_; ++i) {
      for (std::size_t k = 0; k < p.size(); ++k) avg[k] += p[k];
      p = step(p);
    }
    return static_cast<Token>(std::max_element(avg.begin(), avg.end()) - avg.begin());
  }

  std::vector<double> step(std::span<const double> p) const {
    const std::size_t k = initial_.size();
    std::vector<double> out(k, 0.0);
    for (std::size_t a = 0; a < k; ++a) {
      if (p[a] == 0.0) continue;
      const auto row = transition_.row(a);
      for (std::size_t b = 0; b < k; ++b) out[b] += p[a] * row[b];
    }
    return out;
  }

  TokenSequence draw(Rng& rng) const {
    TokenSequence t(static_cast<std::size_t>(length_));
    t[0] = static_cast<Token>(rng.categorical(initial_));
    for (std::size_t i = 1; i < t.size(); ++i)
      t[i] = static_cast<Token>(rng.categorical(transition_.row(static_cast<std::size_t>(t[i - 1]))));
    return t;
  }

 private:
  static void renormalize(std::span<double> v) {
    const double s = std::accumulate(v.begin(), v.end(), 0.0);
    for (auto& x : v) x /= s;
  }

  int alphabet_size_;
  int length_;
  int bits_;
  Matrix transition_;
  std::vector<double> initial_;
  std::uint64_t seed_;
};

/// K x D token embedding table with its cached diameter
/// max_{a,b} ||E[a] - E[b]||.
class EmbeddingTable {
 public:
  explicit EmbeddingTable(Matrix rows) : rows_(std::move(rows)) {
    if (rows_.rows() < 1 || rows_.cols() < 1) throw std::invalid_argument("EmbeddingTable: empty");
    for (double x : rows_.data())
      if (!std::isfinite(x)) throw std::invalid_argument("EmbeddingTable: non-finite entry");
    diameter_ = pairwise_max_distance(rows_);
  }

  static EmbeddingTable random(int alphabet_size, int dim, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "embedding-table"));
    Matrix m(static_cast<std::size_t>(alphabet_size), static_cast<std::size_t>(dim));
    for (auto& x : m.data()) x = rng.normal();
    return EmbeddingTable(std::move(m));
  }

  std::size_t alphabet_size() const { return rows_.rows(); }
  std::size_t dim() const { return rows_.cols(); }
  std::span<const double> row(Token t) const { return rows_.row(static_cast<std::size_t>(t)); }
  const Matrix& matrix() const { return rows_; }
  double diameter() const { return diameter_; }

  static double pairwise_max_distance(const Matrix& m) {
    double best = 0.0;
    for (std::size_t a = 0; a < m.rows(); ++a)
      for (std::size_t b = a + 1; b < m.rows(); ++b) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) {
          const double d = m(a, j) - m(b, j);
          d2 += d * d;
        }
        best = std::max(best, d2);
      }
    return std::sqrt(best);
  }

 private:
  Matrix rows_;
  double diameter_ = 0.0;
};

/// Linear-softmax classifier over a pooled embedding sequence:
/// logits = W * (sum_i pool_i e_i) + b. Mean pooling uses pool_i = 1/L.
class TaskHead {
 public:
  TaskHead(Matrix weights, std::vector<double> bias, std::vector<double> pool)
      : weights_(std::move(weights)), bias_(std::move(bias)), pool_(std::move(pool)) {
    if (weights_.rows() < 2) throw std::invalid_argument("TaskHead: need at least two classes");
    if (bias_.size() != weights_.rows()) throw std::invalid_argument("TaskHead: bias size mismatch");
    if (pool_.empty()) throw std::invalid_argument("TaskHead: empty pooling weights");
    for (double w : pool_)
      if (!(w >= 0.0)) throw std::invalid_argument("TaskHead: pooling weights must be >= 0");
  }

  static std::vector<double> mean_pool(int length) {
    return std::vector<double>(static_cast<std::size_t>(length), 1.0 / length);
  }

  /// Random position weights, normalized to sum 1. Gives a head whose
  /// sensitivity differs across positions.
  static std::vector<double> random_pool(int length, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "pooling"));
    std::vector<double> w(static_cast<std::size_t>(length));
    for (auto& x : w) {
      const double e = rng.exponential();
      x = e * e;
    }
    const double s = std::accumulate(w.begin(), w.end(), 0.0);
    for (auto& x : w) x /= s;
    return w;
  }

  static TaskHead random(int classes, int dim, std::vector<double> pool, std::uint64_t seed,
                         double scale = 1.0) {
    Rng rng(derive_seed(seed, "task-head"));
    Matrix w(static_cast<std::size_t>(classes), static_cast<std::size_t>(dim));
    for (auto& x : w.data()) x = scale * rng.normal();
    return TaskHead(std::move(w), std::vector<double>(static_cast<std::size_t>(classes), 0.0),
                    std::move(pool));
  }

  std::size_t classes() const { return weights_.rows(); }
  std::size_t dim() const { return weights_.cols(); }
  std::size_t length() const { return pool_.size(); }
  const Matrix& weights() const { return weights_; }
  const std::vector<double>& bias() const { return bias_; }
  const std::vector<double>& pool() const { return pool_; }

  std::vector<double> pooled(const Matrix& embeddings) const {
    check_shape(embeddings);
    std::vector<double> z(dim(), 0.0);
    for (std::size_t i = 0; i < embeddings.rows(); ++i)
      for (std::size_t j = 0; j < dim(); ++j) z[j] += pool_[i] * embeddings(i, j);
    return z;
  }

  std::vector<double> logits(const Matrix& embeddings) const {
    const auto z = pooled(embeddings);
    std::vector<double> out(bias_);
    for (std::size_t c = 0; c < classes(); ++c)
      for (std::size_t j = 0; j < dim(); ++j) out[c] += weights_(c, j) * z[j];
    return out;
  }

  int predict(const Matrix& embeddings) const {
    const auto l = logits(embeddings);
    return static_cast<int>(std::max_element(l.begin(), l.end()) - l.begin());
  }

  void check_shape(const Matrix& embeddings) const {
    if (embeddings.rows() != pool_.size() || embeddings.cols() != dim())
      throw std::invalid_argument("TaskHead: embedding sequence shape mismatch");
  }

 private:
  Matrix weights_;
  std::vector<double> bias_;
  std::vector<double> pool_;
};

struct LabeledSample {
  TokenSequence tokens;
  int label = 0;
};

inline std::vector<double> softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double s = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    p[c] = std::exp(logits[c] - mx);
    s += p[c];
  }
  for (auto& x : p) x /= s;
  return p;
}

inline double log_sum_exp(std::span<const double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

/// Stacks table rows for each token: row i of the result is E[t_i].
inline Matrix embed(std::span<const Token> tokens, const EmbeddingTable& table) {
  Matrix z(tokens.size(), table.dim());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= table.alphabet_size())
      throw std::out_of_range("embed: token index out of range");
    const auto r = table.row(tokens[i]);
    std::copy(r.begin(), r.end(), z.row(i).begin());
  }
  return z;
}

/// Cross-entropy of the head's softmax against `label`.
inline double task_loss(const TaskHead& head, const Matrix& embeddings, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= head.classes())
    throw std::out_of_range("task_loss: label out of range");
  const auto l = head.logits(embeddings);
  return std::max(0.0, log_sum_exp(l) - l[static_cast<std::size_t>(label)]);
}

/// dL/de_i = pool_i * W^T (softmax - onehot(label)), one row per position.
inline Matrix loss_gradient_wrt_embeddings(const TaskHead& head, const Matrix& embeddings,
                                           int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= head.classes())
    throw std::out_of_range("loss_gradient: label out of range");
  auto p = softmax(head.logits(embeddings));
  p[static_cast<std::size_t>(label)] -= 1.0;
  std::vector<double> g(head.dim(), 0.0);
  for (std::size_t c = 0; c < head.classes(); ++c)
    for (std::size_t j = 0; j < head.dim(); ++j) g[j] += head.weights()(c, j) * p[c];
  Matrix out(embeddings.rows(), head.dim());
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) = head.pool()[i] * g[j];
  return out;
}

/// Draws tokens from the chain and labels them with the clean-sequence
/// prediction of `head`.
inline LabeledSample sample(const SourceModel& model, const EmbeddingTable& table,
                            const TaskHead& head, std::uint64_t seed) {
  Rng rng(seed);
  LabeledSample s;
  s.tokens = model.draw(rng);
  s.label = head.predict(embed(s.tokens, table));
  return s;
}

struct BoundCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = true;
};

/// Checks |L(Z_hat) - L(Z)| <= diam(E) * sum_i w_sup_i * 1{t_hat_i != t_i}
/// where w_sup_i is the largest gradient norm at position i along the
/// straight path Z + a (Z_hat - Z), sampled on `grid_size` points of [0, 1]
/// and inflated by `safety`.
inline BoundCheck verify_utility_bound(std::span<const Token> clean, std::span<const Token> decoded,
                                       const EmbeddingTable& table, const TaskHead& head,
                                       int label, int grid_size = 101, double safety = 1.05) {
  if (clean.size() != decoded.size()) throw std::invalid_argument("verify_utility_bound: length mismatch");
  if (grid_size < 2) throw std::invalid_argument("verify_utility_bound: grid_size must be >= 2");
  const Matrix z = embed(clean, table);
  const Matrix zhat = embed(decoded, table);
  BoundCheck out;
  out.lhs = std::abs(task_loss(head, zhat, label) - task_loss(head, z, label));

  std::vector<double> wsup(clean.size(), 0.0);
  Matrix path(z.rows(), z.cols());
  for (int a = 0; a < grid_size; ++a) {
    const double alpha = static_cast<double>(a) / (grid_size - 1);
    for (std::size_t k = 0; k < path.data().size(); ++k)
      path.data()[k] = z.data()[k] + alpha * (zhat.data()[k] - z.data()[k]);
    const Matrix g = loss_gradient_wrt_embeddings(head, path, label);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      double n2 = 0.0;
      for (double v : g.row(i)) n2 += v * v;
      wsup[i] = std::max(wsup[i], std::sqrt(n2));
    }
  }
  double mass = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i)
    if (clean[i] != decoded[i]) mass += safety * wsup[i];
  out.rhs = table.diameter() * mass;
  out.holds = out.lhs <= out.rhs;
  return out;
}

}  // namespace tonic
