#pragma once

// Protection policies: LDPC codes at a few rates plus an uncoded fallback.
//
// Every code has a parity-check matrix H = [A | T] where T is the p x p
// dual-diagonal (staircase) matrix and A is a sparse column-weight-3 block
// placed edge by edge with progressive edge growth. T makes H full rank and
// gives a linear-time systematic encoder:
//
//   p_0 = A_0 u,   p_r = A_r u + p_{r-1}   (mod 2)
//
// Codewords are laid out as [u | p]. Codes are a pure function of
// (policy id, information length), so both ends build identical matrices.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tonic/phy.hpp"
#include "tonic/rng.hpp"

namespace tonic {

struct ProtectionPolicy {
  int id = 0;
  int rate_num = 1;
  int rate_den = 1;

  bool uncoded() const { return rate_num == rate_den; }
  double rate() const { return static_cast<double>(rate_num) / rate_den; }
  /// Nominal 16QAM symbols per token of `bits_per_token` bits: m / (4 r).
  double cost_per_token(int bits_per_token) const { return bits_per_token / (4.0 * rate()); }
  std::string name() const {
    return uncoded() ? "uncoded" : std::to_string(rate_num) + "/" + std::to_string(rate_den);
  }

  friend bool operator==(const ProtectionPolicy&, const ProtectionPolicy&) = default;
};

/// Builds a policy set from (num, den) rates, sorted by increasing cost and
/// numbered 0.. in that order. 1/1 denotes uncoded transmission.
inline std::vector<ProtectionPolicy> make_policy_set(std::vector<std::pair<int, int>> rates) {
  if (rates.empty()) throw std::invalid_argument("policy set must not be empty");
  for (auto [n, d] : rates)
    if (n < 1 || d < 1 || n > d) throw std::invalid_argument("policy rate must lie in (0, 1]");
  std::sort(rates.begin(), rates.end(), [](auto a, auto b) {
    return static_cast<long>(a.first) * b.second > static_cast<long>(b.first) * a.second;
  });
  std::vector<ProtectionPolicy> out;
  for (auto [n, d] : rates) {
    if (!out.empty() && static_cast<long>(out.back().rate_num) * d == static_cast<long>(n) * out.back().rate_den)
      throw std::invalid_argument("duplicate rate in policy set");
    out.push_back({static_cast<int>(out.size()), n, d});
  }
  return out;
}

/// uncoded, 5/6, 3/4, 2/3, 1/2 with ids 0..4.
inline std::vector<ProtectionPolicy> default_policy_set() {
  return make_policy_set({{1, 1}, {1, 2}, {2, 3}, {3, 4}, {5, 6}});
}

struct DecodeResult {
  std::vector<double> info_llrs;  // a-posteriori LLRs of the k information bits
  bool converged = false;
  int iterations = 0;
};

class LdpcCode {
 public:
  /// Parity count for information length k at rate num/den: ceil(k (den - num) / num).
  static int parity_count(int k, int rate_num, int rate_den) {
    return static_cast<int>((static_cast<long>(k) * (rate_den - rate_num) + rate_num - 1) / rate_num);
  }

  static LdpcCode build(const ProtectionPolicy& policy, int k) {
    if (k < 1) throw std::invalid_argument("LdpcCode: information length must be >= 1");
    const int p = policy.uncoded() ? 0 : parity_count(k, policy.rate_num, policy.rate_den);
    std::vector<std::vector<int>> rows(static_cast<std::size_t>(p));
    if (p > 0) {
      for (int r = 0; r < p; ++r) {
        rows[static_cast<std::size_t>(r)].push_back(k + r);
        if (r > 0) rows[static_cast<std::size_t>(r)].push_back(k + r - 1);
      }
      place_info_edges(rows, k, std::min(3, p),
                       derive_seed(0x70e6, "ldpc", {static_cast<std::uint64_t>(policy.id),
                                                    static_cast<std::uint64_t>(k)}));
      for (auto& row : rows) std::sort(row.begin(), row.end());
    }
    return LdpcCode(k, k + p, std::move(rows));
  }

  LdpcCode(int k, int n, std::vector<std::vector<int>> rows) : k_(k), n_(n), rows_(std::move(rows)) {
    if (k_ < 1 || n_ < k_) throw std::invalid_argument("LdpcCode: bad dimensions");
    if (static_cast<int>(rows_.size()) != n_ - k_) throw std::invalid_argument("LdpcCode: row count must equal n - k");
    index();
  }

  int info_length() const { return k_; }
  int length() const { return n_; }
  int checks() const { return n_ - k_; }
  const std::vector<std::vector<int>>& rows() const { return rows_; }

  std::vector<std::uint8_t> encode(std::span<const std::uint8_t> info) const {
    if (static_cast<int>(info.size()) != k_) throw std::invalid_argument("LdpcCode::encode: bad information length");
    std::vector<std::uint8_t> cw(static_cast<std::size_t>(n_), 0);
    std::copy(info.begin(), info.end(), cw.begin());
    std::uint8_t prev = 0;
    for (int r = 0; r < checks(); ++r) {
      std::uint8_t acc = prev;
      for (int v : rows_[static_cast<std::size_t>(r)])
        if (v < k_) acc ^= info[static_cast<std::size_t>(v)] & 1u;
      cw[static_cast<std::size_t>(k_ + r)] = acc;
      prev = acc;
    }
    return cw;
  }

  bool syndrome_ok(std::span<const std::uint8_t> word) const {
    for (const auto& row : rows_) {
      std::uint8_t acc = 0;
      for (int v : row) acc ^= word[static_cast<std::size_t>(v)] & 1u;
      if (acc) return false;
    }
    return true;
  }

  /// Flooding sum-product decoding. Stops at the first iteration whose hard
  /// decisions satisfy every check; at least one iteration always runs.
  DecodeResult decode(std::span<const double> channel_llrs, int max_iters = 50) const {
    if (static_cast<int>(channel_llrs.size()) != n_)
      throw std::invalid_argument("LdpcCode::decode: LLR count must equal code length");
    DecodeResult out;
    if (checks() == 0) {
      out.info_llrs.assign(channel_llrs.begin(), channel_llrs.end());
      out.converged = true;
      return out;
    }
    const std::size_t ne = edge_var_.size();
    std::vector<double> c2v(ne, 0.0), v2c(ne, 0.0), app(channel_llrs.begin(), channel_llrs.end());
    std::vector<std::uint8_t> hard(static_cast<std::size_t>(n_));
    std::vector<double> t, prefix;
    for (int it = 1; it <= max_iters; ++it) {
      for (std::size_t e = 0; e < ne; ++e) v2c[e] = app[static_cast<std::size_t>(edge_var_[e])] - c2v[e];
      for (std::size_t c = 0; c + 1 < row_ptr_.size(); ++c) {
        const std::size_t b = row_ptr_[c], en = row_ptr_[c + 1], d = en - b;
        t.resize(d);
        prefix.resize(d + 1);
        for (std::size_t j = 0; j < d; ++j) t[j] = std::tanh(0.5 * v2c[b + j]);
        prefix[0] = 1.0;
        for (std::size_t j = 0; j < d; ++j) prefix[j + 1] = prefix[j] * t[j];
        double suffix = 1.0;
        for (std::size_t j = d; j-- > 0;) {
          const double x = std::clamp(prefix[j] * suffix, -kTanhLimit, kTanhLimit);
          c2v[b + j] = 2.0 * std::atanh(x);
          suffix *= t[j];
        }
      }
      std::copy(channel_llrs.begin(), channel_llrs.end(), app.begin());
      for (std::size_t e = 0; e < ne; ++e) app[static_cast<std::size_t>(edge_var_[e])] += c2v[e];
      for (int v = 0; v < n_; ++v) hard[static_cast<std::size_t>(v)] = app[static_cast<std::size_t>(v)] < 0.0;
      out.iterations = it;
      if (syndrome_ok(hard)) {
        out.converged = true;
        break;
      }
    }
    out.info_llrs.assign(app.begin(), app.begin() + k_);
    return out;
  }

  friend bool operator==(const LdpcCode& a, const LdpcCode& b) {
    return a.k_ == b.k_ && a.n_ == b.n_ && a.rows_ == b.rows_;
  }

 private:
  static constexpr double kTanhLimit = 1.0 - 1e-12;

  void index() {
    row_ptr_.assign(1, 0);
    edge_var_.clear();
    for (const auto& row : rows_) {
      for (int v : row) {
        if (v < 0 || v >= n_) throw std::invalid_argument("LdpcCode: column index out of range");
        edge_var_.push_back(v);
      }
      row_ptr_.push_back(edge_var_.size());
    }
  }

  // Progressive edge growth over the info columns, on top of the staircase.
  // Each new edge of a variable goes to a check outside its current
  // neighbourhood when one exists, otherwise to one at the largest reachable
  // depth; ties go to the lowest-degree check, then to a seeded random pick.
  static void place_info_edges(std::vector<std::vector<int>>& rows, int k, int weight, std::uint64_t seed) {
    const int p = static_cast<int>(rows.size());
    Rng rng(seed);
    std::vector<std::vector<int>> var_checks(static_cast<std::size_t>(k + p));
    for (int c = 0; c < p; ++c)
      for (int v : rows[static_cast<std::size_t>(c)]) var_checks[static_cast<std::size_t>(v)].push_back(c);

    std::vector<int> check_seen(static_cast<std::size_t>(p), -1), var_seen(static_cast<std::size_t>(k + p), -1);
    int stamp = 0;
    auto pick_lowest_degree = [&](const std::vector<int>& candidates) {
      std::size_t best = rows[static_cast<std::size_t>(candidates.front())].size();
      for (int c : candidates) best = std::min(best, rows[static_cast<std::size_t>(c)].size());
      std::vector<int> tied;
      for (int c : candidates)
        if (rows[static_cast<std::size_t>(c)].size() == best) tied.push_back(c);
      return tied[rng.below(tied.size())];
    };

    for (int v = 0; v < k; ++v) {
      for (int e = 0; e < weight; ++e) {
        std::vector<int> candidates;
        if (var_checks[static_cast<std::size_t>(v)].empty()) {
          candidates.resize(static_cast<std::size_t>(p));
          std::iota(candidates.begin(), candidates.end(), 0);
        } else {
          ++stamp;
          std::vector<int> frontier_vars{v}, layer;
          var_seen[static_cast<std::size_t>(v)] = stamp;
          int reached = 0;
          std::vector<int> last_layer;
          while (true) {
            layer.clear();
            for (int u : frontier_vars)
              for (int c : var_checks[static_cast<std::size_t>(u)])
                if (check_seen[static_cast<std::size_t>(c)] != stamp) {
                  check_seen[static_cast<std::size_t>(c)] = stamp;
                  layer.push_back(c);
                }
            if (layer.empty()) break;
            reached += static_cast<int>(layer.size());
            last_layer = layer;
            if (reached == p) break;
            frontier_vars.clear();
            for (int c : layer)
              for (int u : rows[static_cast<std::size_t>(c)])
                if (var_seen[static_cast<std::size_t>(u)] != stamp) {
                  var_seen[static_cast<std::size_t>(u)] = stamp;
                  frontier_vars.push_back(u);
                }
          }
          if (reached < p) {
            for (int c = 0; c < p; ++c)
              if (check_seen[static_cast<std::size_t>(c)] != stamp) candidates.push_back(c);
          } else {
            // every check reachable: use the deepest layer, excluding current neighbours
            for (int c : last_layer)
              if (std::find(var_checks[static_cast<std::size_t>(v)].begin(), var_checks[static_cast<std::size_t>(v)].end(), c) ==
                  var_checks[static_cast<std::size_t>(v)].end())
                candidates.push_back(c);
            if (candidates.empty())
              for (int c = 0; c < p; ++c)
                if (std::find(var_checks[static_cast<std::size_t>(v)].begin(), var_checks[static_cast<std::size_t>(v)].end(), c) ==
                    var_checks[static_cast<std::size_t>(v)].end())
                  candidates.push_back(c);
          }
        }
        const int c = pick_lowest_degree(candidates);
        rows[static_cast<std::size_t>(c)].push_back(v);
        var_checks[static_cast<std::size_t>(v)].push_back(c);
      }
    }
  }

  int k_;
  int n_;
  std::vector<std::vector<int>> rows_;
  std::vector<std::size_t> row_ptr_;
  std::vector<int> edge_var_;
};

/// Thread-safe cache of codes keyed by (policy id, information length).
/// References stay valid for the lifetime of the book.
class CodeBook {
 public:
  explicit CodeBook(std::vector<ProtectionPolicy> policies) : policies_(std::move(policies)) {}

  const std::vector<ProtectionPolicy>& policies() const { return policies_; }
  const ProtectionPolicy& policy(int id) const {
    for (const auto& p : policies_)
      if (p.id == id) return p;
    throw std::out_of_range("CodeBook: unknown policy id " + std::to_string(id));
  }

  const LdpcCode& code(int policy_id, int k) const {
    std::lock_guard lock(mutex_);
    auto key = std::make_pair(policy_id, k);
    auto it = cache_.find(key);
    if (it == cache_.end())
      it = cache_.emplace(key, std::make_unique<LdpcCode>(LdpcCode::build(policy(policy_id), k))).first;
    return *it->second;
  }

 private:
  std::vector<ProtectionPolicy> policies_;
  mutable std::mutex mutex_;
  mutable std::map<std::pair<int, int>, std::unique_ptr<LdpcCode>> cache_;
};

inline constexpr int kDefaultMaxBlockBits = 2048;
inline constexpr int kDefaultMaxIters = 50;

/// Splits `info_bits` of one group into code blocks of at most `max_block`
/// bits. A single block uses a code sized to the data; when several blocks
/// are needed all use `max_block` and the last one is shortened: its zero pad
/// bits are not transmitted and the decoder treats them as known zeros.
struct BlockLayout {
  int block_info = 0;  // k of every block
  int blocks = 0;
  int pad = 0;         // zero bits appended to the final block

  static BlockLayout for_bits(int info_bits, int max_block = kDefaultMaxBlockBits) {
    if (info_bits < 1 || max_block < 1) throw std::invalid_argument("BlockLayout: sizes must be positive");
    BlockLayout l;
    if (info_bits <= max_block) {
      l.block_info = info_bits;
      l.blocks = 1;
    } else {
      l.block_info = max_block;
      l.blocks = (info_bits + max_block - 1) / max_block;
      l.pad = l.blocks * max_block - info_bits;
    }
    return l;
  }
};

inline int transmitted_bits(const CodeBook& book, int policy_id, int info_bits, int max_block = kDefaultMaxBlockBits) {
  const auto l = BlockLayout::for_bits(info_bits, max_block);
  return l.blocks * book.code(policy_id, l.block_info).length() - l.pad;
}

inline std::vector<std::uint8_t> encode_group(const CodeBook& book, int policy_id, std::span<const std::uint8_t> info,
                                              int max_block = kDefaultMaxBlockBits) {
  const auto l = BlockLayout::for_bits(static_cast<int>(info.size()), max_block);
  const auto& code = book.code(policy_id, l.block_info);
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> block(static_cast<std::size_t>(l.block_info));
  for (int b = 0; b < l.blocks; ++b) {
    const std::size_t start = static_cast<std::size_t>(b) * static_cast<std::size_t>(l.block_info);
    const std::size_t avail = std::min(block.size(), info.size() - start);
    std::fill(block.begin(), block.end(), 0);
    std::copy_n(info.begin() + static_cast<std::ptrdiff_t>(start), avail, block.begin());
    const auto cw = code.encode(block);
    // shortened block: drop the pad positions (they sit at the end of u)
    out.insert(out.end(), cw.begin(), cw.begin() + static_cast<std::ptrdiff_t>(avail));
    out.insert(out.end(), cw.begin() + l.block_info, cw.end());
  }
  return out;
}

struct GroupDecode {
  std::vector<double> info_llrs;
  int blocks = 0;
  int converged_blocks = 0;
};

inline GroupDecode decode_group(const CodeBook& book, int policy_id, std::span<const double> llrs, int info_bits,
                                int max_block = kDefaultMaxBlockBits, int max_iters = kDefaultMaxIters,
                                double clamp = kLlrClamp) {
  const auto l = BlockLayout::for_bits(info_bits, max_block);
  const auto& code = book.code(policy_id, l.block_info);
  if (static_cast<int>(llrs.size()) != l.blocks * code.length() - l.pad)
    throw std::invalid_argument("decode_group: LLR count does not match the block layout");
  GroupDecode out;
  out.blocks = l.blocks;
  std::vector<double> block(static_cast<std::size_t>(code.length()));
  std::size_t pos = 0;
  for (int b = 0; b < l.blocks; ++b) {
    const std::size_t start = static_cast<std::size_t>(b) * static_cast<std::size_t>(l.block_info);
    const std::size_t avail = std::min(static_cast<std::size_t>(l.block_info), static_cast<std::size_t>(info_bits) - start);
    std::fill(block.begin(), block.end(), clamp);
    std::copy_n(llrs.begin() + static_cast<std::ptrdiff_t>(pos), avail, block.begin());
    pos += avail;
    const auto parity = static_cast<std::size_t>(code.checks());
    std::copy_n(llrs.begin() + static_cast<std::ptrdiff_t>(pos), parity, block.begin() + l.block_info);
    pos += parity;
    auto res = code.decode(block, max_iters);
    out.converged_blocks += res.converged ? 1 : 0;
    out.info_llrs.insert(out.info_llrs.end(), res.info_llrs.begin(),
                         res.info_llrs.begin() + static_cast<std::ptrdiff_t>(avail));
  }
  return out;
}

// Policy-set text format, one code per policy at a given information length:
//
//   tonic-ldpc 1
//   policy <id> <num>/<den> k <k> n <n> checks <p>
//   <degree> <col> <col> ...        (p lines, columns 0-based, ascending)
//   end
//
// Lines starting with '#' are comments.
inline void write_policy_set(std::ostream& os, const CodeBook& book, int k) {
  os << "tonic-ldpc 1\n";
  for (const auto& p : book.policies()) {
    const auto& code = book.code(p.id, k);
    os << "policy " << p.id << ' ' << p.rate_num << '/' << p.rate_den << " k " << code.info_length() << " n "
       << code.length() << " checks " << code.checks() << '\n';
    for (const auto& row : code.rows()) {
      os << row.size();
      for (int v : row) os << ' ' << v;
      os << '\n';
    }
  }
  os << "end\n";
}

struct SerializedPolicy {
  ProtectionPolicy policy;
  LdpcCode code;
};

inline std::vector<SerializedPolicy> read_policy_set(std::istream& is) {
  auto next_line = [&](std::string& line) {
    while (std::getline(is, line))
      if (!line.empty() && line[0] != '#') return true;
    return false;
  };
  std::string line;
  if (!next_line(line) || line != "tonic-ldpc 1") throw std::runtime_error("policy set: bad header");
  std::vector<SerializedPolicy> out;
  while (next_line(line)) {
    if (line == "end") return out;
    std::istringstream ss(line);
    std::string word, rate, kw, nw, cw;
    int id = 0, k = 0, n = 0, p = 0;
    if (!(ss >> word >> id >> rate >> kw >> k >> nw >> n >> cw >> p) || word != "policy" || kw != "k" ||
        nw != "n" || cw != "checks")
      throw std::runtime_error("policy set: malformed policy line: " + line);
    const auto slash = rate.find('/');
    if (slash == std::string::npos) throw std::runtime_error("policy set: malformed rate: " + rate);
    ProtectionPolicy pol{id, std::stoi(rate.substr(0, slash)), std::stoi(rate.substr(slash + 1))};
    std::vector<std::vector<int>> rows(static_cast<std::size_t>(p));
    for (auto& row : rows) {
      if (!next_line(line)) throw std::runtime_error("policy set: truncated check list");
      std::istringstream rs(line);
      std::size_t deg = 0;
      rs >> deg;
      row.resize(deg);
      for (auto& v : row)
        if (!(rs >> v)) throw std::runtime_error("policy set: malformed check line");
    }
    if (n - k != p) throw std::runtime_error("policy set: n - k != checks");
    out.push_back({pol, LdpcCode(k, n, std::move(rows))});
  }
  throw std::runtime_error("policy set: missing end marker");
}

}  // namespace tonic
