#pragma once

// End-to-end experiment runner: offline preparation (utility profiles,
// groups, error curves, protection profiles, calibrated thresholds) and the
// online Monte Carlo sweep over channel x SNR x budget x variant.

#include <algorithm>
#include <exception>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "tonic/calibration.hpp"
#include "tonic/completion.hpp"
#include "tonic/fec.hpp"
#include "tonic/gating.hpp"
#include "tonic/metrics.hpp"
#include "tonic/phy.hpp"
#include "tonic/source_task.hpp"
#include "tonic/tokenlink.hpp"
#include "tonic/uep.hpp"
#include "tonic/utility.hpp"

namespace tonic {

enum class Variant { Uni, Uep, GateComp, FullGrad, FullOracle };

inline constexpr Variant kAllVariants[] = {Variant::Uni, Variant::Uep, Variant::GateComp, Variant::FullGrad,
                                           Variant::FullOracle};

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::Uni: return "UNI";
    case Variant::Uep: return "UEP";
    case Variant::GateComp: return "GateComp";
    case Variant::FullGrad: return "Full-Grad";
    case Variant::FullOracle: return "Full-Oracle";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  for (Variant v : kAllVariants)
    if (s == to_string(v)) return v;
  throw std::invalid_argument("unknown variant: " + std::string(s));
}

inline bool uses_uep(Variant v) { return v == Variant::Uep || v == Variant::FullGrad || v == Variant::FullOracle; }
inline bool uses_gating(Variant v) {
  return v == Variant::GateComp || v == Variant::FullGrad || v == Variant::FullOracle;
}
inline UtilityMode utility_of(Variant v) { return v == Variant::FullOracle ? UtilityMode::Mask : UtilityMode::Grad; }

/// Table I reference point: L = 576 tokens of m = 14 bits in B0 = 4096 symbols.
inline double reference_budget(int length, int bits_per_token) {
  return 4096.0 * length * bits_per_token / (576.0 * 14.0);
}

struct RunConfig {
  // source and task
  int alphabet_size = 16;
  int length = 16;
  double stickiness = 0.9;
  int classes = 4;
  int embed_dim = 8;
  std::string pooling = "mean";  // mean | random
  double head_scale = 3.0;
  std::uint64_t source_seed = 11;
  std::uint64_t table_seed = 12;
  std::uint64_t head_seed = 13;

  // link
  std::vector<ChannelKind> channels{ChannelKind::Awgn, ChannelKind::Rician, ChannelKind::Rayleigh};
  std::vector<double> snr_db{0, 2, 4, 6, 8, 10, 12, 14};
  double rician_k = kDefaultRicianK;
  std::vector<double> budget_scale{1.0};  // multiples of base_budget
  double base_budget = 0.0;               // symbols; 0 selects the reference ratio at this L and m
  std::vector<std::pair<int, int>> rates{{1, 1}, {5, 6}, {3, 4}, {2, 3}, {1, 2}};
  int max_iters = kDefaultMaxIters;
  int max_block_bits = kDefaultMaxBlockBits;

  // design and evaluation
  std::vector<Variant> variants{std::begin(kAllVariants), std::end(kAllVariants)};
  int groups = 4;
  int utility_samples = 200;
  int profile_trials = 1000;
  int validation_samples = 3000;
  std::vector<double> tau_grid = CalibrationConfig::default_grid();
  int calibration_passes = 2;
  bool calibration_shared_start = true;
  CompletionKind completion = CompletionKind::ExactMarkov;
  int trials = 500;
  std::uint64_t seed = 2024;
  int threads = 0;  // 0: hardware concurrency

  int bits_per_token() const { return bits_for_alphabet(alphabet_size); }
  double resolved_base_budget() const {
    return base_budget > 0.0 ? base_budget : reference_budget(length, bits_per_token());
  }

  void validate() const {
    if (alphabet_size < 2) throw std::invalid_argument("config: alphabet_size must be >= 2");
    if (length < 1) throw std::invalid_argument("config: length must be >= 1");
    if (classes < 2 || embed_dim < 1) throw std::invalid_argument("config: bad task head shape");
    if (pooling != "mean" && pooling != "random") throw std::invalid_argument("config: pooling must be mean or random");
    if (channels.empty() || snr_db.empty() || budget_scale.empty() || variants.empty() || rates.empty())
      throw std::invalid_argument("config: every grid must be nonempty");
    for (double b : budget_scale)
      if (!(b > 0.0)) throw std::invalid_argument("config: budget_scale entries must be positive");
    if (groups < 1 || groups > length) throw std::invalid_argument("config: groups must lie in [1, length]");
    if (trials < 1 || profile_trials < 1 || utility_samples < 1 || validation_samples < 1)
      throw std::invalid_argument("config: trial and sample counts must be >= 1");
    if (max_iters < 1 || max_block_bits < 1) throw std::invalid_argument("config: bad decoder settings");
    if (threads < 0) throw std::invalid_argument("config: threads must be >= 0");
    CalibrationConfig{tau_grid, calibration_passes, 0.5, calibration_shared_start}.validate();
  }

  void set(const std::string& key, const std::string& value);
  std::map<std::string, std::string> to_map() const;
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (auto t = trim(item); !t.empty()) out.push_back(t);
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw std::invalid_argument("config: " + key + " expects a number, got '" + v + "'");
  return x;
}

inline long long to_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty())
    throw std::invalid_argument("config: " + key + " expects an integer, got '" + v + "'");
  return x;
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  std::uint64_t x = 0;
  try {
    x = std::stoull(v, &used, 0);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || v.front() == '-')
    throw std::invalid_argument("config: " + key + " expects an unsigned integer, got '" + v + "'");
  return x;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: " + key + " expects true or false, got '" + v + "'");
}

inline std::string fmt_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

template <class T, class F>
std::string join(const std::vector<T>& xs, F&& f) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += f(xs[i]);
  }
  return out;
}

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& raw) {
  using namespace detail;
  const std::string v = trim(raw);
  auto doubles = [&] {
    std::vector<double> out;
    for (const auto& s : split_list(v)) out.push_back(to_double(key, s));
    return out;
  };
  if (key == "alphabet_size") alphabet_size = static_cast<int>(to_int(key, v));
  else if (key == "length") length = static_cast<int>(to_int(key, v));
  else if (key == "stickiness") stickiness = to_double(key, v);
  else if (key == "classes") classes = static_cast<int>(to_int(key, v));
  else if (key == "embed_dim") embed_dim = static_cast<int>(to_int(key, v));
  else if (key == "pooling") pooling = v;
  else if (key == "head_scale") head_scale = to_double(key, v);
  else if (key == "source_seed") source_seed = to_u64(key, v);
  else if (key == "table_seed") table_seed = to_u64(key, v);
  else if (key == "head_seed") head_seed = to_u64(key, v);
  else if (key == "channels") {
    channels.clear();
    for (const auto& s : split_list(v)) channels.push_back(parse_channel_kind(s));
  } else if (key == "snr_db") snr_db = doubles();
  else if (key == "rician_k") rician_k = to_double(key, v);
  else if (key == "budget_scale") budget_scale = doubles();
  else if (key == "base_budget") base_budget = to_double(key, v);
  else if (key == "rates") {
    rates.clear();
    for (const auto& s : split_list(v)) {
      const auto slash = s.find('/');
      if (slash == std::string::npos) throw std::invalid_argument("config: rates expects entries like 3/4");
      rates.emplace_back(static_cast<int>(to_int(key, trim(s.substr(0, slash)))),
                         static_cast<int>(to_int(key, trim(s.substr(slash + 1)))));
    }
  } else if (key == "max_iters") max_iters = static_cast<int>(to_int(key, v));
  else if (key == "max_block_bits") max_block_bits = static_cast<int>(to_int(key, v));
  else if (key == "variants") {
    variants.clear();
    for (const auto& s : split_list(v)) variants.push_back(parse_variant(s));
  } else if (key == "groups") groups = static_cast<int>(to_int(key, v));
  else if (key == "utility_samples") utility_samples = static_cast<int>(to_int(key, v));
  else if (key == "profile_trials") profile_trials = static_cast<int>(to_int(key, v));
  else if (key == "validation_samples") validation_samples = static_cast<int>(to_int(key, v));
  else if (key == "tau_grid") tau_grid = doubles();
  else if (key == "calibration_passes") calibration_passes = static_cast<int>(to_int(key, v));
  else if (key == "calibration_shared_start") calibration_shared_start = to_bool(key, v);
  else if (key == "completion") completion = parse_completion_kind(v);
  else if (key == "trials") trials = static_cast<int>(to_int(key, v));
  else if (key == "seed") seed = to_u64(key, v);
  else if (key == "threads") threads = static_cast<int>(to_int(key, v));
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

inline std::map<std::string, std::string> RunConfig::to_map() const {
  using namespace detail;
  auto d = [](double x) { return fmt_double(x); };
  std::map<std::string, std::string> m;
  m["alphabet_size"] = std::to_string(alphabet_size);
  m["length"] = std::to_string(length);
  m["stickiness"] = d(stickiness);
  m["classes"] = std::to_string(classes);
  m["embed_dim"] = std::to_string(embed_dim);
  m["pooling"] = pooling;
  m["head_scale"] = d(head_scale);
  m["source_seed"] = std::to_string(source_seed);
  m["table_seed"] = std::to_string(table_seed);
  m["head_seed"] = std::to_string(head_seed);
  m["channels"] = join(channels, [](ChannelKind k) { return std::string(to_string(k)); });
  m["snr_db"] = join(snr_db, d);
  m["rician_k"] = d(rician_k);
  m["budget_scale"] = join(budget_scale, d);
  m["base_budget"] = d(base_budget);
  m["rates"] = join(rates, [](auto r) { return std::to_string(r.first) + "/" + std::to_string(r.second); });
  m["max_iters"] = std::to_string(max_iters);
  m["max_block_bits"] = std::to_string(max_block_bits);
  m["variants"] = join(variants, [](Variant v) { return std::string(to_string(v)); });
  m["groups"] = std::to_string(groups);
  m["utility_samples"] = std::to_string(utility_samples);
  m["profile_trials"] = std::to_string(profile_trials);
  m["validation_samples"] = std::to_string(validation_samples);
  m["tau_grid"] = join(tau_grid, d);
  m["calibration_passes"] = std::to_string(calibration_passes);
  m["calibration_shared_start"] = calibration_shared_start ? "true" : "false";
  m["completion"] = std::string(to_string(completion));
  m["trials"] = std::to_string(trials);
  m["seed"] = std::to_string(seed);
  m["threads"] = std::to_string(threads);
  return m;
}

/// Reads `key = value` lines; '#' starts a comment. Later keys override
/// earlier ones and the defaults.
inline RunConfig parse_config(std::istream& is, RunConfig base = {}) {
  std::string line;
  int number = 0;
  while (std::getline(is, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(number) + ": expected key = value");
    base.set(detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file " + path);
  return parse_config(f, std::move(base));
}

inline void write_config(std::ostream& os, const RunConfig& c) {
  for (const auto& [k, v] : c.to_map()) os << k << " = " << v << '\n';
}

struct GridPoint {
  std::size_t index = 0;      // position in the sweep, keys trial seeds
  std::size_t condition = 0;  // (channel, snr) index, keys error-curve seeds
  ChannelSpec channel;
  double budget = 0.0;
};

/// Everything a grid point needs before online trials.
struct PointPlan {
  GridPoint point;
  ErrorCurves curves;
  ProtectionProfile uniform;
  ProtectionProfile uep_grad;
  ProtectionProfile uep_mask;
  GatingPolicy gatecomp_tau;
  GatingPolicy full_grad_tau;
  GatingPolicy full_oracle_tau;

  const ProtectionProfile& profile(Variant v) const {
    if (!uses_uep(v)) return uniform;
    return utility_of(v) == UtilityMode::Mask ? uep_mask : uep_grad;
  }
  const GatingPolicy& thresholds(Variant v) const {
    if (v == Variant::GateComp) return gatecomp_tau;
    if (v == Variant::FullOracle) return full_oracle_tau;
    return full_grad_tau;
  }
};

struct Reception {
  TokenSequence hard;
  std::vector<double> confidence;
};

struct ResultRow {
  std::size_t run_id = 0;
  Variant variant = Variant::Uni;
  ChannelSpec channel;
  double budget = 0.0;
  Aggregate stats;
  std::vector<int> assignment;
  double total_cost = 0.0;
  double surrogate = 0.0;
  std::vector<double> thresholds;
  std::uint64_t seed = 0;
  double wall_clock_s = 0.0;
};

struct RunReport {
  RunConfig config;
  double base_budget = 0.0;
  std::vector<ResultRow> rows;

  const ResultRow& find(Variant v, ChannelKind kind, double snr, double budget_scale = 1.0) const {
    for (const auto& r : rows)
      if (r.variant == v && r.channel.kind == kind && r.channel.snr_db == snr &&
          r.budget == budget_scale * base_budget)
        return r;
    throw std::out_of_range("RunReport: no such row");
  }
};

class Experiment {
 public:
  explicit Experiment(RunConfig config)
      : config_(std::move(config)),
        source_((config_.validate(), SourceModel::random(config_.alphabet_size, config_.length, config_.stickiness,
                                                         config_.source_seed))),
        table_(EmbeddingTable::random(config_.alphabet_size, config_.embed_dim, config_.table_seed)),
        head_(TaskHead::random(config_.classes, config_.embed_dim,
                               config_.pooling == "mean" ? TaskHead::mean_pool(config_.length)
                                                         : TaskHead::random_pool(config_.length, config_.head_seed + 1),
                               config_.head_seed, config_.head_scale)),
        completion_(config_.completion, source_),
        book_(make_policy_set(config_.rates)) {
    link_.alphabet_size = config_.alphabet_size;
    link_.max_block_bits = config_.max_block_bits;
    link_.max_iters = config_.max_iters;
    std::vector<LabeledSample> split;
    for (int j = 0; j < config_.utility_samples; ++j)
      split.push_back(draw_sample(derive_seed(config_.seed, "utility-sample", {static_cast<std::uint64_t>(j)})));
    grad_groups_ = quantize_groups(average_profile(split, table_, head_, UtilityMode::Grad), config_.groups,
                                   UtilityMode::Grad);
    mask_groups_ = quantize_groups(average_profile(split, table_, head_, UtilityMode::Mask), config_.groups,
                                   UtilityMode::Mask);
    for (int j = 0; j < config_.validation_samples; ++j)
      validation_.push_back(
          draw_sample(derive_seed(config_.seed, "validation-sample", {static_cast<std::uint64_t>(j)})));
  }

  const RunConfig& config() const { return config_; }
  const SourceModel& source() const { return source_; }
  const EmbeddingTable& table() const { return table_; }
  const TaskHead& head() const { return head_; }
  const CodeBook& codebook() const { return book_; }
  const LinkSettings& link() const { return link_; }
  const UtilityGrouping& grouping(UtilityMode m) const { return m == UtilityMode::Mask ? mask_groups_ : grad_groups_; }
  const UtilityGrouping& grouping(Variant v) const { return grouping(utility_of(v)); }

  std::vector<GridPoint> grid() const {
    std::vector<GridPoint> out;
    std::size_t cond = 0;
    for (ChannelKind kind : config_.channels)
      for (double snr : config_.snr_db) {
        for (double scale : config_.budget_scale)
          out.push_back({out.size(), cond, {kind, snr, config_.rician_k}, scale * config_.resolved_base_budget()});
        ++cond;
      }
    return out;
  }

  ErrorCurves error_curves(const GridPoint& p) const {
    return profile_error_curves(grad_groups_.sizes, book_, link_, p.channel, config_.profile_trials,
                                derive_seed(config_.seed, "error-curves", {p.condition}));
  }

  /// Error curves, protection profiles and calibrated thresholds for one
  /// grid point. `curves` may be supplied to share profiling across budgets.
  PointPlan prepare(const GridPoint& p, const ErrorCurves* curves = nullptr) const {
    PointPlan plan;
    plan.point = p;
    plan.curves = curves ? *curves : error_curves(p);
    const int m = config_.bits_per_token();
    const auto& pol = book_.policies();
    const SchedulerInputs grad_in{grad_groups_.sizes, grad_groups_.masses, &plan.curves, pol, m};
    const SchedulerInputs mask_in{mask_groups_.sizes, mask_groups_.masses, &plan.curves, pol, m};
    plan.uniform = strongest_uniform_profile(grad_in, p.budget);
    plan.uep_grad = schedule_uep(grad_in, p.budget);
    plan.uep_mask = schedule_uep(mask_in, p.budget);
    plan.gatecomp_tau = calibrate_for(plan, Variant::GateComp);
    plan.full_grad_tau = plan.uep_grad.assignment == plan.uniform.assignment ? plan.gatecomp_tau
                                                                             : calibrate_for(plan, Variant::FullGrad);
    plan.full_oracle_tau = calibrate_for(plan, Variant::FullOracle);
    return plan;
  }

  /// Encodes each group with its policy, sends all groups over one
  /// block-fading realization and returns per-position hard decisions and
  /// confidences.
  Reception transmit(std::span<const Token> tokens, const ProtectionProfile& profile,
                     const UtilityGrouping& grouping, ChannelSpec channel, Rng& rng) const {
    const auto ch = draw_channel(channel.kind, channel.snr_db, rng, channel.rician_k, link_.power);
    Reception out{TokenSequence(tokens.size()), std::vector<double>(tokens.size())};
    for (int g = 0; g < grouping.groups(); ++g) {
      const auto pos = grouping.positions(g);
      TokenSequence part;
      for (int i : pos) part.push_back(tokens[static_cast<std::size_t>(i)]);
      const auto post = transmit_group(part, profile.assignment[static_cast<std::size_t>(g)], book_, link_, ch, rng);
      for (std::size_t j = 0; j < pos.size(); ++j) {
        out.hard[static_cast<std::size_t>(pos[j])] = post.hard_decision(j);
        out.confidence[static_cast<std::size_t>(pos[j])] = post.confidence(j);
      }
    }
    return out;
  }

  /// Algorithm-2 receiver on one sample. Variants at the same grid point and
  /// trial index share the sample and the channel/noise stream.
  TrialRecord run_trial(const PointPlan& plan, Variant v, std::size_t trial) const {
    const auto sample = draw_sample(
        derive_seed(config_.seed, "trial-sample", {plan.point.index, static_cast<std::uint64_t>(trial)}));
    Rng rng(derive_seed(config_.seed, "trial-channel", {plan.point.index, static_cast<std::uint64_t>(trial)}));
    const auto& grouping = this->grouping(v);
    const auto rx = transmit(sample.tokens, plan.profile(v), grouping, plan.point.channel, rng);
    return finish(sample, rx, grouping, uses_gating(v) ? &plan.thresholds(v) : nullptr);
  }

  TrialRecord finish(const LabeledSample& sample, const Reception& rx, const UtilityGrouping& grouping,
                     const GatingPolicy* thresholds) const {
    TrialRecord r;
    r.source = sample.tokens;
    r.hard = rx.hard;
    r.confidence = rx.confidence;
    r.gated = thresholds ? gate(rx.hard, rx.confidence, grouping.group_of, *thresholds) : rx.hard;
    r.completed = completion_.complete(r.gated);
    const Matrix z = embed(r.completed, table_);
    r.prediction = head_.predict(z);
    r.label = sample.label;
    r.loss = task_loss(head_, z, sample.label);
    return r;
  }

  Aggregate run_point(const PointPlan& plan, Variant v) const {
    Aggregate a;
    for (int t = 0; t < config_.trials; ++t) a.add(run_trial(plan, v, static_cast<std::size_t>(t)));
    return a;
  }

  RunReport run() const {
    RunReport report;
    report.config = config_;
    report.base_budget = config_.resolved_base_budget();
    const auto points = grid();
    std::vector<std::vector<ResultRow>> per_point(points.size());
    const std::size_t per_condition = config_.budget_scale.size();
    // work unit: one (channel, snr) condition, so error curves are profiled once
    const std::size_t conditions = points.size() / per_condition;
    parallel_for(conditions, [&](std::size_t c) {
      std::optional<ErrorCurves> curves;
      for (std::size_t b = 0; b < per_condition; ++b) {
        const auto& p = points[c * per_condition + b];
        const auto started = std::chrono::steady_clock::now();
        if (!curves) curves = error_curves(p);
        const auto plan = prepare(p, &*curves);
        auto& rows = per_point[p.index];
        for (Variant v : config_.variants) {
          ResultRow row;
          row.variant = v;
          row.channel = p.channel;
          row.budget = p.budget;
          row.stats = run_point(plan, v);
          const auto& prof = plan.profile(v);
          row.assignment = prof.assignment;
          row.total_cost = prof.total_cost;
          row.surrogate = prof.surrogate;
          if (uses_gating(v)) row.thresholds = plan.thresholds(v).thresholds;
          row.seed = config_.seed;
          rows.push_back(std::move(row));
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        for (auto& r : rows) r.wall_clock_s = secs;
      }
    });
    for (auto& rows : per_point)
      for (auto& r : rows) {
        r.run_id = report.rows.size();
        report.rows.push_back(std::move(r));
      }
    return report;
  }

  int worker_count() const {
    if (config_.threads > 0) return config_.threads;
    return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
  }

 private:
  LabeledSample draw_sample(std::uint64_t seed) const { return sample(source_, table_, head_, seed); }

  GatingPolicy calibrate_for(const PointPlan& plan, Variant v) const {
    const auto& grouping = this->grouping(v);
    const auto& profile = plan.profile(v);
    std::vector<Transcript> transcripts;
    transcripts.reserve(validation_.size());
    for (std::size_t j = 0; j < validation_.size(); ++j) {
      Rng rng(derive_seed(config_.seed, "validation-channel", {plan.point.index, static_cast<std::uint64_t>(j)}));
      auto rx = transmit(validation_[j].tokens, profile, grouping, plan.point.channel, rng);
      transcripts.push_back({std::move(rx.hard), std::move(rx.confidence), validation_[j].label});
    }
    const TranscriptObjective objective(transcripts, grouping, completion_, table_, head_);
    const CalibrationConfig cc{config_.tau_grid, config_.calibration_passes, 0.5, config_.calibration_shared_start};
    return calibrate(cc, grouping.groups(), objective).policy;
  }

  template <class F>
  void parallel_for(std::size_t n, F&& f) const {
    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(worker_count()), n);
    if (workers <= 1) {
      for (std::size_t i = 0; i < n; ++i) f(i);
      return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
          try {
            for (std::size_t i; (i = next.fetch_add(1)) < n;) f(i);
          } catch (...) {
            errors[w] = std::current_exception();
            next.store(n);
          }
        });
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  RunConfig config_;
  SourceModel source_;
  EmbeddingTable table_;
  TaskHead head_;
  CompletionModel completion_;
  CodeBook book_;
  LinkSettings link_;
  UtilityGrouping grad_groups_;
  UtilityGrouping mask_groups_;
  std::vector<LabeledSample> validation_;
};

inline RunReport run_sweep(const RunConfig& config) { return Experiment(config).run(); }

inline constexpr const char* kCsvHeader =
    "run_id,variant,channel,snr_db,budget,trials,accuracy,acc_ci_lo,acc_ci_hi,mean_loss,mean_ter,mean_war,seed";

inline void write_csv(std::ostream& os, const std::vector<ResultRow>& rows) {
  os << kCsvHeader << '\n';
  char buf[512];
  for (const auto& r : rows) {
    const auto ci = r.stats.accuracy_ci();
    std::snprintf(buf, sizeof buf, "%zu,%s,%s,%.2f,%.4f,%llu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%llu\n", r.run_id,
                  std::string(to_string(r.variant)).c_str(), std::string(to_string(r.channel.kind)).c_str(),
                  r.channel.snr_db, r.budget, static_cast<unsigned long long>(r.stats.trials), r.stats.accuracy(),
                  ci.lo, ci.hi, r.stats.mean_loss(), r.stats.mean_ter(), r.stats.mean_war(),
                  static_cast<unsigned long long>(r.seed));
    os << buf;
  }
}

inline nlohmann::json to_json(const Aggregate& a) {
  return {{"trials", a.trials},     {"correct", a.correct}, {"erasures", a.erasures},
          {"positions", a.positions}, {"sum_loss", a.sum_loss}, {"sum_ter", a.sum_ter},
          {"sum_ter_sq", a.sum_ter_sq}, {"sum_war", a.sum_war}};
}

inline Aggregate aggregate_from_json(const nlohmann::json& j) {
  Aggregate a;
  a.trials = j.at("trials").get<std::uint64_t>();
  a.correct = j.at("correct").get<std::uint64_t>();
  a.erasures = j.at("erasures").get<std::uint64_t>();
  a.positions = j.at("positions").get<std::uint64_t>();
  a.sum_loss = j.at("sum_loss").get<double>();
  a.sum_ter = j.at("sum_ter").get<double>();
  a.sum_ter_sq = j.at("sum_ter_sq").get<double>();
  a.sum_war = j.at("sum_war").get<double>();
  return a;
}

inline nlohmann::json to_json(const RunReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"run_id", row.run_id},
                    {"variant", std::string(to_string(row.variant))},
                    {"channel", std::string(to_string(row.channel.kind))},
                    {"snr_db", row.channel.snr_db},
                    {"rician_k", row.channel.rician_k},
                    {"budget", row.budget},
                    {"assignment", row.assignment},
                    {"total_cost", row.total_cost},
                    {"surrogate", row.surrogate},
                    {"thresholds", row.thresholds},
                    {"seed", row.seed},
                    {"wall_clock_s", row.wall_clock_s},
                    {"accuracy", row.stats.accuracy()},
                    {"mean_loss", row.stats.mean_loss()},
                    {"mean_ter", row.stats.mean_ter()},
                    {"mean_war", row.stats.mean_war()},
                    {"erasure_rate", row.stats.erasure_rate()},
                    {"aggregate", to_json(row.stats)}});
  }
  return {{"format", "tonic-run-report"},
          {"version", 1},
          {"config", r.config.to_map()},
          {"base_budget", r.base_budget},
          {"rows", rows}};
}

inline RunReport report_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "tonic-run-report") throw std::runtime_error("not a run report");
  RunReport r;
  for (const auto& [k, v] : j.at("config").items()) r.config.set(k, v.get<std::string>());
  r.base_budget = j.at("base_budget").get<double>();
  for (const auto& x : j.at("rows")) {
    ResultRow row;
    row.run_id = x.at("run_id").get<std::size_t>();
    row.variant = parse_variant(x.at("variant").get<std::string>());
    row.channel = {parse_channel_kind(x.at("channel").get<std::string>()), x.at("snr_db").get<double>(),
                   x.at("rician_k").get<double>()};
    row.budget = x.at("budget").get<double>();
    row.assignment = x.at("assignment").get<std::vector<int>>();
    row.total_cost = x.at("total_cost").get<double>();
    row.surrogate = x.at("surrogate").get<double>();
    row.thresholds = x.at("thresholds").get<std::vector<double>>();
    row.seed = x.at("seed").get<std::uint64_t>();
    row.wall_clock_s = x.at("wall_clock_s").get<double>();
    row.stats = aggregate_from_json(x.at("aggregate"));
    r.rows.push_back(std::move(row));
  }
  return r;
}

/// Offline artifacts for every grid point: groupings, error curves,
/// protection profiles and calibrated thresholds.
inline nlohmann::json prepare_artifacts(const Experiment& e) {
  auto grouping_json = [](const UtilityGrouping& g) {
    return nlohmann::json{{"mode", std::string(to_string(g.mode))},
                          {"profile", g.profile},
                          {"group_of", g.group_of},
                          {"sizes", g.sizes},
                          {"masses", g.masses}};
  };
  auto profile_json = [](const ProtectionProfile& p) {
    return nlohmann::json{{"assignment", p.assignment},
                          {"total_cost", p.total_cost},
                          {"budget", p.budget},
                          {"surrogate", p.surrogate},
                          {"uniform_start", p.uniform_start}};
  };
  nlohmann::json policies = nlohmann::json::array();
  for (const auto& p : e.codebook().policies())
    policies.push_back({{"id", p.id}, {"rate", p.name()}, {"cost_per_token", p.cost_per_token(e.config().bits_per_token())}});
  nlohmann::json points = nlohmann::json::array();
  std::optional<ErrorCurves> curves;
  std::size_t curves_for = static_cast<std::size_t>(-1);
  for (const auto& p : e.grid()) {
    if (curves_for != p.condition) {
      curves = e.error_curves(p);
      curves_for = p.condition;
    }
    const auto plan = e.prepare(p, &*curves);
    points.push_back({{"index", p.index},
                      {"channel", std::string(to_string(p.channel.kind))},
                      {"snr_db", p.channel.snr_db},
                      {"budget", p.budget},
                      {"error_curves", plan.curves.rate},
                      {"curve_inversions", plan.curves.inversions},
                      {"profile_trials", plan.curves.trials},
                      {"uniform", profile_json(plan.uniform)},
                      {"uep_grad", profile_json(plan.uep_grad)},
                      {"uep_mask", profile_json(plan.uep_mask)},
                      {"thresholds",
                       {{"GateComp", plan.gatecomp_tau.thresholds},
                        {"Full-Grad", plan.full_grad_tau.thresholds},
                        {"Full-Oracle", plan.full_oracle_tau.thresholds}}}});
  }
  return {{"format", "tonic-artifacts"},
          {"version", 1},
          {"config", e.config().to_map()},
          {"base_budget", e.config().resolved_base_budget()},
          {"policies", policies},
          {"groupings", {{"grad", grouping_json(e.grouping(UtilityMode::Grad))},
                         {"mask", grouping_json(e.grouping(UtilityMode::Mask))}}},
          {"points", points}};
}

}  // namespace tonic
