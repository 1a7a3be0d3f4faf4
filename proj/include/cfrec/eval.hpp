#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfrec/data.hpp"
#include "cfrec/explain.hpp"
#include "cfrec/influence.hpp"
#include "cfrec/model.hpp"

namespace cfrec {

/// Runs fn(0..n-1) on up to `threads` workers. Each index runs exactly once;
/// callers write results into pre-sized slots, so output order never depends
/// on scheduling. The first exception thrown by any task is rethrown.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

/// Users with at least one interaction and at least one uninteracted item.
std::vector<UserIndex> eligible_users(const Dataset& ds);

/// n users drawn uniformly without replacement from eligible_users(ds),
/// returned in ascending id order. Throws InputError when n exceeds the pool.
std::vector<UserIndex> sample_users(const Dataset& ds, std::size_t n, std::uint64_t seed);

struct RetrainOutcome {
  std::optional<ItemIndex> top1;  // absent when no candidate item remains or training diverged
  bool diverged = false;
};

/// Trains from scratch on ds minus `removed` and returns u's top-1 among items
/// u has not interacted with in the reduced data, excluding the removed items.
RetrainOutcome retrain_top1(ModelKind kind, const Dataset& ds, UserIndex u,
                            std::span<const std::size_t> removed, const TrainConfig& cfg);

struct VerifiedExplanation {
  Explanation explanation;
  std::optional<ItemIndex> actual_new_top1;
  bool success = false;
  bool diverged = false;
  std::string note;  // why an attempt failed before verification, if it did
};

/// Judges an explanation against a retrain outcome.
VerifiedExplanation judge(const Explanation& e, const RetrainOutcome& outcome);

/// Throws InputError unless e.status is found.
VerifiedExplanation retrain_verify(ModelKind kind, const Dataset& ds, const Explanation& e,
                                   const TrainConfig& cfg);

/// Explanation success percentage over `attempted` users.
double esp(std::span<const VerifiedExplanation> results, std::size_t attempted);

/// Mean removal-set size over successes; absent when there are none.
std::optional<double> aes(std::span<const VerifiedExplanation> results);

/// Memoizes retrain_top1 by (model kind, training config, user, removal set).
/// Thread-safe. Lets explainers that share a recommender share verification.
class RetrainCache {
 public:
  RetrainOutcome get(ModelKind kind, const Dataset& ds, UserIndex u, std::span<const std::size_t> removed,
                     const TrainConfig& cfg);
  std::size_t hits() const;
  std::size_t misses() const;

 private:
  using Key = std::tuple<std::string, UserIndex, std::vector<std::size_t>>;
  mutable std::mutex mu_;
  std::map<Key, RetrainOutcome> entries_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

/// A recommender plus an explanation method.
struct ExplainerSpec {
  std::string label;
  ModelKind model = ModelKind::ncf;
  TrainConfig train;
  InfluenceConfig influence;
  SearchAlgorithm algorithm = SearchAlgorithm::iterative_greedy;
  std::optional<std::size_t> max_removals;
};

/// Gradient influence + iterative greedy on NCF.
ExplainerSpec accent_spec(const TrainConfig& ncf_train);
/// Gradient influence + greedy on NCF.
ExplainerSpec fia_spec(const TrainConfig& ncf_train);
/// Data-based influence + iterative greedy on FM.
ExplainerSpec db_fm_spec(const TrainConfig& fm_train);

struct KResult {
  std::size_t k = 0;
  std::size_t attempted = 0;
  std::size_t found = 0;
  std::size_t successes = 0;
  std::size_t diverged = 0;
  double esp = 0.0;
  std::optional<double> aes;
  std::vector<VerifiedExplanation> records;  // one per sampled user, in user order
};

struct ExperimentReport {
  std::string label;
  ModelKind model = ModelKind::ncf;
  std::uint64_t seed = 0;
  TrainConfig train;  // as actually used, seed included
  double mse = 0.0;
  std::vector<UserIndex> users;
  std::vector<KResult> per_k;
};

struct RunOptions {
  std::size_t threads = 1;
  RetrainCache* cache = nullptr;  // optional, shared across runs
  std::function<void(std::string_view)> progress;  // optional; must not affect results
};

/// One explainer, one seed. The training seed is derive_seed(seed, "train")
/// and the user sample uses derive_seed(seed, "sample"). Influence tables are
/// computed once per user for the largest K and truncated for smaller ones.
ExperimentReport run_experiment(const Dataset& ds, const ExplainerSpec& spec, std::span<const std::size_t> ks,
                                std::size_t n_users, std::uint64_t seed, const RunOptions& opts = {});

/// Verification only, for explanations computed elsewhere (e.g. a JSONL file).
KResult verify_explanations(const Dataset& ds, ModelKind kind, const TrainConfig& train,
                            std::span<const Explanation> explanations, std::size_t k,
                            const RunOptions& opts = {});

/// Per (explainer, K) means over seeds. aes averages the seeds that have one.
struct SummaryRow {
  std::string label;
  std::size_t k = 0;
  double esp = 0.0;
  std::optional<double> aes;
  double mse = 0.0;
  std::size_t num_seeds = 0;
};

std::vector<SummaryRow> summarize(std::span<const ExperimentReport> reports);

/// CSV `explainer,K,esp,aes,mse`, an empty aes cell when absent.
void write_report_csv(std::span<const SummaryRow> rows, std::ostream& out);
nlohmann::json to_json(const ExperimentReport& report, const Dataset& ds);

struct SweepRow {
  std::size_t d = 0;
  double mse = 0.0;
  double esp = 0.0;
  std::optional<double> aes;
};

/// One run_experiment per embedding size with a single K.
std::vector<SweepRow> sweep_embedding(const Dataset& ds, std::span<const std::size_t> dims,
                                      const ExplainerSpec& spec, std::size_t k, std::size_t n_users,
                                      std::uint64_t seed, const RunOptions& opts = {});

/// CSV `d,mse,esp,aes`.
void write_sweep_csv(std::span<const SweepRow> rows, std::ostream& out);
/// Two stacked line charts: MSE vs d and ESP vs d.
void write_sweep_svg(std::span<const SweepRow> rows, std::ostream& out);
/// Pearson correlations of MSE with ESP and with AES across the sweep.
nlohmann::json sweep_summary(std::span<const SweepRow> rows);

/// Pearson correlation; absent for fewer than two points or zero variance.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

/// Fixed-precision decimal used by every report writer.
std::string format_fixed(double value, int digits);

}  // namespace cfrec
