#include "cfrec/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "cfrec/errors.hpp"
#include "cfrec/random.hpp"

namespace cfrec {
namespace {

std::string config_key(ModelKind kind, const TrainConfig& c) {
  std::ostringstream k;
  k << to_string(kind) << '|' << c.d << '|' << std::hexfloat << c.lr << std::defaultfloat << '|' << c.epochs
    << '|' << c.batch_size << '|' << c.seed << '|' << to_string(c.rating_scale) << '|';
  for (auto w : c.hidden_widths) k << w << ',';
  return k.str();
}

Explanation failed_attempt(UserIndex u, std::optional<ItemIndex> rec, std::size_t k, const ExplainerSpec& spec) {
  Explanation e;
  e.user = u;
  e.rec = rec.value_or(0);
  e.k = k;
  e.algorithm = spec.algorithm;
  e.method = spec.influence.method;
  e.status = ExplanationStatus::exhausted;
  return e;
}

struct Attempt {
  Explanation explanation;
  std::string note;
};

KResult assemble(std::size_t k, std::vector<Attempt> attempts, const std::vector<RetrainOutcome>& outcomes) {
  KResult r;
  r.k = k;
  r.attempted = attempts.size();
  for (std::size_t i = 0; i < attempts.size(); ++i) {
    auto& a = attempts[i];
    VerifiedExplanation v;
    if (a.explanation.found()) {
      v = judge(a.explanation, outcomes[i]);
      ++r.found;
    } else {
      v.explanation = std::move(a.explanation);
    }
    if (v.note.empty()) v.note = std::move(a.note);
    r.successes += v.success ? 1 : 0;
    r.diverged += v.diverged ? 1 : 0;
    r.records.push_back(std::move(v));
  }
  r.esp = r.attempted == 0 ? 0.0 : esp(r.records, r.attempted);
  r.aes = aes(r.records);
  return r;
}

// Verifies every found attempt, sharing retrains through the cache.
std::vector<std::vector<RetrainOutcome>> verify_all(const Dataset& ds, ModelKind kind, const TrainConfig& train,
                                                    const std::vector<std::vector<Attempt>>& attempts,
                                                    const RunOptions& opts) {
  RetrainCache local;
  RetrainCache& cache = opts.cache ? *opts.cache : local;
  std::vector<std::pair<std::size_t, std::size_t>> jobs;
  std::vector<std::vector<RetrainOutcome>> outcomes(attempts.size());
  for (std::size_t ki = 0; ki < attempts.size(); ++ki) {
    outcomes[ki].resize(attempts[ki].size());
    for (std::size_t ui = 0; ui < attempts[ki].size(); ++ui)
      if (attempts[ki][ui].explanation.found()) jobs.emplace_back(ki, ui);
  }
  std::atomic<std::size_t> done{0};
  parallel_for(jobs.size(), opts.threads, [&](std::size_t j) {
    const auto [ki, ui] = jobs[j];
    const auto& e = attempts[ki][ui].explanation;
    outcomes[ki][ui] = cache.get(kind, ds, e.user, e.removed, train);
    const auto n = ++done;
    if (opts.progress) opts.progress("verified " + std::to_string(n) + "/" + std::to_string(jobs.size()));
  });
  return outcomes;
}

nlohmann::json train_json(ModelKind kind, const TrainConfig& c) {
  return {{"model_kind", to_string(kind)}, {"d", c.d},          {"lr", c.lr},
          {"epochs", c.epochs},           {"batch_size", c.batch_size}, {"seed", c.seed},
          {"hidden_widths", c.hidden_widths}, {"rating_scale", to_string(c.rating_scale)}};
}

}  // namespace

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!first_error) first_error = std::current_exception();
        next = n;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::vector<UserIndex> eligible_users(const Dataset& ds) {
  std::vector<UserIndex> out;
  for (UserIndex u = 0; u < ds.num_users(); ++u) {
    const auto n = ds.user_positions(u).size();
    if (n >= 1 && n < ds.num_items()) out.push_back(u);
  }
  return out;
}

std::vector<UserIndex> sample_users(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  auto pool = eligible_users(ds);
  if (n > pool.size()) {
    throw InputError("cannot sample " + std::to_string(n) + " users: only " + std::to_string(pool.size()) +
                     " are eligible");
  }
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = i + rng.below(pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(n);
  std::sort(pool.begin(), pool.end());
  return pool;
}

RetrainOutcome retrain_top1(ModelKind kind, const Dataset& ds, UserIndex u, std::span<const std::size_t> removed,
                            const TrainConfig& cfg) {
  std::vector<ItemIndex> excluded;
  for (auto pos : removed) {
    const auto& z = ds.at(pos);
    if (z.user != u) throw InputError("removal set contains another user's interaction");
    excluded.push_back(z.item);
  }
  const Dataset reduced = ds.without(removed);
  RetrainOutcome out;
  try {
    const auto result = train(kind, reduced, cfg);
    const auto top = top_k(result.model, u, reduced, 1, excluded);
    if (!top.empty()) out.top1 = top.front().item;
  } catch (const NumericError&) {
    out.diverged = true;
  }
  return out;
}

VerifiedExplanation judge(const Explanation& e, const RetrainOutcome& outcome) {
  VerifiedExplanation v;
  v.explanation = e;
  v.actual_new_top1 = outcome.top1;
  v.diverged = outcome.diverged;
  v.success = e.found() && !outcome.diverged && outcome.top1 && outcome.top1 == e.rec_star;
  if (outcome.diverged) v.note = "retraining diverged";
  return v;
}

VerifiedExplanation retrain_verify(ModelKind kind, const Dataset& ds, const Explanation& e, const TrainConfig& cfg) {
  if (!e.found()) throw InputError("retrain_verify needs a found explanation");
  return judge(e, retrain_top1(kind, ds, e.user, e.removed, cfg));
}

double esp(std::span<const VerifiedExplanation> results, std::size_t attempted) {
  if (attempted == 0) throw InputError("ESP is undefined for zero attempted users");
  const auto successes = static_cast<std::size_t>(
      std::count_if(results.begin(), results.end(), [](const auto& r) { return r.success; }));
  if (successes > attempted) throw InputError("more successes than attempted users");
  return 100.0 * static_cast<double>(successes) / static_cast<double>(attempted);
}

std::optional<double> aes(std::span<const VerifiedExplanation> results) {
  std::size_t count = 0;
  std::size_t total = 0;
  for (const auto& r : results) {
    if (!r.success) continue;
    ++count;
    total += r.explanation.removed.size();
  }
  if (count == 0) return std::nullopt;
  return static_cast<double>(total) / static_cast<double>(count);
}

RetrainOutcome RetrainCache::get(ModelKind kind, const Dataset& ds, UserIndex u,
                                 std::span<const std::size_t> removed, const TrainConfig& cfg) {
  std::vector<std::size_t> sorted(removed.begin(), removed.end());
  std::sort(sorted.begin(), sorted.end());
  Key key{config_key(kind, cfg), u, sorted};
  {
    std::lock_guard lock(mu_);
    if (auto it = entries_.find(key); it != entries_.end()) {
      ++hits_;
      return it->second;
    }
  }
  // Concurrent misses on one key both compute; the results are identical.
  auto outcome = retrain_top1(kind, ds, u, removed, cfg);
  std::lock_guard lock(mu_);
  ++misses_;
  entries_.emplace(std::move(key), outcome);
  return outcome;
}

std::size_t RetrainCache::hits() const {
  std::lock_guard lock(mu_);
  return hits_;
}

std::size_t RetrainCache::misses() const {
  std::lock_guard lock(mu_);
  return misses_;
}

ExplainerSpec accent_spec(const TrainConfig& ncf_train) {
  ExplainerSpec s;
  s.label = "ACCENT";
  s.model = ModelKind::ncf;
  s.train = ncf_train;
  s.influence.method = InfluenceMethod::gradient_based;
  s.algorithm = SearchAlgorithm::iterative_greedy;
  return s;
}

ExplainerSpec fia_spec(const TrainConfig& ncf_train) {
  auto s = accent_spec(ncf_train);
  s.label = "FIA";
  s.algorithm = SearchAlgorithm::greedy;
  return s;
}

ExplainerSpec db_fm_spec(const TrainConfig& fm_train) {
  ExplainerSpec s;
  s.label = "DB-FM";
  s.model = ModelKind::fm;
  s.train = fm_train;
  s.influence.method = InfluenceMethod::data_based;
  s.algorithm = SearchAlgorithm::iterative_greedy;
  return s;
}

ExperimentReport run_experiment(const Dataset& ds, const ExplainerSpec& spec, std::span<const std::size_t> ks,
                                std::size_t n_users, std::uint64_t seed, const RunOptions& opts) {
  if (ks.empty()) throw InputError("K list is empty");
  for (auto k : ks) SearchConfig{k, spec.algorithm, spec.max_removals}.validate();
  spec.influence.validate();

  ExperimentReport report;
  report.label = spec.label;
  report.model = spec.model;
  report.seed = seed;
  report.train = spec.train;
  report.train.seed = derive_seed(seed, "train");
  report.train.validate();

  const Model model = train(spec.model, ds, report.train).model;
  report.mse = mse(model, ds);
  report.users = sample_users(ds, n_users, derive_seed(seed, "sample"));
  if (opts.progress) opts.progress(spec.label + ": trained, mse " + format_fixed(report.mse, 6));

  const std::size_t kmax = *std::max_element(ks.begin(), ks.end());
  std::vector<std::vector<Attempt>> attempts(ks.size(), std::vector<Attempt>(report.users.size()));
  std::atomic<std::size_t> done{0};
  parallel_for(report.users.size(), opts.threads, [&](std::size_t ui) {
    const UserIndex u = report.users[ui];
    const auto top = top_k(model, u, ds, kmax);
    std::vector<ItemIndex> items;
    for (const auto& p : top) items.push_back(p.item);
    const std::optional<ItemIndex> rec = items.empty() ? std::nullopt : std::optional(items.front());

    std::optional<InfluenceTable> table;
    std::string note;
    if (items.size() < 2) {
      note = "fewer than two uninteracted items";
    } else {
      try {
        table = influence_table(model, ds, u, items, spec.influence, report.train);
      } catch (const NumericError& ex) {
        note = ex.what();
      }
    }
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
      const std::size_t k = std::min(ks[ki], items.size());
      if (!table) {
        attempts[ki][ui] = {failed_attempt(u, rec, k, spec), note};
        continue;
      }
      const SearchConfig sc{ks[ki], spec.algorithm, spec.max_removals};
      attempts[ki][ui] = {search(truncate_items(*table, k), sc), {}};
    }
    const auto n = ++done;
    if (opts.progress) {
      opts.progress(spec.label + ": explained " + std::to_string(n) + "/" + std::to_string(report.users.size()));
    }
  });

  const auto outcomes = verify_all(ds, spec.model, report.train, attempts, opts);
  for (std::size_t ki = 0; ki < ks.size(); ++ki) {
    report.per_k.push_back(assemble(ks[ki], std::move(attempts[ki]), outcomes[ki]));
  }
  return report;
}

KResult verify_explanations(const Dataset& ds, ModelKind kind, const TrainConfig& train,
                            std::span<const Explanation> explanations, std::size_t k, const RunOptions& opts) {
  std::vector<std::vector<Attempt>> attempts(1);
  for (const auto& e : explanations) attempts[0].push_back({e, {}});
  const auto outcomes = verify_all(ds, kind, train, attempts, opts);
  return assemble(k, std::move(attempts[0]), outcomes[0]);
}

std::vector<SummaryRow> summarize(std::span<const ExperimentReport> reports) {
  struct Acc {
    SummaryRow row;
    double aes_sum = 0.0;
    std::size_t aes_n = 0;
  };
  std::vector<Acc> acc;
  for (const auto& rep : reports) {
    for (const auto& kr : rep.per_k) {
      auto it = std::find_if(acc.begin(), acc.end(),
                             [&](const Acc& a) { return a.row.label == rep.label && a.row.k == kr.k; });
      if (it == acc.end()) {
        acc.push_back({});
        it = std::prev(acc.end());
        it->row.label = rep.label;
        it->row.k = kr.k;
      }
      it->row.esp += kr.esp;
      it->row.mse += rep.mse;
      it->row.num_seeds += 1;
      if (kr.aes) {
        it->aes_sum += *kr.aes;
        it->aes_n += 1;
      }
    }
  }
  std::vector<SummaryRow> rows;
  for (auto& a : acc) {
    const auto n = static_cast<double>(a.row.num_seeds);
    a.row.esp /= n;
    a.row.mse /= n;
    if (a.aes_n > 0) a.row.aes = a.aes_sum / static_cast<double>(a.aes_n);
    rows.push_back(a.row);
  }
  return rows;
}

std::string format_fixed(double value, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, value);
  std::string s(buf);
  if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);
  return s;
}

void write_report_csv(std::span<const SummaryRow> rows, std::ostream& out) {
  out << "explainer,K,esp,aes,mse\n";
  for (const auto& r : rows) {
    out << r.label << ',' << r.k << ',' << format_fixed(r.esp, 2) << ','
        << (r.aes ? format_fixed(*r.aes, 3) : std::string()) << ',' << format_fixed(r.mse, 6) << '\n';
  }
}

nlohmann::json to_json(const ExperimentReport& report, const Dataset& ds) {
  nlohmann::json results = nlohmann::json::array();
  for (const auto& kr : report.per_k) {
    nlohmann::json records = nlohmann::json::array();
    for (const auto& v : kr.records) {
      auto j = to_json(v.explanation, ds);
      j["actual_new_top1"] =
          v.actual_new_top1 ? nlohmann::json(ds.external_item(*v.actual_new_top1)) : nlohmann::json(nullptr);
      j["success"] = v.success;
      j["diverged"] = v.diverged;
      if (!v.note.empty()) j["note"] = v.note;
      records.push_back(std::move(j));
    }
    results.push_back({{"K", kr.k},
                       {"attempted", kr.attempted},
                       {"found", kr.found},
                       {"successes", kr.successes},
                       {"diverged", kr.diverged},
                       {"esp", kr.esp},
                       {"aes", kr.aes ? nlohmann::json(*kr.aes) : nlohmann::json(nullptr)},
                       {"records", std::move(records)}});
  }
  nlohmann::json users = nlohmann::json::array();
  for (auto u : report.users) users.push_back(ds.external_user(u));
  return {{"explainer", report.label},
          {"seed", report.seed},
          {"train", train_json(report.model, report.train)},
          {"mse", report.mse},
          {"users", std::move(users)},
          {"results", std::move(results)}};
}

std::vector<SweepRow> sweep_embedding(const Dataset& ds, std::span<const std::size_t> dims,
                                      const ExplainerSpec& spec, std::size_t k, std::size_t n_users,
                                      std::uint64_t seed, const RunOptions& opts) {
  if (dims.empty()) throw InputError("embedding sweep needs at least one dimension");
  for (auto d : dims)
    if (d == 0) throw InputError("embedding dimension must be positive");
  std::vector<SweepRow> rows;
  const std::size_t ks[] = {k};
  for (auto d : dims) {
    ExplainerSpec s = spec;
    s.train.d = d;
    const auto rep = run_experiment(ds, s, ks, n_users, seed, opts);
    rows.push_back({d, rep.mse, rep.per_k.front().esp, rep.per_k.front().aes});
  }
  return rows;
}

void write_sweep_csv(std::span<const SweepRow> rows, std::ostream& out) {
  out << "d,mse,esp,aes\n";
  for (const auto& r : rows) {
    out << r.d << ',' << format_fixed(r.mse, 6) << ',' << format_fixed(r.esp, 2) << ','
        << (r.aes ? format_fixed(*r.aes, 3) : std::string()) << '\n';
  }
}

void write_sweep_svg(std::span<const SweepRow> rows, std::ostream& out) {
  constexpr double W = 640, H = 560, left = 70, right = 20, panel = 220, top0 = 40, gap = 60;
  auto panel_svg = [&](double top, const std::string& title, auto value) {
    double lo = 1e300, hi = -1e300;
    for (const auto& r : rows) {
      lo = std::min(lo, value(r));
      hi = std::max(hi, value(r));
    }
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
    const double dmin = static_cast<double>(rows.front().d);
    const double dmax = static_cast<double>(rows.back().d);
    const double dspan = dmax > dmin ? dmax - dmin : 1.0;
    auto x = [&](double d) { return left + (d - dmin) / dspan * (W - left - right); };
    auto y = [&](double v) { return top + panel - (v - lo) / (hi - lo) * panel; };

    out << "<text x=\"" << left << "\" y=\"" << top - 10 << "\" font-size=\"14\">" << title << "</text>\n";
    out << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << W - left - right << "\" height=\"" << panel
        << "\" fill=\"none\" stroke=\"#999\"/>\n";
    out << "<text x=\"" << left - 6 << "\" y=\"" << top + 4 << "\" font-size=\"10\" text-anchor=\"end\">"
        << format_fixed(hi, 3) << "</text>\n";
    out << "<text x=\"" << left - 6 << "\" y=\"" << top + panel << "\" font-size=\"10\" text-anchor=\"end\">"
        << format_fixed(lo, 3) << "</text>\n";
    out << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
    for (const auto& r : rows) {
      out << format_fixed(x(static_cast<double>(r.d)), 1) << ',' << format_fixed(y(value(r)), 1) << ' ';
    }
    out << "\"/>\n";
    for (const auto& r : rows) {
      const double px = x(static_cast<double>(r.d));
      out << "<circle cx=\"" << format_fixed(px, 1) << "\" cy=\"" << format_fixed(y(value(r)), 1)
          << "\" r=\"3\" fill=\"#1f77b4\"/>\n";
      out << "<text x=\"" << format_fixed(px, 1) << "\" y=\"" << top + panel + 14
          << "\" font-size=\"10\" text-anchor=\"middle\">" << r.d << "</text>\n";
    }
  };

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!rows.empty()) {
    panel_svg(top0, "Training MSE vs embedding size d", [](const SweepRow& r) { return r.mse; });
    panel_svg(top0 + panel + gap, "ESP (%) vs embedding size d", [](const SweepRow& r) { return r.esp; });
  }
  out << "</svg>\n";
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) return std::nullopt;
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

nlohmann::json sweep_summary(std::span<const SweepRow> rows) {
  std::vector<double> m, e, m_a, a;
  for (const auto& r : rows) {
    m.push_back(r.mse);
    e.push_back(r.esp);
    if (r.aes) {
      m_a.push_back(r.mse);
      a.push_back(*r.aes);
    }
  }
  auto opt = [](std::optional<double> v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  std::size_t inversions = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) inversions += rows[i].mse > rows[i - 1].mse ? 1 : 0;
  return {{"rows", rows.size()},
          {"pearson_mse_esp", opt(pearson(m, e))},
          {"pearson_mse_aes", opt(pearson(m_a, a))},
          {"mse_adjacent_inversions", inversions}};
}

}  // namespace cfrec
