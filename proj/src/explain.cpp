#include "cfrec/explain.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "cfrec/errors.hpp"

namespace cfrec {
namespace {

// Point indices sorted by descending value, ties by ascending interaction position.
std::vector<std::size_t> ranked_points(const InfluenceTable& table, const std::vector<double>& value) {
  std::vector<std::size_t> order(table.num_points());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (value[a] != value[b]) return value[a] > value[b];
    return table.positions[a] < table.positions[b];
  });
  return order;
}

void check_table(const InfluenceTable& table) {
  if (table.num_points() == 0) throw InputError("user " + std::to_string(table.user) + " has no interactions to remove");
  if (table.num_items() < 2) throw InputError("candidate pool is empty: need rec plus at least one candidate");
}

Explanation blank(const InfluenceTable& table, const SearchConfig& cfg) {
  Explanation e;
  e.user = table.user;
  e.rec = table.items.front();
  e.algorithm = cfg.algorithm;
  e.method = table.method;
  e.k = table.num_items();
  return e;
}

std::size_t removal_cap(const InfluenceTable& table, const SearchConfig& cfg) {
  return std::min(table.num_points(), cfg.max_removals.value_or(table.num_points()));
}

}  // namespace

std::string_view to_string(SearchAlgorithm a) {
  return a == SearchAlgorithm::greedy ? "greedy" : "iterative_greedy";
}

std::string_view to_string(ExplanationStatus s) {
  return s == ExplanationStatus::found ? "found" : "exhausted";
}

SearchAlgorithm parse_search_algorithm(std::string_view s) {
  if (s == "greedy" || s == "fia") return SearchAlgorithm::greedy;
  if (s == "iterative_greedy" || s == "iterative" || s == "accent") return SearchAlgorithm::iterative_greedy;
  throw InputError("unknown search algorithm '" + std::string(s) + "'");
}

void SearchConfig::validate() const {
  if (k < 2) throw InputError("K must be >= 2: the pool needs rec plus at least one candidate");
  if (max_removals && *max_removals < 1) throw InputError("max_removals must be >= 1");
}

Explanation greedy_explain(const InfluenceTable& table, const SearchConfig& cfg) {
  cfg.validate();
  check_table(table);
  Explanation e = blank(table, cfg);
  e.algorithm = SearchAlgorithm::greedy;

  std::vector<double> on_rec(table.num_points());
  for (std::size_t p = 0; p < table.num_points(); ++p) on_rec[p] = table.at(p, 0);
  const auto order = ranked_points(table, on_rec);

  std::vector<double> estimate = table.base_scores;
  const std::size_t cap = removal_cap(table, cfg);
  for (std::size_t step = 0; step < cap; ++step) {
    const std::size_t p = order[step];
    e.removed.push_back(table.positions[p]);
    for (std::size_t k = 0; k < table.num_items(); ++k) estimate[k] -= table.at(p, k);

    std::size_t best = 1;
    for (std::size_t k = 2; k < table.num_items(); ++k) {
      if (estimate[k] > estimate[best] ||
          (estimate[k] == estimate[best] && table.items[k] < table.items[best])) {
        best = k;
      }
    }
    e.estimated_diff_trace.push_back(estimate[0] - estimate[best]);
    if (estimate[best] > estimate[0]) {
      e.status = ExplanationStatus::found;
      e.rec_star = table.items[best];
      return e;
    }
  }
  e.removed.clear();
  return e;
}

Explanation iterative_greedy_explain(const InfluenceTable& table, const SearchConfig& cfg) {
  cfg.validate();
  check_table(table);
  Explanation best = blank(table, cfg);
  best.algorithm = SearchAlgorithm::iterative_greedy;
  const std::size_t cap = removal_cap(table, cfg);

  std::optional<double> best_gap;
  std::vector<double> pair(table.num_points());
  for (std::size_t c = 1; c < table.num_items(); ++c) {
    for (std::size_t p = 0; p < table.num_points(); ++p) pair[p] = table.at(p, 0) - table.at(p, c);
    const auto order = ranked_points(table, pair);

    double diff = table.base_scores[0] - table.base_scores[c];
    std::vector<std::size_t> removed;
    std::vector<double> trace;
    for (std::size_t p : order) {
      if (diff < 0.0 || removed.size() >= cap || pair[p] <= 0.0) break;
      diff -= pair[p];
      removed.push_back(table.positions[p]);
      trace.push_back(diff);
    }
    if (!(diff < 0.0)) continue;

    const bool better = !best_gap || removed.size() < best.removed.size() ||
                        (removed.size() == best.removed.size() &&
                         (diff < *best_gap || (diff == *best_gap && table.items[c] < *best.rec_star)));
    if (better) {
      best.status = ExplanationStatus::found;
      best.rec_star = table.items[c];
      best.removed = std::move(removed);
      best.estimated_diff_trace = std::move(trace);
      best_gap = diff;
    }
  }
  return best;
}

Explanation search(const InfluenceTable& table, const SearchConfig& cfg) {
  return cfg.algorithm == SearchAlgorithm::greedy ? greedy_explain(table, cfg)
                                                  : iterative_greedy_explain(table, cfg);
}

InfluenceTable truncate_items(const InfluenceTable& table, std::size_t k) {
  if (k > table.num_items()) throw InputError("cannot truncate an influence table to more items than it has");
  InfluenceTable out;
  out.user = table.user;
  out.method = table.method;
  out.items.assign(table.items.begin(), table.items.begin() + static_cast<std::ptrdiff_t>(k));
  out.base_scores.assign(table.base_scores.begin(), table.base_scores.begin() + static_cast<std::ptrdiff_t>(k));
  out.positions = table.positions;
  out.i_scores.reserve(table.num_points() * k);
  for (std::size_t p = 0; p < table.num_points(); ++p)
    for (std::size_t j = 0; j < k; ++j) out.i_scores.push_back(table.at(p, j));
  return out;
}

Explanation explain_user(const Model& model, const Dataset& ds, UserIndex u,
                         const InfluenceConfig& infl_cfg, const SearchConfig& search_cfg,
                         const TrainConfig& train_cfg) {
  search_cfg.validate();
  const auto top = top_k(model, u, ds, search_cfg.k);
  std::vector<ItemIndex> items;
  for (const auto& p : top) items.push_back(p.item);
  if (items.size() < 2) {
    throw InputError("user " + std::to_string(u) + " has a single uninteracted item; no candidates");
  }
  const auto table = influence_table(model, ds, u, items, infl_cfg, train_cfg);
  return search(table, search_cfg);
}

nlohmann::json to_json(const Explanation& e, const Dataset& ds) {
  nlohmann::json removed = nlohmann::json::array();
  for (auto pos : e.removed) {
    const auto& z = ds.at(pos);
    removed.push_back({{"user", ds.external_user(z.user)}, {"item", ds.external_item(z.item)}});
  }
  nlohmann::json j;
  j["user"] = ds.external_user(e.user);
  j["rec"] = ds.external_item(e.rec);
  j["rec_star"] = e.rec_star ? nlohmann::json(ds.external_item(*e.rec_star)) : nlohmann::json(nullptr);
  j["removed"] = std::move(removed);
  j["algorithm"] = to_string(e.algorithm);
  j["method"] = to_string(e.method);
  j["K"] = e.k;
  j["status"] = to_string(e.status);
  j["estimated_diff_trace"] = e.estimated_diff_trace;
  return j;
}

Explanation explanation_from_json(const nlohmann::json& j, const Dataset& ds) {
  auto user_of = [&](const nlohmann::json& x) {
    const auto ext = x.get<std::int64_t>();
    const auto u = ds.user_index(ext);
    if (!u) throw InputError("unknown user id " + std::to_string(ext));
    return *u;
  };
  auto item_of = [&](const nlohmann::json& x) {
    const auto ext = x.get<std::int64_t>();
    const auto v = ds.item_index(ext);
    if (!v) throw InputError("unknown item id " + std::to_string(ext));
    return *v;
  };
  try {
    Explanation e;
    e.user = user_of(j.at("user"));
    e.rec = item_of(j.at("rec"));
    if (!j.at("rec_star").is_null()) e.rec_star = item_of(j.at("rec_star"));
    for (const auto& r : j.at("removed")) {
      const auto u = user_of(r.at("user"));
      const auto v = item_of(r.at("item"));
      const auto pos = ds.position_of(u, v);
      if (!pos || u != e.user) {
        throw InputError("removed interaction (" + r.at("user").dump() + ", " + r.at("item").dump() +
                         ") is not in the user's history");
      }
      e.removed.push_back(*pos);
    }
    e.algorithm = parse_search_algorithm(j.at("algorithm").get<std::string>());
    e.method = parse_influence_method(j.at("method").get<std::string>());
    e.k = j.at("K").get<std::size_t>();
    const auto status = j.at("status").get<std::string>();
    if (status == "found") {
      e.status = ExplanationStatus::found;
    } else if (status == "exhausted") {
      e.status = ExplanationStatus::exhausted;
    } else {
      throw InputError("unknown explanation status '" + status + "'");
    }
    if (j.contains("estimated_diff_trace")) {
      e.estimated_diff_trace = j.at("estimated_diff_trace").get<std::vector<double>>();
    }
    if (e.found() && !e.rec_star) throw InputError("found explanation without rec_star");
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw InputError(std::string("malformed explanation record: ") + ex.what());
  }
}

}  // namespace cfrec
