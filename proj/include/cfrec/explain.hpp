#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfrec/data.hpp"
#include "cfrec/influence.hpp"
#include "cfrec/model.hpp"

namespace cfrec {

enum class SearchAlgorithm { greedy, iterative_greedy };
enum class ExplanationStatus { found, exhausted };

std::string_view to_string(SearchAlgorithm a);
std::string_view to_string(ExplanationStatus s);
SearchAlgorithm parse_search_algorithm(std::string_view s);

struct SearchConfig {
  std::size_t k = 5;  // candidate pool: the original top-K, rec included
  SearchAlgorithm algorithm = SearchAlgorithm::iterative_greedy;
  std::optional<std::size_t> max_removals;  // unset means |I_u|

  void validate() const;
};

/// Counterfactual explanation for one user's top-1 recommendation.
struct Explanation {
  UserIndex user = 0;
  ItemIndex rec = 0;
  std::optional<ItemIndex> rec_star;
  std::vector<std::size_t> removed;  // interaction positions, in removal order
  std::vector<double> estimated_diff_trace;
  ExplanationStatus status = ExplanationStatus::exhausted;
  SearchAlgorithm algorithm = SearchAlgorithm::iterative_greedy;
  InfluenceMethod method = InfluenceMethod::gradient_based;
  std::size_t k = 0;

  bool found() const { return status == ExplanationStatus::found; }
};

/// Removes interactions in descending I(z, rec) order (ties: ascending
/// position), updating every pooled item's score additively, until some
/// candidate overtakes rec. The trace records rec's estimated lead over the
/// best candidate after each removal. table.items[0] must be rec.
Explanation greedy_explain(const InfluenceTable& table, const SearchConfig& cfg);

/// For each candidate i, removes interactions in descending pair influence
/// I(z, rec - i) while the estimated gap is non-negative and the next pair
/// influence is positive. Picks the candidate that flips with the fewest
/// removals (ties: more negative final gap, then ascending item id).
Explanation iterative_greedy_explain(const InfluenceTable& table, const SearchConfig& cfg);

Explanation search(const InfluenceTable& table, const SearchConfig& cfg);

/// First `k` items of a table whose items are a ranked top-K list.
InfluenceTable truncate_items(const InfluenceTable& table, std::size_t k);

/// Full pipeline for one user: top-K, influence table, search.
Explanation explain_user(const Model& model, const Dataset& ds, UserIndex u,
                         const InfluenceConfig& infl_cfg, const SearchConfig& search_cfg,
                         const TrainConfig& train_cfg);

/// JSON-lines record: {user, rec, rec_star, removed: [{user, item}], algorithm,
/// method, K, status, estimated_diff_trace}. Ids are the dataset's external ids.
nlohmann::json to_json(const Explanation& e, const Dataset& ds);
Explanation explanation_from_json(const nlohmann::json& j, const Dataset& ds);

}  // namespace cfrec
