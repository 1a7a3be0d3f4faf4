#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace cfrec {

using UserIndex = std::uint32_t;
using ItemIndex = std::uint32_t;

inline constexpr double kMinRating = 1.0;
inline constexpr double kMaxRating = 5.0;

/// One (user, item, rating) training record: the unit an explanation removes.
struct Interaction {
  UserIndex user = 0;
  ItemIndex item = 0;
  double rating = 0.0;
  std::optional<std::int64_t> timestamp;

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

/// A rating keyed by external ids, before indexing.
struct RawRating {
  std::int64_t user = 0;
  std::int64_t item = 0;
  double rating = 0.0;
  std::optional<std::int64_t> timestamp;
};

struct DatasetStats {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::size_t num_interactions = 0;
  double density = 0.0;
};

/// Indexed, immutable interaction log.
///
/// Dense ids are assigned in ascending order of external id. Each (user, item)
/// pair appears at most once; on ingestion the last occurrence wins and keeps
/// its position in line order.
class Dataset {
 public:
  Dataset() = default;

  static Dataset from_records(std::span<const RawRating> records);

  const std::vector<Interaction>& interactions() const { return interactions_; }
  const Interaction& at(std::size_t pos) const { return interactions_.at(pos); }
  std::size_t size() const { return interactions_.size(); }
  bool empty() const { return interactions_.empty(); }

  std::size_t num_users() const { return user_ext_.size(); }
  std::size_t num_items() const { return item_ext_.size(); }

  /// Interaction positions of user u (this is I_u), in line order.
  std::span<const std::size_t> user_positions(UserIndex u) const { return per_user_.at(u); }
  std::span<const std::size_t> item_positions(ItemIndex v) const { return per_item_.at(v); }

  std::optional<std::size_t> position_of(UserIndex u, ItemIndex v) const;
  bool has_interaction(UserIndex u, ItemIndex v) const { return position_of(u, v).has_value(); }

  std::int64_t external_user(UserIndex u) const { return user_ext_.at(u); }
  std::int64_t external_item(ItemIndex v) const { return item_ext_.at(v); }
  std::optional<UserIndex> user_index(std::int64_t external) const;
  std::optional<ItemIndex> item_index(std::int64_t external) const;

  double density() const;
  DatasetStats stats() const;

  /// Copy with the given interaction positions removed. The id space
  /// (num_users, num_items, id maps) is kept, so models trained on the
  /// result share parameter shapes with models trained on *this.
  Dataset without(std::span<const std::size_t> positions) const;

  /// Content equality: interactions and id-space sizes.
  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.interactions_ == b.interactions_ && a.num_users() == b.num_users() &&
           a.num_items() == b.num_items();
  }

 private:
  Dataset(std::vector<Interaction> interactions, std::vector<std::int64_t> user_ext,
          std::vector<std::int64_t> item_ext);

  void build_indexes();

  std::vector<Interaction> interactions_;
  std::vector<std::int64_t> user_ext_;
  std::vector<std::int64_t> item_ext_;
  std::vector<std::vector<std::size_t>> per_user_;
  std::vector<std::vector<std::size_t>> per_item_;
  std::unordered_map<std::uint64_t, std::size_t> pair_index_;
};

/// MovieLens `u.data`: user<TAB>item<TAB>rating<TAB>timestamp per line.
Dataset parse_movielens(const std::filesystem::path& path);
Dataset parse_movielens(std::istream& in, const std::string& source_name = "<stream>");

/// Canonical CSV with header `user,item,rating,timestamp` and dense ids.
void write_canonical_csv(const Dataset& ds, std::ostream& out);
void write_canonical_csv(const Dataset& ds, const std::filesystem::path& path);
Dataset parse_canonical_csv(const std::filesystem::path& path);
Dataset parse_canonical_csv(std::istream& in, const std::string& source_name = "<stream>");

/// Drops users with fewer than min_actions interactions, then items left with
/// none, and re-densifies ids. Idempotent.
Dataset filter_min_actions(const Dataset& ds, std::size_t min_actions);

struct SynthConfig {
  std::size_t num_users = 1200;
  std::size_t num_items = 1200;
  double density = 0.0631;
  std::size_t num_latent_causes = 4;
  double noise_std = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Low-rank synthetic ratings: rating = 1 + 4 * mean_k(a_uk * b_vk) + noise,
/// clipped to [1, 5], with a_uk, b_vk ~ U[0, 1]. Observed pairs are drawn
/// with probability proportional to lognormal user activity times item
/// popularity, calibrated so the expected count hits the target density.
/// Every user and item receives at least one interaction.
Dataset synth_generate(const SynthConfig& cfg);

}  // namespace cfrec
